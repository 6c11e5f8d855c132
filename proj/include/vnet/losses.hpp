#pragma once

#include "vnet/discriminator.hpp"
#include "vnet/dsp.hpp"

namespace vnet {

// lsgan is the quadratic baseline family; the asymptotic families wrap the
// same composition in sigma. The printed sigma rises with z, which breaks the
// stated requirement that r3 stay negative, so the sign-corrected variant is
// the training default and the printed one is kept for comparison.
enum class LossFamily { lsgan, asymptotic_printed, asymptotic_monotone };

inline const char* family_name(LossFamily f) {
  switch (f) {
    case LossFamily::lsgan: return "lsgan";
    case LossFamily::asymptotic_printed: return "asymptotic_printed";
    default: return "asymptotic_monotone";
  }
}

inline LossFamily family_from_string(const std::string& s) {
  if (s == "lsgan") return LossFamily::lsgan;
  if (s == "asymptotic_printed") return LossFamily::asymptotic_printed;
  if (s == "asymptotic_monotone") return LossFamily::asymptotic_monotone;
  throw config_error("unknown loss family '" + s +
                     "' (expected lsgan|asymptotic_printed|asymptotic_monotone)");
}

struct LossWeights {
  double fm = 2.0;
  double mel = 45.0;
  double adv = 1.0;

  void validate() const {
    if (fm < 0 || mel < 0 || adv < 0) throw config_error("loss weights must be >= 0");
  }
};

template <typename Real>
struct LossReport {
  Real fm = 0, mel = 0, adv_g = 0, adv_d = 0, total_g = 0, total_d = 0;
};

inline double sigma_printed(double x) { return std::exp(-(0.3 * x - 2.0)); }
inline double sigma_monotone(double x) { return std::exp(0.3 * x - 2.0); }

namespace detail {

// sigma(x)^2 folded into one exp: e^{-2(0.3x-2)} printed, e^{2(0.3x-2)} monotone
template <typename Real>
Tensor<Real> sigma_sq(LossFamily f, const Tensor<Real>& x) {
  const Real a = f == LossFamily::asymptotic_printed ? Real(-0.6) : Real(0.6);
  const Real b = f == LossFamily::asymptotic_printed ? Real(4) : Real(-4);
  return exp(affine(x, a, b));
}

}  // namespace detail

template <typename Real>
Tensor<Real> r1(LossFamily f, const Tensor<Real>& z) {
  auto u = affine(z, Real(-1), Real(1));  // 1 - z
  if (f == LossFamily::lsgan) return neg(square(u));
  return neg(detail::sigma_sq(f, u));
}

template <typename Real>
Tensor<Real> r2(LossFamily f, const Tensor<Real>& z) {
  if (f == LossFamily::lsgan) return neg(square(z));
  return neg(detail::sigma_sq(f, z));
}

template <typename Real>
Tensor<Real> r3(LossFamily f, const Tensor<Real>& z) {
  auto u = affine(z, Real(-1), Real(1));
  if (f == LossFamily::lsgan) return square(u);
  return detail::sigma_sq(f, u);
}

template <typename Real>
struct RValues {
  Tensor<Real> r1, r2, r3;
};

template <typename Real>
RValues<Real> r_functions(LossFamily f, const Tensor<Real>& z) {
  return {r1(f, z), r2(f, z), r3(f, z)};
}

namespace detail {

template <typename Real>
void check_pair(const Tensor<Real>& x, const Tensor<Real>& xhat, const char* who) {
  if (!x.defined() || !xhat.defined()) throw usage_error(std::string(who) + ": undefined input");
  if (x.shape() != xhat.shape())
    throw input_error(std::string(who) + ": length mismatch " + shape_str(x.shape()) + " vs " +
                      shape_str(xhat.shape()));
}

template <typename Real>
Tensor<Real> mean_over(std::vector<Tensor<Real>> terms) {
  auto acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return affine(acc, Real(1) / static_cast<Real>(terms.size()), Real(0));
}

}  // namespace detail

// One feature-matching term: mean over dim-0 rows of the relative Frobenius
// distance ||S - Sh||_F / ||S||_F. The reference norm carries no gradient
// (real audio), so it is folded in as a constant; rows with a near-silent
// reference contribute 0 to keep the ratio bounded.
template <typename Real>
Tensor<Real> fm_spectrogram_term(const Tensor<Real>& s, const Tensor<Real>& sh) {
  detail::check_pair(s, sh, "fm_spectrogram_term");
  const int64_t B = s.dim(0);
  const int64_t per = s.numel() / B;
  std::vector<Real> inv_ref(static_cast<size_t>(B), Real(0));
  bool live = false;
  {
    NoGrad<Real> ng;
    for (int64_t b = 0; b < B; ++b) {
      double ss = 0;
      for (int64_t i = 0; i < per; ++i) {
        const double v = static_cast<double>(s.data()[b * per + i]);
        ss += v * v;
      }
      const double norm = std::sqrt(ss);
      if (norm >= 1e-12) {
        inv_ref[static_cast<size_t>(b)] = static_cast<Real>(1.0 / norm);
        live = true;
      }
    }
  }
  if (!live) return Tensor<Real>::scalar(Real(0));
  auto dist = sqrt_guard(row_sums(square(sub(s, sh)), B), Real(1e-24));  // [B]
  auto scaled = mul(dist, Tensor<Real>::from({B}, inv_ref));
  return affine(sum(scaled), Real(1) / static_cast<Real>(B), Real(0));
}

// One log-spectral term: mean per-element L1 distance of log magnitudes,
// floored at 1e-5.
template <typename Real>
Tensor<Real> log_l1_term(const Tensor<Real>& s, const Tensor<Real>& sh) {
  detail::check_pair(s, sh, "log_l1_term");
  return mean(abs(sub(log_clamped(s, Real(kLogFloor)), log_clamped(sh, Real(kLogFloor)))));
}

// Mean of the relative-Frobenius terms over the MTD spectrogram sets.
template <typename Real>
Tensor<Real> feature_matching_loss(const Tensor<Real>& x, const Tensor<Real>& xhat,
                                   const MtdConfig& mtd) {
  detail::check_pair(x, xhat, "feature_matching_loss");
  std::vector<Tensor<Real>> terms;
  for (const auto& sc : mtd.subs) {
    auto s = stft_magnitude(avg_pool1d(x, sc.pool), sc.stft);
    auto sh = stft_magnitude(avg_pool1d(xhat, sc.pool), sc.stft);
    terms.push_back(fm_spectrogram_term(s, sh));
  }
  return detail::mean_over(std::move(terms));
}

// Mean of the log-L1 terms over the same M spectrogram sets.
template <typename Real>
Tensor<Real> mel_spectrogram_loss(const Tensor<Real>& x, const Tensor<Real>& xhat,
                                  const MtdConfig& mtd) {
  detail::check_pair(x, xhat, "mel_spectrogram_loss");
  std::vector<Tensor<Real>> terms;
  for (const auto& sc : mtd.subs) {
    auto s = stft_magnitude(avg_pool1d(x, sc.pool), sc.stft);
    auto sh = stft_magnitude(avg_pool1d(xhat, sc.pool), sc.stft);
    terms.push_back(log_l1_term(s, sh));
  }
  return detail::mean_over(std::move(terms));
}

// Intermediate-feature variant of the matching loss (the prose reading):
// relative Frobenius distance over every stored feature map of every sub.
template <typename Real>
Tensor<Real> feature_matching_features(const std::vector<DiscOutput<Real>>& real,
                                       const std::vector<DiscOutput<Real>>& fake) {
  if (real.empty() || real.size() != fake.size())
    throw usage_error("feature_matching_features: need matching real/fake output lists");
  std::vector<Tensor<Real>> terms;
  for (size_t m = 0; m < real.size(); ++m) {
    if (real[m].features.size() != fake[m].features.size())
      throw usage_error("feature_matching_features: feature count mismatch");
    for (size_t i = 0; i < real[m].features.size(); ++i)
      terms.push_back(fm_spectrogram_term(real[m].features[i], fake[m].features[i]));
  }
  return detail::mean_over(std::move(terms));
}

// Generator objective: mean of R3 over every sub-discriminator's score map.
template <typename Real>
Tensor<Real> adv_loss_generator(LossFamily f, const std::vector<DiscOutput<Real>>& fake) {
  if (fake.empty()) throw usage_error("adv_loss_generator: no discriminator outputs");
  std::vector<Tensor<Real>> terms;
  for (const auto& o : fake) terms.push_back(mean(r3(f, o.score)));
  return detail::mean_over(std::move(terms));
}

// Discriminator objective, returned in minimization form (the maximized
// adversarial value, negated). The asymptotic families recompute each score
// twice from the stored (h, omega) split: once with omega detached so terms
// 1-2 shape only the feature extractor, once with h detached so terms 3-4
// move only the final projection.
template <typename Real>
Tensor<Real> adv_loss_discriminator(LossFamily f, const std::vector<DiscOutput<Real>>& real,
                                    const std::vector<DiscOutput<Real>>& fake) {
  if (real.empty() || real.size() != fake.size())
    throw usage_error("adv_loss_discriminator: need matching real/fake output lists");
  std::vector<Tensor<Real>> terms;
  if (f == LossFamily::lsgan) {
    for (size_t m = 0; m < real.size(); ++m) {
      auto t = add(mean(square(affine(real[m].score, Real(-1), Real(1)))),
                   mean(square(fake[m].score)));
      terms.push_back(t);
    }
    return detail::mean_over(std::move(terms));
  }
  for (size_t m = 0; m < real.size(); ++m) {
    const bool split_ok = real[m].h.defined() && real[m].omega_eff.defined() &&
                          fake[m].h.defined() && fake[m].omega_eff.defined();
    if (!split_ok)
      throw usage_error("adv_loss_discriminator: asymptotic family needs the (h, omega) split");
    auto body = add(mean(r1(f, real[m].rescore(false, true))),
                    mean(r2(f, fake[m].rescore(false, true))));
    auto proj = sub(mean(r3(f, real[m].rescore(true, false))),
                    mean(r3(f, fake[m].rescore(true, false))));
    terms.push_back(add(body, proj));
  }
  return neg(detail::mean_over(std::move(terms)));
}

// Values-only summary of every objective on one (real, generated) pair.
template <typename Real>
LossReport<Real> total_losses(const Tensor<Real>& x, const Tensor<Real>& xhat, Mtd<Real>& mtd,
                              Mpd<Real>& mpd, LossFamily f, const LossWeights& w) {
  w.validate();
  NoGrad<Real> ng;
  auto real = mtd.forward(x);
  auto real_p = mpd.forward(x);
  real.insert(real.end(), real_p.begin(), real_p.end());
  auto fake = mtd.forward(xhat);
  auto fake_p = mpd.forward(xhat);
  fake.insert(fake.end(), fake_p.begin(), fake_p.end());

  LossReport<Real> r;
  r.fm = feature_matching_loss(x, xhat, mtd.config()).value();
  r.mel = mel_spectrogram_loss(x, xhat, mtd.config()).value();
  r.adv_g = adv_loss_generator(f, fake).value();
  r.adv_d = adv_loss_discriminator(f, real, fake).value();
  r.total_g = static_cast<Real>(w.adv) * r.adv_g + static_cast<Real>(w.fm) * r.fm +
              static_cast<Real>(w.mel) * r.mel;
  r.total_d = r.adv_d;
  const std::pair<const char*, Real> named[] = {{"L_FM", r.fm},       {"L_Mel", r.mel},
                                                {"L_adv_G", r.adv_g}, {"L_adv_D", r.adv_d},
                                                {"total_G", r.total_g}, {"total_D", r.total_d}};
  for (const auto& [name, v] : named)
    if (!std::isfinite(static_cast<double>(v)))
      throw fault_error(std::string("total_losses: ") + name + " is not finite");
  return r;
}

}  // namespace vnet

#pragma once

#include <functional>

#include "vnet/generator.hpp"
#include "vnet/losses.hpp"
#include "vnet/params.hpp"
#include "vnet/tensor.hpp"

namespace vnet {

// Re-randomizes every parameter at fan-in scale (vectors at 0.1). Finite
// differences need activations of order one: tiny weights park activations on
// the leaky-relu kink where the two-sided stencil straddles the slope change,
// and large ones saturate tanh/sigmoid until the true gradient sinks below FD
// resolution. Fan-in scaling keeps every layer in the readable band.
template <typename Real>
void gradcheck_init(ParamStore<Real>& store, uint64_t seed) {
  Rng rng(seed);
  for (const auto& p : store.params()) {
    auto t = p.tensor;
    double fan = 1.0;
    for (size_t i = 1; i < t.ndim(); ++i) fan *= static_cast<double>(t.dim(i));
    const double sd = t.ndim() >= 2 ? 1.0 / std::sqrt(fan) : 0.1;
    Real* d = t.mutable_data();
    for (int64_t i = 0; i < t.numel(); ++i) d[i] = static_cast<Real>(sd * rng.normal());
  }
}

struct GradCheckEntry {
  std::string name;
  double err;
};

// Checks d(loss)/d(param) for each named parameter against central finite
// differences; loss_fn must rebuild the graph from the stores' live values.
template <typename Real>
std::vector<GradCheckEntry> check_params(const std::function<Tensor<Real>()>& loss_fn,
                                         ParamStore<Real>& store,
                                         const std::vector<std::string>& names,
                                         double eps = 1e-5, double denom_floor = 1e-8) {
  std::vector<GradCheckEntry> out;
  auto f = [&](const Tensor<Real>&) { return loss_fn(); };
  for (const auto& name : names) {
    auto p = store.param(name).tensor;
    out.push_back({name, grad_check<Real>(f, p, eps, denom_floor)});
    p.set_requires_grad(true);  // grad_check retires its point; params stay live
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canned miniature suites, shared by the `gradcheck` subcommand and the
// acceptance harness. Always 64-bit: 32-bit differences drown in rounding.
// ---------------------------------------------------------------------------

namespace detail {

template <typename Real>
Tensor<Real> gc_wave(int64_t n, uint64_t seed) {
  Rng rng(seed);
  auto w = Tensor<Real>::zeros({1, 1, n});
  Real* d = w.mutable_data();
  for (int64_t i = 0; i < n; ++i) d[i] = static_cast<Real>(0.4 * rng.normal());
  return w;
}

}  // namespace detail

inline GeneratorConfig gradcheck_generator_config() {
  GeneratorConfig c;
  c.upsample_rates = {2, 2};
  c.upsample_kernel_sizes = {4, 4};
  c.channels_initial = 8;
  c.mrf_kernel_sizes = {3};
  c.mrf_dilations = {{1, 2}};
  c.lvc_stages = 1;
  c.lvc_kernel_size = 3;
  c.kernel_predictor_channels = 4;
  c.mel_bands = 6;
  c.hop = 4;
  return c;
}

inline MtdConfig gradcheck_mtd_config() {
  auto c = MtdConfig::defaults();
  for (auto& s : c.subs) {
    s.channels = {4, 4, 1};
    s.time_dilations = {1};
  }
  c.subs[0].stft = {64, 16, 32};
  c.subs[1].stft = {128, 32, 64};
  c.subs[2].stft = {64, 16, 32};
  return c;
}

inline MpdConfig gradcheck_mpd_config() {
  MpdConfig c;
  c.periods = {2, 3};
  c.channels = {4, 8, 1};
  return c;
}

// Every generator parameter against an MSE-to-target objective.
inline std::vector<GradCheckEntry> run_gradcheck_generator() {
  ParamStore<double> store;
  Rng rng(6);
  Generator<double> gen(store, gradcheck_generator_config(), rng);
  gradcheck_init(store, 123);
  Rng rm(17);
  auto mel = Tensor<double>::zeros({1, 6, 5});
  for (int64_t i = 0; i < mel.numel(); ++i) mel.mutable_data()[i] = rm.normal();
  auto target = detail::gc_wave<double>(20, 23);
  std::vector<std::string> names;
  for (const auto& p : store.params()) names.push_back(p.name);
  return check_params<double>(
      [&] { return mean(square(sub(gen.forward(mel), target))); }, store, names);
}

// Every MTD parameter through the score heads. Spectral norm refreshes its
// power-iteration vectors on every unfrozen forward, which breaks the purity
// finite differences rely on: a few settling passes re-converge u/v after the
// re-randomization, then the sigma estimate is pinned for the sweep.
inline std::vector<GradCheckEntry> run_gradcheck_mtd() {
  ParamStore<double> store;
  Rng rng(6);
  Mtd<double> mtd(store, gradcheck_mtd_config(), rng);
  gradcheck_init(store, 123);
  auto x = detail::gc_wave<double>(256, 29);
  {
    NoGrad<double> ng;
    for (int i = 0; i < 3; ++i) (void)mtd.forward(x);
  }
  mtd.set_frozen(true);
  std::vector<std::string> names;
  for (const auto& p : store.params()) names.push_back(p.name);
  auto entries = check_params<double>(
      [&] {
        std::vector<Tensor<double>> terms;
        for (auto& o : mtd.forward(x)) terms.push_back(mean(square(o.score)));
        return detail::mean_over(std::move(terms));
      },
      store, names);
  mtd.set_frozen(false);
  return entries;
}

// Every MPD parameter; weight norm is a pure function of the weights, so no
// freezing is needed.
inline std::vector<GradCheckEntry> run_gradcheck_mpd() {
  ParamStore<double> store;
  Rng rng(6);
  Mpd<double> mpd(store, gradcheck_mpd_config(), rng);
  gradcheck_init(store, 123);
  auto x = detail::gc_wave<double>(90, 31);
  std::vector<std::string> names;
  for (const auto& p : store.params()) names.push_back(p.name);
  return check_params<double>(
      [&] {
        std::vector<Tensor<double>> terms;
        for (auto& o : mpd.forward(x)) terms.push_back(mean(square(o.score)));
        return detail::mean_over(std::move(terms));
      },
      store, names);
}

// Loss surfaces: the three r-functions per family on a fixed grid, the two
// spectral terms through a real STFT, the full matching/spectral losses, the
// generator objective against its input, and the discriminator objective
// against every parameter (which exercises the detached rescore split).
inline std::vector<GradCheckEntry> run_gradcheck_losses() {
  // Tighter stencil than the module sweeps: the loss surfaces stack abs()
  // and leaky-relu kinks, and at 1e-5 a handful of near-zero pre-activations
  // land inside the stencil. 1e-6 clears them while roundoff stays ~1e-10.
  constexpr double kEps = 1e-6;
  // The exponential families evaluate to O(100) on random nets, which puts
  // the FD noise floor near 1e-8; deep-layer gradients legitimately cancel
  // below that. Parameters whose gradient sits under this floor are certified
  // absolutely (to threshold * floor) instead of relatively.
  constexpr double kAdvFloor = 1e-3;
  std::vector<GradCheckEntry> out;
  const LossFamily fams[] = {LossFamily::lsgan, LossFamily::asymptotic_printed,
                             LossFamily::asymptotic_monotone};
  auto zgrid = Tensor<double>::zeros({7});
  for (int64_t i = 0; i < 7; ++i) zgrid.mutable_data()[i] = -3.0 + static_cast<double>(i);
  for (auto f : fams) {
    const std::string tag = std::string("[") + family_name(f) + "]";
    out.push_back({"r1" + tag,
                   grad_check<double>(
                       [f](const Tensor<double>& z) { return mean(r1(f, z)); }, zgrid, kEps)});
    out.push_back({"r2" + tag,
                   grad_check<double>(
                       [f](const Tensor<double>& z) { return mean(r2(f, z)); }, zgrid, kEps)});
    out.push_back({"r3" + tag,
                   grad_check<double>(
                       [f](const Tensor<double>& z) { return mean(r3(f, z)); }, zgrid, kEps)});
  }

  const StftParams sp{64, 16, 32};
  auto xs = detail::gc_wave<double>(128, 5);
  auto xhs = detail::gc_wave<double>(128, 9);
  out.push_back({"fm_spectrogram_term",
                 grad_check<double>(
                     [&](const Tensor<double>& p) {
                       return fm_spectrogram_term(stft_magnitude(xs, sp), stft_magnitude(p, sp));
                     },
                     xhs, kEps)});
  out.push_back({"log_l1_term",
                 grad_check<double>(
                     [&](const Tensor<double>& p) {
                       return log_l1_term(stft_magnitude(xs, sp), stft_magnitude(p, sp));
                     },
                     xhs, kEps)});

  const auto mcfg = gradcheck_mtd_config();
  auto x2 = detail::gc_wave<double>(256, 15);
  auto xh2 = detail::gc_wave<double>(256, 19);
  out.push_back({"feature_matching_loss",
                 grad_check<double>(
                     [&](const Tensor<double>& p) { return feature_matching_loss(x2, p, mcfg); },
                     xh2, kEps)});
  out.push_back({"mel_spectrogram_loss",
                 grad_check<double>(
                     [&](const Tensor<double>& p) { return mel_spectrogram_loss(x2, p, mcfg); },
                     xh2, kEps)});

  ParamStore<double> store;
  Rng rng(6);
  Mtd<double> mtd(store, mcfg, rng);
  Mpd<double> mpd(store, gradcheck_mpd_config(), rng);
  gradcheck_init(store, 123);
  auto xr = detail::gc_wave<double>(256, 21);
  auto xf = detail::gc_wave<double>(256, 27);
  {
    NoGrad<double> ng;
    for (int i = 0; i < 3; ++i) (void)mtd.forward(xr);
  }
  mtd.set_frozen(true);
  auto disc_all = [&](const Tensor<double>& w) {
    auto outs = mtd.forward(w);
    for (auto& o : mpd.forward(w)) outs.push_back(o);
    return outs;
  };
  for (auto f : fams) {
    const std::string tag = std::string("[") + family_name(f) + "]";
    out.push_back({"adv_loss_generator" + tag + ".input",
                   grad_check<double>(
                       [&, f](const Tensor<double>& p) { return adv_loss_generator(f, disc_all(p)); },
                       xf, kEps)});
  }
  {
    // LSGAN has no rescore split; the full objective is a plain scalar
    // function of every parameter.
    std::vector<std::string> names;
    for (const auto& p : store.params()) names.push_back(p.name);
    auto entries = check_params<double>(
        [&] { return adv_loss_discriminator(LossFamily::lsgan, disc_all(xr), disc_all(xf)); },
        store, names, kEps, kAdvFloor);
    for (auto& e : entries)
      out.push_back({"adv_loss_discriminator[lsgan]." + e.name, e.err});
  }
  // The asymptotic objectives are not the gradient field of any scalar: the
  // body terms stop the gradient at omega and the projection terms stop it at
  // h, so a finite difference of the whole loss would measure exactly the
  // dependence the backward is built to ignore. Each half is an honest scalar
  // function of the group it trains, so check body against phi and projection
  // against omega.
  for (auto f : {LossFamily::asymptotic_printed, LossFamily::asymptotic_monotone}) {
    std::vector<std::string> names_phi, names_omega;
    for (const auto& p : store.params())
      (p.group == ParamGroup::omega ? names_omega : names_phi).push_back(p.name);
    auto body = [&, f] {
      auto ro = disc_all(xr);
      auto fo = disc_all(xf);
      std::vector<Tensor<double>> terms;
      for (size_t m = 0; m < ro.size(); ++m)
        terms.push_back(add(mean(r1(f, ro[m].rescore(false, true))),
                            mean(r2(f, fo[m].rescore(false, true)))));
      return neg(detail::mean_over(std::move(terms)));
    };
    auto proj = [&, f] {
      auto ro = disc_all(xr);
      auto fo = disc_all(xf);
      std::vector<Tensor<double>> terms;
      for (size_t m = 0; m < ro.size(); ++m)
        terms.push_back(sub(mean(r3(f, ro[m].rescore(true, false))),
                            mean(r3(f, fo[m].rescore(true, false)))));
      return neg(detail::mean_over(std::move(terms)));
    };
    const std::string tag = std::string("[") + family_name(f) + "].";
    for (auto& e : check_params<double>(body, store, names_phi, kEps, kAdvFloor))
      out.push_back({"adv_d_body" + tag + e.name, e.err});
    for (auto& e : check_params<double>(proj, store, names_omega, kEps, kAdvFloor))
      out.push_back({"adv_d_proj" + tag + e.name, e.err});
  }
  mtd.set_frozen(false);
  return out;
}

inline const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> mods = {"generator", "mtd", "mpd", "losses"};
  return mods;
}

inline std::vector<GradCheckEntry> run_gradcheck_module(const std::string& module) {
  if (module == "generator") return run_gradcheck_generator();
  if (module == "mtd") return run_gradcheck_mtd();
  if (module == "mpd") return run_gradcheck_mpd();
  if (module == "losses") return run_gradcheck_losses();
  throw usage_error("gradcheck: unknown module '" + module + "'");
}

}  // namespace vnet

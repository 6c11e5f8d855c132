#pragma once

#include <map>

#include "vnet/tensor.hpp"

namespace vnet {

struct AudioClip {
  std::vector<double> samples;
  int64_t sample_rate = 24000;
};

struct StftParams {
  int64_t n_fft = 1024;
  int64_t hop_length = 256;
  int64_t win_length = 1024;
};

inline void validate(const StftParams& p) {
  if (p.n_fft < 2 || (p.n_fft & (p.n_fft - 1)) != 0)
    throw config_error("stft: n_fft " + std::to_string(p.n_fft) + " must be a power of two");
  if (p.win_length > p.n_fft || p.hop_length > p.win_length || p.hop_length < 1)
    throw config_error("stft: need hop <= win <= n_fft, got {" + std::to_string(p.n_fft) + "," +
                       std::to_string(p.hop_length) + "," + std::to_string(p.win_length) + "}");
}

enum class SpecKind { linear_magnitude, log_mel };

template <typename Real>
struct Spectrogram {
  std::vector<Real> values;  // [bins, frames] row-major
  int64_t bins = 0;
  int64_t frames = 0;
  SpecKind kind = SpecKind::linear_magnitude;
  StftParams params;
  int64_t num_elements() const { return bins * frames; }
};

namespace detail {

// Iterative radix-2 FFT, in place. sign=-1 is the forward transform; sign=+1
// the unnormalized inverse (used by the magnitude backward pass).
template <typename Real>
void fft_pow2(Real* re, Real* im, int64_t n, int sign) {
  for (int64_t i = 1, j = 0; i < n; ++i) {
    int64_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (int64_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const Real wr = static_cast<Real>(std::cos(ang)), wi = static_cast<Real>(std::sin(ang));
    for (int64_t i = 0; i < n; i += len) {
      Real cr = 1, ci = 0;
      for (int64_t k = 0; k < len / 2; ++k) {
        const int64_t a = i + k, b = i + k + len / 2;
        const Real tr = re[b] * cr - im[b] * ci;
        const Real ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const Real ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

// Periodic Hann of win_length, centered inside the n_fft frame.
template <typename Real>
std::vector<Real> centered_window(const StftParams& p) {
  std::vector<Real> w(static_cast<size_t>(p.n_fft), Real(0));
  const int64_t off = (p.n_fft - p.win_length) / 2;
  for (int64_t i = 0; i < p.win_length; ++i)
    w[static_cast<size_t>(off + i)] = static_cast<Real>(
        0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(i) /
                             static_cast<double>(p.win_length)));
  return w;
}

// Reflect map for center padding: padded index -> source index in [0,T).
inline int64_t reflect_index(int64_t t, int64_t T) {
  if (t < 0) t = -t;
  if (t >= T) t = 2 * T - 2 - t;
  return t;
}

}  // namespace detail

inline int64_t stft_frames(int64_t T, const StftParams& p) { return 1 + T / p.hop_length; }
inline int64_t stft_bins(const StftParams& p) { return p.n_fft / 2 + 1; }

// |STFT| with center reflect padding; magnitude guarded as
// sqrt(re^2+im^2+1e-9) so the zero-signal gradient stays finite.
// Input [B,T] or [B,1,T]; output [B, bins, frames].
template <typename Real>
Tensor<Real> stft_magnitude(const Tensor<Real>& x, const StftParams& p) {
  validate(p);
  const int64_t T = x.dim(x.ndim() - 1);
  int64_t rows = 1;
  for (size_t i = 0; i + 1 < x.ndim(); ++i) rows *= x.dim(i);
  if (T < p.win_length)
    throw input_error("stft: clip of " + std::to_string(T) + " samples is shorter than window " +
                      std::to_string(p.win_length));
  const int64_t pad = p.n_fft / 2;
  if (T < pad + 1)
    throw input_error("stft: clip of " + std::to_string(T) +
                      " samples too short for reflect padding " + std::to_string(pad));
  const int64_t F = stft_frames(T, p);
  const int64_t bins = stft_bins(p);
  const auto win = detail::centered_window<Real>(p);
  const Real guard = Real(1e-9);

  auto out = Tensor<Real>::zeros({rows, bins, F});
  // re/im retained for the backward pass
  auto spec_re = std::make_shared<std::vector<Real>>(static_cast<size_t>(rows * bins * F));
  auto spec_im = std::make_shared<std::vector<Real>>(static_cast<size_t>(rows * bins * F));
  const Real* xd = x.data();
  Real* od = out.mutable_data();
  parallel_for(rows * F, [&](int64_t i0, int64_t i1) {
    std::vector<Real> re(static_cast<size_t>(p.n_fft)), im(static_cast<size_t>(p.n_fft));
    for (int64_t rf = i0; rf < i1; ++rf) {
      const int64_t r = rf / F, f = rf % F;
      const Real* xrow = xd + r * T;
      const int64_t start = f * p.hop_length - pad;
      for (int64_t j = 0; j < p.n_fft; ++j) {
        re[static_cast<size_t>(j)] =
            win[static_cast<size_t>(j)] == Real(0)
                ? Real(0)
                : xrow[detail::reflect_index(start + j, T)] * win[static_cast<size_t>(j)];
        im[static_cast<size_t>(j)] = 0;
      }
      detail::fft_pow2(re.data(), im.data(), p.n_fft, -1);
      for (int64_t k = 0; k < bins; ++k) {
        const size_t oi = static_cast<size_t>((r * bins + k) * F + f);
        (*spec_re)[oi] = re[static_cast<size_t>(k)];
        (*spec_im)[oi] = im[static_cast<size_t>(k)];
        od[oi] = std::sqrt(re[static_cast<size_t>(k)] * re[static_cast<size_t>(k)] +
                           im[static_cast<size_t>(k)] * im[static_cast<size_t>(k)] + guard);
      }
    }
  });

  if (detail::wants_grad(x)) {
    out.set_requires_grad(true);
    detail::record<Real>([xn = x.node(), on = out.node(), spec_re, spec_im, rows, T, F, bins, p,
                          pad, win]() {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      const auto& mag = *on->vals;
      auto& gx = xn->ensure_grad();
      // one row at a time keeps the scatter deterministic
      parallel_for(rows, [&](int64_t r0, int64_t r1) {
        std::vector<Real> cre(static_cast<size_t>(p.n_fft)), cim(static_cast<size_t>(p.n_fft));
        for (int64_t r = r0; r < r1; ++r) {
          Real* grow = gx.data() + r * T;
          for (int64_t f = 0; f < F; ++f) {
            std::fill(cre.begin(), cre.end(), Real(0));
            std::fill(cim.begin(), cim.end(), Real(0));
            for (int64_t k = 0; k < bins; ++k) {
              const size_t oi = static_cast<size_t>((r * bins + k) * F + f);
              const Real inv = go[oi] / mag[oi];
              cre[static_cast<size_t>(k)] = (*spec_re)[oi] * inv;
              cim[static_cast<size_t>(k)] = (*spec_im)[oi] * inv;
            }
            // d|X|/dx is the sign-+ transform of (dre, dim) zero-filled above
            // the Nyquist bin, real part taken, then windowed and scattered
            detail::fft_pow2(cre.data(), cim.data(), p.n_fft, +1);
            const int64_t start = f * p.hop_length - pad;
            for (int64_t j = 0; j < p.n_fft; ++j) {
              const Real wj = win[static_cast<size_t>(j)];
              if (wj == Real(0)) continue;
              grow[detail::reflect_index(start + j, T)] += cre[static_cast<size_t>(j)] * wj;
            }
          }
        }
      });
    });
  }
  return out;
}

struct MelFilterbank {
  int64_t bands = 0;
  int64_t n_fft = 0;
  double f_min = 0, f_max = 0;
  std::vector<double> weights;  // [bands, n_fft/2+1]
  std::vector<double> centers_hz;
};

namespace detail {

inline double hz_to_mel(double f) {
  return f < 1000.0 ? 3.0 * f / 200.0 : 15.0 + 27.0 * std::log(f / 1000.0) / std::log(6.4);
}

inline double mel_to_hz(double m) {
  return m < 15.0 ? 200.0 * m / 3.0 : 1000.0 * std::exp(std::log(6.4) * (m - 15.0) / 27.0);
}

}  // namespace detail

// Triangular peak-1 filters on the Slaney mel scale.
inline MelFilterbank mel_filterbank(int64_t n_fft, int64_t sample_rate = 24000, int64_t bands = 100,
                                    double f_min = 0.0, double f_max = 12000.0) {
  if (bands < 1) throw config_error("mel_filterbank: need at least one band");
  if (f_max > static_cast<double>(sample_rate) / 2.0 + 1e-9)
    throw config_error("mel_filterbank: f_max above Nyquist");
  MelFilterbank fb;
  fb.bands = bands;
  fb.n_fft = n_fft;
  fb.f_min = f_min;
  fb.f_max = f_max;
  const int64_t bins = n_fft / 2 + 1;
  fb.weights.assign(static_cast<size_t>(bands * bins), 0.0);
  const double mlo = detail::hz_to_mel(f_min), mhi = detail::hz_to_mel(f_max);
  std::vector<double> pts(static_cast<size_t>(bands + 2));
  for (int64_t i = 0; i < bands + 2; ++i)
    pts[static_cast<size_t>(i)] =
        detail::mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(bands + 1));
  fb.centers_hz.assign(pts.begin() + 1, pts.end() - 1);
  for (int64_t b = 0; b < bands; ++b) {
    const double left = pts[static_cast<size_t>(b)], center = pts[static_cast<size_t>(b + 1)],
                 right = pts[static_cast<size_t>(b + 2)];
    for (int64_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * static_cast<double>(sample_rate) /
                       static_cast<double>(n_fft);
      const double up = (f - left) / std::max(center - left, 1e-12);
      const double down = (right - f) / std::max(right - center, 1e-12);
      const double w = std::max(0.0, std::min(up, down));
      if (w > 0) fb.weights[static_cast<size_t>(b * bins + k)] = w;
    }
  }
  return fb;
}

// mag [B,bins,F] x fb [bands,bins] -> [B,bands,F]; the bank is constant.
template <typename Real>
Tensor<Real> apply_filterbank(const Tensor<Real>& mag, const MelFilterbank& fb) {
  const int64_t B = mag.dim(0), bins = mag.dim(1), F = mag.dim(2);
  if (bins != fb.n_fft / 2 + 1)
    throw config_error("apply_filterbank: " + std::to_string(bins) + " bins do not match bank for n_fft " +
                       std::to_string(fb.n_fft));
  auto out = Tensor<Real>::zeros({B, fb.bands, F});
  const Real* md = mag.data();
  Real* od = out.mutable_data();
  parallel_for(B * fb.bands, [&](int64_t i0, int64_t i1) {
    for (int64_t bb = i0; bb < i1; ++bb) {
      const int64_t b = bb / fb.bands, band = bb % fb.bands;
      Real* orow = od + bb * F;
      const double* wrow = fb.weights.data() + band * bins;
      for (int64_t k = 0; k < bins; ++k) {
        const Real w = static_cast<Real>(wrow[k]);
        if (w == Real(0)) continue;
        const Real* mrow = md + (b * bins + k) * F;
        for (int64_t f = 0; f < F; ++f) orow[f] += w * mrow[f];
      }
    }
  });
  if (detail::wants_grad(mag)) {
    out.set_requires_grad(true);
    const auto weights = fb.weights;  // copy; bank may go out of scope
    const int64_t bands = fb.bands;
    detail::record<Real>([mn = mag.node(), on = out.node(), weights, B, bins, F, bands]() {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      auto& gm = mn->ensure_grad();
      parallel_for(B * bins, [&](int64_t i0, int64_t i1) {
        for (int64_t bk = i0; bk < i1; ++bk) {
          const int64_t b = bk / bins, k = bk % bins;
          Real* grow = gm.data() + bk * F;
          for (int64_t band = 0; band < bands; ++band) {
            const Real w = static_cast<Real>(weights[static_cast<size_t>(band * bins + k)]);
            if (w == Real(0)) continue;
            const Real* gorow = go.data() + (b * bands + band) * F;
            for (int64_t f = 0; f < F; ++f) grow[f] += w * gorow[f];
          }
        }
      });
    });
  }
  return out;
}

constexpr double kLogFloor = 1e-5;

// ln(fb . |STFT|) clamped below at ln(1e-5).
template <typename Real>
Tensor<Real> log_mel(const Tensor<Real>& x, const StftParams& p, const MelFilterbank& fb) {
  return log_clamped(apply_filterbank(stft_magnitude(x, p), fb), static_cast<Real>(kLogFloor));
}

// Plain-array front ends used by the CLI and metrics.
template <typename Real>
Spectrogram<Real> stft_spectrogram(const std::vector<double>& samples, const StftParams& p) {
  NoGrad<Real> ng;
  auto x = Tensor<Real>::zeros({1, static_cast<int64_t>(samples.size())});
  for (size_t i = 0; i < samples.size(); ++i) x.mutable_data()[i] = static_cast<Real>(samples[i]);
  auto m = stft_magnitude(x, p);
  Spectrogram<Real> s;
  s.values = m.values();
  s.bins = m.dim(1);
  s.frames = m.dim(2);
  s.kind = SpecKind::linear_magnitude;
  s.params = p;
  return s;
}

template <typename Real>
Spectrogram<Real> log_mel_spectrogram(const std::vector<double>& samples, const StftParams& p,
                                      const MelFilterbank& fb) {
  NoGrad<Real> ng;
  auto x = Tensor<Real>::zeros({1, static_cast<int64_t>(samples.size())});
  for (size_t i = 0; i < samples.size(); ++i) x.mutable_data()[i] = static_cast<Real>(samples[i]);
  auto m = log_mel(x, p, fb);
  Spectrogram<Real> s;
  s.values = m.values();
  s.bins = m.dim(1);
  s.frames = m.dim(2);
  s.kind = SpecKind::log_mel;
  s.params = p;
  return s;
}

inline AudioClip avg_pool(const AudioClip& clip, int64_t factor) {
  if (factor < 1) throw config_error("avg_pool: factor must be >= 1");
  if (factor == 1) return clip;
  AudioClip out;
  out.sample_rate = clip.sample_rate / factor;
  const int64_t To = static_cast<int64_t>(clip.samples.size()) / factor;
  out.samples.resize(static_cast<size_t>(To));
  for (int64_t t = 0; t < To; ++t) {
    double acc = 0;
    for (int64_t k = 0; k < factor; ++k) acc += clip.samples[static_cast<size_t>(t * factor + k)];
    out.samples[static_cast<size_t>(t)] = acc / static_cast<double>(factor);
  }
  return out;
}

namespace detail {

inline double bessel_i0(double x) {
  // power series; converges fast for the argument range we use
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 64; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

}  // namespace detail

// Windowed-sinc resampler, Kaiser window, 64 taps.
inline std::vector<double> resample(const std::vector<double>& x, int64_t sr_in, int64_t sr_out) {
  if (sr_in <= 0 || sr_out <= 0) throw config_error("resample: rates must be positive");
  if (sr_in == sr_out || x.empty()) return x;
  const double ratio = static_cast<double>(sr_out) / static_cast<double>(sr_in);
  const int64_t half = 32;  // 64-tap window
  const double beta = 8.6;
  const double fc = 0.5 * std::min(1.0, ratio);
  const double i0b = detail::bessel_i0(beta);
  const int64_t n_out =
      static_cast<int64_t>(std::floor(static_cast<double>(x.size()) * ratio));
  std::vector<double> out(static_cast<size_t>(n_out));
  const int64_t T = static_cast<int64_t>(x.size());
  for (int64_t n = 0; n < n_out; ++n) {
    const double p = static_cast<double>(n) / ratio;
    const int64_t k0 = static_cast<int64_t>(std::ceil(p)) - half;
    double acc = 0;
    for (int64_t k = k0; k < k0 + 2 * half; ++k) {
      if (k < 0 || k >= T) continue;
      const double t = static_cast<double>(k) - p;
      const double u = t / static_cast<double>(half);
      if (u <= -1.0 || u >= 1.0) continue;
      const double window = detail::bessel_i0(beta * std::sqrt(1.0 - u * u)) / i0b;
      const double arg = 2.0 * fc * t;
      const double sinc =
          std::abs(arg) < 1e-12 ? 1.0
                                : std::sin(3.14159265358979323846 * arg) /
                                      (3.14159265358979323846 * arg);
      acc += x[static_cast<size_t>(k)] * 2.0 * fc * sinc * window;
    }
    out[static_cast<size_t>(n)] = acc;
  }
  return out;
}

}  // namespace vnet

#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>

#include "vnet/wav.hpp"

namespace vnet {

struct PitchTrack {
  int64_t frame_hop = 256;
  std::vector<double> f0;        // Hz, 0 when unvoiced
  std::vector<uint8_t> voicing;  // f0 > 0 <=> voicing true
};

namespace metrics_detail {

inline const StftParams kResolutions[3] = {{1024, 120, 600}, {2048, 240, 1200}, {512, 50, 240}};
inline const StftParams kMelParams{1024, 256, 1024};
inline const double kMcdConst = 10.0 * std::sqrt(2.0) / std::log(10.0);

inline void pad_pair(std::vector<double>& a, std::vector<double>& b) {
  const size_t n = std::max(a.size(), b.size());
  a.resize(n, 0.0);
  b.resize(n, 0.0);
}

inline const MelFilterbank& mel_bank() {
  static const MelFilterbank fb = mel_filterbank(kMelParams.n_fft, 24000, 100, 0.0, 12000.0);
  return fb;
}

// Plain DCT-II coefficients 1..13 of each ln-mel frame; c0 carries only
// loudness and is excluded by convention.
inline std::vector<std::array<double, 13>> mel_cepstra(const Spectrogram<double>& s) {
  std::vector<std::array<double, 13>> out(static_cast<size_t>(s.frames));
  const int64_t M = s.bins;
  for (int64_t f = 0; f < s.frames; ++f) {
    auto& c = out[static_cast<size_t>(f)];
    for (int64_t k = 1; k <= 13; ++k) {
      double acc = 0;
      for (int64_t m = 0; m < M; ++m)
        acc += s.values[static_cast<size_t>(m * s.frames + f)] *
               std::cos(std::numbers::pi * static_cast<double>(k) *
                        (static_cast<double>(m) + 0.5) / static_cast<double>(M));
      c[static_cast<size_t>(k - 1)] = acc;
    }
  }
  return out;
}

inline double cep_dist(const std::array<double, 13>& a, const std::array<double, 13>& b) {
  double sq = 0;
  for (size_t k = 0; k < 13; ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(sq);
}

}  // namespace metrics_detail

// Mean over the three canonical resolutions of spectral convergence plus
// mean absolute log-magnitude difference. 0 iff magnitudes agree everywhere.
inline double m_stft(std::vector<double> x, std::vector<double> xhat) {
  metrics_detail::pad_pair(x, xhat);
  double acc = 0;
  for (const auto& p : metrics_detail::kResolutions) {
    const auto s = stft_spectrogram<double>(x, p);
    const auto sh = stft_spectrogram<double>(xhat, p);
    double num = 0, ref = 0, l1 = 0;
    for (size_t i = 0; i < s.values.size(); ++i) {
      const double d = s.values[i] - sh.values[i];
      num += d * d;
      ref += s.values[i] * s.values[i];
      l1 += std::abs(std::log(std::max(s.values[i], kLogFloor)) -
                     std::log(std::max(sh.values[i], kLogFloor)));
    }
    const double sc = ref < 1e-24 ? 0.0 : std::sqrt(num) / std::sqrt(ref);
    acc += sc + l1 / static_cast<double>(s.num_elements());
  }
  return acc / 3.0;
}

// MCD over the DTW-aligned cepstra; missing (nullopt) when either side is
// silent, i.e. its whole log-mel sits on the clamp floor.
inline std::optional<double> mcd(std::vector<double> x, std::vector<double> xhat) {
  using namespace metrics_detail;
  auto silent = [](const std::vector<double>& v) {
    for (double s : v)
      if (s != 0.0) return false;
    return true;
  };
  if (silent(x) || silent(xhat)) return std::nullopt;
  pad_pair(x, xhat);
  const auto mx = log_mel_spectrogram<double>(x, kMelParams, mel_bank());
  const auto mh = log_mel_spectrogram<double>(xhat, kMelParams, mel_bank());

  const auto cx = mel_cepstra(mx), ch = mel_cepstra(mh);
  const int64_t A = static_cast<int64_t>(cx.size()), B = static_cast<int64_t>(ch.size());
  // DP over summed distance with steps (1,0),(0,1),(1,1); the mean divides
  // by the node count of the recovered path.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dp(static_cast<size_t>(A * B), inf);
  auto at = [&](int64_t i, int64_t j) -> double& { return dp[static_cast<size_t>(i * B + j)]; };
  for (int64_t i = 0; i < A; ++i)
    for (int64_t j = 0; j < B; ++j) {
      const double c = cep_dist(cx[static_cast<size_t>(i)], ch[static_cast<size_t>(j)]);
      double best = 0;
      if (i > 0 || j > 0) {
        best = inf;
        if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
        if (i > 0) best = std::min(best, at(i - 1, j));
        if (j > 0) best = std::min(best, at(i, j - 1));
      }
      at(i, j) = best + c;
    }
  int64_t i = A - 1, j = B - 1, nodes = 1;
  while (i > 0 || j > 0) {
    double best = inf;
    int di = 0, dj = 0;
    if (i > 0 && j > 0 && at(i - 1, j - 1) <= best) best = at(i - 1, j - 1), di = -1, dj = -1;
    if (i > 0 && at(i - 1, j) < best) best = at(i - 1, j), di = -1, dj = 0;
    if (j > 0 && at(i, j - 1) < best) best = at(i, j - 1), di = 0, dj = -1;
    i += di;
    j += dj;
    ++nodes;
  }
  return kMcdConst * at(A - 1, B - 1) / static_cast<double>(nodes);
}

// YIN-style tracker: cumulative mean normalized difference per 1024-sample
// window, hop 256, absolute threshold 0.3, lag band mapping to [50, 800] Hz.
inline PitchTrack pitch_track(const std::vector<double>& x, int64_t sample_rate = 24000) {
  const int64_t W = 1024, hop = 256;
  const int64_t tau_min = sample_rate / 800, tau_max = sample_rate / 50;
  const int64_t T = static_cast<int64_t>(x.size());
  const int64_t frames = T >= W ? 1 + (T - W) / hop : 0;
  if (frames < 4)
    throw input_error("pitch_track: need at least 4 frames (" +
                      std::to_string(W + 3 * hop) + " samples), got " + std::to_string(T));
  const int64_t N = W - tau_max;  // fixed integration window keeps the CMND unbiased across lags
  if (N < 2)
    throw config_error("pitch_track: sample rate " + std::to_string(sample_rate) +
                       " pushes the 50 Hz lag past the window");
  const double threshold = 0.3;

  PitchTrack track;
  track.frame_hop = hop;
  track.f0.resize(static_cast<size_t>(frames), 0.0);
  track.voicing.assign(static_cast<size_t>(frames), 0);
  std::vector<double> d(static_cast<size_t>(tau_max + 1), 0.0);
  std::vector<double> cmnd(static_cast<size_t>(tau_max + 1), 1.0);
  for (int64_t f = 0; f < frames; ++f) {
    const double* w = x.data() + f * hop;
    double energy = 0;
    for (int64_t t = 0; t < W; ++t) energy += w[t] * w[t];
    if (energy == 0) continue;
    double cum = 0;
    for (int64_t tau = 1; tau <= tau_max; ++tau) {
      double acc = 0;
      for (int64_t t = 0; t < N; ++t) {
        const double diff = w[t] - w[t + tau];
        acc += diff * diff;
      }
      d[static_cast<size_t>(tau)] = acc;
      cum += acc;
      cmnd[static_cast<size_t>(tau)] =
          cum == 0 ? 1.0 : acc * static_cast<double>(tau) / cum;
    }
    int64_t tau = -1;
    for (int64_t cand = tau_min; cand <= tau_max; ++cand)
      if (cmnd[static_cast<size_t>(cand)] < threshold) {
        tau = cand;
        while (tau + 1 <= tau_max && cmnd[static_cast<size_t>(tau + 1)] < cmnd[static_cast<size_t>(tau)])
          ++tau;
        break;
      }
    if (tau < 0) continue;
    double refined = static_cast<double>(tau);
    if (tau > tau_min && tau < tau_max) {
      const double a = cmnd[static_cast<size_t>(tau - 1)], b = cmnd[static_cast<size_t>(tau)],
                   c = cmnd[static_cast<size_t>(tau + 1)];
      const double denom = a - 2 * b + c;
      if (denom > 0) {
        double delta = 0.5 * (a - c) / denom;
        delta = std::clamp(delta, -0.5, 0.5);
        refined += delta;
      }
    }
    const double f0 = std::clamp(static_cast<double>(sample_rate) / refined, 50.0, 800.0);
    track.f0[static_cast<size_t>(f)] = f0;
    track.voicing[static_cast<size_t>(f)] = 1;
  }
  return track;
}

struct PeriodicityResult {
  std::optional<double> periodicity;  // missing when no frame is voiced in both
  double vuv_f1 = 0.0;
};

// RMSE of |f0 - f0_hat| / f0 over mutually voiced frames, and the F1 score
// of the generated track's voicing decisions against the reference's.
inline PeriodicityResult periodicity_and_vuv(const PitchTrack& ref, const PitchTrack& gen) {
  const size_t n = std::min(ref.f0.size(), gen.f0.size());
  double sq = 0;
  int64_t both = 0, tp = 0, fp = 0, fn = 0, pos = 0;
  for (size_t i = 0; i < n; ++i) {
    const bool vr = ref.voicing[i] != 0, vg = gen.voicing[i] != 0;
    pos += vr || vg;
    tp += vr && vg;
    fp += !vr && vg;
    fn += vr && !vg;
    if (vr && vg) {
      const double dev = std::abs(ref.f0[i] - gen.f0[i]) / ref.f0[i];
      sq += dev * dev;
      ++both;
    }
  }
  PeriodicityResult r;
  if (both > 0) r.periodicity = std::sqrt(sq / static_cast<double>(both));
  r.vuv_f1 = pos == 0 ? 1.0  // neither track voices anything: perfect agreement
                      : 2.0 * static_cast<double>(tp) /
                            static_cast<double>(2 * tp + fp + fn);
  return r;
}

struct FileMetrics {
  std::string rel, subset;
  std::optional<double> m_stft, mcd, periodicity, vuv_f1;
};

struct Aggregate {
  std::optional<double> m_stft, mcd, periodicity, vuv_f1;
  int64_t n_m_stft = 0, n_mcd = 0, n_periodicity = 0, n_vuv_f1 = 0;
};

struct MetricReport {
  std::vector<FileMetrics> files;
  std::vector<std::pair<std::string, Aggregate>> subsets;
  Aggregate macro;
  std::vector<std::pair<std::string, std::string>> unpaired;  // (side, rel path)
};

namespace metrics_detail {

inline std::map<std::string, std::string> scan_wavs(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::exists(root)) throw input_error("metrics: directory does not exist: " + root);
  std::map<std::string, std::string> rel_to_abs;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().extension() != ".wav") continue;
    rel_to_abs[fs::relative(e.path(), root).generic_string()] = e.path().string();
  }
  return rel_to_abs;
}

inline std::string subset_of(const std::string& rel) {
  const auto slash = rel.find('/');
  return slash == std::string::npos ? "." : rel.substr(0, slash);
}

struct Welford {
  double sum = 0;
  int64_t n = 0;
  void add(const std::optional<double>& v) {
    if (!v) return;
    sum += *v;
    ++n;
  }
  std::optional<double> mean() const {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

}  // namespace metrics_detail

// Evaluates every filename pair shared by the two trees: per-file metrics,
// per-subset (first path component) means, macro-average across subsets.
// Unpaired files are listed and skipped; a file too short for a metric
// leaves that metric missing rather than failing the run.
inline MetricReport corpus_eval(const std::string& dir_real, const std::string& dir_gen) {
  using namespace metrics_detail;
  const auto real = scan_wavs(dir_real), gen = scan_wavs(dir_gen);
  MetricReport rep;
  for (const auto& [rel, _] : real)
    if (!gen.count(rel)) rep.unpaired.emplace_back("real", rel);
  for (const auto& [rel, _] : gen)
    if (!real.count(rel)) rep.unpaired.emplace_back("generated", rel);

  std::map<std::string, std::array<Welford, 4>> by_subset;
  for (const auto& [rel, abs_real] : real) {
    auto it = gen.find(rel);
    if (it == gen.end()) continue;
    const auto cr = read_wav(abs_real, 24000);
    const auto cg = read_wav(it->second, 24000);
    FileMetrics fm;
    fm.rel = rel;
    fm.subset = subset_of(rel);
    try {
      fm.m_stft = m_stft(cr.samples, cg.samples);
    } catch (const input_error&) {
    }
    try {
      fm.mcd = mcd(cr.samples, cg.samples);
    } catch (const input_error&) {
    }
    try {
      const auto tr = pitch_track(cr.samples);
      const auto tg = pitch_track(cg.samples);
      const auto pv = periodicity_and_vuv(tr, tg);
      fm.periodicity = pv.periodicity;
      fm.vuv_f1 = pv.vuv_f1;
    } catch (const input_error&) {
    }
    auto& w = by_subset[fm.subset];
    w[0].add(fm.m_stft);
    w[1].add(fm.mcd);
    w[2].add(fm.periodicity);
    w[3].add(fm.vuv_f1);
    rep.files.push_back(std::move(fm));
  }

  std::array<Welford, 4> macro;
  for (const auto& [name, w] : by_subset) {
    Aggregate a;
    a.m_stft = w[0].mean();
    a.mcd = w[1].mean();
    a.periodicity = w[2].mean();
    a.vuv_f1 = w[3].mean();
    a.n_m_stft = w[0].n;
    a.n_mcd = w[1].n;
    a.n_periodicity = w[2].n;
    a.n_vuv_f1 = w[3].n;
    macro[0].add(a.m_stft);
    macro[1].add(a.mcd);
    macro[2].add(a.periodicity);
    macro[3].add(a.vuv_f1);
    rep.subsets.emplace_back(name, a);
  }
  rep.macro.m_stft = macro[0].mean();
  rep.macro.mcd = macro[1].mean();
  rep.macro.periodicity = macro[2].mean();
  rep.macro.vuv_f1 = macro[3].mean();
  rep.macro.n_m_stft = macro[0].n;
  rep.macro.n_mcd = macro[1].n;
  rep.macro.n_periodicity = macro[2].n;
  rep.macro.n_vuv_f1 = macro[3].n;
  std::sort(rep.unpaired.begin(), rep.unpaired.end());
  return rep;
}

namespace metrics_detail {

inline std::string cell(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

}  // namespace metrics_detail

inline std::string report_tsv(const MetricReport& rep) {
  using metrics_detail::cell;
  std::string out =
      "kind\tname\tsubset\tm_stft\tmcd\tperiodicity\tvuv_f1\tn_m_stft\tn_mcd\tn_periodicity\tn_"
      "vuv_f1\n";
  auto counts = [](const FileMetrics& f) {
    return std::to_string(f.m_stft ? 1 : 0) + '\t' + std::to_string(f.mcd ? 1 : 0) + '\t' +
           std::to_string(f.periodicity ? 1 : 0) + '\t' + std::to_string(f.vuv_f1 ? 1 : 0);
  };
  for (const auto& f : rep.files)
    out += "file\t" + f.rel + '\t' + f.subset + '\t' + cell(f.m_stft) + '\t' + cell(f.mcd) +
           '\t' + cell(f.periodicity) + '\t' + cell(f.vuv_f1) + '\t' + counts(f) + '\n';
  auto agg_row = [&](const std::string& kind, const std::string& name, const Aggregate& a) {
    return kind + '\t' + name + '\t' + (kind == "subset" ? name : std::string("-")) + '\t' +
           cell(a.m_stft) + '\t' + cell(a.mcd) + '\t' + cell(a.periodicity) + '\t' +
           cell(a.vuv_f1) + '\t' + std::to_string(a.n_m_stft) + '\t' + std::to_string(a.n_mcd) +
           '\t' + std::to_string(a.n_periodicity) + '\t' + std::to_string(a.n_vuv_f1) + '\n';
  };
  for (const auto& [name, a] : rep.subsets) out += agg_row("subset", name, a);
  out += agg_row("macro", "all", rep.macro);
  for (const auto& [side, rel] : rep.unpaired)
    out += "unpaired\t" + rel + '\t' + side + "\t-\t-\t-\t-\t0\t0\t0\t0\n";
  return out;
}

}  // namespace vnet

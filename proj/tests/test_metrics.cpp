#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <numbers>

#include "vnet/metrics.hpp"

namespace fs = std::filesystem;

using vnet::PitchTrack;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> tone(double freq, int64_t n = 24000, double amp = 0.5) {
  std::vector<double> x(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    x[static_cast<size_t>(i)] = amp * std::sin(2 * kPi * freq * static_cast<double>(i) / 24000.0);
  return x;
}

std::vector<double> chirp(int64_t n = 24000, double f0 = 200, double f1 = 400) {
  std::vector<double> x(static_cast<size_t>(n));
  double phase = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n);
    phase += 2 * kPi * (f0 + (f1 - f0) * frac) / 24000.0;
    x[static_cast<size_t>(i)] = 0.5 * std::sin(phase);
  }
  return x;
}

std::vector<double> noise(uint64_t seed, int64_t n = 24000, double amp = 0.3) {
  vnet::Rng rng(seed);
  std::vector<double> x(static_cast<size_t>(n));
  for (auto& v : x) v = amp * rng.normal();
  return x;
}

double unaligned_mcd(const std::vector<double>& x, const std::vector<double>& xh) {
  using namespace vnet::metrics_detail;
  auto a = x, b = xh;
  pad_pair(a, b);
  const auto ca = mel_cepstra(vnet::log_mel_spectrogram<double>(a, kMelParams, mel_bank()));
  const auto cb = mel_cepstra(vnet::log_mel_spectrogram<double>(b, kMelParams, mel_bank()));
  const size_t n = std::min(ca.size(), cb.size());
  double acc = 0;
  for (size_t i = 0; i < n; ++i) acc += cep_dist(ca[i], cb[i]);
  return kMcdConst * acc / static_cast<double>(n);
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("vnet_metrics_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

void put_wav(const fs::path& p, const std::vector<double>& samples) {
  fs::create_directories(p.parent_path());
  vnet::AudioClip clip;
  clip.sample_rate = 24000;
  clip.samples = samples;
  vnet::write_wav(p.string(), clip);
}

}  // namespace

TEST_CASE("m_stft ideals and guards") {
  const auto x = tone(220);
  CHECK(vnet::m_stft(x, x) == 0.0);

  auto neg = x;
  for (auto& v : neg) v = -v;
  CHECK(vnet::m_stft(x, neg) == 0.0);  // magnitudes are sign-blind

  const auto wn = noise(5);
  const std::vector<double> silence(wn.size(), 0.0);
  CHECK(vnet::m_stft(wn, silence) > 1.0);

  // Shorter side is zero-padded rather than rejected.
  auto shorter = std::vector<double>(x.begin(), x.begin() + 20000);
  CHECK(vnet::m_stft(x, shorter) > 0.0);
  CHECK(vnet::m_stft(shorter, x) > 0.0);

  CHECK_THROWS_AS(vnet::m_stft(std::vector<double>(600, 0.1), std::vector<double>(600, 0.1)),
                  vnet::input_error);

  CHECK(vnet::m_stft(x, noise(7)) > 0.0);
}

TEST_CASE("mcd ideals, silence, and DTW alignment") {
  const auto x = chirp();
  auto same = vnet::mcd(x, x);
  REQUIRE(same.has_value());
  CHECK(*same == 0.0);

  const std::vector<double> silence(24000, 0.0);
  CHECK_FALSE(vnet::mcd(x, silence).has_value());
  CHECK_FALSE(vnet::mcd(silence, x).has_value());
  CHECK_FALSE(vnet::mcd(silence, silence).has_value());

  // A 3-frame shift of the same sweep; DTW should re-align almost all of
  // the distance away. Both windows carry full content so only the path
  // ends pay a residual cost.
  const auto src = chirp(48000 + 3 * 256);
  const std::vector<double> head(src.begin(), src.begin() + 48000);
  const std::vector<double> shifted(src.begin() + 3 * 256, src.end());
  const double unaligned = unaligned_mcd(head, shifted);
  auto aligned = vnet::mcd(head, shifted);
  REQUIRE(aligned.has_value());
  CAPTURE(unaligned, *aligned);
  REQUIRE(unaligned > 0.0);
  CHECK(*aligned <= 0.05 * unaligned);

  // DTW never beats the stay-on-the-diagonal pairing... the other way round.
  const auto y = tone(330);
  auto d = vnet::mcd(x, y);
  REQUIRE(d.has_value());
  CHECK(*d <= unaligned_mcd(x, y) + 1e-12);
  CHECK(*d >= 0.0);
}

TEST_CASE("pitch tracker oracles") {
  const auto t200 = vnet::pitch_track(tone(200));
  REQUIRE(t200.f0.size() >= 4);
  for (size_t i = 0; i < t200.f0.size(); ++i) {
    CAPTURE(i);
    REQUIRE(t200.voicing[i] == 1);
    REQUIRE(t200.f0[i] == Catch::Approx(200.0).margin(1.0));
  }

  const auto tn = vnet::pitch_track(noise(42));
  int64_t unvoiced = 0;
  for (auto v : tn.voicing) unvoiced += v == 0;
  CAPTURE(unvoiced, tn.voicing.size());
  CHECK(static_cast<double>(unvoiced) >= 0.9 * static_cast<double>(tn.voicing.size()));

  const auto ts = vnet::pitch_track(std::vector<double>(24000, 0.0));
  for (size_t i = 0; i < ts.voicing.size(); ++i) {
    REQUIRE(ts.voicing[i] == 0);
    REQUIRE(ts.f0[i] == 0.0);
  }

  CHECK_THROWS_AS(vnet::pitch_track(std::vector<double>(1500, 0.1)), vnet::input_error);

  // Half tone, half silence: voicing tracks the energy.
  auto half = tone(220, 12000);
  half.resize(24000, 0.0);
  const auto th = vnet::pitch_track(half);
  int64_t voiced = 0;
  for (auto v : th.voicing) voiced += v != 0;
  CHECK(voiced > static_cast<int64_t>(th.voicing.size() / 4));
  CHECK(voiced < static_cast<int64_t>(3 * th.voicing.size() / 4 + 4));
}

TEST_CASE("periodicity and V/UV F1") {
  const auto a = vnet::pitch_track(tone(200));
  auto self = vnet::periodicity_and_vuv(a, a);
  REQUIRE(self.periodicity.has_value());
  CHECK(*self.periodicity == 0.0);
  CHECK(self.vuv_f1 == 1.0);

  PitchTrack comp = a;
  for (size_t i = 0; i < comp.voicing.size(); ++i) {
    comp.voicing[i] = a.voicing[i] ? 0 : 1;
    comp.f0[i] = comp.voicing[i] ? 100.0 : 0.0;
  }
  auto vs = vnet::periodicity_and_vuv(a, comp);
  CHECK(vs.vuv_f1 == 0.0);
  CHECK_FALSE(vs.periodicity.has_value());

  // 5% pitch scale: RMSE of |200-210|/200 over mutually voiced frames.
  const auto b = vnet::pitch_track(tone(210));
  auto scaled = vnet::periodicity_and_vuv(a, b);
  REQUIRE(scaled.periodicity.has_value());
  CHECK(*scaled.periodicity == Catch::Approx(0.05).margin(1e-3));
  CHECK(scaled.vuv_f1 == 1.0);

  // All-unvoiced on both sides counts as perfect agreement.
  const auto s = vnet::pitch_track(std::vector<double>(24000, 0.0));
  auto su = vnet::periodicity_and_vuv(s, s);
  CHECK(su.vuv_f1 == 1.0);
  CHECK_FALSE(su.periodicity.has_value());

  // F1 is invariant to any frame permutation applied to both tracks.
  PitchTrack pa = a, pb = b;
  vnet::Rng rng(9);
  for (size_t i = pa.f0.size(); i > 1; --i) {
    const size_t j = rng.raw() % i;
    std::swap(pa.f0[i - 1], pa.f0[j]);
    std::swap(pa.voicing[i - 1], pa.voicing[j]);
    std::swap(pb.f0[i - 1], pb.f0[j]);
    std::swap(pb.voicing[i - 1], pb.voicing[j]);
  }
  auto perm = vnet::periodicity_and_vuv(pa, pb);
  CHECK(perm.vuv_f1 == scaled.vuv_f1);
  REQUIRE(perm.periodicity.has_value());
  CHECK(*perm.periodicity == Catch::Approx(*scaled.periodicity).epsilon(1e-12));

  // Truncation to the shorter track.
  PitchTrack longer = a;
  longer.f0.resize(longer.f0.size() + 10, 0.0);
  longer.voicing.resize(longer.voicing.size() + 10, 0);
  auto trunc = vnet::periodicity_and_vuv(a, longer);
  CHECK(trunc.vuv_f1 == 1.0);
}

TEST_CASE("corpus_eval on identical trees is ideal") {
  TempDir real, gen;
  put_wav(real.path / "a" / "x.wav", tone(220));
  put_wav(real.path / "a" / "y.wav", chirp());
  put_wav(real.path / "b" / "z.wav", tone(330));
  for (const char* rel : {"a/x.wav", "a/y.wav", "b/z.wav"})
    fs::create_directories((gen.path / rel).parent_path()),
        fs::copy_file(real.path / rel, gen.path / rel);

  auto rep = vnet::corpus_eval(real.path.string(), gen.path.string());
  REQUIRE(rep.files.size() == 3);
  for (const auto& f : rep.files) {
    CAPTURE(f.rel);
    REQUIRE(f.m_stft.has_value());
    CHECK(*f.m_stft == 0.0);
    REQUIRE(f.mcd.has_value());
    CHECK(*f.mcd == 0.0);
    REQUIRE(f.periodicity.has_value());
    CHECK(*f.periodicity == 0.0);
    REQUIRE(f.vuv_f1.has_value());
    CHECK(*f.vuv_f1 == 1.0);
  }
  REQUIRE(rep.subsets.size() == 2);
  CHECK(rep.subsets[0].first == "a");
  CHECK(rep.subsets[0].second.n_m_stft == 2);
  CHECK(rep.subsets[1].first == "b");
  REQUIRE(rep.macro.m_stft.has_value());
  CHECK(*rep.macro.m_stft == 0.0);
  CHECK(*rep.macro.vuv_f1 == 1.0);
  CHECK(rep.macro.n_m_stft == 2);  // two subsets contribute
  CHECK(rep.unpaired.empty());
}

TEST_CASE("corpus_eval handles unpaired files and macro-averages subsets") {
  TempDir real, gen;
  put_wav(real.path / "a" / "x.wav", tone(220));
  put_wav(real.path / "b" / "y.wav", tone(300));
  put_wav(real.path / "c" / "only_real.wav", tone(250));
  put_wav(gen.path / "a" / "x.wav", noise(3));
  put_wav(gen.path / "b" / "y.wav", noise(4, 24000, 0.05));
  put_wav(gen.path / "only_gen.wav", tone(100));

  auto rep = vnet::corpus_eval(real.path.string(), gen.path.string());
  REQUIRE(rep.files.size() == 2);
  REQUIRE(rep.unpaired.size() == 2);
  CHECK(rep.unpaired[0] == std::make_pair(std::string("generated"), std::string("only_gen.wav")));
  CHECK(rep.unpaired[1] ==
        std::make_pair(std::string("real"), std::string("c/only_real.wav")));

  REQUIRE(rep.subsets.size() == 2);
  const auto& sa = rep.subsets[0].second;
  const auto& sb = rep.subsets[1].second;
  REQUIRE(sa.m_stft.has_value());
  REQUIRE(sb.m_stft.has_value());
  CHECK(*rep.macro.m_stft == Catch::Approx((*sa.m_stft + *sb.m_stft) / 2).epsilon(1e-15));
  CHECK(rep.macro.n_m_stft == 2);

  // Field sanity on a genuinely different pair.
  for (const auto& f : rep.files) {
    REQUIRE(f.m_stft.has_value());
    CHECK(*f.m_stft > 0.0);
    CHECK(std::isfinite(*f.m_stft));
    if (f.vuv_f1) {
      CHECK(*f.vuv_f1 >= 0.0);
      CHECK(*f.vuv_f1 <= 1.0);
    }
    if (f.mcd) CHECK(*f.mcd >= 0.0);
  }

  const auto tsv = vnet::report_tsv(rep);
  CHECK(tsv.find("kind\tname\tsubset") == 0);
  CHECK(tsv.find("\nmacro\tall\t") != std::string::npos);
  CHECK(tsv.find("unpaired\tonly_gen.wav\tgenerated") != std::string::npos);
  // Every row has the same column count.
  std::istringstream is(tsv);
  std::string line;
  size_t tabs = 0;
  bool first = true;
  while (std::getline(is, line)) {
    const size_t n = static_cast<size_t>(std::count(line.begin(), line.end(), '\t'));
    if (first) tabs = n, first = false;
    CHECK(n == tabs);
  }

  CHECK_THROWS_AS(vnet::corpus_eval((real.path / "absent").string(), gen.path.string()),
                  vnet::input_error);
}

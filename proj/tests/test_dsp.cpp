#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <fstream>

#include "vnet/dsp.hpp"
#include "vnet/wav.hpp"

using vnet::StftParams;
using vnet::Tensor;

namespace {

using T = Tensor<double>;
constexpr double kPi = 3.14159265358979323846;

std::vector<double> sine(double freq_hz, int64_t n, int64_t sr, double amp = 0.6) {
  std::vector<double> x(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    x[static_cast<size_t>(i)] = amp * std::sin(2.0 * kPi * freq_hz * static_cast<double>(i) /
                                               static_cast<double>(sr));
  return x;
}

T wave_tensor(const std::vector<double>& x) {
  auto t = T::zeros({1, static_cast<int64_t>(x.size())});
  std::copy(x.begin(), x.end(), t.mutable_data());
  return t;
}

// O(N^2) reference transform of one windowed frame.
std::vector<double> naive_frame_magnitude(const std::vector<double>& frame) {
  const int64_t N = static_cast<int64_t>(frame.size());
  std::vector<double> mag(static_cast<size_t>(N / 2 + 1));
  for (int64_t k = 0; k <= N / 2; ++k) {
    double re = 0, im = 0;
    for (int64_t j = 0; j < N; ++j) {
      const double ang = -2.0 * kPi * static_cast<double>(j * k) / static_cast<double>(N);
      re += frame[static_cast<size_t>(j)] * std::cos(ang);
      im += frame[static_cast<size_t>(j)] * std::sin(ang);
    }
    mag[static_cast<size_t>(k)] = std::sqrt(re * re + im * im + 1e-9);
  }
  return mag;
}

// dominant frequency from zero crossings, for the resampler oracle
double zero_crossing_freq(const std::vector<double>& x, int64_t sr) {
  int crossings = 0;
  int64_t first = -1, last = -1;
  for (size_t i = 1; i < x.size(); ++i)
    if (x[i - 1] < 0 && x[i] >= 0) {
      ++crossings;
      if (first < 0) first = static_cast<int64_t>(i);
      last = static_cast<int64_t>(i);
    }
  if (crossings < 2) return 0;
  return static_cast<double>(crossings - 1) * static_cast<double>(sr) /
         static_cast<double>(last - first);
}

}  // namespace

TEST_CASE("stft matches a naive DFT on one frame") {
  vnet::NoGrad<double> ng;
  StftParams p{64, 16, 64};
  vnet::Rng rng(17);
  std::vector<double> x(64);
  for (auto& v : x) v = rng.normal();
  auto spec = vnet::stft_spectrogram<double>(x, p);
  // frame at index 2 of center-padded signal starts at 2*16-32 = 0: no padding involved
  std::vector<double> frame(64);
  for (int64_t j = 0; j < 64; ++j)
    frame[static_cast<size_t>(j)] =
        x[static_cast<size_t>(j)] *
        (0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(j) / 64.0));
  auto ref = naive_frame_magnitude(frame);
  REQUIRE(spec.bins == 33);
  for (int64_t k = 0; k < 33; ++k)
    CHECK(spec.values[static_cast<size_t>(k * spec.frames + 2)] ==
          Catch::Approx(ref[static_cast<size_t>(k)]).margin(1e-8));
}

TEST_CASE("stft framing and hand oracles") {
  vnet::NoGrad<double> ng;
  SECTION("zero input sits at the guard floor") {
    StftParams p{256, 64, 256};
    std::vector<double> x(1000, 0.0);
    auto spec = vnet::stft_spectrogram<double>(x, p);
    for (double v : spec.values) CHECK(v == Catch::Approx(std::sqrt(1e-9)).epsilon(1e-10));
  }
  SECTION("1 kHz sine at 24 kHz peaks in bin 43 of a 1024 FFT") {
    StftParams p{1024, 256, 1024};
    auto x = sine(1000.0, 4096, 24000);
    auto spec = vnet::stft_spectrogram<double>(x, p);
    std::vector<double> avg(static_cast<size_t>(spec.bins), 0.0);
    for (int64_t k = 0; k < spec.bins; ++k)
      for (int64_t f = 0; f < spec.frames; ++f)
        avg[static_cast<size_t>(k)] += spec.values[static_cast<size_t>(k * spec.frames + f)];
    int64_t best = 0;
    for (int64_t k = 1; k < spec.bins; ++k)
      if (avg[static_cast<size_t>(k)] > avg[static_cast<size_t>(best)]) best = k;
    CHECK(best == 43);
  }
  SECTION("frame count is 1 + floor(T/hop)") {
    StftParams p{1024, 256, 1024};
    for (int64_t Tlen : {8192, 8191, 8193, 4096, 2048}) {
      std::vector<double> x(static_cast<size_t>(Tlen), 0.1);
      auto spec = vnet::stft_spectrogram<double>(x, p);
      CHECK(spec.frames == 1 + Tlen / 256);
      CHECK(spec.num_elements() == spec.bins * spec.frames);
    }
  }
  SECTION("sign flip leaves the magnitude unchanged") {
    StftParams p{256, 64, 128};
    auto x = sine(800.0, 1024, 24000);
    auto a = vnet::stft_spectrogram<double>(x, p);
    for (auto& v : x) v = -v;
    auto b = vnet::stft_spectrogram<double>(x, p);
    for (size_t i = 0; i < a.values.size(); ++i)
      CHECK(a.values[i] == Catch::Approx(b.values[i]).margin(1e-12));
  }
  SECTION("too-short input is rejected") {
    StftParams p{256, 64, 256};
    std::vector<double> x(100, 0.0);
    CHECK_THROWS_AS(vnet::stft_spectrogram<double>(x, p), vnet::input_error);
  }
  SECTION("non-power-of-two FFT size is rejected") {
    StftParams p{300, 64, 256};
    std::vector<double> x(1000, 0.0);
    CHECK_THROWS_AS(vnet::stft_spectrogram<double>(x, p), vnet::config_error);
  }
}

TEST_CASE("stft gradient matches central differences") {
  StftParams p{32, 8, 16};
  vnet::Rng rng(23);
  auto x = T::zeros({1, 40});
  for (int64_t i = 0; i < 40; ++i) x.mutable_data()[i] = 0.4 * rng.normal();
  double err = vnet::grad_check<double>(
      [&](const T& t) { return vnet::sum(vnet::square(vnet::stft_magnitude(t, p))); }, x);
  CHECK(err <= 1e-4);
  SECTION("through the log-mel pipeline") {
    auto fb = vnet::mel_filterbank(32, 24000, 6, 0.0, 12000.0);
    double err2 = vnet::grad_check<double>(
        [&](const T& t) { return vnet::mean(vnet::log_mel(t, p, fb)); }, x);
    CHECK(err2 <= 1e-4);
  }
}

TEST_CASE("mel filterbank") {
  auto fb = vnet::mel_filterbank(1024, 24000, 100, 0.0, 12000.0);
  SECTION("shape") {
    CHECK(fb.bands == 100);
    CHECK(static_cast<int64_t>(fb.weights.size()) == 100 * 513);
  }
  SECTION("centers strictly increasing") {
    for (size_t i = 1; i < fb.centers_hz.size(); ++i)
      CHECK(fb.centers_hz[i] > fb.centers_hz[i - 1]);
  }
  SECTION("every bin strictly inside (0, 12000) Hz is covered") {
    for (int64_t k = 1; k < 513; ++k) {
      const double f = static_cast<double>(k) * 24000.0 / 1024.0;
      if (f <= 0.0 || f >= 12000.0) continue;
      double total = 0;
      for (int64_t b = 0; b < 100; ++b) total += fb.weights[static_cast<size_t>(b * 513 + k)];
      CHECK(total > 0.0);
    }
  }
  SECTION("entries nonnegative, rows nonempty, peak 1") {
    double peak = 0;
    for (int64_t b = 0; b < 100; ++b) {
      double row_max = 0;
      for (int64_t k = 0; k < 513; ++k) {
        const double w = fb.weights[static_cast<size_t>(b * 513 + k)];
        CHECK(w >= 0.0);
        row_max = std::max(row_max, w);
      }
      CHECK(row_max > 0.0);
      peak = std::max(peak, row_max);
    }
    CHECK(peak <= 1.0 + 1e-12);
  }
  SECTION("nyquist above half rate is rejected") {
    CHECK_THROWS_AS(vnet::mel_filterbank(1024, 24000, 100, 0.0, 13000.0), vnet::config_error);
  }
}

TEST_CASE("log_mel") {
  auto fb = vnet::mel_filterbank(1024, 24000, 100, 0.0, 12000.0);
  StftParams p{1024, 256, 1024};
  SECTION("zero input lands on the silence floor set by guard and clamp") {
    // the magnitude guard sqrt(1e-9) leaks through the bank before the
    // ln(1e-5) clamp can bite, so the floor per band is
    // max(rowsum * sqrt(1e-9), 1e-5)
    std::vector<double> x(4096, 0.0);
    auto s = vnet::log_mel_spectrogram<double>(x, p, fb);
    CHECK(s.bins == 100);
    for (int64_t b = 0; b < 100; ++b) {
      double rowsum = 0;
      for (int64_t k = 0; k < 513; ++k) rowsum += fb.weights[static_cast<size_t>(b * 513 + k)];
      const double expect = std::log(std::max(rowsum * std::sqrt(1e-9), 1e-5));
      for (int64_t f = 0; f < s.frames; ++f)
        CHECK(s.values[static_cast<size_t>(b * s.frames + f)] ==
              Catch::Approx(expect).margin(1e-9));
    }
  }
  SECTION("frame count and kind") {
    std::vector<double> x(8192, 0.05);
    auto s = vnet::log_mel_spectrogram<double>(x, p, fb);
    CHECK(s.frames == 33);
    CHECK(s.kind == vnet::SpecKind::log_mel);
  }
  SECTION("doubling the input shifts values by ln 2 above the clamp") {
    auto x = sine(700.0, 4096, 24000, 0.3);
    auto a = vnet::log_mel_spectrogram<double>(x, p, fb);
    for (auto& v : x) v *= 2.0;
    auto b = vnet::log_mel_spectrogram<double>(x, p, fb);
    for (size_t i = 0; i < a.values.size(); ++i) {
      // restrict to cells clear of the guard/clamp floors
      if (a.values[i] > std::log(1e-3))
        CHECK(b.values[i] - a.values[i] == Catch::Approx(std::log(2.0)).margin(2e-3));
      CHECK(b.values[i] >= a.values[i] - 1e-12);  // monotone under amplification
    }
  }
  SECTION("bank/param mismatch is rejected") {
    StftParams p2{512, 128, 512};
    std::vector<double> x(4096, 0.0);
    CHECK_THROWS_AS(vnet::log_mel_spectrogram<double>(x, p2, fb), vnet::config_error);
  }
}

TEST_CASE("clip avg_pool") {
  vnet::AudioClip c;
  c.samples = {1, 3, 5, 7};
  SECTION("pairs") {
    auto p = vnet::avg_pool(c, 2);
    REQUIRE(p.samples.size() == 2);
    CHECK(p.samples[0] == 2.0);
    CHECK(p.samples[1] == 6.0);
  }
  SECTION("identity") {
    auto p = vnet::avg_pool(c, 1);
    CHECK(p.samples == c.samples);
  }
  SECTION("tail dropped") {
    vnet::AudioClip d;
    d.samples = {1, 2, 3};
    auto p = vnet::avg_pool(d, 2);
    REQUIRE(p.samples.size() == 1);
    CHECK(p.samples[0] == 1.5);
  }
}

TEST_CASE("wav io") {
  const std::string path = "/tmp/vnet_test_io.wav";
  SECTION("full-scale square wave round-trips within one LSB") {
    vnet::AudioClip c;
    c.sample_rate = 24000;
    c.samples.resize(480);
    for (size_t i = 0; i < c.samples.size(); ++i) c.samples[i] = (i / 24) % 2 ? 1.0 : -1.0;
    vnet::write_wav(path, c);
    auto r = vnet::read_wav(path);
    REQUIRE(r.samples.size() == c.samples.size());
    CHECK(r.sample_rate == 24000);
    for (size_t i = 0; i < c.samples.size(); ++i)
      CHECK(std::abs(r.samples[i] - c.samples[i]) <= 1.0 / 32768.0 + 1e-12);
  }
  SECTION("interior samples round-trip exactly") {
    vnet::AudioClip c;
    c.sample_rate = 24000;
    vnet::Rng rng(3);
    c.samples.resize(200);
    for (auto& v : c.samples) v = std::floor(rng.uniform() * 65535.0 - 32768.0) / 32768.0;
    vnet::write_wav(path, c);
    auto r = vnet::read_wav(path);
    for (size_t i = 0; i < c.samples.size(); ++i) CHECK(r.samples[i] == c.samples[i]);
  }
  SECTION("empty data chunk reads as an empty clip") {
    vnet::AudioClip c;
    c.sample_rate = 24000;
    vnet::write_wav(path, c);
    auto r = vnet::read_wav(path);
    CHECK(r.samples.empty());
  }
  SECTION("48 kHz input is halved in length and keeps its pitch") {
    vnet::AudioClip c;
    c.sample_rate = 48000;
    c.samples = sine(1000.0, 48000, 48000);
    vnet::write_wav(path, c);
    auto r = vnet::read_wav(path);
    CHECK(r.sample_rate == 24000);
    CHECK(static_cast<int64_t>(r.samples.size()) == 24000);
    // drop edge transients before measuring
    std::vector<double> mid(r.samples.begin() + 2000, r.samples.end() - 2000);
    CHECK(zero_crossing_freq(mid, 24000) == Catch::Approx(1000.0).margin(1.0));
  }
  SECTION("malformed input names the offending chunk") {
    {
      std::ofstream f(path, std::ios::binary);
      f << "RIFF";
      vnet::detail::wr_u32(f, 100);
      f << "WAVE" << "fmt ";
      vnet::detail::wr_u32(f, 16);
      // IEEE float format tag
      vnet::detail::wr_u16(f, 3);
      vnet::detail::wr_u16(f, 1);
      vnet::detail::wr_u32(f, 24000);
      vnet::detail::wr_u32(f, 96000);
      vnet::detail::wr_u16(f, 4);
      vnet::detail::wr_u16(f, 32);
      f << "data";
      vnet::detail::wr_u32(f, 0);
    }
    try {
      vnet::read_wav(path);
      FAIL("expected input_error");
    } catch (const vnet::input_error& e) {
      CHECK(std::string(e.what()).find("fmt ") != std::string::npos);
    }
    CHECK_THROWS_AS(vnet::read_wav("/tmp/vnet_does_not_exist.wav"), vnet::input_error);
  }
  std::remove(path.c_str());
}

TEST_CASE("stereo wav averages to mono") {
  const std::string path = "/tmp/vnet_test_stereo.wav";
  {
    std::ofstream f(path, std::ios::binary);
    f << "RIFF";
    vnet::detail::wr_u32(f, 36 + 8);
    f << "WAVE" << "fmt ";
    vnet::detail::wr_u32(f, 16);
    vnet::detail::wr_u16(f, 1);
    vnet::detail::wr_u16(f, 2);  // stereo
    vnet::detail::wr_u32(f, 24000);
    vnet::detail::wr_u32(f, 96000);
    vnet::detail::wr_u16(f, 4);
    vnet::detail::wr_u16(f, 16);
    f << "data";
    vnet::detail::wr_u32(f, 8);
    // two frames: (1000, 3000), (-2000, 2000)
    vnet::detail::wr_u16(f, 1000);
    vnet::detail::wr_u16(f, 3000);
    vnet::detail::wr_u16(f, static_cast<uint16_t>(static_cast<int16_t>(-2000)));
    vnet::detail::wr_u16(f, 2000);
  }
  auto r = vnet::read_wav(path);
  REQUIRE(r.samples.size() == 2);
  CHECK(r.samples[0] == Catch::Approx(2000.0 / 32768.0));
  CHECK(r.samples[1] == Catch::Approx(0.0).margin(1e-12));
  std::remove(path.c_str());
}

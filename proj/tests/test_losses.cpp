#include <catch2/catch_amalgamated.hpp>

#include "vnet/losses.hpp"

using vnet::DiscOutput;
using vnet::LossFamily;
using vnet::Tensor;

namespace {

using T = Tensor<double>;

double r_at(LossFamily f, int which, double z) {
  vnet::NoGrad<double> ng;
  auto zt = T::scalar(z);
  auto rs = vnet::r_functions(f, zt);
  return (which == 1 ? rs.r1 : which == 2 ? rs.r2 : rs.r3).value();
}

T const_scores(std::vector<int64_t> shape, double v) {
  auto t = T::zeros(shape);
  std::fill(t.mutable_data(), t.mutable_data() + t.numel(), v);
  return t;
}

std::vector<DiscOutput<double>> fake_outs(double v, int subs = 2) {
  std::vector<DiscOutput<double>> outs;
  for (int i = 0; i < subs; ++i) {
    DiscOutput<double> o;
    o.score = const_scores({1, 1, 3, 4}, v);
    outs.push_back(o);
  }
  return outs;
}

T rand_wave(int64_t Tlen, uint64_t seed, double scale = 0.3) {
  vnet::Rng rng(seed);
  auto w = T::zeros({1, 1, Tlen});
  for (int64_t i = 0; i < Tlen; ++i) w.mutable_data()[i] = scale * rng.normal();
  return w;
}

vnet::MtdConfig mini_mtd_config() {
  auto c = vnet::MtdConfig::defaults();
  for (auto& s : c.subs) {
    s.channels = {4, 4, 1};
    s.time_dilations = {1};
  }
  c.subs[0].stft = {64, 16, 32};
  c.subs[1].stft = {128, 32, 64};
  c.subs[2].stft = {64, 16, 32};
  return c;
}

}  // namespace

TEST_CASE("r functions: closed forms and sigma oracles") {
  vnet::NoGrad<double> ng;
  SECTION("lsgan reproduces the quadratic family exactly") {
    for (double z : {0.0, 0.5, 1.0, 2.0}) {
      CHECK(r_at(LossFamily::lsgan, 1, z) == -(1 - z) * (1 - z));
      CHECK(r_at(LossFamily::lsgan, 2, z) == -z * z);
      CHECK(r_at(LossFamily::lsgan, 3, z) == (1 - z) * (1 - z));
    }
    CHECK(r_at(LossFamily::lsgan, 1, 1.0) == 0.0);
    CHECK(r_at(LossFamily::lsgan, 2, 0.0) == 0.0);
    CHECK(r_at(LossFamily::lsgan, 3, 1.0) == 0.0);
  }
  SECTION("sigma as printed: unity at 20/3, e^2 at 0") {
    CHECK(std::abs(vnet::sigma_printed(20.0 / 3.0) - 1.0) <= 1e-9);
    CHECK(std::abs(vnet::sigma_printed(0.0) - std::exp(2.0)) <= 1e-9);
  }
  SECTION("asymptotic R values are the squared sigmas") {
    for (double z : {-3.0, 0.0, 0.7, 5.0}) {
      const double sp1 = vnet::sigma_printed(1 - z), sp = vnet::sigma_printed(z);
      CHECK(r_at(LossFamily::asymptotic_printed, 1, z) == Catch::Approx(-sp1 * sp1).margin(1e-9));
      CHECK(r_at(LossFamily::asymptotic_printed, 2, z) == Catch::Approx(-sp * sp).margin(1e-9));
      CHECK(r_at(LossFamily::asymptotic_printed, 3, z) == Catch::Approx(sp1 * sp1).margin(1e-9));
      const double sm1 = vnet::sigma_monotone(1 - z), sm = vnet::sigma_monotone(z);
      CHECK(r_at(LossFamily::asymptotic_monotone, 1, z) == Catch::Approx(-sm1 * sm1).margin(1e-9));
      CHECK(r_at(LossFamily::asymptotic_monotone, 2, z) == Catch::Approx(-sm * sm).margin(1e-9));
      CHECK(r_at(LossFamily::asymptotic_monotone, 3, z) == Catch::Approx(sm1 * sm1).margin(1e-9));
    }
  }
}

TEST_CASE("r3 monotonicity: corrected family decreases, printed family rises") {
  vnet::NoGrad<double> ng;
  const double h = 1e-4;
  for (int i = 0; i < 64; ++i) {
    const double z = -10.0 + 20.0 * i / 63.0;
    const double slope_m = (r_at(LossFamily::asymptotic_monotone, 3, z + h) -
                            r_at(LossFamily::asymptotic_monotone, 3, z - h)) /
                           (2 * h);
    CHECK(slope_m < 0.0);
    const double slope_p = (r_at(LossFamily::asymptotic_printed, 3, z + h) -
                            r_at(LossFamily::asymptotic_printed, 3, z - h)) /
                           (2 * h);
    CHECK(slope_p > 0.0);
  }
}

TEST_CASE("asymptotic families stay bounded on bounded grids") {
  vnet::NoGrad<double> ng;
  for (auto f : {LossFamily::asymptotic_printed, LossFamily::asymptotic_monotone}) {
    // arguments reaching sigma from z in [-10,10] lie in [-10,11]
    double cap = 0;
    for (double a : {-10.0, 11.0}) {
      const double s = f == LossFamily::asymptotic_printed ? vnet::sigma_printed(a)
                                                           : vnet::sigma_monotone(a);
      cap = std::max(cap, s * s);
    }
    for (int i = 0; i <= 40; ++i) {
      const double z = -10.0 + 0.5 * i;
      for (int which : {1, 2, 3}) CHECK(std::abs(r_at(f, which, z)) <= cap * (1 + 1e-12));
    }
    for (double z : {-100.0, 100.0})
      for (int which : {1, 2, 3}) CHECK(std::isfinite(r_at(f, which, z)));
  }
}

TEST_CASE("feature matching term oracles") {
  SECTION("single-cell spectrograms 2 vs 1 give 0.5") {
    vnet::NoGrad<double> ng;
    auto v = vnet::fm_spectrogram_term(T::from({1, 1}, {2.0}), T::from({1, 1}, {1.0}));
    CHECK(std::abs(v.value() - 0.5) <= 1e-9);
  }
  SECTION("zero estimate saturates at 1") {
    vnet::NoGrad<double> ng;
    auto v = vnet::fm_spectrogram_term(T::from({1, 2}, {3.0, 4.0}), T::from({1, 2}, {0.0, 0.0}));
    CHECK(std::abs(v.value() - 1.0) <= 1e-9);
  }
  SECTION("silent reference contributes zero") {
    vnet::NoGrad<double> ng;
    auto v = vnet::fm_spectrogram_term(T::from({1, 2}, {0.0, 0.0}), T::from({1, 2}, {1.0, 2.0}));
    CHECK(v.value() == 0.0);
  }
  SECTION("identical waveforms give (near-)zero through the full pipeline") {
    vnet::NoGrad<double> ng;
    auto x = rand_wave(512, 3);
    auto v = vnet::feature_matching_loss(x, x, mini_mtd_config());
    CHECK(std::abs(v.value()) <= 1e-9);
    CHECK(v.value() >= 0.0);
  }
  SECTION("length mismatch rejected") {
    auto x = rand_wave(512, 4);
    auto y = rand_wave(511, 5);
    CHECK_THROWS_AS(vnet::feature_matching_loss(x, y, mini_mtd_config()), vnet::input_error);
  }
}

TEST_CASE("log-spectral term oracles") {
  vnet::NoGrad<double> ng;
  SECTION("uniform ratio 2 above the floor gives ln 2") {
    auto s = T::from({1, 3}, {0.2, 0.06, 1.4});
    auto sh = T::from({1, 3}, {0.4, 0.12, 2.8});
    CHECK(std::abs(vnet::log_l1_term(s, sh).value() - std::log(2.0)) <= 1e-9);
  }
  SECTION("identical and silent inputs are exact zeros") {
    auto x = rand_wave(512, 6);
    CHECK(vnet::mel_spectrogram_loss(x, x, mini_mtd_config()).value() == 0.0);
    auto z = T::zeros({1, 1, 512});
    CHECK(vnet::mel_spectrogram_loss(z, z, mini_mtd_config()).value() == 0.0);
  }
  SECTION("positive whenever spectrograms differ above the floor") {
    auto x = rand_wave(512, 7);
    auto y = rand_wave(512, 8);
    CHECK(vnet::mel_spectrogram_loss(x, y, mini_mtd_config()).value() > 0.0);
    CHECK(vnet::feature_matching_loss(x, y, mini_mtd_config()).value() > 0.0);
  }
}

TEST_CASE("lsgan adversarial optima") {
  vnet::NoGrad<double> ng;
  SECTION("discriminator optimum is 0 at z_real=1, z_fake=0") {
    auto real = fake_outs(1.0);
    auto fake = fake_outs(0.0);
    CHECK(vnet::adv_loss_discriminator(LossFamily::lsgan, real, fake).value() == 0.0);
  }
  SECTION("generator: 0 at z=1, 1 at z=0") {
    CHECK(vnet::adv_loss_generator(LossFamily::lsgan, fake_outs(1.0)).value() == 0.0);
    CHECK(vnet::adv_loss_generator(LossFamily::lsgan, fake_outs(0.0)).value() == 1.0);
  }
  SECTION("generator loss under the monotone family decreases in z") {
    double prev = std::numeric_limits<double>::infinity();
    for (int z = -10; z <= 10; ++z) {
      const double v =
          vnet::adv_loss_generator(LossFamily::asymptotic_monotone, fake_outs(z)).value();
      CHECK(v < prev);
      prev = v;
    }
  }
  SECTION("asymptotic family without split metadata is rejected") {
    auto outs = fake_outs(0.5);
    CHECK_THROWS_AS(
        vnet::adv_loss_discriminator(LossFamily::asymptotic_monotone, outs, outs),
        vnet::usage_error);
  }
}

TEST_CASE("stop-gradient audit on the asymptotic discriminator loss") {
  vnet::ParamStore<double> store;
  vnet::Rng rng(11);
  vnet::Mtd<double> mtd(store, mini_mtd_config(), rng);
  vnet::MpdConfig mpd_cfg;
  mpd_cfg.periods = {2, 3};
  mpd_cfg.channels = {4, 8, 1};
  vnet::Mpd<double> mpd(store, mpd_cfg, rng);
  auto x = rand_wave(1024, 21);
  auto xh = rand_wave(1024, 22);

  auto forward_all = [&](const T& w) {
    auto outs = mtd.forward(w);
    auto po = mpd.forward(w);
    outs.insert(outs.end(), po.begin(), po.end());
    return outs;
  };
  auto grad_abs_sum = [&](vnet::ParamGroup g) {
    double s = 0;
    for (const auto& p : store.group(g))
      if (p.tensor.grad())
        for (double v : *p.tensor.grad()) s += std::abs(v);
    return s;
  };
  auto grads_all_null_or_zero = [&](vnet::ParamGroup g) {
    for (const auto& p : store.group(g))
      if (p.tensor.grad())
        for (double v : *p.tensor.grad())
          if (v != 0.0) return false;
    return true;
  };
  const auto f = LossFamily::asymptotic_monotone;

  SECTION("terms 1-2 never touch omega") {
    vnet::clear_tape<double>();
    store.zero_grad();
    auto real = forward_all(x);
    auto fake = forward_all(xh);
    std::vector<T> parts;
    for (size_t m = 0; m < real.size(); ++m) {
      parts.push_back(vnet::mean(vnet::r1(f, real[m].rescore(false, true))));
      parts.push_back(vnet::mean(vnet::r2(f, fake[m].rescore(false, true))));
    }
    auto body = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) body = vnet::add(body, parts[i]);
    vnet::backward(body);
    CHECK(grads_all_null_or_zero(vnet::ParamGroup::omega));
    CHECK(grad_abs_sum(vnet::ParamGroup::phi) > 0.0);
  }
  SECTION("terms 3-4 never touch phi") {
    vnet::clear_tape<double>();
    store.zero_grad();
    auto real = forward_all(x);
    auto fake = forward_all(xh);
    std::vector<T> parts;
    for (size_t m = 0; m < real.size(); ++m)
      parts.push_back(vnet::sub(vnet::mean(vnet::r3(f, real[m].rescore(true, false))),
                                vnet::mean(vnet::r3(f, fake[m].rescore(true, false)))));
    auto proj = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) proj = vnet::add(proj, parts[i]);
    vnet::backward(proj);
    CHECK(grads_all_null_or_zero(vnet::ParamGroup::phi));
    CHECK(grad_abs_sum(vnet::ParamGroup::omega) > 0.0);
  }
  SECTION("full loss reaches both groups") {
    vnet::clear_tape<double>();
    store.zero_grad();
    auto real = forward_all(x);
    auto fake = forward_all(xh);
    auto loss = vnet::adv_loss_discriminator(f, real, fake);
    vnet::backward(loss);
    CHECK(grad_abs_sum(vnet::ParamGroup::phi) > 0.0);
    CHECK(grad_abs_sum(vnet::ParamGroup::omega) > 0.0);
  }
  SECTION("projection terms cancel exactly when real equals fake") {
    vnet::NoGrad<double> ng;
    auto real = forward_all(x);
    const double full = vnet::adv_loss_discriminator(f, real, real).value();
    std::vector<double> body_terms;
    for (const auto& o : real)
      body_terms.push_back(vnet::mean(vnet::r1(f, o.score)).value() +
                           vnet::mean(vnet::r2(f, o.score)).value());
    double expect = 0;
    for (double v : body_terms) expect += v;
    expect = -expect / static_cast<double>(body_terms.size());
    CHECK(full == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("total losses compose per the report invariant") {
  vnet::ParamStore<double> store;
  vnet::Rng rng(14);
  vnet::Mtd<double> mtd(store, mini_mtd_config(), rng);
  vnet::MpdConfig mpd_cfg;
  mpd_cfg.periods = {2, 3};
  mpd_cfg.channels = {4, 8, 1};
  vnet::Mpd<double> mpd(store, mpd_cfg, rng);
  auto x = rand_wave(1024, 31);
  auto xh = rand_wave(1024, 32);

  SECTION("all six fields finite on a random pair; invariant holds") {
    vnet::LossWeights w;
    auto r = vnet::total_losses(x, xh, mtd, mpd, LossFamily::asymptotic_monotone, w);
    for (double v : {r.fm, r.mel, r.adv_g, r.adv_d, r.total_g, r.total_d})
      CHECK(std::isfinite(v));
    CHECK(r.total_g ==
          Catch::Approx(w.adv * r.adv_g + w.fm * r.fm + w.mel * r.mel).margin(1e-12));
  }
  SECTION("zero adversarial weight reduces total_G to the reconstruction pair") {
    vnet::LossWeights w;
    w.adv = 0.0;
    auto r = vnet::total_losses(x, xh, mtd, mpd, LossFamily::lsgan, w);
    CHECK(r.total_g == Catch::Approx(w.fm * r.fm + w.mel * r.mel).margin(1e-12));
    auto rid = vnet::total_losses(x, x, mtd, mpd, LossFamily::lsgan, w);
    CHECK(std::abs(rid.total_g) <= 1e-6);
  }
  SECTION("negative weights rejected") {
    vnet::LossWeights w;
    w.mel = -1.0;
    CHECK_THROWS_AS(vnet::total_losses(x, xh, mtd, mpd, LossFamily::lsgan, w),
                    vnet::config_error);
  }
}

TEST_CASE("feature-space matching variant") {
  vnet::ParamStore<double> store;
  vnet::Rng rng(15);
  vnet::Mtd<double> mtd(store, mini_mtd_config(), rng);
  auto x = rand_wave(512, 41);
  auto y = rand_wave(512, 42);
  vnet::NoGrad<double> ng;
  mtd.set_frozen(true);
  auto a = mtd.forward(x);
  auto b = mtd.forward(y);
  CHECK(vnet::feature_matching_features(a, b).value() > 0.0);
  auto a2 = mtd.forward(x);
  CHECK(std::abs(vnet::feature_matching_features(a, a2).value()) <= 1e-9);
  mtd.set_frozen(false);
}

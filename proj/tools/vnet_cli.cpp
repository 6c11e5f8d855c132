#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "vnet/gradcheck.hpp"
#include "vnet/metrics.hpp"
#include "vnet/trainer.hpp"
#include "vnet/wav.hpp"

namespace {

// config/input/usage problems -> 2; faults, integrity damage, failed
// checks -> 1 (see common.hpp).
template <class Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const vnet::fault_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const vnet::integrity_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, resume;
};

template <typename Real>
int run_train(const vnet::TrainConfig& cfg, const TrainArgs& a) {
  vnet::Trainer<Real> t(cfg);
  if (!a.resume.empty()) t.load_checkpoint(a.resume);
  t.load_dataset();
  t.run(&std::cout);
  return 0;
}

int cmd_train(const TrainArgs& a) {
  const auto cfg = vnet::TrainConfig::from_file(a.config);
  return cfg.dtype == "f64" ? run_train<double>(cfg, a) : run_train<float>(cfg, a);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string ckpt, in, out;
};

int64_t rd_i64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return static_cast<int64_t>(v);
}

// Mel conditioning from a wav: same analysis chain as training, and the final
// centered frame is dropped so F = T/256 exactly.
template <typename Real>
vnet::Tensor<Real> mel_from_wav(const std::string& path, int64_t bands) {
  const auto clip = vnet::read_wav(path);
  const int64_t T = static_cast<int64_t>(clip.samples.size());
  auto x = vnet::Tensor<Real>::zeros({1, 1, T});
  Real* xd = x.mutable_data();
  for (int64_t i = 0; i < T; ++i) xd[i] = static_cast<Real>(clip.samples[static_cast<size_t>(i)]);
  const auto fb = vnet::mel_filterbank(1024, 24000, bands, 0.0, 12000.0);
  auto mel_full = vnet::log_mel(x, vnet::StftParams{1024, 256, 1024}, fb);
  const int64_t F = T / 256;
  if (F < 1)
    throw vnet::input_error("synth: input has " + std::to_string(T) +
                            " samples, need at least one 256-sample hop");
  auto mel = vnet::Tensor<Real>::zeros({1, bands, F});
  const int64_t Ff = mel_full.dim(2);
  for (int64_t m = 0; m < bands; ++m)
    for (int64_t f = 0; f < F; ++f)
      mel.mutable_data()[m * F + f] = mel_full.data()[m * Ff + f];
  return mel;
}

// VNETMEL1 container: 8-byte magic, int64 LE bands, int64 LE frames, then
// bands*frames float64 LE values in band-major order.
template <typename Real>
vnet::Tensor<Real> mel_from_file(const std::string& path, int64_t expected_bands) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw vnet::input_error("synth: cannot open " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 24 || std::memcmp(raw.data(), "VNETMEL1", 8) != 0)
    throw vnet::input_error("synth: " + path + " is not a VNETMEL1 file");
  const int64_t bands = rd_i64(raw.data() + 8);
  const int64_t frames = rd_i64(raw.data() + 16);
  if (bands <= 0 || frames <= 0)
    throw vnet::input_error("synth: mel file declares shape [" + std::to_string(bands) + ", " +
                            std::to_string(frames) + "]");
  const size_t need = 24 + static_cast<size_t>(bands) * static_cast<size_t>(frames) * 8;
  if (raw.size() != need)
    throw vnet::input_error("synth: mel file is " + std::to_string(raw.size()) + " bytes, shape [" +
                            std::to_string(bands) + ", " + std::to_string(frames) + "] needs " +
                            std::to_string(need));
  if (bands != expected_bands)
    throw vnet::config_error("synth: mel file has " + std::to_string(bands) +
                             " bands, checkpoint generator expects " +
                             std::to_string(expected_bands));
  auto mel = vnet::Tensor<Real>::zeros({1, bands, frames});
  Real* md = mel.mutable_data();
  const char* p = reinterpret_cast<const char*>(raw.data()) + 24;
  for (int64_t i = 0; i < bands * frames; ++i) {
    double v;
    vnet::detail::read_le(p + i * 8, v);
    md[i] = static_cast<Real>(v);
  }
  return mel;
}

template <typename Real>
int run_synth(const vnet::TrainConfig& cfg, const SynthArgs& a) {
  vnet::Trainer<Real> t(cfg);
  t.load_checkpoint(a.ckpt);
  vnet::NoGrad<Real> ng;
  const int64_t bands = t.generator().config().mel_bands;

  std::ifstream probe(a.in, std::ios::binary);
  if (!probe) throw vnet::input_error("synth: cannot open " + a.in);
  char head[8] = {};
  probe.read(head, 8);
  probe.close();
  vnet::Tensor<Real> mel;
  if (std::memcmp(head, "RIFF", 4) == 0)
    mel = mel_from_wav<Real>(a.in, bands);
  else if (std::memcmp(head, "VNETMEL1", 8) == 0)
    mel = mel_from_file<Real>(a.in, bands);
  else
    throw vnet::input_error("synth: " + a.in + " is neither a RIFF wav nor a VNETMEL1 mel file");

  auto y = t.generator().forward(mel);
  vnet::AudioClip out;
  out.sample_rate = 24000;
  out.samples.resize(static_cast<size_t>(y.numel()));
  for (int64_t i = 0; i < y.numel(); ++i)
    out.samples[static_cast<size_t>(i)] = static_cast<double>(y.data()[i]);
  vnet::write_wav(a.out, out);
  return 0;
}

int cmd_synth(const SynthArgs& a) {
  const auto cfg = vnet::checkpoint_config(a.ckpt);
  return cfg.dtype == "f64" ? run_synth<double>(cfg, a) : run_synth<float>(cfg, a);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string real, gen, out;
};

int cmd_eval(const EvalArgs& a) {
  const auto rep = vnet::corpus_eval(a.real, a.gen);
  if (rep.files.empty() && rep.unpaired.empty())
    throw vnet::input_error("eval: no wav files under " + a.real + " or " + a.gen);
  const auto tsv = vnet::report_tsv(rep);
  std::cout << tsv;
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::binary);
    if (!f) throw vnet::input_error("eval: cannot write " + a.out);
    f << tsv;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GcArgs {
  std::string module = "all";
  bool inject_fault = false;
};

int cmd_gradcheck(const GcArgs& a) {
  constexpr double kThreshold = 1e-4;
  std::vector<std::string> mods;
  if (a.module == "all")
    mods = vnet::gradcheck_modules();
  else
    mods.push_back(a.module);

  double worst = 0;
  std::string worst_name;
  auto report = [&](const std::string& mod, const std::vector<vnet::GradCheckEntry>& entries) {
    double mod_max = 0;
    for (const auto& e : entries) {
      std::printf("%-10s %-58s %11.4e\n", mod.c_str(), e.name.c_str(), e.err);
      mod_max = std::max(mod_max, e.err);
      if (e.err > worst) {
        worst = e.err;
        worst_name = mod + "/" + e.name;
      }
    }
    std::printf("%s: %zu checks, max relative error %.4e\n", mod.c_str(), entries.size(), mod_max);
  };
  for (const auto& m : mods) report(m, vnet::run_gradcheck_module(m));

  if (a.inject_fault) {
    // Deliberately mis-stated derivative: forward doubles, backward claims 3.
    auto z = vnet::Tensor<double>::zeros({5});
    for (int64_t i = 0; i < 5; ++i) z.mutable_data()[i] = 0.3 * static_cast<double>(i) - 0.7;
    const double err = vnet::grad_check<double>(
        [](const vnet::Tensor<double>& x) {
          return vnet::mean(vnet::detail::unary_pointwise(
              x, [](double v) { return 2.0 * v; }, [](double, double) { return 3.0; }));
        },
        z);
    report("fault", {{"corrupted_backward", err}});
  }

  if (worst > kThreshold) {
    std::printf("gradcheck: FAIL, %s at %.4e exceeds %.0e\n", worst_name.c_str(), worst,
                kThreshold);
    return 1;
  }
  std::printf("gradcheck: OK, max relative error %.4e\n", worst);
  return 0;
}

// ---------------------------------------------------------------------------
// spec-dump
// ---------------------------------------------------------------------------

struct SpecArgs {
  std::string in, out;
};

int cmd_specdump(const SpecArgs& a) {
  const auto clip = vnet::read_wav(a.in);
  const int64_t T = static_cast<int64_t>(clip.samples.size());
  const int64_t H = 100, W = 1 + T / 256;
  bool silent = true;
  for (double s : clip.samples)
    if (s != 0.0) {
      silent = false;
      break;
    }

  std::vector<unsigned char> px(static_cast<size_t>(W * H), 0);
  if (!silent) {
    auto x = vnet::Tensor<double>::zeros({1, 1, T});
    for (int64_t i = 0; i < T; ++i) x.mutable_data()[i] = clip.samples[static_cast<size_t>(i)];
    const auto fb = vnet::mel_filterbank(1024, 24000, H, 0.0, 12000.0);
    const auto mel = vnet::log_mel(x, vnet::StftParams{1024, 256, 1024}, fb);
    const double vmin = std::log(vnet::kLogFloor);
    double vmax = vmin;
    for (int64_t i = 0; i < mel.numel(); ++i) vmax = std::max(vmax, mel.data()[i]);
    if (vmax > vmin) {
      const double scale = 255.0 / (vmax - vmin);
      for (int64_t r = 0; r < H; ++r) {
        const int64_t band = H - 1 - r;  // frequency axis bottom-up
        for (int64_t f = 0; f < W; ++f) {
          const double v = (mel.data()[band * W + f] - vmin) * scale;
          px[static_cast<size_t>(r * W + f)] =
              static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
      }
    }
  }

  std::ofstream f(a.out, std::ios::binary);
  if (!f) throw vnet::input_error("spec-dump: cannot write " + a.out);
  f << "P5\n" << W << ' ' << H << "\n255\n";
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!f) throw vnet::input_error("spec-dump: write failed for " + a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mel-spectrogram GAN vocoder toolkit"};
  app.require_subcommand(1);

  TrainArgs targs;
  auto* tr = app.add_subcommand("train", "run training from a config file");
  tr->add_option("--config", targs.config, "training config file")->required();
  tr->add_option("--resume", targs.resume, "checkpoint directory to resume from");

  SynthArgs sargs;
  auto* sy = app.add_subcommand("synth", "synthesize a waveform from a wav or VNETMEL1 mel file");
  sy->add_option("--ckpt", sargs.ckpt, "checkpoint directory")->required();
  sy->add_option("--in", sargs.in, "input wav or mel file")->required();
  sy->add_option("--out", sargs.out, "output wav path")->required();

  EvalArgs eargs;
  auto* ev = app.add_subcommand("eval", "objective metrics over paired corpora");
  ev->add_option("--real", eargs.real, "reference corpus directory")->required();
  ev->add_option("--gen", eargs.gen, "generated corpus directory")->required();
  ev->add_option("--out", eargs.out, "also write the TSV report to this path");

  GcArgs gargs;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification (64-bit)");
  gc->add_option("--module", gargs.module, "which suite to run")
      ->check(CLI::IsMember({"all", "generator", "mtd", "mpd", "losses"}));
  gc->add_flag("--inject-fault", gargs.inject_fault)->group("");  // test fixture

  SpecArgs pargs;
  auto* sd = app.add_subcommand("spec-dump", "render a log-mel spectrogram as a PGM image");
  sd->add_option("--in", pargs.in, "input wav")->required();
  sd->add_option("--out", pargs.out, "output PGM path")->required();

  CLI11_PARSE(app, argc, argv);

  if (tr->parsed()) return guarded([&] { return cmd_train(targs); });
  if (sy->parsed()) return guarded([&] { return cmd_synth(sargs); });
  if (ev->parsed()) return guarded([&] { return cmd_eval(eargs); });
  if (gc->parsed()) return guarded([&] { return cmd_gradcheck(gargs); });
  if (sd->parsed()) return guarded([&] { return cmd_specdump(pargs); });
  return 2;
}

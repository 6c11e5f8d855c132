#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sys/wait.h>
#include <unistd.h>

#include "vnet/trainer.hpp"
#include "vnet/wav.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("vnet_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

struct CliResult {
  int code;
  std::string out;
};

CliResult run_cli(const std::string& args, const TempDir& td) {
  static int n = 0;
  const auto cap = td.path / ("cli_capture_" + std::to_string(n++) + ".txt");
  const std::string cmd =
      std::string(VNET_CLI_PATH) + " " + args + " > " + cap.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  const int code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream f(cap);
  std::string out{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return {code, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

std::vector<double> tone_clip(int64_t n = 24000, double freq = 220.0) {
  std::vector<double> x(static_cast<size_t>(n));
  const double pi = std::numbers::pi;
  for (int64_t i = 0; i < n; ++i)
    x[static_cast<size_t>(i)] = 0.5 * std::sin(2 * pi * freq * static_cast<double>(i) / 24000.0);
  return x;
}

void put_wav(const fs::path& p, const std::vector<double>& samples) {
  fs::create_directories(p.parent_path());
  vnet::write_wav(p.string(), {samples, 24000});
}

// Matches tests' in-process mini config so checkpoints interoperate.
std::string write_cfg(const TempDir& td, const std::string& name, int64_t steps,
                      const std::string& extra = "") {
  const auto p = td.path / name;
  std::ofstream f(p);
  f << "data_dir = " << (td.path / "data").string() << "\n"
    << "out_dir = " << (td.path / "run").string() << "\n"
    << "steps = " << steps << "\n"
    << "seed = 11\nbatch_size = 2\nsegment_length = 2560\ndtype = f64\n"
       "gen_channels = 16\ngen_kp_channels = 8\n"
       "mtd_channels = 4,4,1\nmtd_dilations = 1\n"
       "mpd_channels = 4,8,1\nmpd_periods = 2,3\n"
       "checkpoint_interval = 5\n"
    << extra;
  return p.string();
}

void write_i64_le(std::ofstream& f, int64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(static_cast<uint64_t>(v) >> (8 * i));
  f.write(reinterpret_cast<const char*>(b), 8);
}

void write_vnetmel(const fs::path& p, int64_t bands, int64_t frames,
                   const std::vector<double>& vals) {
  REQUIRE(static_cast<int64_t>(vals.size()) == bands * frames);
  std::ofstream f(p, std::ios::binary);
  f.write("VNETMEL1", 8);
  write_i64_le(f, bands);
  write_i64_le(f, frames);
  for (double v : vals) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    f.write(reinterpret_cast<const char*>(b), 8);
  }
}

}  // namespace

TEST_CASE("cli train logs, checkpoints, and rejects bad inputs") {
  TempDir td;
  put_wav(td.path / "data" / "tone.wav", tone_clip());
  const auto cfg = write_cfg(td, "train.cfg", 10);

  auto r = run_cli("train --config " + cfg, td);
  REQUIRE(r.code == 0);
  const auto rows = lines_of(r.out);
  REQUIRE(rows.size() == 10);
  CHECK(rows.front().rfind("1\t", 0) == 0);
  CHECK(rows.back().rfind("10\t", 0) == 0);
  CHECK(lines_of(slurp(td.path / "run" / "train_log.tsv")).size() == 10);
  CHECK(fs::exists(td.path / "run" / "ckpt_000005"));
  CHECK(fs::exists(td.path / "run" / "ckpt_000010"));
  CHECK(slurp(td.path / "run" / "latest") == "ckpt_000010\n");

  SECTION("unknown config key names the key and exits 2") {
    const auto bad = write_cfg(td, "bad.cfg", 3, "bananas = 7\n");
    auto rb = run_cli("train --config " + bad, td);
    CHECK(rb.code == 2);
    CHECK(rb.out.find("bananas") != std::string::npos);
  }
  SECTION("missing dataset dir names the path and exits 2") {
    const auto bad = write_cfg(td, "nodata.cfg", 3,
                               "data_dir = " + (td.path / "no_such_dir").string() + "\n");
    auto rb = run_cli("train --config " + bad, td);
    CHECK(rb.code == 2);
    CHECK(rb.out.find((td.path / "no_such_dir").string()) != std::string::npos);
  }
  SECTION("missing config file exits 2") {
    auto rb = run_cli("train --config " + (td.path / "absent.cfg").string(), td);
    CHECK(rb.code == 2);
  }
}

TEST_CASE("cli resume continues the log from the stored step") {
  TempDir td;
  put_wav(td.path / "data" / "tone.wav", tone_clip());
  const auto cfg4 = write_cfg(td, "first.cfg", 4, "checkpoint_interval = 2\n");
  REQUIRE(run_cli("train --config " + cfg4, td).code == 0);

  const auto cfg7 = write_cfg(td, "second.cfg", 7, "checkpoint_interval = 2\n");
  auto r = run_cli("train --config " + cfg7 + " --resume " + (td.path / "run" / "ckpt_000004").string(),
                   td);
  REQUIRE(r.code == 0);
  const auto rows = lines_of(r.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows.front().rfind("5\t", 0) == 0);
  CHECK(rows.back().rfind("7\t", 0) == 0);
  const auto all = lines_of(slurp(td.path / "run" / "train_log.tsv"));
  REQUIRE(all.size() == 7);
  CHECK(all.front().rfind("1\t", 0) == 0);
  CHECK(all.back().rfind("7\t", 0) == 0);
}

TEST_CASE("cli synth length contract, determinism, and input validation") {
  TempDir td;
  put_wav(td.path / "data" / "tone.wav", tone_clip());
  const auto cfg = write_cfg(td, "train.cfg", 2, "checkpoint_interval = 2\n");
  REQUIRE(run_cli("train --config " + cfg, td).code == 0);
  const auto ckpt = (td.path / "run" / "ckpt_000002").string();

  put_wav(td.path / "one_sec.wav", tone_clip(24000));
  auto r = run_cli("synth --ckpt " + ckpt + " --in " + (td.path / "one_sec.wav").string() +
                       " --out " + (td.path / "a.wav").string(),
                   td);
  REQUIRE(r.code == 0);
  const auto a = vnet::read_wav((td.path / "a.wav").string());
  // 93 whole hops out of a 1 s clip: within one hop of the input duration
  CHECK(a.samples.size() == 93 * 256);

  SECTION("same checkpoint and input give identical bytes") {
    auto r2 = run_cli("synth --ckpt " + ckpt + " --in " + (td.path / "one_sec.wav").string() +
                          " --out " + (td.path / "b.wav").string(),
                      td);
    REQUIRE(r2.code == 0);
    CHECK(slurp(td.path / "a.wav") == slurp(td.path / "b.wav"));
  }
  SECTION("mel band mismatch exits 2") {
    write_vnetmel(td.path / "bad.mel", 7, 8, std::vector<double>(7 * 8, -11.5));
    auto rb = run_cli("synth --ckpt " + ckpt + " --in " + (td.path / "bad.mel").string() +
                          " --out " + (td.path / "c.wav").string(),
                      td);
    CHECK(rb.code == 2);
    CHECK(rb.out.find("bands") != std::string::npos);
  }
  SECTION("unrecognized input format exits 2") {
    auto rb = run_cli("synth --ckpt " + ckpt + " --in " + cfg + " --out " +
                          (td.path / "c.wav").string(),
                      td);
    CHECK(rb.code == 2);
    CHECK(rb.out.find("neither") != std::string::npos);
  }
  SECTION("zero mel through a zeroed final layer is silent") {
    auto tc = vnet::TrainConfig::from_file(cfg);
    vnet::Trainer<double> t(tc);
    t.load_checkpoint(ckpt);
    for (const auto& p : t.store().params())
      if (p.name.rfind("gen.post", 0) == 0) {
        auto w = p.tensor;
        std::fill(w.mutable_data(), w.mutable_data() + w.numel(), 0.0);
      }
    const auto zeroed = (td.path / "zeroed_ckpt").string();
    t.save_checkpoint(zeroed);

    write_vnetmel(td.path / "zero.mel", 100, 8, std::vector<double>(100 * 8, 0.0));
    auto rz = run_cli("synth --ckpt " + zeroed + " --in " + (td.path / "zero.mel").string() +
                          " --out " + (td.path / "z.wav").string(),
                      td);
    REQUIRE(rz.code == 0);
    const auto z = vnet::read_wav((td.path / "z.wav").string());
    REQUIRE(z.samples.size() == 8 * 256);
    double peak = 0;
    for (double s : z.samples) peak = std::max(peak, std::abs(s));
    CHECK(peak <= 1e-3);
  }
}

TEST_CASE("cli eval reports ideals, unpaired files, and exit codes") {
  TempDir td;
  const auto tone = tone_clip();
  put_wav(td.path / "a" / "x.wav", tone);
  put_wav(td.path / "b" / "x.wav", tone);
  put_wav(td.path / "a" / "sub" / "y.wav", tone_clip(12000, 330.0));

  auto r = run_cli("eval --real " + (td.path / "a").string() + " --gen " +
                       (td.path / "b").string() + " --out " + (td.path / "rep.tsv").string(),
                   td);
  REQUIRE(r.code == 0);
  const auto rows = lines_of(r.out);
  // header + 1 paired file + 1 subset + macro + 1 unpaired
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].rfind("kind\t", 0) == 0);
  CHECK(r.out.find("file\tx.wav\t.\t0\t0\t0\t1\t") != std::string::npos);
  CHECK(r.out.find("macro\tall") != std::string::npos);
  CHECK(r.out.find("unpaired") != std::string::npos);
  CHECK(r.out.find("sub/y.wav") != std::string::npos);
  CHECK(slurp(td.path / "rep.tsv") == r.out);

  SECTION("directories without wavs exit 2") {
    fs::create_directories(td.path / "e1");
    fs::create_directories(td.path / "e2");
    auto rb = run_cli("eval --real " + (td.path / "e1").string() + " --gen " +
                          (td.path / "e2").string(),
                      td);
    CHECK(rb.code == 2);
    CHECK(rb.out.find("no wav files") != std::string::npos);
  }
}

TEST_CASE("cli gradcheck selects modules and fails on an injected fault") {
  TempDir td;
  auto r = run_cli("gradcheck --module mpd", td);
  REQUIRE(r.code == 0);
  for (const auto& line : lines_of(r.out))
    CHECK((line.rfind("mpd", 0) == 0 || line.rfind("gradcheck:", 0) == 0));
  CHECK(r.out.find("gradcheck: OK") != std::string::npos);

  SECTION("losses module runs only loss checks") {
    auto rl = run_cli("gradcheck --module losses", td);
    REQUIRE(rl.code == 0);
    for (const auto& line : lines_of(rl.out))
      CHECK((line.rfind("losses", 0) == 0 || line.rfind("gradcheck:", 0) == 0));
    CHECK(rl.out.find("r3[asymptotic_monotone]") != std::string::npos);
    CHECK(rl.out.find("generator ") == std::string::npos);
  }
  SECTION("corrupted backward is caught") {
    auto rf = run_cli("gradcheck --module mpd --inject-fault", td);
    CHECK(rf.code == 1);
    CHECK(rf.out.find("corrupted_backward") != std::string::npos);
    CHECK(rf.out.find("gradcheck: FAIL") != std::string::npos);
  }
  SECTION("unknown module is a usage error") {
    auto rb = run_cli("gradcheck --module bogus", td);
    CHECK(rb.code != 0);
  }
}

TEST_CASE("cli spec-dump geometry, silence, and tone placement") {
  TempDir td;
  put_wav(td.path / "tone.wav", tone_clip(24000, 1000.0));
  auto r = run_cli("spec-dump --in " + (td.path / "tone.wav").string() + " --out " +
                       (td.path / "tone.pgm").string(),
                   td);
  REQUIRE(r.code == 0);
  const auto pgm = slurp(td.path / "tone.pgm");
  const std::string header = "P5\n94 100\n255\n";
  REQUIRE(pgm.rfind(header, 0) == 0);
  REQUIRE(pgm.size() == header.size() + 94 * 100);

  // brightest row of a middle column must match the strongest mel band
  auto x = vnet::Tensor<double>::zeros({1, 1, 24000});
  const auto tone = tone_clip(24000, 1000.0);
  for (int64_t i = 0; i < 24000; ++i) x.mutable_data()[i] = tone[static_cast<size_t>(i)];
  const auto fb = vnet::mel_filterbank(1024, 24000, 100, 0.0, 12000.0);
  const auto mel = vnet::log_mel(x, vnet::StftParams{1024, 256, 1024}, fb);
  const int64_t W = mel.dim(2), col = W / 2;
  int64_t best_band = 0;
  for (int64_t m = 1; m < 100; ++m)
    if (mel.data()[m * W + col] > mel.data()[best_band * W + col]) best_band = m;
  const unsigned char* px =
      reinterpret_cast<const unsigned char*>(pgm.data()) + header.size();
  int64_t best_row = 0;
  for (int64_t rr = 1; rr < 100; ++rr)
    if (px[rr * 94 + col] > px[best_row * 94 + col]) best_row = rr;
  CHECK(best_row == 99 - best_band);
  CHECK(static_cast<int>(px[best_row * 94 + col]) >= 250);

  SECTION("silence renders black") {
    put_wav(td.path / "sil.wav", std::vector<double>(12000, 0.0));
    auto rs = run_cli("spec-dump --in " + (td.path / "sil.wav").string() + " --out " +
                          (td.path / "sil.pgm").string(),
                      td);
    REQUIRE(rs.code == 0);
    const auto sp = slurp(td.path / "sil.pgm");
    const std::string shdr = "P5\n47 100\n255\n";
    REQUIRE(sp.rfind(shdr, 0) == 0);
    REQUIRE(sp.size() == shdr.size() + 47 * 100);
    for (size_t i = shdr.size(); i < sp.size(); ++i) REQUIRE(sp[i] == '\0');
  }
}

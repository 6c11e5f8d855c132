#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>

#include "vnet/config.hpp"
#include "vnet/optimizer.hpp"
#include "vnet/wav.hpp"

namespace vnet {

template <typename Real>
struct Batch {
  Tensor<Real> mel;   // [B, bands, F]
  Tensor<Real> wave;  // [B, 1, 256*F]
};

namespace detail {

inline uint64_t mix64(uint64_t a, uint64_t b) {
  uint64_t z = a ^ (b * 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Mirror indexing with period 2(T-1), so short clips extend without the
// edge-doubling a simple tile would cause.
inline std::vector<double> pad_reflect_to(const std::vector<double>& x, int64_t n) {
  const int64_t T = static_cast<int64_t>(x.size());
  if (T >= n) return x;
  std::vector<double> out(static_cast<size_t>(n));
  if (T == 1) {
    std::fill(out.begin(), out.end(), x[0]);
    return out;
  }
  const int64_t period = 2 * (T - 1);
  for (int64_t i = 0; i < n; ++i) {
    int64_t k = i % period;
    if (k >= T) k = period - k;
    out[static_cast<size_t>(i)] = x[static_cast<size_t>(k)];
  }
  return out;
}

inline void append_le(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline void append_le(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline void read_le(const char* p, double& v) {
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  std::memcpy(&v, &bits, 8);
}

inline void read_le(const char* p, float& v) {
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i)
    bits |= static_cast<uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  std::memcpy(&v, &bits, 4);
}

template <typename Real>
const char* dtype_name() {
  return sizeof(Real) == 8 ? "f64" : "f32";
}

}  // namespace detail

// Rescales every gradient in the set so their joint L2 norm is at most
// max_norm. No-op when already inside the ball.
template <typename Real>
void clip_grad_norm(const std::vector<Parameter<Real>>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    const auto* g = p.tensor.grad();
    if (!g) continue;
    for (const Real v : *g) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0) return;
  const Real scale = static_cast<Real>(max_norm / norm);
  for (const auto& p : params) {
    auto node = p.tensor.node();
    for (auto& v : node->grad) v *= scale;
  }
}

template <typename Real>
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.threads > 0) set_thread_count(static_cast<int>(cfg_.threads));
    Rng init_rng(cfg_.seed);
    gen_ = std::make_unique<Generator<Real>>(store_, cfg_.generator_config(), init_rng);
    mtd_ = std::make_unique<Mtd<Real>>(store_, cfg_.mtd_config(), init_rng);
    mpd_ = std::make_unique<Mpd<Real>>(store_, cfg_.mpd_config(), init_rng);
    opt_g_ = Adam<Real>(store_.group(ParamGroup::theta), cfg_.lr_g, cfg_.adam_beta1,
                        cfg_.adam_beta2);
    opt_d_ = Adam<Real>(store_.groups({ParamGroup::phi, ParamGroup::omega}), cfg_.lr_d,
                        cfg_.adam_beta1, cfg_.adam_beta2);
    if (cfg_.segment_length < mel_params_.win_length)
      throw config_error("trainer: segment_length " + std::to_string(cfg_.segment_length) +
                         " is shorter than one mel analysis window (" +
                         std::to_string(mel_params_.win_length) + ")");
    fb_ = mel_filterbank(mel_params_.n_fft, 24000, gen_->config().mel_bands, 0.0, 12000.0);
  }

  // Recursive .wav scan under data_dir, lexicographic path order. Clips
  // shorter than a segment are reflect-padded; empty clips are skipped.
  void load_dataset() {
    namespace fs = std::filesystem;
    if (!fs::exists(cfg_.data_dir))
      throw input_error("trainer: data_dir does not exist: " + cfg_.data_dir);
    std::vector<std::string> paths;
    for (const auto& e : fs::recursive_directory_iterator(cfg_.data_dir)) {
      if (!e.is_regular_file()) continue;
      if (e.path().extension() == ".wav") paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
      auto clip = read_wav(p, 24000);
      if (clip.samples.empty()) continue;
      add_clip(clip.samples);
    }
    if (clips_.empty())
      throw input_error("trainer: no usable .wav clips under " + cfg_.data_dir);
  }

  void add_clip(const std::vector<double>& samples) {
    if (samples.empty()) throw input_error("trainer: cannot add an empty clip");
    clips_.push_back(detail::pad_reflect_to(samples, cfg_.segment_length));
  }

  // Crop starts sit on the hop grid so mel frame f always describes samples
  // [256f, 256f+window); the mel drops the final center-padded frame so
  // F = segment/256 exactly.
  Batch<Real> sample_batch() { return sample_batch_at(++batch_counter_); }

  Batch<Real> sample_batch_at(int64_t index) {
    if (clips_.empty()) throw input_error("trainer: dataset is empty");
    NoGrad<Real> ng;
    const int64_t B = cfg_.batch_size, seg = cfg_.segment_length;
    const int64_t bands = gen_->config().mel_bands, F = seg / 256;
    Rng rng(detail::mix64(cfg_.seed, static_cast<uint64_t>(index)));
    auto wave = Tensor<Real>::zeros({B, 1, seg});
    Real* wd = wave.mutable_data();
    for (int64_t b = 0; b < B; ++b) {
      const auto& clip = clips_[rng.raw() % clips_.size()];
      const int64_t slots = (static_cast<int64_t>(clip.size()) - seg) / 256 + 1;
      const int64_t start = static_cast<int64_t>(rng.raw() % static_cast<uint64_t>(slots)) * 256;
      for (int64_t t = 0; t < seg; ++t)
        wd[b * seg + t] = static_cast<Real>(clip[static_cast<size_t>(start + t)]);
    }
    auto mel_full = log_mel(wave, mel_params_, fb_);  // [B, bands, F+1]
    auto mel = Tensor<Real>::zeros({B, bands, F});
    const Real* src = mel_full.data();
    Real* dst = mel.mutable_data();
    const int64_t Ff = mel_full.dim(2);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t m = 0; m < bands; ++m)
        std::memcpy(dst + (b * bands + m) * F, src + (b * bands + m) * Ff,
                    static_cast<size_t>(F) * sizeof(Real));
    return {mel, wave};
  }

  // One D step then one G step. The D phase sees a detached fake; the G
  // phase regenerates it on the tape against the just-updated critics.
  LossReport<Real> train_step(const Batch<Real>& batch) {
    ++step_;
    const bool adv_on = step_ > cfg_.adv_warmup_steps;
    const LossFamily family = cfg_.family();
    const LossWeights& w = cfg_.weights;
    LossReport<Real> r{};

    if (adv_on) {
      Tensor<Real> fake;
      {
        NoGrad<Real> ng;
        fake = gen_->forward(batch.mel);
      }
      store_.zero_grad();
      auto real_outs = disc_forward(batch.wave);
      auto fake_outs = disc_forward(fake);
      auto d_loss = adv_loss_discriminator(family, real_outs, fake_outs);
      r.adv_d = d_loss.value();
      check_finite("L_adv_D", r.adv_d);
      backward(d_loss);
      if (cfg_.grad_clip > 0) clip_grad_norm(opt_d_.params(), cfg_.grad_clip);
      opt_d_.step();
    }

    store_.zero_grad();
    auto fake = gen_->forward(batch.mel);
    Tensor<Real> fm;
    std::vector<DiscOutput<Real>> fake_outs;
    const bool need_disc = adv_on || cfg_.fm_space == "features";
    if (need_disc) fake_outs = disc_forward(fake);
    if (cfg_.fm_space == "features") {
      std::vector<DiscOutput<Real>> real_outs;
      {
        NoGrad<Real> ng;
        real_outs = disc_forward(batch.wave);
      }
      fm = feature_matching_features(real_outs, fake_outs);
    } else {
      fm = feature_matching_loss(batch.wave, fake, mtd_->config());
    }
    auto mel_loss = mel_spectrogram_loss(batch.wave, fake, mtd_->config());
    r.fm = fm.value();
    r.mel = mel_loss.value();
    check_finite("L_FM", r.fm);
    check_finite("L_Mel", r.mel);
    auto g_total = add(affine(fm, static_cast<Real>(w.fm), Real(0)),
                       affine(mel_loss, static_cast<Real>(w.mel), Real(0)));
    if (adv_on) {
      auto adv_g = adv_loss_generator(family, fake_outs);
      r.adv_g = adv_g.value();
      check_finite("L_adv_G", r.adv_g);
      g_total = add(g_total, affine(adv_g, static_cast<Real>(w.adv), Real(0)));
    }
    r.total_g = static_cast<Real>(w.adv) * r.adv_g + static_cast<Real>(w.fm) * r.fm +
                static_cast<Real>(w.mel) * r.mel;
    r.total_d = r.adv_d;
    backward(g_total);
    if (cfg_.grad_clip > 0) clip_grad_norm(opt_g_.params(), cfg_.grad_clip);
    opt_g_.step();
    return r;
  }

  // Full loop: sample, step, log every log_interval, checkpoint every
  // checkpoint_interval and once more at the end.
  void run(std::ostream* echo = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.out_dir);
    std::ofstream log(fs::path(cfg_.out_dir) / "train_log.tsv",
                      step_ == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw input_error("trainer: cannot write log under " + cfg_.out_dir);
    while (step_ < cfg_.steps) {
      auto batch = sample_batch_at(step_ + 1);
      auto r = train_step(batch);
      if (step_ % cfg_.log_interval == 0) {
        const std::string line = log_line(step_, r);
        log << line << '\n' << std::flush;
        if (echo) (*echo) << line << '\n';
      }
      if (step_ % cfg_.checkpoint_interval == 0) checkpoint_now();
    }
    if (cfg_.steps > 0 && step_ % cfg_.checkpoint_interval != 0) checkpoint_now();
  }

  static std::string log_line(int64_t step, const LossReport<Real>& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g",
                  static_cast<long long>(step), static_cast<double>(r.fm),
                  static_cast<double>(r.mel), static_cast<double>(r.adv_g),
                  static_cast<double>(r.adv_d), static_cast<double>(r.total_g),
                  static_cast<double>(r.total_d));
    return buf;
  }

  void save_checkpoint(const std::string& dir);
  void load_checkpoint(const std::string& dir);

  const TrainConfig& config() const { return cfg_; }
  int64_t step() const { return step_; }
  const std::string& last_checkpoint() const { return last_ckpt_; }
  ParamStore<Real>& store() { return store_; }
  Generator<Real>& generator() { return *gen_; }
  Mtd<Real>& mtd() { return *mtd_; }
  Mpd<Real>& mpd() { return *mpd_; }
  Adam<Real>& opt_g() { return opt_g_; }
  Adam<Real>& opt_d() { return opt_d_; }
  size_t clip_count() const { return clips_.size(); }

  std::vector<DiscOutput<Real>> disc_forward(const Tensor<Real>& x) const {
    auto outs = mtd_->forward(x);
    auto p = mpd_->forward(x);
    outs.insert(outs.end(), p.begin(), p.end());
    return outs;
  }

 private:
  void check_finite(const char* term, Real v) const {
    if (std::isfinite(static_cast<double>(v))) return;
    throw fault_error("trainer: " + std::string(term) + " is not finite at step " +
                      std::to_string(step_) + "; last good checkpoint: " +
                      (last_ckpt_.empty() ? std::string("none") : last_ckpt_));
  }

  void checkpoint_now() {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_%06lld", static_cast<long long>(step_));
    const auto dir = (std::filesystem::path(cfg_.out_dir) / name).string();
    save_checkpoint(dir);
    last_ckpt_ = dir;
    std::ofstream latest(std::filesystem::path(cfg_.out_dir) / "latest");
    latest << name << '\n';
  }

  TrainConfig cfg_;
  ParamStore<Real> store_;
  std::unique_ptr<Generator<Real>> gen_;
  std::unique_ptr<Mtd<Real>> mtd_;
  std::unique_ptr<Mpd<Real>> mpd_;
  Adam<Real> opt_g_, opt_d_;
  StftParams mel_params_{1024, 256, 1024};
  MelFilterbank fb_;
  std::vector<std::vector<double>> clips_;
  int64_t step_ = 0;
  int64_t batch_counter_ = 0;
  std::string last_ckpt_;
};

namespace detail {

template <typename Real>
struct CkptRecord {
  std::string kind, name;
  std::vector<int64_t> dims;
  const Real* data = nullptr;  // save side
  Real* mut = nullptr;         // load side
  int64_t numel = 0;
  int64_t offset = 0;
};

// Everything a checkpoint must carry, in canonical (name, kind) order:
// parameters, buffers, and both optimizers' moment vectors keyed by the
// parameter they belong to.
template <typename Real>
std::vector<CkptRecord<Real>> checkpoint_records(ParamStore<Real>& store, Adam<Real>& opt_g,
                                                 Adam<Real>& opt_d) {
  std::vector<CkptRecord<Real>> recs;
  for (const auto& p : store.params()) {
    CkptRecord<Real> r;
    r.kind = "param";
    r.name = p.name;
    r.dims = p.tensor.shape();
    r.numel = p.tensor.numel();
    r.data = p.tensor.node()->vals->data();
    r.mut = p.tensor.node()->vals->data();
    recs.push_back(std::move(r));
  }
  for (const auto& b : store.buffers()) {
    CkptRecord<Real> r;
    r.kind = "buffer";
    r.name = b.name;
    r.dims = b.tensor.shape();
    r.numel = b.tensor.numel();
    r.data = b.tensor.node()->vals->data();
    r.mut = b.tensor.node()->vals->data();
    recs.push_back(std::move(r));
  }
  const std::pair<Adam<Real>*, const char*> opts[] = {{&opt_g, "g"}, {&opt_d, "d"}};
  for (const auto& [opt, tag] : opts) {
    auto& states = opt->states();
    const auto& params = opt->params();
    for (size_t i = 0; i < params.size(); ++i) {
      for (const char* which : {"m", "v"}) {
        CkptRecord<Real> r;
        r.kind = std::string("opt") + which + "_" + tag;
        r.name = params[i].name;
        auto& vec = which[0] == 'm' ? states[i].m : states[i].v;
        r.dims = {static_cast<int64_t>(vec.size())};
        r.numel = static_cast<int64_t>(vec.size());
        r.data = vec.data();
        r.mut = vec.data();
        recs.push_back(std::move(r));
      }
    }
  }
  std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) {
    return a.name != b.name ? a.name < b.name : a.kind < b.kind;
  });
  int64_t off = 0;
  for (auto& r : recs) {
    r.offset = off;
    off += r.numel * static_cast<int64_t>(sizeof(Real));
  }
  return recs;
}

}  // namespace detail

template <typename Real>
void Trainer<Real>::save_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto recs = detail::checkpoint_records(store_, opt_g_, opt_d_);

  const std::string cfg_text = cfg_.serialize();
  int64_t cfg_lines = 0;
  for (char c : cfg_text)
    if (c == '\n') ++cfg_lines;

  std::ostringstream man;
  man << "vnet-checkpoint 1\n"
      << "step " << step_ << '\n'
      << "opt_steps " << opt_g_.step_count() << ' ' << opt_d_.step_count() << '\n'
      << "config " << cfg_lines << '\n'
      << cfg_text << "tensors " << recs.size() << '\n';
  for (const auto& r : recs) {
    man << r.kind << ' ' << r.name << ' ' << detail::dtype_name<Real>() << ' ' << r.dims.size();
    for (int64_t d : r.dims) man << ' ' << d;
    man << ' ' << r.offset << ' ' << r.numel << '\n';
  }

  std::string blob;
  blob.reserve(static_cast<size_t>(recs.empty() ? 0 : recs.back().offset +
                                                          recs.back().numel *
                                                              static_cast<int64_t>(sizeof(Real))));
  for (const auto& r : recs)
    for (int64_t i = 0; i < r.numel; ++i) detail::append_le(blob, r.data[i]);

  std::ofstream mf(fs::path(dir) / "manifest.txt", std::ios::binary);
  std::ofstream bf(fs::path(dir) / "blob.bin", std::ios::binary);
  if (!mf || !bf) throw input_error("checkpoint: cannot write under " + dir);
  mf << man.str();
  bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

template <typename Real>
void Trainer<Real>::load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.txt", std::ios::binary);
  if (!mf) throw input_error("checkpoint: cannot open " + dir + "/manifest.txt");
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(mf, line))
      throw integrity_error("checkpoint: manifest truncated before " + std::string(what));
    return std::istringstream(line);
  };

  {
    auto is = next_line("header");
    std::string magic;
    int version = 0;
    is >> magic >> version;
    if (magic != "vnet-checkpoint" || version != 1)
      throw integrity_error("checkpoint: bad manifest header: '" + line + "'");
  }
  int64_t stored_step = 0, g_steps = 0, d_steps = 0, cfg_lines = 0;
  size_t n_tensors = 0;
  {
    auto is = next_line("step");
    std::string kw;
    is >> kw >> stored_step;
    if (kw != "step") throw integrity_error("checkpoint: expected step line, got '" + line + "'");
  }
  {
    auto is = next_line("opt_steps");
    std::string kw;
    is >> kw >> g_steps >> d_steps;
    if (kw != "opt_steps")
      throw integrity_error("checkpoint: expected opt_steps line, got '" + line + "'");
  }
  {
    auto is = next_line("config");
    std::string kw;
    is >> kw >> cfg_lines;
    if (kw != "config")
      throw integrity_error("checkpoint: expected config line, got '" + line + "'");
  }
  for (int64_t i = 0; i < cfg_lines; ++i) next_line("config body");
  {
    auto is = next_line("tensors");
    std::string kw;
    is >> kw >> n_tensors;
    if (kw != "tensors")
      throw integrity_error("checkpoint: expected tensors line, got '" + line + "'");
  }

  auto recs = detail::checkpoint_records(store_, opt_g_, opt_d_);
  std::map<std::pair<std::string, std::string>, detail::CkptRecord<Real>*> by_key;
  for (auto& r : recs) by_key[{r.name, r.kind}] = &r;

  struct Row {
    detail::CkptRecord<Real>* rec;
    int64_t offset, numel;
  };
  std::vector<Row> rows;
  std::set<std::pair<std::string, std::string>> seen;
  for (size_t i = 0; i < n_tensors; ++i) {
    auto is = next_line("tensor table");
    std::string kind, name, dtype;
    size_t ndim = 0;
    is >> kind >> name >> dtype >> ndim;
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) is >> d;
    int64_t offset = 0, numel = 0;
    is >> offset >> numel;
    if (!is) throw integrity_error("checkpoint: malformed tensor row: '" + line + "'");
    if (dtype != detail::dtype_name<Real>())
      throw config_error("checkpoint: dtype mismatch for " + name + ": stored " + dtype +
                         ", model " + detail::dtype_name<Real>());
    auto it = by_key.find({name, kind});
    if (it == by_key.end())
      throw integrity_error("checkpoint: unknown tensor " + kind + " " + name);
    if (it->second->dims != dims)
      throw config_error("checkpoint: shape mismatch for " + name + ": stored " +
                         shape_str(dims) + ", model " + shape_str(it->second->dims));
    seen.insert({name, kind});
    rows.push_back({it->second, offset, numel});
  }
  for (const auto& r : recs)
    if (!seen.count({r.name, r.kind}))
      throw integrity_error("checkpoint: missing tensor " + r.kind + " " + r.name);

  std::ifstream bf(fs::path(dir) / "blob.bin", std::ios::binary);
  if (!bf) throw input_error("checkpoint: cannot open " + dir + "/blob.bin");
  std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  int64_t expected = 0;
  for (const auto& row : rows) {
    const int64_t end = row.offset + row.numel * static_cast<int64_t>(sizeof(Real));
    if (row.offset < 0 || end > static_cast<int64_t>(blob.size()))
      throw integrity_error("checkpoint: blob truncated at parameter " + row.rec->name);
    expected = std::max(expected, end);
  }
  if (static_cast<int64_t>(blob.size()) != expected)
    throw integrity_error("checkpoint: blob length mismatch: have " +
                          std::to_string(blob.size()) + " bytes, manifest needs " +
                          std::to_string(expected));
  for (const auto& row : rows) {
    const char* p = blob.data() + row.offset;
    for (int64_t i = 0; i < row.numel; ++i)
      detail::read_le(p + i * static_cast<int64_t>(sizeof(Real)), row.rec->mut[i]);
  }

  step_ = stored_step;
  batch_counter_ = stored_step;
  opt_g_.set_step_count(g_steps);
  opt_d_.set_step_count(d_steps);
  last_ckpt_ = dir;
}

// Reads the stored TrainConfig back out of a checkpoint manifest. Checkpoints
// are self-describing: synthesis rebuilds the exact model (sizes, dtype)
// without the original config file.
inline TrainConfig checkpoint_config(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.txt", std::ios::binary);
  if (!mf) throw input_error("checkpoint: cannot open " + dir + "/manifest.txt");
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(mf, line))
      throw integrity_error("checkpoint: manifest truncated before " + std::string(what));
  };
  next_line("header");
  if (line.rfind("vnet-checkpoint ", 0) != 0)
    throw integrity_error("checkpoint: bad manifest header: '" + line + "'");
  next_line("step");
  next_line("opt_steps");
  next_line("config");
  int64_t cfg_lines = -1;
  {
    std::istringstream is(line);
    std::string kw;
    is >> kw >> cfg_lines;
    if (kw != "config" || cfg_lines < 0)
      throw integrity_error("checkpoint: expected config line, got '" + line + "'");
  }
  TrainConfig cfg;
  for (int64_t i = 0; i < cfg_lines; ++i) {
    next_line("config entry");
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw integrity_error("checkpoint: bad config entry '" + line + "'");
    cfg.set(line.substr(0, eq), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

}  // namespace vnet

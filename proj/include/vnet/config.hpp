#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "vnet/discriminator.hpp"
#include "vnet/generator.hpp"
#include "vnet/losses.hpp"

namespace vnet {

// Flat key=value run configuration. '#' starts a comment, blank lines are
// skipped, unknown keys are errors so typos cannot silently fall back to
// defaults.
struct TrainConfig {
  std::string data_dir;
  std::string out_dir = "runs/default";
  int64_t steps = 2000;
  uint64_t seed = 1;
  int64_t batch_size = 4;
  int64_t segment_length = 8192;
  std::string dtype = "f32";  // f32 | f64
  int64_t threads = 0;        // 0 = library default

  std::string loss_family = "asymptotic_monotone";
  std::string fm_space = "spectrogram";  // spectrogram | features
  LossWeights weights;
  int64_t adv_warmup_steps = 0;

  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double adam_beta1 = 0.8;
  double adam_beta2 = 0.99;
  double grad_clip = 0.0;  // 0 disables

  int64_t log_interval = 1;
  int64_t checkpoint_interval = 500;

  int64_t gen_channels = 128;
  int64_t gen_lvc_stages = 2;
  int64_t gen_lvc_kernel = 3;
  int64_t gen_kp_channels = 64;
  std::vector<int64_t> mtd_channels{32, 32, 32, 32, 1};
  std::vector<int64_t> mtd_dilations{1, 2, 4};
  std::vector<int64_t> mpd_channels{32, 128, 512, 1024, 1024, 1};
  std::vector<int64_t> mpd_periods{2, 3, 5, 7, 11};

  void validate() const {
    if (segment_length <= 0 || segment_length % 256 != 0)
      throw config_error("segment_length must be a positive multiple of 256, got " +
                         std::to_string(segment_length));
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (steps < 0) throw config_error("steps must be >= 0");
    if (adv_warmup_steps < 0) throw config_error("adv_warmup_steps must be >= 0");
    if (dtype != "f32" && dtype != "f64")
      throw config_error("dtype must be f32 or f64, got '" + dtype + "'");
    if (fm_space != "spectrogram" && fm_space != "features")
      throw config_error("fm_space must be spectrogram or features, got '" + fm_space + "'");
    if (lr_g <= 0 || lr_d <= 0) throw config_error("learning rates must be > 0");
    if (grad_clip < 0) throw config_error("grad_clip must be >= 0 (0 disables)");
    if (log_interval < 1 || checkpoint_interval < 1)
      throw config_error("log_interval and checkpoint_interval must be >= 1");
    family_from_string(loss_family);
    weights.validate();
    generator_config().validate();
    mtd_config().validate();
    mpd_config().validate();
  }

  LossFamily family() const { return family_from_string(loss_family); }

  GeneratorConfig generator_config() const {
    GeneratorConfig g;
    g.channels_initial = gen_channels;
    g.lvc_stages = gen_lvc_stages;
    g.lvc_kernel_size = gen_lvc_kernel;
    g.kernel_predictor_channels = gen_kp_channels;
    return g;
  }

  MtdConfig mtd_config() const {
    auto m = MtdConfig::defaults();
    for (auto& s : m.subs) {
      s.channels = mtd_channels;
      s.time_dilations = mtd_dilations;
    }
    return m;
  }

  MpdConfig mpd_config() const {
    MpdConfig m;
    m.periods = mpd_periods;
    m.channels = mpd_channels;
    return m;
  }

  void set(const std::string& key, const std::string& value);
  std::string serialize() const;

  static TrainConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("config: cannot open " + path);
    TrainConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
      line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
      line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw config_error("config: line " + std::to_string(lineno) + " is not key=value: '" +
                           line + "'");
      std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
      value.erase(value.begin(), std::find_if(value.begin(), value.end(), notspace));
      c.set(key, value);
    }
    return c;
  }
};

namespace detail {

inline int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw config_error("config: key '" + key + "' needs an integer, got '" + v + "'");
  }
}

inline double parse_f64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw config_error("config: key '" + key + "' needs a number, got '" + v + "'");
  }
}

inline std::vector<int64_t> parse_i64_list(const std::string& key, const std::string& v) {
  std::vector<int64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_i64(key, item));
  if (out.empty()) throw config_error("config: key '" + key + "' needs a comma list");
  return out;
}

inline std::string join_i64(const std::vector<int64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string fmt_f64(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void TrainConfig::set(const std::string& key, const std::string& value) {
  using detail::parse_f64;
  using detail::parse_i64;
  using detail::parse_i64_list;
  if (key == "data_dir") data_dir = value;
  else if (key == "out_dir") out_dir = value;
  else if (key == "steps") steps = parse_i64(key, value);
  else if (key == "seed") seed = static_cast<uint64_t>(parse_i64(key, value));
  else if (key == "batch_size") batch_size = parse_i64(key, value);
  else if (key == "segment_length") segment_length = parse_i64(key, value);
  else if (key == "dtype") dtype = value;
  else if (key == "threads") threads = parse_i64(key, value);
  else if (key == "loss_family") loss_family = value;
  else if (key == "fm_space") fm_space = value;
  else if (key == "lambda_fm") weights.fm = parse_f64(key, value);
  else if (key == "lambda_mel") weights.mel = parse_f64(key, value);
  else if (key == "lambda_adv") weights.adv = parse_f64(key, value);
  else if (key == "adv_warmup_steps") adv_warmup_steps = parse_i64(key, value);
  else if (key == "lr_g") lr_g = parse_f64(key, value);
  else if (key == "lr_d") lr_d = parse_f64(key, value);
  else if (key == "adam_beta1") adam_beta1 = parse_f64(key, value);
  else if (key == "adam_beta2") adam_beta2 = parse_f64(key, value);
  else if (key == "grad_clip") grad_clip = parse_f64(key, value);
  else if (key == "log_interval") log_interval = parse_i64(key, value);
  else if (key == "checkpoint_interval") checkpoint_interval = parse_i64(key, value);
  else if (key == "gen_channels") gen_channels = parse_i64(key, value);
  else if (key == "gen_lvc_stages") gen_lvc_stages = parse_i64(key, value);
  else if (key == "gen_lvc_kernel") gen_lvc_kernel = parse_i64(key, value);
  else if (key == "gen_kp_channels") gen_kp_channels = parse_i64(key, value);
  else if (key == "mtd_channels") mtd_channels = parse_i64_list(key, value);
  else if (key == "mtd_dilations") mtd_dilations = parse_i64_list(key, value);
  else if (key == "mpd_channels") mpd_channels = parse_i64_list(key, value);
  else if (key == "mpd_periods") mpd_periods = parse_i64_list(key, value);
  else throw config_error("config: unknown key '" + key + "'");
}

inline std::string TrainConfig::serialize() const {
  using detail::fmt_f64;
  using detail::join_i64;
  std::ostringstream os;
  os << "adam_beta1=" << fmt_f64(adam_beta1) << '\n'
     << "adam_beta2=" << fmt_f64(adam_beta2) << '\n'
     << "adv_warmup_steps=" << adv_warmup_steps << '\n'
     << "batch_size=" << batch_size << '\n'
     << "checkpoint_interval=" << checkpoint_interval << '\n'
     << "data_dir=" << data_dir << '\n'
     << "dtype=" << dtype << '\n'
     << "fm_space=" << fm_space << '\n'
     << "gen_channels=" << gen_channels << '\n'
     << "gen_kp_channels=" << gen_kp_channels << '\n'
     << "gen_lvc_kernel=" << gen_lvc_kernel << '\n'
     << "gen_lvc_stages=" << gen_lvc_stages << '\n'
     << "grad_clip=" << fmt_f64(grad_clip) << '\n'
     << "lambda_adv=" << fmt_f64(weights.adv) << '\n'
     << "lambda_fm=" << fmt_f64(weights.fm) << '\n'
     << "lambda_mel=" << fmt_f64(weights.mel) << '\n'
     << "log_interval=" << log_interval << '\n'
     << "loss_family=" << loss_family << '\n'
     << "lr_d=" << fmt_f64(lr_d) << '\n'
     << "lr_g=" << fmt_f64(lr_g) << '\n'
     << "mpd_channels=" << join_i64(mpd_channels) << '\n'
     << "mpd_periods=" << join_i64(mpd_periods) << '\n'
     << "mtd_channels=" << join_i64(mtd_channels) << '\n'
     << "mtd_dilations=" << join_i64(mtd_dilations) << '\n'
     << "out_dir=" << out_dir << '\n'
     << "seed=" << seed << '\n'
     << "segment_length=" << segment_length << '\n'
     << "steps=" << steps << '\n'
     << "threads=" << threads << '\n';
  return os.str();
}

}  // namespace vnet

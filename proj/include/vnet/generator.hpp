#pragma once

#include "vnet/conv.hpp"
#include "vnet/norm.hpp"
#include "vnet/params.hpp"

namespace vnet {

struct GeneratorConfig {
  std::vector<int64_t> upsample_rates{8, 8, 2, 2};
  std::vector<int64_t> upsample_kernel_sizes{16, 16, 4, 4};
  int64_t channels_initial = 128;
  std::vector<int64_t> mrf_kernel_sizes{3, 7, 11};
  std::vector<std::vector<int64_t>> mrf_dilations{{1, 3, 5}, {1, 3, 5}, {1, 3, 5}};
  bool lvc_enabled = true;
  int64_t lvc_stages = 2;  // LVC after each of the first N upsampling stages
  int64_t lvc_layers_per_block = 1;
  int64_t lvc_kernel_size = 3;
  int64_t kernel_predictor_channels = 64;
  int64_t mel_bands = 100;
  int64_t hop = 256;

  void validate() const {
    int64_t prod = 1;
    for (auto r : upsample_rates) prod *= r;
    if (prod != hop)
      throw config_error("generator: upsample rates multiply to " + std::to_string(prod) +
                         ", conditioning hop is " + std::to_string(hop));
    if (upsample_kernel_sizes.size() != upsample_rates.size())
      throw config_error("generator: " + std::to_string(upsample_kernel_sizes.size()) +
                         " upsample kernels for " + std::to_string(upsample_rates.size()) +
                         " rates");
    for (size_t i = 0; i < upsample_rates.size(); ++i) {
      const int64_t K = upsample_kernel_sizes[i], r = upsample_rates[i];
      if (K < r || (K - r) % 2 != 0)
        throw config_error("generator: upsample kernel " + std::to_string(K) + " with rate " +
                           std::to_string(r) +
                           " cannot keep the exact length contract (need K >= r, K - r even)");
    }
    if (mrf_dilations.size() != mrf_kernel_sizes.size())
      throw config_error("generator: mrf_dilations must list one dilation set per kernel");
    for (auto k : mrf_kernel_sizes)
      if (k % 2 == 0)
        throw config_error("generator: mrf kernel " + std::to_string(k) +
                           " must be odd to preserve length");
    if (channels_initial < 2 || (channels_initial >> upsample_rates.size()) < 1)
      throw config_error("generator: channels_initial " + std::to_string(channels_initial) +
                         " too small for " + std::to_string(upsample_rates.size()) + " stages");
    if (lvc_kernel_size % 2 == 0) throw config_error("generator: lvc kernel size must be odd");
    if (lvc_stages > static_cast<int64_t>(upsample_rates.size()))
      throw config_error("generator: lvc_stages exceeds upsampling stage count");
  }
};

template <typename Real>
class Generator {
 public:
  Generator(ParamStore<Real>& store, GeneratorConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto G = ParamGroup::theta;
    auto conv_p = [&](const std::string& n, std::vector<int64_t> shape) {
      return store.add(n, G, std::move(shape), rng, 0.01);
    };
    auto bias_p = [&](const std::string& n, int64_t c) {
      return store.add(n, G, {c}, rng, 0.0);
    };

    const int64_t C0 = cfg_.channels_initial;
    pre_w_ = conv_p("gen.pre.w", {C0, cfg_.mel_bands, 7});
    pre_b_ = bias_p("gen.pre.b", C0);

    const size_t S = cfg_.upsample_rates.size();
    int64_t ch = C0;
    for (size_t s = 0; s < S; ++s) {
      const int64_t co = C0 >> (s + 1);
      const std::string base = "gen.up" + std::to_string(s);
      Up up;
      up.w = conv_p(base + ".w", {ch, co, cfg_.upsample_kernel_sizes[s]});
      up.b = bias_p(base + ".b", co);
      up.stride = cfg_.upsample_rates[s];
      up.pad = (cfg_.upsample_kernel_sizes[s] - cfg_.upsample_rates[s]) / 2;
      ups_.push_back(up);

      if (cfg_.lvc_enabled && static_cast<int64_t>(s) < cfg_.lvc_stages) {
        for (int64_t l = 0; l < cfg_.lvc_layers_per_block; ++l) {
          LvcHead head;
          head.stage = static_cast<int64_t>(s);
          head.channels = co;
          const std::string hb =
              "gen.kp.s" + std::to_string(s) + ".l" + std::to_string(l);
          const int64_t rows = 2 * co * co * cfg_.lvc_kernel_size;
          head.ker_w = conv_p(hb + ".ker.w", {rows, cfg_.kernel_predictor_channels, 1});
          head.ker_b = bias_p(hb + ".ker.b", rows);
          head.bias_w = conv_p(hb + ".bias.w", {2 * co, cfg_.kernel_predictor_channels, 1});
          head.bias_b = bias_p(hb + ".bias.b", 2 * co);
          lvc_heads_.push_back(head);
        }
      }

      for (size_t k = 0; k < cfg_.mrf_kernel_sizes.size(); ++k) {
        const int64_t K = cfg_.mrf_kernel_sizes[k];
        for (size_t d = 0; d < cfg_.mrf_dilations[k].size(); ++d) {
          const std::string rb = "gen.mrf" + std::to_string(s) + ".k" + std::to_string(k) + ".d" +
                                 std::to_string(d);
          ResUnit u;
          u.stage = static_cast<int64_t>(s);
          u.kernel_index = static_cast<int64_t>(k);
          u.dilation = cfg_.mrf_dilations[k][d];
          u.kernel = K;
          u.w1 = conv_p(rb + ".c1.w", {co, co, K});
          u.b1 = bias_p(rb + ".c1.b", co);
          u.w2 = conv_p(rb + ".c2.w", {co, co, K});
          u.b2 = bias_p(rb + ".c2.b", co);
          res_units_.push_back(u);
        }
      }
      ch = co;
    }

    post_w_ = conv_p("gen.post.w", {1, ch, 7});
    post_b_ = bias_p("gen.post.b", 1);

    if (cfg_.lvc_enabled && cfg_.lvc_stages > 0) {
      const int64_t P = cfg_.kernel_predictor_channels;
      kp_w1_ = conv_p("gen.kp.body1.w", {P, cfg_.mel_bands, 5});
      kp_b1_ = bias_p("gen.kp.body1.b", P);
      kp_w2_ = conv_p("gen.kp.body2.w", {P, P, 5});
      kp_b2_ = bias_p("gen.kp.body2.b", P);
    }
  }

  const GeneratorConfig& config() const { return cfg_; }

  // mel [B, bands, F] -> waveform [B, 1, 256*F]
  Tensor<Real> forward(const Tensor<Real>& mel) const {
    if (mel.ndim() != 3 || mel.dim(1) != cfg_.mel_bands)
      throw config_error("generator: expected mel [B," + std::to_string(cfg_.mel_bands) +
                         ",F], got " + shape_str(mel.shape()));
    const int64_t B = mel.dim(0), F = mel.dim(2);
    const Real slope = Real(0.1);

    Tensor<Real> kp;
    if (!lvc_heads_.empty()) {
      Conv1dOpts o5;
      o5.padding = 2;
      kp = leaky_relu(conv1d(mel, kp_w1_, kp_b1_, o5), slope);
      kp = leaky_relu(conv1d(kp, kp_w2_, kp_b2_, o5), slope);
    }

    Conv1dOpts o7;
    o7.padding = 3;
    auto x = conv1d(mel, pre_w_, pre_b_, o7);

    for (size_t s = 0; s < ups_.size(); ++s) {
      x = leaky_relu(x, slope);
      x = conv_transpose1d(x, ups_[s].w, ups_[s].b, ups_[s].stride, ups_[s].pad);
      for (const auto& head : lvc_heads_) {
        if (head.stage != static_cast<int64_t>(s)) continue;
        Conv1dOpts o1;
        auto kers = conv1d(kp, head.ker_w, head.ker_b, o1);   // [B, 2C*C*K, F]
        auto biases = conv1d(kp, head.bias_w, head.bias_b, o1);  // [B, 2C, F]
        auto y = lvc_conv1d(x, kers, biases, 2 * head.channels);
        auto a = slice_channels(y, 0, head.channels);
        auto b = slice_channels(y, head.channels, 2 * head.channels);
        x = add(x, gated_activation(a, b));  // residual keeps signal flow at init
      }
      x = mrf(x, static_cast<int64_t>(s), slope);
    }

    x = leaky_relu(x, slope);
    Conv1dOpts opost;
    opost.padding = 3;
    opost.pad_mode = PadMode::reflect;
    x = tanh(conv1d(x, post_w_, post_b_, opost));
    const int64_t want = cfg_.hop * F;
    if (x.dim(2) != want) {
      const int64_t extra = x.dim(2) - want;
      if (extra < 0 || extra % 2 != 0)
        throw fault_error("generator: produced length " + std::to_string(x.dim(2)) +
                          ", cannot trim to " + std::to_string(want));
      x = slice_last(x, extra / 2, extra / 2 + want);
    }
    (void)B;
    return x;
  }

 private:
  Tensor<Real> mrf(const Tensor<Real>& x, int64_t stage, Real slope) const {
    if (cfg_.mrf_kernel_sizes.empty()) return x;
    std::vector<Tensor<Real>> outs;
    for (size_t k = 0; k < cfg_.mrf_kernel_sizes.size(); ++k) {
      Tensor<Real> u = x;
      for (const auto& r : res_units_) {
        if (r.stage != stage || r.kernel_index != static_cast<int64_t>(k)) continue;
        Conv1dOpts od;
        od.dilation = r.dilation;
        od.padding = (r.kernel - 1) * r.dilation / 2;
        Conv1dOpts o1;
        o1.padding = (r.kernel - 1) / 2;
        auto t = conv1d(leaky_relu(u, slope), r.w1, r.b1, od);
        t = conv1d(leaky_relu(t, slope), r.w2, r.b2, o1);
        u = add(u, t);
      }
      outs.push_back(u);
    }
    auto acc = outs[0];
    for (size_t i = 1; i < outs.size(); ++i) acc = add(acc, outs[i]);
    return affine(acc, Real(1) / static_cast<Real>(outs.size()), Real(0));
  }

  struct Up {
    Tensor<Real> w, b;
    int64_t stride = 1, pad = 0;
  };
  struct ResUnit {
    int64_t stage, kernel_index, dilation, kernel;
    Tensor<Real> w1, b1, w2, b2;
  };
  struct LvcHead {
    int64_t stage, channels;
    Tensor<Real> ker_w, ker_b, bias_w, bias_b;
  };

  GeneratorConfig cfg_;
  Tensor<Real> pre_w_, pre_b_, post_w_, post_b_;
  Tensor<Real> kp_w1_, kp_b1_, kp_w2_, kp_b2_;
  std::vector<Up> ups_;
  std::vector<ResUnit> res_units_;
  std::vector<LvcHead> lvc_heads_;
};

}  // namespace vnet

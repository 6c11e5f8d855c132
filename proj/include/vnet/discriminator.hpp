#pragma once

#include "vnet/conv.hpp"
#include "vnet/dsp.hpp"
#include "vnet/norm.hpp"
#include "vnet/params.hpp"

namespace vnet {

enum class NormKind { none, weight, spectral };

// One sub-discriminator forward: the score map, the per-layer activations,
// and the split of the last layer into h (its input) and the effective final
// weight, so losses can recompute the score with either side detached.
template <typename Real>
struct DiscOutput {
  Tensor<Real> score;                  // [B,1,H,W]
  std::vector<Tensor<Real>> features;  // post-activation intermediates + score
  Tensor<Real> h;                      // input of the final layer
  Tensor<Real> omega_eff;              // effective final weight (on tape)
  Conv2dOpts final_opts;

  Tensor<Real> rescore(bool detach_h, bool detach_omega) const {
    return conv2d(detach_h ? h.detach() : h, detach_omega ? omega_eff.detach() : omega_eff,
                  Tensor<Real>{}, final_opts);
  }
};

namespace detail {

template <typename Real>
struct Conv2dLayer {
  Tensor<Real> w, b, g;  // g only for weight norm
  Conv2dOpts opts;
  NormKind norm = NormKind::none;
  std::shared_ptr<SpectralNorm<Real>> sn;
  bool final_layer = false;

  Tensor<Real> effective_weight() const {
    switch (norm) {
      case NormKind::weight: return weight_norm(w, g);
      case NormKind::spectral: return sn->apply(w);
      default: return w;
    }
  }
};

template <typename Real>
Conv2dLayer<Real> make_layer(ParamStore<Real>& store, const std::string& name, ParamGroup grp,
                             std::vector<int64_t> wshape, Conv2dOpts opts, NormKind norm,
                             bool final_layer, Rng& rng) {
  Conv2dLayer<Real> L;
  L.opts = opts;
  L.norm = norm;
  L.final_layer = final_layer;
  L.w = store.add(name + ".w", grp, wshape, rng, 0.01);
  if (!final_layer) L.b = store.add(name + ".b", grp, {wshape[0]}, rng, 0.0);
  if (norm == NormKind::weight) {
    L.g = store.add(name + ".g", grp, {wshape[0]}, rng, 0.0);
    weight_norm_init(L.w, L.g);
  } else if (norm == NormKind::spectral) {
    L.sn = std::make_shared<SpectralNorm<Real>>(store, name, L.w, rng);
  }
  return L;
}

// Shared conv-stack runner. The final layer is bias-free so the score is
// exactly omega^T h.
template <typename Real>
DiscOutput<Real> run_stack(const std::vector<Conv2dLayer<Real>>& layers, Tensor<Real> x,
                           Real slope) {
  DiscOutput<Real> out;
  for (const auto& L : layers) {
    if (L.final_layer) {
      out.h = x;
      out.omega_eff = L.effective_weight();
      out.final_opts = L.opts;
      out.score = conv2d(x, out.omega_eff, Tensor<Real>{}, L.opts);
      out.features.push_back(out.score);
    } else {
      x = leaky_relu(conv2d(x, L.effective_weight(), L.b, L.opts), slope);
      out.features.push_back(x);
    }
  }
  return out;
}

}  // namespace detail

struct MtdSubConfig {
  int64_t pool = 1;
  StftParams stft;
  std::vector<int64_t> channels{32, 32, 32, 32, 1};
  int64_t kernel_freq = 3, kernel_time = 9;    // intermediate layers
  int64_t final_kernel_freq = 3, final_kernel_time = 3;
  int64_t stride_time = 2;                     // layers after the first
  std::vector<int64_t> time_dilations{1, 2, 4};  // intermediate layers
  NormKind norm = NormKind::weight;
};

struct MtdConfig {
  std::vector<MtdSubConfig> subs;

  static MtdConfig defaults() {
    MtdConfig c;
    MtdSubConfig s1;
    s1.pool = 1;
    s1.stft = {1024, 120, 600};
    s1.norm = NormKind::weight;
    MtdSubConfig s2;
    s2.pool = 2;
    s2.stft = {2048, 240, 1200};
    s2.norm = NormKind::spectral;
    MtdSubConfig s3;
    s3.pool = 4;
    s3.stft = {512, 50, 240};
    s3.norm = NormKind::spectral;
    c.subs = {s1, s2, s3};
    return c;
  }

  void validate() const {
    if (subs.empty()) throw config_error("mtd: no sub-discriminators");
    for (const auto& s : subs) {
      vnet::validate(s.stft);
      if (s.pool < 1) throw config_error("mtd: pool factor must be >= 1");
      if (s.channels.size() < 2 || s.channels.back() != 1)
        throw config_error("mtd: channel stack must end in 1");
      if (s.time_dilations.size() + 2 != s.channels.size())
        throw config_error("mtd: need a time dilation for each intermediate layer");
    }
  }
};

template <typename Real>
class Mtd {
 public:
  Mtd(ParamStore<Real>& store, MtdConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (size_t m = 0; m < cfg_.subs.size(); ++m) {
      const auto& sc = cfg_.subs[m];
      std::vector<detail::Conv2dLayer<Real>> stack;
      int64_t ci = 1;
      for (size_t l = 0; l + 1 < sc.channels.size(); ++l) {
        const int64_t co = sc.channels[l];
        Conv2dOpts o;
        o.stride_w = l == 0 ? 1 : sc.stride_time;
        o.dil_w = l == 0 ? 1 : sc.time_dilations[l - 1];
        o.pad_h = (sc.kernel_freq - 1) / 2;
        o.pad_w = (sc.kernel_time - 1) * o.dil_w / 2;
        stack.push_back(detail::make_layer(
            store, "mtd.s" + std::to_string(m) + ".l" + std::to_string(l), ParamGroup::phi,
            {co, ci, sc.kernel_freq, sc.kernel_time}, o, sc.norm, false, rng));
        ci = co;
      }
      Conv2dOpts of;
      of.pad_h = (sc.final_kernel_freq - 1) / 2;
      of.pad_w = (sc.final_kernel_time - 1) / 2;
      stack.push_back(detail::make_layer(
          store, "mtd.s" + std::to_string(m) + ".final", ParamGroup::omega,
          {1, ci, sc.final_kernel_freq, sc.final_kernel_time}, of, sc.norm, true, rng));
      stacks_.push_back(std::move(stack));
    }
  }

  // x [B,1,T] at 24 kHz
  std::vector<DiscOutput<Real>> forward(const Tensor<Real>& x) const {
    std::vector<DiscOutput<Real>> outs;
    for (size_t m = 0; m < cfg_.subs.size(); ++m) {
      const auto& sc = cfg_.subs[m];
      auto pooled = avg_pool1d(x, sc.pool);
      auto mag = stft_magnitude(pooled, sc.stft);  // [B, bins, F]
      auto img = view(mag, {mag.dim(0), int64_t(1), mag.dim(1), mag.dim(2)});
      outs.push_back(detail::run_stack(stacks_[m], img, Real(0.1)));
    }
    return outs;
  }

  const MtdConfig& config() const { return cfg_; }

  void set_frozen(bool frozen) {
    for (auto& stack : stacks_)
      for (auto& L : stack)
        if (L.sn) frozen ? L.sn->freeze(L.w) : L.sn->unfreeze();
  }

  // top singular-value estimates of every spectral-norm layer, post-division
  std::vector<Real> spectral_sigmas() const {
    std::vector<Real> out;
    for (const auto& stack : stacks_)
      for (const auto& L : stack)
        if (L.sn) out.push_back(L.sn->current_sigma(L.w));
    return out;
  }

 private:
  MtdConfig cfg_;
  std::vector<std::vector<detail::Conv2dLayer<Real>>> stacks_;
};

struct MpdConfig {
  std::vector<int64_t> periods{2, 3, 5, 7, 11};
  std::vector<int64_t> channels{32, 128, 512, 1024, 1024, 1};
  int64_t kernel = 5, stride = 3;
  int64_t final_kernel = 3;

  void validate() const {
    if (periods.empty()) throw config_error("mpd: no periods");
    for (size_t i = 0; i < periods.size(); ++i) {
      const int64_t p = periods[i];
      if (p < 2) throw config_error("mpd: period " + std::to_string(p) + " must be >= 2");
      for (int64_t d = 2; d * d <= p; ++d)
        if (p % d == 0) throw config_error("mpd: period " + std::to_string(p) + " is not prime");
      for (size_t j = i + 1; j < periods.size(); ++j)
        if (periods[j] == p) throw config_error("mpd: duplicate period " + std::to_string(p));
    }
    if (channels.size() < 2 || channels.back() != 1)
      throw config_error("mpd: channel stack must end in 1");
  }
};

template <typename Real>
class Mpd {
 public:
  Mpd(ParamStore<Real>& store, MpdConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (size_t pi = 0; pi < cfg_.periods.size(); ++pi) {
      std::vector<detail::Conv2dLayer<Real>> stack;
      int64_t ci = 1;
      const size_t n_layers = cfg_.channels.size();
      for (size_t l = 0; l + 1 < n_layers; ++l) {
        const int64_t co = cfg_.channels[l];
        Conv2dOpts o;
        o.stride_h = (l + 2 < n_layers) ? cfg_.stride : 1;  // last pre-final layer keeps stride 1
        o.pad_h = (cfg_.kernel - 1) / 2;
        stack.push_back(detail::make_layer(
            store, "mpd.p" + std::to_string(cfg_.periods[pi]) + ".l" + std::to_string(l),
            ParamGroup::phi, {co, ci, cfg_.kernel, 1}, o, NormKind::weight, false, rng));
        ci = co;
      }
      Conv2dOpts of;
      of.pad_h = (cfg_.final_kernel - 1) / 2;
      stack.push_back(detail::make_layer(
          store, "mpd.p" + std::to_string(cfg_.periods[pi]) + ".final", ParamGroup::omega,
          {1, ci, cfg_.final_kernel, 1}, of, NormKind::weight, true, rng));
      stacks_.push_back(std::move(stack));
    }
  }

  // x [B,1,T]
  std::vector<DiscOutput<Real>> forward(const Tensor<Real>& x) const {
    std::vector<DiscOutput<Real>> outs;
    for (size_t pi = 0; pi < cfg_.periods.size(); ++pi) {
      auto img = reshape2d(x, cfg_.periods[pi]);  // [B,1,rows,p]
      outs.push_back(detail::run_stack(stacks_[pi], img, Real(0.1)));
    }
    return outs;
  }

  const MpdConfig& config() const { return cfg_; }

 private:
  MpdConfig cfg_;
  std::vector<std::vector<detail::Conv2dLayer<Real>>> stacks_;
};

// Flat adapters with a fixed ordering: MTD subs in config order, then MPD
// periods in config order; features follow layer order within each sub.
template <typename Real>
std::vector<Tensor<Real>> scores_of(const std::vector<DiscOutput<Real>>& outs) {
  std::vector<Tensor<Real>> z;
  for (const auto& o : outs) z.push_back(o.score);
  return z;
}

template <typename Real>
std::vector<Tensor<Real>> features_of(const std::vector<DiscOutput<Real>>& outs) {
  std::vector<Tensor<Real>> f;
  for (const auto& o : outs)
    for (const auto& t : o.features) f.push_back(t);
  return f;
}

}  // namespace vnet

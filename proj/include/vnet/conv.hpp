#pragma once

#include "vnet/tensor.hpp"

namespace vnet {

enum class PadMode { zeros, reflect };

// Pad along the last axis. Reflect excludes the edge sample (abcd -> b|abcd|c)
// and therefore needs pad <= T-1.
template <typename Real>
Tensor<Real> pad_last(const Tensor<Real>& x, int64_t left, int64_t right, PadMode mode) {
  if (left < 0 || right < 0) throw config_error("pad_last: negative padding");
  const int64_t T = x.dim(x.ndim() - 1);
  if (mode == PadMode::reflect && (left > T - 1 || right > T - 1))
    throw config_error("pad_last: reflect padding " + std::to_string(std::max(left, right)) +
                       " too large for length " + std::to_string(T));
  if (left == 0 && right == 0) return x;
  int64_t rows = 1;
  for (size_t i = 0; i + 1 < x.ndim(); ++i) rows *= x.dim(i);
  std::vector<int64_t> oshape = x.shape();
  oshape.back() = T + left + right;
  const int64_t L = oshape.back();
  auto out = Tensor<Real>::zeros(oshape);
  // source index for each padded position (-1 = structural zero)
  std::vector<int64_t> src(static_cast<size_t>(L));
  for (int64_t j = 0; j < L; ++j) {
    int64_t t = j - left;
    if (mode == PadMode::reflect) {
      if (t < 0) t = -t;
      if (t >= T) t = 2 * T - 2 - t;
    } else if (t < 0 || t >= T) {
      t = -1;
    }
    src[static_cast<size_t>(j)] = t;
  }
  const Real* xd = x.data();
  Real* od = out.mutable_data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < L; ++j)
      od[r * L + j] = src[static_cast<size_t>(j)] >= 0 ? xd[r * T + src[static_cast<size_t>(j)]] : Real(0);
  if (detail::wants_grad(x)) {
    out.set_requires_grad(true);
    detail::record<Real>([xn = x.node(), on = out.node(), rows, T, L, src]() {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      const auto& go = on->grad;
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < L; ++j)
          if (src[static_cast<size_t>(j)] >= 0)
            gx[static_cast<size_t>(r * T + src[static_cast<size_t>(j)])] +=
                go[static_cast<size_t>(r * L + j)];
    });
  }
  return out;
}

struct Conv1dOpts {
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t dilation = 1;
  int64_t groups = 1;
  PadMode pad_mode = PadMode::zeros;
};

namespace detail {

// Unpadded cross-correlation core; the public entry composes pad_last first.
template <typename Real>
Tensor<Real> conv1d_core(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                         int64_t stride, int64_t dilation, int64_t groups) {
  const int64_t B = x.dim(0), Ci = x.dim(1), T = x.dim(2);
  const int64_t Co = w.dim(0), Cig = w.dim(1), K = w.dim(2);
  const int64_t To = (T - dilation * (K - 1) - 1) / stride + 1;
  if (To <= 0)
    throw config_error("conv1d: input " + shape_str(x.shape()) + " too short for weight " +
                       shape_str(w.shape()) + " at stride " + std::to_string(stride) +
                       " dilation " + std::to_string(dilation));
  const int64_t Cog = Co / groups;
  auto out = Tensor<Real>::zeros({B, Co, To});
  const Real* xd = x.data();
  const Real* wd = w.data();
  const Real* bd = bias.defined() ? bias.data() : nullptr;
  Real* od = out.mutable_data();
  parallel_for(B * Co, [&](int64_t i0, int64_t i1) {
    for (int64_t bc = i0; bc < i1; ++bc) {
      const int64_t b = bc / Co, co = bc % Co;
      const int64_t g = co / Cog;
      Real* orow = od + bc * To;
      if (bd)
        for (int64_t t = 0; t < To; ++t) orow[t] = bd[co];
      for (int64_t cig = 0; cig < Cig; ++cig) {
        const Real* xrow = xd + (b * Ci + g * Cig + cig) * T;
        const Real* wrow = wd + (co * Cig + cig) * K;
        for (int64_t k = 0; k < K; ++k) {
          const Real wk = wrow[k];
          const int64_t off = k * dilation;
          for (int64_t t = 0; t < To; ++t) orow[t] += wk * xrow[t * stride + off];
        }
      }
    }
  });

  const bool gx = wants_grad(x), gw = wants_grad(w),
             gb = bias.defined() && wants_grad(bias);
  if (gx || gw || gb) {
    out.set_requires_grad(true);
    auto bn = bias.defined() ? bias.node() : nullptr;
    record<Real>([xn = x.node(), wn = w.node(), bn, on = out.node(), B, Ci, T, Co, Cig, K, To,
                  stride, dilation, groups, Cog, gx, gw, gb]() {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      const auto& xv = *xn->vals;
      const auto& wv = *wn->vals;
      if (gx) {
        auto& gxv = xn->ensure_grad();
        parallel_for(B * Ci, [&](int64_t i0, int64_t i1) {
          for (int64_t bc = i0; bc < i1; ++bc) {
            const int64_t b = bc / Ci, ci = bc % Ci;
            const int64_t g = ci / Cig, cig = ci % Cig;
            Real* grow = gxv.data() + bc * T;
            for (int64_t cog = 0; cog < Cog; ++cog) {
              const int64_t co = g * Cog + cog;
              const Real* gorow = go.data() + (b * Co + co) * To;
              const Real* wrow = wv.data() + (co * Cig + cig) * K;
              for (int64_t k = 0; k < K; ++k) {
                const Real wk = wrow[k];
                const int64_t off = k * dilation;
                for (int64_t t = 0; t < To; ++t) grow[t * stride + off] += wk * gorow[t];
              }
            }
          }
        });
      }
      if (gw) {
        auto& gwv = wn->ensure_grad();
        parallel_for(Co, [&](int64_t i0, int64_t i1) {
          for (int64_t co = i0; co < i1; ++co) {
            const int64_t g = co / Cog;
            for (int64_t cig = 0; cig < Cig; ++cig)
              for (int64_t k = 0; k < K; ++k) {
                Real acc = 0;
                const int64_t off = k * dilation;
                for (int64_t b = 0; b < B; ++b) {
                  const Real* gorow = go.data() + (b * Co + co) * To;
                  const Real* xrow = xv.data() + (b * Ci + g * Cig + cig) * T;
                  for (int64_t t = 0; t < To; ++t) acc += gorow[t] * xrow[t * stride + off];
                }
                gwv[static_cast<size_t>((co * Cig + cig) * K + k)] += acc;
              }
          }
        });
      }
      if (gb) {
        auto& gbv = bn->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t co = 0; co < Co; ++co) {
            Real acc = 0;
            const Real* gorow = go.data() + (b * Co + co) * To;
            for (int64_t t = 0; t < To; ++t) acc += gorow[t];
            gbv[static_cast<size_t>(co)] += acc;
          }
      }
    });
  }
  return out;
}

}  // namespace detail

template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                    const Conv1dOpts& opt = {}) {
  if (x.ndim() != 3 || w.ndim() != 3)
    throw config_error("conv1d: expected input [B,C,T] and weight [Co,Ci/g,K], got " +
                       shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int64_t Ci = x.dim(1), Co = w.dim(0), Cig = w.dim(1), K = w.dim(2);
  if (opt.groups < 1 || Ci % opt.groups != 0 || Co % opt.groups != 0 || Cig != Ci / opt.groups)
    throw config_error("conv1d: input " + shape_str(x.shape()) + " incompatible with weight " +
                       shape_str(w.shape()) + " for groups " + std::to_string(opt.groups));
  if (K < 1 || opt.dilation < 1 || opt.stride < 1)
    throw config_error("conv1d: kernel/stride/dilation must be >= 1");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Co))
    throw config_error("conv1d: bias shape " + shape_str(bias.shape()) + " does not match " +
                       std::to_string(Co) + " output channels");
  Tensor<Real> xp = opt.padding > 0 ? pad_last(x, opt.padding, opt.padding, opt.pad_mode) : x;
  return detail::conv1d_core(xp, w, bias, opt.stride, opt.dilation, opt.groups);
}

// Weight layout [Ci, Co, K]: the same array used by conv1d as [Co', Ci', K]
// makes this the exact adjoint of conv1d at matching stride/padding.
template <typename Real>
Tensor<Real> conv_transpose1d(const Tensor<Real>& x, const Tensor<Real>& w,
                              const Tensor<Real>& bias, int64_t stride = 1, int64_t padding = 0) {
  if (x.ndim() != 3 || w.ndim() != 3)
    throw config_error("conv_transpose1d: expected input [B,Ci,T] and weight [Ci,Co,K], got " +
                       shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int64_t B = x.dim(0), Ci = x.dim(1), T = x.dim(2);
  const int64_t Co = w.dim(1), K = w.dim(2);
  if (w.dim(0) != Ci)
    throw config_error("conv_transpose1d: input " + shape_str(x.shape()) +
                       " incompatible with weight " + shape_str(w.shape()));
  if (stride < 1 || padding < 0) throw config_error("conv_transpose1d: bad stride/padding");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Co))
    throw config_error("conv_transpose1d: bias shape " + shape_str(bias.shape()) +
                       " does not match " + std::to_string(Co) + " output channels");
  const int64_t Lfull = (T - 1) * stride + K;
  const int64_t Lout = Lfull - 2 * padding;
  if (Lout <= 0)
    throw config_error("conv_transpose1d: padding " + std::to_string(padding) +
                       " consumes the whole output of length " + std::to_string(Lfull));

  auto full = Tensor<Real>::zeros({B, Co, Lfull});
  const Real* xd = x.data();
  const Real* wd = w.data();
  Real* od = full.mutable_data();
  parallel_for(B * Co, [&](int64_t i0, int64_t i1) {
    for (int64_t bc = i0; bc < i1; ++bc) {
      const int64_t b = bc / Co, co = bc % Co;
      Real* orow = od + bc * Lfull;
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const Real* xrow = xd + (b * Ci + ci) * T;
        const Real* wrow = wd + (ci * Co + co) * K;
        for (int64_t t = 0; t < T; ++t) {
          const Real xv = xrow[t];
          Real* dst = orow + t * stride;
          for (int64_t k = 0; k < K; ++k) dst[k] += xv * wrow[k];
        }
      }
    }
  });
  if (detail::wants_grad(x) || detail::wants_grad(w)) {
    full.set_requires_grad(true);
    const bool gx = detail::wants_grad(x), gw = detail::wants_grad(w);
    detail::record<Real>(
        [xn = x.node(), wn = w.node(), on = full.node(), B, Ci, T, Co, K, Lfull, stride, gx, gw]() {
          if (on->grad.empty()) return;
          const auto& go = on->grad;
          const auto& xv = *xn->vals;
          const auto& wv = *wn->vals;
          if (gx) {
            auto& gxv = xn->ensure_grad();
            parallel_for(B * Ci, [&](int64_t i0, int64_t i1) {
              for (int64_t bc = i0; bc < i1; ++bc) {
                const int64_t b = bc / Ci, ci = bc % Ci;
                Real* grow = gxv.data() + bc * T;
                for (int64_t co = 0; co < Co; ++co) {
                  const Real* gorow = go.data() + (b * Co + co) * Lfull;
                  const Real* wrow = wv.data() + (ci * Co + co) * K;
                  for (int64_t t = 0; t < T; ++t) {
                    Real acc = 0;
                    const Real* src = gorow + t * stride;
                    for (int64_t k = 0; k < K; ++k) acc += src[k] * wrow[k];
                    grow[t] += acc;
                  }
                }
              }
            });
          }
          if (gw) {
            auto& gwv = wn->ensure_grad();
            parallel_for(Ci * Co, [&](int64_t i0, int64_t i1) {
              for (int64_t cc = i0; cc < i1; ++cc) {
                const int64_t ci = cc / Co, co = cc % Co;
                for (int64_t k = 0; k < K; ++k) {
                  Real acc = 0;
                  for (int64_t b = 0; b < B; ++b) {
                    const Real* xrow = xv.data() + (b * Ci + ci) * T;
                    const Real* gorow = go.data() + (b * Co + co) * Lfull;
                    for (int64_t t = 0; t < T; ++t) acc += xrow[t] * gorow[t * stride + k];
                  }
                  gwv[static_cast<size_t>(cc * K + k)] += acc;
                }
              }
            });
          }
        });
  }
  Tensor<Real> out = padding > 0 ? slice_last(full, padding, Lfull - padding) : full;
  if (bias.defined()) {
    // broadcast-add per channel
    auto added = Tensor<Real>::zeros(out.shape());
    const Real* id = out.data();
    const Real* bd = bias.data();
    Real* ad = added.mutable_data();
    const int64_t Tn = out.dim(2);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t co = 0; co < Co; ++co)
        for (int64_t t = 0; t < Tn; ++t)
          ad[(b * Co + co) * Tn + t] = id[(b * Co + co) * Tn + t] + bd[co];
    const bool gi = detail::wants_grad(out), gb = detail::wants_grad(bias);
    if (gi || gb) {
      added.set_requires_grad(true);
      detail::record<Real>([in = out.node(), bn = bias.node(), an = added.node(), B, Co, Tn, gi,
                            gb]() {
        if (an->grad.empty()) return;
        const auto& ga = an->grad;
        if (gi) {
          auto& g = in->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] += ga[i];
        }
        if (gb) {
          auto& g = bn->ensure_grad();
          for (int64_t b = 0; b < B; ++b)
            for (int64_t co = 0; co < Co; ++co) {
              Real acc = 0;
              for (int64_t t = 0; t < Tn; ++t) acc += ga[static_cast<size_t>((b * Co + co) * Tn + t)];
              g[static_cast<size_t>(co)] += acc;
            }
        }
      });
    }
    return added;
  }
  return out;
}

struct Conv2dOpts {
  int64_t stride_h = 1, stride_w = 1;
  int64_t pad_h = 0, pad_w = 0;
  int64_t dil_h = 1, dil_w = 1;
};

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                    const Conv2dOpts& opt = {}) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw config_error("conv2d: expected input [B,C,H,W] and weight [Co,Ci,Kh,Kw], got " +
                       shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(0), Kh = w.dim(2), Kw = w.dim(3);
  if (w.dim(1) != Ci)
    throw config_error("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                       shape_str(w.shape()));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Co))
    throw config_error("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                       std::to_string(Co) + " output channels");
  const int64_t Hp = H + 2 * opt.pad_h, Wp = W + 2 * opt.pad_w;
  const int64_t Ho = (Hp - opt.dil_h * (Kh - 1) - 1) / opt.stride_h + 1;
  const int64_t Wo = (Wp - opt.dil_w * (Kw - 1) - 1) / opt.stride_w + 1;
  if (Ho <= 0 || Wo <= 0)
    throw config_error("conv2d: input " + shape_str(x.shape()) + " too small for weight " +
                       shape_str(w.shape()));

  // zero-pad both spatial axes up front (simplest correct thing; pads are small)
  Tensor<Real> xp = x;
  if (opt.pad_h > 0 || opt.pad_w > 0) {
    xp = pad_last(x, opt.pad_w, opt.pad_w, PadMode::zeros);
    if (opt.pad_h > 0) {
      auto v = view(xp, {B, Ci, H, Wp});
      // pad H by viewing [B*Ci, H, Wp] as last-axis length H after transpose-free trick:
      // easier: materialize a dedicated pad since H is axis 2.
      auto padded = Tensor<Real>::zeros({B, Ci, Hp, Wp});
      const Real* sd = v.data();
      Real* dd = padded.mutable_data();
      for (int64_t bc = 0; bc < B * Ci; ++bc)
        for (int64_t h = 0; h < H; ++h)
          std::copy_n(sd + (bc * H + h) * Wp, Wp, dd + (bc * Hp + h + opt.pad_h) * Wp);
      if (detail::wants_grad(v)) {
        padded.set_requires_grad(true);
        detail::record<Real>([vn = v.node(), pn = padded.node(), B, Ci, H, Hp, Wp,
                              ph = opt.pad_h]() {
          if (pn->grad.empty()) return;
          auto& gv = vn->ensure_grad();
          const auto& gp = pn->grad;
          for (int64_t bc = 0; bc < B * Ci; ++bc)
            for (int64_t h = 0; h < H; ++h)
              for (int64_t w2 = 0; w2 < Wp; ++w2)
                gv[static_cast<size_t>((bc * H + h) * Wp + w2)] +=
                    gp[static_cast<size_t>((bc * Hp + h + ph) * Wp + w2)];
        });
      }
      xp = padded;
    } else {
      xp = view(xp, {B, Ci, H, Wp});
    }
  }

  auto out = Tensor<Real>::zeros({B, Co, Ho, Wo});
  const Real* xd = xp.data();
  const Real* wd = w.data();
  const Real* bd = bias.defined() ? bias.data() : nullptr;
  Real* od = out.mutable_data();
  parallel_for(B * Co, [&](int64_t i0, int64_t i1) {
    for (int64_t bc = i0; bc < i1; ++bc) {
      const int64_t b = bc / Co, co = bc % Co;
      Real* oimg = od + bc * Ho * Wo;
      if (bd)
        for (int64_t i = 0; i < Ho * Wo; ++i) oimg[i] = bd[co];
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const Real* ximg = xd + (b * Ci + ci) * Hp * Wp;
        const Real* wimg = wd + (co * Ci + ci) * Kh * Kw;
        for (int64_t kh = 0; kh < Kh; ++kh)
          for (int64_t kw = 0; kw < Kw; ++kw) {
            const Real wv = wimg[kh * Kw + kw];
            const int64_t oh_off = kh * opt.dil_h, ow_off = kw * opt.dil_w;
            for (int64_t ho = 0; ho < Ho; ++ho) {
              const Real* xrow = ximg + (ho * opt.stride_h + oh_off) * Wp + ow_off;
              Real* orow = oimg + ho * Wo;
              for (int64_t wo = 0; wo < Wo; ++wo) orow[wo] += wv * xrow[wo * opt.stride_w];
            }
          }
      }
    }
  });

  const bool gx = detail::wants_grad(xp), gw = detail::wants_grad(w),
             gb = bias.defined() && detail::wants_grad(bias);
  if (gx || gw || gb) {
    out.set_requires_grad(true);
    auto bn = bias.defined() ? bias.node() : nullptr;
    detail::record<Real>([xn = xp.node(), wn = w.node(), bn, on = out.node(), B, Ci, Hp, Wp, Co,
                          Kh, Kw, Ho, Wo, opt, gx, gw, gb]() {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      const auto& xv = *xn->vals;
      const auto& wv = *wn->vals;
      if (gx) {
        auto& gxv = xn->ensure_grad();
        parallel_for(B * Ci, [&](int64_t i0, int64_t i1) {
          for (int64_t bc = i0; bc < i1; ++bc) {
            const int64_t b = bc / Ci, ci = bc % Ci;
            Real* gimg = gxv.data() + bc * Hp * Wp;
            for (int64_t co = 0; co < Co; ++co) {
              const Real* goimg = go.data() + (b * Co + co) * Ho * Wo;
              const Real* wimg = wv.data() + (co * Ci + ci) * Kh * Kw;
              for (int64_t kh = 0; kh < Kh; ++kh)
                for (int64_t kw = 0; kw < Kw; ++kw) {
                  const Real wvv = wimg[kh * Kw + kw];
                  for (int64_t ho = 0; ho < Ho; ++ho) {
                    const int64_t h = ho * opt.stride_h + kh * opt.dil_h;
                    Real* grow = gimg + h * Wp + kw * opt.dil_w;
                    const Real* gorow = goimg + ho * Wo;
                    for (int64_t wo = 0; wo < Wo; ++wo)
                      grow[wo * opt.stride_w] += wvv * gorow[wo];
                  }
                }
            }
          }
        });
      }
      if (gw) {
        auto& gwv = wn->ensure_grad();
        parallel_for(Co * Ci, [&](int64_t i0, int64_t i1) {
          for (int64_t cc = i0; cc < i1; ++cc) {
            const int64_t co = cc / Ci, ci = cc % Ci;
            for (int64_t kh = 0; kh < Kh; ++kh)
              for (int64_t kw = 0; kw < Kw; ++kw) {
                Real acc = 0;
                for (int64_t b = 0; b < B; ++b) {
                  const Real* goimg = go.data() + (b * Co + co) * Ho * Wo;
                  const Real* ximg = xv.data() + (b * Ci + ci) * Hp * Wp;
                  for (int64_t ho = 0; ho < Ho; ++ho) {
                    const Real* xrow =
                        ximg + (ho * opt.stride_h + kh * opt.dil_h) * Wp + kw * opt.dil_w;
                    const Real* gorow = goimg + ho * Wo;
                    for (int64_t wo = 0; wo < Wo; ++wo) acc += gorow[wo] * xrow[wo * opt.stride_w];
                  }
                }
                gwv[static_cast<size_t>(cc * Kh * Kw + kh * Kw + kw)] += acc;
              }
          }
        });
      }
      if (gb) {
        auto& gbv = bn->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t co = 0; co < Co; ++co) {
            Real acc = 0;
            const Real* goimg = go.data() + (b * Co + co) * Ho * Wo;
            for (int64_t i = 0; i < Ho * Wo; ++i) acc += goimg[i];
            gbv[static_cast<size_t>(co)] += acc;
          }
      }
    });
  }
  return out;
}

// Location-variable convolution: x split into F equal segments of length
// T/F; segment f is convolved (same zero padding, odd K) with its own kernel
// kernels[b, (co*Ci+ci)*K+k, f] and offset bias[b, co, f].
template <typename Real>
Tensor<Real> lvc_conv1d(const Tensor<Real>& x, const Tensor<Real>& kernels,
                        const Tensor<Real>& bias, int64_t out_channels) {
  if (x.ndim() != 3 || kernels.ndim() != 3 || bias.ndim() != 3)
    throw config_error("lvc_conv1d: expected x [B,C,T], kernels [B,Co*C*K,F], bias [B,Co,F]");
  const int64_t B = x.dim(0), Ci = x.dim(1), T = x.dim(2);
  const int64_t F = kernels.dim(2), Co = out_channels;
  if (bias.dim(0) != B || bias.dim(1) != Co || bias.dim(2) != F || kernels.dim(0) != B)
    throw config_error("lvc_conv1d: kernels " + shape_str(kernels.shape()) + " / bias " +
                       shape_str(bias.shape()) + " inconsistent with x " + shape_str(x.shape()));
  if (T % F != 0)
    throw config_error("lvc_conv1d: length " + std::to_string(T) + " not divisible by " +
                       std::to_string(F) + " segments");
  if (kernels.dim(1) % (Co * Ci) != 0)
    throw config_error("lvc_conv1d: kernel rows " + std::to_string(kernels.dim(1)) +
                       " not divisible by Co*Ci = " + std::to_string(Co * Ci));
  const int64_t K = kernels.dim(1) / (Co * Ci);
  if (K % 2 == 0) throw config_error("lvc_conv1d: kernel size must be odd for same padding");
  const int64_t L = T / F, P = (K - 1) / 2;

  auto out = Tensor<Real>::zeros({B, Co, T});
  const Real* xd = x.data();
  const Real* kd = kernels.data();
  const Real* bd = bias.data();
  Real* od = out.mutable_data();
  const int64_t KR = Co * Ci * K;  // kernel rows
  parallel_for(B * Co, [&](int64_t i0, int64_t i1) {
    for (int64_t bc = i0; bc < i1; ++bc) {
      const int64_t b = bc / Co, co = bc % Co;
      Real* orow = od + bc * T;
      for (int64_t f = 0; f < F; ++f) {
        const Real bv = bd[(b * Co + co) * F + f];
        Real* oseg = orow + f * L;
        for (int64_t v = 0; v < L; ++v) oseg[v] = bv;
        for (int64_t ci = 0; ci < Ci; ++ci) {
          const Real* xseg = xd + (b * Ci + ci) * T + f * L;
          for (int64_t k = 0; k < K; ++k) {
            const Real kv = kd[(b * KR + (co * Ci + ci) * K + k) * F + f];
            const int64_t off = k - P;  // source = v + off within the segment
            const int64_t v0 = std::max<int64_t>(0, -off);
            const int64_t v1 = std::min<int64_t>(L, L - off);
            for (int64_t v = v0; v < v1; ++v) oseg[v] += kv * xseg[v + off];
          }
        }
      }
    }
  });

  const bool gx = detail::wants_grad(x), gk = detail::wants_grad(kernels),
             gb = detail::wants_grad(bias);
  if (gx || gk || gb) {
    out.set_requires_grad(true);
    detail::record<Real>([xn = x.node(), kn = kernels.node(), bn = bias.node(), on = out.node(),
                          B, Ci, T, F, Co, K, L, P, KR, gx, gk, gb]() {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      const auto& xv = *xn->vals;
      const auto& kv = *kn->vals;
      if (gx) {
        auto& gxv = xn->ensure_grad();
        parallel_for(B * Ci, [&](int64_t i0, int64_t i1) {
          for (int64_t bc = i0; bc < i1; ++bc) {
            const int64_t b = bc / Ci, ci = bc % Ci;
            Real* grow = gxv.data() + bc * T;
            for (int64_t f = 0; f < F; ++f) {
              Real* gseg = grow + f * L;
              for (int64_t co = 0; co < Co; ++co) {
                const Real* goseg = go.data() + (b * Co + co) * T + f * L;
                for (int64_t k = 0; k < K; ++k) {
                  const Real kvv = kv[static_cast<size_t>((b * KR + (co * Ci + ci) * K + k) * F + f)];
                  const int64_t off = k - P;
                  // out v reads x at v+off; so x at u feeds out at u-off
                  const int64_t u0 = std::max<int64_t>(0, off);
                  const int64_t u1 = std::min<int64_t>(L, L + off);
                  for (int64_t u = u0; u < u1; ++u) gseg[u] += kvv * goseg[u - off];
                }
              }
            }
          }
        });
      }
      if (gk) {
        auto& gkv = kn->ensure_grad();
        parallel_for(B * Co, [&](int64_t i0, int64_t i1) {
          for (int64_t bc = i0; bc < i1; ++bc) {
            const int64_t b = bc / Co, co = bc % Co;
            for (int64_t ci = 0; ci < Ci; ++ci)
              for (int64_t k = 0; k < K; ++k) {
                const int64_t off = k - P;
                for (int64_t f = 0; f < F; ++f) {
                  const Real* goseg = go.data() + (b * Co + co) * T + f * L;
                  const Real* xseg = xv.data() + (b * Ci + ci) * T + f * L;
                  Real acc = 0;
                  const int64_t v0 = std::max<int64_t>(0, -off);
                  const int64_t v1 = std::min<int64_t>(L, L - off);
                  for (int64_t v = v0; v < v1; ++v) acc += goseg[v] * xseg[v + off];
                  gkv[static_cast<size_t>((b * KR + (co * Ci + ci) * K + k) * F + f)] += acc;
                }
              }
          }
        });
      }
      if (gb) {
        auto& gbv = bn->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t co = 0; co < Co; ++co)
            for (int64_t f = 0; f < F; ++f) {
              Real acc = 0;
              const Real* goseg = go.data() + (b * Co + co) * T + f * L;
              for (int64_t v = 0; v < L; ++v) acc += goseg[v];
              gbv[static_cast<size_t>((b * Co + co) * F + f)] += acc;
            }
      }
    });
  }
  return out;
}

// Mean over non-overlapping windows; trailing samples that do not fill a
// window are dropped.
template <typename Real>
Tensor<Real> avg_pool1d(const Tensor<Real>& x, int64_t factor) {
  if (factor < 1) throw config_error("avg_pool1d: factor must be >= 1");
  if (factor == 1) return x;
  const int64_t T = x.dim(x.ndim() - 1);
  const int64_t To = T / factor;
  if (To == 0)
    throw config_error("avg_pool1d: factor " + std::to_string(factor) + " exceeds length " +
                       std::to_string(T));
  int64_t rows = 1;
  for (size_t i = 0; i + 1 < x.ndim(); ++i) rows *= x.dim(i);
  std::vector<int64_t> oshape = x.shape();
  oshape.back() = To;
  auto out = Tensor<Real>::zeros(oshape);
  const Real* xd = x.data();
  Real* od = out.mutable_data();
  const Real inv = Real(1) / static_cast<Real>(factor);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t t = 0; t < To; ++t) {
      Real acc = 0;
      const Real* src = xd + r * T + t * factor;
      for (int64_t k = 0; k < factor; ++k) acc += src[k];
      od[r * To + t] = acc * inv;
    }
  if (detail::wants_grad(x)) {
    out.set_requires_grad(true);
    detail::record<Real>([xn = x.node(), on = out.node(), rows, T, To, factor, inv]() {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      const auto& go = on->grad;
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t t = 0; t < To; ++t) {
          const Real g = go[static_cast<size_t>(r * To + t)] * inv;
          for (int64_t k = 0; k < factor; ++k) gx[static_cast<size_t>(r * T + t * factor + k)] += g;
        }
    });
  }
  return out;
}

// [B,C,T] -> [B,C,ceil(T/p),p], reflect-padding the tail to fill the last row.
template <typename Real>
Tensor<Real> reshape2d(const Tensor<Real>& x, int64_t period) {
  if (period < 1) throw config_error("reshape2d: period must be >= 1");
  if (x.ndim() != 3) throw config_error("reshape2d: expected [B,C,T], got " + shape_str(x.shape()));
  const int64_t T = x.dim(2);
  const int64_t rows = (T + period - 1) / period;
  const int64_t pad = rows * period - T;
  Tensor<Real> xp = pad > 0 ? pad_last(x, 0, pad, PadMode::reflect) : x;
  return view(xp, {x.dim(0), x.dim(1), rows, period});
}

}  // namespace vnet

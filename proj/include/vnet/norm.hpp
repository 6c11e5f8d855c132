#pragma once

#include "vnet/params.hpp"
#include "vnet/tensor.hpp"

namespace vnet {

// w[co,...] = g[co] * v[co,...] / ||v[co,...]||, norm floored at 1e-12.
template <typename Real>
Tensor<Real> weight_norm(const Tensor<Real>& v, const Tensor<Real>& g) {
  if (g.ndim() != 1 || g.dim(0) != v.dim(0))
    throw config_error("weight_norm: g " + shape_str(g.shape()) + " must have one entry per row of " +
                       shape_str(v.shape()));
  const int64_t Co = v.dim(0);
  const int64_t R = v.numel() / Co;
  auto out = Tensor<Real>::zeros(v.shape());
  const Real* vd = v.data();
  const Real* gd = g.data();
  Real* od = out.mutable_data();
  std::vector<Real> norms(static_cast<size_t>(Co));
  for (int64_t c = 0; c < Co; ++c) {
    Real s = 0;
    for (int64_t i = 0; i < R; ++i) s += vd[c * R + i] * vd[c * R + i];
    const Real n = std::sqrt(s + Real(1e-24));
    norms[static_cast<size_t>(c)] = n;
    const Real scale = gd[c] / n;
    for (int64_t i = 0; i < R; ++i) od[c * R + i] = scale * vd[c * R + i];
  }
  const bool gv = detail::wants_grad(v), gg = detail::wants_grad(g);
  if (gv || gg) {
    out.set_requires_grad(true);
    detail::record<Real>([vn = v.node(), gn = g.node(), on = out.node(), Co, R, norms, gv, gg]() {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      const auto& vv = *vn->vals;
      const auto& gval = *gn->vals;
      for (int64_t c = 0; c < Co; ++c) {
        const Real n = norms[static_cast<size_t>(c)];
        Real dot = 0;  // <dL/dw, v> per row
        for (int64_t i = 0; i < R; ++i)
          dot += go[static_cast<size_t>(c * R + i)] * vv[static_cast<size_t>(c * R + i)];
        if (gg) gn->ensure_grad()[static_cast<size_t>(c)] += dot / n;
        if (gv) {
          auto& gvv = vn->ensure_grad();
          const Real a = gval[static_cast<size_t>(c)] / n;
          const Real b = gval[static_cast<size_t>(c)] * dot / (n * n * n);
          for (int64_t i = 0; i < R; ++i)
            gvv[static_cast<size_t>(c * R + i)] +=
                a * go[static_cast<size_t>(c * R + i)] - b * vv[static_cast<size_t>(c * R + i)];
        }
      }
    });
  }
  return out;
}

// Sets g[co] = ||v[co,...]|| so the effective weight starts equal to v.
template <typename Real>
void weight_norm_init(const Tensor<Real>& v, Tensor<Real>& g) {
  const int64_t Co = v.dim(0);
  const int64_t R = v.numel() / Co;
  for (int64_t c = 0; c < Co; ++c) {
    Real s = 0;
    for (int64_t i = 0; i < R; ++i) s += v.data()[c * R + i] * v.data()[c * R + i];
    g.mutable_data()[c] = std::sqrt(s + Real(1e-24));
  }
}

// Largest-singular-value estimate by power iteration on W viewed as
// [rows = dim 0, cols = rest]. u and v live in persistent buffers. In
// training mode each call advances the iteration once; freezing pins the
// current estimate so the normalized weight becomes an exact linear map
// (finite differences then agree with the detached-sigma backward).
template <typename Real>
class SpectralNorm {
 public:
  SpectralNorm() = default;
  SpectralNorm(ParamStore<Real>& store, const std::string& name, const Tensor<Real>& w, Rng& rng,
               int burn_in = 30) {
    rows_ = w.dim(0);
    cols_ = w.numel() / rows_;
    u_ = store.add_buffer(name + ".sn_u", {rows_});
    v_ = store.add_buffer(name + ".sn_v", {cols_});
    for (int64_t i = 0; i < rows_; ++i) u_.mutable_data()[i] = static_cast<Real>(rng.normal());
    normalize(u_.mutable_data(), rows_);
    for (int i = 0; i < burn_in; ++i) iterate(w);
  }

  // Re-attach to buffers after they were restored from a checkpoint.
  void attach(Tensor<Real> u, Tensor<Real> v) {
    u_ = std::move(u);
    v_ = std::move(v);
  }

  void freeze(const Tensor<Real>& w) {
    frozen_sigma_ = sigma(w);
    frozen_ = true;
  }
  void unfreeze() { frozen_ = false; }
  bool frozen() const { return frozen_; }

  Real current_sigma(const Tensor<Real>& w) const { return frozen_ ? frozen_sigma_ : sigma(w); }

  Tensor<Real> apply(const Tensor<Real>& w) {
    Real s;
    if (frozen_) {
      s = frozen_sigma_;
    } else {
      iterate(w);
      s = sigma(w);
    }
    if (s < Real(1e-12)) s = Real(1e-12);
    return affine(w, Real(1) / s, Real(0));
  }

 private:
  void iterate(const Tensor<Real>& w) {
    const Real* wd = w.data();
    Real* ud = u_.mutable_data();
    Real* vd = v_.mutable_data();
    // v <- normalize(W^T u)
    for (int64_t j = 0; j < cols_; ++j) {
      Real acc = 0;
      for (int64_t i = 0; i < rows_; ++i) acc += wd[i * cols_ + j] * ud[i];
      vd[j] = acc;
    }
    normalize(vd, cols_);
    // u <- normalize(W v)
    for (int64_t i = 0; i < rows_; ++i) {
      Real acc = 0;
      for (int64_t j = 0; j < cols_; ++j) acc += wd[i * cols_ + j] * vd[j];
      ud[i] = acc;
    }
    normalize(ud, rows_);
  }

  Real sigma(const Tensor<Real>& w) const {
    const Real* wd = w.data();
    const Real* ud = u_.data();
    const Real* vd = v_.data();
    Real s = 0;
    for (int64_t i = 0; i < rows_; ++i) {
      Real acc = 0;
      for (int64_t j = 0; j < cols_; ++j) acc += wd[i * cols_ + j] * vd[j];
      s += ud[i] * acc;
    }
    return std::abs(s);
  }

  static void normalize(Real* x, int64_t n) {
    Real s = 0;
    for (int64_t i = 0; i < n; ++i) s += x[i] * x[i];
    const Real inv = Real(1) / std::sqrt(s + Real(1e-24));
    for (int64_t i = 0; i < n; ++i) x[i] *= inv;
  }

  Tensor<Real> u_, v_;
  int64_t rows_ = 0, cols_ = 0;
  bool frozen_ = false;
  Real frozen_sigma_ = 1;
};

}  // namespace vnet

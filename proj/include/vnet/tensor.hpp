#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>

#include "vnet/common.hpp"

namespace vnet {

// Reverse-mode autodiff over dense n-d arrays. Values are immutable once a
// tensor has been recorded on the tape; parameters are mutated only between
// steps, when the tape is empty.
template <typename Real>
struct TensorNode {
  std::vector<int64_t> shape;
  std::shared_ptr<std::vector<Real>> vals;
  std::vector<Real> grad;  // empty until first touched by backward
  bool requires_grad = false;

  int64_t numel() const { return shape_numel(shape); }
  std::vector<Real>& ensure_grad() {
    if (grad.empty()) grad.assign(static_cast<size_t>(numel()), Real(0));
    return grad;
  }
};

// Thread-confined recording of backward closures, executed in reverse order.
template <typename Real>
struct Tape {
  std::vector<std::function<void()>> ops;
  bool enabled = true;

  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }
};

template <typename Real>
bool grad_recording() {
  return Tape<Real>::current().enabled;
}

template <typename Real>
struct NoGrad {
  NoGrad() : prev_(Tape<Real>::current().enabled) { Tape<Real>::current().enabled = false; }
  ~NoGrad() { Tape<Real>::current().enabled = prev_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

template <typename Real>
class Tensor {
 public:
  using Node = TensorNode<Real>;

  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->vals =
        std::make_shared<std::vector<Real>>(static_cast<size_t>(t.node_->numel()), Real(0));
    return t;
  }

  static Tensor full(std::vector<int64_t> shape, Real v) {
    Tensor t = zeros(std::move(shape));
    auto& d = *t.node_->vals;
    std::fill(d.begin(), d.end(), v);
    return t;
  }

  static Tensor from(std::vector<int64_t> shape, std::vector<Real> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw config_error("Tensor::from: shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->vals = std::make_shared<std::vector<Real>>(std::move(values));
    return t;
  }

  static Tensor scalar(Real v) { return from({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int64_t>& shape() const { return node_->shape; }
  int64_t dim(size_t i) const { return node_->shape[i]; }
  size_t ndim() const { return node_->shape.size(); }
  int64_t numel() const { return node_->numel(); }

  const Real* data() const { return node_->vals->data(); }
  Real* mutable_data() { return node_->vals->data(); }
  const std::vector<Real>& values() const { return *node_->vals; }

  Real value() const {
    if (numel() != 1) throw usage_error("Tensor::value: tensor is not scalar");
    return (*node_->vals)[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  const std::vector<Real>* grad() const {
    return node_ && !node_->grad.empty() ? &node_->grad : nullptr;
  }
  std::vector<Real>& grad_ref() { return node_->ensure_grad(); }
  void clear_grad() { node_->grad.clear(); }

  // Shares values, drops tape connectivity.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->vals = node_->vals;
    return t;
  }

  void assert_finite(const std::string& what) const {
    const auto& d = *node_->vals;
    for (size_t i = 0; i < d.size(); ++i) {
      if (!std::isfinite(static_cast<double>(d[i])))
        throw fault_error(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename Real, class F>
void record(F&& fn) {
  Tape<Real>::current().ops.emplace_back(std::forward<F>(fn));
}

template <typename Real>
bool wants_grad(const Tensor<Real>& t) {
  return grad_recording<Real>() && t.requires_grad();
}

}  // namespace detail

// Seeds d(loss)/d(loss)=1, runs the tape backwards, then clears it. Grads
// accumulate by summation so reusing a tensor adds both path contributions.
template <typename Real>
void backward(const Tensor<Real>& loss) {
  if (loss.numel() != 1) throw usage_error("backward: loss must be a scalar tensor");
  auto& tape = Tape<Real>::current();
  loss.node()->ensure_grad()[0] += Real(1);
  for (auto it = tape.ops.rbegin(); it != tape.ops.rend(); ++it) (*it)();
  tape.ops.clear();
}

template <typename Real>
void clear_tape() {
  Tape<Real>::current().ops.clear();
}

// ---------------------------------------------------------------------------
// Pointwise ops
// ---------------------------------------------------------------------------

namespace detail {

// fwd: Real -> Real. dfdxy(x, y) -> local derivative.
template <typename Real, class Fwd, class Deriv>
Tensor<Real> unary_pointwise(const Tensor<Real>& x, Fwd fwd, Deriv dfdxy) {
  auto out = Tensor<Real>::zeros(x.shape());
  const Real* xd = x.data();
  Real* od = out.mutable_data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) od[i] = fwd(xd[i]);
  if (wants_grad(x)) {
    out.set_requires_grad(true);
    record<Real>([xn = x.node(), on = out.node(), dfdxy]() {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      const auto& go = on->grad;
      const auto& xv = *xn->vals;
      const auto& yv = *on->vals;
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * dfdxy(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace detail

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& x) {
  return detail::unary_pointwise(
      x, [](Real v) { return -v; }, [](Real, Real) { return Real(-1); });
}

// a*x + b
template <typename Real>
Tensor<Real> affine(const Tensor<Real>& x, Real a, Real b) {
  return detail::unary_pointwise(
      x, [a, b](Real v) { return a * v + b; }, [a](Real, Real) { return a; });
}

template <typename Real>
Tensor<Real> square(const Tensor<Real>& x) {
  return detail::unary_pointwise(
      x, [](Real v) { return v * v; }, [](Real xv, Real) { return Real(2) * xv; });
}

// Subgradient at 0 is 0.
template <typename Real>
Tensor<Real> abs(const Tensor<Real>& x) {
  return detail::unary_pointwise(
      x, [](Real v) { return std::abs(v); },
      [](Real xv, Real) { return xv > 0 ? Real(1) : (xv < 0 ? Real(-1) : Real(0)); });
}

// sqrt(x + eps); eps keeps the derivative finite at 0.
template <typename Real>
Tensor<Real> sqrt_guard(const Tensor<Real>& x, Real eps) {
  return detail::unary_pointwise(
      x, [eps](Real v) { return std::sqrt(v + eps); },
      [](Real, Real yv) { return Real(0.5) / yv; });
}

// log(max(x, floor)); zero derivative below the floor.
template <typename Real>
Tensor<Real> log_clamped(const Tensor<Real>& x, Real floor) {
  return detail::unary_pointwise(
      x, [floor](Real v) { return std::log(std::max(v, floor)); },
      [floor](Real xv, Real) { return xv > floor ? Real(1) / xv : Real(0); });
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& x) {
  return detail::unary_pointwise(
      x, [](Real v) { return std::exp(v); }, [](Real, Real yv) { return yv; });
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
  return detail::unary_pointwise(
      x, [](Real v) { return std::tanh(v); },
      [](Real, Real yv) { return Real(1) - yv * yv; });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  return detail::unary_pointwise(
      x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
      [](Real, Real yv) { return yv * (Real(1) - yv); });
}

// max(x, slope*x); the subgradient at exactly 0 is the negative-side slope.
template <typename Real>
Tensor<Real> leaky_relu(const Tensor<Real>& x, Real slope) {
  if (!(slope > Real(0) && slope < Real(1)))
    throw config_error("leaky_relu: slope must lie in (0,1)");
  return detail::unary_pointwise(
      x, [slope](Real v) { return v > 0 ? v : slope * v; },
      [slope](Real xv, Real) { return xv > 0 ? Real(1) : slope; });
}

namespace detail {

template <typename Real>
void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape())
    throw config_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
}

}  // namespace detail

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = Tensor<Real>::zeros(a.shape());
  const Real* ad = a.data();
  const Real* bd = b.data();
  Real* od = out.mutable_data();
  for (int64_t i = 0; i < out.numel(); ++i) od[i] = ad[i] + bd[i];
  const bool ga = detail::wants_grad(a), gb = detail::wants_grad(b);
  if (ga || gb) {
    out.set_requires_grad(true);
    detail::record<Real>([an = a.node(), bn = b.node(), on = out.node(), ga, gb]() {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      if (ga) {
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
      if (gb) {
        auto& g = bn->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = Tensor<Real>::zeros(a.shape());
  const Real* ad = a.data();
  const Real* bd = b.data();
  Real* od = out.mutable_data();
  for (int64_t i = 0; i < out.numel(); ++i) od[i] = ad[i] - bd[i];
  const bool ga = detail::wants_grad(a), gb = detail::wants_grad(b);
  if (ga || gb) {
    out.set_requires_grad(true);
    detail::record<Real>([an = a.node(), bn = b.node(), on = out.node(), ga, gb]() {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      if (ga) {
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
      if (gb) {
        auto& g = bn->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] -= go[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = Tensor<Real>::zeros(a.shape());
  const Real* ad = a.data();
  const Real* bd = b.data();
  Real* od = out.mutable_data();
  for (int64_t i = 0; i < out.numel(); ++i) od[i] = ad[i] * bd[i];
  const bool ga = detail::wants_grad(a), gb = detail::wants_grad(b);
  if (ga || gb) {
    out.set_requires_grad(true);
    detail::record<Real>([an = a.node(), bn = b.node(), on = out.node(), ga, gb]() {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      const auto& av = *an->vals;
      const auto& bv = *bn->vals;
      if (ga) {
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += go[i] * bv[i];
      }
      if (gb) {
        auto& g = bn->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

// tanh(a) * sigmoid(b), fused.
template <typename Real>
Tensor<Real> gated_activation(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::check_same_shape(a, b, "gated_activation");
  auto out = Tensor<Real>::zeros(a.shape());
  const Real* ad = a.data();
  const Real* bd = b.data();
  Real* od = out.mutable_data();
  for (int64_t i = 0; i < out.numel(); ++i) {
    const Real t = std::tanh(ad[i]);
    const Real s = Real(1) / (Real(1) + std::exp(-bd[i]));
    od[i] = t * s;
  }
  const bool ga = detail::wants_grad(a), gb = detail::wants_grad(b);
  if (ga || gb) {
    out.set_requires_grad(true);
    detail::record<Real>([an = a.node(), bn = b.node(), on = out.node(), ga, gb]() {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      const auto& av = *an->vals;
      const auto& bv = *bn->vals;
      for (size_t i = 0; i < go.size(); ++i) {
        const Real t = std::tanh(av[i]);
        const Real s = Real(1) / (Real(1) + std::exp(-bv[i]));
        if (ga) an->ensure_grad()[i] += go[i] * (Real(1) - t * t) * s;
        if (gb) bn->ensure_grad()[i] += go[i] * t * s * (Real(1) - s);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real acc = 0;
  const Real* xd = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) acc += xd[i];
  auto out = Tensor<Real>::scalar(acc);
  if (detail::wants_grad(x)) {
    out.set_requires_grad(true);
    detail::record<Real>([xn = x.node(), on = out.node()]() {
      if (on->grad.empty()) return;
      const Real g = on->grad[0];
      auto& gx = xn->ensure_grad();
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  const Real inv = Real(1) / static_cast<Real>(x.numel());
  Real acc = 0;
  const Real* xd = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) acc += xd[i];
  auto out = Tensor<Real>::scalar(acc * inv);
  if (detail::wants_grad(x)) {
    out.set_requires_grad(true);
    detail::record<Real>([xn = x.node(), on = out.node(), inv]() {
      if (on->grad.empty()) return;
      const Real g = on->grad[0] * inv;
      auto& gx = xn->ensure_grad();
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

// Treats x as [rows, numel/rows] and sums each row.
template <typename Real>
Tensor<Real> row_sums(const Tensor<Real>& x, int64_t rows) {
  if (rows <= 0 || x.numel() % rows != 0)
    throw config_error("row_sums: rows " + std::to_string(rows) + " does not divide " +
                       shape_str(x.shape()));
  const int64_t cols = x.numel() / rows;
  auto out = Tensor<Real>::zeros({rows});
  const Real* xd = x.data();
  Real* od = out.mutable_data();
  for (int64_t r = 0; r < rows; ++r) {
    Real acc = 0;
    for (int64_t c = 0; c < cols; ++c) acc += xd[r * cols + c];
    od[r] = acc;
  }
  if (detail::wants_grad(x)) {
    out.set_requires_grad(true);
    detail::record<Real>([xn = x.node(), on = out.node(), rows, cols]() {
      if (on->grad.empty()) return;
      const auto& go = on->grad;
      auto& gx = xn->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) gx[static_cast<size_t>(r * cols + c)] += go[static_cast<size_t>(r)];
    });
  }
  return out;
}

// Same storage, new shape; gradient passes through element-wise.
template <typename Real>
Tensor<Real> view(const Tensor<Real>& x, std::vector<int64_t> shape) {
  if (shape_numel(shape) != x.numel())
    throw config_error("view: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto out = Tensor<Real>::from(std::move(shape), *x.node()->vals);
  if (detail::wants_grad(x)) {
    out.set_requires_grad(true);
    detail::record<Real>([xn = x.node(), on = out.node()]() {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      const auto& go = on->grad;
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

// Slice [c0, c1) along axis 1 of [B, C, ...].
template <typename Real>
Tensor<Real> slice_channels(const Tensor<Real>& x, int64_t c0, int64_t c1) {
  if (x.ndim() < 2) throw config_error("slice_channels: need at least 2 dims");
  const int64_t B = x.dim(0), C = x.dim(1);
  if (!(0 <= c0 && c0 < c1 && c1 <= C)) throw config_error("slice_channels: bad range");
  int64_t inner = 1;
  for (size_t i = 2; i < x.ndim(); ++i) inner *= x.dim(i);
  std::vector<int64_t> oshape = x.shape();
  oshape[1] = c1 - c0;
  auto out = Tensor<Real>::zeros(oshape);
  const Real* xd = x.data();
  Real* od = out.mutable_data();
  const int64_t oc = c1 - c0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < oc; ++c)
      std::copy_n(xd + (b * C + c0 + c) * inner, inner, od + (b * oc + c) * inner);
  if (detail::wants_grad(x)) {
    out.set_requires_grad(true);
    detail::record<Real>([xn = x.node(), on = out.node(), B, C, c0, oc, inner]() {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      const auto& go = on->grad;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < oc; ++c)
          for (int64_t i = 0; i < inner; ++i)
            gx[static_cast<size_t>((b * C + c0 + c) * inner + i)] +=
                go[static_cast<size_t>((b * oc + c) * inner + i)];
    });
  }
  return out;
}

// Slice [t0, t1) along the last axis.
template <typename Real>
Tensor<Real> slice_last(const Tensor<Real>& x, int64_t t0, int64_t t1) {
  const int64_t T = x.dim(x.ndim() - 1);
  if (!(0 <= t0 && t0 < t1 && t1 <= T)) throw config_error("slice_last: bad range");
  int64_t rows = 1;
  for (size_t i = 0; i + 1 < x.ndim(); ++i) rows *= x.dim(i);
  std::vector<int64_t> oshape = x.shape();
  oshape.back() = t1 - t0;
  auto out = Tensor<Real>::zeros(oshape);
  const Real* xd = x.data();
  Real* od = out.mutable_data();
  const int64_t ot = t1 - t0;
  for (int64_t r = 0; r < rows; ++r) std::copy_n(xd + r * T + t0, ot, od + r * ot);
  if (detail::wants_grad(x)) {
    out.set_requires_grad(true);
    detail::record<Real>([xn = x.node(), on = out.node(), rows, T, t0, ot]() {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      const auto& go = on->grad;
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t t = 0; t < ot; ++t)
          gx[static_cast<size_t>(r * T + t0 + t)] += go[static_cast<size_t>(r * ot + t)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Max over coordinates of |analytic - central difference| normalized by
// max(|analytic|, |fd|, denom_floor). Use 64-bit mode; 32-bit differences
// drown in rounding noise. The floor decides how small a gradient can be
// certified relatively: below it the check degrades to an absolute bound of
// threshold * floor, which is where finite differences bottom out anyway once
// the loss magnitude times machine epsilon crosses eps.
template <typename Real>
double grad_check(const std::function<Tensor<Real>(const Tensor<Real>&)>& f, Tensor<Real> point,
                  double eps = 1e-5, double denom_floor = 1e-8) {
  clear_tape<Real>();
  point.set_requires_grad(true);
  point.clear_grad();
  Tensor<Real> y = f(point);
  if (y.numel() != 1) throw usage_error("grad_check: f must return a scalar");
  backward(y);
  std::vector<double> analytic(static_cast<size_t>(point.numel()), 0.0);
  if (point.grad())
    for (size_t i = 0; i < analytic.size(); ++i) analytic[i] = static_cast<double>((*point.grad())[i]);
  point.clear_grad();
  point.set_requires_grad(false);

  double max_err = 0.0;
  {
    NoGrad<Real> ng;
    Real* pd = point.mutable_data();
    for (int64_t i = 0; i < point.numel(); ++i) {
      const Real keep = pd[i];
      pd[i] = keep + static_cast<Real>(eps);
      const double fp = static_cast<double>(f(point).value());
      pd[i] = keep - static_cast<Real>(eps);
      const double fm = static_cast<double>(f(point).value());
      pd[i] = keep;
      const double fd = (fp - fm) / (2.0 * eps);
      const double a = analytic[static_cast<size_t>(i)];
      const double denom = std::max({std::abs(a), std::abs(fd), denom_floor});
      max_err = std::max(max_err, std::abs(a - fd) / denom);
    }
  }
  return max_err;
}

}  // namespace vnet

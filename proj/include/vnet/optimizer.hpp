#pragma once

#include "vnet/params.hpp"

namespace vnet {

template <typename Real>
class Adam {
 public:
  struct State {
    std::vector<Real> m, v;
  };

  Adam() = default;
  Adam(std::vector<Parameter<Real>> params, double lr, double beta1 = 0.8, double beta2 = 0.99,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_)
      states_.push_back({std::vector<Real>(static_cast<size_t>(p.tensor.numel()), Real(0)),
                         std::vector<Real>(static_cast<size_t>(p.tensor.numel()), Real(0))});
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi].tensor;
      if (!p.grad()) continue;  // untouched by this loss
      const auto& g = *p.grad();
      auto& st = states_[pi];
      Real* pd = p.mutable_data();
      for (size_t i = 0; i < g.size(); ++i) {
        st.m[i] = static_cast<Real>(beta1_) * st.m[i] + static_cast<Real>(1.0 - beta1_) * g[i];
        st.v[i] = static_cast<Real>(beta2_) * st.v[i] + static_cast<Real>(1.0 - beta2_) * g[i] * g[i];
        const double mhat = static_cast<double>(st.m[i]) / bc1;
        const double vhat = static_cast<double>(st.v[i]) / bc2;
        pd[i] -= static_cast<Real>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
  }

  const std::vector<Parameter<Real>>& params() const { return params_; }
  std::vector<State>& states() { return states_; }
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  double lr() const { return lr_; }

 private:
  std::vector<Parameter<Real>> params_;
  std::vector<State> states_;
  double lr_ = 2e-4, beta1_ = 0.8, beta2_ = 0.99, eps_ = 1e-8;
  int64_t t_ = 0;
};

}  // namespace vnet

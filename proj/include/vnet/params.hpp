#pragma once

#include <map>
#include <string>

#include "vnet/tensor.hpp"

namespace vnet {

// theta: generator. phi: discriminator body. omega: discriminator final
// projection (the part the asymmetric loss terms freeze selectively).
enum class ParamGroup { theta, phi, omega };

inline const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::theta: return "theta";
    case ParamGroup::phi: return "phi";
    default: return "omega";
  }
}

template <typename Real>
struct Parameter {
  std::string name;
  ParamGroup group;
  Tensor<Real> tensor;
};

// Owns every trainable tensor and persistent buffer of a model, keyed by a
// dotted path. Registration order is the init-draw order and must stay
// deterministic; serialization sorts by name instead.
template <typename Real>
class ParamStore {
 public:
  Tensor<Real> add(const std::string& name, ParamGroup group, std::vector<int64_t> shape,
                   Rng& rng, double stddev) {
    check_new(name);
    auto t = Tensor<Real>::zeros(std::move(shape));
    if (stddev > 0) {
      Real* d = t.mutable_data();
      for (int64_t i = 0; i < t.numel(); ++i) d[i] = static_cast<Real>(stddev * rng.normal());
    }
    t.set_requires_grad(true);
    params_.push_back({name, group, t});
    index_[name] = params_.size() - 1;
    return t;
  }

  Tensor<Real> add_buffer(const std::string& name, std::vector<int64_t> shape) {
    check_new(name);
    auto t = Tensor<Real>::zeros(std::move(shape));
    buffers_.push_back({name, ParamGroup::theta, t});
    buffer_index_[name] = buffers_.size() - 1;
    return t;
  }

  const std::vector<Parameter<Real>>& params() const { return params_; }
  const std::vector<Parameter<Real>>& buffers() const { return buffers_; }

  Parameter<Real>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw usage_error("ParamStore: unknown parameter " + name);
    return params_[it->second];
  }

  std::vector<Parameter<Real>> group(ParamGroup g) const {
    std::vector<Parameter<Real>> out;
    for (const auto& p : params_)
      if (p.group == g) out.push_back(p);
    return out;
  }

  std::vector<Parameter<Real>> groups(std::initializer_list<ParamGroup> gs) const {
    std::vector<Parameter<Real>> out;
    for (const auto& p : params_)
      for (auto g : gs)
        if (p.group == g) out.push_back(p);
    return out;
  }

  int64_t count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
  }

 private:
  void check_new(const std::string& name) const {
    if (index_.count(name) || buffer_index_.count(name))
      throw usage_error("ParamStore: duplicate name " + name);
  }

  std::vector<Parameter<Real>> params_;
  std::vector<Parameter<Real>> buffers_;
  std::map<std::string, size_t> index_;
  std::map<std::string, size_t> buffer_index_;
};

}  // namespace vnet

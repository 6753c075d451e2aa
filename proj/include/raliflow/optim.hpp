#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "raliflow/tensor.hpp"

namespace raliflow::ad {

struct Parameter {
  std::string name;
  Tensor tensor;
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment
  std::uint64_t step = 0;

  Parameter(std::string n, Tensor t)
      : name(std::move(n)), tensor(std::move(t)), m(tensor.numel(), 0.0), v(tensor.numel(), 0.0) {}
};

/// Named parameters in registration order; that order drives the optimizer
/// and the checkpoint layout.
class ParameterSet {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> values) {
    for (const auto& p : params_) {
      if (p.name == name) throw Error(ErrorCode::ConfigInvalid, "duplicate parameter " + name);
    }
    params_.emplace_back(name, Tensor::from(std::move(shape), std::move(values), true));
    return params_.back().tensor;
  }

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }

  Parameter* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  const Parameter* find(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->find(name);
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

 private:
  std::vector<Parameter> params_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `p` with gradient `g`.
inline void adam_step(Parameter& p, std::span<const double> g, const AdamOptions& opt) {
  if (g.size() != p.tensor.numel() || p.m.size() != g.size() || p.v.size() != g.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam gradient/moment size mismatch for " + p.name);
  }
  ++p.step;
  const double t = static_cast<double>(p.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  auto w = p.tensor.mutable_data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    p.m[i] = opt.beta1 * p.m[i] + (1.0 - opt.beta1) * g[i];
    p.v[i] = opt.beta2 * p.v[i] + (1.0 - opt.beta2) * g[i] * g[i];
    const double mhat = p.m[i] / c1;
    const double vhat = p.v[i] / c2;
    w[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

/// Applies Adam to every parameter using its accumulated gradient, in
/// registration order. Parameters without a gradient are stepped with zeros.
inline void adam_step(ParameterSet& params, const AdamOptions& opt) {
  for (auto& p : params.items()) {
    const std::vector<double> g = p.tensor.grad();
    adam_step(p, g, opt);
  }
}

}  // namespace raliflow::ad

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "textlens/errors.hpp"
#include "textlens/nn/autograd.hpp"

namespace textlens::nn {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Named parameters plus the optimizer step counter shared by all of them.
class ParamSet {
 public:
  Parameter& add(std::string name, Tensor init) {
    for (const auto& p : params_)
      if (p.name == name) throw UsageError("duplicate parameter name '" + name + "'");
    params_.emplace_back(std::move(name), std::move(init));
    return params_.back();
  }

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& at(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw UsageError("no parameter named '" + name + "'");
  }
  const Parameter& at(const std::string& name) const { return const_cast<ParamSet*>(this)->at(name); }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad = Tensor(p.value.shape());
  }

  std::uint64_t step_count() const noexcept { return t_; }
  void set_step_count(std::uint64_t t) noexcept { t_ = t; }
  std::uint64_t advance_step() noexcept { return ++t_; }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : params_)
      for (double g : p.grad.values()) s += g * g;
    return std::sqrt(s);
  }
  double value_norm() const {
    double s = 0.0;
    for (const auto& p : params_)
      for (double v : p.value.values()) s += v * v;
    return std::sqrt(s);
  }

 private:
  std::vector<Parameter> params_;
  std::uint64_t t_ = 0;
};

/// One bias-corrected Adam update using externally supplied gradients
/// (one per parameter, in insertion order).
inline void adam_step(ParamSet& params, std::span<const Tensor> grads, double lr, const AdamOptions& opt = {}) {
  if (grads.size() != params.size())
    throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].shape() != params[i].value.shape())
      throw DimensionError("adam_step: gradient " + shape_string(grads[i].shape()) + " for parameter '" +
                           params[i].name + "' of shape " + shape_string(params[i].value.shape()));
  const std::uint64_t t = params.advance_step();
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (p.m.shape() != p.value.shape()) p.m = Tensor(p.value.shape());
    if (p.v.shape() != p.value.shape()) p.v = Tensor(p.value.shape());
    auto g = grads[i].values();
    auto w = p.value.values();
    auto m = p.m.values();
    auto v = p.v.values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
      v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + opt.epsilon);
    }
  }
}

/// Adam update from the gradients accumulated in the parameters themselves.
inline void adam_step(ParamSet& params, double lr, const AdamOptions& opt = {}) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (auto& p : params) {
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    grads.push_back(p.grad);
  }
  adam_step(params, grads, lr, opt);
}

}  // namespace textlens::nn

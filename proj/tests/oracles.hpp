#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls the library code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "textlens/textlens.hpp"

namespace oracle {

/// Pairwise AUC: (#positive > negative + 0.5 #ties) / (#pos * #neg).
inline double brute_auc(std::span<const double> s, std::span<const int> y) {
  double wins = 0.0;
  std::size_t np = 0, nn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) (y[i] ? np : nn)++;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(np) * static_cast<double>(nn));
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// 3-PL, written out directly.
inline double three_pl(double theta, double a, double b, double c) { return c + (1.0 - c) * logistic(a * (theta - b)); }

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-10) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Central differences of f over every entry of `x`, step h.
inline std::vector<double> central_diff(std::vector<double>& x, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Worst norm-wise relative error over the parameter tensors of `model` for
/// the ELBO of `batch` under fixed `noise`. Biases are first set to small
/// random values so no ReLU sits exactly on its kink.
inline double elbo_gradient_error(textlens::LensModel& model, const textlens::ItemFeatures& feats,
                                  const std::vector<textlens::StudentExample>& batch, const textlens::nn::Tensor& noise,
                                  std::uint64_t seed, std::string* worst_name = nullptr) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& p : model.params())
    if (p.name.ends_with(".b"))
      for (double& b : p.value.values()) b = u(gen);
  {
    textlens::nn::Graph g;
    model.params().zero_grad();
    auto loss = model.loss(g, feats, batch, noise);
    g.backward(loss);
  }
  auto value = [&] {
    textlens::nn::Graph g;
    return model.loss(g, feats, batch, noise).value().item();
  };
  double worst = 0.0;
  for (auto& p : model.params()) {
    std::vector<double> x(p.value.values().begin(), p.value.values().end());
    std::vector<double> analytic(p.grad.values().begin(), p.grad.values().end());
    auto fx = [&] {
      std::copy(x.begin(), x.end(), p.value.values().begin());
      return value();
    };
    const auto numeric = central_diff(x, fx);
    std::copy(x.begin(), x.end(), p.value.values().begin());
    const double e = rel_error(analytic, numeric);
    if (e > worst) {
      worst = e;
      if (worst_name) *worst_name = p.name;
    }
  }
  return worst;
}

}  // namespace oracle

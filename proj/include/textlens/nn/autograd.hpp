#pragma once

// Reverse-mode automatic differentiation over rank-2 tensors.
//
// A Graph is a tape: nodes are appended as ops run, and every op's inputs
// already exist when it is appended, so creation order is a topological
// order. backward() walks the tape once in reverse.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "textlens/errors.hpp"
#include "textlens/nn/tensor.hpp"

namespace textlens::nn {

/// A named trainable tensor together with its gradient and Adam moments.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;

  Parameter() = default;
  Parameter(std::string n, Tensor init)
      : name(std::move(n)), value(std::move(init)), grad(value.shape()), m(value.shape()), v(value.shape()) {}
};

class Graph;

/// Handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

enum class Activation { kRelu, kTanh, kSigmoid };

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t) { return push(std::move(t), {}, nullptr); }

  /// Binds a parameter. Gradients reaching this node accumulate into p.grad.
  Var param(Parameter& p) {
    Var v = push(p.value, {}, nullptr);
    nodes_[v.id].param = &p;
    return v;
  }

  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(inputs), std::move(backward), nullptr});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() == nodes_[id].value.size() && nodes_[id].grad.rank() > 0; }

  /// Gradient buffer of an input, allocated (zeroed) on first touch.
  Tensor& grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Propagates d(loss)/d(node) to every node that loss depends on and
  /// accumulates parameter gradients.
  void backward(Var loss) {
    if (loss.graph != this) throw UsageError("backward: loss belongs to another graph");
    if (value(loss.id).size() != 1)
      throw UsageError("backward: loss must be a scalar, got shape " + shape_string(value(loss.id).shape()));
    for (auto& n : nodes_) n.grad = Tensor{};
    grad_of(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.rank() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        if (n.param->grad.shape() != n.value.shape()) n.param->grad = Tensor(n.value.shape());
        auto dst = n.param->grad.values();
        auto src = n.grad.values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

namespace detail {
inline Graph& same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw UsageError("operands belong to different graphs");
  return *a.graph;
}
}  // namespace detail

namespace detail {
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline Eigen::Map<RowMajor> as_matrix(Tensor& t) { return {t.values().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
inline Eigen::Map<const RowMajor> as_matrix(const Tensor& t) {
  return {t.values().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())};
}
}  // namespace detail

/// y = xW + b, with b broadcast over rows. The products run through Eigen's
/// GEMM; each output row depends only on the matching input row.
inline Var affine(Var x, Var W, Var b) {
  Graph& g = detail::same_graph(x, W);
  detail::same_graph(x, b);
  const Tensor& X = x.value();
  const Tensor& Wt = W.value();
  const Tensor& B = b.value();
  require_rank2(X, "affine x");
  require_rank2(Wt, "affine W");
  const std::size_t n = X.rows(), din = X.cols(), dout = Wt.cols();
  if (Wt.rows() != din || B.size() != dout)
    throw DimensionError("affine: x " + shape_string(X.shape()) + " W " + shape_string(Wt.shape()) + " b " +
                         shape_string(B.shape()) + " do not conform");
  Tensor Y({n, dout});
  if (n > 0) {
    auto y = detail::as_matrix(Y);
    y.noalias() = detail::as_matrix(X) * detail::as_matrix(Wt);
    const Eigen::Map<const Eigen::RowVectorXd> bias(B.values().data(), Eigen::Index(dout));
    y.rowwise() += bias;
  }
  return g.push(std::move(Y), {x.id, W.id, b.id}, [](Graph& g, std::size_t self) {
    const auto& in = g.inputs(self);
    const Tensor& dY = g.grad(self);
    if (dY.rows() == 0) return;
    const auto dy = detail::as_matrix(dY);
    const auto w = detail::as_matrix(g.value(in[1]));
    const auto xm = detail::as_matrix(g.value(in[0]));
    detail::as_matrix(g.grad_of(in[0])).noalias() += dy * w.transpose();
    detail::as_matrix(g.grad_of(in[1])).noalias() += xm.transpose() * dy;
    Tensor& dB = g.grad_of(in[2]);
    Eigen::Map<Eigen::RowVectorXd>(dB.values().data(), Eigen::Index(dB.size())) += dy.colwise().sum();
  });
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Var activation(Var x, Activation kind) {
  Graph& g = *x.graph;
  Tensor Y(x.value().shape());
  auto xs = x.value().values();
  auto ys = Y.values();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    switch (kind) {
      case Activation::kRelu: ys[i] = xs[i] > 0.0 ? xs[i] : 0.0; break;
      case Activation::kTanh: ys[i] = std::tanh(xs[i]); break;
      case Activation::kSigmoid: ys[i] = sigmoid(xs[i]); break;
    }
  }
  return g.push(std::move(Y), {x.id}, [kind](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    auto dy = g.grad(self).values();
    auto y = g.value(self).values();
    auto xs = g.value(in).values();
    auto dx = g.grad_of(in).values();
    for (std::size_t i = 0; i < dy.size(); ++i) {
      switch (kind) {
        case Activation::kRelu: dx[i] += xs[i] > 0.0 ? dy[i] : 0.0; break;
        case Activation::kTanh: dx[i] += dy[i] * (1.0 - y[i] * y[i]); break;
        case Activation::kSigmoid: dx[i] += dy[i] * y[i] * (1.0 - y[i]); break;
      }
    }
  });
}

inline Var relu(Var x) { return activation(x, Activation::kRelu); }
inline Var sigmoid(Var x) { return activation(x, Activation::kSigmoid); }

/// Row-wise concatenation [a | b].
inline Var concat(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "concat a");
  require_rank2(B, "concat b");
  if (A.rows() != B.rows())
    throw DimensionError("concat: row counts differ, " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  const std::size_t n = A.rows(), p = A.cols(), q = B.cols();
  Tensor Y({n, p + q});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) Y(i, j) = A(i, j);
    for (std::size_t j = 0; j < q; ++j) Y(i, p + j) = B(i, j);
  }
  return g.push(std::move(Y), {a.id, b.id}, [p, q](Graph& g, std::size_t self) {
    const auto& in = g.inputs(self);
    const Tensor& dY = g.grad(self);
    Tensor& dA = g.grad_of(in[0]);
    Tensor& dB = g.grad_of(in[1]);
    for (std::size_t i = 0; i < dY.rows(); ++i) {
      for (std::size_t j = 0; j < p; ++j) dA(i, j) += dY(i, j);
      for (std::size_t j = 0; j < q; ++j) dB(i, j) += dY(i, p + j);
    }
  });
}

/// Sums contiguous row segments: output row s is the sum of rows
/// [offsets[s], offsets[s+1]), accumulated top to bottom. Empty segments give
/// zero rows. Callers fix the row order within a segment to make the result
/// independent of presentation order.
inline Var segment_sum(Var rows, std::vector<std::size_t> offsets) {
  Graph& g = *rows.graph;
  const Tensor& X = rows.value();
  require_rank2(X, "segment_sum");
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != X.rows() ||
      !std::is_sorted(offsets.begin(), offsets.end()))
    throw DimensionError("segment_sum: offsets do not cover " + shape_string(X.shape()));
  const std::size_t segs = offsets.size() - 1, d = X.cols();
  Tensor Y({segs, d});
  for (std::size_t s = 0; s < segs; ++s) {
    double* y = &Y(s, 0);
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
      const double* x = &X(r, 0);
      for (std::size_t j = 0; j < d; ++j) y[j] += x[j];
    }
  }
  return g.push(std::move(Y), {rows.id}, [offsets = std::move(offsets)](Graph& g, std::size_t self) {
    const Tensor& dY = g.grad(self);
    Tensor& dX = g.grad_of(g.inputs(self)[0]);
    const std::size_t d = dY.cols();
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
      for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
        for (std::size_t j = 0; j < d; ++j) dX(r, j) += dY(s, j);
  });
}

/// Column sums of all rows as a [1, d] tensor.
inline Var sum_pool(Var rows) { return segment_sum(rows, {0, rows.value().rows()}); }

/// Output row i is x's row idx[i]. Backward scatter-adds.
inline Var gather_rows(Var x, std::vector<std::size_t> idx) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  require_rank2(X, "gather_rows");
  const std::size_t d = X.cols();
  Tensor Y({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= X.rows()) throw DimensionError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " + shape_string(X.shape()));
    std::copy_n(&X(idx[i], 0), d, &Y(i, 0));
  }
  return g.push(std::move(Y), {x.id}, [idx = std::move(idx)](Graph& g, std::size_t self) {
    const Tensor& dY = g.grad(self);
    Tensor& dX = g.grad_of(g.inputs(self)[0]);
    const std::size_t d = dY.cols();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) dX(idx[i], j) += dY(i, j);
  });
}

/// Elementwise clamp; zero gradient where the bound is active.
inline Var clamp(Var x, double lo, double hi) {
  Graph& g = *x.graph;
  Tensor Y(x.value().shape());
  auto xs = x.value().values();
  auto ys = Y.values();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = std::clamp(xs[i], lo, hi);
  return g.push(std::move(Y), {x.id}, [lo, hi](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    auto dy = g.grad(self).values();
    auto xs = g.value(in).values();
    auto dx = g.grad_of(in).values();
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (xs[i] >= lo && xs[i] <= hi) dx[i] += dy[i];
  });
}

/// z = mu + exp(logvar / 2) * eps. eps is data, not a graph input.
inline Var reparam_sample(Var mu, Var logvar, const Tensor& eps) {
  Graph& g = detail::same_graph(mu, logvar);
  const Tensor& M = mu.value();
  const Tensor& L = logvar.value();
  if (M.shape() != L.shape() || M.shape() != eps.shape())
    throw DimensionError("reparam_sample: mu " + shape_string(M.shape()) + " logvar " + shape_string(L.shape()) +
                         " eps " + shape_string(eps.shape()));
  Tensor Z(M.shape());
  for (std::size_t i = 0; i < Z.size(); ++i) Z[i] = M[i] + std::exp(0.5 * L[i]) * eps[i];
  return g.push(std::move(Z), {mu.id, logvar.id}, [eps](Graph& g, std::size_t self) {
    const auto& in = g.inputs(self);
    auto dz = g.grad(self).values();
    auto lv = g.value(in[1]).values();
    auto dmu = g.grad_of(in[0]).values();
    auto dlv = g.grad_of(in[1]).values();
    for (std::size_t i = 0; i < dz.size(); ++i) {
      dmu[i] += dz[i];
      dlv[i] += dz[i] * 0.5 * std::exp(0.5 * lv[i]) * eps[i];
    }
  });
}

/// KL(N(mu, diag(exp(logvar))) || N(0, I)) per row, combined as a weighted
/// sum over rows. An empty weight list means weight 1 for every row.
inline Var gaussian_kl(Var mu, Var logvar, std::vector<double> row_weights = {}) {
  Graph& g = detail::same_graph(mu, logvar);
  const Tensor& M = mu.value();
  const Tensor& L = logvar.value();
  if (M.shape() != L.shape())
    throw DimensionError("gaussian_kl: mu " + shape_string(M.shape()) + " vs logvar " + shape_string(L.shape()));
  require_rank2(M, "gaussian_kl");
  if (row_weights.empty()) row_weights.assign(M.rows(), 1.0);
  if (row_weights.size() != M.rows()) throw DimensionError("gaussian_kl: weight count does not match rows");
  double total = 0.0;
  for (std::size_t r = 0; r < M.rows(); ++r) {
    double kl = 0.0;
    for (std::size_t j = 0; j < M.cols(); ++j) {
      const double m = M(r, j), l = L(r, j);
      kl += 1.0 + l - m * m - std::exp(l);
    }
    total += row_weights[r] * (-0.5 * kl);
  }
  return g.push(Tensor::scalar(total), {mu.id, logvar.id}, [w = std::move(row_weights)](Graph& g, std::size_t self) {
    const auto& in = g.inputs(self);
    const double up = g.grad(self)[0];
    const Tensor& M = g.value(in[0]);
    const Tensor& L = g.value(in[1]);
    Tensor& dM = g.grad_of(in[0]);
    Tensor& dL = g.grad_of(in[1]);
    for (std::size_t r = 0; r < M.rows(); ++r)
      for (std::size_t j = 0; j < M.cols(); ++j) {
        dM(r, j) += up * w[r] * M(r, j);
        dL(r, j) += up * w[r] * 0.5 * (std::exp(L(r, j)) - 1.0);
      }
  });
}

inline constexpr double kProbEpsilon = 1e-7;

/// Weighted sum of Bernoulli negative log-likelihoods of labels y under
/// probabilities p (one per element). Probabilities are clamped to
/// [kProbEpsilon, 1 - kProbEpsilon] before taking logs.
inline Var bernoulli_nll(Var p, std::vector<int> y, std::vector<double> weights = {}) {
  Graph& g = *p.graph;
  const Tensor& P = p.value();
  if (y.size() != P.size()) throw DimensionError("bernoulli_nll: " + std::to_string(y.size()) + " labels for " + shape_string(P.shape()));
  for (int v : y)
    if (v != 0 && v != 1) throw UsageError("bernoulli_nll: labels must be 0 or 1, got " + std::to_string(v));
  if (weights.empty()) weights.assign(P.size(), 1.0);
  if (weights.size() != P.size()) throw DimensionError("bernoulli_nll: weight count does not match probabilities");
  double total = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double q = std::clamp(P[i], kProbEpsilon, 1.0 - kProbEpsilon);
    total += weights[i] * -(y[i] ? std::log(q) : std::log1p(-q));
  }
  return g.push(Tensor::scalar(total), {p.id}, [y = std::move(y), w = std::move(weights)](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const double up = g.grad(self)[0];
    auto P = g.value(in).values();
    auto dP = g.grad_of(in).values();
    for (std::size_t i = 0; i < P.size(); ++i) {
      const double q = std::clamp(P[i], kProbEpsilon, 1.0 - kProbEpsilon);
      dP[i] += up * w[i] * (y[i] ? -1.0 / q : 1.0 / (1.0 - q));
    }
  });
}

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  if (a.shape() != b.shape()) throw DimensionError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor Y = a.value();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += b.value()[i];
  return g.push(std::move(Y), {a.id, b.id}, [](Graph& g, std::size_t self) {
    const auto& in = g.inputs(self);
    auto dy = g.grad(self).values();
    for (std::size_t k = 0; k < 2; ++k) {
      auto dx = g.grad_of(in[k]).values();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  if (a.shape() != b.shape()) throw DimensionError("mul: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor Y = a.value();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= b.value()[i];
  return g.push(std::move(Y), {a.id, b.id}, [](Graph& g, std::size_t self) {
    const auto& in = g.inputs(self);
    auto dy = g.grad(self).values();
    auto av = g.value(in[0]).values();
    auto bv = g.value(in[1]).values();
    {
      auto da = g.grad_of(in[0]).values();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    auto db = g.grad_of(in[1]).values();
    for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
  });
}

inline Var scale(Var a, double s) {
  Graph& g = *a.graph;
  Tensor Y = a.value();
  for (auto& v : Y.values()) v *= s;
  return g.push(std::move(Y), {a.id}, [s](Graph& g, std::size_t self) {
    auto dy = g.grad(self).values();
    auto dx = g.grad_of(g.inputs(self)[0]).values();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += s * dy[i];
  });
}

/// Sum of all elements as a [1, 1] tensor.
inline Var sum(Var a) {
  Graph& g = *a.graph;
  double t = 0.0;
  for (double v : a.value().values()) t += v;
  return g.push(Tensor::scalar(t), {a.id}, [](Graph& g, std::size_t self) {
    const double up = g.grad(self)[0];
    for (double& d : g.grad_of(g.inputs(self)[0]).values()) d += up;
  });
}

}  // namespace textlens::nn

// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense tensor engine with reverse-mode differentiation.
//
// Storage is always row-major and contiguous; there are no strided views.
// Every operation evaluates eagerly (Eigen does the matrix work) and, when
// any input requires gradients, records a backward closure on the result
// node. Tensor::backward() replays the recorded closures in reverse
// topological order, visiting each node exactly once.
//
// All kernels are single-threaded with a fixed reduction order, so repeated
// runs produce bit-identical results.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "patchflow/errors.hpp"

namespace patchflow {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<MatRM<S>>;
template <typename S>
using MapConstMat = Eigen::Map<const MatRM<S>>;
template <typename S>
using MapVec = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using MapConstVec = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

namespace detail {

inline std::uint64_t next_node_id() {
  static std::uint64_t counter = 0;
  return ++counter;
}

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  std::span<S> grad_span() {
    if (grad.empty()) grad.assign(value.size(), S(0));
    return grad;
  }
};

}  // namespace detail

template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return full(std::move(shape), S(0)); }

  static Tensor full(Shape shape, S v) {
    auto n = std::make_shared<detail::Node<S>>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<std::size_t>(numel(n->shape)), v);
    n->id = detail::next_node_id();
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<S> data) {
    require(numel(shape) == static_cast<std::int64_t>(data.size()), ErrorKind::Dimension,
            "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                shape_str(shape));
    auto n = std::make_shared<detail::Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->id = detail::next_node_id();
    return Tensor(std::move(n));
  }

  static Tensor scalar(S v) { return full({1}, v); }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int dim(int axis) const { return n_->shape[static_cast<std::size_t>(axis)]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(n_->value.size()); }

  std::span<const S> data() const { return n_->value; }
  // Callers mutating a tensor that already participates in a recorded graph
  // own the consequences; mutation is intended for leaves (parameters,
  // finite-difference probes).
  std::span<S> mutable_data() { return n_->value; }

  S item() const {
    require(size() == 1, ErrorKind::Contract, "item() on non-scalar tensor");
    return n_->value[0];
  }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    n_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return !n_->grad.empty(); }
  std::span<const S> grad() const {
    require(has_grad(), ErrorKind::Contract, "gradient not computed for this tensor");
    return n_->grad;
  }
  void zero_grad() { n_->grad.clear(); }

  Tensor clone_detached() const {
    auto n = std::make_shared<detail::Node<S>>();
    n->shape = n_->shape;
    n->value = n_->value;
    n->id = detail::next_node_id();
    return Tensor(std::move(n));
  }

  // Reverse-mode sweep from this (scalar) tensor. Seeds d(self)=1, walks the
  // recorded graph once in reverse topological order and accumulates
  // gradients into every node that requires them.
  void backward() const {
    require(size() == 1, ErrorKind::Contract, "backward() requires a scalar output");
    require(n_->requires_grad, ErrorKind::Contract,
            "backward() on a tensor that does not require gradients");
    std::vector<detail::Node<S>*> order = topo_order();
    n_->grad_span()[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<S>* node = *it;
      if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
  }

  // Recorded-graph introspection: (op, id, input ids) in topological order.
  struct TraceEntry {
    const char* op;
    std::uint64_t id;
    std::vector<std::uint64_t> inputs;
  };
  std::vector<TraceEntry> trace() const {
    std::vector<TraceEntry> out;
    for (detail::Node<S>* node : topo_order()) {
      TraceEntry e{node->op, node->id, {}};
      for (const auto& in : node->inputs) e.inputs.push_back(in->id);
      out.push_back(std::move(e));
    }
    return out;
  }

  std::shared_ptr<detail::Node<S>> node() const { return n_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<S>> n) : n_(std::move(n)) {}

  std::vector<detail::Node<S>*> topo_order() const {
    std::vector<detail::Node<S>*> order;
    std::unordered_set<detail::Node<S>*> seen;
    // Iterative DFS; inputs are emitted before the nodes that consume them.
    struct Frame {
      detail::Node<S>* node;
      std::size_t next_input;
    };
    std::vector<Frame> stack{{n_.get(), 0}};
    seen.insert(n_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_input < f.node->inputs.size()) {
        detail::Node<S>* in = f.node->inputs[f.next_input++].get();
        if (seen.insert(in).second) stack.push_back({in, 0});
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<detail::Node<S>> n_;

  template <typename T>
  friend Tensor<T> detail_make_op(const char* op, Shape shape, std::vector<T> value,
                                  std::vector<Tensor<T>> inputs,
                                  std::function<void(detail::Node<T>&)> backprop);
};

// Extension point used by every operation (including the patch ops defined
// elsewhere): builds the result node and wires it into the graph when any
// input requires gradients.
template <typename S>
Tensor<S> detail_make_op(const char* op, Shape shape, std::vector<S> value,
                         std::vector<Tensor<S>> inputs,
                         std::function<void(detail::Node<S>&)> backprop) {
  auto n = std::make_shared<detail::Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  n->id = detail::next_node_id();
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    n->requires_grad = true;
    for (const auto& in : inputs) n->inputs.push_back(in.node());
    n->backprop = std::move(backprop);
  }
  return Tensor<S>(std::move(n));
}

namespace detail {

template <typename S>
MapConstMat<S> as_mat(const Node<S>& n, int rows, int cols) {
  return MapConstMat<S>(n.value.data(), rows, cols);
}

template <typename S>
MapMat<S> grad_mat(Node<S>& n, int rows, int cols) {
  auto g = n.grad_span();
  return MapMat<S>(g.data(), rows, cols);
}

// Collapse all leading axes: a (.., d) tensor seen as rows of length d.
template <typename S>
std::pair<int, int> rows_view(const Node<S>& n) {
  require(!n.shape.empty(), ErrorKind::Dimension, "rank-0 tensor has no rows");
  int d = n.shape.back();
  int rows = static_cast<int>(numel(n.shape) / d);
  return {rows, d};
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::Dimension,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and affine operations
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<S> v(a.data().begin(), a.data().end());
  MapVec<S>(v.data(), v.size()) += MapConstVec<S>(b.data().data(), b.size());
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail_make_op<S>("add", a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<S>& n) {
    MapConstVec<S> g(n.grad.data(), n.grad.size());
    if (an->requires_grad) MapVec<S>(an->grad_span().data(), g.size()) += g;
    if (bn->requires_grad) MapVec<S>(bn->grad_span().data(), g.size()) += g;
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<S> v(a.data().begin(), a.data().end());
  MapVec<S>(v.data(), v.size()) -= MapConstVec<S>(b.data().data(), b.size());
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail_make_op<S>("sub", a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<S>& n) {
    MapConstVec<S> g(n.grad.data(), n.grad.size());
    if (an->requires_grad) MapVec<S>(an->grad_span().data(), g.size()) += g;
    if (bn->requires_grad) MapVec<S>(bn->grad_span().data(), g.size()) -= g;
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<S> v(a.size());
  MapVec<S>(v.data(), v.size()) = MapConstVec<S>(a.data().data(), a.size()).cwiseProduct(
      MapConstVec<S>(b.data().data(), b.size()));
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail_make_op<S>("mul", a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<S>& n) {
    MapConstVec<S> g(n.grad.data(), n.grad.size());
    if (an->requires_grad) {
      MapVec<S>(an->grad_span().data(), g.size()) +=
          g.cwiseProduct(MapConstVec<S>(bn->value.data(), bn->value.size()));
    }
    if (bn->requires_grad) {
      MapVec<S>(bn->grad_span().data(), g.size()) +=
          g.cwiseProduct(MapConstVec<S>(an->value.data(), an->value.size()));
    }
  });
}

// y = alpha * x + beta, with scalar constants.
template <typename S>
Tensor<S> affine(const Tensor<S>& x, S alpha, S beta) {
  std::vector<S> v(x.size());
  MapVec<S>(v.data(), v.size()).array() =
      alpha * MapConstVec<S>(x.data().data(), x.size()).array() + beta;
  auto xn = x.node().get();
  return detail_make_op<S>("affine", x.shape(), std::move(v), {x},
                           [xn, alpha](detail::Node<S>& n) {
                             MapConstVec<S> g(n.grad.data(), n.grad.size());
                             MapVec<S>(xn->grad_span().data(), g.size()) += alpha * g;
                           });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S alpha) {
  return affine(x, alpha, S(0));
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}

// Tanh-approximation GELU; this is the project's nonlinearity.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  const S k = static_cast<S>(std::sqrt(2.0 / M_PI));
  const S c = static_cast<S>(0.044715);
  std::vector<S> v(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    S xi = xs[i];
    v[i] = S(0.5) * xi * (S(1) + std::tanh(k * (xi + c * xi * xi * xi)));
  }
  auto xn = x.node().get();
  return detail_make_op<S>("gelu", x.shape(), std::move(v), {x}, [xn, k, c](detail::Node<S>& n) {
    auto g = xn->grad_span();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      S xi = xn->value[i];
      S arg = k * (xi + c * xi * xi * xi);
      S t = std::tanh(arg);
      S sech2 = S(1) - t * t;
      S local = S(0.5) * (S(1) + t) + S(0.5) * xi * sech2 * k * (S(1) + S(3) * c * xi * xi);
      g[i] += local * n.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products (rank-2 operands)
// ---------------------------------------------------------------------------

namespace detail {
template <typename S>
void check_rank2(const Tensor<S>& t, const char* op) {
  require(t.rank() == 2, ErrorKind::Dimension,
          std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}
}  // namespace detail

// C[m,n] = A[m,k] * B[k,n]
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_rank2(a, "matmul");
  detail::check_rank2(b, "matmul");
  int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  require(k == k2, ErrorKind::Dimension,
          "matmul: inner dimensions disagree " + shape_str(a.shape()) + " * " +
              shape_str(b.shape()));
  std::vector<S> v(static_cast<std::size_t>(m) * n);
  MapMat<S>(v.data(), m, n).noalias() =
      detail::as_mat(*a.node(), m, k) * detail::as_mat(*b.node(), k, n);
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail_make_op<S>(
      "matmul", {m, n}, std::move(v), {a, b}, [an, bn, m, k, n](detail::Node<S>& nd) {
        MapConstMat<S> g(nd.grad.data(), m, n);
        if (an->requires_grad)
          detail::grad_mat(*an, m, k).noalias() += g * detail::as_mat(*bn, k, n).transpose();
        if (bn->requires_grad)
          detail::grad_mat(*bn, k, n).noalias() += detail::as_mat(*an, m, k).transpose() * g;
      });
}

// C[m,n] = A[m,k] * B[n,k]^T  (the linear-layer product: rows of B are output
// features)
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_rank2(a, "matmul_nt");
  detail::check_rank2(b, "matmul_nt");
  int m = a.dim(0), k = a.dim(1), n = b.dim(0), k2 = b.dim(1);
  require(k == k2, ErrorKind::Dimension,
          "matmul_nt: inner dimensions disagree " + shape_str(a.shape()) + " * " +
              shape_str(b.shape()) + "^T");
  std::vector<S> v(static_cast<std::size_t>(m) * n);
  MapMat<S>(v.data(), m, n).noalias() =
      detail::as_mat(*a.node(), m, k) * detail::as_mat(*b.node(), n, k).transpose();
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail_make_op<S>(
      "matmul_nt", {m, n}, std::move(v), {a, b}, [an, bn, m, k, n](detail::Node<S>& nd) {
        MapConstMat<S> g(nd.grad.data(), m, n);
        if (an->requires_grad)
          detail::grad_mat(*an, m, k).noalias() += g * detail::as_mat(*bn, n, k);
        if (bn->requires_grad)
          detail::grad_mat(*bn, n, k).noalias() += g.transpose() * detail::as_mat(*an, m, k);
      });
}

// Y[r,c] = X[r,c] + b[c]
template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& b) {
  detail::check_rank2(x, "add_rowvec");
  require(b.rank() == 1 && b.dim(0) == x.dim(1), ErrorKind::Dimension,
          "add_rowvec: vector length " + shape_str(b.shape()) + " does not match columns of " +
              shape_str(x.shape()));
  int r = x.dim(0), c = x.dim(1);
  std::vector<S> v(x.data().begin(), x.data().end());
  MapMat<S>(v.data(), r, c).rowwise() +=
      MapConstVec<S>(b.data().data(), c).transpose();
  auto xn = x.node().get();
  auto bn = b.node().get();
  return detail_make_op<S>(
      "add_rowvec", x.shape(), std::move(v), {x, b}, [xn, bn, r, c](detail::Node<S>& nd) {
        MapConstMat<S> g(nd.grad.data(), r, c);
        if (xn->requires_grad) detail::grad_mat(*xn, r, c) += g;
        if (bn->requires_grad) {
          // explicit row-order accumulation; Eigen's column reduction may
          // regroup sums depending on buffer alignment, which breaks
          // bit-reproducibility across reruns
          auto gb = bn->grad_span();
          for (int i = 0; i < r; ++i) {
            const S* row = nd.grad.data() + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) gb[static_cast<std::size_t>(j)] += row[j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization and softmax (last axis)
// ---------------------------------------------------------------------------

// Per-row zero mean / unit variance over the last axis (biased variance with
// eps guard), then the affine map gamma * xhat + beta.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  auto [rows, d] = detail::rows_view(*x.node());
  require(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
          ErrorKind::Dimension,
          "layer_norm: gamma/beta must have length " + std::to_string(d));
  require(eps > S(0), ErrorKind::Domain, "layer_norm: eps must be positive");
  std::vector<S> v(x.size());
  std::vector<S> xhat(x.size());
  std::vector<S> rstd(static_cast<std::size_t>(rows));
  auto xs = x.data();
  auto gs = gamma.data();
  auto bs = beta.data();
  for (int r = 0; r < rows; ++r) {
    const S* row = xs.data() + static_cast<std::size_t>(r) * d;
    S mean = 0;
    for (int i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<S>(d);
    S var = 0;
    for (int i = 0; i < d; ++i) {
      S c = row[i] - mean;
      var += c * c;
    }
    var /= static_cast<S>(d);
    S rs = S(1) / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    for (int i = 0; i < d; ++i) {
      std::size_t idx = static_cast<std::size_t>(r) * d + i;
      xhat[idx] = (row[i] - mean) * rs;
      v[idx] = gs[static_cast<std::size_t>(i)] * xhat[idx] + bs[static_cast<std::size_t>(i)];
    }
  }
  auto xn = x.node().get();
  auto gn = gamma.node().get();
  auto bn = beta.node().get();
  return detail_make_op<S>(
      "layer_norm", x.shape(), std::move(v), {x, gamma, beta},
      [xn, gn, bn, rows, d, xhat = std::move(xhat),
       rstd = std::move(rstd)](detail::Node<S>& nd) {
        for (int r = 0; r < rows; ++r) {
          const S* dy = nd.grad.data() + static_cast<std::size_t>(r) * d;
          const S* xh = xhat.data() + static_cast<std::size_t>(r) * d;
          if (gn->requires_grad) {
            auto gg = gn->grad_span();
            for (int i = 0; i < d; ++i) gg[static_cast<std::size_t>(i)] += dy[i] * xh[i];
          }
          if (bn->requires_grad) {
            auto gb = bn->grad_span();
            for (int i = 0; i < d; ++i) gb[static_cast<std::size_t>(i)] += dy[i];
          }
          if (xn->requires_grad) {
            auto gx = xn->grad_span();
            S mean_g = 0, mean_gx = 0;
            for (int i = 0; i < d; ++i) {
              S gi = dy[i] * gn->value[static_cast<std::size_t>(i)];
              mean_g += gi;
              mean_gx += gi * xh[i];
            }
            mean_g /= static_cast<S>(d);
            mean_gx /= static_cast<S>(d);
            S rs = rstd[static_cast<std::size_t>(r)];
            for (int i = 0; i < d; ++i) {
              S gi = dy[i] * gn->value[static_cast<std::size_t>(i)];
              gx[static_cast<std::size_t>(r) * d + i] += rs * (gi - mean_g - xh[i] * mean_gx);
            }
          }
        }
      });
}

// Softmax over the last axis with max-subtraction; rows sum to one.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  auto [rows, d] = detail::rows_view(*x.node());
  std::vector<S> v(x.size());
  auto xs = x.data();
  for (int r = 0; r < rows; ++r) {
    const S* row = xs.data() + static_cast<std::size_t>(r) * d;
    S* out = v.data() + static_cast<std::size_t>(r) * d;
    S mx = row[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, row[i]);
    S sum = 0;
    for (int i = 0; i < d; ++i) {
      out[i] = std::exp(row[i] - mx);
      sum += out[i];
    }
    S inv = S(1) / sum;
    for (int i = 0; i < d; ++i) out[i] *= inv;
  }
  auto xn = x.node().get();
  return detail_make_op<S>("softmax", x.shape(), std::move(v), {x},
                           [xn, rows, d](detail::Node<S>& nd) {
                             auto gx = xn->grad_span();
                             for (int r = 0; r < rows; ++r) {
                               const S* p = nd.value.data() + static_cast<std::size_t>(r) * d;
                               const S* dy = nd.grad.data() + static_cast<std::size_t>(r) * d;
                               S dot = 0;
                               for (int i = 0; i < d; ++i) dot += dy[i] * p[i];
                               for (int i = 0; i < d; ++i)
                                 gx[static_cast<std::size_t>(r) * d + i] += p[i] * (dy[i] - dot);
                             }
                           });
}

// ---------------------------------------------------------------------------
// Structural operations
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  require(numel(shape) == x.size(), ErrorKind::Dimension,
          "reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<S> v(x.data().begin(), x.data().end());
  auto xn = x.node().get();
  return detail_make_op<S>("reshape", std::move(shape), std::move(v), {x},
                           [xn](detail::Node<S>& nd) {
                             MapVec<S>(xn->grad_span().data(), nd.grad.size()) +=
                                 MapConstVec<S>(nd.grad.data(), nd.grad.size());
                           });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int col0, int width) {
  detail::check_rank2(x, "slice_cols");
  int r = x.dim(0), c = x.dim(1);
  require(col0 >= 0 && width > 0 && col0 + width <= c, ErrorKind::Dimension,
          "slice_cols: range [" + std::to_string(col0) + "," + std::to_string(col0 + width) +
              ") outside " + shape_str(x.shape()));
  std::vector<S> v(static_cast<std::size_t>(r) * width);
  MapMat<S>(v.data(), r, width) = detail::as_mat(*x.node(), r, c).middleCols(col0, width);
  auto xn = x.node().get();
  return detail_make_op<S>("slice_cols", {r, width}, std::move(v), {x},
                           [xn, r, c, col0, width](detail::Node<S>& nd) {
                             detail::grad_mat(*xn, r, c).middleCols(col0, width) +=
                                 MapConstMat<S>(nd.grad.data(), r, width);
                           });
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, int row0, int height) {
  detail::check_rank2(x, "slice_rows");
  int r = x.dim(0), c = x.dim(1);
  require(row0 >= 0 && height > 0 && row0 + height <= r, ErrorKind::Dimension,
          "slice_rows: range [" + std::to_string(row0) + "," + std::to_string(row0 + height) +
              ") outside " + shape_str(x.shape()));
  std::vector<S> v(static_cast<std::size_t>(height) * c);
  MapMat<S>(v.data(), height, c) = detail::as_mat(*x.node(), r, c).middleRows(row0, height);
  auto xn = x.node().get();
  return detail_make_op<S>("slice_rows", {height, c}, std::move(v), {x},
                           [xn, r, c, row0, height](detail::Node<S>& nd) {
                             detail::grad_mat(*xn, r, c).middleRows(row0, height) +=
                                 MapConstMat<S>(nd.grad.data(), height, c);
                           });
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  require(!parts.empty(), ErrorKind::Contract, "concat_cols: empty input list");
  int r = parts[0].dim(0);
  int total = 0;
  for (const auto& p : parts) {
    detail::check_rank2(p, "concat_cols");
    require(p.dim(0) == r, ErrorKind::Dimension, "concat_cols: row count mismatch");
    total += p.dim(1);
  }
  std::vector<S> v(static_cast<std::size_t>(r) * total);
  MapMat<S> out(v.data(), r, total);
  int at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.dim(1)) = detail::as_mat(*p.node(), r, p.dim(1));
    at += p.dim(1);
  }
  std::vector<detail::Node<S>*> nodes;
  std::vector<int> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node().get());
    widths.push_back(p.dim(1));
  }
  return detail_make_op<S>("concat_cols", {r, total}, std::move(v), parts,
                           [nodes, widths, r, total](detail::Node<S>& nd) {
                             MapConstMat<S> g(nd.grad.data(), r, total);
                             int at = 0;
                             for (std::size_t i = 0; i < nodes.size(); ++i) {
                               if (nodes[i]->requires_grad)
                                 detail::grad_mat(*nodes[i], r, widths[i]) +=
                                     g.middleCols(at, widths[i]);
                               at += widths[i];
                             }
                           });
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  require(!parts.empty(), ErrorKind::Contract, "concat_rows: empty input list");
  int c = parts[0].dim(1);
  int total = 0;
  for (const auto& p : parts) {
    detail::check_rank2(p, "concat_rows");
    require(p.dim(1) == c, ErrorKind::Dimension, "concat_rows: column count mismatch");
    total += p.dim(0);
  }
  std::vector<S> v(static_cast<std::size_t>(total) * c);
  MapMat<S> out(v.data(), total, c);
  int at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.dim(0)) = detail::as_mat(*p.node(), p.dim(0), c);
    at += p.dim(0);
  }
  std::vector<detail::Node<S>*> nodes;
  std::vector<int> heights;
  for (const auto& p : parts) {
    nodes.push_back(p.node().get());
    heights.push_back(p.dim(0));
  }
  return detail_make_op<S>("concat_rows", {total, c}, std::move(v), parts,
                           [nodes, heights, total, c](detail::Node<S>& nd) {
                             MapConstMat<S> g(nd.grad.data(), total, c);
                             int at = 0;
                             for (std::size_t i = 0; i < nodes.size(); ++i) {
                               if (nodes[i]->requires_grad)
                                 detail::grad_mat(*nodes[i], heights[i], c) +=
                                     g.middleRows(at, heights[i]);
                               at += heights[i];
                             }
                           });
}

// M[r] = V[idx[r]]; an index of -1 yields a zero row (used for padding).
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& table, std::vector<int> idx) {
  detail::check_rank2(table, "gather_rows");
  int rows = static_cast<int>(idx.size());
  int c = table.dim(1);
  for (int i : idx)
    require(i >= -1 && i < table.dim(0), ErrorKind::Domain,
            "gather_rows: index " + std::to_string(i) + " outside table of " +
                std::to_string(table.dim(0)) + " rows");
  std::vector<S> v(static_cast<std::size_t>(rows) * c, S(0));
  MapMat<S> out(v.data(), rows, c);
  auto tab = detail::as_mat(*table.node(), table.dim(0), c);
  for (int r = 0; r < rows; ++r)
    if (idx[static_cast<std::size_t>(r)] >= 0) out.row(r) = tab.row(idx[static_cast<std::size_t>(r)]);
  auto tn = table.node().get();
  int trows = table.dim(0);
  return detail_make_op<S>("gather_rows", {rows, c}, std::move(v), {table},
                           [tn, idx = std::move(idx), rows, c, trows](detail::Node<S>& nd) {
                             MapConstMat<S> g(nd.grad.data(), rows, c);
                             auto gt = detail::grad_mat(*tn, trows, c);
                             for (int r = 0; r < rows; ++r)
                               if (idx[static_cast<std::size_t>(r)] >= 0)
                                 gt.row(idx[static_cast<std::size_t>(r)]) += g.row(r);
                           });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S total = 0;
  for (S v : x.data()) total += v;
  auto xn = x.node().get();
  return detail_make_op<S>("sum", {1}, {total}, {x}, [xn](detail::Node<S>& nd) {
    S g = nd.grad[0];
    auto gx = xn->grad_span();
    for (auto& v : gx) v += g;
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  S total = 0;
  for (S v : x.data()) total += v;
  S inv = S(1) / static_cast<S>(x.size());
  auto xn = x.node().get();
  return detail_make_op<S>("mean", {1}, {total * inv}, {x}, [xn, inv](detail::Node<S>& nd) {
    S g = nd.grad[0] * inv;
    auto gx = xn->grad_span();
    for (auto& v : gx) v += g;
  });
}

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace patchflow

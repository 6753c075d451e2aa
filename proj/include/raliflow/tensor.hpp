#pragma once

// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record a backward closure on the result node; backward()
// walks the reachable graph in reverse topological order. Graphs are confined
// to the thread that built them.

// Eigen's small-product kernel sums in an order that depends on operand
// alignment; always taking the blocked path keeps results bit-identical
// across runs.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "raliflow/error.hpp"

namespace raliflow::ad {

using Shape = std::vector<std::size_t>;
using Index = std::int64_t;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (!has_grad) {
      grad.assign(value.size(), 0.0);
      has_grad = true;
    }
    return grad;
  }
};

}  // namespace detail

/// Collects distances to non-differentiable points (ReLU inputs, max-pool
/// gaps, zero norms) while installed; used by grad_check to skip kinks.
class KinkRecorder {
 public:
  std::vector<double> sites;

  static KinkRecorder*& active() {
    thread_local KinkRecorder* current = nullptr;
    return current;
  }

  class Scope {
   public:
    explicit Scope(KinkRecorder& r) : prev_(active()) { active() = &r; }
    ~Scope() { active() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    KinkRecorder* prev_;
  };
};

inline void record_kink(double distance) {
  if (auto* r = KinkRecorder::active()) r->sites.push_back(distance);
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw Error(ErrorCode::ShapeMismatch,
                  "data length " + std::to_string(values.size()) + " does not match shape " +
                      shape_str(shape));
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// Mutable access for leaves (parameters, probe inputs).
  std::span<double> mutable_data() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }

  double item() const {
    if (numel() != 1) throw Error(ErrorCode::NotScalar, "item() on " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->has_grad; }

  /// Accumulated gradient; zeros if none has been propagated.
  std::vector<double> grad() const {
    if (!node_->has_grad) return std::vector<double>(numel(), 0.0);
    return node_->grad;
  }
  std::span<const double> grad_view() const { return node_->grad; }

  void zero_grad() {
    node_->grad.clear();
    node_->has_grad = false;
  }

  Tensor detach() const { return from(shape(), node_->value, false); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
  std::shared_ptr<detail::Node> node_;
};

/// Builds an op result; the backward closure is dropped when no input
/// requires gradients, so constant subgraphs never touch the tape.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                          std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& t : inputs) n->parents.push_back(t.node_ptr());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

namespace detail {

inline bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

}  // namespace detail

/// Reverse sweep from a scalar. Leaf gradients accumulate across calls;
/// interior gradients are reset at the start of each sweep.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw Error(ErrorCode::NotScalar, "backward() needs a scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* n : order) {
    if (n->backward) {
      n->grad.clear();
      n->has_grad = false;
    }
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->has_grad) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic. The second operand may have the shape of a
// trailing suffix of the first (or vice versa); it is then repeated over the
// leading dims.

namespace detail {

inline bool is_suffix(const Shape& shorter, const Shape& longer) {
  if (shorter.size() > longer.size()) return false;
  return std::equal(shorter.rbegin(), shorter.rend(), longer.rbegin());
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw Error(ErrorCode::ShapeMismatch,
              std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
}

template <class Fwd, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const std::size_t n = shape_numel(out_shape);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  std::vector<double> v(n);
  const auto av = a.data();
  const auto bv = b.data();
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) v[i] = fwd(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) v[i] = fwd(av[i % na], bv[i % nb]);
  }
  return make_result(std::move(out_shape), std::move(v), {a, b},
                     [na, nb, da, db](Node& self) {
                       const auto& x = self.parents[0]->value;
                       const auto& y = self.parents[1]->value;
                       const std::size_t n = self.value.size();
                       if (wants(self, 0)) {
                         auto& g = self.parents[0]->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                           g[i % na] += self.grad[i] * da(x[i % na], y[i % nb], self.value[i]);
                       }
                       if (wants(self, 1)) {
                         auto& g = self.parents[1]->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                           g[i % nb] += self.grad[i] * db(x[i % na], y[i % nb], self.value[i]);
                       }
                     });
}

template <class Fwd, class D>
Tensor unary(const Tensor& a, Fwd fwd, D d, bool kink = false) {
  const auto av = a.data();
  std::vector<double> v(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    v[i] = fwd(av[i]);
    if (kink) record_kink(std::abs(av[i]));
  }
  return make_result(a.shape(), std::move(v), {a}, [d](Node& self) {
    const auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[i] * d(x[i], self.value[i]);
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, /*kink=*/true);
}

inline Tensor sqrt(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; }, /*kink=*/true);
}

// ---------------------------------------------------------------------------
// Linear algebra and structural ops.

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
}  // namespace detail

/// [M,K] x [K,N] -> [M,N].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch,
                "matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> v(static_cast<std::size_t>(m * n), 0.0);
  if (m > 0 && n > 0 && k > 0) {
    detail::MutMap(v.data(), m, n).noalias() =
        detail::ConstMap(a.data().data(), m, k) * detail::ConstMap(b.data().data(), k, n);
  }
  return make_result({a.dim(0), b.dim(1)}, std::move(v), {a, b}, [m, k, n](detail::Node& self) {
    if (m == 0 || n == 0 || k == 0) return;
    detail::ConstMap g(self.grad.data(), m, n);
    if (detail::wants(self, 0)) {
      auto& ga = self.parents[0]->grad_buffer();
      detail::MutMap(ga.data(), m, k).noalias() +=
          g * detail::ConstMap(self.parents[1]->value.data(), k, n).transpose();
    }
    if (detail::wants(self, 1)) {
      auto& gb = self.parents[1]->grad_buffer();
      detail::MutMap(gb.data(), k, n).noalias() +=
          detail::ConstMap(self.parents[0]->value.data(), m, k).transpose() * g;
    }
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw Error(ErrorCode::ShapeMismatch,
                "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> v(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(v), {a}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace detail {
inline std::size_t row_width(const Tensor& a) {
  if (a.ndim() == 0) throw Error(ErrorCode::ShapeMismatch, "row op on a scalar");
  return a.dim(0) == 0 ? shape_numel(Shape(a.shape().begin() + 1, a.shape().end()))
                       : a.numel() / a.dim(0);
}
}  // namespace detail

/// Rows [begin, end) of a tensor with at least one dim.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.ndim() == 0 || begin > end || end > a.dim(0)) {
    throw Error(ErrorCode::IndexOutOfRange, "slice_rows out of range");
  }
  const std::size_t w = detail::row_width(a);
  Shape s = a.shape();
  s[0] = end - begin;
  std::vector<double> v(a.data().begin() + static_cast<std::ptrdiff_t>(begin * w),
                        a.data().begin() + static_cast<std::ptrdiff_t>(end * w));
  return make_result(std::move(s), std::move(v), {a}, [begin, w](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * w + i] += self.grad[i];
  });
}

/// Concatenates along `axis`; all other dims must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw Error(ErrorCode::ShapeMismatch, "concat axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size()) throw Error(ErrorCode::ShapeMismatch, "concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != ref[d]) {
        throw Error(ErrorCode::ShapeMismatch,
                    "concat " + shape_str(s) + " vs " + shape_str(ref) + " on axis " +
                        std::to_string(axis));
      }
    }
    total += s[axis];
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<double> v(outer * total * inner);
  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  v.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset));
    }
    widths.push_back(w);
    offset += w;
  }
  const std::size_t row = total * inner;
  return make_result(std::move(out_shape), std::move(v), parts,
                     [outer, row, widths](detail::Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         const std::size_t w = widths[k];
                         if (detail::wants(self, k)) {
                           auto& g = self.parents[k]->grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < w; ++j)
                               g[o * w + j] += self.grad[o * row + off + j];
                         }
                         off += w;
                       }
                     });
}

/// out[i] = a[idx[i]] (row-wise).
inline Tensor gather_rows(const Tensor& a, std::vector<Index> idx) {
  const std::size_t w = detail::row_width(a);
  const std::size_t rows = a.dim(0);
  for (Index i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= rows) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "gather index " + std::to_string(i) + " outside " + std::to_string(rows) + " rows");
    }
  }
  Shape s = a.shape();
  s[0] = idx.size();
  std::vector<double> v(idx.size() * w);
  const auto av = a.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(idx[r]) * w), w,
                v.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  return make_result(std::move(s), std::move(v), {a},
                     [idx = std::move(idx), w](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         const std::size_t base = static_cast<std::size_t>(idx[r]) * w;
                         for (std::size_t j = 0; j < w; ++j) g[base + j] += self.grad[r * w + j];
                       }
                     });
}

/// out[idx[i]] += a[i]; out has `num_rows` rows.
inline Tensor scatter_add_rows(const Tensor& a, std::vector<Index> idx, std::size_t num_rows) {
  if (a.ndim() == 0 || idx.size() != a.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch, "scatter_add_rows index count differs from rows");
  }
  const std::size_t w = detail::row_width(a);
  for (Index i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= num_rows) {
      throw Error(ErrorCode::IndexOutOfRange, "scatter index " + std::to_string(i));
    }
  }
  Shape s = a.shape();
  s[0] = num_rows;
  std::vector<double> v(num_rows * w, 0.0);
  const auto av = a.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const std::size_t base = static_cast<std::size_t>(idx[r]) * w;
    for (std::size_t j = 0; j < w; ++j) v[base + j] += av[r * w + j];
  }
  return make_result(std::move(s), std::move(v), {a},
                     [idx = std::move(idx), w](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         const std::size_t base = static_cast<std::size_t>(idx[r]) * w;
                         for (std::size_t j = 0; j < w; ++j) g[r * w + j] += self.grad[base + j];
                       }
                     });
}

/// Scales row i of a [P, ...] tensor by w[i].
inline Tensor mul_rows(const Tensor& a, const Tensor& w) {
  if (a.ndim() == 0 || w.ndim() != 1 || w.dim(0) != a.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch,
                "mul_rows " + shape_str(a.shape()) + " by " + shape_str(w.shape()));
  }
  const std::size_t rows = a.dim(0);
  const std::size_t width = detail::row_width(a);
  std::vector<double> v(a.numel());
  const auto av = a.data();
  const auto wv = w.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j) v[r * width + j] = av[r * width + j] * wv[r];
  return make_result(a.shape(), std::move(v), {a, w}, [rows, width](detail::Node& self) {
    const auto& x = self.parents[0]->value;
    const auto& s = self.parents[1]->value;
    if (detail::wants(self, 0)) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j) g[r * width + j] += self.grad[r * width + j] * s[r];
    }
    if (detail::wants(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < width; ++j) acc += self.grad[r * width + j] * x[r * width + j];
        g[r] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions.

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  return make_result({}, {acc}, {a}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double s = self.grad[0];
    for (auto& gi : g) gi += s;
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw Error(ErrorCode::ShapeMismatch, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

namespace detail {
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};
inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw Error(ErrorCode::ShapeMismatch, "axis out of range");
  AxisSplit r;
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  r.n = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}
}  // namespace detail

inline Tensor sum(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis);
  Shape s = a.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> v(sp.outer * sp.inner, 0.0);
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i)
        v[o * sp.inner + i] += av[(o * sp.n + k) * sp.inner + i];
  return make_result(std::move(s), std::move(v), {a}, [sp](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i)
          g[(o * sp.n + k) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  const std::size_t n = a.shape().at(axis);
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "mean over an empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

/// Euclidean norm of each row of [N, D] -> [N]. Zero rows get zero gradient.
inline Tensor l2_norm_rows(const Tensor& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::ShapeMismatch, "l2_norm_rows expects [N,D]");
  const std::size_t rows = a.dim(0);
  const std::size_t d = a.dim(1);
  std::vector<double> v(rows);
  const auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += av[r * d + j] * av[r * d + j];
    v[r] = std::sqrt(acc);
    record_kink(v[r]);
  }
  return make_result({rows}, std::move(v), {a}, [rows, d](detail::Node& self) {
    const auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double nrm = self.value[r];
      if (nrm == 0.0) continue;
      const double s = self.grad[r] / nrm;
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += s * x[r * d + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family.

/// Max-subtracted softmax along `axis`.
inline Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis);
  std::vector<double> v(a.numel());
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, av[at(k)]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        v[at(k)] = std::exp(av[at(k)] - mx);
        z += v[at(k)];
      }
      for (std::size_t k = 0; k < sp.n; ++k) v[at(k)] /= z;
    }
  }
  return make_result(a.shape(), std::move(v), {a}, [sp](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.n; ++k) dot += y[at(k)] * self.grad[at(k)];
        for (std::size_t k = 0; k < sp.n; ++k) g[at(k)] += y[at(k)] * (self.grad[at(k)] - dot);
      }
    }
  });
}

/// Softmax of a [P] vector within groups given by `segment` (values in
/// [0, num_segments)). Members of a group need not be contiguous.
inline Tensor segment_softmax(const Tensor& a, std::vector<Index> segment,
                              std::size_t num_segments) {
  if (a.ndim() != 1 || segment.size() != a.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch, "segment_softmax expects [P] with P segment ids");
  }
  for (Index s : segment) {
    if (s < 0 || static_cast<std::size_t>(s) >= num_segments) {
      throw Error(ErrorCode::IndexOutOfRange, "segment id " + std::to_string(s));
    }
  }
  const auto av = a.data();
  const std::size_t p = av.size();
  std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < p; ++i) {
    auto& m = mx[static_cast<std::size_t>(segment[i])];
    m = std::max(m, av[i]);
  }
  std::vector<double> v(p);
  std::vector<double> z(num_segments, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    const auto s = static_cast<std::size_t>(segment[i]);
    v[i] = std::exp(av[i] - mx[s]);
    z[s] += v[i];
  }
  for (std::size_t i = 0; i < p; ++i) v[i] /= z[static_cast<std::size_t>(segment[i])];
  return make_result({p}, std::move(v), {a},
                     [segment = std::move(segment), num_segments](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       const auto& y = self.value;
                       std::vector<double> dot(num_segments, 0.0);
                       for (std::size_t i = 0; i < y.size(); ++i)
                         dot[static_cast<std::size_t>(segment[i])] += y[i] * self.grad[i];
                       for (std::size_t i = 0; i < y.size(); ++i)
                         g[i] += y[i] * (self.grad[i] - dot[static_cast<std::size_t>(segment[i])]);
                     });
}

/// Column-wise max of the rows of [P, C] sharing a segment id; empty
/// segments produce zero rows.
inline Tensor segment_max_rows(const Tensor& a, std::vector<Index> segment,
                               std::size_t num_segments) {
  if (a.ndim() != 2 || segment.size() != a.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch, "segment_max_rows expects [P,C] with P segment ids");
  }
  const std::size_t c = a.dim(1);
  const auto av = a.data();
  std::vector<double> v(num_segments * c, 0.0);
  std::vector<Index> arg(num_segments * c, -1);
  std::vector<double> second;
  const bool recording = KinkRecorder::active() != nullptr;
  if (recording) second.assign(num_segments * c, -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < segment.size(); ++r) {
    const Index s = segment[r];
    if (s < 0 || static_cast<std::size_t>(s) >= num_segments) {
      throw Error(ErrorCode::IndexOutOfRange, "segment id " + std::to_string(s));
    }
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t o = static_cast<std::size_t>(s) * c + j;
      const double x = av[r * c + j];
      if (arg[o] < 0 || x > v[o]) {
        if (recording && arg[o] >= 0) second[o] = v[o];
        v[o] = x;
        arg[o] = static_cast<Index>(r);
      } else if (recording) {
        second[o] = std::max(second[o], x);
      }
    }
  }
  if (recording) {
    for (std::size_t o = 0; o < v.size(); ++o) {
      if (std::isfinite(second[o])) record_kink(v[o] - second[o]);
    }
  }
  return make_result({num_segments, c}, std::move(v), {a}, [arg, c](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < arg.size(); ++o) {
      if (arg[o] >= 0) g[static_cast<std::size_t>(arg[o]) * c + o % c] += self.grad[o];
    }
  });
}

/// Row-wise dot product of two [P, C] tensors -> [P].
inline Tensor rows_dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b), 1); }

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double x) { return std::isfinite(x); });
}

}  // namespace raliflow::ad

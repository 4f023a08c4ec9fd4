#pragma once

// Minimal reverse-mode differentiation over dense row-major tensors.
//
// Every operation produces a Var holding its value; when any input requires a
// gradient, the result also records its parents and a backward closure. Graphs
// are built per forward pass and released when the last Var goes out of scope,
// so independent graphs can be built on different threads from shared constant
// data.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "orbit/errors.hpp"

namespace orbit::ad {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t k = 0; k < s.size(); ++k) out += (k ? "," : "") + std::to_string(s[k]);
  return out + "]";
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
  /// Gradient buffer of parent k, or nullptr when that parent is constant.
  T* parent_grad(std::size_t k) {
    auto& p = parents[k];
    return p->requires_grad ? p->grad_buffer().data() : nullptr;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Shape shape, std::vector<T> value) { return make_leaf(std::move(shape), std::move(value), false); }
  static Var parameter(Shape shape, std::vector<T> value) { return make_leaf(std::move(shape), std::move(value), true); }
  static Var scalar(T x) { return constant({1}, {x}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t k) const { return node_->shape.at(k); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> value() const { return node_->value; }
  T item() const {
    detail::require(size() == 1, "Var::item on non-scalar");
    return node_->value[0];
  }
  /// Gradient accumulated by backward(); zeros when this node received none.
  std::vector<T> grad() const {
    if (node_->grad.size() == node_->value.size()) return node_->grad;
    return std::vector<T>(node_->value.size(), T(0));
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  static Var make_leaf(Shape shape, std::vector<T> value, bool rg) {
    detail::require(numel(shape) == value.size(), "Var: shape " + shape_str(shape) + " does not match value count");
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = rg;
    return Var(std::move(n));
  }

  std::shared_ptr<Node<T>> node_;
};

/// Creates an op result. The backward closure is kept only when some parent needs a gradient.
template <class T, class Backward>
Var<T> make_op(Shape shape, std::vector<T> value, std::initializer_list<Var<T>> parents, Backward&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  if (rg) {
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::forward<Backward>(backward);
  }
  return Var<T>(std::move(n));
}

template <class T, class Backward>
Var<T> make_op(Shape shape, std::vector<T> value, const std::vector<Var<T>>& parents, Backward&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  if (rg) {
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::forward<Backward>(backward);
  }
  return Var<T>(std::move(n));
}

/// Runs reverse accumulation from a scalar root (seed 1).
template <class T>
void backward(const Var<T>& root) {
  detail::require(root.size() == 1, "backward: root must be scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS to get a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

namespace detail {
template <class T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  orbit::detail::require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                                      " vs " + shape_str(b.shape()));
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Products run on aligned copies; Eigen peels vector loops to the operand
// alignment, which would make the summation order follow heap addresses.
template <class T>
RowMat<T> aligned(const T* p, int rows, int cols) {
  return CMapMat<T>(p, rows, cols);
}

template <class T>
void store(T* dst, const RowMat<T>& m, bool accumulate) {
  const std::size_t n = static_cast<std::size_t>(m.size());
  const T* src = m.data();
  if (accumulate)
    for (std::size_t k = 0; k < n; ++k) dst[k] += src[k];
  else
    std::copy(src, src + n, dst);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.value()[k] + b.value()[k];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (T* g = self.parent_grad(p))
        for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] += self.grad[k];
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.value()[k] - b.value()[k];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (T* g = self.parent_grad(0))
      for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] += self.grad[k];
    if (T* g = self.parent_grad(1))
      for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] -= self.grad[k];
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.value()[k] * b.value()[k];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* g = self.parent_grad(0))
      for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] += self.grad[k] * bv[k];
    if (T* g = self.parent_grad(1))
      for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] += self.grad[k] * av[k];
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
  std::vector<T> out(a.value().begin(), a.value().end());
  for (auto& v : out) v *= c;
  return make_op<T>(a.shape(), std::move(out), {a}, [c](Node<T>& self) {
    T* g = self.parent_grad(0);
    for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] += c * self.grad[k];
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value()) s += v;
  return make_op<T>({1}, {s}, {a}, [](Node<T>& self) {
    T* g = self.parent_grad(0);
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t k = 0; k < n; ++k) g[k] += self.grad[0];
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// Sum of a list of scalars in list order.
template <class T>
Var<T> add_scalars(const std::vector<Var<T>>& terms) {
  T s = 0;
  for (const auto& t : terms) s += t.item();
  return make_op<T>({1}, {s}, terms, [](Node<T>& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p)
      if (T* g = self.parent_grad(p)) g[0] += self.grad[0];
  });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  orbit::detail::require(numel(shape) == a.size(), "reshape: element count mismatch");
  std::vector<T> out(a.value().begin(), a.value().end());
  return make_op<T>(std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    T* g = self.parent_grad(0);
    for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] += self.grad[k];
  });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2)) {
  std::vector<T> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const T v = a.value()[k];
    out[k] = v > 0 ? v : slope * v;
  }
  return make_op<T>(a.shape(), std::move(out), {a}, [slope](Node<T>& self) {
    T* g = self.parent_grad(0);
    const auto& x = self.parents[0]->value;
    for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] += (x[k] > 0 ? T(1) : slope) * self.grad[k];
  });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::tanh(a.value()[k]);
  return make_op<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    T* g = self.parent_grad(0);
    for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] += (T(1) - self.value[k] * self.value[k]) * self.grad[k];
  });
}

// ---------------------------------------------------------------------------
// Matrix ops (2-D, row-major)

/// [n,k] × [k,m] → [n,m]
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  orbit::detail::require(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(1) == b.dim(0),
                         "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(n) * m);
  {
    const detail::RowMat<T> y = detail::aligned(a.value().data(), n, k) * detail::aligned(b.value().data(), k, m);
    detail::store(out.data(), y, false);
  }
  return make_op<T>({n, m}, std::move(out), {a, b}, [n, k, m](Node<T>& self) {
    const auto gy = detail::aligned(self.grad.data(), n, m);
    if (T* g = self.parent_grad(0)) {
      const detail::RowMat<T> d = gy * detail::aligned(self.parents[1]->value.data(), k, m).transpose();
      detail::store(g, d, true);
    }
    if (T* g = self.parent_grad(1)) {
      const detail::RowMat<T> d = detail::aligned(self.parents[0]->value.data(), n, k).transpose() * gy;
      detail::store(g, d, true);
    }
  });
}

/// Affine layer: x[n,in] · Wᵀ + b with W[out,in], b[out].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  orbit::detail::require(x.shape().size() == 2 && w.shape().size() == 2 && x.dim(1) == w.dim(1),
                         "linear: incompatible shapes " + shape_str(x.shape()) + " · " + shape_str(w.shape()) + "ᵀ");
  orbit::detail::require(b.size() == static_cast<std::size_t>(w.dim(0)), "linear: bias size mismatch");
  const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  std::vector<T> out(static_cast<std::size_t>(n) * out_dim);
  {
    const detail::RowMat<T> y =
        detail::aligned(x.value().data(), n, in) * detail::aligned(w.value().data(), out_dim, in).transpose();
    detail::store(out.data(), y, false);
  }
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < out_dim; ++c) out[static_cast<std::size_t>(r) * out_dim + c] += b.value()[c];
  return make_op<T>({n, out_dim}, std::move(out), {x, w, b}, [n, in, out_dim](Node<T>& self) {
    const auto gy = detail::aligned(self.grad.data(), n, out_dim);
    if (T* g = self.parent_grad(0)) {
      const detail::RowMat<T> d = gy * detail::aligned(self.parents[1]->value.data(), out_dim, in);
      detail::store(g, d, true);
    }
    if (T* g = self.parent_grad(1)) {
      const detail::RowMat<T> d = gy.transpose() * detail::aligned(self.parents[0]->value.data(), n, in);
      detail::store(g, d, true);
    }
    if (T* g = self.parent_grad(2))
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < out_dim; ++c) g[c] += gy(r, c);
  });
}

/// x[n,d] + v[d] broadcast over rows.
template <class T>
Var<T> add_rows(const Var<T>& x, const Var<T>& v) {
  orbit::detail::require(x.shape().size() == 2 && v.size() == static_cast<std::size_t>(x.dim(1)),
                         "add_rows: shape mismatch");
  const int n = x.dim(0), d = x.dim(1);
  std::vector<T> out(x.value().begin(), x.value().end());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(r) * d + c] += v.value()[c];
  return make_op<T>(x.shape(), std::move(out), {x, v}, [n, d](Node<T>& self) {
    if (T* g = self.parent_grad(0))
      for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] += self.grad[k];
    if (T* g = self.parent_grad(1))
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) g[c] += self.grad[static_cast<std::size_t>(r) * d + c];
  });
}

/// Mean over rows of x[n,d] → [1,d]. Rows are summed in index order.
template <class T>
Var<T> mean_rows(const Var<T>& x) {
  orbit::detail::require(x.shape().size() == 2 && x.dim(0) >= 1, "mean_rows: need [n,d] with n >= 1");
  const int n = x.dim(0), d = x.dim(1);
  std::vector<T> out(d, T(0));
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) out[c] += x.value()[static_cast<std::size_t>(r) * d + c];
  for (auto& v : out) v /= static_cast<T>(n);
  return make_op<T>({1, d}, std::move(out), {x}, [n, d](Node<T>& self) {
    T* g = self.parent_grad(0);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c) g[static_cast<std::size_t>(r) * d + c] += self.grad[c] / static_cast<T>(n);
  });
}

// ---------------------------------------------------------------------------
// Indexing along the leading axis

/// x[i, ...] with the leading axis dropped.
template <class T>
Var<T> select(const Var<T>& x, int i) {
  orbit::detail::require(!x.shape().empty() && i >= 0 && i < x.dim(0), "select: index out of range");
  Shape tail(x.shape().begin() + 1, x.shape().end());
  if (tail.empty()) tail = {1};
  const std::size_t stride = numel(tail);
  const auto first = x.value().begin() + static_cast<std::ptrdiff_t>(i * stride);
  std::vector<T> out(first, first + static_cast<std::ptrdiff_t>(stride));
  return make_op<T>(std::move(tail), std::move(out), {x}, [i, stride](Node<T>& self) {
    T* g = self.parent_grad(0) + i * stride;
    for (std::size_t k = 0; k < stride; ++k) g[k] += self.grad[k];
  });
}

/// Stacks same-shape tensors along a new leading axis.
template <class T>
Var<T> stack(const std::vector<Var<T>>& items) {
  orbit::detail::require(!items.empty(), "stack: empty input");
  const Shape inner = items.front().shape();
  const std::size_t stride = numel(inner);
  std::vector<T> out;
  out.reserve(stride * items.size());
  for (const auto& it : items) {
    orbit::detail::require(it.shape() == inner, "stack: shape mismatch");
    out.insert(out.end(), it.value().begin(), it.value().end());
  }
  Shape shape{static_cast<int>(items.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return make_op<T>(std::move(shape), std::move(out), items, [stride](Node<T>& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p)
      if (T* g = self.parent_grad(p))
        for (std::size_t k = 0; k < stride; ++k) g[k] += self.grad[p * stride + k];
  });
}

// ---------------------------------------------------------------------------
// Small-vector ops (used by Gram–Schmidt)

template <class T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
  orbit::detail::require(a.size() == b.size(), "dot: length mismatch");
  T s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.value()[k] * b.value()[k];
  return make_op<T>({1}, {s}, {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* g = self.parent_grad(0))
      for (std::size_t k = 0; k < av.size(); ++k) g[k] += self.grad[0] * bv[k];
    if (T* g = self.parent_grad(1))
      for (std::size_t k = 0; k < av.size(); ++k) g[k] += self.grad[0] * av[k];
  });
}

/// a · s for a scalar Var s.
template <class T>
Var<T> scale_by(const Var<T>& a, const Var<T>& s) {
  orbit::detail::require(s.size() == 1, "scale_by: scale must be scalar");
  const T c = s.item();
  std::vector<T> out(a.value().begin(), a.value().end());
  for (auto& v : out) v *= c;
  return make_op<T>(a.shape(), std::move(out), {a, s}, [c](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    if (T* g = self.parent_grad(0))
      for (std::size_t k = 0; k < av.size(); ++k) g[k] += c * self.grad[k];
    if (T* g = self.parent_grad(1))
      for (std::size_t k = 0; k < av.size(); ++k) g[0] += av[k] * self.grad[k];
  });
}

/// a / ‖a‖. Throws NumericalError when ‖a‖ < min_norm.
template <class T>
Var<T> normalize(const Var<T>& a, T min_norm) {
  T sq = 0;
  for (T v : a.value()) sq += v * v;
  const T norm = std::sqrt(sq);
  if (!(norm >= min_norm)) throw NumericalError("normalize: vector norm below rank threshold");
  std::vector<T> out(a.value().begin(), a.value().end());
  for (auto& v : out) v /= norm;
  return make_op<T>(a.shape(), std::move(out), {a}, [norm](Node<T>& self) {
    // d(a/|a|) = (I - e eᵀ) / |a|
    T proj = 0;
    for (std::size_t k = 0; k < self.value.size(); ++k) proj += self.value[k] * self.grad[k];
    T* g = self.parent_grad(0);
    for (std::size_t k = 0; k < self.value.size(); ++k) g[k] += (self.grad[k] - self.value[k] * proj) / norm;
  });
}

}  // namespace orbit::ad

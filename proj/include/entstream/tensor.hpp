#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "entstream/errors.hpp"
#include "entstream/gemm.hpp"

namespace entstream {

namespace detail {

template <class S>
struct Node {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;  // sized lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // reads this->grad, accumulates parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

inline std::int64_t shape_size(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace detail

/// Handle to a node of the reverse-mode gradient tape. Copies share the node.
/// Values are written once by the producing operation; leaves (parameters and
/// inputs) may be mutated between forward passes by their owner.
template <class S>
class TensorT {
 public:
  using Node = detail::Node<S>;

  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    return make_leaf(std::move(shape), {}, requires_grad);
  }

  static TensorT full(std::vector<int> shape, S v, bool requires_grad = false) {
    auto t = make_leaf(std::move(shape), {}, requires_grad);
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static TensorT from_data(std::vector<int> shape, std::vector<S> data,
                           bool requires_grad = false) {
    if (detail::shape_size(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + detail::shape_str(shape));
    return make_leaf(std::move(shape), std::move(data), requires_grad);
  }

  static TensorT scalar_value(S v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(n_->value.size()); }

  // Handles have pointer semantics: const applies to the handle, not the
  // node, so captured copies inside backward closures can write gradients.
  std::vector<S>& data() const { return n_->value; }
  std::vector<S>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }
  bool has_grad() const { return n_->grad.size() == n_->value.size(); }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  S item() const {
    if (size() != 1)
      throw ContractError("item() requires a scalar tensor, got shape " +
                          detail::shape_str(shape()));
    return n_->value[0];
  }

  void zero_grad() const {
    n_->ensure_grad();
    std::fill(n_->grad.begin(), n_->grad.end(), S(0));
  }

  /// Reverse pass from a scalar. Populates grad on every reachable tensor
  /// with requires_grad; contributions from multiple consumers accumulate.
  void backward() const {
    if (size() != 1)
      throw ContractError("backward() requires a scalar loss, got shape " +
                          detail::shape_str(shape()));
    if (!n_->requires_grad) return;

    // Reverse post-order DFS: every consumer is processed before the node.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
      Node* node;
      std::size_t next;
    };
    std::vector<Frame> stack{{n_.get(), 0}};
    visited.insert(n_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->parents.size()) {
        Node* p = f.node->parents[f.next++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }

    n_->ensure_grad();
    n_->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->backward) node->backward(*node);
    }
  }

  std::shared_ptr<Node> node() const { return n_; }

  /// Builds a non-leaf result node. Used by every differentiable operation.
  static TensorT make_op(std::vector<int> shape, std::vector<S> value,
                         std::vector<TensorT> parents,
                         std::function<void(Node&)> backward) {
    TensorT t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) {
      needs = needs || p.requires_grad();
      t.n_->parents.push_back(p.n_);
    }
    t.n_->requires_grad = needs;
    if (needs) t.n_->backward = std::move(backward);
    return t;
  }

 private:
  static TensorT make_leaf(std::vector<int> shape, std::vector<S> data,
                           bool requires_grad) {
    TensorT t;
    t.n_ = std::make_shared<Node>();
    const auto n = static_cast<std::size_t>(detail::shape_size(shape));
    t.n_->shape = std::move(shape);
    t.n_->value = data.empty() ? std::vector<S>(n, S(0)) : std::move(data);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  std::shared_ptr<Node> n_;
};

using Tensor = TensorT<float>;

namespace detail {

template <class S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b,
                      const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class S>
void check_matrix(const TensorT<S>& t, const char* op) {
  if (t.ndim() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<S> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  return TensorT<S>::make_op(
      a.shape(), std::move(out), {a, b},
      [a, b](detail::Node<S>& self) {
        if (a.requires_grad()) {
          auto& g = a.grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (b.requires_grad()) {
          auto& g = b.grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
      });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<S> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
  return TensorT<S>::make_op(
      a.shape(), std::move(out), {a, b},
      [a, b](detail::Node<S>& self) {
        if (a.requires_grad()) {
          auto& g = a.grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (b.requires_grad()) {
          auto& g = b.grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
      });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<S> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  return TensorT<S>::make_op(
      a.shape(), std::move(out), {a, b},
      [a, b](detail::Node<S>& self) {
        if (a.requires_grad()) {
          auto& g = a.grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * b.data()[i];
        }
        if (b.requires_grad()) {
          auto& g = b.grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * a.data()[i];
        }
      });
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  std::vector<S> out(a.data());
  for (auto& v : out) v *= c;
  return TensorT<S>::make_op(a.shape(), std::move(out), {a},
                             [a, c](detail::Node<S>& self) {
                               auto& g = a.grad();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 g[i] += self.grad[i] * c;
                             });
}

template <class S>
TensorT<S> relu(const TensorT<S>& a) {
  std::vector<S> out(a.data());
  for (auto& v : out) v = v > S(0) ? v : S(0);
  return TensorT<S>::make_op(a.shape(), std::move(out), {a},
                             [a](detail::Node<S>& self) {
                               auto& g = a.grad();
                               const auto& x = a.data();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 if (x[i] > S(0)) g[i] += self.grad[i];
                             });
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  std::vector<S> out(a.data());
  for (auto& v : out) v = S(1) / (S(1) + std::exp(-v));
  return TensorT<S>::make_op(a.shape(), std::move(out), {a},
                             [a](detail::Node<S>& self) {
                               auto& g = a.grad();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 const S y = self.value[i];
                                 g[i] += self.grad[i] * y * (S(1) - y);
                               }
                             });
}

template <class S>
TensorT<S> tanh_t(const TensorT<S>& a) {
  std::vector<S> out(a.data());
  for (auto& v : out) v = std::tanh(v);
  return TensorT<S>::make_op(a.shape(), std::move(out), {a},
                             [a](detail::Node<S>& self) {
                               auto& g = a.grad();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 const S y = self.value[i];
                                 g[i] += self.grad[i] * (S(1) - y * y);
                               }
                             });
}

// ---------------------------------------------------------------------------
// Shape operations

template <class S>
TensorT<S> reshape(const TensorT<S>& a, std::vector<int> shape) {
  if (detail::shape_size(shape) != a.size())
    throw ShapeError("reshape: cannot view " + detail::shape_str(a.shape()) +
                     " as " + detail::shape_str(shape));
  return TensorT<S>::make_op(std::move(shape), a.data(), {a},
                             [a](detail::Node<S>& self) {
                               auto& g = a.grad();
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 g[i] += self.grad[i];
                             });
}

/// Repeats a vector [d] into n rows -> [n, d].
template <class S>
TensorT<S> broadcast_row(const TensorT<S>& v, int n) {
  if (v.ndim() != 1)
    throw ShapeError("broadcast_row: expected a vector, got " +
                     detail::shape_str(v.shape()));
  const int d = v.dim(0);
  std::vector<S> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    std::copy(v.data().begin(), v.data().end(), out.begin() + std::size_t(i) * d);
  return TensorT<S>::make_op(
      {n, d}, std::move(out), {v}, [v, n, d](detail::Node<S>& self) {
        auto& g = v.grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j)
            g[static_cast<std::size_t>(j)] +=
                self.grad[static_cast<std::size_t>(i) * d + j];
      });
}

/// Concatenates two matrices along columns: [n,a] ++ [n,b] -> [n, a+b].
template <class S>
TensorT<S> concat_cols(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_matrix(a, "concat_cols");
  detail::check_matrix(b, "concat_cols");
  if (a.dim(0) != b.dim(0))
    throw ShapeError("concat_cols: row mismatch " +
                     detail::shape_str(a.shape()) + " vs " +
                     detail::shape_str(b.shape()));
  const int n = a.dim(0), da = a.dim(1), db = b.dim(1);
  std::vector<S> out(static_cast<std::size_t>(n) * (da + db));
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + std::size_t(i) * da, da,
                out.begin() + std::size_t(i) * (da + db));
    std::copy_n(b.data().begin() + std::size_t(i) * db, db,
                out.begin() + std::size_t(i) * (da + db) + da);
  }
  return TensorT<S>::make_op(
      {n, da + db}, std::move(out), {a, b},
      [a, b, n, da, db](detail::Node<S>& self) {
        if (a.requires_grad()) {
          auto& g = a.grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < da; ++j)
              g[std::size_t(i) * da + j] +=
                  self.grad[std::size_t(i) * (da + db) + j];
        }
        if (b.requires_grad()) {
          auto& g = b.grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < db; ++j)
              g[std::size_t(i) * db + j] +=
                  self.grad[std::size_t(i) * (da + db) + da + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_matrix(a, "matmul");
  detail::check_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions differ, " +
                     detail::shape_str(a.shape()) + " x " +
                     detail::shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> out(static_cast<std::size_t>(m) * n, S(0));
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, n, k);
  return TensorT<S>::make_op(
      {m, n}, std::move(out), {a, b},
      [a, b, m, k, n](detail::Node<S>& self) {
        if (a.requires_grad())
          detail::gemm_nt(self.grad.data(), b.data().data(), a.grad().data(),
                          m, k, n);
        if (b.requires_grad())
          detail::gemm_tn(a.data().data(), self.grad.data(), b.grad().data(),
                          k, n, m);
      });
}

/// Adds a row vector [d] to every row of [n, d].
template <class S>
TensorT<S> add_rowvec(const TensorT<S>& m, const TensorT<S>& v) {
  detail::check_matrix(m, "add_rowvec");
  if (v.ndim() != 1 || v.dim(0) != m.dim(1))
    throw ShapeError("add_rowvec: bias " + detail::shape_str(v.shape()) +
                     " does not match " + detail::shape_str(m.shape()));
  const int n = m.dim(0), d = m.dim(1);
  std::vector<S> out(m.data());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[std::size_t(i) * d + j] += v.data()[std::size_t(j)];
  return TensorT<S>::make_op(
      {n, d}, std::move(out), {m, v},
      [m, v, n, d](detail::Node<S>& self) {
        if (m.requires_grad()) {
          auto& g = m.grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (v.requires_grad()) {
          auto& g = v.grad();
          for (int j = 0; j < d; ++j) {
            double acc = 0;
            for (int i = 0; i < n; ++i)
              acc += static_cast<double>(self.grad[std::size_t(i) * d + j]);
            g[std::size_t(j)] += static_cast<S>(acc);
          }
        }
      });
}

/// x[n,in] * w[in,out] + b[out]
template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w,
                  const TensorT<S>& b) {
  return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulation)

template <class S>
TensorT<S> sum_all(const TensorT<S>& a) {
  double acc = 0;
  for (S v : a.data()) acc += static_cast<double>(v);
  return TensorT<S>::make_op({1}, {static_cast<S>(acc)}, {a},
                             [a](detail::Node<S>& self) {
                               auto& g = a.grad();
                               const S gs = self.grad[0];
                               for (auto& gi : g) gi += gs;
                             });
}

template <class S>
TensorT<S> mean_all(const TensorT<S>& a) {
  double acc = 0;
  for (S v : a.data()) acc += static_cast<double>(v);
  const double inv = 1.0 / static_cast<double>(a.size());
  return TensorT<S>::make_op({1}, {static_cast<S>(acc * inv)}, {a},
                             [a, inv](detail::Node<S>& self) {
                               auto& g = a.grad();
                               const S gs =
                                   static_cast<S>(self.grad[0] * inv);
                               for (auto& gi : g) gi += gs;
                             });
}

// ---------------------------------------------------------------------------
// Softmax and categorical cross-entropy

namespace detail {

/// Row softmax into out; max-subtraction, 64-bit normalizer.
template <class S>
void softmax_rows(const S* in, S* out, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const S* x = in + static_cast<std::int64_t>(r) * cols;
    S* y = out + static_cast<std::int64_t>(r) * cols;
    S mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double norm = 0;
    for (int j = 0; j < cols; ++j) {
      const double e = std::exp(static_cast<double>(x[j] - mx));
      y[j] = static_cast<S>(e);
      norm += e;
    }
    const double inv = 1.0 / norm;
    for (int j = 0; j < cols; ++j) y[j] = static_cast<S>(y[j] * inv);
  }
}

}  // namespace detail

/// Softmax over the last dimension of a vector or matrix.
template <class S>
TensorT<S> softmax(const TensorT<S>& a) {
  if (a.ndim() < 1 || a.ndim() > 2)
    throw ShapeError("softmax: expected a vector or matrix, got " +
                     detail::shape_str(a.shape()));
  for (S v : a.data())
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("softmax: non-finite input");
  const int cols = a.dim(a.ndim() - 1);
  const int rows = static_cast<int>(a.size() / cols);
  if (cols < 1) throw ShapeError("softmax: empty input");
  std::vector<S> out(a.size());
  detail::softmax_rows(a.data().data(), out.data(), rows, cols);
  return TensorT<S>::make_op(
      a.shape(), std::move(out), {a},
      [a, rows, cols](detail::Node<S>& self) {
        // dx = y * (dy - sum(dy * y)) per row
        auto& g = a.grad();
        for (int r = 0; r < rows; ++r) {
          const std::size_t off = static_cast<std::size_t>(r) * cols;
          double dot = 0;
          for (int j = 0; j < cols; ++j)
            dot += static_cast<double>(self.grad[off + j]) *
                   static_cast<double>(self.value[off + j]);
          for (int j = 0; j < cols; ++j)
            g[off + j] += self.value[off + j] *
                          (self.grad[off + j] - static_cast<S>(dot));
        }
      });
}

/// Mean categorical cross-entropy over a batch of logit rows.
/// loss_i = logsumexp(logits_i) - logits_i[target_i].
template <class S>
TensorT<S> cross_entropy(const TensorT<S>& logits,
                         const std::vector<int>& targets) {
  if (logits.ndim() < 1 || logits.ndim() > 2)
    throw ShapeError("cross_entropy: expected a vector or matrix, got " +
                     detail::shape_str(logits.shape()));
  const int cols = logits.dim(logits.ndim() - 1);
  const int rows = static_cast<int>(logits.size() / cols);
  if (static_cast<int>(targets.size()) != rows)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(rows) + " rows");
  for (int t : targets)
    if (t < 0 || t >= cols)
      throw IndexError("cross_entropy: target " + std::to_string(t) +
                       " out of range [0," + std::to_string(cols) + ")");

  std::vector<S> probs(logits.size());
  detail::softmax_rows(logits.data().data(), probs.data(), rows, cols);
  double acc = 0;
  for (int r = 0; r < rows; ++r) {
    const S* x = logits.data().data() + static_cast<std::size_t>(r) * cols;
    S mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double norm = 0;
    for (int j = 0; j < cols; ++j)
      norm += std::exp(static_cast<double>(x[j] - mx));
    acc += std::log(norm) + static_cast<double>(mx) -
           static_cast<double>(x[targets[static_cast<std::size_t>(r)]]);
  }
  const double inv = 1.0 / rows;
  return TensorT<S>::make_op(
      {1}, {static_cast<S>(acc * inv)}, {logits},
      [logits, targets, probs = std::move(probs), rows, cols,
       inv](detail::Node<S>& self) {
        // d logits = (softmax - onehot(target)) / rows
        auto& g = logits.grad();
        const S gs = static_cast<S>(self.grad[0] * inv);
        for (int r = 0; r < rows; ++r) {
          const std::size_t off = static_cast<std::size_t>(r) * cols;
          for (int j = 0; j < cols; ++j) g[off + j] += gs * probs[off + j];
          g[off + static_cast<std::size_t>(
                      targets[static_cast<std::size_t>(r)])] -= gs;
        }
      });
}

template <class S>
TensorT<S> cross_entropy(const TensorT<S>& logits, int target) {
  return cross_entropy(logits, std::vector<int>{target});
}

/// Row-wise argmax of a matrix (or a single vector). Not differentiable.
template <class S>
std::vector<int> argmax_rows(const TensorT<S>& t) {
  const int cols = t.dim(t.ndim() - 1);
  const int rows = static_cast<int>(t.size() / cols);
  std::vector<int> out(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const S* x = t.data().data() + static_cast<std::size_t>(r) * cols;
    int best = 0;
    for (int j = 1; j < cols; ++j)
      if (x[j] > x[best]) best = j;
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

/// Zeroes the grad buffers of a parameter list.
template <class S>
void zero_grads(const std::vector<TensorT<S>>& params) {
  for (const auto& p : params) p.zero_grad();
}

}  // namespace entstream

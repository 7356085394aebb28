#pragma once

// Dense 64-bit tensors with reverse-mode automatic differentiation. Tensors
// are handles onto graph nodes; ops record parents and a backward closure,
// backward() replays the closures in reverse creation order. The sparse
// operand of sparse_matmul is a frozen constant (adjacency and sampling
// matrices never receive gradients).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "dcgnet/mesh.hpp"
#include "dcgnet/util.hpp"

namespace dcgnet {

enum class AutodiffErrorKind { shape_mismatch, invalid_argument, state_error };

class AutodiffError : public std::runtime_error {
 public:
  AutodiffError(AutodiffErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  AutodiffErrorKind kind() const noexcept { return kind_; }

 private:
  AutodiffErrorKind kind_;
};

struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass touches this node
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;
};

namespace detail {

inline std::uint64_t next_seq() {
  static std::uint64_t counter = 0;
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline void ensure_grad(TensorNode& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

}  // namespace detail

// Disables graph recording in scope (forward values still computed).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor constant(int rows, int cols, std::vector<double> data) {
    return make_leaf(rows, cols, std::move(data), false);
  }
  static Tensor zeros(int rows, int cols) {
    return make_leaf(rows, cols,
                     std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0), false);
  }
  static Tensor parameter(int rows, int cols, std::vector<double> data) {
    return make_leaf(rows, cols, std::move(data), true);
  }

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  double at(int r, int c) const {
    return node_->value[static_cast<std::size_t>(r) * node_->cols + c];
  }
  const std::vector<double>& values() const { return node_->value; }
  std::vector<double>& mutable_values() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }

  // Gradient accumulated by backward(); empty if no pass reached this node.
  const std::vector<double>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  static Tensor make_leaf(int rows, int cols, std::vector<double> data, bool requires_grad) {
    if (rows < 0 || cols < 0 ||
        data.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
      throw AutodiffError(AutodiffErrorKind::invalid_argument,
                          strfmt("tensor data length %zu does not match shape %dx%d", data.size(),
                                 rows, cols));
    }
    auto n = std::make_shared<TensorNode>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->seq = detail::next_seq();
    return Tensor(std::move(n));
  }

  std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) {
    throw AutodiffError(AutodiffErrorKind::state_error,
                        std::string(op) + ": undefined tensor argument");
  }
}

[[noreturn]] inline void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw AutodiffError(AutodiffErrorKind::shape_mismatch,
                      strfmt("%s: shapes %dx%d and %dx%d are incompatible", op, a.rows(), a.cols(),
                             b.rows(), b.cols()));
}

[[noreturn]] inline void shape_fail(const char* op, const Tensor& a, const std::string& why) {
  throw AutodiffError(AutodiffErrorKind::shape_mismatch,
                      strfmt("%s: shape %dx%d %s", op, a.rows(), a.cols(), why.c_str()));
}

// Creates the result node; records parents and marks requires_grad only when
// grad mode is on and some parent is differentiable.
inline std::shared_ptr<TensorNode> make_result(int rows, int cols, const char* op,
                                               std::initializer_list<Tensor> parents) {
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0);
  n->op = op;
  n->seq = next_seq();
  if (grad_mode()) {
    bool any = false;
    for (const Tensor& p : parents) any = any || p.node()->requires_grad;
    if (any) {
      n->requires_grad = true;
      for (const Tensor& p : parents) n->parents.push_back(p.node());
    }
  }
  return n;
}

inline std::shared_ptr<TensorNode> make_result(int rows, int cols, const char* op,
                                               const std::vector<Tensor>& parents) {
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0);
  n->op = op;
  n->seq = next_seq();
  if (grad_mode()) {
    bool any = false;
    for (const Tensor& p : parents) any = any || p.node()->requires_grad;
    if (any) {
      n->requires_grad = true;
      for (const Tensor& p : parents) n->parents.push_back(p.node());
    }
  }
  return n;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_defined(a, "matmul");
  detail::require_defined(b, "matmul");
  if (a.cols() != b.rows()) detail::shape_fail("matmul", a, b);
  const int m = a.rows(), k = a.cols(), n = b.cols();
  auto out = detail::make_result(m, n, "matmul", {a, b});
  detail::MutMap(out->value.data(), m, n).noalias() =
      detail::ConstMap(a.values().data(), m, k) * detail::ConstMap(b.values().data(), k, n);
  if (out->requires_grad) {
    out->backprop = [m, k, n](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& pa = *self.parents[0];
      TensorNode& pb = *self.parents[1];
      const detail::ConstMap dy(self.grad.data(), m, n);
      if (pa.requires_grad) {
        detail::ensure_grad(pa);
        detail::MutMap(pa.grad.data(), m, k).noalias() +=
            dy * detail::ConstMap(pb.value.data(), k, n).transpose();
      }
      if (pb.requires_grad) {
        detail::ensure_grad(pb);
        detail::MutMap(pb.grad.data(), k, n).noalias() +=
            detail::ConstMap(pa.value.data(), m, k).transpose() * dy;
      }
    };
  }
  return Tensor(out);
}

// y = s * x with the sparse operand frozen (no gradient flows into s).
inline Tensor sparse_matmul(std::shared_ptr<const SparseMatrix> s, const Tensor& x) {
  detail::require_defined(x, "sparse_matmul");
  if (!s) {
    throw AutodiffError(AutodiffErrorKind::invalid_argument, "sparse_matmul: null sparse operand");
  }
  if (s->cols != x.rows()) {
    throw AutodiffError(AutodiffErrorKind::shape_mismatch,
                        strfmt("sparse_matmul: shapes %dx%d and %dx%d are incompatible", s->rows,
                               s->cols, x.rows(), x.cols()));
  }
  const int n = x.cols();
  auto out = detail::make_result(s->rows, n, "sparse_matmul", {x});
  for (const SparseTriplet& t : s->entries) {
    const double* xr = x.values().data() + static_cast<std::size_t>(t.col) * n;
    double* yr = out->value.data() + static_cast<std::size_t>(t.row) * n;
    for (int j = 0; j < n; ++j) yr[j] += t.value * xr[j];
  }
  if (out->requires_grad) {
    out->backprop = [s, n](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      detail::ensure_grad(px);
      for (const SparseTriplet& t : s->entries) {
        const double* gy = self.grad.data() + static_cast<std::size_t>(t.row) * n;
        double* gx = px.grad.data() + static_cast<std::size_t>(t.col) * n;
        for (int j = 0; j < n; ++j) gx[j] += t.value * gy[j];
      }
    };
  }
  return Tensor(out);
}

inline Tensor sparse_matmul(const SparseMatrix& s, const Tensor& x) {
  return sparse_matmul(std::make_shared<const SparseMatrix>(s), x);
}

namespace detail {

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(op, a, b);
  auto out = make_result(a.rows(), a.cols(), op, {a, b});
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    out->value[i] = fwd(a.values()[i], b.values()[i]);
  }
  if (out->requires_grad) {
    out->backprop = [bwd](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& pa = *self.parents[0];
      TensorNode& pb = *self.parents[1];
      if (pa.requires_grad) ensure_grad(pa);
      if (pb.requires_grad) ensure_grad(pb);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        double da = 0, db = 0;
        bwd(self.grad[i], pa.value[i], pb.value[i], &da, &db);
        if (pa.requires_grad) pa.grad[i] += da;
        if (pb.requires_grad) pb.grad[i] += db;
      }
    };
  }
  return Tensor(out);
}

template <typename Fwd, typename Bwd>
Tensor elementwise_unary(const char* op, const Tensor& x, Fwd fwd, Bwd bwd) {
  require_defined(x, op);
  auto out = make_result(x.rows(), x.cols(), op, {x});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = fwd(x.values()[i]);
  if (out->requires_grad) {
    out->backprop = [bwd](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      ensure_grad(px);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        px.grad[i] += self.grad[i] * bwd(px.value[i], self.value[i]);
      }
    };
  }
  return Tensor(out);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double* da, double* db) {
        *da = g;
        *db = g;
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double* da, double* db) {
        *da = g;
        *db = -g;
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* da, double* db) {
        *da = g * y;
        *db = g * x;
      });
}

inline Tensor relu(const Tensor& x) {
  return detail::elementwise_unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
  return detail::elementwise_unary(
      "leaky_relu", x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::elementwise_unary(
      "sigmoid", x,
      [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor scale(const Tensor& x, double s) {
  detail::require_defined(x, "scale");
  auto out = detail::make_result(x.rows(), x.cols(), "scale", {x});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = s * x.values()[i];
  if (out->requires_grad) {
    out->backprop = [s](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      detail::ensure_grad(px);
      for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += s * self.grad[i];
    };
  }
  return Tensor(out);
}

// Row-vector bias broadcast: y[i, j] = x[i, j] + b[0, j].
inline Tensor add_row_bias(const Tensor& x, const Tensor& b) {
  detail::require_defined(x, "add_row_bias");
  detail::require_defined(b, "add_row_bias");
  if (b.rows() != 1 || b.cols() != x.cols()) detail::shape_fail("add_row_bias", x, b);
  const int n = x.rows(), c = x.cols();
  auto out = detail::make_result(n, c, "add_row_bias", {x, b});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      out->value[static_cast<std::size_t>(i) * c + j] = x.at(i, j) + b.values()[static_cast<std::size_t>(j)];
    }
  }
  if (out->requires_grad) {
    out->backprop = [n, c](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      TensorNode& pb = *self.parents[1];
      if (px.requires_grad) {
        detail::ensure_grad(px);
        for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
      }
      if (pb.requires_grad) {
        detail::ensure_grad(pb);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < c; ++j) {
            pb.grad[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * c + j];
          }
        }
      }
    };
  }
  return Tensor(out);
}

// Numerically stable per-row softmax (max subtraction). With an additive mask
// of very large negative logits, masked entries underflow to exactly 0.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_defined(x, "softmax_rows");
  const int n = x.rows(), c = x.cols();
  if (c < 1) detail::shape_fail("softmax_rows", x, "needs at least one column");
  auto out = detail::make_result(n, c, "softmax_rows", {x});
  for (int i = 0; i < n; ++i) {
    const double* xi = x.values().data() + static_cast<std::size_t>(i) * c;
    double* yi = out->value.data() + static_cast<std::size_t>(i) * c;
    double mx = xi[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    double sum = 0;
    for (int j = 0; j < c; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    for (int j = 0; j < c; ++j) yi[j] /= sum;
  }
  if (out->requires_grad) {
    out->backprop = [n, c](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      detail::ensure_grad(px);
      for (int i = 0; i < n; ++i) {
        const double* y = self.value.data() + static_cast<std::size_t>(i) * c;
        const double* gy = self.grad.data() + static_cast<std::size_t>(i) * c;
        double* gx = px.grad.data() + static_cast<std::size_t>(i) * c;
        double dot = 0;
        for (int j = 0; j < c; ++j) dot += gy[j] * y[j];
        for (int j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    };
  }
  return Tensor(out);
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) {
    throw AutodiffError(AutodiffErrorKind::invalid_argument, "concat_cols: no inputs");
  }
  int total = 0;
  for (const Tensor& p : parts) {
    detail::require_defined(p, "concat_cols");
    if (p.rows() != parts[0].rows()) detail::shape_fail("concat_cols", parts[0], p);
    total += p.cols();
  }
  const int n = parts[0].rows();
  auto out = detail::make_result(n, total, "concat_cols", parts);
  std::vector<int> offsets;
  int off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p.cols(); ++j) {
        out->value[static_cast<std::size_t>(i) * total + off + j] = p.at(i, j);
      }
    }
    off += p.cols();
  }
  if (out->requires_grad) {
    // Parent list may be shorter than parts when gradients are off; recorded
    // parents mirror parts exactly when tracking, so offsets align by index.
    std::vector<int> widths;
    for (const Tensor& p : parts) widths.push_back(p.cols());
    out->backprop = [n, total, offsets, widths](TensorNode& self) {
      if (self.grad.empty()) return;
      for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
        TensorNode& pp = *self.parents[pi];
        if (!pp.requires_grad) continue;
        detail::ensure_grad(pp);
        const int w = widths[pi], o = offsets[pi];
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < w; ++j) {
            pp.grad[static_cast<std::size_t>(i) * w + j] +=
                self.grad[static_cast<std::size_t>(i) * total + o + j];
          }
        }
      }
    };
  }
  return Tensor(out);
}

inline Tensor sum(const Tensor& x) {
  detail::require_defined(x, "sum");
  auto out = detail::make_result(1, 1, "sum", {x});
  double s = 0;
  for (double v : x.values()) s += v;
  out->value[0] = s;
  if (out->requires_grad) {
    out->backprop = [](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      detail::ensure_grad(px);
      for (double& g : px.grad) g += self.grad[0];
    };
  }
  return Tensor(out);
}

inline Tensor mean(const Tensor& x) {
  detail::require_defined(x, "mean");
  if (x.size() == 0) detail::shape_fail("mean", x, "is empty");
  auto out = detail::make_result(1, 1, "mean", {x});
  double s = 0;
  for (double v : x.values()) s += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  out->value[0] = s * inv;
  if (out->requires_grad) {
    out->backprop = [inv](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      detail::ensure_grad(px);
      for (double& g : px.grad) g += self.grad[0] * inv;
    };
  }
  return Tensor(out);
}

// Sum of absolute values; subgradient 0 at exact zeros.
inline Tensor l1_norm(const Tensor& x) {
  detail::require_defined(x, "l1_norm");
  auto out = detail::make_result(1, 1, "l1_norm", {x});
  double s = 0;
  for (double v : x.values()) s += std::abs(v);
  out->value[0] = s;
  if (out->requires_grad) {
    out->backprop = [](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      detail::ensure_grad(px);
      for (std::size_t i = 0; i < px.value.size(); ++i) {
        const double v = px.value[i];
        px.grad[i] += self.grad[0] * (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0));
      }
    };
  }
  return Tensor(out);
}

// Euclidean norm of the flattened tensor; subgradient 0 at the origin.
inline Tensor l2_norm(const Tensor& x) {
  detail::require_defined(x, "l2_norm");
  auto out = detail::make_result(1, 1, "l2_norm", {x});
  double s = 0;
  for (double v : x.values()) s += v * v;
  out->value[0] = std::sqrt(s);
  if (out->requires_grad) {
    out->backprop = [](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      const double norm = self.value[0];
      if (norm == 0.0) return;
      detail::ensure_grad(px);
      for (std::size_t i = 0; i < px.value.size(); ++i) {
        px.grad[i] += self.grad[0] * px.value[i] / norm;
      }
    };
  }
  return Tensor(out);
}

inline Tensor reshape(const Tensor& x, int rows, int cols) {
  detail::require_defined(x, "reshape");
  if (rows < 0 || cols < 0 ||
      static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != x.size()) {
    detail::shape_fail("reshape", x, strfmt("cannot reshape to %dx%d", rows, cols));
  }
  auto out = detail::make_result(rows, cols, "reshape", {x});
  out->value = x.values();
  if (out->requires_grad) {
    out->backprop = [](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      detail::ensure_grad(px);
      for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

inline Tensor slice_rows(const Tensor& x, int row_begin, int row_end) {
  detail::require_defined(x, "slice_rows");
  if (row_begin < 0 || row_end > x.rows() || row_begin >= row_end) {
    detail::shape_fail("slice_rows", x, strfmt("has no row range [%d, %d)", row_begin, row_end));
  }
  const int n = row_end - row_begin, c = x.cols();
  auto out = detail::make_result(n, c, "slice_rows", {x});
  std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(row_begin) * c,
            x.values().begin() + static_cast<std::ptrdiff_t>(row_end) * c, out->value.begin());
  if (out->requires_grad) {
    out->backprop = [row_begin, n, c](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      detail::ensure_grad(px);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
          px.grad[static_cast<std::size_t>(row_begin + i) * c + j] +=
              self.grad[static_cast<std::size_t>(i) * c + j];
        }
      }
    };
  }
  return Tensor(out);
}

inline Tensor slice_cols(const Tensor& x, int col_begin, int col_end) {
  detail::require_defined(x, "slice_cols");
  if (col_begin < 0 || col_end > x.cols() || col_begin >= col_end) {
    detail::shape_fail("slice_cols", x, strfmt("has no column range [%d, %d)", col_begin, col_end));
  }
  const int n = x.rows(), w = col_end - col_begin, c = x.cols();
  auto out = detail::make_result(n, w, "slice_cols", {x});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < w; ++j) {
      out->value[static_cast<std::size_t>(i) * w + j] = x.at(i, col_begin + j);
    }
  }
  if (out->requires_grad) {
    out->backprop = [n, w, c, col_begin](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      detail::ensure_grad(px);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < w; ++j) {
          px.grad[static_cast<std::size_t>(i) * c + col_begin + j] +=
              self.grad[static_cast<std::size_t>(i) * w + j];
        }
      }
    };
  }
  return Tensor(out);
}

inline Tensor transpose(const Tensor& x) {
  detail::require_defined(x, "transpose");
  const int n = x.rows(), c = x.cols();
  auto out = detail::make_result(c, n, "transpose", {x});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      out->value[static_cast<std::size_t>(j) * n + i] = x.at(i, j);
    }
  }
  if (out->requires_grad) {
    out->backprop = [n, c](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      if (!px.requires_grad) return;
      detail::ensure_grad(px);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
          px.grad[static_cast<std::size_t>(i) * c + j] +=
              self.grad[static_cast<std::size_t>(j) * n + i];
        }
      }
    };
  }
  return Tensor(out);
}

// y[i, j] = u[i, 0] + v[j, 0] for column vectors u (n x 1) and v (m x 1).
inline Tensor pairwise_sum(const Tensor& u, const Tensor& v) {
  detail::require_defined(u, "pairwise_sum");
  detail::require_defined(v, "pairwise_sum");
  if (u.cols() != 1 || v.cols() != 1) detail::shape_fail("pairwise_sum", u, v);
  const int n = u.rows(), m = v.rows();
  auto out = detail::make_result(n, m, "pairwise_sum", {u, v});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      out->value[static_cast<std::size_t>(i) * m + j] = u.values()[static_cast<std::size_t>(i)] +
                                                        v.values()[static_cast<std::size_t>(j)];
    }
  }
  if (out->requires_grad) {
    out->backprop = [n, m](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& pu = *self.parents[0];
      TensorNode& pv = *self.parents[1];
      if (pu.requires_grad) detail::ensure_grad(pu);
      if (pv.requires_grad) detail::ensure_grad(pv);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
          const double g = self.grad[static_cast<std::size_t>(i) * m + j];
          if (pu.requires_grad) pu.grad[static_cast<std::size_t>(i)] += g;
          if (pv.requires_grad) pv.grad[static_cast<std::size_t>(j)] += g;
        }
      }
    };
  }
  return Tensor(out);
}

// Per-row group normalization over column groups: each row's channels split
// into `groups` contiguous blocks, normalized to zero mean and unit variance
// (biased, epsilon-stabilized), then scaled by gain and shifted by bias.
inline Tensor group_norm(const Tensor& x, int groups, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  detail::require_defined(x, "group_norm");
  detail::require_defined(gain, "group_norm");
  detail::require_defined(bias, "group_norm");
  const int n = x.rows(), c = x.cols();
  if (groups < 1 || c % groups != 0) {
    throw AutodiffError(AutodiffErrorKind::invalid_argument,
                        strfmt("group_norm: %d groups do not divide %d channels", groups, c));
  }
  if (gain.rows() != 1 || gain.cols() != c) detail::shape_fail("group_norm", x, gain);
  if (bias.rows() != 1 || bias.cols() != c) detail::shape_fail("group_norm", x, bias);
  const int gs = c / groups;
  auto out = detail::make_result(n, c, "group_norm", {x, gain, bias});
  std::vector<double> inv_std(static_cast<std::size_t>(n) * groups);
  std::vector<double> mu(static_cast<std::size_t>(n) * groups);
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < groups; ++g) {
      const double* xr = x.values().data() + static_cast<std::size_t>(i) * c + g * gs;
      double m = 0;
      for (int j = 0; j < gs; ++j) m += xr[j];
      m /= gs;
      double var = 0;
      for (int j = 0; j < gs; ++j) var += (xr[j] - m) * (xr[j] - m);
      var /= gs;
      const double is = 1.0 / std::sqrt(var + eps);
      mu[static_cast<std::size_t>(i) * groups + g] = m;
      inv_std[static_cast<std::size_t>(i) * groups + g] = is;
      double* yr = out->value.data() + static_cast<std::size_t>(i) * c + g * gs;
      for (int j = 0; j < gs; ++j) {
        const int ch = g * gs + j;
        yr[j] = (xr[j] - m) * is * gain.values()[static_cast<std::size_t>(ch)] +
                bias.values()[static_cast<std::size_t>(ch)];
      }
    }
  }
  if (out->requires_grad) {
    out->backprop = [n, c, groups, gs, mu = std::move(mu),
                     inv_std = std::move(inv_std)](TensorNode& self) {
      if (self.grad.empty()) return;
      TensorNode& px = *self.parents[0];
      TensorNode& pg = *self.parents[1];
      TensorNode& pb = *self.parents[2];
      if (px.requires_grad) detail::ensure_grad(px);
      if (pg.requires_grad) detail::ensure_grad(pg);
      if (pb.requires_grad) detail::ensure_grad(pb);
      for (int i = 0; i < n; ++i) {
        for (int g = 0; g < groups; ++g) {
          const double m = mu[static_cast<std::size_t>(i) * groups + g];
          const double is = inv_std[static_cast<std::size_t>(i) * groups + g];
          const double* xr = px.value.data() + static_cast<std::size_t>(i) * c + g * gs;
          const double* gy = self.grad.data() + static_cast<std::size_t>(i) * c + g * gs;
          double s1 = 0, s2 = 0;
          for (int j = 0; j < gs; ++j) {
            const int ch = g * gs + j;
            const double xhat = (xr[j] - m) * is;
            const double dxhat = gy[j] * pg.value[static_cast<std::size_t>(ch)];
            s1 += dxhat;
            s2 += dxhat * xhat;
            if (pg.requires_grad) pg.grad[static_cast<std::size_t>(ch)] += gy[j] * xhat;
            if (pb.requires_grad) pb.grad[static_cast<std::size_t>(ch)] += gy[j];
          }
          if (px.requires_grad) {
            double* gx = px.grad.data() + static_cast<std::size_t>(i) * c + g * gs;
            for (int j = 0; j < gs; ++j) {
              const int ch = g * gs + j;
              const double xhat = (xr[j] - m) * is;
              const double dxhat = gy[j] * pg.value[static_cast<std::size_t>(ch)];
              gx[j] += is * (dxhat - s1 / gs - xhat * s2 / gs);
            }
          }
        }
      }
    };
  }
  return Tensor(out);
}

// Copies the value into a fresh constant leaf, cutting the graph.
inline Tensor detach(const Tensor& x) {
  detail::require_defined(x, "detach");
  return Tensor::constant(x.rows(), x.cols(), x.values());
}

// Accumulates d(loss)/d(ancestor) into every reachable requires_grad leaf.
// Non-leaf gradients are zeroed per call, so repeated backward calls on the
// same graph add up exactly in the leaves. A constant loss is a no-op.
inline void backward(const Tensor& loss) {
  detail::require_defined(loss, "backward");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw AutodiffError(AutodiffErrorKind::invalid_argument,
                        strfmt("backward: loss must be 1x1, got %dx%d", loss.rows(), loss.cols()));
  }
  if (!loss.node()->requires_grad) return;
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack = {loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const TensorNode* a, const TensorNode* b) { return a->seq > b->seq; });
  for (TensorNode* n : order) {
    if (n->backprop) n->grad.assign(n->value.size(), 0.0);
  }
  detail::ensure_grad(*loss.node());
  loss.node()->grad[0] += 1.0;
  for (TensorNode* n : order) {
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace dcgnet

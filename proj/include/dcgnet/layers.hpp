#pragma once

// Neural building blocks over mesh graphs: fixed and adaptive-adjacency graph
// convolutions, the normalization+activation+convolution unit, single-head
// graph attention, and the residual non-local block.
//
// Both convolution variants multiply through one dense kernel. The fixed
// layer densifies its adjacency up front; the adaptive layer adds a learnable
// dense residual (initialized to the identity) onto the densified base, so at
// initialization the two produce bit-identical outputs given equal weights.

#include <cmath>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "dcgnet/autodiff.hpp"
#include "dcgnet/mesh.hpp"
#include "dcgnet/rng.hpp"
#include "dcgnet/util.hpp"

namespace dcgnet {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

inline void append_param(std::vector<NamedParam>* out, const std::string& name, Tensor t) {
  out->push_back({name, std::move(t)});
}

// Glorot-uniform draw in +-sqrt(6 / (fan_in + fan_out)), row-major fill.
inline Tensor glorot_uniform(int fan_in, int fan_out, Rng& rng) {
  if (fan_in < 1 || fan_out < 1) {
    throw AutodiffError(AutodiffErrorKind::invalid_argument,
                        strfmt("glorot_uniform: invalid fan %dx%d", fan_in, fan_out));
  }
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> data(static_cast<std::size_t>(fan_in) * fan_out);
  for (double& v : data) v = rng.uniform(-limit, limit);
  return Tensor::parameter(fan_in, fan_out, std::move(data));
}

inline Tensor zeros_param(int rows, int cols) {
  return Tensor::parameter(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0));
}

inline Tensor ones_param(int rows, int cols) {
  return Tensor::parameter(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 1.0));
}

inline Tensor identity_param(int n) {
  std::vector<double> data(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) data[static_cast<std::size_t>(i) * n + i] = 1.0;
  return Tensor::parameter(n, n, std::move(data));
}

// Densifies a sparse adjacency into a constant tensor (duplicate-free input).
inline Tensor dense_adjacency(const NormalizedAdjacency& adj) {
  std::vector<double> data(static_cast<std::size_t>(adj.matrix.rows) * adj.matrix.cols, 0.0);
  for (const SparseTriplet& t : adj.matrix.entries) {
    data[static_cast<std::size_t>(t.row) * adj.matrix.cols + t.col] = t.value;
  }
  return Tensor::constant(adj.matrix.rows, adj.matrix.cols, std::move(data));
}

enum class Activation { relu, none };

inline Tensor apply_activation(const Tensor& x, Activation act) {
  return act == Activation::relu ? relu(x) : x;
}

class FullyConnected {
 public:
  FullyConnected(int in_features, int out_features, Rng& rng, bool use_bias = true)
      : weight_(glorot_uniform(in_features, out_features, rng)),
        bias_(use_bias ? zeros_param(1, out_features) : Tensor()),
        use_bias_(use_bias) {}

  Tensor forward(const Tensor& x) const {
    Tensor y = matmul(x, weight_);
    if (use_bias_) y = add_row_bias(y, bias_);
    return y;
  }

  int in_features() const { return weight_.rows(); }
  int out_features() const { return weight_.cols(); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

  void collect_parameters(const std::string& prefix, std::vector<NamedParam>* out) const {
    append_param(out, prefix + ".weight", weight_);
    if (use_bias_) append_param(out, prefix + ".bias", bias_);
  }

 private:
  Tensor weight_;
  Tensor bias_;
  bool use_bias_;
};

// The learnable relation matrix: frozen densified base adjacency plus an
// unconstrained dense residual initialized to the identity. Entries of the
// residual may turn negative or connect non-adjacent vertices; shared by every
// layer operating at its hierarchy level.
class AdaptiveAdjacency {
 public:
  explicit AdaptiveAdjacency(const NormalizedAdjacency& base)
      : base_(dense_adjacency(base)), learned_(identity_param(base.matrix.rows)) {
    if (base.matrix.rows != base.matrix.cols) {
      throw AutodiffError(AutodiffErrorKind::invalid_argument,
                          strfmt("AdaptiveAdjacency: base must be square, got %dx%d",
                                 base.matrix.rows, base.matrix.cols));
    }
  }

  int size() const { return base_.rows(); }
  Tensor effective() const { return add(base_, learned_); }
  Tensor& learned() { return learned_; }
  const Tensor& learned() const { return learned_; }

  void collect_parameters(const std::string& prefix, std::vector<NamedParam>* out) const {
    append_param(out, prefix + ".learned", learned_);
  }

 private:
  Tensor base_;
  Tensor learned_;
};

// y = act(A x W [+ bias]) with a frozen adjacency.
class GraphConvLayer {
 public:
  GraphConvLayer(const NormalizedAdjacency& adjacency, int in_features, int out_features, Rng& rng,
                 Activation act = Activation::relu, bool use_bias = false)
      : adjacency_(dense_adjacency(adjacency)),
        weight_(glorot_uniform(in_features, out_features, rng)),
        bias_(use_bias ? zeros_param(1, out_features) : Tensor()),
        act_(act),
        use_bias_(use_bias) {}

  Tensor forward(const Tensor& x) const {
    if (x.rows() != adjacency_.rows()) {
      throw AutodiffError(AutodiffErrorKind::shape_mismatch,
                          strfmt("graph_conv: input %dx%d does not match %d graph nodes", x.rows(),
                                 x.cols(), adjacency_.rows()));
    }
    Tensor y = matmul(adjacency_, matmul(x, weight_));
    if (use_bias_) y = add_row_bias(y, bias_);
    return apply_activation(y, act_);
  }

  int in_features() const { return weight_.rows(); }
  int out_features() const { return weight_.cols(); }
  Tensor& weight() { return weight_; }

  void collect_parameters(const std::string& prefix, std::vector<NamedParam>* out) const {
    append_param(out, prefix + ".weight", weight_);
    if (use_bias_) append_param(out, prefix + ".bias", bias_);
  }

 private:
  Tensor adjacency_;
  Tensor weight_;
  Tensor bias_;
  Activation act_;
  bool use_bias_;
};

// y = act((A_base + learned) x W [+ bias]). The adjacency residual is shared,
// so its parameter is collected by the owner of the AdaptiveAdjacency, not
// here.
class AdaptiveGraphConvLayer {
 public:
  AdaptiveGraphConvLayer(std::shared_ptr<AdaptiveAdjacency> adjacency, int in_features,
                         int out_features, Rng& rng, Activation act = Activation::relu,
                         bool use_bias = false)
      : adjacency_(std::move(adjacency)),
        weight_(glorot_uniform(in_features, out_features, rng)),
        bias_(use_bias ? zeros_param(1, out_features) : Tensor()),
        act_(act),
        use_bias_(use_bias) {
    if (!adjacency_) {
      throw AutodiffError(AutodiffErrorKind::invalid_argument,
                          "AdaptiveGraphConvLayer: null adjacency");
    }
  }

  Tensor forward(const Tensor& x) const {
    if (x.rows() != adjacency_->size()) {
      throw AutodiffError(AutodiffErrorKind::shape_mismatch,
                          strfmt("adaptive_graph_conv: input %dx%d does not match %d graph nodes",
                                 x.rows(), x.cols(), adjacency_->size()));
    }
    Tensor y = matmul(adjacency_->effective(), matmul(x, weight_));
    if (use_bias_) y = add_row_bias(y, bias_);
    return apply_activation(y, act_);
  }

  int in_features() const { return weight_.rows(); }
  int out_features() const { return weight_.cols(); }
  Tensor& weight() { return weight_; }
  const std::shared_ptr<AdaptiveAdjacency>& adjacency() const { return adjacency_; }

  void collect_parameters(const std::string& prefix, std::vector<NamedParam>* out) const {
    append_param(out, prefix + ".weight", weight_);
    if (use_bias_) append_param(out, prefix + ".bias", bias_);
  }

 private:
  std::shared_ptr<AdaptiveAdjacency> adjacency_;
  Tensor weight_;
  Tensor bias_;
  Activation act_;
  bool use_bias_;
};

// Largest divisor of `channels` not exceeding min(8, channels); the group
// count must divide the channel count, so the plain min(8, C) default is
// adjusted downward to the nearest divisor.
inline int default_group_count(int channels) {
  if (channels < 1) {
    throw AutodiffError(AutodiffErrorKind::invalid_argument,
                        strfmt("default_group_count: %d channels", channels));
  }
  for (int g = std::min(8, channels); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

// GroupNorm -> ReLU -> graph convolution, the per-level workhorse.
class GCNUnit {
 public:
  GCNUnit(const NormalizedAdjacency& adjacency, int in_features, int out_features, Rng& rng,
          int groups = 0, Activation act = Activation::relu)
      : GCNUnit(in_features, groups,
                Conv(GraphConvLayer(adjacency, in_features, out_features, rng, act, false))) {}

  GCNUnit(std::shared_ptr<AdaptiveAdjacency> adjacency, int in_features, int out_features,
          Rng& rng, int groups = 0, Activation act = Activation::relu)
      : GCNUnit(in_features, groups,
                Conv(AdaptiveGraphConvLayer(std::move(adjacency), in_features, out_features, rng,
                                            act, false))) {}

  Tensor forward(const Tensor& x) const {
    const Tensor normed = group_norm(x, groups_, gn_gain_, gn_bias_);
    const Tensor activated = relu(normed);
    if (const GraphConvLayer* fixed = std::get_if<GraphConvLayer>(&conv_)) {
      return fixed->forward(activated);
    }
    return std::get<AdaptiveGraphConvLayer>(conv_).forward(activated);
  }

  int groups() const { return groups_; }
  Tensor& gain() { return gn_gain_; }
  Tensor& bias() { return gn_bias_; }

  void collect_parameters(const std::string& prefix, std::vector<NamedParam>* out) const {
    append_param(out, prefix + ".norm.gain", gn_gain_);
    append_param(out, prefix + ".norm.bias", gn_bias_);
    if (const GraphConvLayer* fixed = std::get_if<GraphConvLayer>(&conv_)) {
      fixed->collect_parameters(prefix + ".conv", out);
    } else {
      std::get<AdaptiveGraphConvLayer>(conv_).collect_parameters(prefix + ".conv", out);
    }
  }

 private:
  using Conv = std::variant<GraphConvLayer, AdaptiveGraphConvLayer>;

  GCNUnit(int in_features, int groups, Conv conv)
      : groups_(groups > 0 ? groups : default_group_count(in_features)),
        gn_gain_(ones_param(1, in_features)),
        gn_bias_(zeros_param(1, in_features)),
        conv_(std::move(conv)) {
    if (in_features % groups_ != 0) {
      throw AutodiffError(AutodiffErrorKind::invalid_argument,
                          strfmt("GCNUnit: %d groups do not divide %d channels", groups_,
                                 in_features));
    }
  }

  int groups_;
  Tensor gn_gain_;
  Tensor gn_bias_;
  Conv conv_;
};

// Single-head graph attention: scores LeakyReLU(0.2) of a split additive
// form, softmax-normalized over each vertex's neighborhood (self included),
// then E (x W). The neighborhood mask is additive with a very large negative
// constant, so excluded pairs get exactly zero attention.
class GraphAttention {
 public:
  GraphAttention(const NormalizedAdjacency& adjacency, int in_features, int out_features, Rng& rng)
      : weight_(glorot_uniform(in_features, out_features, rng)),
        attn_(glorot_uniform(2 * out_features, 1, rng)),
        mask_(build_mask(adjacency)) {}

  Tensor forward(const Tensor& x) const {
    if (x.rows() != mask_.rows()) {
      throw AutodiffError(AutodiffErrorKind::shape_mismatch,
                          strfmt("graph_attention: input %dx%d does not match %d graph nodes",
                                 x.rows(), x.cols(), mask_.rows()));
    }
    const int p = weight_.cols();
    const Tensor h = matmul(x, weight_);
    const Tensor src_score = matmul(h, slice_rows(attn_, 0, p));
    const Tensor dst_score = matmul(h, slice_rows(attn_, p, 2 * p));
    const Tensor logits = leaky_relu(pairwise_sum(src_score, dst_score), 0.2);
    const Tensor coefficients = softmax_rows(add(logits, mask_));
    return matmul(coefficients, h);
  }

  // The row-normalized attention coefficient matrix for inspection/tests.
  Tensor coefficients(const Tensor& x) const {
    const int p = weight_.cols();
    const Tensor h = matmul(x, weight_);
    const Tensor src_score = matmul(h, slice_rows(attn_, 0, p));
    const Tensor dst_score = matmul(h, slice_rows(attn_, p, 2 * p));
    return softmax_rows(add(leaky_relu(pairwise_sum(src_score, dst_score), 0.2), mask_));
  }

  int out_features() const { return weight_.cols(); }
  Tensor& weight() { return weight_; }
  Tensor& attention() { return attn_; }

  void collect_parameters(const std::string& prefix, std::vector<NamedParam>* out) const {
    append_param(out, prefix + ".weight", weight_);
    append_param(out, prefix + ".attention", attn_);
  }

 private:
  static Tensor build_mask(const NormalizedAdjacency& adjacency) {
    const int n = adjacency.matrix.rows;
    std::vector<double> m(static_cast<std::size_t>(n) * n, -1e30);
    for (int i = 0; i < n; ++i) m[static_cast<std::size_t>(i) * n + i] = 0.0;
    for (const SparseTriplet& t : adjacency.matrix.entries) {
      m[static_cast<std::size_t>(t.row) * n + t.col] = 0.0;
    }
    return Tensor::constant(n, n, std::move(m));
  }

  Tensor weight_;
  Tensor attn_;
  Tensor mask_;
};

// Embedded-Gaussian non-local block in residual form:
//   y = x + (softmax_rows(theta(x) phi(x)^T) g(x)) W_out
// W_out starts at zero, so a freshly constructed block is the identity map.
class NonLocalBlock {
 public:
  NonLocalBlock(int features, int bottleneck, Rng& rng)
      : theta_(glorot_uniform(features, bottleneck, rng)),
        phi_(glorot_uniform(features, bottleneck, rng)),
        g_(glorot_uniform(features, bottleneck, rng)),
        out_(zeros_param(bottleneck, features)) {}

  Tensor forward(const Tensor& x) const {
    if (x.cols() != theta_.rows()) {
      throw AutodiffError(AutodiffErrorKind::shape_mismatch,
                          strfmt("non_local: input %dx%d does not have %d features", x.rows(),
                                 x.cols(), theta_.rows()));
    }
    const Tensor attention = softmax_rows(matmul(matmul(x, theta_), transpose(matmul(x, phi_))));
    return add(x, matmul(matmul(attention, matmul(x, g_)), out_));
  }

  Tensor& theta() { return theta_; }
  Tensor& phi() { return phi_; }
  Tensor& g() { return g_; }
  Tensor& out() { return out_; }

  void collect_parameters(const std::string& prefix, std::vector<NamedParam>* out) const {
    append_param(out, prefix + ".theta", theta_);
    append_param(out, prefix + ".phi", phi_);
    append_param(out, prefix + ".g", g_);
    append_param(out, prefix + ".out", out_);
  }

 private:
  Tensor theta_;
  Tensor phi_;
  Tensor g_;
  Tensor out_;
};

}  // namespace dcgnet

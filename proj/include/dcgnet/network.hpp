#pragma once

// The full mesh-regression network: a U-shaped encoder/decoder over a mesh
// hierarchy. Encoder levels run GCN units, a fully-connected layer, and a
// downsample; the coarsest feature passes through a non-local block; decoder
// levels combine three branches (a projection of the decoder state, fused
// multi-level attention features, and the encoder feature at the same node
// count), then upsample and run GCN units. The terminal stage concatenates
// the raw (scaled) input so the head sees the unprocessed initial mesh, and
// the head adds a per-vertex bias so a zero-weight network can still pass an
// anchor mesh through.
//
// Level mapping: hierarchy level 0 is the finest. Encoder features Y_l live
// at level l for l = 1..L. The decoder combination at state level k fuses
// attention branches from level k and every coarser level, resampled to k by
// composed upsampling operators; at k = L that is a single branch.
//
// Coordinates are scaled by coord_scale on the way in and unscaled on the way
// out, so activations stay O(1) while callers work in model millimeters.
// coord_scale is a power of two, making the round trip exact.

#include <cassert>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcgnet/autodiff.hpp"
#include "dcgnet/coarsen.hpp"
#include "dcgnet/layers.hpp"
#include "dcgnet/mesh.hpp"
#include "dcgnet/rng.hpp"
#include "dcgnet/util.hpp"

namespace dcgnet {

enum class NetworkErrorKind {
  invalid_argument,
  shape_mismatch,
};

class NetworkError : public std::runtime_error {
 public:
  NetworkError(NetworkErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  NetworkErrorKind kind() const { return kind_; }

 private:
  NetworkErrorKind kind_;
};

struct DCGNetConfig {
  int k_in = 19;                  // input feature width (3 coordinates + extras)
  std::vector<int> level_widths;  // hidden width per hierarchy level; empty -> 32 everywhere
  int units_per_level = 2;        // GCN units per encoder level and per decoder level
  int fusion_width = 16;          // graph-attention output width in the fusion module
  int nonlocal_bottleneck = 16;
  bool adaptive = true;           // learnable adjacency residual on every graph conv
  bool share_adaptive = false;    // one residual per level instead of one per conv
  bool use_nonlocal = true;
  double coord_scale = 1.0 / 1024.0;
  std::uint64_t seed = 1;
};

namespace detail {

// COO product a * b with deterministic (row, col) accumulation order.
inline SparseMatrix sparse_product(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.cols != b.rows) {
    throw NetworkError(NetworkErrorKind::shape_mismatch,
                       strfmt("sparse_product: %dx%d times %dx%d", a.rows, a.cols, b.rows,
                              b.cols));
  }
  std::vector<std::vector<std::pair<int, double>>> b_rows(static_cast<std::size_t>(b.rows));
  for (const SparseTriplet& t : b.entries) {
    b_rows[static_cast<std::size_t>(t.row)].push_back({t.col, t.value});
  }
  std::map<std::pair<int, int>, double> acc;
  for (const SparseTriplet& t : a.entries) {
    for (const auto& [col, value] : b_rows[static_cast<std::size_t>(t.col)]) {
      acc[{t.row, col}] += t.value * value;
    }
  }
  std::vector<SparseTriplet> triplets;
  triplets.reserve(acc.size());
  for (const auto& [coord, value] : acc) {
    triplets.push_back({coord.first, coord.second, value});
  }
  return SparseMatrix::from_triplets(a.rows, b.cols, std::move(triplets));
}

}  // namespace detail

class DCGNet {
 public:
  DCGNet(MeshHierarchy hierarchy, DCGNetConfig config)
      : hierarchy_(std::move(hierarchy)), config_(std::move(config)) {
    const int steps = hierarchy_.levels();
    if (steps < 1) {
      throw NetworkError(NetworkErrorKind::invalid_argument,
                         "DCGNet: hierarchy needs at least one coarsening step");
    }
    if (config_.k_in < 1 || config_.units_per_level < 1 || config_.fusion_width < 1 ||
        config_.nonlocal_bottleneck < 1) {
      throw NetworkError(NetworkErrorKind::invalid_argument,
                         "DCGNet: k_in, units_per_level, fusion_width, and "
                         "nonlocal_bottleneck must be positive");
    }
    if (!(config_.coord_scale > 0.0)) {
      throw NetworkError(NetworkErrorKind::invalid_argument,
                         "DCGNet: coord_scale must be positive");
    }
    if (config_.level_widths.empty()) {
      config_.level_widths.assign(static_cast<std::size_t>(steps) + 1, 32);
    }
    if (static_cast<int>(config_.level_widths.size()) != steps + 1) {
      throw NetworkError(NetworkErrorKind::invalid_argument,
                         strfmt("DCGNet: need %d level widths, got %zu", steps + 1,
                                config_.level_widths.size()));
    }
    for (int w : config_.level_widths) {
      if (w < 1) {
        throw NetworkError(NetworkErrorKind::invalid_argument,
                           "DCGNet: level widths must be positive");
      }
    }

    // Per-level conv adjacency: normalized edge graph with the identity added
    // afterwards, so the adaptive residual (initialized to I) reproduces the
    // fixed matrix bit-for-bit at initialization.
    std::vector<NormalizedAdjacency> base(static_cast<std::size_t>(steps) + 1);
    fixed_adj_.resize(static_cast<std::size_t>(steps) + 1);
    for (int l = 0; l <= steps; ++l) {
      base[static_cast<std::size_t>(l)] =
          build_adjacency(hierarchy_.meshes[static_cast<std::size_t>(l)], false, true);
      fixed_adj_[static_cast<std::size_t>(l)] = add_identity(base[static_cast<std::size_t>(l)]);
    }
    if (config_.adaptive && config_.share_adaptive) {
      shared_adaptive_.resize(static_cast<std::size_t>(steps));
      for (int l = 0; l < steps; ++l) {
        shared_adaptive_[static_cast<std::size_t>(l)] =
            std::make_shared<AdaptiveAdjacency>(base[static_cast<std::size_t>(l)]);
        adaptive_sites_.push_back({strfmt("lvl%d.adj", l), shared_adaptive_[static_cast<std::size_t>(l)]});
      }
    }
    auto conv_unit = [&](int level, int in, int out, Rng& rng, const std::string& site,
                         Activation act = Activation::relu) {
      if (!config_.adaptive) {
        return GCNUnit(fixed_adj_[static_cast<std::size_t>(level)], in, out, rng, 0, act);
      }
      std::shared_ptr<AdaptiveAdjacency> adj;
      if (config_.share_adaptive) {
        adj = shared_adaptive_[static_cast<std::size_t>(level)];
      } else {
        adj = std::make_shared<AdaptiveAdjacency>(base[static_cast<std::size_t>(level)]);
        adaptive_sites_.push_back({site + ".adj", adj});
      }
      return GCNUnit(std::move(adj), in, out, rng, 0, act);
    };

    const std::vector<int>& w = config_.level_widths;
    {
      Rng rng(derive_seed(config_.seed, 1));
      input_fc_ = std::make_unique<FullyConnected>(config_.k_in, w[0], rng);
    }
    encoder_units_.resize(static_cast<std::size_t>(steps));
    encoder_fcs_.reserve(static_cast<std::size_t>(steps));
    for (int l = 0; l < steps; ++l) {
      Rng rng(derive_seed(config_.seed, 10, static_cast<std::uint64_t>(l)));
      for (int u = 0; u < config_.units_per_level; ++u) {
        encoder_units_[static_cast<std::size_t>(l)].push_back(conv_unit(
            l, w[static_cast<std::size_t>(l)], w[static_cast<std::size_t>(l)], rng,
            strfmt("enc%d.u%d", l, u)));
      }
      encoder_fcs_.emplace_back(w[static_cast<std::size_t>(l)],
                                w[static_cast<std::size_t>(l) + 1], rng);
    }
    if (config_.use_nonlocal) {
      Rng rng(derive_seed(config_.seed, 2));
      nonlocal_ = std::make_unique<NonLocalBlock>(w[static_cast<std::size_t>(steps)],
                                                  config_.nonlocal_bottleneck, rng);
    }
    for (int k = 1; k <= steps; ++k) {
      Rng rng(derive_seed(config_.seed, 40, static_cast<std::uint64_t>(k)));
      const int wk = w[static_cast<std::size_t>(k)];
      fusion_gats_.emplace_back(fixed_adj_[static_cast<std::size_t>(k)], wk,
                                config_.fusion_width, rng);
      const int branches = steps - k + 1;
      state_fcs_.emplace_back(wk, wk, rng);
      fuse_fcs_.emplace_back(branches * config_.fusion_width, wk, rng);
      combine_fcs_.emplace_back(3 * wk, wk, rng);
    }
    decoder_units_.resize(static_cast<std::size_t>(steps));
    for (int l = steps - 1; l >= 0; --l) {
      Rng rng(derive_seed(config_.seed, 70, static_cast<std::uint64_t>(l)));
      const int incoming = (l == 0) ? w[1] + config_.k_in : w[static_cast<std::size_t>(l) + 1];
      for (int u = 0; u < config_.units_per_level; ++u) {
        const int in = (u == 0) ? incoming : w[static_cast<std::size_t>(l)];
        decoder_units_[static_cast<std::size_t>(l)].push_back(
            conv_unit(l, in, w[static_cast<std::size_t>(l)], rng, strfmt("up%d.u%d", l, u)));
      }
    }
    {
      Rng rng(derive_seed(config_.seed, 3));
      head_ = std::make_unique<GCNUnit>(
          conv_unit(0, w[0], 3, rng, "head", Activation::none));
      head_bias_ = zeros_param(hierarchy_.nodes_at(0), 3);
    }

    for (int l = 0; l < steps; ++l) {
      up_ops_.push_back(std::make_shared<const SparseMatrix>(
          hierarchy_.samplers[static_cast<std::size_t>(l)].up));
      down_ops_.push_back(std::make_shared<const SparseMatrix>(
          hierarchy_.samplers[static_cast<std::size_t>(l)].down));
    }
    // resample_[k][j] carries level-j features to level k (j > k) by chaining
    // upsampling operators.
    resample_.resize(static_cast<std::size_t>(steps) + 1);
    for (int k = 1; k <= steps; ++k) {
      auto& row = resample_[static_cast<std::size_t>(k)];
      row.resize(static_cast<std::size_t>(steps) + 1);
      SparseMatrix chain;
      for (int j = k + 1; j <= steps; ++j) {
        chain = (j == k + 1) ? hierarchy_.samplers[static_cast<std::size_t>(k)].up
                             : detail::sparse_product(
                                   chain, hierarchy_.samplers[static_cast<std::size_t>(j) - 1].up);
        row[static_cast<std::size_t>(j)] = std::make_shared<const SparseMatrix>(chain);
      }
    }
  }

  const MeshHierarchy& hierarchy() const { return hierarchy_; }
  const DCGNetConfig& config() const { return config_; }
  int input_width() const { return config_.k_in; }
  int node_count() const { return hierarchy_.nodes_at(0); }
  int levels() const { return hierarchy_.levels(); }

  // Writes coordinates (model units) into the head's per-vertex bias, so the
  // zero-weight network outputs exactly this mesh.
  void anchor_output(const std::vector<double>& coords) {
    const std::size_t expect = static_cast<std::size_t>(node_count()) * 3;
    if (coords.size() != expect) {
      throw NetworkError(NetworkErrorKind::shape_mismatch,
                         strfmt("anchor_output: expected %zu values, got %zu", expect,
                                coords.size()));
    }
    std::vector<double>& bias = head_bias_.mutable_values();
    for (std::size_t i = 0; i < expect; ++i) bias[i] = coords[i] * config_.coord_scale;
  }

  // Returns the per-level features: [0] is the scaled input, [l] for l >= 1
  // is the encoder output at hierarchy level l.
  std::vector<Tensor> encode(const Tensor& x) const {
    if (x.rows() != node_count() || x.cols() != config_.k_in) {
      throw NetworkError(NetworkErrorKind::shape_mismatch,
                         strfmt("encode: expected %dx%d input, got %dx%d", node_count(),
                                config_.k_in, x.rows(), x.cols()));
    }
    const int steps = levels();
    std::vector<Tensor> ys(static_cast<std::size_t>(steps) + 1);
    ys[0] = scale(x, config_.coord_scale);
    Tensor state = input_fc_->forward(ys[0]);
    for (int l = 0; l < steps; ++l) {
      for (const GCNUnit& unit : encoder_units_[static_cast<std::size_t>(l)]) {
        state = unit.forward(state);
      }
      state = encoder_fcs_[static_cast<std::size_t>(l)].forward(state);
      state = sparse_matmul(down_ops_[static_cast<std::size_t>(l)], state);
      assert(state.rows() == hierarchy_.nodes_at(l + 1));
      ys[static_cast<std::size_t>(l) + 1] = state;
    }
    return ys;
  }

  // Fused multi-level attention feature at hierarchy level `level`: attention
  // branches at `level` and every coarser level, resampled to `level`,
  // concatenated, and projected to the level's width.
  Tensor fuse(const std::vector<Tensor>& ys, int level) const {
    check_levels(ys, "fuse");
    if (level < 1 || level > levels()) {
      throw NetworkError(NetworkErrorKind::invalid_argument,
                         strfmt("fuse: level %d outside 1..%d", level, levels()));
    }
    std::vector<Tensor> gats(static_cast<std::size_t>(levels()) + 1);
    for (int j = level; j <= levels(); ++j) {
      gats[static_cast<std::size_t>(j)] =
          fusion_gats_[static_cast<std::size_t>(j) - 1].forward(ys[static_cast<std::size_t>(j)]);
    }
    return fuse_cached(gats, level);
  }

  Tensor decode(const std::vector<Tensor>& ys) const {
    check_levels(ys, "decode");
    const int steps = levels();
    // Attention branches are shared by every decoder level; compute each once.
    std::vector<Tensor> gats(static_cast<std::size_t>(steps) + 1);
    for (int j = 1; j <= steps; ++j) {
      gats[static_cast<std::size_t>(j)] =
          fusion_gats_[static_cast<std::size_t>(j) - 1].forward(ys[static_cast<std::size_t>(j)]);
    }

    Tensor state = ys[static_cast<std::size_t>(steps)];
    if (nonlocal_) state = nonlocal_->forward(state);
    for (int k = steps; k >= 1; --k) {
      const std::size_t i = static_cast<std::size_t>(k) - 1;
      Tensor branch_state = state_fcs_[i].forward(state);
      Tensor branch_fused = fuse_cached(gats, k);
      Tensor combined = combine_fcs_[i].forward(
          concat_cols({branch_state, branch_fused, ys[static_cast<std::size_t>(k)]}));
      state = sparse_matmul(up_ops_[static_cast<std::size_t>(k) - 1], combined);
      assert(state.rows() == hierarchy_.nodes_at(k - 1));
      if (k - 1 == 0) state = concat_cols({state, ys[0]});
      for (const GCNUnit& unit : decoder_units_[static_cast<std::size_t>(k) - 1]) {
        state = unit.forward(state);
      }
    }
    Tensor out = add(head_->forward(state), head_bias_);
    assert(out.rows() == node_count() && out.cols() == 3);
    return scale(out, 1.0 / config_.coord_scale);
  }

  Tensor forward(const Tensor& x) const { return decode(encode(x)); }

  std::vector<NamedParam> parameters() const {
    std::vector<NamedParam> out;
    input_fc_->collect_parameters("input_fc", &out);
    for (int l = 0; l < levels(); ++l) {
      for (int u = 0; u < config_.units_per_level; ++u) {
        encoder_units_[static_cast<std::size_t>(l)][static_cast<std::size_t>(u)]
            .collect_parameters(strfmt("enc%d.u%d", l, u), &out);
      }
      encoder_fcs_[static_cast<std::size_t>(l)].collect_parameters(strfmt("enc%d.fc", l), &out);
    }
    if (nonlocal_) nonlocal_->collect_parameters("nonlocal", &out);
    for (int k = 1; k <= levels(); ++k) {
      const std::size_t i = static_cast<std::size_t>(k) - 1;
      fusion_gats_[i].collect_parameters(strfmt("fuse%d.gat", k), &out);
      state_fcs_[i].collect_parameters(strfmt("dec%d.state_fc", k), &out);
      fuse_fcs_[i].collect_parameters(strfmt("dec%d.fuse_fc", k), &out);
      combine_fcs_[i].collect_parameters(strfmt("dec%d.combine_fc", k), &out);
    }
    for (int l = 0; l < levels(); ++l) {
      for (int u = 0; u < config_.units_per_level; ++u) {
        decoder_units_[static_cast<std::size_t>(l)][static_cast<std::size_t>(u)]
            .collect_parameters(strfmt("up%d.u%d", l, u), &out);
      }
    }
    head_->collect_parameters("head", &out);
    out.push_back({"head.vertex_bias", head_bias_});
    for (const auto& [name, adj] : adaptive_sites_) {
      adj->collect_parameters(name, &out);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const NamedParam& p : parameters()) {
      n += p.tensor.values().size();
    }
    return n;
  }

 private:
  void check_levels(const std::vector<Tensor>& ys, const char* op) const {
    if (static_cast<int>(ys.size()) != levels() + 1) {
      throw NetworkError(NetworkErrorKind::shape_mismatch,
                         strfmt("%s: expected %d level features, got %zu", op, levels() + 1,
                                ys.size()));
    }
    for (int l = 0; l <= levels(); ++l) {
      if (!ys[static_cast<std::size_t>(l)].defined() ||
          ys[static_cast<std::size_t>(l)].rows() != hierarchy_.nodes_at(l)) {
        throw NetworkError(NetworkErrorKind::shape_mismatch,
                           strfmt("%s: level %d feature must have %d rows", op, l,
                                  hierarchy_.nodes_at(l)));
      }
    }
  }

  Tensor fuse_cached(const std::vector<Tensor>& gats, int level) const {
    std::vector<Tensor> branches;
    for (int j = level; j <= levels(); ++j) {
      const Tensor& g = gats[static_cast<std::size_t>(j)];
      branches.push_back(j == level
                             ? g
                             : sparse_matmul(
                                   resample_[static_cast<std::size_t>(level)][static_cast<std::size_t>(j)],
                                   g));
    }
    return fuse_fcs_[static_cast<std::size_t>(level) - 1].forward(concat_cols(branches));
  }

  MeshHierarchy hierarchy_;
  DCGNetConfig config_;
  std::vector<NormalizedAdjacency> fixed_adj_;
  std::vector<std::shared_ptr<AdaptiveAdjacency>> shared_adaptive_;
  std::vector<std::pair<std::string, std::shared_ptr<AdaptiveAdjacency>>> adaptive_sites_;
  std::unique_ptr<FullyConnected> input_fc_;
  std::vector<std::vector<GCNUnit>> encoder_units_;
  std::vector<FullyConnected> encoder_fcs_;
  std::unique_ptr<NonLocalBlock> nonlocal_;
  std::vector<GraphAttention> fusion_gats_;
  std::vector<FullyConnected> state_fcs_;
  std::vector<FullyConnected> fuse_fcs_;
  std::vector<FullyConnected> combine_fcs_;
  std::vector<std::vector<GCNUnit>> decoder_units_;
  std::unique_ptr<GCNUnit> head_;
  Tensor head_bias_;
  std::vector<std::shared_ptr<const SparseMatrix>> up_ops_;
  std::vector<std::shared_ptr<const SparseMatrix>> down_ops_;
  std::vector<std::vector<std::shared_ptr<const SparseMatrix>>> resample_;
};

}  // namespace dcgnet

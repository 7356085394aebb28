#pragma once

// Shape-completion pretraining: artificial holes are punched into the input
// by zeroing whole feature rows, and the network is trained to reproduce the
// full mesh from the masked remainder. The mask is a binary N x k matrix of
// ones with exactly c all-zero rows; masking is an elementwise product, so
// surviving rows pass through bit-exactly.

#include <algorithm>
#include <cstdint>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcgnet/autodiff.hpp"
#include "dcgnet/losses.hpp"
#include "dcgnet/mesh.hpp"
#include "dcgnet/network.hpp"
#include "dcgnet/rng.hpp"
#include "dcgnet/util.hpp"

namespace dcgnet {

enum class CompletionErrorKind {
  invalid_argument,
  shape_mismatch,
};

class CompletionError : public std::runtime_error {
 public:
  CompletionError(CompletionErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  CompletionErrorKind kind() const { return kind_; }

 private:
  CompletionErrorKind kind_;
};

enum class MaskMode {
  // Masked rows are a seeded shuffle's first c picks.
  uniform_random,
  // Masked rows are a random start node plus its c - 1 nearest graph
  // neighbors in BFS order, so the hole is one spatially coherent patch.
  contiguous_patch,
};

struct MaskSpec {
  int c = 0;
  std::uint64_t seed = 0;
  MaskMode mode = MaskMode::uniform_random;
};

// Mask count that keeps the reference ratio of masked to total nodes
// (200 of 1723, about 0.116) when the template is rescaled.
inline constexpr double kDefaultMaskRatio = 200.0 / 1723.0;

inline int default_mask_count(int n) {
  if (n < 0) {
    throw CompletionError(CompletionErrorKind::invalid_argument,
                          strfmt("default_mask_count: node count %d is negative", n));
  }
  return static_cast<int>(static_cast<double>(n) * kDefaultMaskRatio + 0.5);
}

namespace detail {

// Undirected neighbor lists from a (typically symmetric) sparse adjacency.
// Both entry directions are inserted and self-loops dropped, so a caller may
// pass a normalized, self-looped, or one-sided matrix and BFS sees the same
// edge graph.
inline std::vector<std::vector<int>> neighbor_lists(const SparseMatrix& adjacency) {
  std::vector<std::vector<int>> nbr(static_cast<std::size_t>(adjacency.rows));
  for (const SparseTriplet& t : adjacency.entries) {
    if (t.row == t.col || t.value == 0.0) continue;
    nbr[static_cast<std::size_t>(t.row)].push_back(t.col);
    nbr[static_cast<std::size_t>(t.col)].push_back(t.row);
  }
  for (std::vector<int>& list : nbr) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return nbr;
}

inline std::vector<int> masked_rows(const MaskSpec& spec, int n, const SparseMatrix* adjacency) {
  Rng rng(spec.seed);
  if (spec.mode == MaskMode::uniform_random) {
    std::vector<int> perm = rng.permutation(n);
    perm.resize(static_cast<std::size_t>(spec.c));
    return perm;
  }
  if (adjacency == nullptr) {
    throw CompletionError(CompletionErrorKind::invalid_argument,
                          "make_mask: contiguous_patch mode needs an adjacency");
  }
  if (adjacency->rows != n || adjacency->cols != n) {
    throw CompletionError(
        CompletionErrorKind::shape_mismatch,
        strfmt("make_mask: adjacency is %d x %d, expected %d x %d", adjacency->rows,
               adjacency->cols, n, n));
  }
  std::vector<int> picked;
  if (spec.c == 0) return picked;
  const std::vector<std::vector<int>> nbr = neighbor_lists(*adjacency);
  const int start = static_cast<int>(rng.uniform_int(n));
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::queue<int> q;
  q.push(start);
  seen[static_cast<std::size_t>(start)] = 1;
  while (!q.empty() && static_cast<int>(picked.size()) < spec.c) {
    const int u = q.front();
    q.pop();
    picked.push_back(u);
    for (int v : nbr[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        q.push(v);
      }
    }
  }
  if (static_cast<int>(picked.size()) < spec.c) {
    throw CompletionError(
        CompletionErrorKind::invalid_argument,
        strfmt("make_mask: patch start %d reaches only %d nodes, %d requested", start,
               static_cast<int>(picked.size()), spec.c));
  }
  return picked;
}

}  // namespace detail

// Binary n x k row mask: exactly spec.c all-zero rows, every other row all
// ones. The adjacency is consulted only in contiguous_patch mode.
inline SparseMatrix make_mask(const MaskSpec& spec, int n, int k,
                              const SparseMatrix* adjacency = nullptr) {
  if (n < 0 || k < 0) {
    throw CompletionError(CompletionErrorKind::invalid_argument,
                          strfmt("make_mask: mask shape %d x %d is invalid", n, k));
  }
  if (spec.c < 0 || spec.c > n) {
    throw CompletionError(
        CompletionErrorKind::invalid_argument,
        strfmt("make_mask: masked count %d outside [0, %d]", spec.c, n));
  }
  const std::vector<int> masked = detail::masked_rows(spec, n, adjacency);
  std::vector<char> keep(static_cast<std::size_t>(n), 1);
  for (int r : masked) keep[static_cast<std::size_t>(r)] = 0;
  std::vector<SparseTriplet> ones;
  ones.reserve(static_cast<std::size_t>(n - spec.c) * static_cast<std::size_t>(k));
  for (int r = 0; r < n; ++r) {
    if (!keep[static_cast<std::size_t>(r)]) continue;
    for (int j = 0; j < k; ++j) ones.push_back({r, j, 1.0});
  }
  return SparseMatrix::from_triplets(n, k, std::move(ones));
}

// Elementwise product with a binary mask. Masked rows come out exactly zero;
// kept rows multiply by 1.0, which is a bitwise identity.
inline Tensor apply_mask(const Tensor& x, const SparseMatrix& mask) {
  if (mask.rows != x.rows() || mask.cols != x.cols()) {
    throw CompletionError(CompletionErrorKind::shape_mismatch,
                          strfmt("apply_mask: mask is %d x %d, input is %d x %d", mask.rows,
                                 mask.cols, x.rows(), x.cols()));
  }
  return mul(x, Tensor::constant(mask.rows, mask.cols, mask.to_dense()));
}

// One pretraining objective evaluation: punch a fresh hole into x, run the
// network on the masked input, and score the prediction against the full
// (unmasked) coordinate columns of x with the per-vertex L1 loss. The target
// is cut out of x under a no-grad guard, so only the masked forward pass is
// differentiated.
inline Tensor completion_step(const DCGNet& net, const Tensor& x, const MaskSpec& spec,
                              const SparseMatrix* adjacency = nullptr,
                              LossReduction reduction = LossReduction::sum_vertices) {
  if (x.cols() < 3) {
    throw CompletionError(
        CompletionErrorKind::shape_mismatch,
        strfmt("completion_step: input has %d columns, needs at least the 3 coordinate columns",
               x.cols()));
  }
  const SparseMatrix mask = make_mask(spec, x.rows(), x.cols(), adjacency);
  Tensor target;
  {
    NoGradGuard guard;
    target = slice_cols(x, 0, 3);
  }
  return vertex_loss(net.forward(apply_mask(x, mask)), target, reduction);
}

}  // namespace dcgnet

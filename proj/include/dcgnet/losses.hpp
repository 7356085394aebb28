#pragma once

// Supervision terms for mesh regression: per-vertex L1, 3D keypoint L1 after
// regressing joints from the mesh, 2D keypoint L1 after a weak-perspective
// projection, and their weighted sum. All losses are differentiable Tensor
// expressions; the regressor and camera are data, not parameters.

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcgnet/autodiff.hpp"
#include "dcgnet/mesh.hpp"
#include "dcgnet/util.hpp"

namespace dcgnet {

enum class LossErrorKind {
  shape_mismatch,
  invalid_argument,
  regressor_malformed,
  io_failure,
};

class LossError : public std::runtime_error {
 public:
  LossError(LossErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  LossErrorKind kind() const { return kind_; }

 private:
  LossErrorKind kind_;
};

// Maps mesh vertices to D skeleton keypoints; each row is a convex
// combination of vertices (entries >= 0, row sum 1).
struct JointRegressor {
  SparseMatrix matrix;  // D x N
  std::vector<std::string> joint_names;

  int joint_count() const { return matrix.rows; }
  int vertex_count() const { return matrix.cols; }
};

inline void validate_regressor(const JointRegressor& reg) {
  if (reg.matrix.rows <= 0 || reg.matrix.cols <= 0) {
    throw LossError(LossErrorKind::regressor_malformed,
                    strfmt("regressor must be non-empty, got %d x %d", reg.matrix.rows,
                           reg.matrix.cols));
  }
  if (static_cast<int>(reg.joint_names.size()) != reg.matrix.rows) {
    throw LossError(LossErrorKind::regressor_malformed,
                    strfmt("regressor has %d rows but %zu joint names", reg.matrix.rows,
                           reg.joint_names.size()));
  }
  std::vector<double> row_sum(static_cast<std::size_t>(reg.matrix.rows), 0.0);
  for (const SparseTriplet& t : reg.matrix.entries) {
    if (t.value < 0.0 || !std::isfinite(t.value)) {
      throw LossError(LossErrorKind::regressor_malformed,
                      strfmt("regressor entry (%d, %d) = %g is not a convex weight", t.row,
                             t.col, t.value));
    }
    row_sum[static_cast<std::size_t>(t.row)] += t.value;
  }
  for (int r = 0; r < reg.matrix.rows; ++r) {
    if (std::fabs(row_sum[static_cast<std::size_t>(r)] - 1.0) > 1e-9) {
      throw LossError(LossErrorKind::regressor_malformed,
                      strfmt("regressor row %d sums to %.12g, expected 1", r,
                             row_sum[static_cast<std::size_t>(r)]));
    }
  }
}

namespace detail {

// Probe directions for the synthetic landmark set: the six signed coordinate
// axes, then five body diagonals (all four with positive x, plus the one with
// negative x and positive y, z), in this fixed order. The twelfth landmark is
// the vertex nearest the centroid.
inline const std::array<std::array<double, 3>, 11>& landmark_directions() {
  static const std::array<std::array<double, 3>, 11> dirs = {{
      {-1.0, 0.0, 0.0},
      {1.0, 0.0, 0.0},
      {0.0, -1.0, 0.0},
      {0.0, 1.0, 0.0},
      {0.0, 0.0, -1.0},
      {0.0, 0.0, 1.0},
      {1.0, 1.0, 1.0},
      {1.0, 1.0, -1.0},
      {1.0, -1.0, 1.0},
      {1.0, -1.0, -1.0},
      {-1.0, 1.0, 1.0},
  }};
  return dirs;
}

inline const std::array<const char*, 12>& landmark_names() {
  static const std::array<const char*, 12> names = {{
      "x_min", "x_max", "y_min", "y_max", "z_min", "z_max", "diag_ppp", "diag_ppm",
      "diag_pmp", "diag_pmm", "diag_mpp", "center",
  }};
  return names;
}

}  // namespace detail

// Builds the deterministic 12-landmark one-hot regressor used by the
// synthetic dataset: extremal vertices along the probe directions above plus
// the centroid-nearest vertex. Ties pick the smallest vertex index, so the
// result depends only on the vertex positions.
inline JointRegressor make_landmark_regressor(const TriMesh& mesh) {
  validate_mesh(mesh);
  const int n = static_cast<int>(mesh.vertices.size());
  std::array<double, 3> centroid = {0.0, 0.0, 0.0};
  for (const auto& v : mesh.vertices) {
    for (int k = 0; k < 3; ++k) centroid[static_cast<std::size_t>(k)] += v[static_cast<std::size_t>(k)];
  }
  for (int k = 0; k < 3; ++k) centroid[static_cast<std::size_t>(k)] /= static_cast<double>(n);

  std::vector<SparseTriplet> triplets;
  triplets.reserve(12);
  const auto& dirs = detail::landmark_directions();
  for (int j = 0; j < static_cast<int>(dirs.size()); ++j) {
    int best = 0;
    double best_dot = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const auto& v = mesh.vertices[static_cast<std::size_t>(i)];
      const auto& d = dirs[static_cast<std::size_t>(j)];
      const double dot = v[0] * d[0] + v[1] * d[1] + v[2] * d[2];
      if (dot > best_dot) {
        best_dot = dot;
        best = i;
      }
    }
    triplets.push_back({j, best, 1.0});
  }
  int nearest = 0;
  double nearest_sq = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const auto& v = mesh.vertices[static_cast<std::size_t>(i)];
    const double dx = v[0] - centroid[0];
    const double dy = v[1] - centroid[1];
    const double dz = v[2] - centroid[2];
    const double d2 = dx * dx + dy * dy + dz * dz;
    if (d2 < nearest_sq) {
      nearest_sq = d2;
      nearest = i;
    }
  }
  triplets.push_back({11, nearest, 1.0});

  JointRegressor reg;
  reg.matrix = SparseMatrix::from_triplets(12, n, std::move(triplets));
  for (const char* name : detail::landmark_names()) reg.joint_names.emplace_back(name);
  validate_regressor(reg);
  return reg;
}

// Triplet text format: a "D N" header line, then one "row col value" line per
// nonzero. Joint names are not part of the format; load_regressor assigns
// "joint<i>" placeholders.
inline void save_regressor(const JointRegressor& reg, const std::string& path) {
  validate_regressor(reg);
  std::ofstream out(path);
  if (!out) {
    throw LossError(LossErrorKind::io_failure, "cannot open for write: " + path);
  }
  out << reg.matrix.rows << " " << reg.matrix.cols << "\n";
  for (const SparseTriplet& t : reg.matrix.entries) {
    out << t.row << " " << t.col << " " << strfmt("%.17g", t.value) << "\n";
  }
  if (!out.good()) {
    throw LossError(LossErrorKind::io_failure, "write failed: " + path);
  }
}

inline JointRegressor load_regressor(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw LossError(LossErrorKind::io_failure, "cannot open for read: " + path);
  }
  int d = 0;
  int n = 0;
  if (!(in >> d >> n) || d <= 0 || n <= 0) {
    throw LossError(LossErrorKind::regressor_malformed, "bad regressor header in " + path);
  }
  std::vector<SparseTriplet> triplets;
  int row = 0;
  int col = 0;
  double value = 0.0;
  while (in >> row >> col >> value) {
    if (row < 0 || row >= d || col < 0 || col >= n) {
      throw LossError(LossErrorKind::regressor_malformed,
                      strfmt("regressor entry (%d, %d) outside %d x %d in %s", row, col, d, n,
                             path.c_str()));
    }
    triplets.push_back({row, col, value});
  }
  if (!in.eof()) {
    throw LossError(LossErrorKind::regressor_malformed, "unparseable regressor line in " + path);
  }
  JointRegressor reg;
  try {
    reg.matrix = SparseMatrix::from_triplets(d, n, std::move(triplets));
  } catch (const MeshError& e) {
    throw LossError(LossErrorKind::regressor_malformed, e.what());
  }
  for (int i = 0; i < d; ++i) reg.joint_names.push_back(strfmt("joint%d", i));
  validate_regressor(reg);
  return reg;
}

// Weak-perspective camera: (x, y) |-> scale * (x, y) + translation, z dropped.
struct Camera {
  double scale = 1.0;
  std::array<double, 2> translation = {0.0, 0.0};
};

inline void validate_camera(const Camera& cam) {
  if (!(cam.scale > 0.0) || !std::isfinite(cam.scale)) {
    throw LossError(LossErrorKind::invalid_argument,
                    strfmt("camera scale must be positive and finite, got %g", cam.scale));
  }
  if (!std::isfinite(cam.translation[0]) || !std::isfinite(cam.translation[1])) {
    throw LossError(LossErrorKind::invalid_argument, "camera translation must be finite");
  }
}

namespace detail {

inline void require_shape(const char* op, const Tensor& t, int rows, int cols) {
  if (t.rows() != rows || t.cols() != cols) {
    throw LossError(LossErrorKind::shape_mismatch,
                    strfmt("%s: expected %dx%d, got %dx%d", op, rows, cols, t.rows(), t.cols()));
  }
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw LossError(LossErrorKind::shape_mismatch,
                    strfmt("%s: shapes %dx%d and %dx%d differ", op, a.rows(), a.cols(), b.rows(),
                           b.cols()));
  }
}

}  // namespace detail

enum class LossReduction { sum_vertices, mean_vertices };

// Sum over vertices of the per-vertex L1 distance. The mean variant divides
// the same sum by the vertex count.
inline Tensor vertex_loss(const Tensor& pred, const Tensor& gt,
                          LossReduction reduction = LossReduction::sum_vertices) {
  detail::require_same_shape("vertex_loss", pred, gt);
  if (pred.cols() != 3) {
    throw LossError(LossErrorKind::shape_mismatch,
                    strfmt("vertex_loss: expected 3 columns, got %d", pred.cols()));
  }
  Tensor loss = l1_norm(sub(pred, gt));
  if (reduction == LossReduction::mean_vertices) {
    loss = scale(loss, 1.0 / static_cast<double>(pred.rows()));
  }
  return loss;
}

inline Tensor regress_joints(const Tensor& mesh_coords, const JointRegressor& reg) {
  if (mesh_coords.rows() != reg.vertex_count()) {
    throw LossError(LossErrorKind::shape_mismatch,
                    strfmt("regress_joints: regressor expects %d vertices, mesh has %d",
                           reg.vertex_count(), mesh_coords.rows()));
  }
  return sparse_matmul(reg.matrix, mesh_coords);
}

inline Tensor joint3d_loss(const Tensor& pred_mesh, const Tensor& gt_joints,
                           const JointRegressor& reg) {
  detail::require_shape("joint3d_loss", gt_joints, reg.joint_count(), 3);
  return l1_norm(sub(regress_joints(pred_mesh, reg), gt_joints));
}

inline Tensor project(const Tensor& joints3d, const Camera& cam) {
  validate_camera(cam);
  if (joints3d.cols() != 3) {
    throw LossError(LossErrorKind::shape_mismatch,
                    strfmt("project: expected 3 columns, got %d", joints3d.cols()));
  }
  Tensor xy = slice_cols(joints3d, 0, 2);
  Tensor t = Tensor::constant(1, 2, {cam.translation[0], cam.translation[1]});
  return add_row_bias(scale(xy, cam.scale), t);
}

inline Tensor joint2d_loss(const Tensor& pred_mesh, const Tensor& gt_joints2d,
                           const JointRegressor& reg, const Camera& cam) {
  detail::require_shape("joint2d_loss", gt_joints2d, reg.joint_count(), 2);
  return l1_norm(sub(project(regress_joints(pred_mesh, reg), cam), gt_joints2d));
}

struct LossWeights {
  double vertex = 1.0;
  double joint3d = 1.0;
  double joint2d = 1.0;
};

struct LossTerms {
  Tensor vertex;
  Tensor joint3d;
  Tensor joint2d;
  Tensor total;
};

// Weighted sum of the three supervision terms. Weights multiply each scalar
// term, so the default 1/1/1 total is bit-identical to adding the separately
// computed components.
inline LossTerms total_loss(const Tensor& pred_mesh, const Tensor& gt_mesh,
                            const Tensor& gt_joints3d, const Tensor& gt_joints2d,
                            const JointRegressor& reg, const Camera& cam,
                            const LossWeights& weights = LossWeights{}) {
  LossTerms terms;
  terms.vertex = vertex_loss(pred_mesh, gt_mesh);
  terms.joint3d = joint3d_loss(pred_mesh, gt_joints3d, reg);
  terms.joint2d = joint2d_loss(pred_mesh, gt_joints2d, reg, cam);
  terms.total = add(add(scale(terms.vertex, weights.vertex), scale(terms.joint3d, weights.joint3d)),
                    scale(terms.joint2d, weights.joint2d));
  return terms;
}

}  // namespace dcgnet

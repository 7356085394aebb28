#pragma once

// Evaluation metrics over D x 3 joint sets: MPJPE, Procrustes-aligned MPJPE
// (similarity alignment with scale), PCK at a threshold, and AUC over a
// threshold ladder. Everything here is grad-free; distances are in the model
// millimeters the synthetic data is generated in.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcgnet/autodiff.hpp"
#include "dcgnet/util.hpp"

namespace dcgnet {

enum class MetricsErrorKind {
  shape_mismatch,
  invalid_argument,
  degenerate_input,
  io_failure,
};

class MetricsError : public std::runtime_error {
 public:
  MetricsError(MetricsErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  MetricsErrorKind kind() const { return kind_; }

 private:
  MetricsErrorKind kind_;
};

namespace detail {

inline void require_joint_sets(const char* op, const Tensor& pred, const Tensor& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw MetricsError(MetricsErrorKind::shape_mismatch,
                       strfmt("%s: shapes %dx%d and %dx%d differ", op, pred.rows(), pred.cols(),
                              gt.rows(), gt.cols()));
  }
  if (pred.cols() != 3) {
    throw MetricsError(MetricsErrorKind::shape_mismatch,
                       strfmt("%s: expected 3 columns, got %d", op, pred.cols()));
  }
  if (pred.rows() < 1) {
    throw MetricsError(MetricsErrorKind::invalid_argument,
                       strfmt("%s: need at least one joint", op));
  }
}

}  // namespace detail

// Mean over joints of the Euclidean distance between corresponding rows.
inline double mpjpe(const Tensor& pred, const Tensor& gt) {
  detail::require_joint_sets("mpjpe", pred, gt);
  const int d = pred.rows();
  double total = 0.0;
  for (int i = 0; i < d; ++i) {
    const double dx = pred.at(i, 0) - gt.at(i, 0);
    const double dy = pred.at(i, 1) - gt.at(i, 1);
    const double dz = pred.at(i, 2) - gt.at(i, 2);
    total += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return total / static_cast<double>(d);
}

// Similarity transform y ~ scale * R * x + translation with R a proper
// rotation (row-major 3x3).
struct SimilarityTransform {
  double scale = 1.0;
  std::array<double, 9> rotation = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0};
  std::array<double, 3> translation = {0.0, 0.0, 0.0};
};

inline Tensor apply_similarity(const SimilarityTransform& transform, const Tensor& points) {
  if (points.cols() != 3) {
    throw MetricsError(MetricsErrorKind::shape_mismatch,
                       strfmt("apply_similarity: expected 3 columns, got %d", points.cols()));
  }
  const int d = points.rows();
  std::vector<double> out(static_cast<std::size_t>(d) * 3, 0.0);
  const std::array<double, 9>& r = transform.rotation;
  for (int i = 0; i < d; ++i) {
    const double x = points.at(i, 0);
    const double y = points.at(i, 1);
    const double z = points.at(i, 2);
    for (int k = 0; k < 3; ++k) {
      out[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(k)] =
          transform.scale * (r[static_cast<std::size_t>(3 * k)] * x +
                             r[static_cast<std::size_t>(3 * k + 1)] * y +
                             r[static_cast<std::size_t>(3 * k + 2)] * z) +
          transform.translation[static_cast<std::size_t>(k)];
    }
  }
  return Tensor::constant(d, 3, std::move(out));
}

// Least-squares similarity alignment of pred onto gt: rotation from the SVD
// of the cross-covariance with the reflection excluded by flipping the sign
// of the smallest singular direction, scale and translation in closed form.
// Degenerate spreads (all pred points coincident, or cross-covariance of
// rank < 2) leave the rotation underdetermined and are rejected.
inline SimilarityTransform procrustes_transform(const Tensor& pred, const Tensor& gt) {
  detail::require_joint_sets("procrustes_transform", pred, gt);
  const int d = pred.rows();
  if (d < 3) {
    throw MetricsError(MetricsErrorKind::invalid_argument,
                       strfmt("procrustes_transform: need >= 3 joints, got %d", d));
  }

  Eigen::Vector3d mu_x = Eigen::Vector3d::Zero();
  Eigen::Vector3d mu_y = Eigen::Vector3d::Zero();
  for (int i = 0; i < d; ++i) {
    mu_x += Eigen::Vector3d(pred.at(i, 0), pred.at(i, 1), pred.at(i, 2));
    mu_y += Eigen::Vector3d(gt.at(i, 0), gt.at(i, 1), gt.at(i, 2));
  }
  mu_x /= static_cast<double>(d);
  mu_y /= static_cast<double>(d);

  double var_x = 0.0;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int i = 0; i < d; ++i) {
    const Eigen::Vector3d xc = Eigen::Vector3d(pred.at(i, 0), pred.at(i, 1), pred.at(i, 2)) - mu_x;
    const Eigen::Vector3d yc = Eigen::Vector3d(gt.at(i, 0), gt.at(i, 1), gt.at(i, 2)) - mu_y;
    var_x += xc.squaredNorm();
    cov += yc * xc.transpose();
  }
  var_x /= static_cast<double>(d);
  cov /= static_cast<double>(d);

  if (!(var_x > 0.0)) {
    throw MetricsError(MetricsErrorKind::degenerate_input,
                       "procrustes_transform: prediction has zero spread");
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(sv(1) > sv(0) * 1e-12) || !(sv(0) > 0.0)) {
    throw MetricsError(MetricsErrorKind::degenerate_input,
                       strfmt("procrustes_transform: cross-covariance is rank-deficient "
                              "(singular values %g, %g, %g)",
                              sv(0), sv(1), sv(2)));
  }

  const double det_sign = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0
                                                                                          : 1.0;
  Eigen::Vector3d flip(1.0, 1.0, det_sign);
  const Eigen::Matrix3d rot =
      svd.matrixU() * flip.asDiagonal() * svd.matrixV().transpose();
  const double scale = (sv(0) + sv(1) + det_sign * sv(2)) / var_x;
  const Eigen::Vector3d trans = mu_y - scale * rot * mu_x;

  SimilarityTransform transform;
  transform.scale = scale;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      transform.rotation[static_cast<std::size_t>(3 * r + c)] = rot(r, c);
    }
  }
  for (int k = 0; k < 3; ++k) transform.translation[static_cast<std::size_t>(k)] = trans(k);
  return transform;
}

inline Tensor procrustes_align(const Tensor& pred, const Tensor& gt) {
  return apply_similarity(procrustes_transform(pred, gt), pred);
}

// Fraction of joints whose Euclidean distance is <= threshold (inclusive, so
// joints exactly at the threshold count as correct).
inline double pck(const Tensor& pred, const Tensor& gt, double threshold) {
  detail::require_joint_sets("pck", pred, gt);
  if (threshold < 0.0 || !std::isfinite(threshold)) {
    throw MetricsError(MetricsErrorKind::invalid_argument,
                       strfmt("pck: threshold must be >= 0, got %g", threshold));
  }
  const int d = pred.rows();
  int within = 0;
  for (int i = 0; i < d; ++i) {
    const double dx = pred.at(i, 0) - gt.at(i, 0);
    const double dy = pred.at(i, 1) - gt.at(i, 1);
    const double dz = pred.at(i, 2) - gt.at(i, 2);
    if (std::sqrt(dx * dx + dy * dy + dz * dz) <= threshold) ++within;
  }
  return static_cast<double>(within) / static_cast<double>(d);
}

// 0 to 150 model millimeters in 31 evenly spaced values.
inline std::vector<double> default_pck_thresholds() {
  std::vector<double> ladder(31);
  for (int i = 0; i < 31; ++i) ladder[static_cast<std::size_t>(i)] = 5.0 * static_cast<double>(i);
  return ladder;
}

// Trapezoidal mean of pck over a strictly increasing threshold ladder,
// normalized by the ladder span so the result stays in [0, 1].
inline double auc(const Tensor& pred, const Tensor& gt, const std::vector<double>& thresholds) {
  if (thresholds.empty()) {
    throw MetricsError(MetricsErrorKind::invalid_argument, "auc: empty threshold list");
  }
  if (thresholds.size() < 2) {
    throw MetricsError(MetricsErrorKind::invalid_argument,
                       "auc: need at least two thresholds for a trapezoidal mean");
  }
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i - 1])) {
      throw MetricsError(MetricsErrorKind::invalid_argument,
                         strfmt("auc: thresholds must be strictly increasing, got %g then %g at "
                                "position %zu",
                                thresholds[i - 1], thresholds[i], i));
    }
  }
  std::vector<double> correct(thresholds.size());
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    correct[i] = pck(pred, gt, thresholds[i]);
  }
  double area = 0.0;
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    area += 0.5 * (correct[i] + correct[i - 1]) * (thresholds[i] - thresholds[i - 1]);
  }
  return area / (thresholds.back() - thresholds.front());
}

inline double auc(const Tensor& pred, const Tensor& gt) {
  return auc(pred, gt, default_pck_thresholds());
}

struct PerSampleEval {
  std::string id;
  double mpjpe = 0.0;
  double reconst_error = 0.0;
  double pck = 0.0;
  double auc = 0.0;
};

struct EvalReport {
  double mpjpe = 0.0;
  double reconst_error = 0.0;
  double pck = 0.0;
  double auc = 0.0;
  std::vector<PerSampleEval> per_sample;
};

constexpr double kDefaultPckThreshold = 150.0;

inline PerSampleEval evaluate_sample(const Tensor& pred, const Tensor& gt,
                                     const std::string& id = std::string(),
                                     double pck_threshold = kDefaultPckThreshold) {
  PerSampleEval s;
  s.id = id;
  s.mpjpe = mpjpe(pred, gt);
  s.reconst_error = mpjpe(procrustes_align(pred, gt), gt);
  s.pck = pck(pred, gt, pck_threshold);
  s.auc = auc(pred, gt);
  return s;
}

inline EvalReport make_report(std::vector<PerSampleEval> samples) {
  if (samples.empty()) {
    throw MetricsError(MetricsErrorKind::invalid_argument, "make_report: no samples");
  }
  EvalReport report;
  for (const PerSampleEval& s : samples) {
    report.mpjpe += s.mpjpe;
    report.reconst_error += s.reconst_error;
    report.pck += s.pck;
    report.auc += s.auc;
  }
  const double n = static_cast<double>(samples.size());
  report.mpjpe /= n;
  report.reconst_error /= n;
  report.pck /= n;
  report.auc /= n;
  report.per_sample = std::move(samples);
  return report;
}

// Flat key-value summary plus a per-sample CSV. The alignment flavor is
// flagged in the header because reconst_error depends on it.
inline void write_report(const EvalReport& report, const std::string& summary_path,
                         const std::string& csv_path) {
  std::ofstream summary(summary_path);
  if (!summary) {
    throw MetricsError(MetricsErrorKind::io_failure, "cannot open for write: " + summary_path);
  }
  summary << "alignment similarity\n";
  summary << "units model_mm\n";
  summary << "samples " << report.per_sample.size() << "\n";
  summary << "mpjpe " << strfmt("%.17g", report.mpjpe) << "\n";
  summary << "reconst_error " << strfmt("%.17g", report.reconst_error) << "\n";
  summary << "pck " << strfmt("%.17g", report.pck) << "\n";
  summary << "auc " << strfmt("%.17g", report.auc) << "\n";
  if (!summary.good()) {
    throw MetricsError(MetricsErrorKind::io_failure, "write failed: " + summary_path);
  }

  std::ofstream csv(csv_path);
  if (!csv) {
    throw MetricsError(MetricsErrorKind::io_failure, "cannot open for write: " + csv_path);
  }
  csv << "id,mpjpe,reconst_error,pck,auc\n";
  for (const PerSampleEval& s : report.per_sample) {
    csv << s.id << "," << strfmt("%.17g", s.mpjpe) << "," << strfmt("%.17g", s.reconst_error)
        << "," << strfmt("%.17g", s.pck) << "," << strfmt("%.17g", s.auc) << "\n";
  }
  if (!csv.good()) {
    throw MetricsError(MetricsErrorKind::io_failure, "write failed: " + csv_path);
  }
}

}  // namespace dcgnet

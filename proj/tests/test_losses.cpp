#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dcgnet/gradcheck.hpp"
#include "dcgnet/losses.hpp"
#include "dcgnet/rng.hpp"

namespace {

using dcgnet::Camera;
using dcgnet::JointRegressor;
using dcgnet::LossError;
using dcgnet::LossErrorKind;
using dcgnet::LossReduction;
using dcgnet::LossWeights;
using dcgnet::Rng;
using dcgnet::SparseMatrix;
using dcgnet::Tensor;
using dcgnet::TriMesh;

namespace fs = std::filesystem;

fs::path scratch_dir() {
  fs::path d = fs::temp_directory_path() / "dcgnet_losses_tests";
  fs::create_directories(d);
  return d;
}

std::vector<double> random_values(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

Tensor random_const(Rng& rng, int rows, int cols) {
  return Tensor::constant(rows, cols, random_values(rng, static_cast<std::size_t>(rows) * cols));
}

// Asymmetric point cloud with no faces; enough spread that each probe
// direction has a unique maximizer.
TriMesh cloud10() {
  TriMesh m;
  m.vertices = {
      {0.05, 0.1, -0.02}, {2.1, 0.3, 0.1},   {-1.9, 0.2, -0.3}, {0.2, 1.8, 0.25},
      {-0.1, -2.2, 0.4},  {0.3, -0.2, 2.45}, {0.15, 0.4, -2.1}, {1.4, 1.3, 1.2},
      {1.2, -1.5, -1.1},  {-1.3, 1.1, 0.9},
  };
  return m;
}

double naive_l1(const Tensor& a, const Tensor& b) {
  double total = 0.0;
  for (int r = 0; r < a.rows(); ++r) {
    for (int c = 0; c < a.cols(); ++c) total += std::fabs(a.at(r, c) - b.at(r, c));
  }
  return total;
}

Camera test_camera() {
  Camera cam;
  cam.scale = 1.3;
  cam.translation = {0.4, -0.2};
  return cam;
}

TEST(Losses, VertexLossIsZeroOnlyWhenMeshesCoincide) {
  Rng rng(101);
  Tensor pred = random_const(rng, 7, 3);
  Tensor same = Tensor::constant(7, 3, pred.values());
  EXPECT_EQ(dcgnet::vertex_loss(pred, same).at(0, 0), 0.0);

  std::vector<double> bumped = pred.values();
  bumped[11] += 1e-9;
  Tensor other = Tensor::constant(7, 3, bumped);
  EXPECT_GT(dcgnet::vertex_loss(pred, other).at(0, 0), 0.0);
}

TEST(Losses, VertexLossUnitOffsetEqualsVertexCount) {
  Rng rng(102);
  Tensor gt = random_const(rng, 7, 3);
  std::vector<double> shifted = gt.values();
  for (std::size_t i = 0; i < shifted.size(); i += 3) shifted[i] += 1.0;
  Tensor pred = Tensor::constant(7, 3, shifted);
  EXPECT_NEAR(dcgnet::vertex_loss(pred, gt).at(0, 0), 7.0, 1e-12);
}

TEST(Losses, VertexLossMatchesNaiveDoubleLoop) {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(dcgnet::derive_seed(900, static_cast<std::uint64_t>(seed)));
    Tensor pred = random_const(rng, 7, 3);
    Tensor gt = random_const(rng, 7, 3);
    EXPECT_NEAR(dcgnet::vertex_loss(pred, gt).at(0, 0), naive_l1(pred, gt), 1e-12);
  }
}

TEST(Losses, VertexLossIsTranslationInvariant) {
  Rng rng(103);
  Tensor pred = random_const(rng, 9, 3);
  Tensor gt = random_const(rng, 9, 3);
  const double base = dcgnet::vertex_loss(pred, gt).at(0, 0);

  const std::array<double, 3> offset = {0.37, -1.25, 2.03};
  std::vector<double> pv = pred.values();
  std::vector<double> gv = gt.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    pv[i] += offset[i % 3];
    gv[i] += offset[i % 3];
  }
  const double moved =
      dcgnet::vertex_loss(Tensor::constant(9, 3, pv), Tensor::constant(9, 3, gv)).at(0, 0);
  EXPECT_NEAR(moved, base, 1e-9);
}

TEST(Losses, MeanReductionDividesSumByVertexCount) {
  Rng rng(104);
  Tensor pred = random_const(rng, 7, 3);
  Tensor gt = random_const(rng, 7, 3);
  const double sum = dcgnet::vertex_loss(pred, gt).at(0, 0);
  const double mean = dcgnet::vertex_loss(pred, gt, LossReduction::mean_vertices).at(0, 0);
  EXPECT_EQ(mean, sum * (1.0 / 7.0));
}

TEST(Losses, OneHotRegressorRowsSelectVertexCoordinates) {
  SparseMatrix m = SparseMatrix::from_triplets(2, 4, {{0, 3, 1.0}, {1, 1, 1.0}});
  JointRegressor reg{m, {"a", "b"}};
  Rng rng(105);
  Tensor mesh = random_const(rng, 4, 3);
  Tensor joints = dcgnet::regress_joints(mesh, reg);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(joints.at(0, c), mesh.at(3, c));
    EXPECT_EQ(joints.at(1, c), mesh.at(1, c));
  }
}

TEST(Losses, HalfHalfRegressorRowGivesMidpoint) {
  SparseMatrix m = SparseMatrix::from_triplets(1, 2, {{0, 0, 0.5}, {0, 1, 0.5}});
  JointRegressor reg{m, {"mid"}};
  Tensor mesh = Tensor::constant(2, 3, {1.0, 2.0, 3.0, 5.0, 4.0, -1.0});
  Tensor joints = dcgnet::regress_joints(mesh, reg);
  EXPECT_NEAR(joints.at(0, 0), 3.0, 1e-15);
  EXPECT_NEAR(joints.at(0, 1), 3.0, 1e-15);
  EXPECT_NEAR(joints.at(0, 2), 1.0, 1e-15);
}

TEST(Losses, RegressJointsMatchesDenseOracle) {
  Rng rng(106);
  // Random row-stochastic sparse regressor over 8 vertices, 2 weights per row.
  std::vector<dcgnet::SparseTriplet> triplets;
  std::vector<std::string> names;
  for (int r = 0; r < 5; ++r) {
    const int a = static_cast<int>(rng.uniform(0.0, 7.999));
    const int b = (a + 1 + static_cast<int>(rng.uniform(0.0, 6.999))) % 8;
    const double w = rng.uniform(0.05, 0.95);
    triplets.push_back({r, a, w});
    triplets.push_back({r, b, 1.0 - w});
    names.push_back("j" + std::to_string(r));
  }
  JointRegressor reg{SparseMatrix::from_triplets(5, 8, triplets), names};
  dcgnet::validate_regressor(reg);

  Tensor mesh = random_const(rng, 8, 3);
  Tensor joints = dcgnet::regress_joints(mesh, reg);

  const std::vector<double> dense = reg.matrix.to_dense();
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) acc += dense[static_cast<std::size_t>(r * 8 + k)] * mesh.at(k, c);
      EXPECT_NEAR(joints.at(r, c), acc, 1e-12);
    }
  }
}

TEST(Losses, Joint3dLossClosedFormAndNaiveOracle) {
  TriMesh cloud = cloud10();
  JointRegressor reg = dcgnet::make_landmark_regressor(cloud);
  Rng rng(107);
  Tensor mesh = random_const(rng, 10, 3);
  Tensor joints = dcgnet::regress_joints(mesh, reg);

  std::vector<double> shifted = joints.values();
  for (std::size_t i = 1; i < shifted.size(); i += 3) shifted[i] += 1.0;
  Tensor gt = Tensor::constant(12, 3, shifted);
  EXPECT_NEAR(dcgnet::joint3d_loss(mesh, gt, reg).at(0, 0), 12.0, 1e-12);

  Tensor gt_rand = random_const(rng, 12, 3);
  EXPECT_NEAR(dcgnet::joint3d_loss(mesh, gt_rand, reg).at(0, 0), naive_l1(joints, gt_rand), 1e-12);
}

TEST(Losses, ProjectAppliesScaleThenTranslationAndDropsZ) {
  Tensor joints = Tensor::constant(2, 3, {1.0, -2.0, 7.0, 0.5, 3.0, -4.0});

  Camera plain;
  Tensor ortho = dcgnet::project(joints, plain);
  EXPECT_EQ(ortho.rows(), 2);
  EXPECT_EQ(ortho.cols(), 2);
  EXPECT_EQ(ortho.at(0, 0), 1.0);
  EXPECT_EQ(ortho.at(0, 1), -2.0);
  EXPECT_EQ(ortho.at(1, 0), 0.5);
  EXPECT_EQ(ortho.at(1, 1), 3.0);

  Camera doubled;
  doubled.scale = 2.0;
  doubled.translation = {10.0, 20.0};
  Tensor proj = dcgnet::project(joints, doubled);
  EXPECT_NEAR(proj.at(0, 0), 2.0 * 1.0 + 10.0, 1e-15);
  EXPECT_NEAR(proj.at(0, 1), 2.0 * -2.0 + 20.0, 1e-15);
  EXPECT_NEAR(proj.at(1, 0), 2.0 * 0.5 + 10.0, 1e-15);
  EXPECT_NEAR(proj.at(1, 1), 2.0 * 3.0 + 20.0, 1e-15);
}

TEST(Losses, Joint2dLossClosedFormAndNaiveOracle) {
  TriMesh cloud = cloud10();
  JointRegressor reg = dcgnet::make_landmark_regressor(cloud);
  Camera cam = test_camera();
  Rng rng(108);
  Tensor mesh = random_const(rng, 10, 3);
  Tensor projected = dcgnet::project(dcgnet::regress_joints(mesh, reg), cam);

  std::vector<double> shifted = projected.values();
  for (double& x : shifted) x += 1.0;
  Tensor gt = Tensor::constant(12, 2, shifted);
  EXPECT_NEAR(dcgnet::joint2d_loss(mesh, gt, reg, cam).at(0, 0), 24.0, 1e-12);

  Tensor gt_rand = random_const(rng, 12, 2);
  EXPECT_NEAR(dcgnet::joint2d_loss(mesh, gt_rand, reg, cam).at(0, 0),
              naive_l1(projected, gt_rand), 1e-12);
}

TEST(Losses, TotalLossDefaultWeightsEqualComponentSumBitExactly) {
  TriMesh cloud = cloud10();
  JointRegressor reg = dcgnet::make_landmark_regressor(cloud);
  Camera cam = test_camera();
  Rng rng(109);
  Tensor pred = random_const(rng, 10, 3);
  Tensor gt_mesh = random_const(rng, 10, 3);
  Tensor gt_j3 = random_const(rng, 12, 3);
  Tensor gt_j2 = random_const(rng, 12, 2);

  dcgnet::LossTerms terms = dcgnet::total_loss(pred, gt_mesh, gt_j3, gt_j2, reg, cam);
  const double separate_vertex = dcgnet::vertex_loss(pred, gt_mesh).at(0, 0);
  const double separate_j3 = dcgnet::joint3d_loss(pred, gt_j3, reg).at(0, 0);
  const double separate_j2 = dcgnet::joint2d_loss(pred, gt_j2, reg, cam).at(0, 0);

  EXPECT_EQ(terms.vertex.at(0, 0), separate_vertex);
  EXPECT_EQ(terms.joint3d.at(0, 0), separate_j3);
  EXPECT_EQ(terms.joint2d.at(0, 0), separate_j2);
  EXPECT_EQ(terms.total.at(0, 0), (separate_vertex + separate_j3) + separate_j2);
}

TEST(Losses, TotalLossWeightsScaleEachComponent) {
  TriMesh cloud = cloud10();
  JointRegressor reg = dcgnet::make_landmark_regressor(cloud);
  Camera cam = test_camera();
  Rng rng(110);
  Tensor pred = random_const(rng, 10, 3);
  Tensor gt_mesh = random_const(rng, 10, 3);
  Tensor gt_j3 = random_const(rng, 12, 3);
  Tensor gt_j2 = random_const(rng, 12, 2);

  LossWeights w;
  w.vertex = 2.0;
  w.joint3d = 0.5;
  w.joint2d = 3.0;
  dcgnet::LossTerms terms = dcgnet::total_loss(pred, gt_mesh, gt_j3, gt_j2, reg, cam, w);
  const double expected = 2.0 * terms.vertex.at(0, 0) + 0.5 * terms.joint3d.at(0, 0) +
                          3.0 * terms.joint2d.at(0, 0);
  EXPECT_NEAR(terms.total.at(0, 0), expected, 1e-12);

  LossWeights vertex_only;
  vertex_only.joint3d = 0.0;
  vertex_only.joint2d = 0.0;
  dcgnet::LossTerms only = dcgnet::total_loss(pred, gt_mesh, gt_j3, gt_j2, reg, cam, vertex_only);
  EXPECT_EQ(only.total.at(0, 0), only.vertex.at(0, 0));
}

TEST(Losses, TotalLossGradientMatchesFiniteDifferences) {
  TriMesh cloud = cloud10();
  JointRegressor reg = dcgnet::make_landmark_regressor(cloud);
  Camera cam = test_camera();

  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(dcgnet::derive_seed(911, static_cast<std::uint64_t>(seed)));
    Tensor pred = Tensor::parameter(10, 3, random_values(rng, 30));

    // Targets sit >= 0.2 away from the prediction per coordinate so the L1
    // kinks stay outside the finite-difference step.
    std::vector<double> gm(30);
    for (int i = 0; i < 30; ++i) {
      gm[static_cast<std::size_t>(i)] =
          pred.values()[static_cast<std::size_t>(i)] + (rng.uniform01() < 0.5 ? -1.0 : 1.0) *
                                                            rng.uniform(0.2, 1.0);
    }
    Tensor gt_mesh = Tensor::constant(10, 3, gm);

    Tensor joints;
    Tensor proj;
    {
      dcgnet::NoGradGuard guard;
      joints = dcgnet::regress_joints(pred, reg);
      proj = dcgnet::project(joints, cam);
    }
    std::vector<double> j3 = joints.values();
    for (double& x : j3) x += (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.0);
    std::vector<double> j2 = proj.values();
    for (double& x : j2) x += (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.0);
    Tensor gt_j3 = Tensor::constant(12, 3, j3);
    Tensor gt_j2 = Tensor::constant(12, 2, j2);

    auto forward = [&]() {
      return dcgnet::total_loss(pred, gt_mesh, gt_j3, gt_j2, reg, cam).total;
    };
    dcgnet::FiniteDiffReport report = dcgnet::finite_difference_check(forward, {pred}, {});
    EXPECT_TRUE(report.passed) << "seed " << seed << ": " << report.worst;
  }
}

TEST(Losses, TotalLossGradientIsSumOfComponentGradients) {
  TriMesh cloud = cloud10();
  JointRegressor reg = dcgnet::make_landmark_regressor(cloud);
  Camera cam = test_camera();
  Rng rng(112);

  Tensor pred = Tensor::parameter(10, 3, random_values(rng, 30));
  Tensor gt_mesh = random_const(rng, 10, 3);
  Tensor gt_j3 = random_const(rng, 12, 3);
  Tensor gt_j2 = random_const(rng, 12, 2);

  pred.zero_grad();
  dcgnet::backward(dcgnet::total_loss(pred, gt_mesh, gt_j3, gt_j2, reg, cam).total);
  const std::vector<double> total_grad = pred.grad();

  pred.zero_grad();
  dcgnet::backward(dcgnet::vertex_loss(pred, gt_mesh));
  std::vector<double> summed = pred.grad();
  pred.zero_grad();
  dcgnet::backward(dcgnet::joint3d_loss(pred, gt_j3, reg));
  for (std::size_t i = 0; i < summed.size(); ++i) summed[i] += pred.grad()[i];
  pred.zero_grad();
  dcgnet::backward(dcgnet::joint2d_loss(pred, gt_j2, reg, cam));
  for (std::size_t i = 0; i < summed.size(); ++i) summed[i] += pred.grad()[i];

  ASSERT_EQ(total_grad.size(), summed.size());
  for (std::size_t i = 0; i < summed.size(); ++i) {
    EXPECT_NEAR(total_grad[i], summed[i], 1e-12) << "entry " << i;
  }
}

TEST(Losses, LandmarkRegressorSelectsExtremalAndCentroidVertices) {
  TriMesh cloud = cloud10();
  JointRegressor reg = dcgnet::make_landmark_regressor(cloud);
  ASSERT_EQ(reg.joint_count(), 12);
  ASSERT_EQ(reg.vertex_count(), 10);
  ASSERT_EQ(reg.matrix.nnz(), 12u);
  ASSERT_EQ(reg.joint_names.size(), 12u);
  dcgnet::validate_regressor(reg);

  // Each one-hot row must achieve the optimum it claims.
  const auto& dirs = dcgnet::detail::landmark_directions();
  std::array<double, 3> centroid = {0.0, 0.0, 0.0};
  for (const auto& v : cloud.vertices) {
    for (int k = 0; k < 3; ++k) centroid[static_cast<std::size_t>(k)] += v[static_cast<std::size_t>(k)];
  }
  for (double& c : centroid) c /= 10.0;

  for (const dcgnet::SparseTriplet& t : reg.matrix.entries) {
    EXPECT_EQ(t.value, 1.0);
    const auto& chosen = cloud.vertices[static_cast<std::size_t>(t.col)];
    if (t.row < 11) {
      const auto& d = dirs[static_cast<std::size_t>(t.row)];
      const double got = chosen[0] * d[0] + chosen[1] * d[1] + chosen[2] * d[2];
      for (const auto& v : cloud.vertices) {
        EXPECT_LE(v[0] * d[0] + v[1] * d[1] + v[2] * d[2], got + 1e-15);
      }
    } else {
      const double got = std::pow(chosen[0] - centroid[0], 2) +
                         std::pow(chosen[1] - centroid[1], 2) +
                         std::pow(chosen[2] - centroid[2], 2);
      for (const auto& v : cloud.vertices) {
        const double d2 = std::pow(v[0] - centroid[0], 2) + std::pow(v[1] - centroid[1], 2) +
                          std::pow(v[2] - centroid[2], 2);
        EXPECT_GE(d2, got - 1e-15);
      }
    }
  }

  JointRegressor again = dcgnet::make_landmark_regressor(cloud);
  ASSERT_EQ(again.matrix.entries.size(), reg.matrix.entries.size());
  for (std::size_t i = 0; i < reg.matrix.entries.size(); ++i) {
    EXPECT_EQ(again.matrix.entries[i].col, reg.matrix.entries[i].col);
  }
}

TEST(Losses, LandmarkTieBreaksToSmallestVertexIndex) {
  TriMesh m;
  // Vertices 1 and 3 share the maximal x coordinate.
  m.vertices = {
      {0.0, 0.0, 0.0}, {2.0, -0.3, 0.1}, {-1.0, 0.5, 0.0}, {2.0, 0.4, -0.2}, {0.1, 1.5, 0.3},
  };
  JointRegressor reg = dcgnet::make_landmark_regressor(m);
  int x_max_vertex = -1;
  for (const dcgnet::SparseTriplet& t : reg.matrix.entries) {
    if (t.row == 1) x_max_vertex = t.col;
  }
  EXPECT_EQ(x_max_vertex, 1);
}

TEST(Losses, RegressorRoundTripPreservesWeightsExactly) {
  Rng rng(113);
  std::vector<dcgnet::SparseTriplet> triplets;
  std::vector<std::string> names;
  for (int r = 0; r < 4; ++r) {
    const double w = rng.uniform(0.1, 0.9);
    triplets.push_back({r, r, w});
    triplets.push_back({r, r + 4, 1.0 - w});
    names.push_back("j" + std::to_string(r));
  }
  JointRegressor reg{SparseMatrix::from_triplets(4, 9, triplets), names};

  const fs::path path = scratch_dir() / "regressor_roundtrip.txt";
  dcgnet::save_regressor(reg, path.string());
  JointRegressor loaded = dcgnet::load_regressor(path.string());

  ASSERT_EQ(loaded.matrix.rows, 4);
  ASSERT_EQ(loaded.matrix.cols, 9);
  ASSERT_EQ(loaded.matrix.entries.size(), reg.matrix.entries.size());
  for (std::size_t i = 0; i < reg.matrix.entries.size(); ++i) {
    EXPECT_EQ(loaded.matrix.entries[i].row, reg.matrix.entries[i].row);
    EXPECT_EQ(loaded.matrix.entries[i].col, reg.matrix.entries[i].col);
    EXPECT_EQ(loaded.matrix.entries[i].value, reg.matrix.entries[i].value);
  }
  ASSERT_EQ(loaded.joint_names.size(), 4u);
  EXPECT_EQ(loaded.joint_names[0], "joint0");
}

TEST(Losses, RegressorLoaderRejectsMalformedInput) {
  const fs::path dir = scratch_dir();
  auto write_file = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir / name);
    out << body;
    return (dir / name).string();
  };

  const std::string bad_header = write_file("reg_bad_header.txt", "banana\n0 0 1\n");
  EXPECT_THROW(
      {
        try {
          dcgnet::load_regressor(bad_header);
        } catch (const LossError& e) {
          EXPECT_EQ(e.kind(), LossErrorKind::regressor_malformed);
          throw;
        }
      },
      LossError);

  const std::string out_of_range = write_file("reg_range.txt", "2 3\n0 0 1\n1 5 1\n");
  EXPECT_THROW(
      {
        try {
          dcgnet::load_regressor(out_of_range);
        } catch (const LossError& e) {
          EXPECT_EQ(e.kind(), LossErrorKind::regressor_malformed);
          throw;
        }
      },
      LossError);

  const std::string negative = write_file("reg_negative.txt", "1 2\n0 0 1.5\n0 1 -0.5\n");
  EXPECT_THROW(
      {
        try {
          dcgnet::load_regressor(negative);
        } catch (const LossError& e) {
          EXPECT_EQ(e.kind(), LossErrorKind::regressor_malformed);
          throw;
        }
      },
      LossError);

  const std::string bad_sum = write_file("reg_sum.txt", "1 2\n0 0 0.25\n0 1 0.25\n");
  EXPECT_THROW(
      {
        try {
          dcgnet::load_regressor(bad_sum);
        } catch (const LossError& e) {
          EXPECT_EQ(e.kind(), LossErrorKind::regressor_malformed);
          throw;
        }
      },
      LossError);

  EXPECT_THROW(
      {
        try {
          dcgnet::load_regressor((dir / "reg_missing.txt").string());
        } catch (const LossError& e) {
          EXPECT_EQ(e.kind(), LossErrorKind::io_failure);
          throw;
        }
      },
      LossError);
}

TEST(Losses, ShapeAndCameraErrorsNameTheProblem) {
  Rng rng(114);
  Tensor a = random_const(rng, 4, 3);
  Tensor b = random_const(rng, 5, 3);
  try {
    dcgnet::vertex_loss(a, b);
    FAIL() << "expected LossError";
  } catch (const LossError& e) {
    EXPECT_EQ(e.kind(), LossErrorKind::shape_mismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("vertex_loss"), std::string::npos);
    EXPECT_NE(msg.find("4x3"), std::string::npos);
    EXPECT_NE(msg.find("5x3"), std::string::npos);
  }

  JointRegressor reg = dcgnet::make_landmark_regressor(cloud10());
  EXPECT_THROW(dcgnet::regress_joints(random_const(rng, 9, 3), reg), LossError);
  EXPECT_THROW(dcgnet::joint3d_loss(random_const(rng, 10, 3), random_const(rng, 11, 3), reg),
               LossError);

  Camera bad;
  bad.scale = 0.0;
  EXPECT_THROW(
      {
        try {
          dcgnet::project(random_const(rng, 3, 3), bad);
        } catch (const LossError& e) {
          EXPECT_EQ(e.kind(), LossErrorKind::invalid_argument);
          throw;
        }
      },
      LossError);

  EXPECT_THROW(dcgnet::project(random_const(rng, 3, 4), test_camera()), LossError);
}

}  // namespace

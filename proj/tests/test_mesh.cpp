#include "dcgnet/mesh.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "dcgnet/rng.hpp"

namespace fs = std::filesystem;
using namespace dcgnet;

namespace {

fs::path temp_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "dcgnet_mesh_tests";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

TriMesh single_triangle() {
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}};
  return m;
}

TriMesh tetrahedron() {
  TriMesh m;
  m.vertices = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  m.faces = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return m;
}

TriMesh icosahedron_fixture() {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriMesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0},   {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},
             {5, 11, 4}, {11, 10, 2}, {10, 7, 6},  {7, 1, 8},  {3, 9, 4},   {3, 4, 2},
             {3, 2, 6},  {3, 6, 8},  {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10},
             {8, 6, 7},  {9, 8, 1}};
  return m;
}

// Connected random mesh: grow a triangle fan by attaching each new vertex to a
// random existing edge. Every vertex ends up face-referenced and connected.
TriMesh random_fan_mesh(int n, std::uint64_t seed) {
  Rng rng(seed);
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}};
  std::vector<std::pair<int, int>> edges = {{0, 1}, {1, 2}, {0, 2}};
  for (int v = 3; v < n; ++v) {
    m.vertices.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
    const auto [a, b] = edges[static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(edges.size())))];
    m.faces.push_back({a, b, v});
    edges.push_back({a, v});
    edges.push_back({b, v});
  }
  return m;
}

// Independent adjacency oracle: dense membership map built straight from the
// face list, normalized with explicit degree arithmetic.
std::vector<double> dense_adjacency_oracle(const TriMesh& mesh, bool self_loops, bool normalize,
                                           AdjacencyNormalization norm) {
  const int n = mesh.vertex_count();
  std::vector<double> a(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
  auto at = [&](int i, int j) -> double& {
    return a[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)];
  };
  for (const Face& f : mesh.faces) {
    const int idx[3] = {f[0], f[1], f[2]};
    for (int p = 0; p < 3; ++p) {
      for (int q = 0; q < 3; ++q) {
        if (p != q) at(idx[p], idx[q]) = 1.0;
      }
    }
  }
  if (self_loops) {
    for (int i = 0; i < n; ++i) at(i, i) = 1.0;
  }
  if (normalize) {
    std::vector<double> deg(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) deg[static_cast<std::size_t>(i)] += at(i, j);
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (at(i, j) != 0.0) {
          at(i, j) = (norm == AdjacencyNormalization::symmetric)
                         ? 1.0 / std::sqrt(deg[static_cast<std::size_t>(i)] *
                                           deg[static_cast<std::size_t>(j)])
                         : 1.0 / deg[static_cast<std::size_t>(i)];
        }
      }
    }
  }
  return a;
}

void expect_matches_oracle(const TriMesh& mesh, bool self_loops, bool normalize,
                           AdjacencyNormalization norm) {
  const NormalizedAdjacency adj = build_adjacency(mesh, self_loops, normalize, norm);
  const std::vector<double> got = adj.matrix.to_dense();
  const std::vector<double> want = dense_adjacency_oracle(mesh, self_loops, normalize, norm);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_DOUBLE_EQ(got[i], want[i]) << "entry " << i;
  }
}

}  // namespace

TEST(Mesh, SingleTriangleNormalizedSelfLoopedIsAllThirds) {
  const NormalizedAdjacency adj = build_adjacency(single_triangle(), true, true);
  ASSERT_EQ(adj.matrix.rows, 3);
  ASSERT_EQ(adj.matrix.cols, 3);
  ASSERT_EQ(adj.matrix.nnz(), 9u);  // fully dense incl. diagonal
  for (const SparseTriplet& t : adj.matrix.entries) {
    EXPECT_DOUBLE_EQ(t.value, 1.0 / 3.0);
  }
  EXPECT_TRUE(adj.self_loops);
}

TEST(Mesh, TetrahedronUnnormalizedIsK4) {
  const NormalizedAdjacency adj = build_adjacency(tetrahedron(), false, false);
  ASSERT_EQ(adj.matrix.nnz(), 12u);  // 4*3 off-diagonal ones
  for (const SparseTriplet& t : adj.matrix.entries) {
    EXPECT_NE(t.row, t.col);
    EXPECT_DOUBLE_EQ(t.value, 1.0);
  }
  EXPECT_FALSE(adj.self_loops);
}

TEST(Mesh, IcosahedronCountsAndRowSums) {
  const TriMesh ico = icosahedron_fixture();
  ASSERT_EQ(ico.vertex_count(), 12);
  ASSERT_EQ(ico.face_count(), 20);
  const NormalizedAdjacency adj = build_adjacency(ico, true, true);
  // Every vertex has degree 5, so with self-loops each row sums to 6/6 = 1.
  std::vector<double> row_sum(12, 0.0);
  for (const SparseTriplet& t : adj.matrix.entries) row_sum[static_cast<std::size_t>(t.row)] += t.value;
  for (double s : row_sum) EXPECT_NEAR(s, 1.0, 1e-12);
  expect_matches_oracle(ico, true, true, AdjacencyNormalization::symmetric);
  expect_matches_oracle(ico, false, true, AdjacencyNormalization::symmetric);
  expect_matches_oracle(ico, true, false, AdjacencyNormalization::symmetric);
  expect_matches_oracle(ico, true, true, AdjacencyNormalization::row);
}

TEST(Mesh, RandomMeshesMatchDenseOracle) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TriMesh m = random_fan_mesh(6 + static_cast<int>(seed) * 7, seed);
    expect_matches_oracle(m, true, true, AdjacencyNormalization::symmetric);
    expect_matches_oracle(m, false, false, AdjacencyNormalization::symmetric);
    expect_matches_oracle(m, false, true, AdjacencyNormalization::row);
  }
}

TEST(Mesh, RowNormalizationRowsSumToOne) {
  const TriMesh m = random_fan_mesh(20, 7);
  const NormalizedAdjacency adj = build_adjacency(m, true, true, AdjacencyNormalization::row);
  std::vector<double> row_sum(static_cast<std::size_t>(m.vertex_count()), 0.0);
  for (const SparseTriplet& t : adj.matrix.entries) row_sum[static_cast<std::size_t>(t.row)] += t.value;
  for (double s : row_sum) EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Mesh, StructuralSymmetryAndNonNegativity) {
  const TriMesh m = random_fan_mesh(30, 11);
  const NormalizedAdjacency adj = build_adjacency(m, true, true);
  std::set<std::pair<int, int>> pattern;
  for (const SparseTriplet& t : adj.matrix.entries) {
    EXPECT_GE(t.value, 0.0);
    pattern.insert({t.row, t.col});
  }
  for (const auto& [r, c] : pattern) {
    EXPECT_TRUE(pattern.count({c, r})) << "missing transpose of (" << r << "," << c << ")";
  }
}

// Spectral radius of the symmetric-normalized self-looped adjacency is <= 1;
// checked against a dense eigensolver on random meshes (N <= 50).
TEST(Mesh, SpectralRadiusAtMostOne) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const TriMesh m = random_fan_mesh(10 + static_cast<int>(seed) * 10, seed * 13);
    const int n = m.vertex_count();
    const NormalizedAdjacency adj = build_adjacency(m, true, true);
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(n, n);
    for (const SparseTriplet& t : adj.matrix.entries) dense(t.row, t.col) = t.value;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense);
    ASSERT_EQ(solver.info(), Eigen::Success);
    const double lo = solver.eigenvalues().minCoeff();
    const double hi = solver.eigenvalues().maxCoeff();
    EXPECT_LE(std::max(std::abs(lo), std::abs(hi)), 1.0 + 1e-12);
    EXPECT_NEAR(hi, 1.0, 1e-9);  // row-stochastic-similar matrix attains 1
  }
}

TEST(Mesh, PermutationEquivariance) {
  const TriMesh m = random_fan_mesh(25, 42);
  const int n = m.vertex_count();
  Rng rng(99);
  const std::vector<int> perm = rng.permutation(n);
  TriMesh pm;
  pm.vertices.resize(m.vertices.size());
  for (int i = 0; i < n; ++i) {
    pm.vertices[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] =
        m.vertices[static_cast<std::size_t>(i)];
  }
  for (const Face& f : m.faces) {
    pm.faces.push_back({perm[static_cast<std::size_t>(f[0])], perm[static_cast<std::size_t>(f[1])],
                        perm[static_cast<std::size_t>(f[2])]});
  }
  const NormalizedAdjacency a = build_adjacency(m, true, true);
  const NormalizedAdjacency pa = build_adjacency(pm, true, true);
  std::vector<SparseTriplet> expected;
  for (const SparseTriplet& t : a.matrix.entries) {
    expected.push_back({perm[static_cast<std::size_t>(t.row)], perm[static_cast<std::size_t>(t.col)],
                        t.value});
  }
  const SparseMatrix want = SparseMatrix::from_triplets(n, n, std::move(expected));
  ASSERT_EQ(pa.matrix.nnz(), want.nnz());
  for (std::size_t i = 0; i < want.entries.size(); ++i) {
    EXPECT_EQ(pa.matrix.entries[i].row, want.entries[i].row);
    EXPECT_EQ(pa.matrix.entries[i].col, want.entries[i].col);
    EXPECT_DOUBLE_EQ(pa.matrix.entries[i].value, want.entries[i].value);
  }
}

TEST(Mesh, ObjRoundTrip) {
  const TriMesh m = random_fan_mesh(40, 5);
  const fs::path path = temp_dir() / "roundtrip.obj";
  save_obj(m, path.string());
  std::size_t ignored = 123;
  const TriMesh back = load_obj(path.string(), &ignored);
  EXPECT_EQ(ignored, 0u);
  ASSERT_EQ(back.vertex_count(), m.vertex_count());
  ASSERT_EQ(back.face_count(), m.face_count());
  for (int i = 0; i < m.vertex_count(); ++i) {
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(back.vertices[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
                  m.vertices[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)], 1e-6);
    }
  }
  EXPECT_EQ(back.faces, m.faces);
}

TEST(Mesh, ObjVertexFormattingSixDecimals) {
  TriMesh m = single_triangle();
  m.vertices[0] = {0, 0, 0};
  const fs::path path = temp_dir() / "fmt.obj";
  save_obj(m, path.string());
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first, "v 0.000000 0.000000 0.000000");
}

TEST(Mesh, ObjIgnoredLineTypesAreCounted) {
  const fs::path path = temp_dir() / "ignored.obj";
  std::ofstream out(path);
  out << "# header comment\n"
      << "o object_name\n"
      << "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
      << "vn 0 0 1\n"
      << "vt 0.5 0.5\n"
      << "usemtl none\n"
      << "f 1 2 3\n"
      << "s off\n";
  out.close();
  std::size_t ignored = 0;
  const TriMesh m = load_obj(path.string(), &ignored);
  EXPECT_EQ(m.vertex_count(), 3);
  EXPECT_EQ(m.face_count(), 1);
  EXPECT_EQ(ignored, 5u);  // o, vn, vt, usemtl, s — comment not counted
}

TEST(Mesh, ObjFaceTokensWithSlashesParse) {
  const fs::path path = temp_dir() / "slashes.obj";
  std::ofstream out(path);
  out << "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3/1/1\n";
  out.close();
  const TriMesh m = load_obj(path.string());
  ASSERT_EQ(m.face_count(), 1);
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
}

namespace {
void expect_load_error(const std::string& content, MeshErrorKind kind, const char* label) {
  const fs::path path = temp_dir() / (std::string(label) + ".obj");
  std::ofstream out(path);
  out << content;
  out.close();
  try {
    load_obj(path.string());
    FAIL() << label << ": expected MeshError";
  } catch (const MeshError& e) {
    EXPECT_EQ(static_cast<int>(e.kind()), static_cast<int>(kind)) << label << ": " << e.what();
  }
}
}  // namespace

TEST(Mesh, ObjErrorKindsAreDistinct) {
  expect_load_error("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n",
                    MeshErrorKind::non_triangle_face, "quad");
  expect_load_error("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n", MeshErrorKind::index_out_of_range,
                    "zero_index");
  expect_load_error("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", MeshErrorKind::index_out_of_range,
                    "oob_index");
  expect_load_error("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 2\n", MeshErrorKind::duplicate_index,
                    "dup_index");
  expect_load_error("v 0 0 zero\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", MeshErrorKind::parse_failure,
                    "bad_coord");
  expect_load_error("v 0 0\nf 1 1 1\n", MeshErrorKind::parse_failure, "short_vertex");
  expect_load_error(
      "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 5 5 5\nv 6 5 5\nv 5 6 5\nf 1 2 3\nf 4 5 6\n",
      MeshErrorKind::disconnected_graph, "disconnected");
  EXPECT_THROW(load_obj((temp_dir() / "does_not_exist.obj").string()), MeshError);
}

TEST(Mesh, SparseFromTripletsValidates) {
  EXPECT_THROW(SparseMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {0, 0, 2.0}}), MeshError);
  EXPECT_THROW(SparseMatrix::from_triplets(2, 2, {{0, 2, 1.0}}), MeshError);
  EXPECT_THROW(SparseMatrix::from_triplets(2, 2, {{-1, 0, 1.0}}), MeshError);
  const SparseMatrix m = SparseMatrix::from_triplets(3, 3, {{2, 1, 5.0}, {0, 2, 1.0}, {2, 0, 4.0}});
  ASSERT_EQ(m.nnz(), 3u);
  EXPECT_EQ(m.entries[0].row, 0);
  EXPECT_EQ(m.entries[1].row, 2);
  EXPECT_EQ(m.entries[1].col, 0);
  EXPECT_EQ(m.entries[2].col, 1);
}

TEST(Mesh, SparseMultiplyMatchesBruteForce) {
  Rng rng(3);
  std::vector<SparseTriplet> trip;
  const int rows = 7, cols = 5, width = 4;
  std::set<std::pair<int, int>> used;
  for (int k = 0; k < 12; ++k) {
    const int r = static_cast<int>(rng.uniform_int(rows));
    const int c = static_cast<int>(rng.uniform_int(cols));
    if (used.insert({r, c}).second) trip.push_back({r, c, rng.uniform(-2, 2)});
  }
  const SparseMatrix s = SparseMatrix::from_triplets(rows, cols, trip);
  std::vector<double> x(static_cast<std::size_t>(cols * width));
  for (double& v : x) v = rng.uniform(-1, 1);
  std::vector<double> y;
  s.multiply_dense(x, width, &y);
  const std::vector<double> d = s.to_dense();
  for (int r = 0; r < rows; ++r) {
    for (int w = 0; w < width; ++w) {
      double acc = 0.0;
      for (int c = 0; c < cols; ++c) {
        acc += d[static_cast<std::size_t>(r * cols + c)] * x[static_cast<std::size_t>(c * width + w)];
      }
      EXPECT_NEAR(y[static_cast<std::size_t>(r * width + w)], acc, 1e-12);
    }
  }
}

TEST(Mesh, AddIdentityInsertsDiagonal) {
  const NormalizedAdjacency adj = build_adjacency(tetrahedron(), false, true);
  const NormalizedAdjacency self = add_identity(adj);
  EXPECT_TRUE(self.self_loops);
  EXPECT_EQ(self.matrix.nnz(), adj.matrix.nnz() + 4);
  const std::vector<double> a = adj.matrix.to_dense();
  const std::vector<double> b = self.matrix.to_dense();
  const int n = adj.matrix.rows;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double want = a[static_cast<std::size_t>(i * n + j)] + (i == j ? 1.0 : 0.0);
      EXPECT_DOUBLE_EQ(b[static_cast<std::size_t>(i * n + j)], want);
    }
  }
}

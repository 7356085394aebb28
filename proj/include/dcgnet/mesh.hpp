#pragma once

// Triangle meshes, COO sparse matrices, normalized graph adjacency, and the
// Wavefront OBJ subset used for all on-disk mesh exchange.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcgnet/util.hpp"

namespace dcgnet {

enum class MeshErrorKind {
  io_failure,
  parse_failure,
  non_triangle_face,
  index_out_of_range,
  duplicate_index,
  disconnected_graph,
  duplicate_entry,
  invalid_argument,
};

class MeshError : public std::runtime_error {
 public:
  MeshError(MeshErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  MeshErrorKind kind() const noexcept { return kind_; }

 private:
  MeshErrorKind kind_;
};

using Vec3 = std::array<double, 3>;
using Face = std::array<int, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }
};

// Throws unless every face references three distinct in-range vertices.
inline void validate_mesh(const TriMesh& mesh) {
  const int n = mesh.vertex_count();
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face& face = mesh.faces[f];
    for (int k = 0; k < 3; ++k) {
      if (face[static_cast<std::size_t>(k)] < 0 || face[static_cast<std::size_t>(k)] >= n) {
        throw MeshError(MeshErrorKind::index_out_of_range,
                        strfmt("face %zu references vertex %d outside [0, %d)", f,
                               face[static_cast<std::size_t>(k)], n));
      }
    }
    if (face[0] == face[1] || face[0] == face[2] || face[1] == face[2]) {
      throw MeshError(MeshErrorKind::duplicate_index,
                      strfmt("face %zu repeats a vertex index (%d %d %d)", f, face[0], face[1],
                             face[2]));
    }
  }
}

// Sorted unique neighbor lists of the undirected edge graph.
inline std::vector<std::vector<int>> neighbor_lists(const TriMesh& mesh) {
  std::vector<std::set<int>> nbr(static_cast<std::size_t>(mesh.vertex_count()));
  for (const Face& f : mesh.faces) {
    for (int a = 0; a < 3; ++a) {
      for (int b = a + 1; b < 3; ++b) {
        const int u = f[static_cast<std::size_t>(a)];
        const int v = f[static_cast<std::size_t>(b)];
        nbr[static_cast<std::size_t>(u)].insert(v);
        nbr[static_cast<std::size_t>(v)].insert(u);
      }
    }
  }
  std::vector<std::vector<int>> out(nbr.size());
  for (std::size_t i = 0; i < nbr.size(); ++i) out[i].assign(nbr[i].begin(), nbr[i].end());
  return out;
}

// True iff all vertices form one connected component of the edge graph.
// A single isolated vertex counts as connected; any second vertex does not.
inline bool is_edge_connected(const TriMesh& mesh) {
  const int n = mesh.vertex_count();
  if (n <= 1) return true;
  const std::vector<std::vector<int>> nbr = neighbor_lists(mesh);
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int reached = 1;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : nbr[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        ++reached;
        q.push(v);
      }
    }
  }
  return reached == n;
}

struct SparseTriplet {
  int row = 0;
  int col = 0;
  double value = 0.0;
};

// COO matrix with entries kept sorted by (row, col); duplicate coordinates
// are rejected at construction.
struct SparseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<SparseTriplet> entries;

  static SparseMatrix from_triplets(int rows, int cols, std::vector<SparseTriplet> triplets) {
    if (rows < 0 || cols < 0) {
      throw MeshError(MeshErrorKind::invalid_argument, "sparse matrix dimensions must be >= 0");
    }
    for (const SparseTriplet& t : triplets) {
      if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
        throw MeshError(MeshErrorKind::index_out_of_range,
                        strfmt("sparse entry (%d, %d) outside %d x %d", t.row, t.col, rows, cols));
      }
    }
    std::sort(triplets.begin(), triplets.end(), [](const SparseTriplet& a, const SparseTriplet& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    for (std::size_t i = 1; i < triplets.size(); ++i) {
      if (triplets[i].row == triplets[i - 1].row && triplets[i].col == triplets[i - 1].col) {
        throw MeshError(MeshErrorKind::duplicate_entry,
                        strfmt("duplicate sparse entry at (%d, %d)", triplets[i].row,
                               triplets[i].col));
      }
    }
    SparseMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.entries = std::move(triplets);
    return m;
  }

  std::size_t nnz() const { return entries.size(); }

  // y = S * x where x is row-major (cols x width). Entries are visited in
  // (row, col) order, so the accumulation order is reproducible.
  void multiply_dense(const std::vector<double>& x, int width, std::vector<double>* y) const {
    y->assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(width), 0.0);
    for (const SparseTriplet& t : entries) {
      const double* src = &x[static_cast<std::size_t>(t.col) * static_cast<std::size_t>(width)];
      double* dst = &(*y)[static_cast<std::size_t>(t.row) * static_cast<std::size_t>(width)];
      for (int k = 0; k < width; ++k) dst[k] += t.value * src[k];
    }
  }

  std::vector<double> to_dense() const {
    std::vector<double> d(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0);
    for (const SparseTriplet& t : entries) {
      d[static_cast<std::size_t>(t.row) * static_cast<std::size_t>(cols) +
        static_cast<std::size_t>(t.col)] = t.value;
    }
    return d;
  }
};

enum class AdjacencyNormalization { symmetric, row };

// Graph adjacency of a mesh, optionally self-looped and degree-normalized.
// self_loops records whether the identity was added before normalization.
struct NormalizedAdjacency {
  SparseMatrix matrix;
  bool self_loops = false;
};

// Builds the (optionally self-looped, optionally normalized) adjacency of the
// mesh edge graph. Symmetric normalization writes 1/sqrt(d_i * d_j) per entry,
// row normalization writes 1/d_i; degrees include the self-loop when added.
inline NormalizedAdjacency build_adjacency(
    const TriMesh& mesh, bool add_self_loops, bool normalize,
    AdjacencyNormalization norm = AdjacencyNormalization::symmetric) {
  validate_mesh(mesh);
  const int n = mesh.vertex_count();
  const std::vector<std::vector<int>> nbr = neighbor_lists(mesh);
  std::vector<double> degree(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    degree[static_cast<std::size_t>(i)] =
        static_cast<double>(nbr[static_cast<std::size_t>(i)].size()) + (add_self_loops ? 1.0 : 0.0);
  }
  std::vector<SparseTriplet> triplets;
  triplets.reserve(static_cast<std::size_t>(n) * 7);
  for (int i = 0; i < n; ++i) {
    auto push = [&](int j) {
      double v = 1.0;
      if (normalize) {
        v = (norm == AdjacencyNormalization::symmetric)
                ? 1.0 / std::sqrt(degree[static_cast<std::size_t>(i)] *
                                  degree[static_cast<std::size_t>(j)])
                : 1.0 / degree[static_cast<std::size_t>(i)];
      }
      triplets.push_back({i, j, v});
    };
    bool self_emitted = false;
    for (int j : nbr[static_cast<std::size_t>(i)]) {
      if (add_self_loops && !self_emitted && j > i) {
        push(i);
        self_emitted = true;
      }
      push(j);
    }
    if (add_self_loops && !self_emitted) push(i);
  }
  NormalizedAdjacency adj;
  adj.matrix = SparseMatrix::from_triplets(n, n, std::move(triplets));
  adj.self_loops = add_self_loops;
  return adj;
}

// Returns a copy of adj with 1.0 added on every diagonal entry (inserting the
// diagonal where absent). Used to express "A + I" over an existing adjacency.
inline NormalizedAdjacency add_identity(const NormalizedAdjacency& adj) {
  if (adj.matrix.rows != adj.matrix.cols) {
    throw MeshError(MeshErrorKind::invalid_argument, "add_identity needs a square matrix");
  }
  std::vector<SparseTriplet> triplets = adj.matrix.entries;
  std::vector<char> has_diag(static_cast<std::size_t>(adj.matrix.rows), 0);
  for (SparseTriplet& t : triplets) {
    if (t.row == t.col) {
      t.value += 1.0;
      has_diag[static_cast<std::size_t>(t.row)] = 1;
    }
  }
  for (int i = 0; i < adj.matrix.rows; ++i) {
    if (!has_diag[static_cast<std::size_t>(i)]) triplets.push_back({i, i, 1.0});
  }
  NormalizedAdjacency out;
  out.matrix = SparseMatrix::from_triplets(adj.matrix.rows, adj.matrix.cols, std::move(triplets));
  out.self_loops = true;
  return out;
}

namespace detail {

// Shared OBJ reader. strict=true enforces the public contract (at least one
// face, connected edge graph); the hierarchy manifest loader reads legitimate
// faceless coarse levels with strict=false.
inline TriMesh read_obj_stream(std::istream& in, const std::string& origin, bool strict,
                               std::size_t* ignored_lines) {
  TriMesh mesh;
  std::size_t ignored = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::vector<std::string> tok = split_ws(t);
    if (tok[0] == "v") {
      if (tok.size() != 4) {
        throw MeshError(MeshErrorKind::parse_failure,
                        strfmt("%s:%zu: vertex record needs 3 coordinates", origin.c_str(), lineno));
      }
      Vec3 p;
      for (int k = 0; k < 3; ++k) {
        if (!parse_double(tok[static_cast<std::size_t>(k + 1)], &p[static_cast<std::size_t>(k)])) {
          throw MeshError(MeshErrorKind::parse_failure,
                          strfmt("%s:%zu: bad vertex coordinate '%s'", origin.c_str(), lineno,
                                 tok[static_cast<std::size_t>(k + 1)].c_str()));
        }
      }
      mesh.vertices.push_back(p);
    } else if (tok[0] == "f") {
      if (tok.size() != 4) {
        throw MeshError(MeshErrorKind::non_triangle_face,
                        strfmt("%s:%zu: face has %zu vertices, only triangles are supported",
                               origin.c_str(), lineno, tok.size() - 1));
      }
      Face face;
      for (int k = 0; k < 3; ++k) {
        // OBJ face tokens may carry /vt/vn suffixes; only the vertex index is used.
        const std::string& ftok = tok[static_cast<std::size_t>(k + 1)];
        const std::string head = ftok.substr(0, ftok.find('/'));
        long long idx = 0;
        if (!parse_long(head, &idx)) {
          throw MeshError(MeshErrorKind::parse_failure,
                          strfmt("%s:%zu: bad face index '%s'", origin.c_str(), lineno,
                                 ftok.c_str()));
        }
        if (idx < 1) {
          throw MeshError(MeshErrorKind::index_out_of_range,
                          strfmt("%s:%zu: face index %lld is not 1-based", origin.c_str(), lineno,
                                 idx));
        }
        face[static_cast<std::size_t>(k)] = static_cast<int>(idx - 1);
      }
      mesh.faces.push_back(face);
    } else {
      ++ignored;
    }
  }
  validate_mesh(mesh);  // throws index_out_of_range / duplicate_index
  if (strict) {
    if (mesh.vertices.empty() || mesh.faces.empty()) {
      throw MeshError(MeshErrorKind::parse_failure,
                      origin + ": OBJ must contain v and f records");
    }
    if (!is_edge_connected(mesh)) {
      throw MeshError(MeshErrorKind::disconnected_graph,
                      origin + ": mesh edge graph is disconnected");
    }
  }
  if (ignored_lines != nullptr) *ignored_lines = ignored;
  return mesh;
}

inline TriMesh read_obj_file(const std::string& path, bool strict, std::size_t* ignored_lines) {
  std::ifstream in(path);
  if (!in) throw MeshError(MeshErrorKind::io_failure, "cannot open OBJ file: " + path);
  return read_obj_stream(in, path, strict, ignored_lines);
}

}  // namespace detail

// Loads the OBJ subset (v/f records, 1-based triangle faces). Comment lines
// are skipped; any other record type is ignored and counted into
// *ignored_lines. Rejects non-triangle faces, out-of-range or duplicate
// indices, and disconnected edge graphs with distinct error kinds.
inline TriMesh load_obj(const std::string& path, std::size_t* ignored_lines = nullptr) {
  return detail::read_obj_file(path, /*strict=*/true, ignored_lines);
}

// Unit icosahedron: 12 vertices on the unit sphere, 20 faces, degree 5 all over.
inline TriMesh icosahedron() {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  const double s = 1.0 / std::sqrt(1.0 + t * t);
  TriMesh m;
  m.vertices = {{-s, t * s, 0}, {s, t * s, 0},   {-s, -t * s, 0}, {s, -t * s, 0},
                {0, -s, t * s}, {0, s, t * s},   {0, -s, -t * s}, {0, s, -t * s},
                {t * s, 0, -s}, {t * s, 0, s},   {-t * s, 0, -s}, {-t * s, 0, s}};
  m.faces = {{0, 11, 5}, {0, 5, 1},   {0, 1, 7},  {0, 7, 10}, {0, 10, 11}, {1, 5, 9},
             {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},   {3, 4, 2},
             {3, 2, 6},  {3, 6, 8},   {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10},
             {8, 6, 7},  {9, 8, 1}};
  return m;
}

// One step of loop-style 1:4 subdivision with new vertices projected onto the
// unit sphere. Input vertices must already lie on the unit sphere.
inline TriMesh subdivide_unit_sphere(const TriMesh& mesh) {
  TriMesh out;
  out.vertices = mesh.vertices;
  std::vector<Face> faces;
  faces.reserve(mesh.faces.size() * 4);
  // midpoint cache keyed by unordered edge
  auto key = [](int a, int b) { return std::pair<int, int>(std::min(a, b), std::max(a, b)); };
  std::vector<std::pair<std::pair<int, int>, int>> cache;
  auto midpoint = [&](int a, int b) {
    const auto k = key(a, b);
    for (const auto& [ck, ci] : cache) {
      if (ck == k) return ci;
    }
    const Vec3& pa = out.vertices[static_cast<std::size_t>(a)];
    const Vec3& pb = out.vertices[static_cast<std::size_t>(b)];
    Vec3 mid = {(pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2, (pa[2] + pb[2]) / 2};
    const double len = std::sqrt(mid[0] * mid[0] + mid[1] * mid[1] + mid[2] * mid[2]);
    mid = {mid[0] / len, mid[1] / len, mid[2] / len};
    out.vertices.push_back(mid);
    const int idx = static_cast<int>(out.vertices.size()) - 1;
    cache.push_back({k, idx});
    return idx;
  };
  for (const Face& f : mesh.faces) {
    const int ab = midpoint(f[0], f[1]);
    const int bc = midpoint(f[1], f[2]);
    const int ca = midpoint(f[2], f[0]);
    faces.push_back({f[0], ab, ca});
    faces.push_back({f[1], bc, ab});
    faces.push_back({f[2], ca, bc});
    faces.push_back({ab, bc, ca});
  }
  out.faces = std::move(faces);
  return out;
}

// Icosphere with `subdivisions` rounds: 12, 42, 162, 642, ... vertices.
inline TriMesh icosphere(int subdivisions) {
  TriMesh m = icosahedron();
  for (int i = 0; i < subdivisions; ++i) m = subdivide_unit_sphere(m);
  return m;
}

inline void save_obj(const TriMesh& mesh, const std::string& path) {
  validate_mesh(mesh);
  std::ofstream out(path);
  if (!out) throw MeshError(MeshErrorKind::io_failure, "cannot open OBJ file for writing: " + path);
  char buf[128];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.6f %.6f %.6f\n", v[0], v[1], v[2]);
    out << buf;
  }
  for (const Face& f : mesh.faces) {
    out << "f " << (f[0] + 1) << ' ' << (f[1] + 1) << ' ' << (f[2] + 1) << '\n';
  }
  if (!out) throw MeshError(MeshErrorKind::io_failure, "short write: " + path);
}

}  // namespace dcgnet

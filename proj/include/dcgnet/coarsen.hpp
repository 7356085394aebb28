#pragma once

// Quadric-error-metric edge collapse (collapse-to-endpoint), selection/
// barycentric sampling operators, the multi-resolution mesh hierarchy, and
// its on-disk manifest.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dcgnet/mesh.hpp"
#include "dcgnet/util.hpp"

namespace dcgnet {

enum class CoarsenErrorKind { invalid_argument, collapse_blocked, manifest_malformed };

class CoarsenError : public std::runtime_error {
 public:
  CoarsenError(CoarsenErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  CoarsenErrorKind kind() const noexcept { return kind_; }

 private:
  CoarsenErrorKind kind_;
};

// down: coarse x fine selection (one 1.0 per row, each column used at most
// once). up: fine x coarse barycentric prolongation (<= 3 nonzeros per row,
// nonnegative, row sum 1).
struct SamplingOperator {
  SparseMatrix down;
  SparseMatrix up;
};

inline void validate_sampling_operator(const SamplingOperator& op, int fine_n, int coarse_n) {
  if (op.down.rows != coarse_n || op.down.cols != fine_n) {
    throw CoarsenError(CoarsenErrorKind::invalid_argument,
                       strfmt("down operator is %d x %d, expected %d x %d", op.down.rows,
                              op.down.cols, coarse_n, fine_n));
  }
  if (op.up.rows != fine_n || op.up.cols != coarse_n) {
    throw CoarsenError(CoarsenErrorKind::invalid_argument,
                       strfmt("up operator is %d x %d, expected %d x %d", op.up.rows, op.up.cols,
                              fine_n, coarse_n));
  }
  std::vector<int> row_nnz(static_cast<std::size_t>(coarse_n), 0);
  std::vector<int> col_used(static_cast<std::size_t>(fine_n), 0);
  for (const SparseTriplet& t : op.down.entries) {
    if (t.value != 1.0) {
      throw CoarsenError(CoarsenErrorKind::invalid_argument,
                         strfmt("down entry (%d, %d) = %g, selection entries must be 1", t.row,
                                t.col, t.value));
    }
    ++row_nnz[static_cast<std::size_t>(t.row)];
    ++col_used[static_cast<std::size_t>(t.col)];
  }
  for (int r = 0; r < coarse_n; ++r) {
    if (row_nnz[static_cast<std::size_t>(r)] != 1) {
      throw CoarsenError(CoarsenErrorKind::invalid_argument,
                         strfmt("down row %d has %d nonzeros, expected exactly 1", r,
                                row_nnz[static_cast<std::size_t>(r)]));
    }
  }
  for (int c = 0; c < fine_n; ++c) {
    if (col_used[static_cast<std::size_t>(c)] > 1) {
      throw CoarsenError(CoarsenErrorKind::invalid_argument,
                         strfmt("down column %d selected more than once", c));
    }
  }
  std::vector<int> up_nnz(static_cast<std::size_t>(fine_n), 0);
  std::vector<double> up_sum(static_cast<std::size_t>(fine_n), 0.0);
  for (const SparseTriplet& t : op.up.entries) {
    if (t.value < 0.0) {
      throw CoarsenError(CoarsenErrorKind::invalid_argument,
                         strfmt("up entry (%d, %d) = %g is negative", t.row, t.col, t.value));
    }
    ++up_nnz[static_cast<std::size_t>(t.row)];
    up_sum[static_cast<std::size_t>(t.row)] += t.value;
  }
  for (int r = 0; r < fine_n; ++r) {
    if (up_nnz[static_cast<std::size_t>(r)] < 1 || up_nnz[static_cast<std::size_t>(r)] > 3) {
      throw CoarsenError(CoarsenErrorKind::invalid_argument,
                         strfmt("up row %d has %d nonzeros, expected 1..3", r,
                                up_nnz[static_cast<std::size_t>(r)]));
    }
    if (std::abs(up_sum[static_cast<std::size_t>(r)] - 1.0) > 1e-9) {
      throw CoarsenError(CoarsenErrorKind::invalid_argument,
                         strfmt("up row %d sums to %.17g, expected 1", r,
                                up_sum[static_cast<std::size_t>(r)]));
    }
  }
}

namespace detail {

// Symmetric 4x4 plane quadric, upper triangle stored row-major (10 coeffs).
struct Quadric {
  double q[10] = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0};

  void add_plane(double a, double b, double c, double d) {
    q[0] += a * a;
    q[1] += a * b;
    q[2] += a * c;
    q[3] += a * d;
    q[4] += b * b;
    q[5] += b * c;
    q[6] += b * d;
    q[7] += c * c;
    q[8] += c * d;
    q[9] += d * d;
  }

  void add(const Quadric& o) {
    for (int i = 0; i < 10; ++i) q[i] += o.q[i];
  }

  double evaluate(const Vec3& p) const {
    const double x = p[0], y = p[1], z = p[2];
    return q[0] * x * x + 2 * q[1] * x * y + 2 * q[2] * x * z + 2 * q[3] * x + q[4] * y * y +
           2 * q[5] * y * z + 2 * q[6] * y + q[7] * z * z + 2 * q[8] * z + q[9];
  }
};

inline Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 cross3(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }

// Closest point of p on triangle (a, b, c), returned as barycentric weights
// (w_a, w_b, w_c); also writes the squared distance.
inline std::array<double, 3> closest_point_barycentric(const Vec3& p, const Vec3& a, const Vec3& b,
                                                       const Vec3& c, double* dist_sq) {
  const Vec3 ab = sub3(b, a);
  const Vec3 ac = sub3(c, a);
  const Vec3 ap = sub3(p, a);
  const double d1 = dot3(ab, ap);
  const double d2 = dot3(ac, ap);
  auto finish = [&](double u, double v, double w) {
    const Vec3 q = {a[0] * u + b[0] * v + c[0] * w, a[1] * u + b[1] * v + c[1] * w,
                    a[2] * u + b[2] * v + c[2] * w};
    const Vec3 d = sub3(p, q);
    *dist_sq = dot3(d, d);
    return std::array<double, 3>{u, v, w};
  };
  if (d1 <= 0.0 && d2 <= 0.0) return finish(1, 0, 0);
  const Vec3 bp = sub3(p, b);
  const double d3 = dot3(ab, bp);
  const double d4 = dot3(ac, bp);
  if (d3 >= 0.0 && d4 <= d3) return finish(0, 1, 0);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return finish(1 - v, v, 0);
  }
  const Vec3 cp = sub3(p, c);
  const double d5 = dot3(ab, cp);
  const double d6 = dot3(ac, cp);
  if (d6 >= 0.0 && d5 <= d6) return finish(0, 0, 1);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return finish(1 - w, 0, w);
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return finish(0, 1 - w, w);
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return finish(1 - v - w, v, w);
}

// Mutable collapse state over the original vertex index space.
struct CollapseState {
  const TriMesh* mesh = nullptr;
  std::vector<char> vertex_alive;
  std::vector<std::set<int>> nbr;
  std::vector<Face> faces;
  std::vector<char> face_alive;
  std::vector<std::set<int>> vertex_faces;
  std::vector<Quadric> quadrics;
  int alive_count = 0;

  explicit CollapseState(const TriMesh& m) : mesh(&m) {
    const int n = m.vertex_count();
    vertex_alive.assign(static_cast<std::size_t>(n), 1);
    nbr.resize(static_cast<std::size_t>(n));
    faces = m.faces;
    face_alive.assign(faces.size(), 1);
    vertex_faces.resize(static_cast<std::size_t>(n));
    quadrics.resize(static_cast<std::size_t>(n));
    alive_count = n;
    for (std::size_t fi = 0; fi < faces.size(); ++fi) {
      const Face& f = faces[fi];
      for (int k = 0; k < 3; ++k) {
        vertex_faces[static_cast<std::size_t>(f[static_cast<std::size_t>(k)])].insert(
            static_cast<int>(fi));
        for (int l = k + 1; l < 3; ++l) {
          nbr[static_cast<std::size_t>(f[static_cast<std::size_t>(k)])].insert(
              f[static_cast<std::size_t>(l)]);
          nbr[static_cast<std::size_t>(f[static_cast<std::size_t>(l)])].insert(
              f[static_cast<std::size_t>(k)]);
        }
      }
      const Vec3& a = m.vertices[static_cast<std::size_t>(f[0])];
      const Vec3& b = m.vertices[static_cast<std::size_t>(f[1])];
      const Vec3& c = m.vertices[static_cast<std::size_t>(f[2])];
      const Vec3 nvec = cross3(sub3(b, a), sub3(c, a));
      const double len = norm3(nvec);
      if (len > 1e-300) {
        const Vec3 unit = {nvec[0] / len, nvec[1] / len, nvec[2] / len};
        const double d = -dot3(unit, a);
        const Quadric plane = [&] {
          Quadric qq;
          qq.add_plane(unit[0], unit[1], unit[2], d);
          return qq;
        }();
        for (int k = 0; k < 3; ++k) {
          quadrics[static_cast<std::size_t>(f[static_cast<std::size_t>(k)])].add(plane);
        }
      }
    }
  }

  const Vec3& pos(int v) const { return mesh->vertices[static_cast<std::size_t>(v)]; }

  // Collapse cost and kept endpoint: evaluate the merged quadric at both
  // endpoint positions; ties keep the smaller index.
  std::pair<double, int> edge_cost(int u, int v) const {
    Quadric q = quadrics[static_cast<std::size_t>(u)];
    q.add(quadrics[static_cast<std::size_t>(v)]);
    const double cu = q.evaluate(pos(u));
    const double cv = q.evaluate(pos(v));
    if (cu < cv) return {cu, u};
    if (cv < cu) return {cv, v};
    return {cu, std::min(u, v)};
  }

  // Manifold link condition: the common edge-graph neighbors of (u, v) must be
  // exactly the opposite vertices of the 1 or 2 faces sharing the edge.
  bool collapse_is_valid(int u, int v) const {
    std::set<int> common;
    const std::set<int>& nu = nbr[static_cast<std::size_t>(u)];
    const std::set<int>& nv = nbr[static_cast<std::size_t>(v)];
    for (int x : nu) {
      if (nv.count(x)) common.insert(x);
    }
    std::set<int> opposite;
    for (int fi : vertex_faces[static_cast<std::size_t>(u)]) {
      if (!face_alive[static_cast<std::size_t>(fi)]) continue;
      const Face& f = faces[static_cast<std::size_t>(fi)];
      const bool has_u = f[0] == u || f[1] == u || f[2] == u;
      const bool has_v = f[0] == v || f[1] == v || f[2] == v;
      if (has_u && has_v) {
        for (int k = 0; k < 3; ++k) {
          const int w = f[static_cast<std::size_t>(k)];
          if (w != u && w != v) opposite.insert(w);
        }
      }
    }
    if (opposite.empty() || opposite.size() > 2) return false;
    return common == opposite;
  }

  // Collapses edge (kept, removed): removed's faces and neighbors transfer to
  // kept, degenerate faces die, quadrics accumulate.
  void collapse(int kept, int removed) {
    for (int fi : vertex_faces[static_cast<std::size_t>(removed)]) {
      if (!face_alive[static_cast<std::size_t>(fi)]) continue;
      Face& f = faces[static_cast<std::size_t>(fi)];
      const bool has_kept = f[0] == kept || f[1] == kept || f[2] == kept;
      if (has_kept) {
        face_alive[static_cast<std::size_t>(fi)] = 0;
        for (int k = 0; k < 3; ++k) {
          const int w = f[static_cast<std::size_t>(k)];
          if (w != removed) vertex_faces[static_cast<std::size_t>(w)].erase(fi);
        }
      } else {
        for (int k = 0; k < 3; ++k) {
          if (f[static_cast<std::size_t>(k)] == removed) f[static_cast<std::size_t>(k)] = kept;
        }
        vertex_faces[static_cast<std::size_t>(kept)].insert(fi);
      }
    }
    vertex_faces[static_cast<std::size_t>(removed)].clear();
    for (int n : nbr[static_cast<std::size_t>(removed)]) {
      nbr[static_cast<std::size_t>(n)].erase(removed);
      if (n != kept) {
        nbr[static_cast<std::size_t>(n)].insert(kept);
        nbr[static_cast<std::size_t>(kept)].insert(n);
      }
    }
    nbr[static_cast<std::size_t>(removed)].clear();
    quadrics[static_cast<std::size_t>(kept)].add(quadrics[static_cast<std::size_t>(removed)]);
    vertex_alive[static_cast<std::size_t>(removed)] = 0;
    --alive_count;
  }
};

struct CollapseResult {
  TriMesh coarse;
  std::vector<int> kept_original;   // coarse index -> original fine index, ascending
  std::vector<int> coarse_index;   // original fine index -> coarse index or -1
};

// Greedy quadric-cost collapse down to target vertices. Requires target >= 1;
// target == 1 must be realized by selection instead (no edges remain to
// collapse once faces are gone), handled by the caller.
inline CollapseResult collapse_to(const TriMesh& mesh, int target) {
  CollapseState st(mesh);
  using QueueKey = std::tuple<double, int, int>;  // (cost, min_idx, max_idx)
  std::set<QueueKey> queue;
  std::map<std::pair<int, int>, double> queued_cost;
  auto enqueue = [&](int u, int v) {
    const auto key = std::make_pair(std::min(u, v), std::max(u, v));
    const auto it = queued_cost.find(key);
    if (it != queued_cost.end()) {
      queue.erase({it->second, key.first, key.second});
    }
    const double cost = st.edge_cost(key.first, key.second).first;
    queued_cost[key] = cost;
    queue.insert({cost, key.first, key.second});
  };
  auto dequeue = [&](int u, int v) {
    const auto key = std::make_pair(std::min(u, v), std::max(u, v));
    const auto it = queued_cost.find(key);
    if (it != queued_cost.end()) {
      queue.erase({it->second, key.first, key.second});
      queued_cost.erase(it);
    }
  };
  for (int u = 0; u < mesh.vertex_count(); ++u) {
    for (int v : st.nbr[static_cast<std::size_t>(u)]) {
      if (v > u) enqueue(u, v);
    }
  }
  std::map<std::pair<int, int>, char> blocked;
  while (st.alive_count > target && !queue.empty()) {
    const auto [cost, u, v] = *queue.begin();
    (void)cost;
    if (!st.collapse_is_valid(u, v)) {
      dequeue(u, v);
      blocked[{u, v}] = 1;
      continue;
    }
    const int kept = st.edge_cost(u, v).second;
    const int removed = kept == u ? v : u;
    // Drop queue entries touching the removed vertex before mutating state.
    std::vector<int> removed_nbrs(st.nbr[static_cast<std::size_t>(removed)].begin(),
                                  st.nbr[static_cast<std::size_t>(removed)].end());
    for (int n : removed_nbrs) dequeue(removed, n);
    for (auto it = blocked.begin(); it != blocked.end();) {
      if (it->first.first == removed || it->first.second == removed) {
        it = blocked.erase(it);
      } else {
        ++it;
      }
    }
    st.collapse(kept, removed);
    for (int n : st.nbr[static_cast<std::size_t>(kept)]) enqueue(kept, n);
    // A collapse changes link structure nearby; give blocked edges another try.
    for (const auto& [edge, _] : blocked) enqueue(edge.first, edge.second);
    blocked.clear();
  }
  if (st.alive_count > target) {
    if (st.alive_count > target + 2) {
      std::string edge_name = "none";
      if (!blocked.empty()) {
        edge_name = strfmt("(%d, %d)", blocked.begin()->first.first, blocked.begin()->first.second);
      }
      throw CoarsenError(
          CoarsenErrorKind::collapse_blocked,
          strfmt("collapse exhausted at %d vertices (target %d); blocked edge %s",
                 st.alive_count, target, edge_name.c_str()));
    }
  }
  CollapseResult res;
  res.coarse_index.assign(static_cast<std::size_t>(mesh.vertex_count()), -1);
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    if (st.vertex_alive[static_cast<std::size_t>(i)]) {
      res.coarse_index[static_cast<std::size_t>(i)] = static_cast<int>(res.kept_original.size());
      res.kept_original.push_back(i);
      res.coarse.vertices.push_back(mesh.vertices[static_cast<std::size_t>(i)]);
    }
  }
  std::set<std::tuple<int, int, int>> seen_faces;  // unordered triple dedupe
  for (std::size_t fi = 0; fi < st.faces.size(); ++fi) {
    if (!st.face_alive[fi]) continue;
    const Face& f = st.faces[fi];
    Face cf = {res.coarse_index[static_cast<std::size_t>(f[0])],
               res.coarse_index[static_cast<std::size_t>(f[1])],
               res.coarse_index[static_cast<std::size_t>(f[2])]};
    if (cf[0] == cf[1] || cf[0] == cf[2] || cf[1] == cf[2]) continue;
    std::array<int, 3> sorted = {cf[0], cf[1], cf[2]};
    std::sort(sorted.begin(), sorted.end());
    if (seen_faces.insert({sorted[0], sorted[1], sorted[2]}).second) {
      res.coarse.faces.push_back(cf);
    }
  }
  return res;
}

// Builds the sampling operator for a collapse result: down selects kept
// vertices; up maps removed fine vertices to the barycentric weights of their
// closest coarse triangle (closest coarse vertex when no faces remain).
inline SamplingOperator make_sampler(const TriMesh& fine, const CollapseResult& cr) {
  const int fine_n = fine.vertex_count();
  const int coarse_n = cr.coarse.vertex_count();
  std::vector<SparseTriplet> down_t;
  down_t.reserve(static_cast<std::size_t>(coarse_n));
  for (int c = 0; c < coarse_n; ++c) {
    down_t.push_back({c, cr.kept_original[static_cast<std::size_t>(c)], 1.0});
  }
  std::vector<SparseTriplet> up_t;
  for (int i = 0; i < fine_n; ++i) {
    const int ci = cr.coarse_index[static_cast<std::size_t>(i)];
    if (ci >= 0) {
      up_t.push_back({i, ci, 1.0});
      continue;
    }
    const Vec3& p = fine.vertices[static_cast<std::size_t>(i)];
    if (!cr.coarse.faces.empty()) {
      double best_d = std::numeric_limits<double>::infinity();
      std::array<double, 3> best_b = {1, 0, 0};
      int best_f = -1;
      for (std::size_t fi = 0; fi < cr.coarse.faces.size(); ++fi) {
        const Face& f = cr.coarse.faces[fi];
        double d = 0;
        const std::array<double, 3> b = closest_point_barycentric(
            p, cr.coarse.vertices[static_cast<std::size_t>(f[0])],
            cr.coarse.vertices[static_cast<std::size_t>(f[1])],
            cr.coarse.vertices[static_cast<std::size_t>(f[2])], &d);
        if (d < best_d) {
          best_d = d;
          best_b = b;
          best_f = static_cast<int>(fi);
        }
      }
      const Face& f = cr.coarse.faces[static_cast<std::size_t>(best_f)];
      // Clamp tiny negatives from the closest-point arithmetic and renormalize.
      std::array<double, 3> b = best_b;
      double sum = 0;
      for (double& w : b) {
        if (w < 0) w = 0;
        sum += w;
      }
      std::map<int, double> weights;  // coarse col -> weight, merges repeats
      for (int k = 0; k < 3; ++k) {
        const double w = b[static_cast<std::size_t>(k)] / sum;
        if (w > 0) weights[f[static_cast<std::size_t>(k)]] += w;
      }
      for (const auto& [col, w] : weights) up_t.push_back({i, col, w});
    } else {
      double best_d = std::numeric_limits<double>::infinity();
      int best_c = 0;
      for (int c = 0; c < coarse_n; ++c) {
        const Vec3 d = sub3(p, cr.coarse.vertices[static_cast<std::size_t>(c)]);
        const double dist = dot3(d, d);
        if (dist < best_d) {
          best_d = dist;
          best_c = c;
        }
      }
      up_t.push_back({i, best_c, 1.0});
    }
  }
  SamplingOperator op;
  op.down = SparseMatrix::from_triplets(coarse_n, fine_n, std::move(down_t));
  op.up = SparseMatrix::from_triplets(fine_n, coarse_n, std::move(up_t));
  validate_sampling_operator(op, fine_n, coarse_n);
  return op;
}

}  // namespace detail

struct DecimateResult {
  TriMesh mesh;
  SamplingOperator sampler;
};

// QEM collapse-to-endpoint decimation. Ties in quadric cost break by
// lexicographic (min index, max index) edge order. The result has between
// target_count and target_count + 2 vertices; exhaustion further from the
// target raises collapse_blocked naming a blocked edge.
inline DecimateResult decimate(const TriMesh& mesh, int target_count) {
  validate_mesh(mesh);
  const int n = mesh.vertex_count();
  if (target_count < 4 || target_count >= n) {
    throw CoarsenError(CoarsenErrorKind::invalid_argument,
                       strfmt("target_count %d outside [4, %d)", target_count, n));
  }
  detail::CollapseResult cr = detail::collapse_to(mesh, target_count);
  DecimateResult out;
  out.sampler = detail::make_sampler(mesh, cr);
  out.mesh = std::move(cr.coarse);
  return out;
}

// L+1 meshes (level 0 = input), per-level adjacency (self-looped, symmetric-
// normalized), and L sampling operators (samplers[l] maps level l <-> l+1).
struct MeshHierarchy {
  std::vector<TriMesh> meshes;
  std::vector<NormalizedAdjacency> adjacencies;
  std::vector<SamplingOperator> samplers;

  int levels() const { return static_cast<int>(samplers.size()); }
  int nodes_at(int level) const {
    return meshes[static_cast<std::size_t>(level)].vertex_count();
  }
};

// Builds `levels` coarsening steps at the given factor. Non-terminal targets
// are ceil(N/factor) clamped into [4, N-1] (the collapse loop needs room);
// the final level uses plain ceil, and a final target of 1 is realized by
// selecting the vertex nearest the centroid.
inline MeshHierarchy build_hierarchy(const TriMesh& mesh, int levels, int factor) {
  validate_mesh(mesh);
  if (levels < 1) {
    throw CoarsenError(CoarsenErrorKind::invalid_argument, "levels must be >= 1");
  }
  if (factor < 2) {
    throw CoarsenError(CoarsenErrorKind::invalid_argument, "factor must be >= 2");
  }
  MeshHierarchy h;
  h.meshes.push_back(mesh);
  h.adjacencies.push_back(build_adjacency(mesh, true, true));
  for (int l = 0; l < levels; ++l) {
    const TriMesh& fine = h.meshes.back();
    const int n = fine.vertex_count();
    const int raw = (n + factor - 1) / factor;
    int target = raw;
    if (l + 1 < levels) {
      target = std::max(raw, 4);
      target = std::min(target, n - 1);
    }
    if (target < 1 || target >= n) {
      throw CoarsenError(CoarsenErrorKind::invalid_argument,
                         strfmt("cannot coarsen level %d further: %d -> %d", l, n, target));
    }
    if (target == 1) {
      // Nearest-centroid selection; ties keep the smallest index.
      Vec3 centroid = {0, 0, 0};
      for (const Vec3& v : fine.vertices) {
        centroid[0] += v[0];
        centroid[1] += v[1];
        centroid[2] += v[2];
      }
      for (double& c : centroid) c /= n;
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) {
        const Vec3 d = detail::sub3(fine.vertices[static_cast<std::size_t>(i)], centroid);
        const double dist = detail::dot3(d, d);
        if (dist < best_d) {
          best_d = dist;
          best = i;
        }
      }
      TriMesh coarse;
      coarse.vertices.push_back(fine.vertices[static_cast<std::size_t>(best)]);
      SamplingOperator op;
      op.down = SparseMatrix::from_triplets(1, n, {{0, best, 1.0}});
      std::vector<SparseTriplet> up_t;
      for (int i = 0; i < n; ++i) up_t.push_back({i, 0, 1.0});
      op.up = SparseMatrix::from_triplets(n, 1, std::move(up_t));
      validate_sampling_operator(op, n, 1);
      h.samplers.push_back(std::move(op));
      h.adjacencies.push_back(build_adjacency(coarse, true, true));
      h.meshes.push_back(std::move(coarse));
    } else {
      detail::CollapseResult cr = detail::collapse_to(fine, target);
      h.samplers.push_back(detail::make_sampler(fine, cr));
      h.adjacencies.push_back(build_adjacency(cr.coarse, true, true));
      h.meshes.push_back(std::move(cr.coarse));
    }
    if (h.meshes.back().vertex_count() >= n) {
      throw CoarsenError(CoarsenErrorKind::invalid_argument,
                         strfmt("level %d did not shrink (%d -> %d)", l, n,
                                h.meshes.back().vertex_count()));
    }
  }
  return h;
}

// ---- hierarchy manifest -----------------------------------------------------
//
//   dcgnet-hierarchy v1
//   level <i> nodes <N> obj <relative path>
//   ...
//   down <l>
//   <row> <col> <value>
//   ...
//   end
//   up <l>
//   ...
//   end
//
// Operator values print with %.17g so they reload bit-exact; level meshes are
// OBJ files next to the manifest.

inline void save_hierarchy(const MeshHierarchy& h, const std::string& dir,
                           const std::string& manifest_name = "hierarchy.txt") {
  std::ostringstream out;
  out << "dcgnet-hierarchy v1\n";
  for (std::size_t l = 0; l < h.meshes.size(); ++l) {
    const std::string obj_name = strfmt("level%zu.obj", l);
    save_obj(h.meshes[l], dir + "/" + obj_name);
    out << "level " << l << " nodes " << h.meshes[l].vertex_count() << " obj " << obj_name << "\n";
  }
  for (std::size_t l = 0; l < h.samplers.size(); ++l) {
    out << "down " << l << "\n";
    for (const SparseTriplet& t : h.samplers[l].down.entries) {
      out << t.row << ' ' << t.col << ' ' << strfmt("%.17g", t.value) << "\n";
    }
    out << "end\n";
    out << "up " << l << "\n";
    for (const SparseTriplet& t : h.samplers[l].up.entries) {
      out << t.row << ' ' << t.col << ' ' << strfmt("%.17g", t.value) << "\n";
    }
    out << "end\n";
  }
  write_text_file(dir + "/" + manifest_name, out.str());
}

inline MeshHierarchy load_hierarchy(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                       "cannot open hierarchy manifest: " + manifest_path);
  }
  const std::string dir = [&] {
    const std::size_t slash = manifest_path.find_last_of('/');
    return slash == std::string::npos ? std::string(".") : manifest_path.substr(0, slash);
  }();
  std::string line;
  if (!std::getline(in, line) || trim(line) != "dcgnet-hierarchy v1") {
    throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                       manifest_path + ": missing dcgnet-hierarchy v1 header");
  }
  MeshHierarchy h;
  std::vector<std::pair<int, std::vector<SparseTriplet>>> downs;
  std::vector<std::pair<int, std::vector<SparseTriplet>>> ups;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::vector<std::string> tok = split_ws(t);
    if (tok[0] == "level") {
      if (tok.size() != 6 || tok[2] != "nodes" || tok[4] != "obj") {
        throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                           manifest_path + ": bad level line: " + t);
      }
      long long idx = 0, nodes = 0;
      if (!parse_long(tok[1], &idx) || !parse_long(tok[3], &nodes) ||
          idx != static_cast<long long>(h.meshes.size())) {
        throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                           manifest_path + ": bad level index in: " + t);
      }
      // Coarse levels can legitimately be faceless, hence the lenient reader.
      TriMesh mesh = detail::read_obj_file(dir + "/" + tok[5], /*strict=*/false, nullptr);
      if (mesh.vertex_count() != static_cast<int>(nodes)) {
        throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                           strfmt("%s: level %lld declares %lld nodes but OBJ has %d",
                                  manifest_path.c_str(), idx, nodes, mesh.vertex_count()));
      }
      h.adjacencies.push_back(build_adjacency(mesh, true, true));
      h.meshes.push_back(std::move(mesh));
    } else if (tok[0] == "down" || tok[0] == "up") {
      if (tok.size() != 2) {
        throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                           manifest_path + ": bad sampler header: " + t);
      }
      long long l = 0;
      if (!parse_long(tok[1], &l)) {
        throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                           manifest_path + ": bad sampler level: " + t);
      }
      std::vector<SparseTriplet> triplets;
      bool closed = false;
      while (std::getline(in, line)) {
        const std::string row = trim(line);
        if (row.empty()) continue;
        if (row == "end") {
          closed = true;
          break;
        }
        const std::vector<std::string> rtok = split_ws(row);
        long long r = 0, c = 0;
        double v = 0;
        if (rtok.size() != 3 || !parse_long(rtok[0], &r) || !parse_long(rtok[1], &c) ||
            !parse_double(rtok[2], &v)) {
          throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                             manifest_path + ": bad triplet line: " + row);
        }
        triplets.push_back({static_cast<int>(r), static_cast<int>(c), v});
      }
      if (!closed) {
        throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                           manifest_path + ": sampler block not terminated by end");
      }
      (tok[0] == "down" ? downs : ups).push_back({static_cast<int>(l), std::move(triplets)});
    } else {
      throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                         manifest_path + ": unknown record: " + t);
    }
  }
  if (h.meshes.size() < 2 || downs.size() != ups.size() || downs.size() + 1 != h.meshes.size()) {
    throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                       manifest_path + ": inconsistent level/sampler counts");
  }
  h.samplers.resize(downs.size());
  for (std::size_t i = 0; i < downs.size(); ++i) {
    const int l = downs[i].first;
    if (l < 0 || l >= static_cast<int>(downs.size()) || ups[i].first != l) {
      throw CoarsenError(CoarsenErrorKind::manifest_malformed,
                         manifest_path + ": sampler blocks out of order");
    }
    const int fine_n = h.meshes[static_cast<std::size_t>(l)].vertex_count();
    const int coarse_n = h.meshes[static_cast<std::size_t>(l) + 1].vertex_count();
    SamplingOperator op;
    op.down = SparseMatrix::from_triplets(coarse_n, fine_n, std::move(downs[i].second));
    op.up = SparseMatrix::from_triplets(fine_n, coarse_n, std::move(ups[i].second));
    validate_sampling_operator(op, fine_n, coarse_n);
    h.samplers[static_cast<std::size_t>(l)] = std::move(op);
  }
  return h;
}

}  // namespace dcgnet

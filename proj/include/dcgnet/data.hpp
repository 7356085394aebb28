#pragma once

// Synthetic desk-scale dataset: a programmatic body-like template, smoothly
// deformed and rigidly posed per sample, with noisy coordinates plus random
// projection columns as the network input. Joints come from the landmark
// regressor and a weak-perspective camera, both derived exactly from the
// stored mesh, so every sample file satisfies its consistency invariants
// bit-for-bit after a round trip (matrices are written with %.17g).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcgnet/autodiff.hpp"
#include "dcgnet/coarsen.hpp"
#include "dcgnet/completion.hpp"
#include "dcgnet/losses.hpp"
#include "dcgnet/mesh.hpp"
#include "dcgnet/rng.hpp"
#include "dcgnet/util.hpp"

namespace dcgnet {

enum class DataErrorKind {
  invalid_argument,
  shape_mismatch,
  io_failure,
  format_malformed,
};

class DataError : public std::runtime_error {
 public:
  DataError(DataErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  DataErrorKind kind() const { return kind_; }

 private:
  DataErrorKind kind_;
};

enum class Split { train, val, test, occluded_test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::occluded_test: return "occluded_test";
  }
  return "?";
}

inline Split parse_split(const std::string& name) {
  for (Split s : {Split::train, Split::val, Split::test, Split::occluded_test}) {
    if (name == split_name(s)) return s;
  }
  throw DataError(DataErrorKind::format_malformed, "unknown split name: " + name);
}

struct Sample {
  Tensor input_features;  // N x (3 + k_feat); columns 0..2 are noisy coordinates
  Tensor gt_mesh;         // N x 3
  Tensor gt_joints3d;     // D x 3, exactly regressor * gt_mesh
  Tensor gt_joints2d;     // D x 2, exactly project(gt_joints3d, camera)
  Camera camera;
  std::string id;
};

// One split's index. All paths are relative to the directory holding the
// manifest file, so a dataset directory can be moved or compared wholesale.
struct DatasetManifest {
  std::string template_path;
  std::string hierarchy_path;
  std::string regressor_path;
  std::vector<std::string> sample_paths;
  Split split = Split::train;
  std::uint64_t generator_seed = 0;
};

struct GenerateOptions {
  // Coordinate noise, as a fraction of the template bounding-box diagonal.
  double noise_sigma_fraction = 0.05;
  // Random-projection feature columns appended to the noisy coordinates.
  int k_feat = 16;
  Split split = Split::train;
  std::string template_path = "template.obj";
  std::string hierarchy_path = "hierarchy.txt";
  std::string regressor_path = "regressor.txt";
};

namespace detail {

inline double bbox_diagonal(const TriMesh& mesh) {
  Vec3 lo = {1e300, 1e300, 1e300};
  Vec3 hi = {-1e300, -1e300, -1e300};
  for (const Vec3& v : mesh.vertices) {
    for (int d = 0; d < 3; ++d) {
      lo[static_cast<std::size_t>(d)] = std::min(lo[static_cast<std::size_t>(d)],
                                                 v[static_cast<std::size_t>(d)]);
      hi[static_cast<std::size_t>(d)] = std::max(hi[static_cast<std::size_t>(d)],
                                                 v[static_cast<std::size_t>(d)]);
    }
  }
  double sum = 0.0;
  for (int d = 0; d < 3; ++d) {
    const double e = hi[static_cast<std::size_t>(d)] - lo[static_cast<std::size_t>(d)];
    sum += e * e;
  }
  return std::sqrt(sum);
}

inline void format_matrix(std::ostringstream* out, const char* label, const Tensor& t) {
  (*out) << label << ' ' << t.rows() << ' ' << t.cols() << '\n';
  for (int i = 0; i < t.rows(); ++i) {
    for (int j = 0; j < t.cols(); ++j) {
      if (j) (*out) << ' ';
      (*out) << strfmt("%.17g", t.values()[static_cast<std::size_t>(i) * t.cols() +
                                           static_cast<std::size_t>(j)]);
    }
    (*out) << '\n';
  }
}

}  // namespace detail

inline void save_sample(const Sample& s, const std::string& path) {
  std::ostringstream out;
  out << "dcgnet-sample v1\n";
  out << "id " << s.id << '\n';
  out << "camera " << strfmt("%.17g %.17g %.17g", s.camera.scale, s.camera.translation[0],
                             s.camera.translation[1])
      << '\n';
  detail::format_matrix(&out, "features", s.input_features);
  detail::format_matrix(&out, "gt_mesh", s.gt_mesh);
  detail::format_matrix(&out, "gt_joints3d", s.gt_joints3d);
  detail::format_matrix(&out, "gt_joints2d", s.gt_joints2d);
  write_text_file(path, out.str());
}

namespace detail {

inline std::string next_line(std::istringstream* in, const std::string& path) {
  std::string line;
  if (!std::getline(*in, line)) {
    throw DataError(DataErrorKind::format_malformed, "unexpected end of sample file: " + path);
  }
  return line;
}

inline Tensor parse_matrix(std::istringstream* in, const char* label, const std::string& path) {
  const std::vector<std::string> head = split_ws(next_line(in, path));
  long long rows = 0;
  long long cols = 0;
  if (head.size() != 3 || head[0] != label || !parse_long(head[1], &rows) ||
      !parse_long(head[2], &cols) || rows < 0 || cols <= 0) {
    throw DataError(DataErrorKind::format_malformed,
                    strfmt("expected '%s <rows> <cols>' in %s", label, path.c_str()));
  }
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (long long i = 0; i < rows; ++i) {
    const std::vector<std::string> toks = split_ws(next_line(in, path));
    if (static_cast<long long>(toks.size()) != cols) {
      throw DataError(DataErrorKind::format_malformed,
                      strfmt("row %lld of %s block in %s has %zu fields, expected %lld", i, label,
                             path.c_str(), toks.size(), cols));
    }
    for (const std::string& tok : toks) {
      double v = 0.0;
      if (!parse_double(tok, &v)) {
        throw DataError(DataErrorKind::format_malformed,
                        strfmt("bad number '%s' in %s", tok.c_str(), path.c_str()));
      }
      values.push_back(v);
    }
  }
  return Tensor::constant(static_cast<int>(rows), static_cast<int>(cols), std::move(values));
}

}  // namespace detail

inline Sample load_sample(const std::string& path) {
  std::istringstream in(read_text_file(path));
  if (detail::next_line(&in, path) != "dcgnet-sample v1") {
    throw DataError(DataErrorKind::format_malformed, "missing sample header in " + path);
  }
  Sample s;
  {
    const std::vector<std::string> toks = split_ws(detail::next_line(&in, path));
    if (toks.size() != 2 || toks[0] != "id") {
      throw DataError(DataErrorKind::format_malformed, "missing sample id in " + path);
    }
    s.id = toks[1];
  }
  {
    const std::vector<std::string> toks = split_ws(detail::next_line(&in, path));
    if (toks.size() != 4 || toks[0] != "camera" || !parse_double(toks[1], &s.camera.scale) ||
        !parse_double(toks[2], &s.camera.translation[0]) ||
        !parse_double(toks[3], &s.camera.translation[1])) {
      throw DataError(DataErrorKind::format_malformed, "bad camera line in " + path);
    }
  }
  s.input_features = detail::parse_matrix(&in, "features", path);
  s.gt_mesh = detail::parse_matrix(&in, "gt_mesh", path);
  s.gt_joints3d = detail::parse_matrix(&in, "gt_joints3d", path);
  s.gt_joints2d = detail::parse_matrix(&in, "gt_joints2d", path);
  if (s.gt_mesh.cols() != 3 || s.gt_mesh.rows() != s.input_features.rows() ||
      s.gt_joints3d.cols() != 3 || s.gt_joints2d.cols() != 2 ||
      s.gt_joints2d.rows() != s.gt_joints3d.rows()) {
    throw DataError(DataErrorKind::format_malformed, "inconsistent block shapes in " + path);
  }
  return s;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ostringstream out;
  out << "dcgnet-manifest v1\n";
  out << "split " << split_name(m.split) << '\n';
  out << "seed " << m.generator_seed << '\n';
  out << "template " << m.template_path << '\n';
  out << "hierarchy " << m.hierarchy_path << '\n';
  out << "regressor " << m.regressor_path << '\n';
  for (const std::string& p : m.sample_paths) out << "sample " << p << '\n';
  write_text_file(path, out.str());
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "dcgnet-manifest v1") {
    throw DataError(DataErrorKind::format_malformed, "missing manifest header in " + path);
  }
  DatasetManifest m;
  bool have_split = false;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const std::vector<std::string> toks = split_ws(line);
    if (toks.size() != 2) {
      throw DataError(DataErrorKind::format_malformed,
                      "manifest line is not 'key value': " + line);
    }
    if (toks[0] == "split") {
      m.split = parse_split(toks[1]);
      have_split = true;
    } else if (toks[0] == "seed") {
      char* end = nullptr;
      m.generator_seed = std::strtoull(toks[1].c_str(), &end, 10);
      if (end == nullptr || *end != '\0') {
        throw DataError(DataErrorKind::format_malformed, "bad seed in manifest: " + toks[1]);
      }
    } else if (toks[0] == "template") {
      m.template_path = toks[1];
    } else if (toks[0] == "hierarchy") {
      m.hierarchy_path = toks[1];
    } else if (toks[0] == "regressor") {
      m.regressor_path = toks[1];
    } else if (toks[0] == "sample") {
      m.sample_paths.push_back(toks[1]);
    } else {
      throw DataError(DataErrorKind::format_malformed, "unknown manifest key: " + toks[0]);
    }
  }
  if (!have_split) {
    throw DataError(DataErrorKind::format_malformed, "manifest has no split line: " + path);
  }
  return m;
}

inline std::string manifest_dir(const std::string& manifest_path) {
  const std::string dir = std::filesystem::path(manifest_path).parent_path().string();
  return dir.empty() ? std::string(".") : dir;
}

inline std::vector<Sample> load_manifest_samples(const std::string& manifest_path) {
  const DatasetManifest m = load_manifest(manifest_path);
  const std::string dir = manifest_dir(manifest_path);
  std::vector<Sample> samples;
  samples.reserve(m.sample_paths.size());
  for (const std::string& rel : m.sample_paths) samples.push_back(load_sample(dir + "/" + rel));
  return samples;
}

// Body-like template: an icosphere pushed outward along five limb directions
// (arms, legs, head) while still a unit blob, anisotropically scaled to
// body-ish millimeter proportions, then decimated to about target_vertices.
// Deterministic, no randomness anywhere.
inline TriMesh make_body_template(int target_vertices = 432) {
  if (target_vertices < 8) {
    throw DataError(DataErrorKind::invalid_argument,
                    strfmt("make_body_template: target %d is too small", target_vertices));
  }
  TriMesh mesh = icosphere(3);
  struct Limb {
    Vec3 axis;
    double cos_cut;
    double length;
  };
  const auto unit = [](double x, double y, double z) {
    const double n = std::sqrt(x * x + y * y + z * z);
    return Vec3{x / n, y / n, z / n};
  };
  const std::array<Limb, 5> limbs = {{
      {unit(1.0, 0.15, 0.0), 0.88, 0.9},    // right arm
      {unit(-1.0, 0.15, 0.0), 0.88, 0.9},   // left arm
      {unit(0.35, -1.0, 0.0), 0.93, 1.0},   // right leg
      {unit(-0.35, -1.0, 0.0), 0.93, 1.0},  // left leg
      {unit(0.0, 1.0, 0.0), 0.91, 0.4},     // head
  }};
  for (Vec3& v : mesh.vertices) {
    const Vec3 p = v;
    const double pn = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    for (const Limb& limb : limbs) {
      const double along =
          (p[0] * limb.axis[0] + p[1] * limb.axis[1] + p[2] * limb.axis[2]) / pn;
      const double w = std::clamp((along - limb.cos_cut) / (1.0 - limb.cos_cut), 0.0, 1.0);
      const double push = w * w * limb.length;
      for (int d = 0; d < 3; ++d) v[static_cast<std::size_t>(d)] += limb.axis[static_cast<std::size_t>(d)] * push;
    }
  }
  const Vec3 body_scale = {300.0, 650.0, 200.0};  // millimeters per unit axis
  for (Vec3& v : mesh.vertices) {
    for (int d = 0; d < 3; ++d) v[static_cast<std::size_t>(d)] *= body_scale[static_cast<std::size_t>(d)];
  }
  if (target_vertices >= mesh.vertex_count()) return mesh;
  return decimate(mesh, target_vertices).mesh;
}

namespace detail {

// Smooth low-frequency displacement plus a rigid pose, one sample's worth of
// RNG draws in a pinned order: field coefficients, rigid pose, camera.
struct DeformDraw {
  std::array<std::array<double, 3>, 6> coeff;  // per basis, per output axis
  std::array<double, 6> phase;
  std::array<double, 3> axis;
  double angle = 0.0;
  std::array<double, 3> translation;
  Camera camera;
};

inline DeformDraw draw_deformation(Rng* rng, double deform_scale, double diag) {
  static constexpr double kTau = 6.283185307179586;
  DeformDraw d;
  const double amp = deform_scale * diag / 6.0;
  for (int b = 0; b < 6; ++b) {
    for (int k = 0; k < 3; ++k) {
      d.coeff[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)] =
          rng->uniform(-amp, amp);
    }
    d.phase[static_cast<std::size_t>(b)] = rng->uniform(0.0, kTau);
  }
  double norm = 0.0;
  do {
    for (double& a : d.axis) a = rng->normal();
    norm = std::sqrt(d.axis[0] * d.axis[0] + d.axis[1] * d.axis[1] + d.axis[2] * d.axis[2]);
  } while (norm < 1e-9);
  for (double& a : d.axis) a /= norm;
  d.angle = rng->uniform(-0.45, 0.45);
  for (double& t : d.translation) t = rng->uniform(-50.0, 50.0);
  d.camera.scale = rng->uniform(0.4, 0.6);
  d.camera.translation[0] = rng->uniform(-100.0, 100.0);
  d.camera.translation[1] = rng->uniform(-100.0, 100.0);
  return d;
}

inline std::vector<double> deformed_coords(const TriMesh& tmpl, const DeformDraw& d,
                                           double diag) {
  // Wave vectors along six fixed directions, one period across the body.
  static constexpr double kInvSqrt2 = 0.7071067811865476;
  const std::array<Vec3, 6> dirs = {{{1, 0, 0},
                                     {0, 1, 0},
                                     {0, 0, 1},
                                     {kInvSqrt2, kInvSqrt2, 0},
                                     {0, kInvSqrt2, kInvSqrt2},
                                     {kInvSqrt2, 0, kInvSqrt2}}};
  const double freq = 6.283185307179586 / diag;
  const double c = std::cos(d.angle);
  const double s = std::sin(d.angle);
  std::vector<double> out(tmpl.vertices.size() * 3);
  for (std::size_t i = 0; i < tmpl.vertices.size(); ++i) {
    const Vec3& v = tmpl.vertices[i];
    std::array<double, 3> p = {v[0], v[1], v[2]};
    for (int b = 0; b < 6; ++b) {
      const Vec3& dir = dirs[static_cast<std::size_t>(b)];
      const double arg = freq * (dir[0] * v[0] + dir[1] * v[1] + dir[2] * v[2]) +
                         d.phase[static_cast<std::size_t>(b)];
      const double basis = std::sin(arg);
      for (int k = 0; k < 3; ++k) {
        p[static_cast<std::size_t>(k)] +=
            d.coeff[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)] * basis;
      }
    }
    // Rodrigues rotation about the unit axis, then translation.
    const double dot = d.axis[0] * p[0] + d.axis[1] * p[1] + d.axis[2] * p[2];
    const std::array<double, 3> cross = {d.axis[1] * p[2] - d.axis[2] * p[1],
                                         d.axis[2] * p[0] - d.axis[0] * p[2],
                                         d.axis[0] * p[1] - d.axis[1] * p[0]};
    for (int k = 0; k < 3; ++k) {
      out[i * 3 + static_cast<std::size_t>(k)] =
          p[static_cast<std::size_t>(k)] * c + cross[static_cast<std::size_t>(k)] * s +
          d.axis[static_cast<std::size_t>(k)] * dot * (1.0 - c) +
          d.translation[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

}  // namespace detail

// Writes `count` samples plus the split's manifest into out_dir and returns
// the manifest. The template and the landmark regressor derived from it are
// written alongside (the regressor is derived exactly once, here, so joint
// ground truth never depends on the lossy OBJ round trip). When a hierarchy
// is supplied its finest level must match the template's node count.
inline DatasetManifest generate_dataset(const TriMesh& tmpl, int count, std::uint64_t seed,
                                        double deform_scale, const std::string& out_dir,
                                        const GenerateOptions& opts = {},
                                        const MeshHierarchy* hierarchy = nullptr) {
  validate_mesh(tmpl);
  if (count < 0) {
    throw DataError(DataErrorKind::invalid_argument, strfmt("sample count %d is negative", count));
  }
  if (!(deform_scale >= 0.0) || !std::isfinite(deform_scale)) {
    throw DataError(DataErrorKind::invalid_argument,
                    strfmt("deform scale %g must be finite and >= 0", deform_scale));
  }
  if (!(opts.noise_sigma_fraction >= 0.0) || !std::isfinite(opts.noise_sigma_fraction)) {
    throw DataError(DataErrorKind::invalid_argument, "noise sigma fraction must be >= 0");
  }
  if (opts.k_feat < 0) {
    throw DataError(DataErrorKind::invalid_argument, "k_feat must be >= 0");
  }
  if (hierarchy != nullptr && hierarchy->nodes_at(0) != tmpl.vertex_count()) {
    throw DataError(DataErrorKind::shape_mismatch,
                    strfmt("template has %d vertices but the hierarchy's finest level has %d",
                           tmpl.vertex_count(), hierarchy->nodes_at(0)));
  }

  std::filesystem::create_directories(out_dir);
  const int n = tmpl.vertex_count();
  const double diag = detail::bbox_diagonal(tmpl);
  const double sigma = opts.noise_sigma_fraction * diag;
  const JointRegressor reg = make_landmark_regressor(tmpl);

  save_obj(tmpl, out_dir + "/" + opts.template_path);
  save_regressor(reg, out_dir + "/" + opts.regressor_path);

  // One projection basis per dataset, shared by every sample.
  Rng proj_rng(derive_seed(seed, 1));
  std::vector<double> proj(static_cast<std::size_t>(3) * static_cast<std::size_t>(opts.k_feat));
  for (double& v : proj) v = proj_rng.normal() / std::sqrt(3.0);

  DatasetManifest manifest;
  manifest.template_path = opts.template_path;
  manifest.hierarchy_path = opts.hierarchy_path;
  manifest.regressor_path = opts.regressor_path;
  manifest.split = opts.split;
  manifest.generator_seed = seed;

  const int k_in = 3 + opts.k_feat;
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, 2, static_cast<std::uint64_t>(i)));
    const detail::DeformDraw draw =
        detail::draw_deformation(&rng, deform_scale, diag);
    std::vector<double> mesh_coords = detail::deformed_coords(tmpl, draw, diag);

    std::vector<double> noisy(mesh_coords);
    for (double& v : noisy) v += sigma * rng.normal();

    std::vector<double> feat(static_cast<std::size_t>(n) * static_cast<std::size_t>(k_in));
    for (int r = 0; r < n; ++r) {
      for (int d = 0; d < 3; ++d) {
        feat[static_cast<std::size_t>(r) * k_in + static_cast<std::size_t>(d)] =
            noisy[static_cast<std::size_t>(r) * 3 + static_cast<std::size_t>(d)];
      }
      for (int j = 0; j < opts.k_feat; ++j) {
        double acc = 0.0;
        for (int d = 0; d < 3; ++d) {
          acc += noisy[static_cast<std::size_t>(r) * 3 + static_cast<std::size_t>(d)] *
                 proj[static_cast<std::size_t>(d) * opts.k_feat + static_cast<std::size_t>(j)];
        }
        feat[static_cast<std::size_t>(r) * k_in + 3 + static_cast<std::size_t>(j)] = acc;
      }
    }

    Sample s;
    s.id = strfmt("%s_s%llu_%04d", split_name(opts.split),
                  static_cast<unsigned long long>(seed), i);
    s.camera = draw.camera;
    s.gt_mesh = Tensor::constant(n, 3, std::move(mesh_coords));
    s.input_features = Tensor::constant(n, k_in, std::move(feat));
    {
      NoGradGuard guard;
      s.gt_joints3d = sparse_matmul(reg.matrix, s.gt_mesh);
      s.gt_joints2d = project(s.gt_joints3d, s.camera);
    }
    const std::string file = s.id + ".txt";
    save_sample(s, out_dir + "/" + file);
    manifest.sample_paths.push_back(file);
  }

  save_manifest(manifest, out_dir + "/" + strfmt("manifest_%s.txt", split_name(opts.split)));
  return manifest;
}

// Copies the test split with one contiguous patch of input feature rows
// zeroed per sample (round(mask_fraction * N) rows); ground truth is left
// untouched. New files land next to the source manifest with an _occ suffix.
inline DatasetManifest generate_occluded_split(const std::string& test_manifest_path,
                                               double mask_fraction) {
  if (!(mask_fraction > 0.0) || !(mask_fraction < 1.0)) {
    throw DataError(DataErrorKind::invalid_argument,
                    strfmt("mask fraction %g outside (0, 1)", mask_fraction));
  }
  const DatasetManifest src = load_manifest(test_manifest_path);
  if (src.split != Split::test) {
    throw DataError(DataErrorKind::invalid_argument,
                    strfmt("occluded split copies the test split, got %s",
                           split_name(src.split)));
  }
  const std::string dir = manifest_dir(test_manifest_path);
  const TriMesh tmpl = load_obj(dir + "/" + src.template_path);
  const SparseMatrix adjacency = build_adjacency(tmpl, false, false).matrix;

  DatasetManifest out = src;
  out.split = Split::occluded_test;
  out.sample_paths.clear();

  for (std::size_t i = 0; i < src.sample_paths.size(); ++i) {
    Sample s = load_sample(dir + "/" + src.sample_paths[i]);
    const int n = s.input_features.rows();
    MaskSpec spec;
    spec.c = static_cast<int>(std::lround(mask_fraction * n));
    spec.seed = derive_seed(src.generator_seed, 3, static_cast<std::uint64_t>(i));
    spec.mode = MaskMode::contiguous_patch;
    {
      NoGradGuard guard;
      s.input_features =
          apply_mask(s.input_features, make_mask(spec, n, s.input_features.cols(), &adjacency));
    }
    s.id += "_occ";
    const std::string file = s.id + ".txt";
    save_sample(s, dir + "/" + file);
    out.sample_paths.push_back(file);
  }

  save_manifest(out, dir + "/manifest_occluded_test.txt");
  return out;
}

}  // namespace dcgnet

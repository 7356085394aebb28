#pragma once

// Two-phase optimization: masked-completion pretraining, then supervised
// training on the weighted vertex/joint losses. A "batch" is gradient
// accumulation over batch_size per-sample losses (each scaled by 1/batch)
// followed by one Adam update; there is no batched tensor dimension.
//
// Checkpoints round-trip bit-exactly: a text header carries the config
// snapshot and a name/shape/offset manifest, followed by raw little-endian
// 64-bit float blocks (parameter values, then first and second moments when
// optimizer state is present).
//
// Every random draw is derived from (config.seed, phase tag, step or epoch),
// never from a stream that spans updates. Restoring parameters, moments and
// the step counter therefore reproduces an uninterrupted run bit for bit.

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcgnet/autodiff.hpp"
#include "dcgnet/completion.hpp"
#include "dcgnet/data.hpp"
#include "dcgnet/losses.hpp"
#include "dcgnet/metrics.hpp"
#include "dcgnet/network.hpp"
#include "dcgnet/rng.hpp"
#include "dcgnet/util.hpp"

namespace dcgnet {

enum class TrainErrorKind {
  invalid_argument,
  shape_mismatch,
  io_failure,
  format_malformed,
};

class TrainError : public std::runtime_error {
 public:
  TrainError(TrainErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  TrainErrorKind kind() const { return kind_; }

 private:
  TrainErrorKind kind_;
};

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int pretrain_steps = 2000;
  int main_epochs = 20;
  // Vertices zeroed per completion mask. The default matches the full-body
  // default template at the standard masking ratio.
  int mask_count = 50;
  std::uint64_t seed = 1;
  LossWeights loss_weights;
};

// Rates must be strictly positive and betas must sit inside (0, 1); step and
// mask counts only need to be non-negative, since zero-step pretraining and
// unmasked completion are both meaningful configurations.
inline std::vector<std::string> train_config_violations(const TrainConfig& c) {
  std::vector<std::string> out;
  if (c.batch_size <= 0) out.push_back(strfmt("batch_size must be positive, got %d", c.batch_size));
  if (!(c.learning_rate > 0.0)) {
    out.push_back(strfmt("learning_rate must be positive, got %g", c.learning_rate));
  }
  if (!(c.adam_beta1 > 0.0 && c.adam_beta1 < 1.0)) {
    out.push_back(strfmt("adam_beta1 must be in (0, 1), got %g", c.adam_beta1));
  }
  if (!(c.adam_beta2 > 0.0 && c.adam_beta2 < 1.0)) {
    out.push_back(strfmt("adam_beta2 must be in (0, 1), got %g", c.adam_beta2));
  }
  if (!(c.adam_eps > 0.0)) out.push_back(strfmt("adam_eps must be positive, got %g", c.adam_eps));
  if (c.pretrain_steps < 0) {
    out.push_back(strfmt("pretrain_steps must be non-negative, got %d", c.pretrain_steps));
  }
  if (c.main_epochs < 0) {
    out.push_back(strfmt("main_epochs must be non-negative, got %d", c.main_epochs));
  }
  if (c.mask_count < 0) {
    out.push_back(strfmt("mask_count must be non-negative, got %d", c.mask_count));
  }
  if (!(c.loss_weights.vertex >= 0.0 && c.loss_weights.joint3d >= 0.0 &&
        c.loss_weights.joint2d >= 0.0)) {
    out.push_back(strfmt("loss weights must be non-negative, got %g %g %g", c.loss_weights.vertex,
                         c.loss_weights.joint3d, c.loss_weights.joint2d));
  }
  return out;
}

inline void validate_train_config(const TrainConfig& c) {
  const std::vector<std::string> bad = train_config_violations(c);
  if (bad.empty()) return;
  std::string msg = "invalid train config:";
  for (const std::string& b : bad) msg += " " + b + ";";
  msg.pop_back();
  throw TrainError(TrainErrorKind::invalid_argument, msg);
}

inline std::vector<std::string> train_config_lines(const TrainConfig& c) {
  return {
      strfmt("batch_size = %d", c.batch_size),
      strfmt("learning_rate = %.17g", c.learning_rate),
      strfmt("adam_beta1 = %.17g", c.adam_beta1),
      strfmt("adam_beta2 = %.17g", c.adam_beta2),
      strfmt("adam_eps = %.17g", c.adam_eps),
      strfmt("pretrain_steps = %d", c.pretrain_steps),
      strfmt("main_epochs = %d", c.main_epochs),
      strfmt("mask_count = %d", c.mask_count),
      strfmt("seed = %llu", static_cast<unsigned long long>(c.seed)),
      strfmt("loss_weight_vertex = %.17g", c.loss_weights.vertex),
      strfmt("loss_weight_joint3d = %.17g", c.loss_weights.joint3d),
      strfmt("loss_weight_joint2d = %.17g", c.loss_weights.joint2d),
  };
}

struct AdamState {
  std::int64_t step = 0;                  // completed updates
  std::vector<std::vector<double>> m;     // first moments, parallel to params
  std::vector<std::vector<double>> v;     // second moments
  bool has_moments() const { return !m.empty(); }
};

// One bias-corrected Adam update:
//   m = b1*m + (1-b1)*g ; v = b2*v + (1-b2)*g*g
//   mhat = m/(1-b1^t)   ; vhat = v/(1-b2^t)
//   p  -= lr * mhat / (sqrt(vhat) + eps)
// Moments are created lazily on the first call and must keep their shapes
// afterwards.
inline void adam_step(std::vector<NamedParam>& params,
                      const std::vector<std::vector<double>>& grads, AdamState* state,
                      const TrainConfig& config) {
  if (state == nullptr) {
    throw TrainError(TrainErrorKind::invalid_argument, "adam_step: state is null");
  }
  validate_train_config(config);
  if (grads.size() != params.size()) {
    throw TrainError(TrainErrorKind::shape_mismatch,
                     strfmt("adam_step: %zu gradient blocks for %zu parameters", grads.size(),
                            params.size()));
  }
  if (!state->has_moments()) {
    state->m.resize(params.size());
    state->v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state->m[i].assign(params[i].tensor.values().size(), 0.0);
      state->v[i].assign(params[i].tensor.values().size(), 0.0);
    }
  }
  if (state->m.size() != params.size() || state->v.size() != params.size()) {
    throw TrainError(TrainErrorKind::shape_mismatch,
                     strfmt("adam_step: state holds %zu moment blocks for %zu parameters",
                            state->m.size(), params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].tensor.values().size();
    if (grads[i].size() != n || state->m[i].size() != n || state->v[i].size() != n) {
      throw TrainError(TrainErrorKind::shape_mismatch,
                       strfmt("adam_step: size mismatch at parameter %s (values %zu, grad %zu, "
                              "moments %zu/%zu)",
                              params[i].name.c_str(), n, grads[i].size(), state->m[i].size(),
                              state->v[i].size()));
    }
  }
  ++state->step;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state->step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state->step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double>& p = params[i].tensor.mutable_values();
    std::vector<double>& m = state->m[i];
    std::vector<double>& v = state->v[i];
    const std::vector<double>& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
    }
  }
}

// Gradients accumulated by backward(), as plain blocks parallel to params.
// A parameter never reached by backward has an empty grad; read it as zeros.
inline std::vector<std::vector<double>> collect_grads(const std::vector<NamedParam>& params) {
  std::vector<std::vector<double>> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::vector<double>& g = params[i].tensor.grad();
    if (g.empty()) {
      out[i].assign(params[i].tensor.values().size(), 0.0);
    } else {
      out[i] = g;
    }
  }
  return out;
}

inline void zero_param_grads(std::vector<NamedParam>& params) {
  for (NamedParam& p : params) p.tensor.zero_grad();
}

struct Checkpoint {
  int format_version = 1;
  std::vector<std::string> config_lines;
  std::vector<std::string> names;
  std::vector<std::array<int, 2>> shapes;
  std::vector<std::vector<double>> values;
  AdamState optimizer;  // moments empty when no optimizer state was captured
};

inline Checkpoint make_checkpoint(const DCGNet& net, const TrainConfig& config,
                                  const AdamState* opt = nullptr) {
  Checkpoint ckpt;
  ckpt.config_lines = train_config_lines(config);
  const std::vector<NamedParam> params = net.parameters();
  ckpt.names.reserve(params.size());
  ckpt.shapes.reserve(params.size());
  ckpt.values.reserve(params.size());
  for (const NamedParam& p : params) {
    ckpt.names.push_back(p.name);
    ckpt.shapes.push_back({p.tensor.rows(), p.tensor.cols()});
    ckpt.values.push_back(p.tensor.values());
  }
  if (opt != nullptr && opt->has_moments()) {
    if (opt->m.size() != params.size() || opt->v.size() != params.size()) {
      throw TrainError(TrainErrorKind::shape_mismatch,
                       strfmt("make_checkpoint: %zu moment blocks for %zu parameters",
                              opt->m.size(), params.size()));
    }
    ckpt.optimizer = *opt;
  } else if (opt != nullptr) {
    ckpt.optimizer.step = opt->step;
  }
  return ckpt;
}

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blocks are raw little-endian float64");

inline void append_block(std::string* blob, const std::vector<double>& block) {
  const std::size_t at = blob->size();
  blob->resize(at + block.size() * sizeof(double));
  std::memcpy(blob->data() + at, block.data(), block.size() * sizeof(double));
}

inline std::vector<double> read_block(const std::string& blob, std::int64_t offset,
                                      std::size_t count, const std::string& path) {
  const std::size_t bytes = count * sizeof(double);
  if (offset < 0 || static_cast<std::size_t>(offset) + bytes > blob.size()) {
    throw TrainError(TrainErrorKind::format_malformed,
                     strfmt("checkpoint %s: block at offset %lld overruns %zu binary bytes",
                            path.c_str(), static_cast<long long>(offset), blob.size()));
  }
  std::vector<double> out(count);
  std::memcpy(out.data(), blob.data() + offset, bytes);
  return out;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  if (ckpt.names.size() != ckpt.shapes.size() || ckpt.names.size() != ckpt.values.size()) {
    throw TrainError(TrainErrorKind::shape_mismatch, "save_checkpoint: ragged tensor lists");
  }
  const bool moments = ckpt.optimizer.has_moments();
  if (moments && (ckpt.optimizer.m.size() != ckpt.names.size() ||
                  ckpt.optimizer.v.size() != ckpt.names.size())) {
    throw TrainError(TrainErrorKind::shape_mismatch,
                     "save_checkpoint: moment blocks do not match tensor list");
  }
  for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
    const std::size_t n = static_cast<std::size_t>(ckpt.shapes[i][0]) *
                          static_cast<std::size_t>(ckpt.shapes[i][1]);
    if (ckpt.values[i].size() != n ||
        (moments && (ckpt.optimizer.m[i].size() != n || ckpt.optimizer.v[i].size() != n))) {
      throw TrainError(TrainErrorKind::shape_mismatch,
                       strfmt("save_checkpoint: tensor %s does not match its %dx%d shape",
                              ckpt.names[i].c_str(), ckpt.shapes[i][0], ckpt.shapes[i][1]));
    }
  }

  std::string blob;
  std::vector<std::array<std::int64_t, 3>> offsets(ckpt.names.size(), {-1, -1, -1});
  for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
    offsets[i][0] = static_cast<std::int64_t>(blob.size());
    detail::append_block(&blob, ckpt.values[i]);
  }
  if (moments) {
    for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
      offsets[i][1] = static_cast<std::int64_t>(blob.size());
      detail::append_block(&blob, ckpt.optimizer.m[i]);
    }
    for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
      offsets[i][2] = static_cast<std::int64_t>(blob.size());
      detail::append_block(&blob, ckpt.optimizer.v[i]);
    }
  }

  std::string head;
  head += strfmt("dcgnet-checkpoint v%d\n", ckpt.format_version);
  head += strfmt("step %lld\n", static_cast<long long>(ckpt.optimizer.step));
  head += strfmt("config %zu\n", ckpt.config_lines.size());
  for (const std::string& line : ckpt.config_lines) head += line + "\n";
  head += strfmt("tensors %zu\n", ckpt.names.size());
  for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
    head += strfmt("%s %d %d %lld %lld %lld\n", ckpt.names[i].c_str(), ckpt.shapes[i][0],
                   ckpt.shapes[i][1], static_cast<long long>(offsets[i][0]),
                   static_cast<long long>(offsets[i][1]), static_cast<long long>(offsets[i][2]));
  }
  head += strfmt("binary %zu\n", blob.size());

  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw TrainError(TrainErrorKind::io_failure, "cannot open for write: " + path);
  }
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  out.flush();
  if (!out.good()) {
    throw TrainError(TrainErrorKind::io_failure, "write failed: " + path);
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw TrainError(TrainErrorKind::io_failure, "cannot open for read: " + path);
  }
  auto fail = [&path](const std::string& what) {
    throw TrainError(TrainErrorKind::format_malformed,
                     strfmt("checkpoint %s: %s", path.c_str(), what.c_str()));
  };
  auto next_line = [&in, &fail]() {
    std::string line;
    if (!std::getline(in, line)) fail("truncated header");
    return line;
  };
  auto counted_line = [&next_line, &fail](const char* key) {
    const std::vector<std::string> toks = split_ws(next_line());
    long long count = 0;
    if (toks.size() != 2 || toks[0] != key || !parse_long(toks[1], &count) || count < 0) {
      fail(strfmt("expected '%s <count>' line", key));
    }
    return count;
  };

  Checkpoint ckpt;
  {
    const std::vector<std::string> head = split_ws(next_line());
    if (head.size() != 2 || head[0] != "dcgnet-checkpoint") fail("bad magic line");
    if (head[1] != "v1") fail("unsupported version " + head[1]);
    ckpt.format_version = 1;
  }
  ckpt.optimizer.step = counted_line("step");
  {
    const long long count = counted_line("config");
    ckpt.config_lines.reserve(static_cast<std::size_t>(count));
    for (long long i = 0; i < count; ++i) ckpt.config_lines.push_back(next_line());
  }
  std::vector<std::array<std::int64_t, 3>> offsets;
  {
    const long long count = counted_line("tensors");
    for (long long i = 0; i < count; ++i) {
      const std::vector<std::string> t = split_ws(next_line());
      long long rows = 0;
      long long cols = 0;
      long long off0 = 0;
      long long off1 = 0;
      long long off2 = 0;
      if (t.size() != 6 || !parse_long(t[1], &rows) || !parse_long(t[2], &cols) ||
          !parse_long(t[3], &off0) || !parse_long(t[4], &off1) || !parse_long(t[5], &off2)) {
        fail(strfmt("bad manifest row %lld", i));
      }
      if (rows <= 0 || cols <= 0) fail("non-positive tensor shape for " + t[0]);
      ckpt.names.push_back(t[0]);
      ckpt.shapes.push_back({static_cast<int>(rows), static_cast<int>(cols)});
      offsets.push_back({static_cast<std::int64_t>(off0), static_cast<std::int64_t>(off1),
                         static_cast<std::int64_t>(off2)});
    }
  }
  std::string blob;
  {
    const long long bytes = counted_line("binary");
    blob.resize(static_cast<std::size_t>(bytes));
    in.read(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (in.gcount() != static_cast<std::streamsize>(blob.size())) fail("truncated binary section");
  }

  const bool moments = !offsets.empty() && offsets[0][1] >= 0;
  if (moments) {
    ckpt.optimizer.m.reserve(offsets.size());
    ckpt.optimizer.v.reserve(offsets.size());
  }
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    const std::size_t n = static_cast<std::size_t>(ckpt.shapes[i][0]) *
                          static_cast<std::size_t>(ckpt.shapes[i][1]);
    ckpt.values.push_back(detail::read_block(blob, offsets[i][0], n, path));
    if (moments != (offsets[i][1] >= 0 && offsets[i][2] >= 0)) {
      fail("moment offsets present for only part of the manifest");
    }
    if (moments) {
      ckpt.optimizer.m.push_back(detail::read_block(blob, offsets[i][1], n, path));
      ckpt.optimizer.v.push_back(detail::read_block(blob, offsets[i][2], n, path));
    }
  }
  return ckpt;
}

// Copies checkpoint values into the network. The parameter lists must agree
// exactly in names, order and shapes; nothing is remapped.
inline void load_parameters(DCGNet* net, const Checkpoint& ckpt) {
  if (net == nullptr) {
    throw TrainError(TrainErrorKind::invalid_argument, "load_parameters: net is null");
  }
  std::vector<NamedParam> params = net->parameters();
  if (params.size() != ckpt.names.size()) {
    throw TrainError(TrainErrorKind::shape_mismatch,
                     strfmt("load_parameters: checkpoint has %zu tensors, network has %zu",
                            ckpt.names.size(), params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != ckpt.names[i]) {
      throw TrainError(TrainErrorKind::shape_mismatch,
                       strfmt("load_parameters: tensor %zu is %s in the checkpoint but %s in "
                              "the network",
                              i, ckpt.names[i].c_str(), params[i].name.c_str()));
    }
    if (params[i].tensor.rows() != ckpt.shapes[i][0] ||
        params[i].tensor.cols() != ckpt.shapes[i][1]) {
      throw TrainError(TrainErrorKind::shape_mismatch,
                       strfmt("load_parameters: %s is %dx%d in the checkpoint but %dx%d in the "
                              "network",
                              params[i].name.c_str(), ckpt.shapes[i][0], ckpt.shapes[i][1],
                              params[i].tensor.rows(), params[i].tensor.cols()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].tensor.mutable_values() = ckpt.values[i];
  }
}

inline AdamState optimizer_state(const Checkpoint& ckpt) {
  AdamState s;
  s.step = ckpt.optimizer.step;
  s.m = ckpt.optimizer.m;
  s.v = ckpt.optimizer.v;
  return s;
}

// The two splits the training loops consume, plus the regressor used for the
// joint losses and for validation metrics.
struct TrainData {
  std::vector<Sample> train;
  std::vector<Sample> val;
  JointRegressor regressor;
};

inline TrainData load_train_data(const std::string& dataset_dir) {
  const std::string train_manifest = dataset_dir + "/manifest_train.txt";
  if (!std::filesystem::exists(train_manifest)) {
    throw TrainError(TrainErrorKind::io_failure, "missing train manifest: " + train_manifest);
  }
  TrainData data;
  const DatasetManifest m = load_manifest(train_manifest);
  data.train = load_manifest_samples(train_manifest);
  data.regressor = load_regressor(dataset_dir + "/" + m.regressor_path);
  const std::string val_manifest = dataset_dir + "/manifest_val.txt";
  if (std::filesystem::exists(val_manifest)) {
    data.val = load_manifest_samples(val_manifest);
  }
  return data;
}

inline EvalReport evaluate_split(const DCGNet& net, const std::vector<Sample>& samples,
                                 const JointRegressor& regressor,
                                 double pck_threshold = kDefaultPckThreshold) {
  if (samples.empty()) {
    throw TrainError(TrainErrorKind::invalid_argument, "evaluate_split: no samples");
  }
  NoGradGuard guard;
  std::vector<PerSampleEval> evals;
  evals.reserve(samples.size());
  for (const Sample& s : samples) {
    const Tensor pred_mesh = net.forward(s.input_features);
    const Tensor pred_joints = regress_joints(pred_mesh, regressor);
    evals.push_back(evaluate_sample(pred_joints, s.gt_joints3d, s.id, pck_threshold));
  }
  return make_report(std::move(evals));
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline std::ofstream open_log(const std::string& dir, const char* name, const char* header) {
  std::ofstream log;
  if (dir.empty()) return log;
  std::filesystem::create_directories(dir);
  log.open(dir + "/" + name);
  if (!log) {
    throw TrainError(TrainErrorKind::io_failure,
                     strfmt("cannot open for write: %s/%s", dir.c_str(), name));
  }
  log << header << "\n";
  return log;
}

}  // namespace detail

// Masked-completion pretraining. Each step draws batch_size training samples
// with replacement, masks mask_count vertices per sample, accumulates the
// gradient of the mean completion loss and applies one Adam update. Sample
// indices and mask seeds are derived per step, so a checkpoint taken after
// any step resumes bit-identically to the uninterrupted run.
inline Checkpoint pretrain(DCGNet* net, const TrainData& data, const TrainConfig& config,
                           const std::string& out_dir = std::string(),
                           std::vector<double>* loss_trace = nullptr,
                           const Checkpoint* resume = nullptr) {
  if (net == nullptr) {
    throw TrainError(TrainErrorKind::invalid_argument, "pretrain: net is null");
  }
  validate_train_config(config);
  if (data.train.empty()) {
    throw TrainError(TrainErrorKind::invalid_argument, "pretrain: train split is empty");
  }
  if (loss_trace != nullptr) loss_trace->clear();

  std::vector<NamedParam> params = net->parameters();
  AdamState state;
  if (resume != nullptr) {
    load_parameters(net, *resume);
    state = optimizer_state(*resume);
    if (state.step > config.pretrain_steps) {
      throw TrainError(TrainErrorKind::invalid_argument,
                       strfmt("pretrain: checkpoint is at step %lld, past pretrain_steps %d",
                              static_cast<long long>(state.step), config.pretrain_steps));
    }
  }

  std::ofstream log = detail::open_log(out_dir, "pretrain_log.csv", "step,completion,seconds");
  const auto start = std::chrono::steady_clock::now();
  const int n = static_cast<int>(data.train.size());
  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);

  for (std::int64_t step = state.step + 1; step <= config.pretrain_steps; ++step) {
    zero_param_grads(params);
    double batch_loss = 0.0;
    Rng pick(derive_seed(config.seed, 21, static_cast<std::uint64_t>(step)));
    for (int b = 0; b < config.batch_size; ++b) {
      const Sample& s = data.train[static_cast<std::size_t>(pick.uniform_int(n))];
      MaskSpec spec;
      spec.c = config.mask_count;
      spec.seed = derive_seed(config.seed, 22,
                              static_cast<std::uint64_t>(step - 1) *
                                      static_cast<std::uint64_t>(config.batch_size) +
                                  static_cast<std::uint64_t>(b));
      spec.mode = MaskMode::uniform_random;
      const Tensor loss = scale(completion_step(*net, s.input_features, spec), inv_batch);
      backward(loss);
      batch_loss += loss.values()[0];
    }
    adam_step(params, collect_grads(params), &state, config);
    if (loss_trace != nullptr) loss_trace->push_back(batch_loss);
    if (log.is_open()) {
      log << strfmt("%lld,%.17g,%.3f", static_cast<long long>(step), batch_loss,
                    detail::seconds_since(start))
          << "\n";
    }
    log_debug(strfmt("pretrain step %lld loss %.6g", static_cast<long long>(step), batch_loss));
  }

  if (log.is_open() && !log.good()) {
    throw TrainError(TrainErrorKind::io_failure, "write failed: " + out_dir + "/pretrain_log.csv");
  }
  Checkpoint ckpt = make_checkpoint(*net, config, &state);
  if (!out_dir.empty()) save_checkpoint(ckpt, out_dir + "/pretrain.ckpt");
  return ckpt;
}

enum class InitMode {
  parameters_only,  // load checkpoint values, start a fresh optimizer
  full_state,       // restore values, moments and step counter (resume)
};

// Supervised training on the weighted total loss. Epochs shuffle the train
// split with an epoch-derived seed and walk it in batches (the last batch may
// be short; its loss is averaged over its actual size). The val split is
// evaluated before epoch 1 and after every epoch, and the checkpoint with the
// lowest val MPJPE is returned, earliest epoch winning ties.
//
// init with parameters_only is the pretraining handoff. full_state resumes an
// interrupted run from an epoch boundary and is bit-identical to never having
// stopped.
inline Checkpoint train_main(DCGNet* net, const TrainData& data, const TrainConfig& config,
                             const Checkpoint* init = nullptr,
                             InitMode mode = InitMode::parameters_only,
                             const std::string& out_dir = std::string(),
                             std::vector<EvalReport>* eval_trace = nullptr) {
  if (net == nullptr) {
    throw TrainError(TrainErrorKind::invalid_argument, "train_main: net is null");
  }
  validate_train_config(config);
  if (data.train.empty()) {
    throw TrainError(TrainErrorKind::invalid_argument, "train_main: train split is empty");
  }
  if (data.val.empty()) {
    throw TrainError(TrainErrorKind::invalid_argument, "train_main: val split is empty");
  }
  if (eval_trace != nullptr) eval_trace->clear();

  std::vector<NamedParam> params = net->parameters();
  AdamState state;
  int start_epoch = 0;
  const int n = static_cast<int>(data.train.size());
  const std::int64_t batches_per_epoch =
      (static_cast<std::int64_t>(n) + config.batch_size - 1) / config.batch_size;
  if (init != nullptr) {
    load_parameters(net, *init);
    if (mode == InitMode::full_state) {
      state = optimizer_state(*init);
      if (state.step % batches_per_epoch != 0) {
        throw TrainError(TrainErrorKind::invalid_argument,
                         strfmt("train_main: checkpoint step %lld is not an epoch boundary "
                                "(%lld batches per epoch)",
                                static_cast<long long>(state.step),
                                static_cast<long long>(batches_per_epoch)));
      }
      start_epoch = static_cast<int>(state.step / batches_per_epoch);
      if (start_epoch > config.main_epochs) {
        throw TrainError(TrainErrorKind::invalid_argument,
                         strfmt("train_main: checkpoint is at epoch %d, past main_epochs %d",
                                start_epoch, config.main_epochs));
      }
    }
  }

  std::ofstream train_log =
      detail::open_log(out_dir, "train_log.csv", "step,vertex,joint3d,joint2d,total,seconds");
  std::ofstream eval_log =
      detail::open_log(out_dir, "eval_log.csv", "epoch,mpjpe,reconst_error,pck,auc");
  const auto start = std::chrono::steady_clock::now();

  double best_mpjpe = std::numeric_limits<double>::infinity();
  Checkpoint best;
  auto run_eval = [&](int epoch) {
    const EvalReport report = evaluate_split(*net, data.val, data.regressor);
    if (eval_trace != nullptr) eval_trace->push_back(report);
    if (eval_log.is_open()) {
      eval_log << strfmt("%d,%.17g,%.17g,%.17g,%.17g", epoch, report.mpjpe, report.reconst_error,
                         report.pck, report.auc)
               << "\n";
    }
    if (report.mpjpe < best_mpjpe) {
      best_mpjpe = report.mpjpe;
      best = make_checkpoint(*net, config, &state);
    }
    log_info(strfmt("epoch %d val mpjpe %.6g", epoch, report.mpjpe));
  };

  run_eval(start_epoch);
  for (int epoch = start_epoch + 1; epoch <= config.main_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, 31, static_cast<std::uint64_t>(epoch)));
    const std::vector<int> order = shuffle_rng.permutation(n);
    for (int at = 0; at < n; at += config.batch_size) {
      const int bn = std::min(config.batch_size, n - at);
      const double inv = 1.0 / static_cast<double>(bn);
      zero_param_grads(params);
      double sums[4] = {0.0, 0.0, 0.0, 0.0};
      for (int j = 0; j < bn; ++j) {
        const Sample& s = data.train[static_cast<std::size_t>(order[static_cast<std::size_t>(at + j)])];
        const Tensor pred = net->forward(s.input_features);
        const LossTerms terms = total_loss(pred, s.gt_mesh, s.gt_joints3d, s.gt_joints2d,
                                           data.regressor, s.camera, config.loss_weights);
        backward(scale(terms.total, inv));
        sums[0] += terms.vertex.values()[0] * inv;
        sums[1] += terms.joint3d.values()[0] * inv;
        sums[2] += terms.joint2d.values()[0] * inv;
        sums[3] += terms.total.values()[0] * inv;
      }
      adam_step(params, collect_grads(params), &state, config);
      if (train_log.is_open()) {
        train_log << strfmt("%lld,%.17g,%.17g,%.17g,%.17g,%.3f",
                            static_cast<long long>(state.step), sums[0], sums[1], sums[2], sums[3],
                            detail::seconds_since(start))
                  << "\n";
      }
    }
    run_eval(epoch);
    if (!out_dir.empty()) {
      save_checkpoint(make_checkpoint(*net, config, &state), out_dir + "/last.ckpt");
    }
  }

  if ((train_log.is_open() && !train_log.good()) || (eval_log.is_open() && !eval_log.good())) {
    throw TrainError(TrainErrorKind::io_failure, "write failed under " + out_dir);
  }
  if (!out_dir.empty()) save_checkpoint(best, out_dir + "/best.ckpt");
  return best;
}

}  // namespace dcgnet

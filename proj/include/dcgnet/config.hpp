#pragma once

// Run configuration for the command-line tool: every TrainConfig field plus
// paths, architecture knobs and data-generation settings, read from a flat
// "key = value" text file. No sections, one key per line, '#' starts a
// comment line. Every key has a default, so an empty file is a valid config.
// Unknown keys, bad values and duplicates are all reported together.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcgnet/completion.hpp"
#include "dcgnet/data.hpp"
#include "dcgnet/train.hpp"
#include "dcgnet/util.hpp"

namespace dcgnet {

enum class ConfigErrorKind {
  invalid_argument,
  io_failure,
  format_malformed,
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(ConfigErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ConfigErrorKind kind() const { return kind_; }

 private:
  ConfigErrorKind kind_;
};

struct RunConfig {
  TrainConfig train;

  // Paths. Empty template_path means the built-in body template; empty
  // hierarchy_path means "<dataset_dir>/hierarchy.txt"; empty eval_checkpoint
  // means "<output_dir>/best.ckpt".
  std::string template_path;
  std::string hierarchy_path;
  std::string dataset_dir = "data";
  std::string output_dir = "out";
  std::string init_checkpoint;
  std::string eval_checkpoint;
  std::string eval_split = "test";

  // Architecture.
  int levels = 5;
  int factor = 4;
  int units_per_level = 2;
  int k_feat = 16;
  bool adaptive_adjacency = true;
  bool use_nonlocal = true;

  // Data generation.
  int train_count = 64;
  int val_count = 16;
  int test_count = 16;
  double deform_scale = 0.3;
  double noise_sigma_fraction = 0.05;
  double occluded_fraction = kDefaultMaskRatio;

  // Self-checks.
  int gradcheck_seeds = 10;
  int ablate_seeds = 3;
};

namespace detail {

struct ConfigKey {
  std::string name;
  // Returns false when the value does not parse.
  std::function<bool(RunConfig*, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline bool parse_bool(const std::string& s, bool* out) {
  if (s == "true" || s == "1") {
    *out = true;
    return true;
  }
  if (s == "false" || s == "0") {
    *out = false;
    return true;
  }
  return false;
}

inline const std::vector<ConfigKey>& config_keys() {
  auto int_key = [](const char* name, int RunConfig::* field) {
    return ConfigKey{
        name,
        [field](RunConfig* c, const std::string& v) {
          long long parsed = 0;
          if (!parse_long(v, &parsed) || parsed < -(1LL << 31) || parsed >= (1LL << 31)) {
            return false;
          }
          c->*field = static_cast<int>(parsed);
          return true;
        },
        [field](const RunConfig& c) { return strfmt("%d", c.*field); },
    };
  };
  auto train_int_key = [](const char* name, int TrainConfig::* field) {
    return ConfigKey{
        name,
        [field](RunConfig* c, const std::string& v) {
          long long parsed = 0;
          if (!parse_long(v, &parsed) || parsed < -(1LL << 31) || parsed >= (1LL << 31)) {
            return false;
          }
          c->train.*field = static_cast<int>(parsed);
          return true;
        },
        [field](const RunConfig& c) { return strfmt("%d", c.train.*field); },
    };
  };
  auto double_key = [](const char* name, double RunConfig::* field) {
    return ConfigKey{
        name,
        [field](RunConfig* c, const std::string& v) { return parse_double(v, &(c->*field)); },
        [field](const RunConfig& c) { return strfmt("%.17g", c.*field); },
    };
  };
  auto train_double_key = [](const char* name, double TrainConfig::* field) {
    return ConfigKey{
        name,
        [field](RunConfig* c, const std::string& v) { return parse_double(v, &(c->train.*field)); },
        [field](const RunConfig& c) { return strfmt("%.17g", c.train.*field); },
    };
  };
  auto weight_key = [](const char* name, double LossWeights::* field) {
    return ConfigKey{
        name,
        [field](RunConfig* c, const std::string& v) {
          return parse_double(v, &(c->train.loss_weights.*field));
        },
        [field](const RunConfig& c) { return strfmt("%.17g", c.train.loss_weights.*field); },
    };
  };
  auto bool_key = [](const char* name, bool RunConfig::* field) {
    return ConfigKey{
        name,
        [field](RunConfig* c, const std::string& v) { return parse_bool(v, &(c->*field)); },
        [field](const RunConfig& c) { return std::string(c.*field ? "true" : "false"); },
    };
  };
  auto string_key = [](const char* name, std::string RunConfig::* field) {
    return ConfigKey{
        name,
        [field](RunConfig* c, const std::string& v) {
          c->*field = v;
          return true;
        },
        [field](const RunConfig& c) { return c.*field; },
    };
  };

  static const std::vector<ConfigKey> keys = {
      train_int_key("batch_size", &TrainConfig::batch_size),
      train_double_key("learning_rate", &TrainConfig::learning_rate),
      train_double_key("adam_beta1", &TrainConfig::adam_beta1),
      train_double_key("adam_beta2", &TrainConfig::adam_beta2),
      train_double_key("adam_eps", &TrainConfig::adam_eps),
      train_int_key("pretrain_steps", &TrainConfig::pretrain_steps),
      train_int_key("main_epochs", &TrainConfig::main_epochs),
      train_int_key("mask_count", &TrainConfig::mask_count),
      ConfigKey{
          "seed",
          [](RunConfig* c, const std::string& v) {
            long long parsed = 0;
            if (!parse_long(v, &parsed) || parsed < 0) return false;
            c->train.seed = static_cast<std::uint64_t>(parsed);
            return true;
          },
          [](const RunConfig& c) {
            return strfmt("%llu", static_cast<unsigned long long>(c.train.seed));
          },
      },
      weight_key("loss_weight_vertex", &LossWeights::vertex),
      weight_key("loss_weight_joint3d", &LossWeights::joint3d),
      weight_key("loss_weight_joint2d", &LossWeights::joint2d),
      string_key("template_path", &RunConfig::template_path),
      string_key("hierarchy_path", &RunConfig::hierarchy_path),
      string_key("dataset_dir", &RunConfig::dataset_dir),
      string_key("output_dir", &RunConfig::output_dir),
      string_key("init_checkpoint", &RunConfig::init_checkpoint),
      string_key("eval_checkpoint", &RunConfig::eval_checkpoint),
      string_key("eval_split", &RunConfig::eval_split),
      int_key("levels", &RunConfig::levels),
      int_key("factor", &RunConfig::factor),
      int_key("units_per_level", &RunConfig::units_per_level),
      int_key("k_feat", &RunConfig::k_feat),
      bool_key("adaptive_adjacency", &RunConfig::adaptive_adjacency),
      bool_key("use_nonlocal", &RunConfig::use_nonlocal),
      int_key("train_count", &RunConfig::train_count),
      int_key("val_count", &RunConfig::val_count),
      int_key("test_count", &RunConfig::test_count),
      double_key("deform_scale", &RunConfig::deform_scale),
      double_key("noise_sigma_fraction", &RunConfig::noise_sigma_fraction),
      double_key("occluded_fraction", &RunConfig::occluded_fraction),
      int_key("gradcheck_seeds", &RunConfig::gradcheck_seeds),
      int_key("ablate_seeds", &RunConfig::ablate_seeds),
  };
  return keys;
}

}  // namespace detail

// Applies a config file on top of the current values. Reports every problem
// in the file at once (unknown key, unparsable value, duplicate, missing '=').
inline void apply_config_file(RunConfig* cfg, const std::string& path) {
  if (cfg == nullptr) {
    throw ConfigError(ConfigErrorKind::invalid_argument, "apply_config_file: null config");
  }
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(ConfigErrorKind::io_failure, e.what());
  }

  const std::vector<detail::ConfigKey>& keys = detail::config_keys();
  std::vector<std::string> problems;
  std::vector<std::string> seen;
  std::size_t line_no = 0;
  std::size_t at = 0;
  while (at <= text.size()) {
    const std::size_t end = text.find('\n', at);
    const std::string raw =
        text.substr(at, end == std::string::npos ? std::string::npos : end - at);
    at = end == std::string::npos ? text.size() + 1 : end + 1;
    ++line_no;

    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(strfmt("line %zu: expected 'key = value', got '%s'", line_no,
                                line.c_str()));
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const detail::ConfigKey* binding = nullptr;
    for (const detail::ConfigKey& k : keys) {
      if (k.name == key) {
        binding = &k;
        break;
      }
    }
    if (binding == nullptr) {
      problems.push_back(strfmt("line %zu: unknown key '%s'", line_no, key.c_str()));
      continue;
    }
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      problems.push_back(strfmt("line %zu: duplicate key '%s'", line_no, key.c_str()));
      continue;
    }
    seen.push_back(key);
    if (!binding->set(cfg, value)) {
      problems.push_back(strfmt("line %zu: bad value '%s' for key '%s'", line_no, value.c_str(),
                                key.c_str()));
    }
  }
  if (!problems.empty()) {
    std::string msg = strfmt("config file %s:", path.c_str());
    for (const std::string& p : problems) msg += "\n  " + p;
    throw ConfigError(ConfigErrorKind::format_malformed, msg);
  }
}

// Every key in declaration order, re-parseable by apply_config_file.
inline std::string serialize_run_config(const RunConfig& cfg) {
  std::string out;
  for (const detail::ConfigKey& k : detail::config_keys()) {
    out += k.name + " = " + k.get(cfg) + "\n";
  }
  return out;
}

inline void write_effective_config(const RunConfig& cfg, const std::string& path) {
  try {
    write_text_file(path, serialize_run_config(cfg));
  } catch (const std::exception& e) {
    throw ConfigError(ConfigErrorKind::io_failure, e.what());
  }
}

inline std::vector<std::string> run_config_violations(const RunConfig& cfg) {
  std::vector<std::string> out = train_config_violations(cfg.train);
  if (cfg.levels < 1) out.push_back(strfmt("levels must be at least 1, got %d", cfg.levels));
  if (cfg.factor < 2) out.push_back(strfmt("factor must be at least 2, got %d", cfg.factor));
  if (cfg.units_per_level < 1) {
    out.push_back(strfmt("units_per_level must be positive, got %d", cfg.units_per_level));
  }
  if (cfg.k_feat < 0) out.push_back(strfmt("k_feat must be non-negative, got %d", cfg.k_feat));
  if (cfg.train_count < 0 || cfg.val_count < 0 || cfg.test_count < 0) {
    out.push_back(strfmt("sample counts must be non-negative, got %d/%d/%d", cfg.train_count,
                         cfg.val_count, cfg.test_count));
  }
  if (!(cfg.deform_scale > 0.0)) {
    out.push_back(strfmt("deform_scale must be positive, got %g", cfg.deform_scale));
  }
  if (!(cfg.noise_sigma_fraction >= 0.0)) {
    out.push_back(strfmt("noise_sigma_fraction must be non-negative, got %g",
                         cfg.noise_sigma_fraction));
  }
  if (!(cfg.occluded_fraction > 0.0 && cfg.occluded_fraction < 1.0)) {
    out.push_back(strfmt("occluded_fraction must be in (0, 1), got %g", cfg.occluded_fraction));
  }
  if (cfg.gradcheck_seeds < 1) {
    out.push_back(strfmt("gradcheck_seeds must be positive, got %d", cfg.gradcheck_seeds));
  }
  if (cfg.ablate_seeds < 1) {
    out.push_back(strfmt("ablate_seeds must be positive, got %d", cfg.ablate_seeds));
  }
  bool split_ok = true;
  try {
    parse_split(cfg.eval_split);
  } catch (const DataError&) {
    split_ok = false;
  }
  if (!split_ok) out.push_back("eval_split must be one of train, val, test, occluded_test");
  return out;
}

inline void validate_run_config(const RunConfig& cfg) {
  const std::vector<std::string> bad = run_config_violations(cfg);
  if (bad.empty()) return;
  std::string msg = "invalid run config:";
  for (const std::string& b : bad) msg += "\n  " + b;
  throw ConfigError(ConfigErrorKind::invalid_argument, msg);
}

}  // namespace dcgnet

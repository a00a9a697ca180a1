// Flat key=value run configuration with documented defaults.
//
//   # comment
//   strategy = lspp
//   alpha = 0.1
//   hidden = 32,32
//
// A JSON object with the same keys (such as a run's config.json) is accepted too.
// Values given as command-line flags override file values.
#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelforge/train.hpp"

namespace labelforge {

/// Invalid configuration: unknown key, bad value, or out-of-range setting.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class DataSource { synthetic, csv, idx };

struct DataConfig {
  DataSource source = DataSource::synthetic;
  // synthetic: the four-class paired Gaussian task
  double synth_std = 0.5;
  std::size_t synth_per_class = 200;
  std::size_t synth_test_per_class = 100;
  std::uint64_t data_seed = 0;
  // csv
  std::string train_csv;
  std::string test_csv;  // empty: split train_csv
  std::string label_column = "label";
  // idx
  std::string idx_images;
  std::string idx_labels;
  std::string test_idx_images;
  std::string test_idx_labels;
  std::size_t max_samples = 0;  // 0: all
  // used when no separate test file is given
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
};

struct RunConfig {
  TrainConfig train;
  DataConfig data;
  std::vector<std::size_t> hidden{32};
  std::string teacher_checkpoint;
  std::string teacher_cmatrix;
};

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "strategy", "alpha", "epochs", "batch_size", "lr", "momentum", "weight_decay", "c_lr", "seed",
      "layer_sizes", "hidden", "ols_mix", "ols_correct_only", "ablation_loss",
      "data", "synth_std", "synth_per_class", "synth_test_per_class", "data_seed",
      "train_csv", "test_csv", "label_column", "idx_images", "idx_labels", "test_idx_images",
      "test_idx_labels", "max_samples", "test_fraction", "split_seed",
      "teacher_checkpoint", "teacher_cmatrix"};
  return keys;
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string nearest_key(const std::string& key) {
  const auto& keys = config_keys();
  return *std::min_element(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
    return edit_distance(key, a) < edit_distance(key, b);
  });
}

/// One assignment with the place it came from, for error messages.
struct ConfigEntry {
  std::string value;
  std::string origin;  // "line 3" or "flag --alpha"
};

using ConfigEntries = std::map<std::string, ConfigEntry>;

namespace detail {

inline std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline ConfigEntries parse_json_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: JSON config must be an object");
  ConfigEntries out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string value;
    const auto& v = it.value();
    if (v.is_string()) {
      value = v.get<std::string>();
    } else if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) value += (i ? "," : "") + v[i].dump();
    } else {
      value = v.dump();
    }
    out[it.key()] = {value, "key '" + it.key() + "'"};
  }
  return out;
}

}  // namespace detail

/// Parses key=value text (or a JSON object) into raw entries. Duplicate keys: last wins.
inline ConfigEntries parse_config_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return detail::parse_json_config(text);

  ConfigEntries out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    out[detail::strip(line.substr(0, eq))] = {detail::strip(line.substr(eq + 1)), "line " + std::to_string(line_no)};
  }
  return out;
}

inline ConfigEntries read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

namespace detail {

template <class T>
T parse_number(const std::string& key, const ConfigEntry& e) {
  T v{};
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || e.value.empty()) {
    throw ConfigError(e.origin + ": " + key + " expects a " +
                      (std::is_integral_v<T> ? "non-negative integer" : "number") + ", got '" + e.value + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const ConfigEntry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  throw ConfigError(e.origin + ": " + key + " expects true/false, got '" + e.value + "'");
}

inline std::vector<std::size_t> parse_size_list(const std::string& key, const ConfigEntry& e) {
  std::vector<std::size_t> out;
  if (e.value.empty()) return out;
  std::stringstream ss(e.value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(parse_number<std::size_t>(key, {strip(item), e.origin}));
  }
  return out;
}

}  // namespace detail

/// Applies entries on top of `cfg`. Unknown keys name the nearest valid key.
inline void apply_config(RunConfig& cfg, const ConfigEntries& entries) {
  const auto& keys = config_keys();
  for (const auto& [key, e] : entries) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError(e.origin + ": unknown key '" + key + "' (did you mean '" + nearest_key(key) + "'?)");
    }
    using detail::parse_number;
    auto& t = cfg.train;
    auto& d = cfg.data;
    if (key == "strategy") {
      const auto s = parse_strategy(e.value);
      if (!s) throw ConfigError(e.origin + ": unknown strategy '" + e.value + "'");
      t.strategy = *s;
    } else if (key == "alpha") {
      t.alpha = parse_number<double>(key, e);
    } else if (key == "epochs") {
      t.epochs = parse_number<std::size_t>(key, e);
    } else if (key == "batch_size") {
      t.batch_size = parse_number<std::size_t>(key, e);
    } else if (key == "lr") {
      t.lr = parse_number<double>(key, e);
    } else if (key == "momentum") {
      t.momentum = parse_number<double>(key, e);
    } else if (key == "weight_decay") {
      t.weight_decay = parse_number<double>(key, e);
    } else if (key == "c_lr") {
      t.c_lr = parse_number<double>(key, e);
    } else if (key == "seed") {
      t.seed = parse_number<std::uint64_t>(key, e);
    } else if (key == "layer_sizes") {
      t.layer_sizes = detail::parse_size_list(key, e);
    } else if (key == "hidden") {
      cfg.hidden = detail::parse_size_list(key, e);
    } else if (key == "ols_mix") {
      t.ols_mix = parse_number<double>(key, e);
    } else if (key == "ols_correct_only") {
      t.ols_correct_only = detail::parse_bool(key, e);
    } else if (key == "ablation_loss") {
      const auto a = parse_ablation_loss(e.value);
      if (!a) throw ConfigError(e.origin + ": ablation_loss must be ce, sce_original or sce_ours");
      t.ablation_loss = *a;
    } else if (key == "data") {
      if (e.value == "synthetic") d.source = DataSource::synthetic;
      else if (e.value == "csv") d.source = DataSource::csv;
      else if (e.value == "idx") d.source = DataSource::idx;
      else throw ConfigError(e.origin + ": data must be synthetic, csv or idx");
    } else if (key == "synth_std") {
      d.synth_std = parse_number<double>(key, e);
    } else if (key == "synth_per_class") {
      d.synth_per_class = parse_number<std::size_t>(key, e);
    } else if (key == "synth_test_per_class") {
      d.synth_test_per_class = parse_number<std::size_t>(key, e);
    } else if (key == "data_seed") {
      d.data_seed = parse_number<std::uint64_t>(key, e);
    } else if (key == "train_csv") {
      d.train_csv = e.value;
    } else if (key == "test_csv") {
      d.test_csv = e.value;
    } else if (key == "label_column") {
      d.label_column = e.value;
    } else if (key == "idx_images") {
      d.idx_images = e.value;
    } else if (key == "idx_labels") {
      d.idx_labels = e.value;
    } else if (key == "test_idx_images") {
      d.test_idx_images = e.value;
    } else if (key == "test_idx_labels") {
      d.test_idx_labels = e.value;
    } else if (key == "max_samples") {
      d.max_samples = parse_number<std::size_t>(key, e);
    } else if (key == "test_fraction") {
      d.test_fraction = parse_number<double>(key, e);
    } else if (key == "split_seed") {
      d.split_seed = parse_number<std::uint64_t>(key, e);
    } else if (key == "teacher_checkpoint") {
      cfg.teacher_checkpoint = e.value;
    } else if (key == "teacher_cmatrix") {
      cfg.teacher_cmatrix = e.value;
    }
  }
}

/// Range checks that do not need the data.
inline void validate_config(const RunConfig& cfg) {
  const auto& t = cfg.train;
  if (!(t.alpha >= 0.0 && t.alpha < 1.0)) {
    throw ConfigError("alpha must be in [0, 1), got " + format_double(t.alpha));
  }
  if (t.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(t.lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(t.momentum >= 0.0 && t.momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(t.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (t.c_lr && !(*t.c_lr >= 0.0)) throw ConfigError("c_lr must be >= 0");
  if (!(t.ols_mix >= 0.0 && t.ols_mix <= 1.0)) throw ConfigError("ols_mix must be in [0, 1]");
  if (!t.layer_sizes.empty() && t.layer_sizes.size() < 2) throw ConfigError("layer_sizes needs at least 2 entries");
  for (auto s : t.layer_sizes) {
    if (s == 0) throw ConfigError("layer_sizes entries must be positive");
  }
  for (auto s : cfg.hidden) {
    if (s == 0) throw ConfigError("hidden sizes must be positive");
  }
  if (!(cfg.data.test_fraction > 0.0 && cfg.data.test_fraction < 1.0)) throw ConfigError("test_fraction must be in (0, 1)");
  if (!(cfg.data.synth_std > 0.0)) throw ConfigError("synth_std must be positive");
}

/// File entries first, then flag entries on top; validated.
inline RunConfig load_config(const std::optional<std::string>& path, const ConfigEntries& flags = {}) {
  RunConfig cfg;
  if (path) apply_config(cfg, read_config_file(*path));
  apply_config(cfg, flags);
  validate_config(cfg);
  return cfg;
}

/// Resolves layer_sizes from the data when not given explicitly: [D, hidden..., K].
inline void resolve_layer_sizes(RunConfig& cfg, std::size_t input_dim, std::size_t num_classes) {
  auto& ls = cfg.train.layer_sizes;
  if (ls.empty()) {
    ls.push_back(input_dim);
    ls.insert(ls.end(), cfg.hidden.begin(), cfg.hidden.end());
    ls.push_back(num_classes);
  }
  if (ls.front() != input_dim || ls.back() != num_classes) {
    throw ConfigError("layer_sizes must start with the input dimension " + std::to_string(input_dim) +
                      " and end with K=" + std::to_string(num_classes));
  }
}

inline std::string_view to_string(DataSource s) {
  switch (s) {
    case DataSource::synthetic: return "synthetic";
    case DataSource::csv: return "csv";
    case DataSource::idx: return "idx";
  }
  return "?";
}

/// Every key, resolved. Feeding this back through load_config reproduces the run.
inline nlohmann::json to_json(const RunConfig& c) {
  auto j = to_json(c.train);
  const auto& d = c.data;
  j["hidden"] = c.hidden;
  j["data"] = to_string(d.source);
  j["synth_std"] = d.synth_std;
  j["synth_per_class"] = d.synth_per_class;
  j["synth_test_per_class"] = d.synth_test_per_class;
  j["data_seed"] = d.data_seed;
  j["train_csv"] = d.train_csv;
  j["test_csv"] = d.test_csv;
  j["label_column"] = d.label_column;
  j["idx_images"] = d.idx_images;
  j["idx_labels"] = d.idx_labels;
  j["test_idx_images"] = d.test_idx_images;
  j["test_idx_labels"] = d.test_idx_labels;
  j["max_samples"] = d.max_samples;
  j["test_fraction"] = d.test_fraction;
  j["split_seed"] = d.split_seed;
  j["teacher_checkpoint"] = c.teacher_checkpoint;
  j["teacher_cmatrix"] = c.teacher_cmatrix;
  return j;
}

}  // namespace labelforge

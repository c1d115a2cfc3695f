#pragma once

// Run configuration for the command-line tool: a line-oriented
// `key = value` file with `#` comments, overridden by flags. Every key
// has a default; unknown keys are rejected.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rmo/rmo.hpp"

namespace rmo::cli {

inline const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> defaults{
      // task and data
      {"task", ""},
      {"shapes", "20x4"},
      {"n", "512"},
      {"noise", "0.1"},
      {"p_true", "0"},
      {"feature_scale", "2"},
      {"label_noise", "0.05"},
      {"batch_size", "64"},
      // meta-training
      {"inner_steps", "5"},
      {"outer_steps", "300"},
      {"outer_lr", "0.001"},
      {"outer_rule", "adam"},
      {"adam_beta1", "0.9"},
      {"adam_beta2", "0.999"},
      {"adam_eps", "1e-8"},
      {"seed", "1"},
      {"phi_seed", "0"},
      {"hidden", "20"},
      {"layers", "2"},
      {"adapt_mode", "full"},
      {"input_transform", "raw"},
      {"reset_every", "1"},
      {"meta_loss_data", "batch"},
      {"data_seeds", "1"},
      {"wall_clock", "false"},
      // evaluation
      {"optimizer", ""},
      {"checkpoint", ""},
      {"alpha", ""},
      {"beta", "0.9"},
      {"beta2", "0.99"},
      {"epsilon", "1e-8"},
      {"steps", "200"},
      {"eval_seeds", "101,102,103,104,105"},
  };
  return defaults;
}

class RunConfig {
 public:
  RunConfig() : values_(default_values()) {}

  /// Sets a known key; `explicit_set` marks it as chosen by the user.
  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
    explicit_.insert(key);
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }
  bool is_explicit(const std::string& key) const { return explicit_.count(key) != 0; }

  /// Parses `key = value` lines. `#` starts a comment anywhere on a line.
  void load_text(const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line;
    std::size_t no = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
      ++no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(no) + ": expected 'key = value'");
      }
      const std::string key = trim(body.substr(0, eq));
      const std::string value = trim(body.substr(eq + 1));
      if (!values_.count(key)) {
        throw ConfigError(origin + ":" + std::to_string(no) + ": unknown key '" + key + "'");
      }
      if (!seen.insert(key).second) {
        throw ConfigError(origin + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
      }
      set(key, value);
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    load_text(ss.str(), path);
  }

  /// Every key in sorted order as `key = value` lines.
  std::string echo() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  std::vector<std::pair<std::string, std::string>> entries() const {
    return {values_.begin(), values_.end()};
  }

  // Typed accessors.
  std::size_t get_count(const std::string& key) const {
    const std::string& s = get(key);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("config key '" + key + "' needs a non-negative integer, got '" + s + "'");
    }
    return std::strtoull(s.c_str(), nullptr, 10);
  }
  double get_double(const std::string& key) const {
    const std::string& s = get(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
      throw ConfigError("config key '" + key + "' needs a number, got '" + s + "'");
    }
    return v;
  }
  bool get_bool(const std::string& key) const {
    const std::string& s = get(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("config key '" + key + "' needs true or false, got '" + s + "'");
  }
  std::vector<std::uint64_t> get_seeds(const std::string& key) const {
    std::vector<std::uint64_t> out;
    for (const std::string& tok : split(get(key), ',')) {
      const std::string t = trim(tok);
      if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("config key '" + key + "' needs comma-separated integers");
      }
      out.push_back(std::strtoull(t.c_str(), nullptr, 10));
    }
    if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

inline TaskKind parse_task(const std::string& s) {
  if (s == "pca") return TaskKind::Pca;
  if (s == "classifier") return TaskKind::Classifier;
  throw ConfigError("unknown task '" + s + "' (expected pca or classifier)");
}

/// "20x4,classifier:32x8": shapes with an optional task prefix; the prefix
/// defaults to `default_task`.
inline std::vector<TaskShape> parse_shapes(const std::string& s, TaskKind default_task) {
  std::vector<TaskShape> out;
  for (const std::string& raw : RunConfig::split(s, ',')) {
    std::string tok = RunConfig::trim(raw);
    TaskKind task = default_task;
    if (auto colon = tok.find(':'); colon != std::string::npos) {
      task = parse_task(tok.substr(0, colon));
      tok = tok.substr(colon + 1);
    }
    const auto x = tok.find('x');
    const std::string ds = x == std::string::npos ? "" : tok.substr(0, x);
    const std::string ps = x == std::string::npos ? "" : tok.substr(x + 1);
    auto digits = [](const std::string& v) {
      return !v.empty() && v.find_first_not_of("0123456789") == std::string::npos;
    };
    if (!digits(ds) || !digits(ps)) throw ConfigError("bad shape '" + raw + "' (expected DxP)");
    const std::size_t d = std::strtoull(ds.c_str(), nullptr, 10);
    const std::size_t p = std::strtoull(ps.c_str(), nullptr, 10);
    try {
      out.push_back(TaskShape::make(task, d, p));
    } catch (const DimensionError& e) {
      throw ConfigError("bad shape '" + raw + "': " + e.what());
    }
  }
  if (out.empty()) throw ConfigError("no shapes given");
  return out;
}

inline AdaptMode parse_adapt_mode(const std::string& s) {
  if (s == "full") return AdaptMode::Full;
  if (s == "row-only") return AdaptMode::RowOnly;
  if (s == "col-only") return AdaptMode::ColOnly;
  if (s == "elementwise") return AdaptMode::Elementwise;
  throw ConfigError("unknown adapt_mode '" + s + "' (expected full, row-only, col-only or elementwise)");
}

inline InputTransform parse_input_transform(const std::string& s) {
  if (s == "raw") return InputTransform::Raw;
  if (s == "log") return InputTransform::Log;
  throw ConfigError("unknown input_transform '" + s + "' (expected raw or log)");
}

inline TaskKind required_task(const RunConfig& rc) {
  if (rc.get("task").empty()) throw ConfigError("a task is required (--task pca|classifier)");
  return parse_task(rc.get("task"));
}

inline DataConfig resolve_data(const RunConfig& rc) {
  DataConfig d;
  d.n = rc.get_count("n");
  d.noise = rc.get_double("noise");
  d.p_true = rc.get_count("p_true");
  d.feature_scale = rc.get_double("feature_scale");
  d.label_noise = rc.get_double("label_noise");
  if (d.n < 1) throw ConfigError("n must be >= 1");
  return d;
}

inline MetaConfig resolve_meta(const RunConfig& rc) {
  MetaConfig m;
  m.shapes = parse_shapes(rc.get("shapes"), required_task(rc));
  m.inner_steps = rc.get_count("inner_steps");
  m.outer_steps = rc.get_count("outer_steps");
  m.batch_size = rc.get_count("batch_size");
  m.outer_lr = rc.get_double("outer_lr");
  m.adam_beta1 = rc.get_double("adam_beta1");
  m.adam_beta2 = rc.get_double("adam_beta2");
  m.adam_eps = rc.get_double("adam_eps");
  const std::string rule = rc.get("outer_rule");
  if (rule == "adam") {
    m.rule = OuterRule::Adam;
  } else if (rule == "sgd") {
    m.rule = OuterRule::Sgd;
  } else {
    throw ConfigError("unknown outer_rule '" + rule + "' (expected adam or sgd)");
  }
  m.seed = rc.get_count("seed");
  m.phi_seed = rc.get_count("phi_seed");
  m.hidden = rc.get_count("hidden");
  m.layers = rc.get_count("layers");
  m.adapt.mode = parse_adapt_mode(rc.get("adapt_mode"));
  m.adapt.input = parse_input_transform(rc.get("input_transform"));
  m.reset_every = rc.get_count("reset_every");
  const std::string mld = rc.get("meta_loss_data");
  if (mld == "batch") {
    m.meta_loss_data = MetaLossData::Batch;
  } else if (mld == "full") {
    m.meta_loss_data = MetaLossData::Full;
  } else {
    throw ConfigError("unknown meta_loss_data '" + mld + "' (expected batch or full)");
  }
  m.data_seeds = rc.get_seeds("data_seeds");
  m.data = resolve_data(rc);
  m.record_wall_clock = rc.get_bool("wall_clock");
  m.validate();
  return m;
}

/// Step size used when `alpha` is left empty.
inline double default_alpha(OptimizerKind k) { return k == OptimizerKind::RasaLike ? 1e-4 : 0.01; }

inline EvalConfig resolve_eval(const RunConfig& rc, OptimizerKind kind) {
  EvalConfig e;
  e.optimizer = kind;
  e.alpha = rc.get("alpha").empty() ? default_alpha(kind) : rc.get_double("alpha");
  e.beta = rc.get_double("beta");
  e.beta2 = rc.get_double("beta2");
  e.epsilon = rc.get_double("epsilon");
  e.steps = rc.get_count("steps");
  e.batch_size = rc.get_count("batch_size");
  e.input = parse_input_transform(rc.get("input_transform"));
  e.data = resolve_data(rc);
  if (e.alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (e.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  return e;
}

}  // namespace rmo::cli

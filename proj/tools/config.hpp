#pragma once

// Experiment configuration: a flat list of `key = value` lines. A `[name]`
// line prefixes the following keys with `name.`; `#` starts a comment.
//
//   command            path | sweep | calibrate | bench
//   model.kind         binomial | gaussian | discrete
//   model.sizes        n_1 ... n_K
//   model.trials       binomial trial count (alphabet 0..trials)
//   model.pre          binomial: success probability per group
//   model.post
//   model.pre_mean     gaussian: one value per group, likewise pre_var,
//   model.post_mean    post_mean, post_var
//   model.pre.<k>      discrete: pmf row of group k (1-based), likewise post.<k>
//   schedule.policy    uniform | fixed | cyclic
//   schedule.labels    fixed: group index (1-based) per sensor slot
//   schedule.step      cyclic: rotation per time step
//   detectors          subset of: mixture bayesian generalized efficient
//   threshold          b, or `auto` (needs threshold.gamma)
//   threshold.gamma    target WARL for auto thresholds
//   scenario.change_point   integer >= 1, or `none`
//   scenario.horizon
//   sweep.b            explicit ascending grid, or leave unset and give
//   sweep.warl_min     ... the WARL range for an automatic grid
//   sweep.warl_max
//   sweep.points
//   sweep.warl_horizon / sweep.wadd_horizon / sweep.pilot_reps
//   sweep.runs         write runs.csv (true | false)
//   calibrate.gamma / calibrate.resolution
//   bench.n            ladder of network sizes, split evenly over the groups
//   bench.reps / bench.block
//   reps / seed / threads / out

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "anonqcd/detectors.hpp"
#include "anonqcd/errors.hpp"
#include "anonqcd/model.hpp"

namespace cli {

using anonqcd::ConfigError;

struct RawConfig {
  std::map<std::string, std::string> values;
  std::map<std::string, int> lines;  // key -> source line, for messages
};

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline RawConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
  RawConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(number) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected `key = value`");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(number) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (cfg.values.count(key))
      throw ConfigError(origin + ":" + std::to_string(number) + ": duplicate key `" + key + "`");
    cfg.values[key] = trim(line.substr(eq + 1));
    cfg.lines[key] = number;
  }
  return cfg;
}

inline RawConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file `" + path + "`");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

// Later keys win.
// An explicit grid and an automatic WARL range exclude each other, so a layer
// that sets one drops the other from the layers below.
inline void overlay(RawConfig& base, const RawConfig& top) {
  const std::vector<std::string> range{"sweep.warl_min", "sweep.warl_max", "sweep.points"};
  auto drop = [&](const std::string& k) {
    base.values.erase(k);
    base.lines.erase(k);
  };
  if (top.values.count("sweep.b"))
    for (const auto& k : range) drop(k);
  for (const auto& k : range)
    if (top.values.count(k)) drop("sweep.b");
  for (const auto& [k, v] : top.values) {
    base.values[k] = v;
    base.lines[k] = top.lines.count(k) ? top.lines.at(k) : 0;
  }
}

enum class ModelKind { binomial, gaussian, discrete };

struct ModelSpec {
  ModelKind kind = ModelKind::binomial;
  std::vector<int> sizes;
  int trials = 10;
  std::vector<double> pre, post;                      // binomial
  std::vector<double> pre_mean, pre_var, post_mean, post_var;  // gaussian
  std::vector<std::vector<double>> pre_rows, post_rows;        // discrete
};

struct ExperimentConfig {
  std::string command;
  ModelSpec model;
  anonqcd::SchedulePolicy schedule = anonqcd::UniformRandomSchedule{};
  std::vector<anonqcd::DetectorKind> detectors;
  std::optional<double> threshold;  // empty = auto
  std::optional<double> gamma;      // for auto thresholds
  std::optional<std::int64_t> change_point;
  std::int64_t horizon = 1000;
  std::vector<double> sweep_b;
  double warl_min = 100, warl_max = 10000;
  int sweep_points = 8;
  std::int64_t warl_horizon = 0, wadd_horizon = 0;
  std::int64_t pilot_reps = 200;
  bool write_runs = true;
  double calibrate_gamma = 0;
  double calibrate_resolution = 0.01;
  std::vector<int> bench_n;
  int bench_reps = 200;
  int bench_block = 32;
  std::int64_t reps = 2000;
  std::uint64_t seed = 1;
  std::size_t threads = 0;
  std::string out = "out";
};

namespace detail {

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "command",        "model.kind",           "model.sizes",       "model.trials",      "model.pre",
      "model.post",     "model.pre_mean",       "model.pre_var",     "model.post_mean",   "model.post_var",
      "schedule.policy", "schedule.labels",     "schedule.step",     "detectors",         "threshold",
      "threshold.gamma", "scenario.change_point", "scenario.horizon", "sweep.b",          "sweep.warl_min",
      "sweep.warl_max", "sweep.points",         "sweep.warl_horizon", "sweep.wadd_horizon", "sweep.pilot_reps",
      "sweep.runs",     "calibrate.gamma",      "calibrate.resolution", "bench.n",        "bench.reps",
      "bench.block",    "reps",                 "seed",              "threads",           "out"};
  return keys;
}

inline bool is_row_key(const std::string& key) {
  for (const char* prefix : {"model.pre.", "model.post."}) {
    const std::string p(prefix);
    if (key.size() > p.size() && key.compare(0, p.size(), p) == 0) {
      const std::string idx = key.substr(p.size());
      return std::all_of(idx.begin(), idx.end(), [](char c) { return c >= '0' && c <= '9'; });
    }
  }
  return false;
}

class Reader {
 public:
  explicit Reader(const RawConfig& raw) : raw_(raw) {}

  bool has(const std::string& key) const { return raw_.values.count(key) > 0; }
  const std::string& text(const std::string& key) const { return raw_.values.at(key); }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    std::string where = key;
    if (raw_.lines.count(key) && raw_.lines.at(key) > 0) where += " (line " + std::to_string(raw_.lines.at(key)) + ")";
    throw ConfigError(where + ": " + what);
  }

  double real(const std::string& key, const std::string& token) const {
    double v = 0;
    const auto* end = token.data() + token.size();
    const auto [ptr, ec] = std::from_chars(token.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) fail(key, "`" + token + "` is not a finite number");
    return v;
  }

  std::int64_t integer(const std::string& key, const std::string& token) const {
    std::int64_t v = 0;
    const auto* end = token.data() + token.size();
    const auto [ptr, ec] = std::from_chars(token.data(), end, v);
    if (ec != std::errc() || ptr != end) fail(key, "`" + token + "` is not an integer");
    return v;
  }

  std::vector<std::string> words(const std::string& key) const {
    std::istringstream in(text(key));
    std::vector<std::string> out;
    for (std::string w; in >> w;) {
      if (!w.empty() && w.back() == ',') w.pop_back();
      if (!w.empty()) out.push_back(w);
    }
    if (out.empty()) fail(key, "empty value");
    return out;
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> v;
    for (const auto& w : words(key)) v.push_back(real(key, w));
    return v;
  }

  std::vector<std::int64_t> integers(const std::string& key) const {
    std::vector<std::int64_t> v;
    for (const auto& w : words(key)) v.push_back(integer(key, w));
    return v;
  }

  double real(const std::string& key) const {
    const auto w = words(key);
    if (w.size() != 1) fail(key, "expected one value");
    return real(key, w[0]);
  }

  std::int64_t integer(const std::string& key) const {
    const auto w = words(key);
    if (w.size() != 1) fail(key, "expected one value");
    return integer(key, w[0]);
  }

  std::int64_t positive(const std::string& key) const {
    const auto v = integer(key);
    if (v < 1) fail(key, "must be >= 1");
    return v;
  }

 private:
  const RawConfig& raw_;
};

}  // namespace detail

// Validates everything up front; nothing runs on a config that fails here.
inline ExperimentConfig interpret(const RawConfig& raw) {
  for (const auto& [k, v] : raw.values)
    if (!detail::known_keys().count(k) && !detail::is_row_key(k)) {
      std::string where = raw.lines.count(k) && raw.lines.at(k) > 0 ? " (line " + std::to_string(raw.lines.at(k)) + ")" : "";
      throw ConfigError("unknown key `" + k + "`" + where);
    }
  detail::Reader r(raw);
  ExperimentConfig c;

  if (r.has("command")) {
    c.command = r.text("command");
    if (c.command != "path" && c.command != "sweep" && c.command != "calibrate" && c.command != "bench")
      r.fail("command", "expected path, sweep, calibrate or bench");
  }

  // Model.
  auto& m = c.model;
  const std::string kind = r.has("model.kind") ? r.text("model.kind") : "binomial";
  if (kind == "binomial")
    m.kind = ModelKind::binomial;
  else if (kind == "gaussian")
    m.kind = ModelKind::gaussian;
  else if (kind == "discrete")
    m.kind = ModelKind::discrete;
  else
    r.fail("model.kind", "expected binomial, gaussian or discrete");
  const bool bench_only = c.command == "bench";
  if (!r.has("model.sizes") && !bench_only) throw ConfigError("model.sizes: required");
  if (r.has("model.sizes"))
    for (auto s : r.integers("model.sizes")) {
      if (s < 1) r.fail("model.sizes", "group sizes must be >= 1");
      m.sizes.push_back(static_cast<int>(s));
    }
  const std::size_t groups = r.has("model.sizes") ? m.sizes.size() : 0;
  auto per_group = [&](const std::string& key) {
    if (!r.has(key)) throw ConfigError(key + ": required for model.kind = " + kind);
    auto v = r.reals(key);
    if (groups && v.size() != groups)
      r.fail(key, "expected " + std::to_string(groups) + " values, one per group");
    return v;
  };
  auto reject = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys)
      if (r.has(k)) r.fail(k, "not used by model.kind = " + kind);
  };
  if (m.kind == ModelKind::binomial) {
    reject({"model.pre_mean", "model.pre_var", "model.post_mean", "model.post_var"});
    if (r.has("model.trials")) {
      const auto t = r.integer("model.trials");
      if (t < 1 || t > 1000) r.fail("model.trials", "must be in [1, 1000]");
      m.trials = static_cast<int>(t);
    }
    m.pre = per_group("model.pre");
    m.post = per_group("model.post");
    for (const auto* v : {&m.pre, &m.post})
      for (double p : *v)
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("model.pre/post: success probabilities must lie in [0, 1]");
  } else if (m.kind == ModelKind::gaussian) {
    reject({"model.trials", "model.pre", "model.post"});
    m.pre_mean = per_group("model.pre_mean");
    m.pre_var = per_group("model.pre_var");
    m.post_mean = per_group("model.post_mean");
    m.post_var = per_group("model.post_var");
  } else {
    reject({"model.trials", "model.pre", "model.post", "model.pre_mean", "model.pre_var", "model.post_mean",
            "model.post_var"});
    for (std::size_t k = 1; k <= groups; ++k) {
      for (auto* rows : {&m.pre_rows, &m.post_rows}) {
        const std::string key = std::string(rows == &m.pre_rows ? "model.pre." : "model.post.") + std::to_string(k);
        if (!r.has(key)) throw ConfigError(key + ": required for model.kind = discrete");
        rows->push_back(r.reals(key));
      }
    }
    for (const auto& [k, v] : raw.values)
      if (detail::is_row_key(k)) {
        const auto idx = std::stoul(k.substr(k.rfind('.') + 1));
        if (idx < 1 || idx > groups) r.fail(k, "group index outside 1.." + std::to_string(groups));
      }
  }

  // Schedule.
  const std::string policy = r.has("schedule.policy") ? r.text("schedule.policy") : "uniform";
  if (policy == "uniform") {
    c.schedule = anonqcd::UniformRandomSchedule{};
  } else if (policy == "fixed") {
    if (!r.has("schedule.labels")) throw ConfigError("schedule.labels: required for a fixed schedule");
    anonqcd::Labeling l;
    for (auto g : r.integers("schedule.labels")) {
      if (g < 1) r.fail("schedule.labels", "group indices are 1-based");
      l.assignment.push_back(static_cast<int>(g - 1));
    }
    if (!l.respects(m.sizes)) r.fail("schedule.labels", "labels do not match the group sizes");
    c.schedule = anonqcd::FixedSchedule{l};
  } else if (policy == "cyclic") {
    c.schedule = anonqcd::CyclicRotationSchedule{r.has("schedule.step") ? r.integer("schedule.step") : 1};
  } else {
    r.fail("schedule.policy", "expected uniform, fixed or cyclic");
  }
  if (policy != "fixed" && r.has("schedule.labels")) r.fail("schedule.labels", "only used by a fixed schedule");
  if (policy != "cyclic" && r.has("schedule.step")) r.fail("schedule.step", "only used by a cyclic schedule");

  // Detectors and thresholds.
  if (r.has("detectors"))
    for (const auto& w : r.words("detectors")) {
      try {
        const auto k = anonqcd::parse_detector_kind(w);
        if (std::find(c.detectors.begin(), c.detectors.end(), k) != c.detectors.end())
          r.fail("detectors", "`" + w + "` listed twice");
        c.detectors.push_back(k);
      } catch (const anonqcd::InvalidArgument&) {
        r.fail("detectors", "unknown detector `" + w + "`");
      }
    }
  if (r.has("threshold")) {
    if (r.text("threshold") == "auto") {
      if (!r.has("threshold.gamma")) throw ConfigError("threshold: `auto` requires threshold.gamma");
    } else {
      c.threshold = r.real("threshold");
      if (!(*c.threshold > 0)) r.fail("threshold", "must be > 0");
    }
  }
  if (r.has("threshold.gamma")) {
    if (!r.has("threshold") || r.text("threshold") != "auto") r.fail("threshold.gamma", "only used with threshold = auto");
    c.gamma = r.real("threshold.gamma");
    if (!(*c.gamma > 1)) r.fail("threshold.gamma", "target WARL must be > 1");
  }

  // Scenario.
  if (r.has("scenario.change_point") && r.text("scenario.change_point") != "none") {
    c.change_point = r.integer("scenario.change_point");
    if (*c.change_point < 1) r.fail("scenario.change_point", "must be >= 1 or `none`");
  }
  if (r.has("scenario.horizon")) c.horizon = r.positive("scenario.horizon");

  // Sweep.
  if (r.has("sweep.b")) {
    c.sweep_b = r.reals("sweep.b");
    for (std::size_t i = 0; i < c.sweep_b.size(); ++i) {
      if (!(c.sweep_b[i] > 0)) r.fail("sweep.b", "thresholds must be > 0");
      if (i && !(c.sweep_b[i] > c.sweep_b[i - 1])) r.fail("sweep.b", "thresholds must be strictly ascending");
    }
    for (const char* k : {"sweep.warl_min", "sweep.warl_max", "sweep.points"})
      if (r.has(k)) r.fail(k, "conflicts with an explicit sweep.b grid");
  }
  if (r.has("sweep.warl_min")) c.warl_min = r.real("sweep.warl_min");
  if (r.has("sweep.warl_max")) c.warl_max = r.real("sweep.warl_max");
  if (!(c.warl_min > 1 && c.warl_max > c.warl_min)) throw ConfigError("sweep: need 1 < warl_min < warl_max");
  if (r.has("sweep.points")) {
    c.sweep_points = static_cast<int>(r.integer("sweep.points"));
    if (c.sweep_points < 2) r.fail("sweep.points", "must be >= 2");
  }
  if (r.has("sweep.warl_horizon")) c.warl_horizon = r.positive("sweep.warl_horizon");
  if (r.has("sweep.wadd_horizon")) c.wadd_horizon = r.positive("sweep.wadd_horizon");
  if (r.has("sweep.pilot_reps")) c.pilot_reps = r.positive("sweep.pilot_reps");
  if (r.has("sweep.runs")) {
    const auto& v = r.text("sweep.runs");
    if (v != "true" && v != "false") r.fail("sweep.runs", "expected true or false");
    c.write_runs = v == "true";
  }

  // Calibration.
  if (r.has("calibrate.gamma")) {
    c.calibrate_gamma = r.real("calibrate.gamma");
    if (!(c.calibrate_gamma > 1)) r.fail("calibrate.gamma", "target WARL must be > 1");
  }
  if (r.has("calibrate.resolution")) {
    c.calibrate_resolution = r.real("calibrate.resolution");
    if (!(c.calibrate_resolution > 0 && c.calibrate_resolution <= 0.5))
      r.fail("calibrate.resolution", "must be in (0, 0.5]");
  }

  // Benchmark.
  if (r.has("bench.n"))
    for (auto n : r.integers("bench.n")) {
      if (n < 1) r.fail("bench.n", "network sizes must be >= 1");
      c.bench_n.push_back(static_cast<int>(n));
    }
  if (r.has("bench.reps")) c.bench_reps = static_cast<int>(r.positive("bench.reps"));
  if (r.has("bench.block")) c.bench_block = static_cast<int>(r.positive("bench.block"));

  if (r.has("reps")) c.reps = r.positive("reps");
  if (r.has("seed")) {
    const auto& t = r.text("seed");
    std::uint64_t s = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), s);
    if (ec != std::errc() || ptr != t.data() + t.size()) r.fail("seed", "expected an unsigned 64-bit integer");
    c.seed = s;
  }
  if (r.has("threads")) {
    const auto t = r.integer("threads");
    if (t < 0) r.fail("threads", "must be >= 0");
    c.threads = static_cast<std::size_t>(t);
  }
  if (r.has("out")) c.out = r.text("out");
  return c;
}

// Model for a model spec, with the group sizes optionally replaced.
inline anonqcd::NetworkModel build_model(const ModelSpec& m, std::optional<std::vector<int>> sizes = std::nullopt) {
  const auto& n = sizes ? *sizes : m.sizes;
  switch (m.kind) {
    case ModelKind::binomial: {
      std::vector<anonqcd::GroupDistribution> pre, post;
      for (std::size_t k = 0; k < m.pre.size(); ++k) {
        pre.push_back(anonqcd::binomial_pmf(m.trials, m.pre[k]));
        post.push_back(anonqcd::binomial_pmf(m.trials, m.post[k]));
      }
      return anonqcd::NetworkModel(n, std::move(pre), std::move(post));
    }
    case ModelKind::gaussian: {
      std::vector<anonqcd::GroupDistribution> pre, post;
      for (std::size_t k = 0; k < m.pre_mean.size(); ++k) {
        pre.emplace_back(anonqcd::GaussianDistribution(m.pre_mean[k], m.pre_var[k]));
        post.emplace_back(anonqcd::GaussianDistribution(m.post_mean[k], m.post_var[k]));
      }
      return anonqcd::NetworkModel(n, std::move(pre), std::move(post));
    }
    case ModelKind::discrete: {
      std::vector<anonqcd::GroupDistribution> pre, post;
      for (std::size_t k = 0; k < m.pre_rows.size(); ++k) {
        pre.emplace_back(anonqcd::DiscreteDistribution(m.pre_rows[k]));
        post.emplace_back(anonqcd::DiscreteDistribution(m.post_rows[k]));
      }
      return anonqcd::NetworkModel(n, std::move(pre), std::move(post));
    }
  }
  throw ConfigError("unreachable model kind");
}

}  // namespace cli

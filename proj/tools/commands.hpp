#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anonqcd/detectors.hpp"
#include "anonqcd/exponent.hpp"
#include "anonqcd/montecarlo.hpp"
#include "config.hpp"
#include "csv.hpp"
#include "svg.hpp"

namespace cli {

namespace fs = std::filesystem;

inline fs::path prepare_out(const ExperimentConfig& c) {
  const fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw anonqcd::InvalidArgument("cannot create output directory `" + dir.string() + "`");
  return dir;
}

inline void require_detectors(const ExperimentConfig& c) {
  if (c.detectors.empty()) throw ConfigError("detectors: at least one detector is required");
}

// Threshold for one detector. `auto` uses the analytic run-length bound for
// the efficient test and b = ln(gamma) for the mixture CuSum, whose
// increments are an exact likelihood ratio.
inline double resolve_threshold(const ExperimentConfig& c, const anonqcd::NetworkModel& model,
                                anonqcd::DetectorKind kind) {
  if (c.threshold) return *c.threshold;
  if (!c.gamma) throw ConfigError("threshold: required (a number, or `auto` with threshold.gamma)");
  switch (kind) {
    case anonqcd::DetectorKind::efficient:
      return anonqcd::calibrate_threshold(model, *c.gamma, c.calibrate_resolution).threshold_b;
    case anonqcd::DetectorKind::mixture:
      return std::log(*c.gamma);
    default:
      throw ConfigError("threshold: `auto` is only defined for the mixture CuSum and the efficient test, not " +
                        std::string(anonqcd::to_string(kind)));
  }
}

inline std::string detector_title(std::string_view name) {
  if (name == "mixture") return "mixture CuSum";
  if (name == "bayesian") return "Bayesian CuSum";
  if (name == "generalized") return "generalized CuSum";
  if (name == "efficient") return "efficient test";
  return std::string(name);
}

// ---------------------------------------------------------------- path

inline void plot_trajectory(const fs::path& csv, const fs::path& svg, const std::string& detector, double b,
                            std::optional<std::int64_t> nu) {
  const auto t = read_csv(csv);
  const auto ct = t.column("t"), cs = t.column("statistic");
  Series s{detector_title(detector), {}, {}, false};
  for (const auto& row : t.rows) {
    const double v = to_double(row[cs]);
    if (!std::isfinite(v)) continue;
    s.x.push_back(to_double(row[ct]));
    s.y.push_back(v);
  }
  Plot p;
  p.title = "Statistic path: " + detector_title(detector);
  p.subtitle = "dashed: threshold b = " + svg_detail::num(b) + (nu ? ", change point " + std::to_string(*nu) : "");
  p.xlabel = "time step";
  p.ylabel = "statistic";
  p.series.push_back(std::move(s));
  p.lines.push_back({false, b, "b"});
  if (nu) p.lines.push_back({true, static_cast<double>(*nu), "change"});
  write_svg(svg, p);
}

// Full path to the horizon; `stopped` turns on at the first crossing of b.
inline void cmd_path(const ExperimentConfig& c, std::ostream& log) {
  if (c.detectors.size() != 1) throw ConfigError("detectors: `path` needs exactly one detector");
  const auto model = build_model(c.model);
  const auto kind = c.detectors.front();
  const double b = resolve_threshold(c, model, kind);
  anonqcd::ChangeScenario scenario{c.change_point, c.horizon};
  scenario.validate();
  const auto dir = prepare_out(c);

  auto det = anonqcd::make_detector(kind, model, anonqcd::kInf);
  anonqcd::BatchGenerator gen(
      model, anonqcd::LabelSchedule(c.schedule, model.group_sizes(), anonqcd::derive_seed(c.seed, 0, anonqcd::StreamRole::schedule)),
      anonqcd::derive_seed(c.seed, 0, anonqcd::StreamRole::observations));
  const fs::path csv = dir / "trajectory.csv";
  CsvWriter w(csv, {"t", "statistic", "nu_hat", "stopped"});
  std::optional<std::int64_t> stop;
  for (std::int64_t t = 1; t <= c.horizon; ++t) {
    det->step(gen.next(scenario.regime_at(t)));
    if (!stop && det->statistic() >= b) stop = t;
    const auto nu_hat = det->nu_hat();
    w.row({std::to_string(t), fmt(det->statistic()), nu_hat ? std::to_string(*nu_hat) : "", stop ? "1" : "0"});
  }
  w.close();
  plot_trajectory(csv, dir / "path.svg", std::string(anonqcd::to_string(kind)), b, c.change_point);
  log << "detector " << anonqcd::to_string(kind) << ", b = " << fmt(b) << ", ";
  if (stop)
    log << "first crossing at t = " << *stop << "\n";
  else
    log << "no crossing within " << c.horizon << " steps\n";
  log << "wrote " << csv.string() << " and " << (dir / "path.svg").string() << "\n";
}

// ---------------------------------------------------------------- sweep

inline void plot_sweep(const fs::path& csv, const fs::path& svg) {
  const auto t = read_csv(csv);
  const auto cd = t.column("detector"), cw = t.column("warl"), ca = t.column("wadd");
  std::vector<Series> series;
  for (const auto& row : t.rows) {
    if (series.empty() || series.back().label != detector_title(row[cd]))
      series.push_back({detector_title(row[cd]), {}, {}, true});
    series.back().x.push_back(std::log10(to_double(row[cw])));
    series.back().y.push_back(to_double(row[ca]));
  }
  Plot p;
  p.title = "Detection delay against false-alarm run length";
  p.subtitle = "x axis: log10 of the estimated WARL";
  p.xlabel = "log10 WARL";
  p.ylabel = "WADD";
  p.series = std::move(series);
  write_svg(svg, p);
}

inline anonqcd::MonteCarloOptions mc_options(const ExperimentConfig& c) {
  anonqcd::MonteCarloOptions o;
  o.schedule = c.schedule;
  o.seed = c.seed;
  o.threads = c.threads;
  o.reps = c.reps;
  o.warl_horizon = c.warl_horizon;
  o.wadd_horizon = c.wadd_horizon;
  o.pilot_reps = c.pilot_reps;
  o.keep_runs = c.write_runs;
  return o;
}

inline void cmd_sweep(const ExperimentConfig& c, std::ostream& log) {
  require_detectors(c);
  const auto model = build_model(c.model);
  auto opts = mc_options(c);
  const auto dir = prepare_out(c);

  std::vector<anonqcd::SweepResult> results;
  for (auto kind : c.detectors) {
    const auto spec = anonqcd::detector_spec(kind);
    if (c.sweep_b.empty()) {
      if (opts.warl_horizon < 1) opts.warl_horizon = static_cast<std::int64_t>(std::ceil(50.0 * c.warl_max));
      const auto grid = anonqcd::auto_b_grid(model, spec, c.warl_min, c.warl_max, c.sweep_points, opts);
      results.push_back(anonqcd::sweep_detector(model, spec, grid, opts));
    } else {
      if (opts.warl_horizon < 1) throw ConfigError("sweep.warl_horizon: required with an explicit sweep.b grid");
      results.push_back(anonqcd::sweep_detector(model, spec, c.sweep_b, opts));
    }
    log << spec.name << ": " << results.back().rows.size() << " thresholds\n";
  }

  const fs::path csv = dir / "sweep.csv";
  CsvWriter w(csv, {"detector", "b", "warl", "warl_se", "wadd", "wadd_se", "reps", "censored"});
  for (const auto& r : results)
    for (const auto& row : r.rows) {
      w.row({r.detector, fmt(row.b), fmt(row.warl), fmt(row.warl_se), fmt(row.wadd), fmt(row.wadd_se),
             std::to_string(row.reps), std::to_string(row.censored)});
      if (row.censoring_warning)
        log << "warning: " << r.detector << " at b = " << fmt(row.b)
            << ": more than 1% of delay runs reached the horizon\n";
    }
  w.close();
  if (c.write_runs) {
    CsvWriter runs(dir / "runs.csv", {"detector", "b", "seed", "nu", "stop_time", "censored", "delay"});
    for (const auto& r : results)
      for (const auto& rec : r.runs)
        runs.row({rec.detector, fmt(rec.threshold_b), std::to_string(rec.seed), rec.nu ? std::to_string(*rec.nu) : "",
                  std::to_string(rec.stop_time), rec.censored ? "1" : "0",
                  rec.delay ? std::to_string(*rec.delay) : ""});
    runs.close();
  }
  plot_sweep(csv, dir / "sweep.svg");
  log << "wrote " << csv.string() << " and " << (dir / "sweep.svg").string() << "\n";
}

// ---------------------------------------------------------------- calibrate

inline anonqcd::CalibrationResult cmd_calibrate(const ExperimentConfig& c, std::ostream& log) {
  double gamma = c.calibrate_gamma;
  if (!(gamma > 0) && c.gamma) gamma = *c.gamma;
  if (!(gamma > 1)) throw ConfigError("calibrate.gamma: a target WARL > 1 is required");
  const auto model = build_model(c.model);
  model.require_discrete("calibrate");
  const auto res = anonqcd::calibrate_threshold(model, gamma, c.calibrate_resolution);
  const auto dir = prepare_out(c);
  CsvWriter w(dir / "calibration.csv", {"gamma", "b", "h", "guaranteed_warl", "log_guaranteed_warl", "conservative"});
  w.row({fmt(gamma), fmt(res.threshold_b), fmt(res.h), fmt(res.guaranteed_warl), fmt(res.log_guaranteed_warl),
         res.conservative ? "1" : "0"});
  w.close();
  log << "gamma = " << fmt(gamma) << "\n"
      << "b = " << fmt(res.threshold_b) << "\n"
      << "h = " << fmt(res.h) << "\n"
      << "guaranteed_warl = " << fmt(res.guaranteed_warl) << "\n"
      << "conservative = " << (res.conservative ? "true" : "false") << "\n";
  return res;
}

// ---------------------------------------------------------------- bench

inline std::vector<int> split_evenly(int n, std::size_t groups) {
  const int k = static_cast<int>(groups);
  if (n < k) throw ConfigError("bench.n: every size must give each of the " + std::to_string(k) + " groups a sensor");
  std::vector<int> sizes(groups, n / k);
  for (int i = 0; i < n % k; ++i) ++sizes[groups - 1 - static_cast<std::size_t>(i)];
  return sizes;
}

inline void plot_bench(const fs::path& csv, const fs::path& svg) {
  const auto t = read_csv(csv);
  const auto cn = t.column("n"), cd = t.column("detector"), cm = t.column("median_ns");
  std::map<std::string, Series> by;
  std::vector<std::string> order;
  for (const auto& row : t.rows) {
    if (!by.count(row[cd])) {
      order.push_back(row[cd]);
      by[row[cd]] = Series{detector_title(row[cd]), {}, {}, true};
    }
    by[row[cd]].x.push_back(to_double(row[cn]));
    by[row[cd]].y.push_back(to_double(row[cm]) / 1e3);
  }
  Plot p;
  p.title = "Time per statistic update";
  p.subtitle = "median over timed blocks";
  p.xlabel = "number of sensors n";
  p.ylabel = "microseconds (log scale)";
  p.log_y = true;
  for (const auto& name : order) p.series.push_back(by[name]);
  write_svg(svg, p);
}

inline void cmd_bench(const ExperimentConfig& c, std::ostream& log) {
  if (c.bench_n.empty()) throw ConfigError("bench.n: a ladder of network sizes is required");
  if (c.model.kind == ModelKind::gaussian) throw anonqcd::UnsupportedKind("bench: needs a discrete model");
  const std::size_t groups = c.model.kind == ModelKind::binomial ? c.model.pre.size() : c.model.pre_rows.size();
  std::vector<anonqcd::NetworkModel> models;
  for (int n : c.bench_n) models.push_back(build_model(c.model, split_evenly(n, groups)));
  std::vector<anonqcd::DetectorKind> kinds = c.detectors;
  if (kinds.empty()) kinds = {anonqcd::DetectorKind::mixture, anonqcd::DetectorKind::efficient};
  const auto rows = anonqcd::benchmark_step_time(models, c.bench_reps, kinds, c.seed, c.bench_block);
  const auto dir = prepare_out(c);
  const fs::path csv = dir / "bench.csv";
  CsvWriter w(csv, {"n", "detector", "median_ns", "p90_ns"});
  for (const auto& r : rows) w.row({std::to_string(r.n), r.detector, fmt(r.median_ns), fmt(r.p90_ns)});
  w.close();
  plot_bench(csv, dir / "bench.svg");
  log << "wrote " << csv.string() << " and " << (dir / "bench.svg").string() << "\n";
}

}  // namespace cli

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "anonqcd/detectors.hpp"
#include "anonqcd/errors.hpp"
#include "anonqcd/model.hpp"
#include "anonqcd/random.hpp"

namespace anonqcd {

// Builds a detector for one worker thread. Monte Carlo passes b = +inf and
// reads first passages for any threshold off the recorded path.
using DetectorFactory = std::function<std::unique_ptr<SequentialDetector>(const NetworkModel&, double b)>;

struct DetectorSpec {
  std::string name;
  DetectorFactory factory;
};

inline DetectorSpec detector_spec(DetectorKind kind, DetectorOptions options = {true}) {
  return {std::string(to_string(kind)),
          [kind, options](const NetworkModel& m, double b) { return make_detector(kind, m, b, options); }};
}

struct MonteCarloOptions {
  SchedulePolicy schedule = UniformRandomSchedule{};
  std::uint64_t seed = 1;
  std::size_t threads = 0;          // 0 = hardware concurrency
  std::int64_t reps = 2000;
  std::int64_t warl_horizon = 0;    // required for explicit grids; auto grids use 50 * upper WARL
  std::int64_t wadd_horizon = 0;    // 0 = same as warl_horizon
  std::int64_t pilot_reps = 200;
  bool keep_runs = false;
};

struct RunRecord {
  std::string detector;
  double threshold_b = 0.0;
  std::int64_t replication = 0;
  std::uint64_t seed = 0;
  std::optional<std::int64_t> nu;   // empty = no change
  std::int64_t stop_time = 0;       // the horizon when censored
  bool censored = false;
  std::optional<std::int64_t> delay;  // (stop - nu)^+ for stopped post-change runs
};

// Record highs of the statistic along one path: level strictly increases.
struct LadderPoint {
  std::int64_t time = 0;
  double level = 0.0;
};

struct PathRecord {
  std::vector<LadderPoint> ladder;
  std::int64_t length = 0;  // steps simulated
};

inline std::optional<std::int64_t> first_passage(const PathRecord& path, double b) {
  auto it = std::lower_bound(path.ladder.begin(), path.ladder.end(), b,
                             [](const LadderPoint& p, double v) { return p.level < v; });
  if (it == path.ladder.end()) return std::nullopt;
  return it->time;
}

namespace detail {

inline std::size_t resolve_threads(std::size_t requested, std::int64_t tasks) {
  std::size_t t = requested ? requested : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min<std::size_t>(t, static_cast<std::size_t>(std::max<std::int64_t>(tasks, 1))));
}

// Runs work(i) for i in [0, count). Each worker thread builds its own callable
// with make_worker(), so per-thread state (detectors, caches) is never shared.
template <class MakeWorker>
void run_pool(std::int64_t count, std::size_t threads, MakeWorker&& make_worker) {
  std::atomic<std::int64_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    try {
      auto work = make_worker();
      for (;;) {
        const std::int64_t i = next.fetch_add(1);
        if (i >= count || failed.load()) break;
        work(i);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
      failed = true;
    }
  };
  const std::size_t n = resolve_threads(threads, count);
  if (n == 1) {
    body();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(body);
  }
  if (error) std::rethrow_exception(error);
}

inline double sample_mean(const std::vector<double>& v) {
  CompensatedSum s;
  for (double x : v) s.add(x);
  return s.value() / static_cast<double>(v.size());
}

inline double standard_error(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  CompensatedSum s;
  for (double x : v) s.add((x - mean) * (x - mean));
  return std::sqrt(s.value() / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace detail

// Simulates one replication until the statistic reaches cap_level or the
// horizon. The detector must have been built with b = +inf.
inline PathRecord simulate_path(const NetworkModel& model, SequentialDetector& detector,
                                const SchedulePolicy& policy, std::uint64_t master_seed, std::int64_t replication,
                                std::optional<std::int64_t> nu, std::int64_t horizon, double cap_level) {
  ChangeScenario scenario{nu, horizon};
  scenario.validate();
  detector.reset();
  BatchGenerator gen(model,
                     LabelSchedule(policy, model.group_sizes(),
                                   derive_seed(master_seed, static_cast<std::uint64_t>(replication), StreamRole::schedule)),
                     derive_seed(master_seed, static_cast<std::uint64_t>(replication), StreamRole::observations));
  PathRecord path;
  double best = 0.0;
  for (std::int64_t t = 1; t <= horizon; ++t) {
    detector.step(gen.next(scenario.regime_at(t)));
    path.length = t;
    const double s = detector.statistic();
    if (s > best) {
      best = s;
      path.ladder.push_back({t, s});
      if (s >= cap_level) break;
    }
    if (detector.stopped()) break;
  }
  return path;
}

// All replications of one detector/scenario, in replication order.
inline std::vector<PathRecord> simulate_paths(const NetworkModel& model, const DetectorFactory& factory,
                                              const MonteCarloOptions& options, std::uint64_t master_seed,
                                              std::int64_t reps, std::optional<std::int64_t> nu,
                                              std::int64_t horizon, double cap_level) {
  if (reps < 1) throw InvalidArgument("replications must be >= 1");
  if (horizon < 1) throw InvalidArgument("horizon must be >= 1");
  std::vector<PathRecord> paths(static_cast<std::size_t>(reps));
  detail::run_pool(reps, options.threads, [&] {
    std::shared_ptr<SequentialDetector> det = factory(model, kInf);
    return [&, det](std::int64_t i) {
      paths[static_cast<std::size_t>(i)] =
          simulate_path(model, *det, options.schedule, master_seed, i, nu, horizon, cap_level);
    };
  });
  return paths;
}

inline std::vector<RunRecord> make_run_records(const std::string& name, double b, const std::vector<PathRecord>& paths,
                                               std::uint64_t master_seed, std::optional<std::int64_t> nu,
                                               std::int64_t horizon) {
  std::vector<RunRecord> out;
  out.reserve(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i) {
    RunRecord r;
    r.detector = name;
    r.threshold_b = b;
    r.replication = static_cast<std::int64_t>(i);
    r.seed = derive_seed(master_seed, i, StreamRole::observations);
    r.nu = nu;
    const auto stop = first_passage(paths[i], b);
    r.censored = !stop;
    r.stop_time = stop ? *stop : horizon;
    if (stop && nu) r.delay = std::max<std::int64_t>(*stop - *nu, 0);
    out.push_back(std::move(r));
  }
  return out;
}

struct WaddEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::int64_t reps = 0;
  std::int64_t censored = 0;
  bool censoring_warning = false;  // more than 1% of runs hit the horizon
};

struct WarlEstimate {
  double mean = 0.0;  // censored runs count as the horizon: a lower bound
  double stderr_ = 0.0;
  double censored_fraction = 0.0;
  std::optional<double> completed_mean;  // over uncensored runs only
  std::int64_t reps = 0;
  std::int64_t censored = 0;
};

inline WaddEstimate summarize_wadd(const std::vector<RunRecord>& runs) {
  WaddEstimate e;
  e.reps = static_cast<std::int64_t>(runs.size());
  std::vector<double> delays;
  delays.reserve(runs.size());
  for (const auto& r : runs) {
    if (r.censored)
      ++e.censored;
    else
      delays.push_back(static_cast<double>(*r.delay));
  }
  const double frac = static_cast<double>(e.censored) / static_cast<double>(e.reps);
  if (frac > 0.05)
    throw CensoringError("WADD runs: " + std::to_string(e.censored) + " of " + std::to_string(e.reps) +
                         " replications reached the horizon; raise the horizon");
  e.censoring_warning = frac > 0.01;
  // Censored delays enter at their horizon value, which understates them.
  for (const auto& r : runs)
    if (r.censored) delays.push_back(static_cast<double>(std::max<std::int64_t>(r.stop_time - r.nu.value_or(1), 0)));
  e.mean = detail::sample_mean(delays);
  e.stderr_ = detail::standard_error(delays, e.mean);
  return e;
}

inline WarlEstimate summarize_warl(const std::vector<RunRecord>& runs) {
  WarlEstimate e;
  e.reps = static_cast<std::int64_t>(runs.size());
  std::vector<double> all, done;
  for (const auto& r : runs) {
    all.push_back(static_cast<double>(r.stop_time));
    if (r.censored)
      ++e.censored;
    else
      done.push_back(static_cast<double>(r.stop_time));
  }
  e.mean = detail::sample_mean(all);
  e.stderr_ = detail::standard_error(all, e.mean);
  e.censored_fraction = static_cast<double>(e.censored) / static_cast<double>(e.reps);
  if (!done.empty()) e.completed_mean = detail::sample_mean(done);
  return e;
}

inline std::int64_t wadd_horizon_of(const MonteCarloOptions& o) {
  const std::int64_t h = o.wadd_horizon ? o.wadd_horizon : o.warl_horizon;
  if (h < 1) throw InvalidArgument("a positive horizon is required");
  return h;
}

// Change at nu = 1 from the reset statistic.
inline WaddEstimate estimate_wadd(const NetworkModel& model, const DetectorFactory& factory, double b,
                                  const MonteCarloOptions& options) {
  if (options.reps < 100) throw InvalidArgument("estimate_wadd needs reps >= 100");
  check_threshold(b);
  const std::int64_t horizon = wadd_horizon_of(options);
  const auto paths = simulate_paths(model, factory, options, options.seed, options.reps, 1, horizon, b);
  return summarize_wadd(make_run_records("", b, paths, options.seed, 1, horizon));
}

// Pure pre-change runs (nu = infinity).
inline WarlEstimate estimate_warl(const NetworkModel& model, const DetectorFactory& factory, double b,
                                  const MonteCarloOptions& options) {
  check_threshold(b);
  if (options.warl_horizon < 1) throw InvalidArgument("estimate_warl needs a positive horizon");
  const auto paths =
      simulate_paths(model, factory, options, options.seed, options.reps, std::nullopt, options.warl_horizon, b);
  return summarize_warl(make_run_records("", b, paths, options.seed, std::nullopt, options.warl_horizon));
}

struct SweepRow {
  double b = 0.0;
  double warl = 0.0;
  double warl_se = 0.0;
  double wadd = 0.0;
  double wadd_se = 0.0;
  std::int64_t reps = 0;
  std::int64_t censored = 0;  // WARL and WADD runs that hit the horizon
  bool censoring_warning = false;
};

struct SweepResult {
  std::string detector;
  std::vector<SweepRow> rows;
  std::vector<RunRecord> runs;  // filled when keep_runs is set
};

inline SweepResult sweep_detector(const NetworkModel& model, const DetectorSpec& spec,
                                  const std::vector<double>& b_grid, const MonteCarloOptions& options) {
  if (b_grid.empty()) throw InvalidArgument("empty threshold grid");
  for (std::size_t i = 0; i < b_grid.size(); ++i) {
    check_threshold(b_grid[i]);
    if (i && !(b_grid[i] > b_grid[i - 1])) throw InvalidArgument("threshold grid must be strictly ascending");
  }
  if (options.warl_horizon < 1) throw InvalidArgument("sweep needs a positive WARL horizon");
  const double cap = b_grid.back();
  const std::int64_t wadd_h = wadd_horizon_of(options);
  // Separate stream families for the two scenarios.
  const std::uint64_t warl_seed = options.seed;
  const std::uint64_t wadd_seed = derive_seed(options.seed, 0, StreamRole::auxiliary);
  const auto pre = simulate_paths(model, spec.factory, options, warl_seed, options.reps, std::nullopt,
                                  options.warl_horizon, cap);
  const auto post = simulate_paths(model, spec.factory, options, wadd_seed, options.reps, 1, wadd_h, cap);

  SweepResult result;
  result.detector = spec.name;
  for (double b : b_grid) {
    auto warl_runs = make_run_records(spec.name, b, pre, warl_seed, std::nullopt, options.warl_horizon);
    auto wadd_runs = make_run_records(spec.name, b, post, wadd_seed, 1, wadd_h);
    const auto warl = summarize_warl(warl_runs);
    const auto wadd = summarize_wadd(wadd_runs);
    result.rows.push_back({b, warl.mean, warl.stderr_, wadd.mean, wadd.stderr_, options.reps,
                           warl.censored + wadd.censored, wadd.censoring_warning});
    if (options.keep_runs) {
      for (auto& r : warl_runs) result.runs.push_back(std::move(r));
      for (auto& r : wadd_runs) result.runs.push_back(std::move(r));
    }
  }
  return result;
}

inline std::vector<SweepResult> tradeoff_sweep(const NetworkModel& model, const std::vector<DetectorSpec>& detectors,
                                               const std::vector<double>& b_grid, const MonteCarloOptions& options) {
  std::vector<SweepResult> out;
  for (const auto& d : detectors) out.push_back(sweep_detector(model, d, b_grid, options));
  return out;
}

// Mean first-passage time over pilot paths, censored paths counted at the horizon.
inline double pilot_warl(const std::vector<PathRecord>& paths, double b, std::int64_t horizon) {
  CompensatedSum s;
  for (const auto& p : paths) s.add(static_cast<double>(first_passage(p, b).value_or(horizon)));
  return s.value() / static_cast<double>(paths.size());
}

// Thresholds whose pilot WARL is log-spaced over [warl_lo / 2, 2 * warl_hi],
// so that both ends of the requested range can be interpolated.
inline std::vector<double> auto_b_grid(const NetworkModel& model, const DetectorSpec& spec, double warl_lo,
                                       double warl_hi, int points, const MonteCarloOptions& options) {
  if (!(warl_lo > 1.0 && warl_hi > warl_lo)) throw InvalidArgument("WARL range must satisfy 1 < lo < hi");
  if (points < 2) throw InvalidArgument("auto grid needs at least 2 points");
  const double lo = warl_lo / 2.0, hi = warl_hi * 2.0;
  const auto horizon = static_cast<std::int64_t>(std::ceil(3.0 * hi));
  const auto paths = simulate_paths(model, spec.factory, options, derive_seed(options.seed, 0, StreamRole::pilot),
                                    options.pilot_reps, std::nullopt, horizon, kInf);
  double top = 0.0;
  for (const auto& p : paths)
    if (!p.ladder.empty()) top = std::max(top, p.ladder.back().level);
  if (!(top > 0.0)) throw CalibrationError("pilot paths never rose above zero; cannot place thresholds");
  std::vector<double> grid;
  for (int i = 0; i < points; ++i) {
    const double target = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (points - 1));
    double a = 0.0, c = top;
    if (pilot_warl(paths, c, horizon) < target) {
      grid.push_back(c);
      continue;
    }
    for (int it = 0; it < 100; ++it) {
      const double m = 0.5 * (a + c);
      (pilot_warl(paths, m, horizon) < target ? a : c) = m;
    }
    grid.push_back(c);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end(), [](double x, double y) { return y - x <= 1e-9 * y; }), grid.end());
  return grid;
}

inline std::vector<SweepResult> tradeoff_sweep_auto(const NetworkModel& model,
                                                    const std::vector<DetectorSpec>& detectors, double warl_lo,
                                                    double warl_hi, int points, MonteCarloOptions options) {
  if (options.warl_horizon < 1) options.warl_horizon = static_cast<std::int64_t>(std::ceil(50.0 * warl_hi));
  std::vector<SweepResult> out;
  for (const auto& d : detectors)
    out.push_back(sweep_detector(model, d, auto_b_grid(model, d, warl_lo, warl_hi, points, options), options));
  return out;
}

struct MatchedWadd {
  double wadd = 0.0;
  double se = 0.0;
};

// WADD at a target WARL, linear in ln WARL between the bracketing rows.
inline MatchedWadd wadd_at_warl(const std::vector<SweepRow>& rows, double target) {
  std::vector<SweepRow> r(rows);
  std::sort(r.begin(), r.end(), [](const SweepRow& x, const SweepRow& y) { return x.warl < y.warl; });
  if (r.empty() || target < r.front().warl || target > r.back().warl)
    throw InvalidArgument("target WARL outside the swept range");
  for (std::size_t i = 1; i < r.size(); ++i) {
    if (target <= r[i].warl) {
      const double x0 = std::log(r[i - 1].warl), x1 = std::log(r[i].warl);
      const double w = x1 > x0 ? (std::log(target) - x0) / (x1 - x0) : 1.0;
      return {(1 - w) * r[i - 1].wadd + w * r[i].wadd, (1 - w) * r[i - 1].wadd_se + w * r[i].wadd_se};
    }
  }
  return {r.front().wadd, r.front().wadd_se};
}

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t points = 0;
};

// Least-squares fit of WADD against ln WARL over rows with WARL in [lo, hi].
inline SlopeFit fit_tradeoff_slope(const std::vector<SweepRow>& rows, double lo, double hi) {
  std::vector<double> x, y;
  for (const auto& r : rows)
    if (r.warl >= lo && r.warl <= hi) {
      x.push_back(std::log(r.warl));
      y.push_back(r.wadd);
    }
  if (x.size() < 2) throw InvalidArgument("slope fit needs at least two rows in range");
  const double mx = detail::sample_mean(x), my = detail::sample_mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (!(sxx > 0.0)) throw InvalidArgument("slope fit: rows share one WARL value");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx, x.size()};
}

struct BenchRow {
  int n = 0;
  std::string detector;
  double median_ns = 0.0;
  double p90_ns = 0.0;
};

// Wall-clock per single-batch statistic update, over `reps` timed blocks of
// `block` steps on pre-change data. Caches are off: every step does the work.
inline std::vector<BenchRow> benchmark_step_time(const std::vector<NetworkModel>& models, int reps,
                                                 std::vector<DetectorKind> kinds = {DetectorKind::mixture,
                                                                                    DetectorKind::efficient},
                                                 std::uint64_t seed = 1, int block = 32) {
  if (reps < 1 || block < 1) throw InvalidArgument("benchmark needs reps >= 1 and block >= 1");
  std::vector<BenchRow> rows;
  for (const auto& model : models) {
    model.require_discrete("benchmark_step_time");
    BatchGenerator gen(model, LabelSchedule(UniformRandomSchedule{}, model.group_sizes(), seed),
                       derive_seed(seed, 0, StreamRole::benchmark));
    std::vector<ObservationBatch> batches;
    for (int i = 0; i < reps * block; ++i) batches.push_back(gen.next(Regime::pre));
    for (DetectorKind kind : kinds) {
      auto det = make_detector(kind, model, kInf, DetectorOptions{false});
      // Untimed warm-up over a slice of the data: caches, allocator, clock ramp.
      for (int i = 0; i < std::min(reps * block, 2048); ++i) {
        if (det->stopped()) det->reset();
        det->step(batches[static_cast<std::size_t>(i)]);
      }
      std::vector<double> per_step;
      for (int r = 0; r < reps; ++r) {
        if (det->stopped()) det->reset();
        const auto start = std::chrono::steady_clock::now();
        for (int i = 0; i < block; ++i) {
          if (det->stopped()) det->reset();
          det->step(batches[static_cast<std::size_t>(r * block + i)]);
        }
        const auto stop = std::chrono::steady_clock::now();
        per_step.push_back(std::chrono::duration<double, std::nano>(stop - start).count() / block);
      }
      std::sort(per_step.begin(), per_step.end());
      auto q = [&](double p) {
        const auto idx = static_cast<std::size_t>(std::ceil(p * static_cast<double>(per_step.size()))) - 1;
        return per_step[std::min(idx, per_step.size() - 1)];
      };
      rows.push_back({model.total_sensors(), std::string(to_string(kind)), q(0.5), q(0.9)});
    }
  }
  return rows;
}

}  // namespace anonqcd

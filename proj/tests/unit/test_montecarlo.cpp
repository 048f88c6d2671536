#include <gtest/gtest.h>

#include <cmath>

#include "anonqcd/exponent.hpp"
#include "anonqcd/montecarlo.hpp"
#include "support/models.hpp"

using namespace anonqcd;

namespace {

MonteCarloOptions small_options(std::int64_t reps, std::int64_t horizon, std::size_t threads = 1) {
  MonteCarloOptions o;
  o.reps = reps;
  o.warl_horizon = horizon;
  o.threads = threads;
  o.seed = 42;
  o.keep_runs = true;
  return o;
}

bool same_runs(const std::vector<RunRecord>& a, const std::vector<RunRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i];
    const auto& y = b[i];
    if (x.detector != y.detector || x.threshold_b != y.threshold_b || x.replication != y.replication ||
        x.seed != y.seed || x.nu != y.nu || x.stop_time != y.stop_time || x.censored != y.censored ||
        x.delay != y.delay)
      return false;
  }
  return true;
}

}  // namespace

TEST(FirstPassage, ReadsTheLadder) {
  PathRecord p{{{3, 0.5}, {7, 1.5}, {9, 4.0}}, 12};
  EXPECT_EQ(first_passage(p, 0.1), 3);
  EXPECT_EQ(first_passage(p, 1.5), 7);
  EXPECT_EQ(first_passage(p, 1.6), 9);
  EXPECT_FALSE(first_passage(p, 4.1).has_value());
}

TEST(MonteCarlo, SameSeedSameRecordsAcrossThreadCounts) {
  auto m = fixtures::binomial_pair(1);
  const std::vector<double> grid{1.0, 2.0, 3.0};
  for (DetectorKind k : {DetectorKind::mixture, DetectorKind::efficient}) {
    auto a = sweep_detector(m, detector_spec(k), grid, small_options(150, 5000, 1));
    auto b = sweep_detector(m, detector_spec(k), grid, small_options(150, 5000, 1));
    auto c = sweep_detector(m, detector_spec(k), grid, small_options(150, 5000, 3));
    EXPECT_TRUE(same_runs(a.runs, b.runs));
    EXPECT_TRUE(same_runs(a.runs, c.runs)) << to_string(k);
    ASSERT_EQ(a.rows.size(), c.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      EXPECT_EQ(a.rows[i].warl, c.rows[i].warl);
      EXPECT_EQ(a.rows[i].wadd, c.rows[i].wadd);
      EXPECT_EQ(a.rows[i].warl_se, c.rows[i].warl_se);
    }
  }
}

TEST(MonteCarlo, RecordsMatchDirectSimulation) {
  // A sweep row must agree with running the detector at that threshold.
  auto m = fixtures::binomial_pair(1);
  auto opts = small_options(100, 3000);
  auto res = sweep_detector(m, detector_spec(DetectorKind::mixture), {2.5}, opts);
  for (std::int64_t r = 0; r < 100; ++r) {
    auto det = make_mixture_cusum(m, 2.5);
    BatchGenerator gen(m,
                       LabelSchedule(UniformRandomSchedule{}, m.group_sizes(),
                                     derive_seed(opts.seed, static_cast<std::uint64_t>(r), StreamRole::schedule)),
                       derive_seed(opts.seed, static_cast<std::uint64_t>(r), StreamRole::observations));
    while (!det->stopped() && det->time() < 3000) det->step(gen.next(Regime::pre));
    const auto& rec = res.runs[static_cast<std::size_t>(r)];
    ASSERT_FALSE(rec.nu.has_value());
    EXPECT_EQ(rec.censored, !det->stopped());
    EXPECT_EQ(rec.stop_time, det->stopped() ? *det->stop_time() : 3000);
  }
}

TEST(MonteCarlo, SingleGroupDelayMatchesClassicalApproximation) {
  // K = 1: the mixture CuSum is the classical CuSum, with delay about b / D.
  auto m = fixtures::discrete_model({1}, {{0.6, 0.4}}, {{0.4, 0.6}});
  const double D = 0.4 * std::log(0.4 / 0.6) + 0.6 * std::log(0.6 / 0.4);
  MonteCarloOptions o = small_options(1000, 20000);
  const auto e = estimate_wadd(m, detector_spec(DetectorKind::mixture).factory, 8.0, o);
  EXPECT_NEAR(e.mean, 8.0 / D, 0.15 * 8.0 / D);
  EXPECT_EQ(e.censored, 0);
}

TEST(MonteCarlo, TinyThresholdStopsAlmostImmediately) {
  auto m = fixtures::binomial_pair(1);
  const auto e = estimate_wadd(m, detector_spec(DetectorKind::mixture).factory, 1e-9, small_options(500, 1000));
  EXPECT_LE(e.mean, 1.0);
}

TEST(MonteCarlo, HugeThresholdCensorsEveryWarlRun) {
  auto m = fixtures::binomial_pair(1);
  const auto e = estimate_warl(m, detector_spec(DetectorKind::mixture).factory, 1e6, small_options(50, 40));
  EXPECT_EQ(e.mean, 40.0);
  EXPECT_EQ(e.censored_fraction, 1.0);
  EXPECT_EQ(e.censored, 50);
  EXPECT_FALSE(e.completed_mean.has_value());
}

TEST(MonteCarlo, WaddCensoringEscalates) {
  auto m = fixtures::binomial_pair(1);
  // Delay at b = 40 is far beyond a horizon of 5.
  EXPECT_THROW(estimate_wadd(m, detector_spec(DetectorKind::mixture).factory, 40.0, small_options(100, 5)),
               CensoringError);
  EXPECT_THROW(estimate_wadd(m, detector_spec(DetectorKind::mixture).factory, 1.0, small_options(99, 100)),
               InvalidArgument);

  std::vector<RunRecord> runs(100);
  for (std::int64_t i = 0; i < 100; ++i) {
    runs[static_cast<std::size_t>(i)].nu = 1;
    runs[static_cast<std::size_t>(i)].stop_time = 10;
    runs[static_cast<std::size_t>(i)].delay = 9;
  }
  for (int i = 0; i < 3; ++i) {
    runs[static_cast<std::size_t>(i)].censored = true;
    runs[static_cast<std::size_t>(i)].delay.reset();
    runs[static_cast<std::size_t>(i)].stop_time = 50;
  }
  const auto e = summarize_wadd(runs);
  EXPECT_TRUE(e.censoring_warning);
  EXPECT_EQ(e.censored, 3);
  EXPECT_NEAR(e.mean, (97 * 9.0 + 3 * 49.0) / 100, 1e-12);
}

TEST(MonteCarlo, CensoredRecordsCarryTheHorizon) {
  auto m = fixtures::binomial_pair(1);
  auto o = small_options(100, 60);
  o.wadd_horizon = 10000;
  auto res = sweep_detector(m, detector_spec(DetectorKind::bayesian), {30.0}, o);
  int censored = 0;
  for (const auto& r : res.runs) {
    if (r.nu || !r.censored) continue;
    ++censored;
    EXPECT_EQ(r.stop_time, 60);
    EXPECT_FALSE(r.delay.has_value());
  }
  EXPECT_GT(censored, 0);
  EXPECT_EQ(res.rows[0].censored, censored);
}

TEST(MonteCarlo, StandardErrorShrinksWithReplications) {
  auto m = fixtures::binomial_pair(1);
  auto f = detector_spec(DetectorKind::mixture).factory;
  const auto a = estimate_warl(m, f, 3.0, small_options(400, 100000));
  auto o = small_options(1600, 100000);
  o.seed = 43;
  const auto b = estimate_warl(m, f, 3.0, o);
  EXPECT_NEAR(a.stderr_ / b.stderr_, 2.0, 0.3 * 2.0);
}

TEST(MonteCarlo, WarlDoesNotDependOnTheSchedule) {
  auto m = fixtures::binomial_pair(1);
  for (DetectorKind k : {DetectorKind::mixture, DetectorKind::efficient}) {
    auto o1 = small_options(800, 100000);
    auto o2 = o1;
    o2.seed = 77;
    o2.schedule = FixedSchedule{Labeling{{1, 0}}};
    const auto a = estimate_warl(m, detector_spec(k).factory, 3.0, o1);
    const auto b = estimate_warl(m, detector_spec(k).factory, 3.0, o2);
    const double pooled = std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_);
    EXPECT_LE(std::abs(a.mean - b.mean), 3 * pooled) << to_string(k);
  }
}

TEST(MonteCarlo, SweepIsMonotoneInThreshold) {
  auto m = fixtures::binomial_pair(1);
  for (DetectorKind k : {DetectorKind::mixture, DetectorKind::bayesian, DetectorKind::generalized,
                         DetectorKind::efficient}) {
    auto res = sweep_detector(m, detector_spec(k), {0.5, 1.0, 2.0, 3.0, 4.0}, small_options(200, 100000));
    ASSERT_EQ(res.rows.size(), 5u);
    for (std::size_t i = 1; i < res.rows.size(); ++i) {
      // Common paths across thresholds make the estimates exactly monotone.
      EXPECT_GE(res.rows[i].warl, res.rows[i - 1].warl) << to_string(k);
      EXPECT_GE(res.rows[i].wadd, res.rows[i - 1].wadd) << to_string(k);
    }
  }
}

TEST(MonteCarlo, SweepValidatesInputs) {
  auto m = fixtures::binomial_pair(1);
  EXPECT_TRUE(tradeoff_sweep(m, {}, {1.0}, small_options(10, 10)).empty());
  EXPECT_THROW(sweep_detector(m, detector_spec(DetectorKind::mixture), {2.0, 1.0}, small_options(10, 10)),
               InvalidArgument);
  EXPECT_THROW(sweep_detector(m, detector_spec(DetectorKind::mixture), {}, small_options(10, 10)), InvalidArgument);
  EXPECT_THROW(sweep_detector(m, detector_spec(DetectorKind::mixture), {0.0}, small_options(10, 10)),
               InvalidArgument);
  auto single = sweep_detector(m, detector_spec(DetectorKind::mixture), {1.0}, small_options(100, 1000));
  EXPECT_EQ(single.rows.size(), 1u);
}

TEST(MonteCarlo, WorkerErrorsPropagate) {
  auto m = fixtures::binomial_pair(1);
  DetectorFactory broken = [](const NetworkModel&, double) -> std::unique_ptr<SequentialDetector> {
    throw ConfigError("no detector");
  };
  EXPECT_THROW(estimate_warl(m, broken, 1.0, small_options(20, 10, 2)), ConfigError);
}

TEST(MonteCarlo, AutoGridCoversTheRequestedRange) {
  auto m = fixtures::binomial_pair(1);
  auto o = small_options(200, 0);
  o.pilot_reps = 200;
  const auto spec = detector_spec(DetectorKind::mixture);
  const auto grid = auto_b_grid(m, spec, 20, 200, 6, o);
  ASSERT_GE(grid.size(), 2u);
  for (std::size_t i = 1; i < grid.size(); ++i) EXPECT_GT(grid[i], grid[i - 1]);
  auto results = tradeoff_sweep_auto(m, {spec}, 20, 200, 6, o);
  ASSERT_EQ(results.size(), 1u);
  EXPECT_LE(results[0].rows.front().warl, 20.0);
  EXPECT_GE(results[0].rows.back().warl, 200.0);
  EXPECT_NO_THROW(wadd_at_warl(results[0].rows, 100.0));
}

TEST(Tradeoff, MatchedWaddInterpolatesInLogWarl) {
  std::vector<SweepRow> rows{{1.0, 100.0, 5.0, 10.0, 0.5, 100, 0, false},
                             {2.0, 1000.0, 50.0, 20.0, 1.0, 100, 0, false}};
  const auto mid = wadd_at_warl(rows, std::sqrt(100.0 * 1000.0));
  EXPECT_NEAR(mid.wadd, 15.0, 1e-12);
  EXPECT_NEAR(mid.se, 0.75, 1e-12);
  EXPECT_NEAR(wadd_at_warl(rows, 100.0).wadd, 10.0, 1e-12);
  EXPECT_THROW(wadd_at_warl(rows, 50.0), InvalidArgument);
  EXPECT_THROW(wadd_at_warl(rows, 2000.0), InvalidArgument);
}

TEST(Tradeoff, SlopeFitRecoversALine) {
  std::vector<SweepRow> rows;
  for (double w : {50.0, 100.0, 1000.0, 10000.0, 50000.0}) rows.push_back({0, w, 0, 3.0 + 2.5 * std::log(w), 0, 1, 0, false});
  const auto fit = fit_tradeoff_slope(rows, 100.0, 10000.0);
  EXPECT_EQ(fit.points, 3u);
  EXPECT_NEAR(fit.slope, 2.5, 1e-12);
  EXPECT_NEAR(fit.intercept, 3.0, 1e-10);
  EXPECT_THROW(fit_tradeoff_slope(rows, 1e6, 1e7), InvalidArgument);
}

TEST(Benchmark, OneRowPerModelAndDetector) {
  std::vector<NetworkModel> models{fixtures::binomial_pair(1), fixtures::binomial_pair(2)};
  const auto rows = benchmark_step_time(models, 5);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].n, 2);
  EXPECT_EQ(rows[0].detector, "mixture");
  EXPECT_EQ(rows[1].detector, "efficient");
  EXPECT_EQ(rows[3].n, 4);
  for (const auto& r : rows) {
    EXPECT_GT(r.median_ns, 0.0);
    EXPECT_GE(r.p90_ns, r.median_ns);
  }
  // n = 2: both updates well under 1 ms.
  EXPECT_LT(rows[0].median_ns, 1e6);
  EXPECT_LT(rows[1].median_ns, 1e6);
  EXPECT_THROW(benchmark_step_time({fixtures::gaussian_pair()}, 5), UnsupportedKind);
}

TEST(Benchmark, RepeatedMediansAreStable) {
  std::vector<NetworkModel> models{fixtures::binomial_pair(2)};
  const auto a = benchmark_step_time(models, 100);
  const auto b = benchmark_step_time(models, 100);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_NEAR(b[i].median_ns, a[i].median_ns, 0.25 * a[i].median_ns) << a[i].detector;
}

TEST(Tradeoff, MixtureSlopeIsTheReciprocalKl) {
  // WADD ~ ln(WARL) / D for the exact likelihood-ratio CuSum, D the KL
  // divergence between the post- and pre-change laws of one unordered batch.
  auto m = fixtures::binomial_pair(1);
  auto o = small_options(2000, 0, 0);
  o.keep_runs = false;
  const auto res = tradeoff_sweep_auto(m, {detector_spec(DetectorKind::mixture)}, 1e2, 1e4, 8, o);
  const double slope = fit_tradeoff_slope(res[0].rows, 1e2, 1e4).slope;
  const double want = 1.0 / exact_mixture_kl(m);
  EXPECT_NEAR(slope, want, 0.2 * want);
}

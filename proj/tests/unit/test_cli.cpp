#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "config.hpp"
#include "csv.hpp"
#include "presets.hpp"

namespace fs = std::filesystem;

namespace {

cli::ExperimentConfig from_text(const std::string& text) { return cli::interpret(cli::parse_config_text(text)); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("anonqcd_cli_test_" + name);
  fs::remove_all(dir);
  return dir;
}

struct Run {
  int code;
  std::string out, err;
};

Run run_cli(const std::string& args, const fs::path& dir) {
  fs::create_directories(dir);
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(ANONQCD_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

const char* kBinomialPair = R"(
model.kind = binomial
model.sizes = 1 1
model.trials = 10
model.pre = 0.5 0.5
model.post = 0.3 0.7
)";

}  // namespace

TEST(Config, SectionsPrefixKeysAndCommentsAreIgnored) {
  const auto raw = cli::parse_config_text(R"(# leading comment
command = sweep   # trailing comment
[model]
sizes = 2 3
kind = binomial
[]
reps = 17
)");
  EXPECT_EQ(raw.values.at("command"), "sweep");
  EXPECT_EQ(raw.values.at("model.sizes"), "2 3");
  EXPECT_EQ(raw.values.at("model.kind"), "binomial");
  EXPECT_EQ(raw.values.at("reps"), "17");
  EXPECT_EQ(raw.lines.at("model.sizes"), 4);
}

TEST(Config, BinomialModelIsBuilt) {
  const auto c = from_text(std::string(kBinomialPair) + "detectors = mixture efficient\nthreshold = 3\n");
  EXPECT_EQ(c.detectors.size(), 2u);
  ASSERT_TRUE(c.threshold);
  EXPECT_EQ(*c.threshold, 3.0);
  const auto m = cli::build_model(c.model);
  EXPECT_EQ(m.total_sensors(), 2);
  EXPECT_EQ(m.alphabet_size(), 11u);
}

TEST(Config, ErrorsNameTheKeyAndLine) {
  try {
    from_text(std::string(kBinomialPair) + "reps = many\n");
    FAIL() << "expected ConfigError";
  } catch (const anonqcd::ConfigError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("reps"), std::string::npos) << what;
    EXPECT_NE(what.find("line 7"), std::string::npos) << what;
  }
}

TEST(Config, RejectsBadInput) {
  const std::string base(kBinomialPair);
  for (const std::string bad : {"colour = red\n", "detectors = mixture mixture\n", "detectors = oracle\n",
                                "threshold = -1\n", "threshold = auto\n", "threshold = auto\nthreshold.gamma = 1\n",
                                "scenario.change_point = 0\n", "sweep.b = 3 2\n", "model.pre_mean = 0 0\n",
                                "schedule.policy = fixed\nschedule.labels = 1 1\n", "calibrate.gamma = 0.5\n",
                                "seed = -4\n", "command = plot\n"})
    EXPECT_THROW(from_text(base + bad), anonqcd::ConfigError) << bad;
  EXPECT_THROW(from_text("model.kind = binomial\nmodel.pre = .5\nmodel.post = .3\n"), anonqcd::ConfigError);
  EXPECT_THROW(from_text("model.sizes = 1 1\nmodel.pre = .5\nmodel.post = .3 .7\n"), anonqcd::ConfigError);
}

TEST(Config, OverlayReplacesValues) {
  auto base = cli::parse_config_text(std::string(kBinomialPair) + "reps = 10\n");
  cli::overlay(base, cli::parse_config_text("reps = 20\nseed = 9\n"));
  const auto c = cli::interpret(base);
  EXPECT_EQ(c.reps, 20);
  EXPECT_EQ(c.seed, 9u);

  auto grid = cli::parse_config_text(std::string(kBinomialPair) + "sweep.warl_max = 500\n");
  cli::overlay(grid, cli::parse_config_text("sweep.b = 1 2\n"));
  EXPECT_EQ(cli::interpret(grid).sweep_b, (std::vector<double>{1, 2}));
  cli::overlay(grid, cli::parse_config_text("sweep.points = 3\n"));
  EXPECT_TRUE(cli::interpret(grid).sweep_b.empty());
}

TEST(Config, DiscreteRowsAndFixedSchedule) {
  const auto c = from_text(R"(
model.kind = discrete
model.sizes = 1 2
model.pre.1 = .5 .5
model.pre.2 = .2 .8
model.post.1 = .4 .6
model.post.2 = .7 .3
schedule.policy = fixed
schedule.labels = 2 1 2
)");
  const auto m = cli::build_model(c.model);
  EXPECT_EQ(m.group_count(), 2u);
  EXPECT_TRUE(std::holds_alternative<anonqcd::FixedSchedule>(c.schedule));
  EXPECT_THROW(from_text(R"(
model.kind = discrete
model.sizes = 1
model.pre.1 = .5 .5
model.post.1 = .4 .6
model.post.2 = .7 .3
)"),
               anonqcd::ConfigError);
}

TEST(Presets, TenFiguresInNaturalOrder) {
  std::vector<std::string> names;
  for (const auto& p : cli::presets()) names.push_back(p.name);
  const std::vector<std::string> want{"fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10"};
  EXPECT_EQ(names, want);
  EXPECT_THROW(cli::preset_text("fig11"), anonqcd::ConfigError);
}

TEST(Presets, FilesMatchEmbeddedCopiesAndValidate) {
  for (const auto& p : cli::presets()) {
    const fs::path file = fs::path(ANONQCD_PRESET_DIR) / (p.name + ".cfg");
    EXPECT_EQ(slurp(file), p.text) << p.name;
    const auto c = cli::interpret(cli::parse_config_text(p.text, p.name));
    EXPECT_FALSE(c.command.empty()) << p.name;
    EXPECT_EQ(c.out, "out/" + p.name);
    if (c.command != "bench") {
      EXPECT_NO_THROW(cli::build_model(c.model)) << p.name;
    }
  }
}

TEST(Presets, LargestNetworkLeavesTheMixtureOut) {
  const auto c = cli::interpret(cli::parse_config_text(cli::preset_text("fig10")));
  int n = 0;
  for (int s : c.model.sizes) n += s;
  EXPECT_EQ(n, 100);
  for (auto k : c.detectors) EXPECT_NE(k, anonqcd::DetectorKind::mixture);
}

TEST(Commands, BenchSplitsSensorsEvenly) {
  EXPECT_EQ(cli::split_evenly(10, 4), (std::vector<int>{2, 2, 3, 3}));
  EXPECT_EQ(cli::split_evenly(4, 2), (std::vector<int>{2, 2}));
  EXPECT_THROW(cli::split_evenly(3, 4), anonqcd::ConfigError);
}

TEST(Commands, AutoThresholdRules) {
  auto c = from_text(std::string(kBinomialPair) + "threshold = auto\nthreshold.gamma = 1000\n");
  const auto m = cli::build_model(c.model);
  EXPECT_NEAR(cli::resolve_threshold(c, m, anonqcd::DetectorKind::mixture), std::log(1000.0), 1e-12);
  const double b = cli::resolve_threshold(c, m, anonqcd::DetectorKind::efficient);
  EXPECT_GE(anonqcd::log_warl_bound(b, anonqcd::compute_h(m).h, m.group_sizes(), m.alphabet_size()),
            std::log(1000.0) - 1e-9);
  EXPECT_THROW(cli::resolve_threshold(c, m, anonqcd::DetectorKind::bayesian), anonqcd::ConfigError);
}

TEST(Cli, PathRerunIsByteIdenticalAndCreatesTheOutputDir) {
  const auto dir = scratch("path");
  const auto a = dir / "nested" / "a", b = dir / "b";
  const std::string args = "path --preset fig1 --set scenario.horizon=600 --out ";
  ASSERT_EQ(run_cli(args + a.string(), dir).code, 0);
  ASSERT_EQ(run_cli(args + b.string(), dir).code, 0);
  const auto ta = slurp(a / "trajectory.csv");
  EXPECT_EQ(ta, slurp(b / "trajectory.csv"));
  EXPECT_TRUE(fs::exists(a / "path.svg"));

  const auto t = cli::read_csv(a / "trajectory.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"t", "statistic", "nu_hat", "stopped"}));
  ASSERT_EQ(t.rows.size(), 600u);
  // `stopped` is a step function that turns on exactly where the statistic first reaches b = 5.
  bool seen = false;
  for (const auto& row : t.rows) {
    seen = seen || cli::to_double(row[1]) >= 5.0;
    EXPECT_EQ(row[3], seen ? "1" : "0") << "t = " << row[0];
  }

  const auto different = dir / "c";
  ASSERT_EQ(run_cli(args + different.string() + " --seed 2", dir).code, 0);
  EXPECT_NE(ta, slurp(different / "trajectory.csv"));
}

TEST(Cli, NoChangeNeverStopsAtALargeThreshold) {
  const auto dir = scratch("nochange");
  const auto r = run_cli("path --preset fig1 --set scenario.change_point=none --set threshold=60 --out " + dir.string(),
                         dir);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& row : cli::read_csv(dir / "trajectory.csv").rows) ASSERT_EQ(row[3], "0");
}

TEST(Cli, SingleThresholdSweep) {
  const auto dir = scratch("sweep");
  const auto r = run_cli("sweep --preset fig3 --reps 50 --set sweep.b=3 --set sweep.warl_horizon=5000 "
                         "--set detectors=mixture --out " + dir.string(),
                         dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = cli::read_csv(dir / "sweep.csv");
  EXPECT_EQ(t.header,
            (std::vector<std::string>{"detector", "b", "warl", "warl_se", "wadd", "wadd_se", "reps", "censored"}));
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][0], "mixture");
  EXPECT_EQ(cli::to_double(t.rows[0][1]), 3.0);
  EXPECT_GT(cli::to_double(t.rows[0][2]), cli::to_double(t.rows[0][4]));
  const auto runs = cli::read_csv(dir / "runs.csv");
  EXPECT_EQ(runs.rows.size(), 100u);  // 50 false-alarm runs and 50 delay runs
  EXPECT_TRUE(fs::exists(dir / "sweep.svg"));
}

TEST(Cli, CalibrateReportsTheBound) {
  const auto dir = scratch("calibrate");
  const auto r = run_cli("calibrate --preset fig3 --set calibrate.gamma=1000 --out " + dir.string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("b = "), std::string::npos);
  const auto t = cli::read_csv(dir / "calibration.csv");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_GE(cli::to_double(t.rows[0][t.column("guaranteed_warl")]), 1000.0 * (1 - 1e-9));
}

TEST(Cli, ErrorsAreStructured) {
  const auto dir = scratch("errors");
  auto r = run_cli("calibrate --preset fig3 --set calibrate.gamma=1 --out " + dir.string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("anonqcd: error [config]"), std::string::npos) << r.err;

  r = run_cli("calibrate --preset fig1 --set calibrate.gamma=100 --out " + dir.string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("[unsupported-kind]"), std::string::npos) << r.err;

  r = run_cli("path --no-such-flag", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("[usage]"), std::string::npos) << r.err;

  r = run_cli("path --preset fig99", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown preset"), std::string::npos) << r.err;
}

TEST(Cli, PresetsListAndShow) {
  const auto dir = scratch("presets");
  auto r = run_cli("presets list", dir);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("fig1\t", 0), 0u);
  EXPECT_NE(r.out.find("\nfig10\t"), std::string::npos);
  r = run_cli("presets show fig4", dir);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, cli::preset_text("fig4"));
}

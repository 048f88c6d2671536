#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"
#include "config.hpp"
#include "presets.hpp"

namespace {

struct Common {
  std::string config, preset, out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::int64_t> reps;
};

void add_common(CLI::App* sub, Common& o) {
  sub->add_option("--config,-c", o.config, "experiment config file")->check(CLI::ExistingFile);
  sub->add_option("--preset,-p", o.preset, "start from a named preset (see `presets list`)");
  sub->add_option("--set", o.sets, "override one key, e.g. --set model.sizes=\"2 2\"")->allow_extra_args(false);
  sub->add_option("--seed", o.seed, "master seed");
  sub->add_option("--out,-o", o.out, "output directory");
  sub->add_option("--threads", o.threads, "worker threads (0 = all cores)");
  sub->add_option("--reps", o.reps, "Monte Carlo replications");
}

// Preset, then config file, then flags, then --set overrides.
cli::ExperimentConfig assemble(const std::string& command, const Common& o) {
  cli::RawConfig raw;
  if (!o.preset.empty()) raw = cli::parse_config_text(cli::preset_text(o.preset), "preset " + o.preset);
  if (!o.config.empty()) cli::overlay(raw, cli::load_config_file(o.config));
  cli::RawConfig top;
  if (o.seed) top.values["seed"] = std::to_string(*o.seed);
  if (o.threads) top.values["threads"] = std::to_string(*o.threads);
  if (o.reps) top.values["reps"] = std::to_string(*o.reps);
  if (!o.out.empty()) top.values["out"] = o.out;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw anonqcd::ConfigError("--set expects key=value, got `" + s + "`");
    const auto parsed = cli::parse_config_text(s, "--set");
    for (const auto& [k, v] : parsed.values) top.values[k] = v;
  }
  cli::overlay(raw, top);
  if (raw.values.count("command") && raw.values.at("command") != command)
    std::cerr << "anonqcd: note: config says command = " << raw.values.at("command") << ", running " << command
              << "\n";
  raw.values["command"] = command;
  return cli::interpret(raw);
}

const char* category(const anonqcd::Error& e) {
  if (dynamic_cast<const anonqcd::ConfigError*>(&e)) return "config";
  if (dynamic_cast<const anonqcd::UnsupportedKind*>(&e)) return "unsupported-kind";
  if (dynamic_cast<const anonqcd::InvalidArgument*>(&e)) return "invalid-argument";
  if (dynamic_cast<const anonqcd::CalibrationError*>(&e)) return "calibration";
  if (dynamic_cast<const anonqcd::CensoringError*>(&e)) return "censoring";
  if (dynamic_cast<const anonqcd::NoConvergence*>(&e)) return "no-convergence";
  if (dynamic_cast<const anonqcd::DegenerateModel*>(&e)) return "degenerate-model";
  if (dynamic_cast<const anonqcd::CapacityError*>(&e)) return "capacity";
  return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quickest change detection in anonymous heterogeneous sensor networks"};
  app.require_subcommand(1);
  Common opts;
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"path", "simulate one statistic path, write trajectory.csv and path.svg"},
      {"sweep", "Monte Carlo WARL/WADD trade-off, write sweep.csv, runs.csv and sweep.svg"},
      {"calibrate", "threshold for a target WARL from the analytic bound"},
      {"bench", "time per statistic update against network size"},
  };
  for (const auto& [name, help] : runs) add_common(app.add_subcommand(name, help), opts);

  auto* pre = app.add_subcommand("presets", "bundled experiment presets");
  pre->require_subcommand(1);
  pre->add_subcommand("list", "list preset names");
  std::string show_name;
  pre->add_subcommand("show", "print a preset's config text")->add_option("name", show_name)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "anonqcd: error [usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    if (pre->parsed()) {
      if (pre->got_subcommand("list"))
        for (const auto& p : cli::presets()) std::cout << p.name << "\t" << p.summary << "\n";
      else
        std::cout << cli::preset_text(show_name);
      return 0;
    }
    for (const auto& [name, help] : runs) {
      if (!app.got_subcommand(name)) continue;
      const auto cfg = assemble(name, opts);
      if (name == "path") cli::cmd_path(cfg, std::cout);
      if (name == "sweep") cli::cmd_sweep(cfg, std::cout);
      if (name == "calibrate") cli::cmd_calibrate(cfg, std::cout);
      if (name == "bench") cli::cmd_bench(cfg, std::cout);
    }
  } catch (const anonqcd::Error& e) {
    std::cerr << "anonqcd: error [" << category(e) << "]: " << e.what() << "\n";
    return dynamic_cast<const anonqcd::ConfigError*>(&e) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "anonqcd: error [runtime]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

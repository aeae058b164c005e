// mfcount: run, sweep, check and plot coupled N-body / Hartree experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "mfcount/experiment.hpp"
#include "mfcount/plot.hpp"

namespace {

using namespace mfcount;

struct Options {
  std::string target;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
  bool strict = false;
};

ExperimentConfig load_with_overrides(const Options& o) {
  ExperimentConfig c = load_config(o.target);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output = o.out;
  return c;
}

void print_summary(const RunReport& r) {
  for (const auto& c : r.checks)
    std::printf("%-24s %s  evaluated=%ld violations=%ld worst_margin=%.3e\n", c.name.c_str(),
                c.passed() ? "ok  " : "FAIL", c.evaluated, c.violations, c.worst_margin);
  if (r.derivative)
    std::printf("%-24s %s  ratio=%.4f coarse=%.3e fine=%.3e\n", "derivative", r.derivative->passed ? "ok  " : "FAIL",
                r.derivative->ratio, r.derivative->coarse_residual, r.derivative->fine_residual);
  for (const auto& w : r.warnings) std::printf("warning: %s\n", w.c_str());
}

int cmd_run(const Options& o) {
  const ExperimentConfig c = load_with_overrides(o);
  if (c.particles.size() != 1)
    throw ConfigError("run takes a single particle number; use sweep for a list");
  const RunOutcome out = execute_run(c, c.particles.front(), c.output, o.strict);
  if (out.report) {
    print_summary(*out.report);
    std::printf("wrote %s (%s)\n", c.output.c_str(), out.exit_code == kExitPass ? "pass" : "fail");
  } else {
    std::fprintf(stderr, "error: %s\n", out.error.c_str());
  }
  return out.exit_code;
}

int cmd_sweep(const Options& o) {
  const ExperimentConfig c = load_with_overrides(o);
  const SweepReport s = execute_sweep(c, c.output, o.jobs, o.strict);
  for (const auto& e : s.entries) {
    std::printf("N=%-4d exit=%d max_alpha=%.6e envelope=%.6e %s\n", e.particles, e.exit_code, e.max_alpha, e.envelope,
                e.error.c_str());
  }
  std::printf("slope=%.4f ci95=[%.4f, %.4f] decreasing=%s\n", s.slope, s.slope_low, s.slope_high,
              s.decreasing ? "yes" : "no");
  int worst = kExitPass;
  for (const auto& e : s.entries) worst = std::max(worst, e.exit_code);
  if (worst == kExitPass && !s.passed) worst = kExitCheckFailed;
  return worst;
}

int cmd_check(const Options& o) {
  const CheckOutcome out = recheck_directory(o.target);
  for (const auto& c : out.checks)
    std::printf("%-32s %s  evaluated=%ld violations=%ld worst_margin=%.3e\n", c.name.c_str(),
                c.passed() ? "ok  " : "FAIL", c.evaluated, c.violations, c.worst_margin);
  bool passed = out.passed;
  if (o.strict && !fs::exists(fs::path(o.target) / "sweep.json")) {
    const Json report = read_json(fs::path(o.target) / "report.json");
    passed = passed && report.value("warnings", Json::array()).empty();
  }
  return passed ? kExitPass : kExitCheckFailed;
}

int cmd_plot(const Options& o) {
  for (const auto& f : plot_directory(o.target)) std::printf("wrote %s\n", f.string().c_str());
  return kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counting-functional experiments for the mean-field limit of bosons"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub, const char* what) {
    sub->add_option("target", o.target, what)->required();
    sub->add_flag("--strict", o.strict, "treat warnings as failures");
  };
  auto* run = app.add_subcommand("run", "run one configuration");
  add_common(run, "config file");
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--out", o.out, "output directory (overrides the config)");

  auto* sweep = app.add_subcommand("sweep", "run every particle number of a configuration");
  add_common(sweep, "config file");
  sweep->add_option("--seed", seed, "override the config seed");
  sweep->add_option("--out", o.out, "output directory (overrides the config)");
  sweep->add_option("--jobs", o.jobs, "runs in flight")->check(CLI::PositiveNumber);

  auto* check = app.add_subcommand("check", "re-run the checks on persisted output");
  add_common(check, "run or sweep directory");

  auto* plot = app.add_subcommand("plot", "write SVG figures for persisted output");
  plot->add_option("target", o.target, "run or sweep directory")->required();

  CLI11_PARSE(app, argc, argv);
  for (auto* sub : {run, sweep})
    if (sub->parsed() && sub->count("--seed")) o.seed = seed;

  try {
    if (run->parsed()) return cmd_run(o);
    if (sweep->parsed()) return cmd_sweep(o);
    if (check->parsed()) return cmd_check(o);
    return cmd_plot(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const CapacityError& e) {
    std::fprintf(stderr, "capacity error: %s\n", e.what());
    return kExitCapacity;
  } catch (const InstabilityError& e) {
    std::fprintf(stderr, "instability: %s\n", e.what());
    return kExitInstability;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

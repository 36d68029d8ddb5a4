// Command-line front end: run, converge, bench.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "fipinn/fipinn.hpp"

#ifndef FIPINN_CONFIG_DIR
#define FIPINN_CONFIG_DIR "configs"
#endif

namespace {

using namespace fipinn;

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, const std::string& strategy,
            const std::string& out) {
  ExperimentConfig cfg = load_config(config);
  if (seed) cfg.seed = *seed;
  if (!strategy.empty()) cfg.strategy = parse_strategy(strategy);
  if (!out.empty()) cfg.output = out;
  const ExperimentRun run = run_experiment(cfg, cfg.output);
  for (const auto& r : run.metrics.trace.rounds) {
    std::printf("round %zu  points %zu  p_hat %.4g  rel_l2 %.4g  loss %.4g  added %zu  %.1fs\n", r.round, r.n_points,
                r.p_hat, r.rel_l2, r.train_loss, r.n_added, r.seconds);
  }
  std::printf("%s  %s  rel_l2 %.6g  stop %s  -> %s\n", cfg.problem.c_str(), to_string(cfg.strategy),
              run.metrics.relative_l2, to_string(run.metrics.trace.stop_reason), cfg.output.c_str());
  return 0;
}

int cmd_converge(const std::string& config, const std::string& axis_name, const std::string& out) {
  const ExperimentConfig cfg = load_config(config);
  const ConvergenceAxis axis = parse_axis(axis_name);
  const auto& grid = axis == ConvergenceAxis::eps_p ? cfg.eps_p_grid : cfg.eps_r_grid;
  const std::string dir = out.empty() ? cfg.output + "/converge_" + axis_name : out;
  const ConvergenceResult res = convergence_study(cfg, axis, grid, dir);
  for (const auto& p : res.points) std::printf("%s = %-8g  median rel_l2 %.4g\n", axis_name.c_str(), p.tolerance, p.median_error);
  std::printf("slope %.3f  (rms residual %.3f)  -> %s\n", res.fit.slope, res.fit.residual, dir.c_str());
  return 0;
}

int cmd_bench(const std::string& suite, const std::string& config_dir, const std::string& out) {
  if (suite != "desk" && suite != "full") throw ConfigError("unknown bench suite '" + suite + "'");
  const auto dir = std::filesystem::path(config_dir) / suite;
  if (!std::filesystem::is_directory(dir)) throw ConfigError("missing preset directory " + dir.string());
  std::vector<std::filesystem::path> presets;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") presets.push_back(e.path());
  std::sort(presets.begin(), presets.end());
  const std::string out_root = out.empty() ? "runs/bench_" + suite : out;
  const Strategy baselines[] = {Strategy::rar, Strategy::uniform};
  std::printf("%-28s %12s %12s %12s %9s\n", "preset", "sais", "rar", "uniform", "seconds");
  for (const auto& p : presets) {
    const ExperimentConfig cfg = load_config(p.string());
    const auto t0 = std::chrono::steady_clock::now();
    const Comparison cmp = compare_strategies(cfg, baselines, (std::filesystem::path(out_root) / p.stem()).string());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%-28s %12.4g %12.4g %12.4g %9.1f\n", p.stem().string().c_str(), median(cmp.final_errors(Strategy::sais)),
                median(cmp.final_errors(Strategy::rar)), median(cmp.final_errors(Strategy::uniform)), secs);
  }
  std::printf("median final relative L2 over seeds; outputs under %s\n", out_root.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Failure-informed adaptive collocation for residual-trained PDE networks"};
  app.require_subcommand(1);

  std::string config, strategy, out, axis, suite, config_dir = FIPINN_CONFIG_DIR;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "Run one adaptive experiment");
  run->add_option("--config", config, "Experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Master seed");
  run->add_option("--strategy", strategy, "Enrichment strategy")->check(CLI::IsMember({"sais", "rar", "uniform"}));
  run->add_option("--out", out, "Output directory");

  auto* conv = app.add_subcommand("converge", "Error-vs-tolerance convergence study");
  conv->add_option("--axis", axis, "Tolerance axis")->required()->check(CLI::IsMember({"eps_p", "eps_r"}));
  conv->add_option("--config", config, "Experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
  conv->add_option("--out", out, "Output directory");

  auto* bench = app.add_subcommand("bench", "Strategy comparison over a preset suite");
  bench->add_option("--suite", suite, "Preset suite")->required()->check(CLI::IsMember({"desk", "full"}));
  bench->add_option("--config-dir", config_dir, "Directory holding desk/ and full/ presets");
  bench->add_option("--out", out, "Output directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, seed, strategy, out);
    if (*conv) return cmd_converge(config, axis, out);
    if (*bench) return cmd_bench(suite, config_dir, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

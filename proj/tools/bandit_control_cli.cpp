#include "bandit_control/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

using namespace bandit_control;

namespace {

constexpr int kValidationError = 2;

void print_aggregates(const RegretReport& report) {
  std::printf("%-14s %-24s %14s %14s %14s %14s\n", "noise", "controller", "total_cost", "final_quarter",
              "regret_fro", "regret_l1op");
  for (const auto& a : report.aggregates)
    std::printf("%-14s %-24s %14.6g %14.6g %14.6g %14.6g\n", a.noise.c_str(), a.controller.c_str(), a.mean_total_cost,
                a.mean_final_quarter, a.mean_regret_fro.value_or(NAN), a.mean_regret_l1op.value_or(NAN));
}

ExperimentConfig load(const std::string& path, const std::vector<std::uint64_t>& seeds) {
  ExperimentConfig cfg = load_config(path);
  if (!seeds.empty()) {
    std::vector<std::uint64_t> sorted = seeds;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ConfigError({"--seeds: must be distinct"});
    cfg.seeds = seeds;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bandit control experiments on linear dynamical systems"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::uint64_t> seeds;
  int threads = 0;

  auto* run = app.add_subcommand("run", "Run every controller on every seed and noise, write CSV outputs");
  run->add_option("--config", config_path, "JSON experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory (defaults to the config's out_dir)");
  run->add_option("--seeds", seeds, "Override the config's seeds")->delimiter(',');
  run->add_option("--threads", threads, "Worker threads (default BANDIT_CONTROL_THREADS or all cores)");

  std::string est_out;
  auto* estimate = app.add_subcommand("estimate", "Least-squares Markov operator estimation study");
  estimate->add_option("--config", config_path, "JSON experiment config")->required()->check(CLI::ExistingFile);
  estimate->add_option("--out", est_out, "CSV file for per-seed errors (stdout if omitted)");
  estimate->add_option("--seeds", seeds, "Override the config's seeds")->delimiter(',');
  estimate->add_option("--threads", threads, "Worker threads");

  std::string param;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "Run the experiment once per parameter value");
  sweep->add_option("--config", config_path, "JSON experiment config")->required()->check(CLI::ExistingFile);
  sweep->add_option("--param", param, "Parameter to sweep")->required();
  sweep->add_option("--values", values, "Values to try")->required()->delimiter(',');
  sweep->add_option("--out", out_dir, "Output directory (defaults to the config's out_dir)");
  sweep->add_option("--seeds", seeds, "Override the config's seeds")->delimiter(',');
  sweep->add_option("--threads", threads, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidationError;
  }

  try {
    if (run->parsed() || sweep->parsed()) {
      ExperimentConfig cfg = load(config_path, seeds);
      if (sweep->parsed()) {
        if (param != "eta_multiplier") throw ConfigError({"--param: only eta_multiplier can be swept"});
        for (double v : values)
          if (!(v > 0)) throw ConfigError({"--values: multipliers must be positive"});
        cfg.eta_multipliers = values;
        std::map<std::string, int> names;
        for (const auto& c : cfg.expanded_controllers())
          if (++names[c.name] > 1) throw ConfigError({"--values: duplicate multiplier"});
      }
      const RegretReport report = run_experiment(cfg, threads);
      const std::string dir = out_dir.empty() ? cfg.out_dir : out_dir;
      const auto files = emit_csv(report, dir);
      print_aggregates(report);
      std::printf("wrote %zu files to %s\n", files.size(), dir.c_str());
    } else if (estimate->parsed()) {
      const ExperimentConfig cfg = load(config_path, seeds);
      const auto rows = run_estimation_study(cfg, threads);
      if (est_out.empty()) {
        write_estimation_csv(rows, std::cout);
      } else {
        std::ofstream os(est_out);
        if (!os) throw std::runtime_error("cannot write " + est_out);
        write_estimation_csv(rows, os);
      }
      std::map<std::size_t, std::vector<double>> by_n;
      for (const auto& r : rows) by_n[r.N].push_back(r.err_l1_op);
      for (auto& [N, errs] : by_n) {
        std::sort(errs.begin(), errs.end());
        const std::size_t m = errs.size();
        const double med = m % 2 ? errs[m / 2] : 0.5 * (errs[m / 2 - 1] + errs[m / 2]);
        std::fprintf(stderr, "N=%zu median err_l1_op=%.6g\n", N, med);
      }
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kValidationError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

#pragma once

#include "bandit_control/baselines.hpp"
#include "bandit_control/control.hpp"

#include <filesystem>

namespace bandit_control {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

struct NoiseSpec {
  std::string name;
  NoiseKind kind = NoiseKind::kGaussian;
  NoiseParams params;
};

struct ControllerSpec {
  std::string name;
  std::string type;  // ebpc_known | ebpc_unknown | bpc | lqr | zero

  // ebpc_*
  std::optional<int> H;
  double R = 1.0;
  double eta_multiplier = 1.0;
  std::optional<double> eta;
  std::optional<double> sigma;
  double sigma_multiplier = 1.0;
  bool sigma_w_squared = false;

  // bpc
  double delta = 0.1;
  double lr = 1e-4;
  double R_bound = 1.0;
};

struct OracleSpec {
  bool enabled = true;
  bool l1_op = true;
  std::size_t markov_length = 0;  // 0 means H
  std::optional<double> R;        // defaults to the first EBPC controller's R
};

struct EstimationStudy {
  std::vector<std::size_t> N{400, 1600, 6400};
  int H = 5;
};

struct ExperimentConfig {
  std::string system_name = "custom";
  LdsParams system;
  std::vector<NoiseSpec> noises;
  Matrix Q, R;  // cost c(y, u) = y'Qy + u'Ru
  std::int64_t T = 2000;
  int H = 5;
  std::vector<std::uint64_t> seeds;
  int moving_avg_window = 50;
  bool stabilize_with_lqr = false;
  std::vector<ControllerSpec> controllers;
  std::vector<double> eta_multipliers;  // each EBPC controller is expanded per value
  OracleSpec oracle;
  EstimationStudy estimation;
  std::string out_dir = "results";

  CostSpec cost() const { return CostSpec(Q, R); }
  // Controllers after eta-multiplier expansion.
  std::vector<ControllerSpec> expanded_controllers() const;
};

// Throws ConfigError listing every violation found.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct TrialRecord {
  std::string noise;
  std::string controller;
  std::uint64_t seed = 0;
  std::uint64_t trace_hash = 0;
  TrialResult trial;
  std::vector<double> moving_avg;
  double total_cost = 0.0;
  double final_quarter_loss = 0.0;
  std::optional<double> oracle_fro, oracle_l1op;
  std::optional<double> regret_fro, regret_l1op;
  std::string error;  // nonempty if the controller threw; such trials are left out of aggregates
};

struct ControllerAggregate {
  std::string noise;
  std::string controller;
  std::size_t seeds = 0;  // successful trials
  double mean_total_cost = 0.0, std_total_cost = 0.0;
  double mean_final_quarter = 0.0, std_final_quarter = 0.0;
  std::optional<double> mean_regret_fro, std_regret_fro;
  std::optional<double> mean_regret_l1op, std_regret_l1op;
  std::vector<double> mean_moving_avg, std_moving_avg;
};

struct RegretReport {
  std::vector<TrialRecord> trials;  // ordered by noise, controller, seed as configured
  std::vector<ControllerAggregate> aggregates;
  int moving_avg_window = 50;

  const ControllerAggregate& aggregate(const std::string& noise, const std::string& controller) const;
};

// Worker count from BANDIT_CONTROL_THREADS, else the hardware concurrency.
int default_thread_count();

RegretReport run_experiment(const ExperimentConfig& config, int threads = 0);

// Trailing mean over min(window, t) entries.
std::vector<double> moving_average(std::span<const double> losses, int window);

// Writes summary.csv, aggregate.csv, controllers.csv and trials/*.csv.
std::vector<std::filesystem::path> emit_csv(const RegretReport& report, const std::filesystem::path& out_dir);

struct EstimationStudyRow {
  std::string noise;
  std::size_t N = 0;
  std::uint64_t seed = 0;
  double err_l1_op = 0.0;
  double residual = 0.0;
  int rank = 0;
};

// Least-squares estimation error against the true operator (first noise spec, every seed and N).
std::vector<EstimationStudyRow> run_estimation_study(const ExperimentConfig& config, int threads = 0);
void write_estimation_csv(const std::vector<EstimationStudyRow>& rows, std::ostream& os);

// Index-stable parallel for; fn(i) must only write slot i.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace bandit_control

#pragma once

#include "bandit_control/bco.hpp"
#include "bandit_control/closed_loop.hpp"
#include "bandit_control/policy.hpp"
#include "bandit_control/sysid.hpp"

#include <deque>

namespace bandit_control {

// sigma_c (sigma_e^2 + sigma_w sigma_min(C) / (1 + ||A||^2)); with
// `square_sigma_w` the middle factor is sigma_w^2 instead.
double sigma_default_known(const LdsParams& params, double sigma_c, double sigma_e, double sigma_w,
                           bool square_sigma_w = false);
double sigma_default_unknown(double sigma_c, double sigma_e);
// c_eta / (du dy L_c H^3 sqrt(T))
double eta_default(int du, int dy, double L_c, int H, double T, double c_eta = 1.0);
// ceil(log(T)^2) clamped to [1, 10].
int theory_memory_length(std::int64_t T);

enum class EbpcMode { kKnown, kUnknown };

struct EbpcConfig {
  int H = 5;
  double R = 1.0;
  std::int64_t T = 1;
  MarkovOperator G;
  double eta = 0.0;
  double sigma = 0.0;
  EbpcMode mode = EbpcMode::kKnown;
  double proximal_weight = 0.5;

  int du() const { return G.du(); }
  int dy() const { return G.dy(); }
  int n() const { return H * du() * dy(); }
  // Frobenius ball of radius R / sqrt(H) around 0, which lies inside the
  // l1-operator ball of radius R.
  ConstraintSet constraint_set() const;
  EbcoConfig ebco_config() const;
  void validate() const;
};

// Bandit controller over disturbance response policies. Observations must
// arrive in order; u_t = 0 for the first H - 1 steps.
class Ebpc : public Controller {
 public:
  // prior_controls[0] is the control played just before this controller
  // takes over (used only for nature's y recovery).
  Ebpc(EbpcConfig config, std::uint64_t seed, std::vector<Vector> prior_controls = {});

  Vector act(std::int64_t t, const Vector& y, const Vector& x) override;
  void feedback(double cost) override;
  double policy_norm() const override { return played_norm_; }

  // Policy played at the last act().
  DrcParams current_policy() const;
  const std::vector<Vector>& ynat_log() const { return ynat_log_; }
  const std::vector<Vector>& control_log() const { return control_log_; }
  const Ebco& optimizer() const { return bco_; }
  const EbpcConfig& config() const { return config_; }

 private:
  EbpcConfig config_;
  Ebco bco_;
  std::deque<Vector> past_controls_;  // most recent first, at most G.length() - 1
  std::vector<Vector> ynat_log_;
  std::vector<Vector> control_log_;
  Vector played_;
  double played_norm_ = 0.0;
  std::optional<std::int64_t> last_t_;
  bool awaiting_feedback_ = false;
};

struct EbpcRunOptions {
  std::optional<Matrix> K;  // pre-stabilizing gain (C = I only); config.G must then describe A + B K
  std::size_t begin = 1;    // first trace step
  std::optional<LdsState> initial;
  std::vector<Vector> prior_controls;
  // Receives the controller after every step (feasibility checks, logging).
  std::function<void(const Ebpc&)> observer;
};

// config.T closed-loop steps starting at trace step options.begin.
TrialResult run_ebpc(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs,
                     const EbpcConfig& config, std::uint64_t seed, const EbpcRunOptions& options = {});

struct UnknownOptions {
  double c_eta = 1.0;
  std::optional<double> sigma;  // overrides sigma_c sigma_e^2 / 8
  std::optional<double> eta;    // overrides the default step size
  std::optional<Matrix> K;
};

struct UnknownDiagnostics {
  EstimationReport estimate;
  EbpcConfig config;  // phase-2 configuration
  std::uint64_t explore_seed = 0;
  std::uint64_t optimizer_seed = 0;
  LdsState phase2_initial;
  std::vector<Vector> phase2_prior_controls;
};

// Phase 1: ceil(sqrt(T)) Gaussian steps and a least-squares fit of 3 base_H
// blocks. Phase 2: EBPC with the estimate, H = 3 base_H, R = 2 base_R, for the
// remaining steps. Costs of both phases are concatenated.
TrialResult run_ebpc_unknown(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs, int base_H,
                             double base_R, std::int64_t T, std::uint64_t seed, const UnknownOptions& options = {},
                             UnknownDiagnostics* diagnostics = nullptr);

std::size_t estimation_length(std::int64_t T);

}  // namespace bandit_control

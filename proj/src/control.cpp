#include "bandit_control/control.hpp"

#include "bandit_control/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace bandit_control {

double sigma_default_known(const LdsParams& params, double sigma_c, double sigma_e, double sigma_w,
                           bool square_sigma_w) {
  const double a = op_norm(params.A);
  const double w = square_sigma_w ? sigma_w * sigma_w : sigma_w;
  return sigma_c * (sigma_e * sigma_e + w * min_singular_value(params.C) / (1.0 + a * a));
}

double sigma_default_unknown(double sigma_c, double sigma_e) { return sigma_c * sigma_e * sigma_e / 8.0; }

double eta_default(int du, int dy, double L_c, int H, double T, double c_eta) {
  if (du < 1 || dy < 1 || H < 1 || !(L_c > 0.0) || !(T > 0.0) || !(c_eta > 0.0))
    throw std::invalid_argument("eta_default: arguments must be positive");
  const double h = H;
  return c_eta / (du * dy * L_c * h * h * h * std::sqrt(T));
}

int theory_memory_length(std::int64_t T) {
  if (T < 1) throw std::invalid_argument("theory_memory_length: T must be >= 1");
  const double l = std::log(static_cast<double>(T));
  return std::clamp(static_cast<int>(std::ceil(l * l)), 1, 10);
}

std::size_t estimation_length(std::int64_t T) {
  if (T < 1) throw std::invalid_argument("estimation_length: T must be >= 1");
  auto N = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(T))));
  while (N > 1 && (N - 1) * (N - 1) >= static_cast<std::size_t>(T)) --N;  // guard sqrt rounding
  return N;
}

// ---------------------------------------------------------------------------

ConstraintSet EbpcConfig::constraint_set() const {
  return ConstraintSet::euclidean_ball(Vector::Zero(n()), R / std::sqrt(static_cast<double>(H)));
}

EbcoConfig EbpcConfig::ebco_config() const {
  EbcoConfig c;
  c.n = n();
  c.H = H;
  c.T = T;
  c.eta = eta;
  c.sigma = sigma;
  c.set = constraint_set();
  c.proximal_weight = proximal_weight;
  return c;
}

void EbpcConfig::validate() const {
  if (H < 1) throw std::invalid_argument("EbpcConfig: H must be >= 1");
  if (!(R > 0.0)) throw std::invalid_argument("EbpcConfig: R must be positive");
  if (T < H) throw std::invalid_argument("EbpcConfig: T must be >= H");
  if (G.length() == 0 || G.du() < 1 || G.dy() < 1) throw std::invalid_argument("EbpcConfig: empty Markov operator");
  if (!(eta > 0.0)) throw std::invalid_argument("EbpcConfig: eta must be positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("EbpcConfig: sigma must be positive");
}

Ebpc::Ebpc(EbpcConfig config, std::uint64_t seed, std::vector<Vector> prior_controls)
    : config_((config.validate(), std::move(config))), bco_(config_.ebco_config(), seed) {
  const std::size_t keep = config_.G.length() - 1;
  for (auto& u : prior_controls) {
    if (past_controls_.size() >= keep) break;
    if (u.size() != config_.du()) throw std::invalid_argument("Ebpc: prior control dimension mismatch");
    past_controls_.push_back(std::move(u));
  }
}

Vector Ebpc::act(std::int64_t t, const Vector& y, const Vector&) {
  if (awaiting_feedback_) throw std::logic_error("Ebpc: act() called twice without feedback");
  if (last_t_ && t != *last_t_ + 1)
    throw std::logic_error("Ebpc: expected observation for t=" + std::to_string(*last_t_ + 1) + ", got t=" +
                           std::to_string(t));
  if (y.size() != config_.dy()) throw std::invalid_argument("Ebpc: observation dimension mismatch");
  last_t_ = t;

  const std::vector<Vector> past(past_controls_.begin(), past_controls_.end());
  ynat_log_.push_back(recover_natures_y(y, past, config_.G));

  played_ = bco_.play();
  played_norm_ = played_.norm();
  const auto k = static_cast<std::size_t>(bco_.t());
  const auto H = static_cast<std::size_t>(config_.H);
  Vector u = Vector::Zero(config_.du());
  if (k >= H) {
    const DrcParams M = DrcParams::unflatten(played_, config_.H, config_.du(), config_.dy());
    std::vector<Vector> recent;
    recent.reserve(H);
    for (std::size_t j = 0; j < H; ++j) recent.push_back(ynat_log_[k - 1 - j]);
    u = drc_control(M, recent);
  }

  control_log_.push_back(u);
  if (config_.G.length() > 1) {
    past_controls_.push_front(u);
    if (past_controls_.size() > config_.G.length() - 1) past_controls_.pop_back();
  }
  awaiting_feedback_ = true;
  return u;
}

void Ebpc::feedback(double cost) {
  if (!awaiting_feedback_) throw std::logic_error("Ebpc: feedback() without a preceding act()");
  bco_.feedback(cost);
  awaiting_feedback_ = false;
}

DrcParams Ebpc::current_policy() const {
  if (played_.size() == 0) throw std::logic_error("Ebpc: no policy played yet");
  return DrcParams::unflatten(played_, config_.H, config_.du(), config_.dy());
}

namespace {

void check_gain(const LdsParams& system, const Matrix& K) {
  if (K.rows() != system.du() || K.cols() != system.dx())
    throw std::invalid_argument("pre-stabilizing gain must be du x dx");
  if (system.C.rows() != system.C.cols() || !system.C.isIdentity(0.0))
    throw std::invalid_argument("pre-stabilization requires full observation (C = I)");
}

// Nature's y is recovered with a truncated operator, so the dropped tail feeds
// the controls back into the policy input. Small gain: R * tail < 1.
void check_truncation(const LdsParams& acting, const EbpcConfig& config) {
  if (spectral_radius(acting.A) >= 1.0) return;
  const double tail = decay_certificate(acting).tail_norm(config.G.length());
  if (config.R * tail >= 1.0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "run_ebpc: R * (Markov tail beyond %zu blocks) = %.3g >= 1; the loop may diverge",
                  config.G.length(), config.R * tail);
    warn(buf);
  }
}

}  // namespace

TrialResult run_ebpc(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs,
                     const EbpcConfig& config, std::uint64_t seed, const EbpcRunOptions& options) {
  if (config.du() != system.du() || config.dy() != system.dy())
    throw std::invalid_argument("run_ebpc: Markov operator does not match the system dimensions");
  Ebpc ebpc(config, seed, options.prior_controls);

  struct Observed : Controller {
    Ebpc& inner;
    const std::function<void(const Ebpc&)>& observer;
    Observed(Ebpc& e, const std::function<void(const Ebpc&)>& o) : inner(e), observer(o) {}
    Vector act(std::int64_t t, const Vector& y, const Vector& x) override { return inner.act(t, y, x); }
    void feedback(double c) override {
      inner.feedback(c);
      if (observer) observer(inner);
    }
    double policy_norm() const override { return inner.policy_norm(); }
  } observed(ebpc, options.observer);

  LoopSegment seg;
  seg.begin = options.begin;
  seg.steps = static_cast<std::size_t>(config.T);
  seg.initial = options.initial;
  if (options.K) {
    check_gain(system, *options.K);
    check_truncation(stabilized(system, *options.K), config);
    StabilizedController wrapped(observed, *options.K);
    return run_closed_loop(system, trace, costs, wrapped, seg);
  }
  check_truncation(system, config);
  return run_closed_loop(system, trace, costs, observed, seg);
}

TrialResult run_ebpc_unknown(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs, int base_H,
                             double base_R, std::int64_t T, std::uint64_t seed, const UnknownOptions& options,
                             UnknownDiagnostics* diagnostics) {
  if (T < 4) throw std::invalid_argument("run_ebpc_unknown: T must be >= 4");
  if (base_H < 1 || !(base_R > 0.0)) throw std::invalid_argument("run_ebpc_unknown: bad base_H / base_R");
  if (trace.length() < static_cast<std::size_t>(T)) throw std::invalid_argument("run_ebpc_unknown: trace too short");
  if (options.K) check_gain(system, *options.K);

  const std::size_t N = estimation_length(T);
  const int H = 3 * base_H;
  if (static_cast<std::int64_t>(N) + H > T) throw std::invalid_argument("run_ebpc_unknown: T too small for 3 H");

  const std::uint64_t explore_seed = derive_seed(seed, 1);
  const std::uint64_t optimizer_seed = derive_seed(seed, 2);

  EstimationOptions est;
  est.costs = costs;
  est.K = options.K;
  EstimationPhase phase1 = run_estimation_phase(system, trace, N, H, explore_seed, est);

  EbpcConfig cfg;
  cfg.H = H;
  cfg.R = 2.0 * base_R;
  cfg.T = T - static_cast<std::int64_t>(N);
  cfg.G = phase1.report.G_hat;
  cfg.mode = EbpcMode::kUnknown;
  cfg.sigma = options.sigma.value_or(sigma_default_unknown(costs.sigma_c(), trace.params.sigma_e));
  cfg.eta = options.eta.value_or(
      eta_default(system.du(), system.dy(), costs.L_c(), H, static_cast<double>(T), options.c_eta));

  EbpcRunOptions run;
  run.K = options.K;
  run.begin = N + 1;
  run.initial = phase1.trial.final_state;
  run.prior_controls.assign(phase1.controls.rbegin(), phase1.controls.rend());

  TrialResult out = phase1.trial;
  out.append(run_ebpc(system, trace, costs, cfg, optimizer_seed, run));

  if (diagnostics) {
    diagnostics->estimate = phase1.report;
    diagnostics->config = cfg;
    diagnostics->explore_seed = explore_seed;
    diagnostics->optimizer_seed = optimizer_seed;
    diagnostics->phase2_initial = *run.initial;
    diagnostics->phase2_prior_controls = run.prior_controls;
  }
  return out;
}

}  // namespace bandit_control

#pragma once

#include "bandit_control/closed_loop.hpp"
#include "bandit_control/policy.hpp"

#include <deque>

namespace bandit_control {

struct LqrGain {
  Matrix K;  // du x dx, u = K x
  Matrix P;
  int iterations = 0;
};

// Riccati fixed-point iteration, stopping when the max-abs change of P is <= tol.
LqrGain dare_solve(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, double tol = 1e-10,
                   int max_iters = 100000);
// Max-abs entry of Q + A'PA - A'PB (R + B'PB)^{-1} B'PA - P.
double dare_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, const Matrix& P);

Vector lqr_control(const LqrGain& gain, const Vector& x);

class LqrController : public Controller {
 public:
  explicit LqrController(Matrix K) : K_(std::move(K)) {}
  Vector act(std::int64_t, const Vector&, const Vector& x) override { return K_ * x; }
  void feedback(double) override {}

 private:
  Matrix K_;
};

// ---------------------------------------------------------------------------
// Bandit perturbation controller over recovered state disturbances.

struct BpcConfig {
  int H = 5;
  double delta = 0.1;
  double lr = 1e-4;
  double R_bound = 1.0;
  std::int64_t T = 1;
  void validate() const;
};

// u_t = sum_{i<H} M^[i] w_hat_{t-1-i} with M^[i] of shape du x dx, where
// w_hat_s = x_{s+1} - A x_s - B u_s on the model (A, B) the controller acts on.
class Bpc : public Controller {
 public:
  Bpc(const LdsParams& model, BpcConfig config, std::uint64_t seed);
  Vector act(std::int64_t t, const Vector& y, const Vector& x) override;
  void feedback(double cost) override;
  double policy_norm() const override { return played_.norm(); }

  const Vector& center() const { return M_; }
  const Vector& last_gradient() const { return last_grad_; }

 private:
  Matrix A_, B_;
  BpcConfig config_;
  int n_;
  Rng rng_;
  Vector M_;       // flattened (i, a, b) like DrcParams
  Vector played_;
  Vector last_grad_;
  std::deque<Vector> eps_;    // most recent first
  std::deque<Vector> w_hat_;  // most recent first
  std::optional<Vector> prev_x_, prev_u_;
};

// Frobenius clip: rescales v to norm `radius` when it is larger.
Vector clip_frobenius(const Vector& v, double radius);

TrialResult run_bpc(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs, const BpcConfig& config,
                    std::uint64_t seed, const std::optional<Matrix>& K = {});

// ---------------------------------------------------------------------------
// Best fixed disturbance response policy in hindsight.

struct HindsightOptions {
  std::size_t markov_length = 0;  // truncation of G used by the counterfactual; 0 means H
  std::optional<Matrix> K;        // total control K x + v, policy acting on A + B K
  bool l1_op = false;             // also optimize over the l1-operator ball
  double tol = 1e-7;
  int max_pg_iters = 10000;
  int max_fw_iters = 20000;
};

// J(m) = m'Pm + 2 q'm + c0 over the flattened policy.
struct CounterfactualQuadratic {
  Matrix P;
  Vector q;
  double c0 = 0.0;
  int H = 0, du = 0, dy = 0;
  double value(const Vector& m) const { return m.dot(P * m) + 2.0 * q.dot(m) + c0; }
  Vector grad(const Vector& m) const { return 2.0 * (P * m + q); }
};

CounterfactualQuadratic counterfactual_quadratic(const LdsParams& system, const NoiseTrace& trace,
                                                 const CostSpec& costs, int H, const HindsightOptions& options = {});

// Same counterfactual cost computed by rolling the signals forward in time.
double counterfactual_cost(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs,
                           const DrcParams& M, const HindsightOptions& options = {});

struct HindsightResult {
  DrcParams M;
  double total_cost = 0.0;
  bool converged = false;
  double projected_grad_norm = 0.0;
  std::optional<DrcParams> M_l1;
  std::optional<double> total_cost_l1;
  double fw_gap = 0.0;
  bool fw_converged = false;
};

// min J over ||M||_F <= R / sqrt(H), and optionally over sum_j ||M^[j]||_op <= R.
HindsightResult best_drc_hindsight(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs, int H,
                                   double R, const HindsightOptions& options = {});

// Exact minimizer of J over the ball ||m|| <= radius.
Vector solve_ball_quadratic(const CounterfactualQuadratic& J, double radius);

}  // namespace bandit_control

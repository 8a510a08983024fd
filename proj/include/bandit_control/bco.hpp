#pragma once

#include "bandit_control/geometry.hpp"

#include <deque>
#include <functional>
#include <iosfwd>
#include <optional>

namespace bandit_control {

// Ellipsoidal bandit convex optimization with memory.
//
// At step t the learner plays y_t = x_t + A_t u_t with u_t uniform on the
// unit sphere and A_t = (hess R(x_t) + eta sigma t I)^{-1/2}, then sees the
// scalar F_t(y_{t-H+1..t}). The gradient estimate
//     g_t = n F_t sum_{i<H} A_{t-i}^{-1} u_{t-i}
// is consumed H-1 steps late by the barrier-regularized update
//     x_{t+1} = argmin_x  sum_{s=H}^{t} (g_{s-H+1}'x + (sigma/2)|x - x_{s-H+1}|^2) + R(x)/eta,
// so x_t never depends on the last H exploration draws.

struct EbcoConfig {
  int n = 0;
  int H = 1;
  std::int64_t T = 1;
  double eta = 0.0;
  double sigma = 0.0;
  ConstraintSet set = ConstraintSet::euclidean_ball(Vector::Zero(1), 1.0);
  // Coefficient multiplying sigma * |x - anchor|^2 in the update (1/2 by default).
  double proximal_weight = 0.5;
  double newton_tol = 1e-9;
  int max_newton_iters = 100;

  // Loss regularity constants; logged, never enforced.
  std::optional<double> loss_range_B;
  std::optional<double> grad_bound_L;
  std::optional<double> smoothness_beta;

  void validate() const;
};

struct Preconditioner {
  Matrix A;
  Matrix A_inv;
};

// (hess R(x) + eta sigma t I)^{-1/2} and its inverse.
Preconditioner make_preconditioner(const ConstraintSet& set, const Vector& x, double eta, double sigma,
                                   std::int64_t t);

// n * loss * sum_i A_inv[i] u[i], where entry i belongs to time t - i.
Vector grad_estimate(double loss_value, std::span<const Matrix> A_inv, std::span<const Vector> u, int n);

// sum_s g_s'x + w sigma |x - a_s|^2 folded into a single quadratic.
struct DelayedLossSum {
  Vector linear;
  Vector anchor_sum;
  double anchor_sq = 0.0;
  double count = 0.0;

  explicit DelayedLossSum(int n = 0) : linear(Vector::Zero(n)), anchor_sum(Vector::Zero(n)) {}
  void add(const Vector& g, const Vector& anchor);
};

struct ObjectiveEval {
  double value = 0.0;
  Vector grad;
  Matrix hess;
};

// eta * (sum_s g_s'x + w sigma |x - a_s|^2) + R(x)
ObjectiveEval rftl_objective(const DelayedLossSum& sum, const EbcoConfig& config, const Vector& x);

struct NewtonResult {
  Vector x;
  int iterations = 0;
  double grad_norm = 0.0;
};

class NewtonFailure : public std::runtime_error {
 public:
  NewtonFailure(const std::string& what, double grad_norm) : std::runtime_error(what), grad_norm_(grad_norm) {}
  double grad_norm() const { return grad_norm_; }

 private:
  double grad_norm_;
};

// Newton with feasibility-preserving Armijo backtracking for smooth(x) + R(x)
// over the interior of `set`. `smooth` returns value, gradient and Hessian of
// the convex part. Stops when the gradient norm or the Newton decrement of
// the full objective is <= tol.
using SmoothTerm = std::function<ObjectiveEval(const Vector&)>;
NewtonResult minimize_barrier_objective(const ConstraintSet& set, const SmoothTerm& smooth, const Vector& start,
                                        double tol, int max_iters);

// argmin alpha |x|^2 + beta'x + R(x): a 1-D root along -beta for a ball,
// per-coordinate roots for a box.
Vector isotropic_barrier_minimizer(const ConstraintSet& set, double alpha, const Vector& beta);

NewtonResult rftl_d_update(const DelayedLossSum& sum, const EbcoConfig& config, const Vector& warm_start);

struct EbcoStepLog {
  std::int64_t t = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double center_move = 0.0;
  int newton_iters = 0;  // -1: Newton could not certify, closed-form minimizer used
};

class Ebco {
 public:
  Ebco(EbcoConfig config, std::uint64_t seed);

  std::int64_t t() const { return t_; }
  const EbcoConfig& config() const { return config_; }

  // y_t = x_t + A_t u_t. Calling twice in one step returns the same point.
  const Vector& play();
  // Loss of the step just played. Before t = H the value is ignored (g_t = 0).
  void feedback(double loss_value);

  const Vector& center() const { return centers_.at(static_cast<std::size_t>(t_ - 1)); }
  const Preconditioner& preconditioner() const { return slot(t_).pre; }
  const Vector& exploration() const { return slot(t_).u; }

  // x_1, x_2, ... as far as computed (x_1..x_H exist from the start).
  const std::vector<Vector>& centers() const { return centers_; }
  // g_1..g_{t-1}.
  const std::vector<Vector>& gradients() const { return gradients_; }
  const std::vector<EbcoStepLog>& step_log() const { return step_log_; }
  void write_trace_csv(std::ostream& os) const;

  // Test hooks. Both must be called before play() in the current step.
  void override_exploration(const Vector& u);
  // Switches to a fresh random stream and redraws u_t from it.
  void reseed(std::uint64_t seed);

 private:
  struct Slot {
    Preconditioner pre;
    Vector u;
  };
  const Slot& slot(std::int64_t s) const { return window_.at(static_cast<std::size_t>(s - window_begin_)); }
  Slot make_slot(const Vector& x, std::int64_t s);
  Vector boundary_safe_minimizer() const;

  EbcoConfig config_;
  Rng rng_;
  std::int64_t t_ = 1;
  std::vector<Vector> centers_;
  std::vector<Vector> gradients_;
  std::deque<Slot> window_;  // slots for times window_begin_, window_begin_ + 1, ...
  std::int64_t window_begin_ = 1;
  DelayedLossSum sum_;
  std::optional<Vector> played_;
  std::vector<EbcoStepLog> step_log_;
  bool fallback_warned_ = false;
};

// ---------------------------------------------------------------------------
// Full-information regularized follow-the-leader with delay.

struct LossOracle {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> grad;
  std::function<Matrix(const Vector&)> hess;
};

enum class RftlVariant {
  kExact,                // argmin sum_s l_{s-H+1}(x) + R(x)/eta
  kLinearizedProximal,   // losses replaced by grad l_k(x_k)'x + w sigma |x - x_k|^2
};

struct RftlDOptions {
  int H = 1;
  double eta = 1.0;
  RftlVariant variant = RftlVariant::kExact;
  double sigma = 0.0;
  double proximal_weight = 0.5;
  double newton_tol = 1e-9;
  int max_newton_iters = 100;
};

// losses[k] is l_{k+1}; l_1..l_{H-1} are never used. Returns x_1..x_T.
std::vector<Vector> rftl_d_full_info(std::span<const LossOracle> losses, const ConstraintSet& set,
                                     const RftlDOptions& options);

}  // namespace bandit_control

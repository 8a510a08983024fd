#pragma once

#include "bandit_control/lds.hpp"

#include <iosfwd>
#include <memory>

namespace bandit_control {

enum class Phase { kEstimation, kControl };

// Independent stream seed for (base, stream), via a splitmix64 finalizer.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Strict observe -> act -> cost -> feedback protocol. `x` is the true state,
// which only full-observation controllers may read.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual Vector act(std::int64_t t, const Vector& y, const Vector& x) = 0;
  virtual void feedback(double cost) = 0;
  // Frobenius norm of the policy played at the last act(), 0 if not applicable.
  virtual double policy_norm() const { return 0.0; }
};

// u = K x + inner(y). The inner controller lives on (A + B K, B, C).
class StabilizedController : public Controller {
 public:
  StabilizedController(Controller& inner, Matrix K) : inner_(inner), K_(std::move(K)) {}
  Vector act(std::int64_t t, const Vector& y, const Vector& x) override { return K_ * x + inner_.act(t, y, x); }
  void feedback(double cost) override { inner_.feedback(cost); }
  double policy_norm() const override { return inner_.policy_norm(); }

 private:
  Controller& inner_;
  Matrix K_;
};

struct TrialResult {
  std::vector<double> cost;
  std::vector<double> control_norm;
  std::vector<double> policy_fro_norm;
  std::vector<Phase> phase;
  std::vector<Vector> controls;
  std::vector<Vector> observations;
  LdsState final_state;

  std::size_t length() const { return cost.size(); }
  double total_cost() const;
  void append(const TrialResult& other);

  // Columns t, cost, control_norm, policy_fro_norm, phase (est|ctrl).
  void write_csv(std::ostream& os) const;
  std::string to_csv() const;
};

struct LoopSegment {
  std::size_t begin = 1;  // first trace time step (1-based)
  std::size_t steps = 0;  // 0 means "to the end of the trace"
  std::optional<LdsState> initial;  // zero state at time `begin` if empty
  Phase phase = Phase::kControl;
};

// Runs `controller` on the true system with the trace's perturbations; the
// controller only ever sees y_t (and x_t) and the scalar cost.
TrialResult run_closed_loop(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs,
                            Controller& controller, const LoopSegment& segment = {});

class ZeroController : public Controller {
 public:
  explicit ZeroController(int du) : du_(du) {}
  Vector act(std::int64_t, const Vector&, const Vector&) override { return Vector::Zero(du_); }
  void feedback(double) override {}

 private:
  int du_;
};

}  // namespace bandit_control

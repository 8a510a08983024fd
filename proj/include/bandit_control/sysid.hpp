#pragma once

#include "bandit_control/closed_loop.hpp"

#include <iosfwd>

namespace bandit_control {

struct EstimationReport {
  MarkovOperator G_hat;  // blocks 0..H-1
  std::size_t N = 0;
  double residual = 0.0;  // sum of squared least-squares residuals
  std::optional<double> err_l1_op;
  bool rank_deficient = false;
  int rank = 0;

  // Header "i,<row-major entries>", one row per block.
  void write_csv(std::ostream& os) const;
  std::string summary_json() const;
};

// Least squares for y_t ~ sum_{i<H} G^[i] u_{t-i} over t = H..N. y[k] and u[k]
// are y_{k+1} and u_{k+1}.
EstimationReport sysest_ls(std::span<const Vector> y, std::span<const Vector> u, int H);

// sum_i ||G_hat^[i] - G^[i]||_op, the shorter operator padded with zeros.
double estimation_error(const MarkovOperator& G_hat, const MarkovOperator& G_true);

// Plays iid standard Gaussian controls.
class GaussianExplorer : public Controller {
 public:
  GaussianExplorer(int du, std::uint64_t seed) : du_(du), rng_(seed) {}
  Vector act(std::int64_t t, const Vector& y, const Vector& x) override;
  void feedback(double) override {}
  const std::vector<Vector>& controls() const { return controls_; }

 private:
  int du_;
  Rng rng_;
  std::vector<Vector> controls_;
};

struct EstimationPhase {
  EstimationReport report;
  TrialResult trial;             // costs are real and count toward regret
  std::vector<Vector> controls;  // exploration controls (excluding any K x term)
};

struct EstimationOptions {
  std::optional<CostSpec> costs;  // identity when empty
  std::optional<Matrix> K;        // if set, u = K x + exploration and G refers to A + B K
  std::optional<MarkovOperator> G_true;
};

// Runs N steps from x = 0 on trace steps 1..N, then fits H blocks.
EstimationPhase run_estimation_phase(const LdsParams& system, const NoiseTrace& trace, std::size_t N, int H,
                                     std::uint64_t seed, const EstimationOptions& options = {});

}  // namespace bandit_control

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace bandit_control {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

// Linear time-invariant system
//   x_{t+1} = A x_t + B u_t + w_t,   y_t = C x_t + e_t.
struct LdsParams {
  Matrix A;
  Matrix B;
  Matrix C;

  // Validates that A is square and B, C agree with it.
  static LdsParams make(Matrix A, Matrix B, Matrix C);
  // As make(), and additionally rejects spectral_radius(A) >= 1.
  static LdsParams make_stable(Matrix A, Matrix B, Matrix C);

  int dx() const { return static_cast<int>(A.rows()); }
  int du() const { return static_cast<int>(B.cols()); }
  int dy() const { return static_cast<int>(C.rows()); }
};

// Damped double integrator A=[[0.9,0.9],[-0.01,0.9]], B=[[0],[1]], C=I.
LdsParams double_integrator();

// (A + B K, B, C): the system seen by a controller layered on top of u = K x.
LdsParams stabilized(const LdsParams& params, const Matrix& K);

struct LdsState {
  Vector x;
  std::int64_t t = 1;
};

struct StepOutput {
  LdsState next;
  Vector y;
};

StepOutput simulate_step(const LdsState& state, const LdsParams& params, const Vector& u,
                         const Vector& w, const Vector& e);

// Largest eigenvalue modulus. The matrix is balanced before the QR iteration.
double spectral_radius(const Matrix& A);

// Largest / smallest singular value.
double op_norm(const Matrix& M);
double min_singular_value(const Matrix& M);

// G^[0..length-1] with G^[0] = 0 and G^[i] = C A^{i-1} B. Blocks at or beyond
// length() are treated as zero everywhere in this library.
class MarkovOperator {
 public:
  MarkovOperator() = default;
  MarkovOperator(std::vector<Matrix> blocks, int dy, int du);

  static MarkovOperator zero(std::size_t length, int dy, int du);

  std::size_t length() const { return blocks_.size(); }
  int dy() const { return dy_; }
  int du() const { return du_; }
  const Matrix& operator[](std::size_t i) const { return blocks_.at(i); }
  const std::vector<Matrix>& blocks() const { return blocks_; }

  // sum_i ||G^[i]||_op
  double l1_op_norm() const;
  // First `length` blocks (zero padded when longer than this operator).
  MarkovOperator truncated(std::size_t length) const;

 private:
  std::vector<Matrix> blocks_;
  int dy_ = 0;
  int du_ = 0;
};

MarkovOperator markov_operator(const LdsParams& params, std::size_t length);

// ||G^[i]||_op <= kappa * r^{i-1} for i >= 1, checked up to `horizon`.
struct DecayCertificate {
  double kappa = 0.0;
  double r = 0.0;
  std::vector<double> block_norms;  // ||G^[i]||_op for i = 0..horizon

  bool holds(double rel_tol = 1e-9) const;
  // Estimate of sum_{i >= H} ||G^[i]||_op: the explicit sum to the horizon
  // plus the geometric bound for the remainder.
  double tail_norm(std::size_t H) const;
};

DecayCertificate decay_certificate(const LdsParams& params, std::size_t horizon = 200);

// ---------------------------------------------------------------------------
// Perturbations

enum class NoiseKind { kGaussian, kSinusoidal, kGaussianWalk, kComposite };

std::string to_string(NoiseKind kind);
NoiseKind noise_kind_from_string(const std::string& name);

struct NoiseParams {
  double sigma_w = 0.0;     // iid Gaussian component of w
  double sigma_e = 0.0;     // iid Gaussian component of e
  double amplitude = 0.0;   // c in c*sin(2 pi t / period) * 1
  double period = 40.0;
  double walk_std = 0.0;    // step std of the Gaussian random walk in w
};

// Every trace is adversarial (deterministic) plus stochastic. Components are
// kept so the stochastic part can be inspected on its own. Index k holds time
// t = k + 1.
struct NoiseTrace {
  NoiseKind kind = NoiseKind::kGaussian;
  NoiseParams params;
  std::uint64_t seed = 0;
  std::vector<Vector> w_adv, w_stoch, e_adv, e_stoch;
  std::vector<Vector> w, e;

  std::size_t length() const { return w.size(); }
  int dx() const { return w.empty() ? 0 : static_cast<int>(w.front().size()); }
  int dy() const { return e.empty() ? 0 : static_cast<int>(e.front().size()); }

  // Columns t, w_0..w_{dx-1}, e_0..e_{dy-1}, header row first.
  void write_csv(std::ostream& os) const;
  std::string to_csv() const;
  // FNV-1a over the CSV serialization.
  std::uint64_t hash() const;

  // Times [begin, begin + count) as a new trace (1-based begin).
  NoiseTrace slice(std::size_t begin, std::size_t count) const;
};

NoiseTrace make_noise(NoiseKind kind, const NoiseParams& params, std::size_t T, std::uint64_t seed,
                      int dx, int dy);

// Trace with explicitly given perturbations (stochastic parts set to zero).
NoiseTrace make_trace(std::vector<Vector> w, std::vector<Vector> e);

// y^nat_t for t = 1..T with x^nat_1 = 0.
std::vector<Vector> natures_y_rollout(const LdsParams& params, const NoiseTrace& trace);
// x^nat_t for t = 1..T with x^nat_1 = 0.
std::vector<Vector> natures_x_rollout(const LdsParams& params, const NoiseTrace& trace);

// max_t ||y^nat_t||, the empirical R_nat of a trace.
double nat_norm_bound(const LdsParams& params, const NoiseTrace& trace);

// y_t - sum_{i>=1} G^[i] u_{t-i}; past_controls[0] is u_{t-1}. Controls past
// the end of the operator are ignored.
Vector recover_natures_y(const Vector& y, std::span<const Vector> past_controls,
                         const MarkovOperator& G);

// ---------------------------------------------------------------------------
// Costs c_t(y, u) = y' Q_t y + u' R_t u

class CostSpec {
 public:
  using Provider = std::function<Matrix(std::int64_t)>;

  // Time invariant. Strong convexity / smoothness constants are read off the
  // eigenvalues of Q and R.
  CostSpec(Matrix Q, Matrix R);
  // Time varying over t = 1..T; every Q_t, R_t is checked at construction.
  static CostSpec time_varying(Provider Q, Provider R, std::int64_t T);
  static CostSpec identity(int dy, int du);

  Matrix Q(std::int64_t t) const;
  Matrix R(std::int64_t t) const;
  int dy() const { return dy_; }
  int du() const { return du_; }
  bool time_invariant() const { return !q_provider_; }

  double sigma_c() const { return sigma_c_; }
  double beta_c() const { return beta_c_; }
  // Constant of |c(z) - c(z')| <= L_c max(|z|, |z'|) |z - z'|.
  double L_c() const { return 2.0 * beta_c_; }

  // No dimension checks; see cost_eval.
  double evaluate(std::int64_t t, const Vector& y, const Vector& u) const;

 private:
  CostSpec() = default;
  void absorb(const Matrix& Q, const Matrix& R);

  Matrix Q_, R_;
  Provider q_provider_, r_provider_;
  int dy_ = 0, du_ = 0;
  double sigma_c_ = 0.0, beta_c_ = 0.0;
  bool seen_ = false;
};

double cost_eval(const CostSpec& spec, std::int64_t t, const Vector& y, const Vector& u);

}  // namespace bandit_control

#include "bandit_control/baselines.hpp"

#include "bandit_control/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace bandit_control {

namespace {

Matrix riccati_map(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, const Matrix& P) {
  const Matrix BtPA = B.transpose() * P * A;
  const Matrix S = R + B.transpose() * P * B;
  Matrix next = Q + A.transpose() * P * A - BtPA.transpose() * S.ldlt().solve(BtPA);
  return 0.5 * (next + next.transpose());
}

}  // namespace

LqrGain dare_solve(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, double tol, int max_iters) {
  const auto n = A.rows();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != B.cols() ||
      R.cols() != B.cols())
    throw std::invalid_argument("dare_solve: inconsistent dimensions");
  if (Eigen::LLT<Matrix>(R).info() != Eigen::Success) throw std::invalid_argument("dare_solve: R must be positive definite");

  LqrGain g;
  g.P = Q;
  for (int it = 1; it <= max_iters; ++it) {
    Matrix next = riccati_map(A, B, Q, R, g.P);
    if (!next.allFinite()) throw std::runtime_error("DARE diverged");
    const double change = (next - g.P).cwiseAbs().maxCoeff();
    g.P = std::move(next);
    g.iterations = it;
    if (change <= tol * std::max(1.0, g.P.cwiseAbs().maxCoeff())) {
      const Matrix S = R + B.transpose() * g.P * B;
      g.K = -S.ldlt().solve(B.transpose() * g.P * A);
      return g;
    }
  }
  throw std::runtime_error("DARE diverged: no convergence in " + std::to_string(max_iters) + " iterations");
}

double dare_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, const Matrix& P) {
  return (riccati_map(A, B, Q, R, P) - P).cwiseAbs().maxCoeff();
}

Vector lqr_control(const LqrGain& gain, const Vector& x) { return gain.K * x; }

// ---------------------------------------------------------------------------

void BpcConfig::validate() const {
  if (H < 1) throw std::invalid_argument("BpcConfig: H must be >= 1");
  if (!(delta > 0.0)) throw std::invalid_argument("BpcConfig: delta must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("BpcConfig: lr must be positive");
  if (!(R_bound > 0.0)) throw std::invalid_argument("BpcConfig: R_bound must be positive");
}

Vector clip_frobenius(const Vector& v, double radius) {
  const double nv = v.norm();
  return nv > radius ? Vector(v * (radius / nv)) : v;
}

Bpc::Bpc(const LdsParams& model, BpcConfig config, std::uint64_t seed)
    : A_(model.A), B_(model.B), config_(std::move(config)), rng_(seed) {
  config_.validate();
  n_ = config_.H * model.du() * model.dx();
  M_ = Vector::Zero(n_);
  last_grad_ = Vector::Zero(n_);
}

Vector Bpc::act(std::int64_t, const Vector&, const Vector& x) {
  const int dx = static_cast<int>(A_.rows()), du = static_cast<int>(B_.cols());
  if (x.size() != dx) throw std::invalid_argument("Bpc: state dimension mismatch");
  const auto H = static_cast<std::size_t>(config_.H);
  if (prev_x_) {
    w_hat_.push_front(x - A_ * *prev_x_ - B_ * *prev_u_);
    if (w_hat_.size() > H) w_hat_.pop_back();
  }
  eps_.push_front(sample_unit_sphere(n_, rng_));
  if (eps_.size() > H) eps_.pop_back();
  played_ = M_ + config_.delta * eps_.front();

  Vector u = Vector::Zero(du);
  for (std::size_t i = 0; i < w_hat_.size(); ++i) {
    const auto off = static_cast<Eigen::Index>(i) * du * dx;
    for (int a = 0; a < du; ++a) u(a) += played_.segment(off + a * dx, dx).dot(w_hat_[i]);
  }
  prev_x_ = x;
  prev_u_ = u;
  return u;
}

void Bpc::feedback(double cost) {
  Vector s = Vector::Zero(n_);
  for (const auto& e : eps_) s += e;
  last_grad_ = (static_cast<double>(n_) / config_.delta) * cost * s;
  M_ = clip_frobenius(M_ - config_.lr * last_grad_, config_.R_bound);
}

TrialResult run_bpc(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs, const BpcConfig& config,
                    std::uint64_t seed, const std::optional<Matrix>& K) {
  LoopSegment seg;
  seg.steps = static_cast<std::size_t>(config.T);
  if (K) {
    Bpc bpc(stabilized(system, *K), config, seed);
    StabilizedController wrapped(bpc, *K);
    return run_closed_loop(system, trace, costs, wrapped, seg);
  }
  Bpc bpc(system, config, seed);
  return run_closed_loop(system, trace, costs, bpc, seg);
}

// ---------------------------------------------------------------------------

namespace {

struct Counterfactual {
  LdsParams model;                    // system the policy acts on
  std::vector<Vector> ynat;           // of `model`
  std::vector<Vector> u_offset;       // K x^nat_t, or zero
  std::vector<Matrix> G;              // G^[0..L-1] of `model`
  std::vector<Matrix> Gamma;          // total-control response to v: I, K A'^{i-1} B, ...
};

Counterfactual build_counterfactual(const LdsParams& system, const NoiseTrace& trace, int H,
                                    const HindsightOptions& options) {
  if (H < 1) throw std::invalid_argument("hindsight: H must be >= 1");
  if (trace.dx() != system.dx() || trace.dy() != system.dy())
    throw std::invalid_argument("hindsight: trace dimensions do not match the system");
  const std::size_t L = options.markov_length == 0 ? static_cast<std::size_t>(H) : options.markov_length;
  Counterfactual cf;
  cf.model = options.K ? stabilized(system, *options.K) : system;
  cf.ynat = natures_y_rollout(cf.model, trace);
  cf.G = markov_operator(cf.model, L).blocks();
  const int du = system.du();
  cf.Gamma.assign(L, Matrix::Zero(du, du));
  cf.Gamma[0] = Matrix::Identity(du, du);
  if (options.K) {
    const auto xnat = natures_x_rollout(cf.model, trace);
    cf.u_offset.reserve(xnat.size());
    for (const auto& x : xnat) cf.u_offset.push_back(*options.K * x);
    Matrix Ak = Matrix::Identity(system.dx(), system.dx());
    for (std::size_t i = 1; i < L; ++i) {
      cf.Gamma[i] = *options.K * Ak * system.B;
      Ak = cf.model.A * Ak;
    }
  } else {
    cf.u_offset.assign(cf.ynat.size(), Vector::Zero(du));
  }
  return cf;
}

}  // namespace

CounterfactualQuadratic counterfactual_quadratic(const LdsParams& system, const NoiseTrace& trace,
                                                 const CostSpec& costs, int H, const HindsightOptions& options) {
  const Counterfactual cf = build_counterfactual(system, trace, H, options);
  const int du = system.du(), dy = system.dy();
  const int n = H * du * dy;
  const std::size_t L = cf.G.size();
  const std::size_t T = cf.ynat.size();

  CounterfactualQuadratic J;
  J.P = Matrix::Zero(n, n);
  J.q = Vector::Zero(n);
  J.H = H;
  J.du = du;
  J.dy = dy;

  std::deque<Matrix> V;  // V_{t}, V_{t-1}, ... with v_t = V_t m
  for (std::size_t k = 0; k < T; ++k) {
    Matrix Vt = Matrix::Zero(du, n);
    for (int j = 0; j < H && static_cast<std::size_t>(j) <= k; ++j) {
      const Vector& yn = cf.ynat[k - static_cast<std::size_t>(j)];
      for (int a = 0; a < du; ++a) Vt.block(a, j * du * dy + a * dy, 1, dy) = yn.transpose();
    }
    V.push_front(std::move(Vt));
    if (V.size() > L) V.pop_back();

    Matrix Y = Matrix::Zero(dy, n);
    Matrix U = Matrix::Zero(du, n);
    for (std::size_t i = 0; i < V.size(); ++i) {
      if (i >= 1) Y.noalias() += cf.G[i] * V[i];
      U.noalias() += cf.Gamma[i] * V[i];
    }
    const auto t = static_cast<std::int64_t>(k + 1);
    const Matrix Q = costs.Q(t), R = costs.R(t);
    const Vector& a = cf.ynat[k];
    const Vector& b = cf.u_offset[k];
    J.P.noalias() += Y.transpose() * Q * Y + U.transpose() * R * U;
    J.q.noalias() += Y.transpose() * (Q * a) + U.transpose() * (R * b);
    J.c0 += a.dot(Q * a) + b.dot(R * b);
  }
  J.P = 0.5 * (J.P + J.P.transpose());
  return J;
}

double counterfactual_cost(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs,
                           const DrcParams& M, const HindsightOptions& options) {
  const Counterfactual cf = build_counterfactual(system, trace, M.H(), options);
  if (M.du() != system.du() || M.dy() != system.dy()) throw std::invalid_argument("counterfactual_cost: shape mismatch");
  const std::size_t T = cf.ynat.size();
  std::vector<Vector> v(T);
  double total = 0.0;
  for (std::size_t k = 0; k < T; ++k) {
    v[k] = Vector::Zero(system.du());
    for (int j = 0; j < M.H() && static_cast<std::size_t>(j) <= k; ++j)
      v[k] += M[static_cast<std::size_t>(j)] * cf.ynat[k - static_cast<std::size_t>(j)];
    Vector y = cf.ynat[k];
    Vector u = cf.u_offset[k] + v[k];
    for (std::size_t i = 1; i < cf.G.size() && i <= k; ++i) {
      y += cf.G[i] * v[k - i];
      u += cf.Gamma[i] * v[k - i];
    }
    total += costs.evaluate(static_cast<std::int64_t>(k + 1), y, u);
  }
  return total;
}

Vector solve_ball_quadratic(const CounterfactualQuadratic& J, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("solve_ball_quadratic: radius must be positive");
  Eigen::SelfAdjointEigenSolver<Matrix> es(J.P);
  if (es.info() != Eigen::Success) throw std::runtime_error("solve_ball_quadratic: eigendecomposition failed");
  const Vector lam = es.eigenvalues().cwiseMax(0.0);
  const Vector qt = es.eigenvectors().transpose() * J.q;
  const double scale = std::max(lam.maxCoeff(), 1e-300);
  const double null_tol = 1e-12 * scale;

  auto m_of = [&](double mu) {
    Vector c(qt.size());
    for (Eigen::Index i = 0; i < qt.size(); ++i) {
      const double d = lam(i) + mu;
      c(i) = d > null_tol ? -qt(i) / d : 0.0;
    }
    return c;
  };

  // Interior minimizer (minimum norm if P is singular) when q has no component
  // along the null space and the point is feasible.
  bool q_in_range = true;
  for (Eigen::Index i = 0; i < qt.size(); ++i)
    if (lam(i) <= null_tol && std::abs(qt(i)) > 1e-12 * std::max(1.0, qt.norm())) q_in_range = false;
  Vector c = m_of(0.0);
  if (q_in_range && c.norm() <= radius) return es.eigenvectors() * c;

  // Boundary: find mu > 0 with ||m(mu)|| = radius; the norm decreases in mu.
  double lo = 0.0, hi = qt.norm() / radius + 1.0;
  while (m_of(hi).norm() > radius) hi *= 2.0;
  for (int it = 0; it < 400 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (m_of(mid).norm() > radius ? lo : hi) = mid;
  }
  c = m_of(hi);
  const double nc = c.norm();
  if (nc > 0.0) c *= radius / nc;
  return es.eigenvectors() * c;
}

namespace {

Vector project_ball(const Vector& v, double r) { return clip_frobenius(v, r); }

double projected_grad_norm(const CounterfactualQuadratic& J, const Vector& m, double r, double step) {
  return (m - project_ball(m - step * J.grad(m), r)).norm() / step;
}

// Frank-Wolfe over sum_j ||M^[j]||_op <= R with exact line search.
Vector frank_wolfe_l1op(const CounterfactualQuadratic& J, double R, Vector m, double tol, int max_iters, double& gap,
                        bool& converged) {
  const int H = J.H, du = J.du, dy = J.dy;
  converged = false;
  gap = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    const Vector g = J.grad(m);
    int best_j = 0;
    double best_s = -1.0;
    Vector best_u, best_v;
    for (int j = 0; j < H; ++j) {
      Matrix blk(du, dy);
      for (int a = 0; a < du; ++a) blk.row(a) = g.segment(j * du * dy + a * dy, dy).transpose();
      Eigen::JacobiSVD<Matrix> svd(blk, Eigen::ComputeThinU | Eigen::ComputeThinV);
      if (svd.singularValues()(0) > best_s) {
        best_s = svd.singularValues()(0);
        best_j = j;
        best_u = svd.matrixU().col(0);
        best_v = svd.matrixV().col(0);
      }
    }
    Vector s = Vector::Zero(m.size());
    for (int a = 0; a < du; ++a) s.segment(best_j * du * dy + a * dy, dy) = -R * best_u(a) * best_v;
    const Vector d = s - m;
    gap = -g.dot(d);
    if (gap <= tol * std::max(1.0, std::abs(J.value(m)))) {
      converged = true;
      return m;
    }
    const double curv = d.dot(J.P * d);
    const double gamma = curv > 0.0 ? std::clamp(gap / (2.0 * curv), 0.0, 1.0) : 1.0;
    m += gamma * d;
  }
  return m;
}

}  // namespace

HindsightResult best_drc_hindsight(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs, int H,
                                   double R, const HindsightOptions& options) {
  if (!(R > 0.0)) throw std::invalid_argument("best_drc_hindsight: R must be positive");
  const CounterfactualQuadratic J = counterfactual_quadratic(system, trace, costs, H, options);
  const double r = R / std::sqrt(static_cast<double>(H));
  const double L = std::max(2.0 * Eigen::SelfAdjointEigenSolver<Matrix>(J.P, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff(),
                            1e-12);
  const double step = 1.0 / L;

  Vector m = solve_ball_quadratic(J, r);
  double pg = projected_grad_norm(J, m, r, step);
  for (int it = 0; it < options.max_pg_iters && pg > options.tol; ++it) {
    m = project_ball(m - step * J.grad(m), r);
    pg = projected_grad_norm(J, m, r, step);
  }

  HindsightResult res;
  res.M = DrcParams::unflatten(m, H, J.du, J.dy);
  res.total_cost = J.value(m);
  res.projected_grad_norm = pg;
  res.converged = pg <= options.tol;
  if (options.l1_op) {
    const Vector m1 = frank_wolfe_l1op(J, R, m, options.tol, options.max_fw_iters, res.fw_gap, res.fw_converged);
    res.M_l1 = DrcParams::unflatten(m1, H, J.du, J.dy);
    res.total_cost_l1 = J.value(m1);
  }
  return res;
}

}  // namespace bandit_control

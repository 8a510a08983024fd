#include "bandit_control/lds.hpp"

#include "bandit_control/diagnostics.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace bandit_control {
namespace {

std::string shape(const Matrix& M) {
  return std::to_string(M.rows()) + "x" + std::to_string(M.cols());
}

// Parlett-Reinsch balancing by powers of two; leaves eigenvalues unchanged.
Matrix balance(Matrix A) {
  const Eigen::Index n = A.rows();
  constexpr double radix = 2.0;
  bool done = false;
  while (!done) {
    done = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      double c = 0.0, r = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        c += std::abs(A(j, i));
        r += std::abs(A(i, j));
      }
      if (c == 0.0 || r == 0.0) continue;
      double g = r / radix;
      double f = 1.0;
      const double s = c + r;
      while (c < g) {
        f *= radix;
        c *= radix * radix;
      }
      g = r * radix;
      while (c > g) {
        f /= radix;
        c /= radix * radix;
      }
      if ((c + r) / f < 0.95 * s) {
        done = false;
        A.row(i) /= f;
        A.col(i) *= f;
      }
    }
  }
  return A;
}

void append_number(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace

LdsParams LdsParams::make(Matrix A, Matrix B, Matrix C) {
  if (A.rows() != A.cols() || A.rows() == 0)
    throw std::invalid_argument("A must be square and nonempty, got " + shape(A));
  if (B.rows() != A.rows() || B.cols() == 0)
    throw std::invalid_argument("B must be " + std::to_string(A.rows()) + "xd_u, got " + shape(B));
  if (C.cols() != A.rows() || C.rows() == 0)
    throw std::invalid_argument("C must be d_yx" + std::to_string(A.rows()) + ", got " + shape(C));
  if (!A.allFinite() || !B.allFinite() || !C.allFinite())
    throw std::invalid_argument("system matrices must be finite");
  return LdsParams{std::move(A), std::move(B), std::move(C)};
}

LdsParams LdsParams::make_stable(Matrix A, Matrix B, Matrix C) {
  LdsParams p = make(std::move(A), std::move(B), std::move(C));
  const double rho = spectral_radius(p.A);
  if (rho >= 1.0)
    throw std::invalid_argument("unstable system: spectral radius " + std::to_string(rho));
  return p;
}

LdsParams double_integrator() {
  Matrix A(2, 2);
  A << 0.9, 0.9, -0.01, 0.9;
  Matrix B(2, 1);
  B << 0.0, 1.0;
  return LdsParams::make_stable(A, B, Matrix::Identity(2, 2));
}

LdsParams stabilized(const LdsParams& params, const Matrix& K) {
  if (K.rows() != params.du() || K.cols() != params.dx())
    throw std::invalid_argument("stabilizing gain must be d_u x d_x, got " + shape(K));
  return LdsParams::make(params.A + params.B * K, params.B, params.C);
}

StepOutput simulate_step(const LdsState& state, const LdsParams& params, const Vector& u,
                         const Vector& w, const Vector& e) {
  if (state.x.size() != params.dx() || u.size() != params.du() || w.size() != params.dx() ||
      e.size() != params.dy())
    throw std::invalid_argument("simulate_step: dimension mismatch");
  StepOutput out;
  out.y = params.C * state.x + e;
  out.next.x = params.A * state.x + params.B * u + w;
  out.next.t = state.t + 1;
  return out;
}

double spectral_radius(const Matrix& A) {
  if (A.rows() != A.cols()) throw std::invalid_argument("spectral_radius: non-square " + shape(A));
  if (A.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> solver(balance(A), /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) throw std::runtime_error("spectral_radius: QR iteration failed");
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

double op_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues()(0);
}

double min_singular_value(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues().tail(1)(0);
}

// ---------------------------------------------------------------------------

MarkovOperator::MarkovOperator(std::vector<Matrix> blocks, int dy, int du)
    : blocks_(std::move(blocks)), dy_(dy), du_(du) {
  for (const auto& b : blocks_)
    if (b.rows() != dy || b.cols() != du)
      throw std::invalid_argument("Markov block has shape " + shape(b) + ", expected " +
                                  std::to_string(dy) + "x" + std::to_string(du));
}

MarkovOperator MarkovOperator::zero(std::size_t length, int dy, int du) {
  return MarkovOperator(std::vector<Matrix>(length, Matrix::Zero(dy, du)), dy, du);
}

double MarkovOperator::l1_op_norm() const {
  double s = 0.0;
  for (const auto& b : blocks_) s += op_norm(b);
  return s;
}

MarkovOperator MarkovOperator::truncated(std::size_t length) const {
  std::vector<Matrix> out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i)
    out.push_back(i < blocks_.size() ? blocks_[i] : Matrix::Zero(dy_, du_));
  return MarkovOperator(std::move(out), dy_, du_);
}

MarkovOperator markov_operator(const LdsParams& params, std::size_t length) {
  if (length == 0) throw std::invalid_argument("markov_operator: length must be positive");
  const double rho = spectral_radius(params.A);
  if (rho >= 1.0) warn("markov_operator: spectral radius " + std::to_string(rho) + " >= 1");
  std::vector<Matrix> blocks;
  blocks.reserve(length);
  blocks.push_back(Matrix::Zero(params.dy(), params.du()));
  Matrix AkB = params.B;  // A^{i-1} B
  for (std::size_t i = 1; i < length; ++i) {
    blocks.push_back(params.C * AkB);
    AkB = params.A * AkB;
  }
  return MarkovOperator(std::move(blocks), params.dy(), params.du());
}

bool DecayCertificate::holds(double rel_tol) const {
  double rp = 1.0;
  for (std::size_t i = 1; i < block_norms.size(); ++i) {
    if (block_norms[i] > kappa * rp * (1.0 + rel_tol) + 1e-300) return false;
    rp *= r;
  }
  return true;
}

double DecayCertificate::tail_norm(std::size_t H) const {
  const std::size_t horizon = block_norms.empty() ? 0 : block_norms.size() - 1;
  double s = 0.0;
  for (std::size_t i = std::max<std::size_t>(H, 1); i <= horizon; ++i) s += block_norms[i];
  // sum_{i > horizon} kappa r^{i-1}
  if (r < 1.0) s += kappa * std::pow(r, static_cast<double>(std::max(horizon, H - 1))) / (1.0 - r);
  return s;
}

DecayCertificate decay_certificate(const LdsParams& params, std::size_t horizon) {
  const double rho = spectral_radius(params.A);
  if (rho >= 1.0) throw std::invalid_argument("unstable system: spectral radius " + std::to_string(rho));

  DecayCertificate cert;
  const MarkovOperator G = markov_operator(params, horizon + 1);
  cert.block_norms.reserve(horizon + 1);
  for (const auto& b : G.blocks()) cert.block_norms.push_back(op_norm(b));

  // Start from r = rho. Non-normal A gives polynomial factors on top of
  // rho^i; when the ratio ||G^[i]|| / r^{i-1} still peaks in the last quarter
  // of the horizon, r is pushed toward 1.
  const double floor_r = 1e-6;
  for (double frac : {0.0, 0.1, 0.25, 0.45, 0.7, 0.9}) {
    const double r = std::max(rho + (1.0 - rho) * frac, floor_r);
    double kappa = 0.0;
    std::size_t argmax = 1;
    double rp = 1.0;
    for (std::size_t i = 1; i <= horizon; ++i) {
      const double ratio = cert.block_norms[i] / rp;
      if (ratio > kappa) {
        kappa = ratio;
        argmax = i;
      }
      rp *= r;
      if (rp < 1e-250) break;  // remaining blocks are zero at this precision
    }
    cert.kappa = kappa;
    cert.r = r;
    if (argmax <= (3 * horizon) / 4) break;
  }
  return cert;
}

// ---------------------------------------------------------------------------

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kSinusoidal: return "sinusoidal";
    case NoiseKind::kGaussianWalk: return "gaussian_walk";
    case NoiseKind::kComposite: return "composite";
  }
  return "unknown";
}

NoiseKind noise_kind_from_string(const std::string& name) {
  if (name == "gaussian") return NoiseKind::kGaussian;
  if (name == "sinusoidal") return NoiseKind::kSinusoidal;
  if (name == "gaussian_walk") return NoiseKind::kGaussianWalk;
  if (name == "composite") return NoiseKind::kComposite;
  throw std::invalid_argument("unknown noise kind '" + name + "'");
}

void NoiseTrace::write_csv(std::ostream& os) const { os << to_csv(); }

std::string NoiseTrace::to_csv() const {
  std::string out = "t";
  for (int i = 0; i < dx(); ++i) out += ",w_" + std::to_string(i);
  for (int i = 0; i < dy(); ++i) out += ",e_" + std::to_string(i);
  out += '\n';
  for (std::size_t k = 0; k < length(); ++k) {
    out += std::to_string(k + 1);
    for (Eigen::Index i = 0; i < w[k].size(); ++i) {
      out += ',';
      append_number(out, w[k](i));
    }
    for (Eigen::Index i = 0; i < e[k].size(); ++i) {
      out += ',';
      append_number(out, e[k](i));
    }
    out += '\n';
  }
  return out;
}

std::uint64_t NoiseTrace::hash() const {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : to_csv()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

NoiseTrace NoiseTrace::slice(std::size_t begin, std::size_t count) const {
  if (begin < 1 || begin - 1 + count > length()) throw std::out_of_range("NoiseTrace::slice");
  auto cut = [&](const std::vector<Vector>& v) {
    return std::vector<Vector>(v.begin() + static_cast<std::ptrdiff_t>(begin - 1),
                               v.begin() + static_cast<std::ptrdiff_t>(begin - 1 + count));
  };
  NoiseTrace out = *this;
  out.w_adv = cut(w_adv);
  out.w_stoch = cut(w_stoch);
  out.e_adv = cut(e_adv);
  out.e_stoch = cut(e_stoch);
  out.w = cut(w);
  out.e = cut(e);
  return out;
}

NoiseTrace make_noise(NoiseKind kind, const NoiseParams& params, std::size_t T, std::uint64_t seed,
                      int dx, int dy) {
  if (T < 1) throw std::invalid_argument("make_noise: T must be >= 1");
  if (params.sigma_w < 0 || params.sigma_e < 0 || params.walk_std < 0)
    throw std::invalid_argument("make_noise: standard deviations must be nonnegative");
  if (params.sigma_e == 0.0)
    warn("make_noise: sigma_e = 0; conditional strong convexity of the control losses needs sigma_e > 0");

  NoiseTrace tr;
  tr.kind = kind;
  tr.params = params;
  tr.seed = seed;
  tr.w_adv.assign(T, Vector::Zero(dx));
  tr.w_stoch.assign(T, Vector::Zero(dx));
  tr.e_adv.assign(T, Vector::Zero(dy));
  tr.e_stoch.assign(T, Vector::Zero(dy));

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](int d, double s) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = s * normal(rng);
    return v;
  };

  const bool sinusoid = kind == NoiseKind::kSinusoidal || kind == NoiseKind::kComposite;
  const bool walk = kind == NoiseKind::kGaussianWalk || kind == NoiseKind::kComposite;

  if (sinusoid) {
    if (params.period <= 0) throw std::invalid_argument("make_noise: period must be positive");
    for (std::size_t k = 0; k < T; ++k) {
      const double t = static_cast<double>(k + 1);
      tr.w_adv[k].setConstant(params.amplitude * std::sin(2.0 * std::numbers::pi * t / params.period));
    }
  }
  // Draw order is fixed: iid w for all t, iid e for all t, then walk steps.
  if (params.sigma_w > 0)
    for (std::size_t k = 0; k < T; ++k) tr.w_stoch[k] = gaussian(dx, params.sigma_w);
  if (params.sigma_e > 0)
    for (std::size_t k = 0; k < T; ++k) tr.e_stoch[k] = gaussian(dy, params.sigma_e);
  if (walk && params.walk_std > 0) {
    Vector level = Vector::Zero(dx);
    for (std::size_t k = 0; k < T; ++k) {
      level += gaussian(dx, params.walk_std);
      tr.w_stoch[k] += level;
    }
  }

  tr.w.resize(T);
  tr.e.resize(T);
  for (std::size_t k = 0; k < T; ++k) {
    tr.w[k] = tr.w_adv[k] + tr.w_stoch[k];
    tr.e[k] = tr.e_adv[k] + tr.e_stoch[k];
  }
  return tr;
}

NoiseTrace make_trace(std::vector<Vector> w, std::vector<Vector> e) {
  if (w.size() != e.size() || w.empty()) throw std::invalid_argument("make_trace: w and e must have equal nonzero length");
  NoiseTrace tr;
  tr.kind = NoiseKind::kComposite;
  tr.w_adv = w;
  tr.e_adv = e;
  for (std::size_t k = 0; k < w.size(); ++k) {
    tr.w_stoch.push_back(Vector::Zero(w[k].size()));
    tr.e_stoch.push_back(Vector::Zero(e[k].size()));
  }
  tr.w = std::move(w);
  tr.e = std::move(e);
  return tr;
}

std::vector<Vector> natures_x_rollout(const LdsParams& params, const NoiseTrace& trace) {
  if (trace.length() < 1) throw std::invalid_argument("natures_x_rollout: empty trace");
  if (trace.dx() != params.dx() || trace.dy() != params.dy())
    throw std::invalid_argument("natures_x_rollout: trace dimensions do not match the system");
  std::vector<Vector> xs;
  xs.reserve(trace.length());
  Vector x = Vector::Zero(params.dx());
  for (std::size_t k = 0; k < trace.length(); ++k) {
    xs.push_back(x);
    x = params.A * x + trace.w[k];
  }
  return xs;
}

std::vector<Vector> natures_y_rollout(const LdsParams& params, const NoiseTrace& trace) {
  std::vector<Vector> xs = natures_x_rollout(params, trace);
  std::vector<Vector> ys;
  ys.reserve(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) ys.push_back(params.C * xs[k] + trace.e[k]);
  return ys;
}

double nat_norm_bound(const LdsParams& params, const NoiseTrace& trace) {
  double m = 0.0;
  for (const auto& y : natures_y_rollout(params, trace)) m = std::max(m, y.norm());
  return m;
}

Vector recover_natures_y(const Vector& y, std::span<const Vector> past_controls, const MarkovOperator& G) {
  if (y.size() != G.dy()) throw std::invalid_argument("recover_natures_y: observation dimension mismatch");
  Vector out = y;
  const std::size_t n = std::min(past_controls.size(), G.length() > 0 ? G.length() - 1 : 0);
  for (std::size_t k = 0; k < n; ++k) out -= G[k + 1] * past_controls[k];
  return out;
}

// ---------------------------------------------------------------------------

CostSpec::CostSpec(Matrix Q, Matrix R) {
  absorb(Q, R);
  Q_ = std::move(Q);
  R_ = std::move(R);
}

CostSpec CostSpec::time_varying(Provider Q, Provider R, std::int64_t T) {
  if (!Q || !R) throw std::invalid_argument("CostSpec: null provider");
  CostSpec spec;
  for (std::int64_t t = 1; t <= T; ++t) spec.absorb(Q(t), R(t));
  spec.q_provider_ = std::move(Q);
  spec.r_provider_ = std::move(R);
  return spec;
}

CostSpec CostSpec::identity(int dy, int du) {
  return CostSpec(Matrix::Identity(dy, dy), Matrix::Identity(du, du));
}

void CostSpec::absorb(const Matrix& Q, const Matrix& R) {
  auto check = [](const Matrix& M, const char* name) {
    if (M.rows() != M.cols() || M.rows() == 0)
      throw std::invalid_argument(std::string("CostSpec: ") + name + " must be square, got " + shape(M));
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, M.cwiseAbs().maxCoeff()))
      throw std::invalid_argument(std::string("CostSpec: ") + name + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    if (lo < -1e-12) throw std::invalid_argument(std::string("CostSpec: ") + name + " is not PSD, min eigenvalue " + std::to_string(lo));
    return std::pair{lo, es.eigenvalues().maxCoeff()};
  };
  const auto [qlo, qhi] = check(Q, "Q");
  const auto [rlo, rhi] = check(R, "R");
  if (!seen_) {
    dy_ = static_cast<int>(Q.rows());
    du_ = static_cast<int>(R.rows());
    sigma_c_ = std::min(qlo, rlo);
    beta_c_ = std::max(qhi, rhi);
    seen_ = true;
  } else {
    if (Q.rows() != dy_ || R.rows() != du_) throw std::invalid_argument("CostSpec: dimensions change over time");
    sigma_c_ = std::min({sigma_c_, qlo, rlo});
    beta_c_ = std::max({beta_c_, qhi, rhi});
  }
  sigma_c_ = std::max(sigma_c_, 0.0);
}

Matrix CostSpec::Q(std::int64_t t) const { return q_provider_ ? q_provider_(t) : Q_; }
Matrix CostSpec::R(std::int64_t t) const { return r_provider_ ? r_provider_(t) : R_; }

double cost_eval(const CostSpec& spec, std::int64_t t, const Vector& y, const Vector& u) {
  if (y.size() != spec.dy() || u.size() != spec.du()) throw std::invalid_argument("cost_eval: dimension mismatch");
  return spec.evaluate(t, y, u);
}

double CostSpec::evaluate(std::int64_t t, const Vector& y, const Vector& u) const {
  if (!q_provider_) return y.dot(Q_ * y) + u.dot(R_ * u);
  return y.dot(q_provider_(t) * y) + u.dot(r_provider_(t) * u);
}

}  // namespace bandit_control

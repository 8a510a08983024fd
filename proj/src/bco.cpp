#include "bandit_control/bco.hpp"

#include "bandit_control/diagnostics.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace bandit_control {

void EbcoConfig::validate() const {
  if (n < 1) throw std::invalid_argument("EbcoConfig: n must be >= 1");
  if (H < 1) throw std::invalid_argument("EbcoConfig: H must be >= 1");
  if (T < H) throw std::invalid_argument("EbcoConfig: T must be >= H");
  if (!(eta > 0.0)) throw std::invalid_argument("EbcoConfig: eta must be positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("EbcoConfig: sigma must be positive");
  if (set.dim() != n) throw std::invalid_argument("EbcoConfig: constraint set dimension differs from n");
  if (!(proximal_weight >= 0.0)) throw std::invalid_argument("EbcoConfig: proximal_weight must be nonnegative");
  if (!(newton_tol > 0.0) || max_newton_iters < 1) throw std::invalid_argument("EbcoConfig: bad Newton settings");
}

Preconditioner make_preconditioner(const ConstraintSet& set, const Vector& x, double eta, double sigma,
                                   std::int64_t t) {
  if (!set.is_interior(x)) throw std::domain_error("make_preconditioner: point is not interior");
  const double shift = eta * sigma * static_cast<double>(t);
  const auto n = x.size();
  // Both barrier Hessians have closed-form spectra, which stay accurate much
  // closer to the boundary than a numerical eigendecomposition.
  if (const auto* ball = std::get_if<EuclideanBall>(&set.shape())) {
    const Vector d = x - ball->center;
    const double dd = d.squaredNorm();
    const double s = ball->radius * ball->radius - dd;
    const double perp = 2.0 / s + shift;
    const double par = perp + 4.0 * dd / (s * s);
    Matrix P = dd > 0.0 ? Matrix(d * d.transpose() / dd) : Matrix::Zero(n, n);
    const Matrix I = Matrix::Identity(n, n);
    return Preconditioner{(I - P) / std::sqrt(perp) + P / std::sqrt(par), (I - P) * std::sqrt(perp) + P * std::sqrt(par)};
  }
  const auto& box = std::get<Box>(set.shape());
  const Vector a = (box.upper - x).array(), b = (x - box.lower).array();
  const Vector diag = (a.array().square().inverse() + b.array().square().inverse() + shift).matrix();
  return Preconditioner{Matrix(diag.array().rsqrt().matrix().asDiagonal()), Matrix(diag.array().sqrt().matrix().asDiagonal())};
}

Vector grad_estimate(double loss_value, std::span<const Matrix> A_inv, std::span<const Vector> u, int n) {
  if (A_inv.size() != u.size() || u.empty()) throw std::invalid_argument("grad_estimate: history sizes differ");
  Vector acc = Vector::Zero(u.front().size());
  for (std::size_t i = 0; i < u.size(); ++i) acc += A_inv[i] * u[i];
  return static_cast<double>(n) * loss_value * acc;
}

void DelayedLossSum::add(const Vector& g, const Vector& anchor) {
  linear += g;
  anchor_sum += anchor;
  anchor_sq += anchor.squaredNorm();
  count += 1.0;
}

namespace {

ObjectiveEval folded_quadratic(const DelayedLossSum& sum, const EbcoConfig& config, const Vector& x) {
  const double ws = config.proximal_weight * config.sigma;
  ObjectiveEval e;
  e.value = config.eta * (sum.linear.dot(x) +
                          ws * (sum.count * x.squaredNorm() - 2.0 * sum.anchor_sum.dot(x) + sum.anchor_sq));
  e.grad = config.eta * (sum.linear + 2.0 * ws * (sum.count * x - sum.anchor_sum));
  e.hess = Matrix::Identity(x.size(), x.size()) * (2.0 * config.eta * ws * sum.count);
  return e;
}

}  // namespace

ObjectiveEval rftl_objective(const DelayedLossSum& sum, const EbcoConfig& config, const Vector& x) {
  ObjectiveEval e = folded_quadratic(sum, config, x);
  const BarrierEval be = barrier_eval(config.set, x);
  e.value += be.value;
  e.grad += be.grad;
  e.hess += be.hess;
  return e;
}

NewtonResult minimize_barrier_objective(const ConstraintSet& set, const SmoothTerm& smooth, const Vector& start,
                                        double tol, int max_iters) {
  if (!set.is_interior(start)) throw std::domain_error("minimize_barrier_objective: start is not interior");
  auto total = [&](const Vector& x) {
    ObjectiveEval e = smooth(x);
    const BarrierEval be = barrier_eval(set, x);
    e.value += be.value;
    e.grad += be.grad;
    e.hess += be.hess;
    return e;
  };

  NewtonResult res;
  res.x = start;
  ObjectiveEval cur = total(res.x);
  for (int iter = 0;; ++iter) {
    res.grad_norm = cur.grad.norm();
    res.iterations = iter;
    if (res.grad_norm <= tol) return res;

    Eigen::LLT<Matrix> llt(cur.hess);
    Vector step = llt.info() == Eigen::Success ? Vector(llt.solve(-cur.grad)) : Vector(cur.hess.ldlt().solve(-cur.grad));
    const double slope = cur.grad.dot(step);
    // Near the boundary the gradient cannot be resolved to `tol` in floating
    // point. The squared Newton decrement bounds the suboptimality, so stop
    // once it is below tol^2 or below the resolution of the objective value.
    const double dec2 = std::max(-slope, 0.0);
    if (dec2 <= tol * tol || dec2 <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(cur.value)))
      return res;
    if (iter >= max_iters)
      throw NewtonFailure("Newton solver did not converge in " + std::to_string(max_iters) +
                              " iterations, gradient norm " + std::to_string(res.grad_norm),
                          res.grad_norm);
    double alpha = 1.0;
    const double slack = 1e-13 * std::max(1.0, std::abs(cur.value));
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt, alpha *= 0.5) {
      const Vector trial = res.x + alpha * step;
      if (!set.is_interior(trial)) continue;
      ObjectiveEval next = total(trial);
      if (next.value <= cur.value + 1e-4 * alpha * slope + slack) {
        res.x = trial;
        cur = std::move(next);
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw NewtonFailure("Newton line search failed, gradient norm " + std::to_string(res.grad_norm), res.grad_norm);
  }
}

namespace {

// Root of an increasing function on (lo, hi) by bisection.
template <class F>
double bisect_root(F&& f, double lo, double hi) {
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (f(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

Vector isotropic_barrier_minimizer(const ConstraintSet& set, double alpha, const Vector& beta) {
  if (alpha < 0.0) throw std::invalid_argument("isotropic_barrier_minimizer: alpha must be >= 0");
  if (const auto* ball = std::get_if<EuclideanBall>(&set.shape())) {
    // Shift to the center; the minimizer lies along -b at radius rho.
    const Vector b = beta + 2.0 * alpha * ball->center;
    const double bn = b.norm();
    if (bn == 0.0) return ball->center;
    const double r = ball->radius;
    const double rho =
        bisect_root([&](double p) { return 2.0 * alpha * p - bn + 2.0 * p / (r * r - p * p); }, 0.0, r);
    return ball->center - (rho / bn) * b;
  }
  const auto& box = std::get<Box>(set.shape());
  Vector x(box.lower.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double l = box.lower(i), u = box.upper(i);
    x(i) = bisect_root([&](double v) { return 2.0 * alpha * v + beta(i) + 1.0 / (u - v) - 1.0 / (v - l); }, l, u);
  }
  return x;
}

NewtonResult rftl_d_update(const DelayedLossSum& sum, const EbcoConfig& config, const Vector& warm_start) {
  if (sum.count < 1.0) throw std::invalid_argument("rftl_d_update: needs at least one (g, anchor) pair");
  const double ws = config.proximal_weight * config.sigma;
  const Vector guess = isotropic_barrier_minimizer(config.set, config.eta * ws * sum.count,
                                                   config.eta * (sum.linear - 2.0 * ws * sum.anchor_sum));
  auto smooth = [&](const Vector& x) { return folded_quadratic(sum, config, x); };
  // The closed-form point is only a warm start; Newton certifies stationarity.
  const Vector start = config.set.is_interior(guess) ? guess : warm_start;
  return minimize_barrier_objective(config.set, smooth, start, config.newton_tol, config.max_newton_iters);
}

// ---------------------------------------------------------------------------

Ebco::Ebco(EbcoConfig config, std::uint64_t seed) : config_(std::move(config)), rng_(seed), sum_(config_.n) {
  config_.validate();
  const Vector x0 = analytic_center(config_.set);
  centers_.assign(static_cast<std::size_t>(config_.H), x0);
  for (std::int64_t s = 1; s <= config_.H; ++s) window_.push_back(make_slot(x0, s));
}

Ebco::Slot Ebco::make_slot(const Vector& x, std::int64_t s) {
  Slot slot;
  slot.pre = make_preconditioner(config_.set, x, config_.eta, config_.sigma, s);
  slot.u = sample_unit_sphere(config_.n, rng_);
  return slot;
}

const Vector& Ebco::play() {
  if (!played_) played_ = center() + preconditioner().A * exploration();
  return *played_;
}

void Ebco::feedback(double loss_value) {
  if (!played_) throw std::logic_error("Ebco::feedback before play() at t=" + std::to_string(t_));
  const int H = config_.H;
  EbcoStepLog log{t_, loss_value, 0.0, 0.0, 0};

  if (t_ < H) {
    gradients_.push_back(Vector::Zero(config_.n));
  } else {
    std::vector<Matrix> A_inv;
    std::vector<Vector> us;
    A_inv.reserve(static_cast<std::size_t>(H));
    us.reserve(static_cast<std::size_t>(H));
    for (int i = 0; i < H; ++i) {
      A_inv.push_back(slot(t_ - i).pre.A_inv);
      us.push_back(slot(t_ - i).u);
    }
    gradients_.push_back(grad_estimate(loss_value, A_inv, us, config_.n));
    log.grad_norm = gradients_.back().norm();

    const auto k = static_cast<std::size_t>(t_ - (H - 1));  // delayed index
    sum_.add(gradients_[k - 1], centers_[k - 1]);
    const Vector x_t = center();
    NewtonResult next;
    try {
      next = rftl_d_update(sum_, config_, x_t);
      log.newton_iters = next.iterations;
    } catch (const NewtonFailure& e) {
      next.x = boundary_safe_minimizer();
      log.newton_iters = -1;
      if (!fallback_warned_) {
        warn(std::string(e.what()) + " at t=" + std::to_string(t_) + "; using the closed-form minimizer");
        fallback_warned_ = true;
      }
    }
    log.center_move = (next.x - x_t).norm();
    window_.push_back(make_slot(next.x, t_ + 1));
    centers_.push_back(std::move(next.x));
  }

  ++t_;
  played_.reset();
  while (window_begin_ < t_ - (H - 1) && window_begin_ < t_) {
    window_.pop_front();
    ++window_begin_;
  }
  step_log_.push_back(log);
}

Vector Ebco::boundary_safe_minimizer() const {
  const double ws = config_.proximal_weight * config_.sigma;
  Vector x = isotropic_barrier_minimizer(config_.set, config_.eta * ws * sum_.count,
                                         config_.eta * (sum_.linear - 2.0 * ws * sum_.anchor_sum));
  const Vector c = analytic_center(config_.set);
  for (double shrink = 1e-12; !config_.set.is_interior(x) && shrink < 1.0; shrink *= 10.0) x = c + (1.0 - shrink) * (x - c);
  if (!config_.set.is_interior(x)) throw std::runtime_error("Ebco: no interior minimizer representable");
  return x;
}

void Ebco::write_trace_csv(std::ostream& os) const {
  os << "t,loss,grad_norm,center_move,newton_iters\n";
  os.precision(17);
  for (const auto& s : step_log_)
    os << s.t << ',' << s.loss << ',' << s.grad_norm << ',' << s.center_move << ',' << s.newton_iters << '\n';
}

void Ebco::override_exploration(const Vector& u) {
  if (played_) throw std::logic_error("override_exploration after play()");
  if (u.size() != config_.n) throw std::invalid_argument("override_exploration: dimension mismatch");
  window_.at(static_cast<std::size_t>(t_ - window_begin_)).u = u;
}

void Ebco::reseed(std::uint64_t seed) {
  if (played_) throw std::logic_error("reseed after play()");
  rng_ = Rng(seed);
  window_.at(static_cast<std::size_t>(t_ - window_begin_)).u = sample_unit_sphere(config_.n, rng_);
}

// ---------------------------------------------------------------------------

std::vector<Vector> rftl_d_full_info(std::span<const LossOracle> losses, const ConstraintSet& set,
                                     const RftlDOptions& options) {
  const int H = options.H;
  const auto T = static_cast<std::int64_t>(losses.size());
  if (H < 1 || T < H) throw std::invalid_argument("rftl_d_full_info: need 1 <= H <= T");
  if (!(options.eta > 0.0)) throw std::invalid_argument("rftl_d_full_info: eta must be positive");
  const bool linearized = options.variant == RftlVariant::kLinearizedProximal;
  if (linearized && !(options.sigma >= 0.0)) throw std::invalid_argument("rftl_d_full_info: sigma must be >= 0");

  const Vector x0 = analytic_center(set);
  std::vector<Vector> plays(static_cast<std::size_t>(H), x0);
  DelayedLossSum sum(set.dim());
  EbcoConfig folded;  // carries eta / sigma / weight for the linearized variant
  folded.eta = options.eta;
  folded.sigma = options.sigma;
  folded.proximal_weight = options.proximal_weight;

  for (std::int64_t t = H; t < T; ++t) {
    const std::int64_t newest = t - (H - 1);  // l_newest enters the sum now
    const Vector& warm = plays.back();
    NewtonResult next;
    if (linearized) {
      const Vector& anchor = plays[static_cast<std::size_t>(newest - 1)];
      const Vector g = newest >= H ? losses[static_cast<std::size_t>(newest - 1)].grad(anchor) : Vector::Zero(set.dim());
      sum.add(g, anchor);
      folded.set = set;
      folded.newton_tol = options.newton_tol;
      folded.max_newton_iters = options.max_newton_iters;
      next = rftl_d_update(sum, folded, warm);
    } else {
      auto smooth = [&](const Vector& x) {
        ObjectiveEval e{0.0, Vector::Zero(x.size()), Matrix::Zero(x.size(), x.size())};
        for (std::int64_t k = H; k <= newest; ++k) {
          const LossOracle& l = losses[static_cast<std::size_t>(k - 1)];
          e.value += l.value(x);
          e.grad += l.grad(x);
          e.hess += l.hess(x);
        }
        e.value *= options.eta;
        e.grad *= options.eta;
        e.hess *= options.eta;
        return e;
      };
      next = minimize_barrier_objective(set, smooth, warm, options.newton_tol, options.max_newton_iters);
    }
    plays.push_back(std::move(next.x));
  }
  return plays;
}

}  // namespace bandit_control

#include "bandit_control/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace bandit_control {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_dim(const ConstraintSet& set, const Vector& x) {
  if (x.size() != set.dim())
    throw std::invalid_argument("point has dimension " + std::to_string(x.size()) + ", set has " +
                                std::to_string(set.dim()));
}

}  // namespace

ConstraintSet ConstraintSet::euclidean_ball(Vector center, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("ball radius must be positive");
  if (center.size() == 0) throw std::invalid_argument("ball must have positive dimension");
  return ConstraintSet(EuclideanBall{std::move(center), radius});
}

ConstraintSet ConstraintSet::box(Vector lower, Vector upper) {
  if (lower.size() != upper.size() || lower.size() == 0)
    throw std::invalid_argument("box bounds must have equal positive dimension");
  if (!(lower.array() < upper.array()).all())
    throw std::invalid_argument("box needs lower < upper in every coordinate");
  return ConstraintSet(Box{std::move(lower), std::move(upper)});
}

int ConstraintSet::dim() const {
  return std::visit(overloaded{[](const EuclideanBall& b) { return static_cast<int>(b.center.size()); },
                               [](const Box& b) { return static_cast<int>(b.lower.size()); }},
                    shape_);
}

double ConstraintSet::diameter() const {
  return std::visit(overloaded{[](const EuclideanBall& b) { return 2.0 * b.radius; },
                               [](const Box& b) { return (b.upper - b.lower).norm(); }},
                    shape_);
}

double ConstraintSet::barrier_parameter() const {
  return std::visit(overloaded{[](const EuclideanBall&) { return 1.0; },
                               [](const Box& b) { return 2.0 * static_cast<double>(b.lower.size()); }},
                    shape_);
}

bool ConstraintSet::contains(const Vector& x, double tol) const {
  check_dim(*this, x);
  return std::visit(
      overloaded{[&](const EuclideanBall& b) { return (x - b.center).norm() <= b.radius + tol; },
                 [&](const Box& b) {
                   return ((x.array() >= b.lower.array() - tol) && (x.array() <= b.upper.array() + tol)).all();
                 }},
      shape_);
}

bool ConstraintSet::is_interior(const Vector& x) const {
  check_dim(*this, x);
  return std::visit(
      overloaded{[&](const EuclideanBall& b) {
                   return b.radius * b.radius - (x - b.center).squaredNorm() > 0.0;
                 },
                 [&](const Box& b) { return ((x.array() > b.lower.array()) && (x.array() < b.upper.array())).all(); }},
      shape_);
}

BarrierEval barrier_eval(const ConstraintSet& set, const Vector& x) {
  if (!set.is_interior(x)) throw std::domain_error("barrier_eval: not interior");
  BarrierEval out;
  std::visit(overloaded{[&](const EuclideanBall& b) {
                          const Vector d = x - b.center;
                          const double s = b.radius * b.radius - d.squaredNorm();
                          out.value = -std::log(s);
                          out.grad = 2.0 * d / s;
                          out.hess = (2.0 / s) * Matrix::Identity(d.size(), d.size()) + (4.0 / (s * s)) * d * d.transpose();
                        },
                        [&](const Box& b) {
                          const Eigen::ArrayXd lo = x.array() - b.lower.array();
                          const Eigen::ArrayXd hi = b.upper.array() - x.array();
                          out.value = -(lo.log().sum() + hi.log().sum());
                          out.grad = (-1.0 / lo + 1.0 / hi).matrix();
                          out.hess = (1.0 / lo.square() + 1.0 / hi.square()).matrix().asDiagonal();
                        }},
             set.shape());
  return out;
}

double barrier_value(const ConstraintSet& set, const Vector& x) {
  if (!set.is_interior(x)) throw std::domain_error("barrier_value: not interior");
  return std::visit(overloaded{[&](const EuclideanBall& b) {
                                 return -std::log(b.radius * b.radius - (x - b.center).squaredNorm());
                               },
                               [&](const Box& b) {
                                 return -((x.array() - b.lower.array()).log().sum() +
                                          (b.upper.array() - x.array()).log().sum());
                               }},
                    set.shape());
}

Vector analytic_center(const ConstraintSet& set) {
  return std::visit(overloaded{[](const EuclideanBall& b) -> Vector { return b.center; },
                               [](const Box& b) -> Vector { return 0.5 * (b.lower + b.upper); }},
                    set.shape());
}

bool dikin_contains(const ConstraintSet& set, const Vector& x, const Vector& v) {
  check_dim(set, v);
  const BarrierEval be = barrier_eval(set, x);
  return v.dot(be.hess * v) <= 1.0;
}

InvSqrt inv_sqrt_psd(const Matrix& M) {
  if (M.rows() != M.cols() || M.rows() == 0) throw std::invalid_argument("inv_sqrt_psd: matrix must be square");
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw std::invalid_argument("inv_sqrt_psd: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(M);
  if (es.info() != Eigen::Success) throw std::runtime_error("inv_sqrt_psd: eigendecomposition failed");
  const Vector& lam = es.eigenvalues();
  const double lo = lam.minCoeff();
  if (!(lo > 0.0))
    throw std::domain_error("inv_sqrt_psd: matrix is not positive definite, min eigenvalue " + std::to_string(lo));
  // Clamp tiny eigenvalues; refuse when the clamp would matter.
  constexpr double kClamp = 1e-12;
  if (lo < kClamp && (kClamp - lo) / lo > 1e-8)
    throw std::domain_error("inv_sqrt_psd: min eigenvalue " + std::to_string(lo) + " below clamp");
  const Vector clamped = lam.cwiseMax(kClamp);
  const Matrix& V = es.eigenvectors();
  InvSqrt out;
  out.eigenvalues = clamped;
  out.inv_sqrt = V * clamped.cwiseSqrt().cwiseInverse().asDiagonal() * V.transpose();
  out.sqrt = V * clamped.cwiseSqrt().asDiagonal() * V.transpose();
  // Exact symmetry.
  out.inv_sqrt = 0.5 * (out.inv_sqrt + out.inv_sqrt.transpose()).eval();
  out.sqrt = 0.5 * (out.sqrt + out.sqrt.transpose()).eval();
  return out;
}

Vector sample_unit_sphere(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_unit_sphere: n must be >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  double norm = 0.0;
  do {
    for (int i = 0; i < n; ++i) v(i) = normal(rng);
    norm = v.norm();
  } while (norm == 0.0);
  return v / norm;
}

}  // namespace bandit_control

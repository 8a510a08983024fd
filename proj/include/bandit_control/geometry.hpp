#pragma once

#include "bandit_control/lds.hpp"

#include <variant>

namespace bandit_control {

struct EuclideanBall {
  Vector center;
  double radius = 1.0;
};

struct Box {
  Vector lower;
  Vector upper;
};

// Compact convex set with nonempty interior and a closed-form
// self-concordant barrier:
//   ball: R(x) = -log(r^2 - |x - c|^2)                  (nu = 1)
//   box:  R(x) = sum_i -log(x_i - l_i) - log(u_i - x_i)   (nu = 2n)
class ConstraintSet {
 public:
  static ConstraintSet euclidean_ball(Vector center, double radius);
  static ConstraintSet box(Vector lower, Vector upper);

  int dim() const;
  double diameter() const;
  // Self-concordance parameter, informational only.
  double barrier_parameter() const;

  bool contains(const Vector& x, double tol = 0.0) const;
  bool is_interior(const Vector& x) const;

  const std::variant<EuclideanBall, Box>& shape() const { return shape_; }

 private:
  explicit ConstraintSet(std::variant<EuclideanBall, Box> s) : shape_(std::move(s)) {}
  std::variant<EuclideanBall, Box> shape_;
};

struct BarrierEval {
  double value = 0.0;
  Vector grad;
  Matrix hess;
};

// Throws std::domain_error("not interior") off the open set.
BarrierEval barrier_eval(const ConstraintSet& set, const Vector& x);
double barrier_value(const ConstraintSet& set, const Vector& x);

Vector analytic_center(const ConstraintSet& set);

// v' hess R(x) v <= 1
bool dikin_contains(const ConstraintSet& set, const Vector& x, const Vector& v);

// Symmetric square root pair of an SPD matrix M: inv_sqrt = M^{-1/2},
// sqrt = M^{1/2}, both from one eigendecomposition.
struct InvSqrt {
  Matrix inv_sqrt;
  Matrix sqrt;
  Vector eigenvalues;
};

InvSqrt inv_sqrt_psd(const Matrix& M);

// Uniform on S^{n-1}: a normalized standard Gaussian.
Vector sample_unit_sphere(int n, Rng& rng);

}  // namespace bandit_control

#include "bandit_control/geometry.hpp"

#include <doctest.h>

#include <cmath>

using namespace bandit_control;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Vector random_interior(const ConstraintSet& set, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (const auto* b = std::get_if<EuclideanBall>(&set.shape())) {
    const Vector d = sample_unit_sphere(set.dim(), rng);
    return b->center + 0.999 * b->radius * unif(rng) * d;
  }
  const auto& box = std::get<Box>(set.shape());
  Vector x(set.dim());
  for (int i = 0; i < set.dim(); ++i) x(i) = box.lower(i) + (0.001 + 0.998 * unif(rng)) * (box.upper(i) - box.lower(i));
  return x;
}

}  // namespace

TEST_CASE("ConstraintSet construction") {
  CHECK_THROWS(ConstraintSet::euclidean_ball(Vector::Zero(2), 0.0));
  CHECK_THROWS(ConstraintSet::euclidean_ball(Vector::Zero(2), -1.0));
  CHECK_THROWS(ConstraintSet::box(vec({0, 1}), vec({1, 1})));
  CHECK_THROWS(ConstraintSet::box(vec({0}), vec({1, 1})));

  const auto ball = ConstraintSet::euclidean_ball(Vector::Zero(3), 2.0);
  CHECK(ball.dim() == 3);
  CHECK(ball.diameter() == doctest::Approx(4.0));
  CHECK(ball.barrier_parameter() == 1.0);
  const auto box = ConstraintSet::box(vec({0, 0}), vec({3, 4}));
  CHECK(box.diameter() == doctest::Approx(5.0));
  CHECK(box.barrier_parameter() == 4.0);

  CHECK(ball.contains(vec({2, 0, 0})));
  CHECK_FALSE(ball.is_interior(vec({2, 0, 0})));
  CHECK(ball.is_interior(vec({1.9, 0, 0})));
  CHECK_FALSE(ball.contains(vec({2 + 1e-9, 0, 0})));
  CHECK(ball.contains(vec({2 + 1e-9, 0, 0}), 1e-8));
}

TEST_CASE("barrier_eval") {
  SUBCASE("ball center") {
    const auto set = ConstraintSet::euclidean_ball(Vector::Zero(2), 1.0);
    const auto b = barrier_eval(set, Vector::Zero(2));
    CHECK(b.value == doctest::Approx(0.0));
    CHECK(b.grad.norm() == 0.0);
    CHECK((b.hess - 2.0 * Matrix::Identity(2, 2)).norm() < 1e-15);
  }
  SUBCASE("box midpoint") {
    const auto set = ConstraintSet::box(vec({0}), vec({1}));
    const auto b = barrier_eval(set, vec({0.5}));
    CHECK(b.value == doctest::Approx(-2.0 * std::log(0.5)));
    CHECK(b.grad(0) == doctest::Approx(0.0));
    CHECK(b.hess(0, 0) == doctest::Approx(8.0));
  }
  SUBCASE("not interior") {
    const auto set = ConstraintSet::euclidean_ball(Vector::Zero(2), 1.0);
    CHECK_THROWS_WITH(barrier_eval(set, vec({1, 0})), doctest::Contains("not interior"));
    CHECK_THROWS_WITH(barrier_eval(set, vec({2, 0})), doctest::Contains("not interior"));
    const auto box = ConstraintSet::box(vec({0}), vec({1}));
    CHECK_THROWS_WITH(barrier_eval(box, vec({0})), doctest::Contains("not interior"));
  }
  SUBCASE("finite differences") {
    Rng rng(17);
    const auto ball = ConstraintSet::euclidean_ball(vec({0.5, -1, 2}), 2.0);
    const auto box = ConstraintSet::box(vec({-1, 0, 2}), vec({1, 3, 2.5}));
    const double h = 1e-5;
    for (const auto* set : {&ball, &box}) {
      for (int k = 0; k < 20; ++k) {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        Vector x = random_interior(*set, rng);
        // stay away from the boundary so the step does not leave the set
        x = analytic_center(*set) + 0.8 * (x - analytic_center(*set));
        const auto b = barrier_eval(*set, x);
        CHECK((b.hess - b.hess.transpose()).norm() <= 1e-12);
        for (int i = 0; i < 3; ++i) {
          const Vector e = Vector::Unit(3, i) * h;
          const double fd = (barrier_value(*set, x + e) - barrier_value(*set, x - e)) / (2 * h);
          CHECK(fd == doctest::Approx(b.grad(i)).epsilon(1e-6).scale(1.0));
          const Vector fdh = (barrier_eval(*set, x + e).grad - barrier_eval(*set, x - e).grad) / (2 * h);
          for (int j = 0; j < 3; ++j) CHECK(fdh(j) == doctest::Approx(b.hess(j, i)).epsilon(1e-6).scale(1.0));
        }
      }
    }
  }
  SUBCASE("blow-up toward the boundary") {
    const auto set = ConstraintSet::euclidean_ball(vec({1, 1}), 1.5);
    const Vector c = analytic_center(set), d = vec({0.6, 0.8});
    double prev = barrier_value(set, c + 0.9 * 1.5 * d);
    for (int k = 1; k <= 100; ++k) {
      const double v = barrier_value(set, c + (0.9 + 0.0999 * k / 100.0) * 1.5 * d);
      CHECK(v > prev);
      prev = v;
    }
    CHECK(barrier_value(set, c + (1 - 1e-12) * 1.5 * d) > 20.0);
  }
}

TEST_CASE("analytic_center") {
  CHECK(analytic_center(ConstraintSet::euclidean_ball(Vector::Zero(2), 1.0)).norm() == 0.0);
  CHECK(analytic_center(ConstraintSet::box(vec({-1}), vec({3})))(0) == doctest::Approx(1.0));
  const auto box = ConstraintSet::box(vec({0, 0}), vec({1, 4}));
  const Vector c = analytic_center(box);
  CHECK(c(0) == doctest::Approx(0.5));
  CHECK(c(1) == doctest::Approx(2.0));
  CHECK(barrier_eval(box, c).grad.norm() <= 1e-10);
}

TEST_CASE("dikin_contains") {
  const auto ball = ConstraintSet::euclidean_ball(Vector::Zero(2), 1.0);
  CHECK(dikin_contains(ball, vec({0.3, 0.1}), Vector::Zero(2)));
  const Vector v = vec({0.7071, 0.0});
  CHECK(dikin_contains(ball, Vector::Zero(2), v));
  CHECK(v.norm() <= 1.0);
  CHECK_FALSE(dikin_contains(ball, Vector::Zero(2), vec({0.71, 0.0})));
  CHECK_FALSE(dikin_contains(ConstraintSet::box(vec({0}), vec({1})), vec({0.9}), vec({0.2})));

  SUBCASE("property: the unit Dikin ellipsoid lies in the set") {
    Rng rng(123);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    int checked = 0;
    for (int k = 0; k < 1000; ++k) {
      const int n = 1 + k % 4;
      ConstraintSet set = k % 2 ? ConstraintSet::euclidean_ball(Vector::Random(n), 0.1 + 2 * unif(rng))
                                : ConstraintSet::box(-Vector::Ones(n) - Vector::Random(n).cwiseAbs(),
                                                     Vector::Ones(n) + Vector::Random(n).cwiseAbs());
      const Vector x = random_interior(set, rng);
      const Matrix H = barrier_eval(set, x).hess;
      Vector v = sample_unit_sphere(n, rng);
      v *= unif(rng) / std::sqrt(v.dot(H * v));
      REQUIRE(dikin_contains(set, x, v));
      CHECK(set.contains(x + v, 1e-10));
      ++checked;
    }
    CHECK(checked == 1000);
  }
}

TEST_CASE("inv_sqrt_psd") {
  CHECK((inv_sqrt_psd(Matrix::Identity(3, 3)).inv_sqrt - Matrix::Identity(3, 3)).norm() < 1e-15);
  const Matrix D = vec({4, 9}).asDiagonal();
  const auto r = inv_sqrt_psd(D);
  CHECK(r.inv_sqrt(0, 0) == doctest::Approx(0.5));
  CHECK(r.inv_sqrt(1, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(r.sqrt(1, 1) == doctest::Approx(3.0));

  Rng rng(99);
  for (int k = 0; k < 10; ++k) {
    Matrix X = Matrix::Random(5, 5);
    const Matrix M = X * X.transpose() + 0.1 * Matrix::Identity(5, 5);
    const auto s = inv_sqrt_psd(M);
    CHECK((s.inv_sqrt * M * s.inv_sqrt - Matrix::Identity(5, 5)).norm() < 1e-8);
    CHECK(op_norm(s.inv_sqrt.inverse() * s.inv_sqrt.inverse() - M) < 1e-8);
    CHECK((s.inv_sqrt - s.inv_sqrt.transpose()).norm() < 1e-12);
    CHECK(s.eigenvalues.minCoeff() > 0.0);
  }
  CHECK_THROWS(inv_sqrt_psd(vec({1, -1}).asDiagonal().toDenseMatrix()));
  Matrix asym(2, 2);
  asym << 1, 0.5, 0, 1;
  CHECK_THROWS(inv_sqrt_psd(asym));
}

TEST_CASE("sample_unit_sphere") {
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    const Vector u = sample_unit_sphere(1, rng);
    CHECK(std::abs(u(0)) == 1.0);
  }
  for (int n = 1; n <= 8; ++n) CHECK(std::abs(sample_unit_sphere(n, rng).norm() - 1.0) < 1e-12);
  CHECK_THROWS(sample_unit_sphere(0, rng));

  SUBCASE("second moment is I / n") {
    const int n = 4, N = 100000;
    Matrix sum = Matrix::Zero(n, n), sq = Matrix::Zero(n, n);
    Vector mean = Vector::Zero(n);
    for (int k = 0; k < N; ++k) {
      const Vector u = sample_unit_sphere(n, rng);
      const Matrix uu = u * u.transpose();
      sum += uu;
      sq += uu.cwiseProduct(uu);
      mean += u;
    }
    for (int i = 0; i < n; ++i) {
      CHECK(std::abs(mean(i) / N) <= 3.0 * std::sqrt(1.0 / n / N));
      for (int j = 0; j < n; ++j) {
        const double m = sum(i, j) / N;
        const double se = std::sqrt((sq(i, j) / N - m * m) / N);
        CHECK(std::abs(m - (i == j ? 1.0 / n : 0.0)) <= 3.0 * se);
      }
    }
  }
}

#include "bandit_control/diagnostics.hpp"
#include "bandit_control/lds.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace bandit_control;

namespace {

Matrix M1(double v) { return Matrix::Constant(1, 1, v); }

Vector random_vector(int n, Rng& rng) {
  std::normal_distribution<double> nd;
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

struct WarningCapture {
  std::vector<std::string> messages;
  WarningCapture() {
    set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { reset_warning_sink(); }
};

}  // namespace

TEST_CASE("LdsParams validates dimensions") {
  CHECK_NOTHROW(LdsParams::make(Matrix::Zero(2, 2), Matrix::Zero(2, 1), Matrix::Zero(3, 2)));
  CHECK_THROWS(LdsParams::make(Matrix::Zero(2, 3), Matrix::Zero(2, 1), Matrix::Zero(1, 2)));
  CHECK_THROWS(LdsParams::make(Matrix::Zero(2, 2), Matrix::Zero(3, 1), Matrix::Zero(1, 2)));
  CHECK_THROWS(LdsParams::make(Matrix::Zero(2, 2), Matrix::Zero(2, 1), Matrix::Zero(1, 3)));
  CHECK_THROWS(LdsParams::make_stable(Matrix::Identity(2, 2), Matrix::Zero(2, 1), Matrix::Identity(2, 2)));
  CHECK_NOTHROW(LdsParams::make_stable(0.5 * Matrix::Identity(2, 2), Matrix::Zero(2, 1), Matrix::Identity(2, 2)));
}

TEST_CASE("simulate_step") {
  SUBCASE("zero dynamics") {
    const auto p = LdsParams::make(M1(0), M1(1), M1(1));
    const auto out = simulate_step({Vector::Zero(1), 1}, p, Vector::Ones(1), Vector::Zero(1), Vector::Zero(1));
    CHECK(out.y(0) == 0.0);
    CHECK(out.next.x(0) == 1.0);
    CHECK(out.next.t == 2);
  }
  SUBCASE("homogeneous recursion") {
    const auto p = double_integrator();
    Vector x0(2);
    x0 << 0.3, -1.2;
    LdsState s{x0, 1};
    Matrix Ak = Matrix::Identity(2, 2);
    for (int t = 0; t < 25; ++t) {
      const auto out = simulate_step(s, p, Vector::Zero(1), Vector::Zero(2), Vector::Zero(2));
      CHECK((out.y - p.C * Ak * x0).norm() < 1e-12);
      Ak = p.A * Ak;
      s = out.next;
    }
  }
  SUBCASE("double integrator step") {
    Vector x(2);
    x << 1, 0;
    const auto out = simulate_step({x, 1}, double_integrator(), Vector::Zero(1), Vector::Zero(2), Vector::Zero(2));
    CHECK(out.next.x(0) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(out.next.x(1) == doctest::Approx(-0.01).epsilon(1e-15));
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS(simulate_step({Vector::Zero(2), 1}, double_integrator(), Vector::Zero(2), Vector::Zero(2),
                               Vector::Zero(2)));
    CHECK_THROWS(simulate_step({Vector::Zero(2), 1}, double_integrator(), Vector::Zero(1), Vector::Zero(1),
                               Vector::Zero(2)));
  }
}

TEST_CASE("spectral_radius") {
  CHECK(spectral_radius(Matrix::Identity(2, 2)) == doctest::Approx(1.0));
  CHECK(spectral_radius(Matrix::Zero(3, 3)) == 0.0);
  // eigenvalues 0.9 +- i sqrt(0.009)
  CHECK(spectral_radius(double_integrator().A) == doctest::Approx(std::sqrt(0.819)).epsilon(1e-12));
  CHECK_THROWS(spectral_radius(Matrix::Zero(2, 3)));

  // badly scaled but similar to diag(0.5, -0.7)
  Matrix D = Matrix::Zero(2, 2);
  D(0, 0) = 1e6;
  D(1, 1) = 1e-6;
  Matrix J(2, 2);
  J << 0.5, 0.3, 0.0, -0.7;
  CHECK(spectral_radius(D * J * D.inverse()) == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("markov_operator") {
  SUBCASE("zero dynamics") {
    const auto G = markov_operator(LdsParams::make(Matrix::Zero(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2)), 4);
    REQUIRE(G.length() == 4);
    CHECK(G[0].isZero());
    CHECK(G[1].isIdentity());
    CHECK(G[2].isZero());
    CHECK(G[3].isZero());
  }
  SUBCASE("scalar") {
    const auto G = markov_operator(LdsParams::make(M1(0.9), M1(1), M1(1)), 3);
    CHECK(G[0](0, 0) == 0.0);
    CHECK(G[1](0, 0) == 1.0);
    CHECK(G[2](0, 0) == doctest::Approx(0.9));
    CHECK(G.l1_op_norm() == doctest::Approx(1.9));
  }
  SUBCASE("first block is zero for random systems") {
    Rng rng(5);
    for (int k = 0; k < 10; ++k) {
      Matrix A = Matrix::Random(3, 3) * 0.3, B = Matrix::Random(3, 2), C = Matrix::Random(2, 3);
      const auto G = markov_operator(LdsParams::make(A, B, C), 5);
      CHECK(G[0].isZero());
      CHECK(G[0].rows() == 2);
      CHECK(G[0].cols() == 2);
      CHECK((G[3] - C * A * A * B).norm() < 1e-14);
    }
  }
  SUBCASE("length zero") { CHECK_THROWS(markov_operator(double_integrator(), 0)); }
  SUBCASE("unstable warns") {
    WarningCapture cap;
    markov_operator(LdsParams::make(M1(1.5), M1(1), M1(1)), 3);
    CHECK(cap.messages.size() == 1);
  }
  SUBCASE("truncation pads with zeros") {
    const auto G = markov_operator(double_integrator(), 3);
    const auto longer = G.truncated(6);
    CHECK(longer.length() == 6);
    CHECK(longer[5].isZero());
    CHECK((longer[2] - G[2]).norm() == 0.0);
    CHECK(G.truncated(2).length() == 2);
  }
}

TEST_CASE("decay_certificate") {
  SUBCASE("zero dynamics") {
    Matrix B(2, 1);
    B << 3, 4;
    const auto c = decay_certificate(LdsParams::make(Matrix::Zero(2, 2), B, Matrix::Identity(2, 2)));
    CHECK(c.kappa == doctest::Approx(5.0));
    CHECK(c.r > 0.0);
    CHECK(c.r < 1.0);
    CHECK(c.holds());
  }
  SUBCASE("scalar") {
    const auto c = decay_certificate(LdsParams::make(M1(0.9), M1(1), M1(1)));
    CHECK(c.kappa == doctest::Approx(1.0));
    CHECK(c.r == doctest::Approx(0.9));
    CHECK(c.holds());
    // sum_{i >= 3} 0.9^{i-1} = 0.9^2 / 0.1
    CHECK(c.tail_norm(3) == doctest::Approx(8.1).epsilon(1e-6));
  }
  SUBCASE("double integrator") {
    const auto p = double_integrator();
    const auto c = decay_certificate(p, 200);
    CHECK(c.r <= 0.95);
    CHECK(c.r >= spectral_radius(p.A));
    Matrix Ak = Matrix::Identity(2, 2);
    for (int i = 1; i <= 200; ++i) {
      CHECK(op_norm(p.C * Ak * p.B) <= c.kappa * std::pow(c.r, i - 1) * (1 + 1e-9));
      Ak = p.A * Ak;
    }
  }
  SUBCASE("random stable systems") {
    for (int k = 0; k < 20; ++k) {
      Matrix A = Matrix::Random(3, 3);
      A *= 0.95 / std::max(spectral_radius(A), 1e-3);
      const auto c = decay_certificate(LdsParams::make(A, Matrix::Random(3, 2), Matrix::Random(2, 3)));
      CHECK(c.holds());
    }
  }
  SUBCASE("unstable") {
    CHECK_THROWS_WITH(decay_certificate(LdsParams::make(M1(1.0), M1(1), M1(1))), doctest::Contains("unstable system"));
  }
}

TEST_CASE("make_noise") {
  NoiseParams np;
  SUBCASE("all zero") {
    const auto tr = make_noise(NoiseKind::kGaussian, np, 30, 1, 2, 2);
    CHECK(tr.length() == 30);
    for (std::size_t k = 0; k < 30; ++k) {
      CHECK(tr.w[k].isZero());
      CHECK(tr.e[k].isZero());
    }
  }
  SUBCASE("sinusoid peaks at a quarter period") {
    np.amplitude = 0.3;
    np.period = 40;
    const auto tr = make_noise(NoiseKind::kSinusoidal, np, 40, 1, 2, 2);
    CHECK(tr.w[9](0) == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(tr.w[9](1) == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(std::abs(tr.w[19](0)) < 1e-12);
  }
  SUBCASE("components add up") {
    np.sigma_w = 0.1;
    np.sigma_e = 0.2;
    np.amplitude = 0.5;
    np.walk_std = 0.05;
    for (auto kind : {NoiseKind::kGaussian, NoiseKind::kSinusoidal, NoiseKind::kGaussianWalk, NoiseKind::kComposite}) {
      const auto tr = make_noise(kind, np, 50, 9, 2, 3);
      for (std::size_t k = 0; k < 50; ++k) {
        CHECK((tr.w[k] - tr.w_adv[k] - tr.w_stoch[k]).norm() < 1e-15);
        CHECK((tr.e[k] - tr.e_adv[k] - tr.e_stoch[k]).norm() < 1e-15);
        CHECK(tr.e[k].size() == 3);
      }
    }
  }
  SUBCASE("walk increments") {
    np.walk_std = 0.01;
    const auto tr = make_noise(NoiseKind::kGaussianWalk, np, 2000, 4, 1, 1);
    double sq = 0.0;
    for (std::size_t k = 1; k < tr.length(); ++k) sq += std::pow(tr.w[k](0) - tr.w[k - 1](0), 2);
    CHECK(std::sqrt(sq / 1999) == doctest::Approx(0.01).epsilon(0.1));
  }
  SUBCASE("determinism") {
    np.sigma_w = np.sigma_e = 0.1;
    np.amplitude = 0.1;
    const auto a = make_noise(NoiseKind::kComposite, np, 100, 77, 2, 2);
    const auto b = make_noise(NoiseKind::kComposite, np, 100, 77, 2, 2);
    const auto c = make_noise(NoiseKind::kComposite, np, 100, 78, 2, 2);
    CHECK(a.to_csv() == b.to_csv());
    CHECK(a.hash() == b.hash());
    CHECK(a.hash() != c.hash());
  }
  SUBCASE("csv layout") {
    const auto tr = make_noise(NoiseKind::kGaussian, np, 2, 1, 2, 1);
    std::istringstream is(tr.to_csv());
    std::string header;
    std::getline(is, header);
    CHECK(header == "t,w_0,w_1,e_0");
  }
  SUBCASE("zero observation noise warns") {
    WarningCapture cap;
    np.sigma_w = 0.1;
    make_noise(NoiseKind::kGaussian, np, 5, 1, 1, 1);
    CHECK_FALSE(cap.messages.empty());
  }
  SUBCASE("slice") {
    np.sigma_w = np.sigma_e = 1.0;
    const auto tr = make_noise(NoiseKind::kGaussian, np, 20, 3, 2, 2);
    const auto s = tr.slice(5, 4);
    CHECK(s.length() == 4);
    CHECK((s.w[0] - tr.w[4]).norm() == 0.0);
    CHECK_THROWS(tr.slice(18, 5));
  }
  SUBCASE("kind names") {
    for (auto kind : {NoiseKind::kGaussian, NoiseKind::kSinusoidal, NoiseKind::kGaussianWalk, NoiseKind::kComposite})
      CHECK(noise_kind_from_string(to_string(kind)) == kind);
    CHECK_THROWS(noise_kind_from_string("laplace"));
  }
}

TEST_CASE("natures_y_rollout") {
  SUBCASE("zero trace") {
    const auto tr = make_noise(NoiseKind::kGaussian, {}, 10, 1, 2, 2);
    for (const auto& y : natures_y_rollout(double_integrator(), tr)) CHECK(y.isZero());
  }
  SUBCASE("one step memory") {
    Rng rng(3);
    std::vector<Vector> w, e;
    for (int k = 0; k < 10; ++k) {
      w.push_back(random_vector(2, rng));
      e.push_back(random_vector(2, rng));
    }
    const auto tr = make_trace(w, e);
    const auto y = natures_y_rollout(LdsParams::make(Matrix::Zero(2, 2), Matrix::Zero(2, 1), Matrix::Identity(2, 2)), tr);
    CHECK((y[0] - e[0]).norm() == 0.0);
    for (int k = 1; k < 10; ++k) CHECK((y[k] - e[k] - w[k - 1]).norm() < 1e-15);
  }
  SUBCASE("closed form") {
    Rng rng(11);
    Matrix A = Matrix::Random(3, 3);
    A *= 0.9 / spectral_radius(A);
    const Matrix C = Matrix::Random(3, 3);
    const auto p = LdsParams::make(A, Matrix::Random(3, 1), C);
    std::vector<Vector> w, e;
    for (int k = 0; k < 20; ++k) {
      w.push_back(random_vector(3, rng));
      e.push_back(random_vector(3, rng));
    }
    const auto y = natures_y_rollout(p, make_trace(w, e));
    for (int t = 1; t <= 20; ++t) {
      Vector ref = e[t - 1];
      for (int i = 1; i <= t - 1; ++i) {
        Matrix Ap = Matrix::Identity(3, 3);
        for (int k = 0; k < t - i - 1; ++k) Ap = Ap * A;
        ref += C * Ap * w[i - 1];
      }
      CHECK((y[t - 1] - ref).norm() < 1e-10);
    }
  }
}

TEST_CASE("recover_natures_y") {
  const auto p = double_integrator();
  Vector y(2);
  y << 1, 2;
  std::vector<Vector> controls(3, Vector::Zero(1));
  CHECK((recover_natures_y(y, controls, markov_operator(p, 5)) - y).norm() == 0.0);
  controls.assign(3, Vector::Ones(1));
  CHECK((recover_natures_y(y, controls, MarkovOperator::zero(5, 2, 1)) - y).norm() == 0.0);

  SUBCASE("matches the zero-control rollout") {
    NoiseParams np;
    np.sigma_w = np.sigma_e = 0.3;
    const std::size_t T = 50;
    const auto tr = make_noise(NoiseKind::kGaussian, np, T, 21, 2, 2);
    const auto ynat = natures_y_rollout(p, tr);
    const auto G = markov_operator(p, T);
    Rng rng(8);
    LdsState s{Vector::Zero(2), 1};
    std::vector<Vector> past;  // most recent first
    for (std::size_t k = 0; k < T; ++k) {
      const Vector u = random_vector(1, rng);
      const auto out = simulate_step(s, p, u, tr.w[k], tr.e[k]);
      CHECK((recover_natures_y(out.y, past, G) - ynat[k]).norm() < 1e-10);
      past.insert(past.begin(), u);
      s = out.next;
    }
  }
  SUBCASE("nat_norm_bound") {
    NoiseParams np;
    np.sigma_e = 0.5;
    const auto tr = make_noise(NoiseKind::kGaussian, np, 30, 2, 2, 2);
    double m = 0.0;
    for (const auto& v : natures_y_rollout(p, tr)) m = std::max(m, v.norm());
    CHECK(nat_norm_bound(p, tr) == m);
  }
}

TEST_CASE("CostSpec") {
  const auto c = CostSpec::identity(2, 1);
  CHECK(cost_eval(c, 1, Vector::Zero(2), Vector::Zero(1)) == 0.0);
  CHECK(cost_eval(c, 1, Vector::Ones(2), Vector::Constant(1, 2.0)) == doctest::Approx(6.0));
  CHECK_THROWS(cost_eval(c, 1, Vector::Ones(3), Vector::Ones(1)));
  CHECK(c.sigma_c() == doctest::Approx(1.0));
  CHECK(c.beta_c() == doctest::Approx(1.0));
  CHECK(c.L_c() == doctest::Approx(2.0));

  SUBCASE("rejects indefinite or asymmetric weights") {
    CHECK_THROWS(CostSpec(Matrix::Identity(2, 2) * -1.0, Matrix::Identity(1, 1)));
    Matrix Q(2, 2);
    Q << 1, 2, 0, 1;
    CHECK_THROWS(CostSpec(Q, Matrix::Identity(1, 1)));
  }
  SUBCASE("constants from eigenvalues") {
    Matrix Q(2, 2);
    Q << 2, 1, 1, 2;
    const CostSpec s(Q, Matrix::Constant(1, 1, 0.5));
    CHECK(s.sigma_c() == doctest::Approx(0.5));
    CHECK(s.beta_c() == doctest::Approx(3.0));
  }
  SUBCASE("lipschitz bound on sampled pairs") {
    Rng rng(2);
    Matrix Q = Matrix::Random(2, 2);
    Q = Q * Q.transpose() + 0.1 * Matrix::Identity(2, 2);
    const CostSpec s(Q, Matrix::Constant(1, 1, 1.5));
    for (int k = 0; k < 500; ++k) {
      const Vector y = random_vector(2, rng), y2 = random_vector(2, rng);
      const Vector u = random_vector(1, rng), u2 = random_vector(1, rng);
      Vector z(3), z2(3);
      z << y, u;
      z2 << y2, u2;
      const double lhs = std::abs(s.evaluate(1, y, u) - s.evaluate(1, y2, u2));
      CHECK(lhs <= s.L_c() * std::max(z.norm(), z2.norm()) * (z - z2).norm() + 1e-12);
    }
  }
  SUBCASE("time varying") {
    const auto s = CostSpec::time_varying([](std::int64_t t) { return Matrix::Identity(1, 1) * (1.0 + t); },
                                          [](std::int64_t) { return Matrix::Identity(1, 1); }, 4);
    CHECK(s.sigma_c() == doctest::Approx(1.0));
    CHECK(s.beta_c() == doctest::Approx(5.0));
    CHECK(s.evaluate(3, Vector::Ones(1), Vector::Zero(1)) == doctest::Approx(4.0));
    CHECK_FALSE(s.time_invariant());
  }
}

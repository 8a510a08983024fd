#include "bandit_control/diagnostics.hpp"
#include "bandit_control/harness.hpp"

#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace bandit_control;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"({
  "system": "double_integrator",
  "stabilize_with_lqr": true,
  "noises": [
    {"name": "g", "kind": "gaussian", "sigma_w": 0.1, "sigma_e": 0.1},
    {"name": "s", "kind": "sinusoidal", "amplitude": 0.1, "period": 40, "sigma_w": 0.1, "sigma_e": 0.1}
  ],
  "cost": {"Q": "identity", "R": "identity"},
  "T": 120,
  "H": 3,
  "seeds": [1, 2, 3],
  "moving_avg_window": 10,
  "controllers": [
    {"type": "ebpc_known", "name": "ebpc", "R": 0.5, "eta_multiplier": 10},
    {"type": "ebpc_unknown", "name": "unk", "R": 0.5},
    {"type": "bpc", "name": "bpc"},
    {"type": "lqr", "name": "lqr"},
    {"type": "zero", "name": "zero"}
  ],
  "oracle": {"enabled": true, "l1_op": true}
})";

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bandit_control_test_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<std::string> config_errors(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.errors();
  }
  return {};
}

}  // namespace

TEST_CASE("parse_config") {
  const auto cfg = parse_config(kSmall);
  CHECK(cfg.T == 120);
  CHECK(cfg.H == 3);
  CHECK(cfg.noises.size() == 2);
  CHECK(cfg.noises[1].kind == NoiseKind::kSinusoidal);
  CHECK(cfg.noises[1].params.period == 40.0);
  CHECK(cfg.controllers.size() == 5);
  CHECK(cfg.controllers[0].eta_multiplier == 10.0);
  CHECK((cfg.system.A - double_integrator().A).norm() == 0.0);
  CHECK(cfg.Q.isIdentity());
  CHECK(cfg.stabilize_with_lqr);

  SUBCASE("explicit matrices and scalar costs") {
    const auto c = parse_config(R"({
      "system": {"A": [[0.5]], "B": [[1]], "C": [[1]], "name": "scalar"},
      "noise": {"kind": "gaussian", "sigma_w": 0.2, "sigma_e": 0.1},
      "cost": {"Q": 2.0, "R": [[3.0]]},
      "T": 10, "seeds": [4],
      "controllers": [{"type": "zero"}]
    })");
    CHECK(c.system_name == "scalar");
    CHECK(c.Q(0, 0) == 2.0);
    CHECK(c.R(0, 0) == 3.0);
    CHECK(c.noises.size() == 1);
  }

  SUBCASE("every violation is reported") {
    const auto errs = config_errors(R"({
      "system": "double_integrator",
      "noises": [{"kind": "gaussian"}],
      "T": 0,
      "seeds": [1, 1],
      "controllers": [],
      "bogus": 1
    })");
    CHECK(errs.size() >= 4);
    auto mentions = [&](const std::string& s) {
      for (const auto& e : errs)
        if (e.find(s) != std::string::npos) return true;
      return false;
    };
    CHECK(mentions("T"));
    CHECK(mentions("seeds"));
    CHECK(mentions("controllers"));
    CHECK(mentions("bogus"));
  }
  SUBCASE("malformed input") {
    CHECK_THROWS_AS(parse_config("{"), ConfigError);
    CHECK_FALSE(config_errors(R"({"system": "pendulum", "T": 5, "seeds": [1], "controllers": [{"type": "zero"}]})").empty());
    CHECK_FALSE(config_errors(R"({"system": "double_integrator", "T": 5, "seeds": [1],
      "controllers": [{"type": "magic"}]})").empty());
    CHECK_FALSE(config_errors(R"({"system": {"A": [[1, 0]], "B": [[1]], "C": [[1]]}, "T": 5, "seeds": [1],
      "controllers": [{"type": "zero"}]})").empty());
    // lqr needs the state
    CHECK_FALSE(config_errors(R"({"system": {"A": [[0.5, 0], [0, 0.5]], "B": [[1], [0]], "C": [[1, 0]]},
      "T": 5, "seeds": [1], "controllers": [{"type": "lqr"}]})").empty());
  }
  SUBCASE("eta multiplier expansion") {
    auto c = parse_config(kSmall);
    c.eta_multipliers = {1.0, 100.0};
    const auto ex = c.expanded_controllers();
    CHECK(ex.size() == 3 + 2 * 2);
    int tagged = 0;
    for (const auto& s : ex)
      if (s.name.find("@eta=100") != std::string::npos) {
        ++tagged;
        CHECK(s.eta_multiplier == 100.0);
      }
    CHECK(tagged == 2);
  }
  SUBCASE("shipped configs load") {
    CHECK_NOTHROW(load_config(fs::path(BANDIT_CONTROL_SOURCE_DIR) / "configs" / "double_integrator.json"));
    CHECK_THROWS(load_config("/nonexistent/config.json"));
  }
}

TEST_CASE("moving_average") {
  const std::vector<double> x{3, 1, 4, 1, 5};
  CHECK(moving_average(x, 1) == x);
  const std::vector<double> c(7, 2.5);
  for (double v : moving_average(c, 3)) CHECK(v == doctest::Approx(2.5));
  const std::vector<double> two{0, 2};
  const auto m = moving_average(two, 2);
  CHECK(m[0] == 0.0);
  CHECK(m[1] == 1.0);
  const auto m3 = moving_average(x, 3);
  CHECK(m3[4] == doctest::Approx(10.0 / 3.0));
  CHECK_THROWS(moving_average(x, 0));
}

TEST_CASE("run_experiment") {
  SUBCASE("zero noise costs nothing") {
    auto cfg = parse_config(kSmall);
    for (auto& n : cfg.noises) n.params = NoiseParams{};
    for (auto& c : cfg.controllers) c.sigma = 0.1;  // the default sigma_w would be zero
    cfg.controllers.erase(cfg.controllers.begin() + 1);  // the unknown-system controller explores
    const auto rep = run_experiment(cfg, 1);
    for (const auto& r : rep.trials) {
      CHECK_MESSAGE(r.error.empty(), r.controller << ": " << r.error);
      CHECK_MESSAGE(r.total_cost == 0.0, r.controller);
      REQUIRE(r.regret_fro);
      CHECK(*r.regret_fro == 0.0);
    }
  }
  SUBCASE("zero controller equals the uncontrolled rollout") {
    auto cfg = parse_config(kSmall);
    cfg.controllers = {cfg.controllers[4]};
    cfg.stabilize_with_lqr = false;
    cfg.seeds = {5};
    cfg.noises.resize(1);
    const auto rep = run_experiment(cfg, 1);
    REQUIRE(rep.trials.size() == 1);
    const auto& ns = cfg.noises[0];
    const auto tr = make_noise(ns.kind, ns.params, 120, derive_seed(5, 1), 2, 2);
    double total = 0.0;
    for (const auto& y : natures_y_rollout(cfg.system, tr)) total += y.squaredNorm();
    CHECK(rep.trials[0].total_cost == doctest::Approx(total).epsilon(1e-12));
    CHECK(rep.trials[0].trace_hash == tr.hash());
  }
  SUBCASE("trial bookkeeping") {
    const auto cfg = parse_config(kSmall);
    const auto rep = run_experiment(cfg, 2);
    CHECK(rep.trials.size() == 2 * 5 * 3);
    CHECK(rep.aggregates.size() == 2 * 5);
    for (const auto& r : rep.trials) {
      CHECK(r.error.empty());
      CHECK(r.trial.length() == 120);
      // identical trace for every controller on the same (noise, seed)
      for (const auto& o : rep.trials)
        if (o.noise == r.noise && o.seed == r.seed) CHECK(o.trace_hash == r.trace_hash);
      REQUIRE(r.oracle_fro);
      CHECK(*r.regret_fro + *r.oracle_fro == r.total_cost);
      REQUIRE(r.oracle_l1op);
      CHECK(*r.regret_l1op + *r.oracle_l1op == r.total_cost);
      CHECK(*r.oracle_l1op <= *r.oracle_fro + 1e-9);
      double sum = 0.0;
      for (double c : r.trial.cost) sum += c;
      CHECK(r.total_cost == doctest::Approx(sum).epsilon(1e-14));
    }
    const auto& agg = rep.aggregate("s", "lqr");
    CHECK(agg.seeds == 3);
    CHECK(agg.mean_moving_avg.size() == 120);
    double m = 0.0;
    for (const auto& r : rep.trials)
      if (r.noise == "s" && r.controller == "lqr") m += r.total_cost / 3.0;
    CHECK(agg.mean_total_cost == doctest::Approx(m).epsilon(1e-14));
    CHECK_THROWS(rep.aggregate("s", "nope"));
  }
}

TEST_CASE("emit_csv") {
  const auto cfg = parse_config(kSmall);
  const auto rep = run_experiment(cfg, 1);
  const auto dir = scratch_dir("emit");
  const auto files = emit_csv(rep, dir);
  CHECK(files.size() == rep.trials.size() + 3);

  std::istringstream summary(slurp(dir / "summary.csv"));
  std::string line;
  std::getline(summary, line);
  CHECK(line == "noise,controller,seed,total_cost,regret_fro,regret_l1op,final_quarter_loss,trace_hash,status");
  int rows = 0;
  while (std::getline(summary, line)) ++rows;
  CHECK(rows == 2 * 5 * 3);

  std::istringstream ts(slurp(dir / "trials" / "s__ebpc__seed2.csv"));
  std::getline(ts, line);
  CHECK(line == "t,cost,moving_avg,cum_cost");
  double cum = 0.0;
  int t = 0;
  while (std::getline(ts, line)) {
    double tt, c, ma, cc;
    char sep;
    std::istringstream ls(line);
    ls >> tt >> sep >> c >> sep >> ma >> sep >> cc;
    cum += c;
    CHECK(cc == doctest::Approx(cum).epsilon(1e-12));
    CHECK(tt == ++t);
  }
  CHECK(t == 120);
  fs::remove_all(dir);
}

TEST_CASE("determinism across thread counts") {
  const auto cfg = parse_config(kSmall);
  const auto d1 = scratch_dir("det1"), d4 = scratch_dir("det4");
  const auto f1 = emit_csv(run_experiment(cfg, 1), d1);
  const auto f4 = emit_csv(run_experiment(cfg, 4), d4);
  REQUIRE(f1.size() == f4.size());
  for (std::size_t i = 0; i < f1.size(); ++i) {
    CHECK(f1[i].filename() == f4[i].filename());
    CHECK(slurp(f1[i]) == slurp(f4[i]));
  }
  fs::remove_all(d1);
  fs::remove_all(d4);
}

TEST_CASE("failed trials are recorded") {
  auto cfg = parse_config(kSmall);
  cfg.controllers = {cfg.controllers[0], cfg.controllers[4]};
  cfg.controllers[0].H = 200;  // longer than T
  cfg.noises.resize(1);
  std::vector<std::string> msgs;
  set_warning_sink([&](const std::string& m) { msgs.push_back(m); });
  const auto rep = run_experiment(cfg, 1);
  reset_warning_sink();
  for (const auto& r : rep.trials) CHECK(r.error.empty() == (r.controller == "zero"));
  CHECK(rep.aggregate("g", "ebpc").seeds == 0);
  CHECK(rep.aggregate("g", "zero").seeds == 3);
  const auto dir = scratch_dir("failed");
  emit_csv(rep, dir);
  CHECK(slurp(dir / "summary.csv").find(",failed\n") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("parallel_for") {
  std::vector<int> slots(1000, 0);
  parallel_for(slots.size(), 8, [&](std::size_t i) { slots[i] = static_cast<int>(i) * 2; });
  for (std::size_t i = 0; i < slots.size(); ++i) CHECK(slots[i] == static_cast<int>(i) * 2);
  std::atomic<int> calls{0};
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [&](std::size_t i) {
                                 ++calls;
                                 if (i == 4) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
  parallel_for(0, 4, [&](std::size_t) { FAIL("no work expected"); });

  setenv("BANDIT_CONTROL_THREADS", "3", 1);
  CHECK(default_thread_count() == 3);
  unsetenv("BANDIT_CONTROL_THREADS");
  CHECK(default_thread_count() >= 1);
}

TEST_CASE("estimation study") {
  auto cfg = parse_config(kSmall);
  cfg.estimation.N = {100, 400};
  cfg.seeds = {1, 2};
  const auto rows = run_estimation_study(cfg, 2);
  CHECK(rows.size() == 4);
  for (const auto& r : rows) CHECK(r.err_l1_op > 0.0);
  std::ostringstream os;
  write_estimation_csv(rows, os);
  CHECK(os.str().rfind("noise,N,seed,err_l1_op,residual,rank\n", 0) == 0);
  const auto again = run_estimation_study(cfg, 1);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].err_l1_op == rows[i].err_l1_op);
}

#include "bandit_control/harness.hpp"

#include "bandit_control/diagnostics.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace bandit_control {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Collects violations instead of throwing on the first one.
struct Reader {
  std::vector<std::string> errors;

  void unknown_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) errors.push_back(where + ": unknown key '" + it.key() + "'");
    }
  }

  template <class T>
  std::optional<T> get(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) return std::nullopt;
    try {
      return obj.at(key).get<T>();
    } catch (const json::exception&) {
      errors.push_back(where + "." + key + ": wrong type");
      return std::nullopt;
    }
  }

  std::optional<Matrix> matrix(const json& v, const std::string& where) {
    if (v.is_number()) return Matrix::Constant(1, 1, v.get<double>());
    if (!v.is_array() || v.empty()) {
      errors.push_back(where + ": expected a nonempty array of rows");
      return std::nullopt;
    }
    const std::size_t cols = v.front().is_array() ? v.front().size() : 0;
    if (cols == 0) {
      errors.push_back(where + ": rows must be nonempty arrays");
      return std::nullopt;
    }
    Matrix M(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < v.size(); ++r) {
      if (!v[r].is_array() || v[r].size() != cols) {
        errors.push_back(where + ": ragged matrix");
        return std::nullopt;
      }
      for (std::size_t c = 0; c < cols; ++c) {
        if (!v[r][c].is_number()) {
          errors.push_back(where + ": non-numeric entry");
          return std::nullopt;
        }
        M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r][c].get<double>();
      }
    }
    return M;
  }

  // "identity", a scalar multiple of I, or an explicit matrix.
  std::optional<Matrix> cost_matrix(const json& v, int dim, const std::string& where) {
    if (v.is_string()) {
      if (v.get<std::string>() == "identity") return Matrix::Identity(dim, dim);
      errors.push_back(where + ": unknown matrix name '" + v.get<std::string>() + "'");
      return std::nullopt;
    }
    if (v.is_number()) return v.get<double>() * Matrix::Identity(dim, dim);
    auto M = matrix(v, where);
    if (M && (M->rows() != dim || M->cols() != dim)) {
      errors.push_back(where + ": expected a " + std::to_string(dim) + "x" + std::to_string(dim) + " matrix");
      return std::nullopt;
    }
    return M;
  }
};

NoiseSpec parse_noise(Reader& rd, const json& j, const std::string& where) {
  NoiseSpec ns;
  if (!j.is_object()) {
    rd.errors.push_back(where + ": expected an object");
    return ns;
  }
  rd.unknown_keys(j, where, {"name", "kind", "sigma_w", "sigma_e", "amplitude", "period", "walk_std"});
  const auto kind = rd.get<std::string>(j, "kind", where);
  if (!kind) {
    rd.errors.push_back(where + ": missing 'kind'");
  } else {
    try {
      ns.kind = noise_kind_from_string(*kind);
    } catch (const std::exception& e) {
      rd.errors.push_back(where + ": " + e.what());
    }
  }
  ns.name = rd.get<std::string>(j, "name", where).value_or(kind.value_or("noise"));
  ns.params.sigma_w = rd.get<double>(j, "sigma_w", where).value_or(0.1);
  ns.params.sigma_e = rd.get<double>(j, "sigma_e", where).value_or(0.1);
  ns.params.amplitude = rd.get<double>(j, "amplitude", where).value_or(0.0);
  ns.params.period = rd.get<double>(j, "period", where).value_or(40.0);
  ns.params.walk_std = rd.get<double>(j, "walk_std", where).value_or(0.0);
  if (ns.params.sigma_w < 0 || ns.params.sigma_e < 0 || ns.params.walk_std < 0)
    rd.errors.push_back(where + ": noise scales must be nonnegative");
  if (!(ns.params.period > 0)) rd.errors.push_back(where + ": period must be positive");
  return ns;
}

ControllerSpec parse_controller(Reader& rd, const json& j, const std::string& where) {
  ControllerSpec cs;
  if (!j.is_object()) {
    rd.errors.push_back(where + ": expected an object");
    return cs;
  }
  rd.unknown_keys(j, where,
                  {"name", "type", "H", "R", "eta_multiplier", "eta", "sigma", "sigma_multiplier", "sigma_w_squared",
                   "delta", "lr", "R_bound"});
  cs.type = rd.get<std::string>(j, "type", where).value_or("");
  static const std::set<std::string> types{"ebpc_known", "ebpc_unknown", "bpc", "lqr", "zero"};
  if (!types.count(cs.type)) rd.errors.push_back(where + ": unknown controller type '" + cs.type + "'");
  cs.name = rd.get<std::string>(j, "name", where).value_or(cs.type);
  cs.H = rd.get<int>(j, "H", where);
  cs.R = rd.get<double>(j, "R", where).value_or(cs.R);
  cs.eta_multiplier = rd.get<double>(j, "eta_multiplier", where).value_or(cs.eta_multiplier);
  cs.eta = rd.get<double>(j, "eta", where);
  cs.sigma = rd.get<double>(j, "sigma", where);
  cs.sigma_multiplier = rd.get<double>(j, "sigma_multiplier", where).value_or(cs.sigma_multiplier);
  cs.sigma_w_squared = rd.get<bool>(j, "sigma_w_squared", where).value_or(false);
  cs.delta = rd.get<double>(j, "delta", where).value_or(cs.delta);
  cs.lr = rd.get<double>(j, "lr", where).value_or(cs.lr);
  cs.R_bound = rd.get<double>(j, "R_bound", where).value_or(cs.R_bound);
  if (cs.H && *cs.H < 1) rd.errors.push_back(where + ": H must be >= 1");
  if (!(cs.R > 0)) rd.errors.push_back(where + ": R must be positive");
  if (!(cs.eta_multiplier > 0)) rd.errors.push_back(where + ": eta_multiplier must be positive");
  if (cs.eta && !(*cs.eta > 0)) rd.errors.push_back(where + ": eta must be positive");
  if (cs.sigma && !(*cs.sigma > 0)) rd.errors.push_back(where + ": sigma must be positive");
  if (!(cs.sigma_multiplier > 0)) rd.errors.push_back(where + ": sigma_multiplier must be positive");
  if (!(cs.delta > 0) || !(cs.lr > 0) || !(cs.R_bound > 0))
    rd.errors.push_back(where + ": delta, lr and R_bound must be positive");
  return cs;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error("invalid config:\n  " + join(errors, "\n  ")), errors_(std::move(errors)) {}

std::vector<ControllerSpec> ExperimentConfig::expanded_controllers() const {
  if (eta_multipliers.empty()) return controllers;
  std::vector<ControllerSpec> out;
  for (const auto& c : controllers) {
    if (c.type != "ebpc_known" && c.type != "ebpc_unknown") {
      out.push_back(c);
      continue;
    }
    for (double m : eta_multipliers) {
      ControllerSpec e = c;
      e.eta_multiplier = m;
      char buf[48];
      std::snprintf(buf, sizeof(buf), "@eta=%g", m);
      e.name = c.name + buf;
      out.push_back(std::move(e));
    }
  }
  return out;
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("malformed JSON: ") + e.what()});
  }
  if (!j.is_object()) throw ConfigError({"config must be a JSON object"});

  Reader rd;
  ExperimentConfig cfg;
  rd.unknown_keys(j, "config",
                  {"system", "noise", "noises", "cost", "T", "H", "seeds", "moving_avg_window", "stabilize_with_lqr",
                   "controllers", "eta_multipliers", "oracle", "estimation", "out_dir"});

  // system
  bool have_system = false;
  if (!j.contains("system")) {
    rd.errors.push_back("config: missing 'system'");
  } else {
    const json& s = j["system"];
    std::string preset = s.is_string() ? s.get<std::string>() : "";
    if (s.is_object() && s.contains("preset")) preset = s["preset"].is_string() ? s["preset"].get<std::string>() : "?";
    if (!preset.empty()) {
      if (preset == "double_integrator") {
        cfg.system = double_integrator();
        cfg.system_name = preset;
        have_system = true;
      } else {
        rd.errors.push_back("system: unknown preset '" + preset + "'");
      }
    } else if (s.is_object()) {
      rd.unknown_keys(s, "system", {"A", "B", "C", "name"});
      auto A = s.contains("A") ? rd.matrix(s["A"], "system.A") : std::nullopt;
      auto B = s.contains("B") ? rd.matrix(s["B"], "system.B") : std::nullopt;
      if (!s.contains("A") || !s.contains("B")) rd.errors.push_back("system: needs A and B");
      if (A && B) {
        Matrix C = Matrix::Identity(A->rows(), A->rows());
        bool c_ok = true;
        if (s.contains("C")) {
          auto Cm = rd.matrix(s["C"], "system.C");
          c_ok = Cm.has_value();
          if (Cm) C = *Cm;
        }
        if (c_ok) {
          try {
            cfg.system = LdsParams::make(*A, *B, C);
            cfg.system_name = rd.get<std::string>(s, "name", "system").value_or("custom");
            have_system = true;
          } catch (const std::exception& e) {
            rd.errors.push_back(std::string("system: ") + e.what());
          }
        }
      }
    } else {
      rd.errors.push_back("system: expected a preset name or an object");
    }
  }

  // noises
  if (j.contains("noise") && j.contains("noises")) rd.errors.push_back("config: give either 'noise' or 'noises'");
  if (j.contains("noise")) {
    cfg.noises.push_back(parse_noise(rd, j["noise"], "noise"));
  } else if (j.contains("noises")) {
    if (!j["noises"].is_array() || j["noises"].empty()) {
      rd.errors.push_back("noises: expected a nonempty array");
    } else {
      for (std::size_t i = 0; i < j["noises"].size(); ++i)
        cfg.noises.push_back(parse_noise(rd, j["noises"][i], "noises[" + std::to_string(i) + "]"));
    }
  } else {
    rd.errors.push_back("config: missing 'noise' or 'noises'");
  }
  {
    std::set<std::string> names;
    for (const auto& n : cfg.noises)
      if (!names.insert(n.name).second) rd.errors.push_back("noises: duplicate name '" + n.name + "'");
  }

  // cost
  if (have_system) {
    const int dy = cfg.system.dy(), du = cfg.system.du();
    cfg.Q = Matrix::Identity(dy, dy);
    cfg.R = Matrix::Identity(du, du);
    if (j.contains("cost")) {
      const json& c = j["cost"];
      if (!c.is_object()) {
        rd.errors.push_back("cost: expected an object");
      } else {
        rd.unknown_keys(c, "cost", {"Q", "R"});
        if (c.contains("Q"))
          if (auto Q = rd.cost_matrix(c["Q"], dy, "cost.Q")) cfg.Q = *Q;
        if (c.contains("R"))
          if (auto R = rd.cost_matrix(c["R"], du, "cost.R")) cfg.R = *R;
        try {
          (void)CostSpec(cfg.Q, cfg.R);
        } catch (const std::exception& e) {
          rd.errors.push_back(std::string("cost: ") + e.what());
        }
      }
    }
  }

  cfg.T = rd.get<std::int64_t>(j, "T", "config").value_or(cfg.T);
  if (cfg.T < 1) rd.errors.push_back("T must be >= 1");
  cfg.H = rd.get<int>(j, "H", "config").value_or(cfg.H);
  if (cfg.H < 1) rd.errors.push_back("H must be >= 1");
  if (cfg.T < cfg.H) rd.errors.push_back("T must be >= H");
  cfg.moving_avg_window = rd.get<int>(j, "moving_avg_window", "config").value_or(cfg.moving_avg_window);
  if (cfg.moving_avg_window < 1) rd.errors.push_back("moving_avg_window must be >= 1");
  cfg.stabilize_with_lqr = rd.get<bool>(j, "stabilize_with_lqr", "config").value_or(false);
  cfg.out_dir = rd.get<std::string>(j, "out_dir", "config").value_or(cfg.out_dir);

  if (auto seeds = rd.get<std::vector<std::uint64_t>>(j, "seeds", "config")) cfg.seeds = *seeds;
  if (cfg.seeds.empty()) rd.errors.push_back("seeds: need at least one seed");
  if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size())
    rd.errors.push_back("seeds: must be distinct");

  if (!j.contains("controllers") || !j["controllers"].is_array() || j["controllers"].empty()) {
    rd.errors.push_back("controllers: need a nonempty array");
  } else {
    for (std::size_t i = 0; i < j["controllers"].size(); ++i)
      cfg.controllers.push_back(parse_controller(rd, j["controllers"][i], "controllers[" + std::to_string(i) + "]"));
  }
  if (auto em = rd.get<std::vector<double>>(j, "eta_multipliers", "config")) cfg.eta_multipliers = *em;
  for (double m : cfg.eta_multipliers)
    if (!(m > 0)) rd.errors.push_back("eta_multipliers: values must be positive");
  {
    std::set<std::string> names;
    for (const auto& c : cfg.expanded_controllers())
      if (!names.insert(c.name).second) rd.errors.push_back("controllers: duplicate name '" + c.name + "'");
  }

  if (j.contains("oracle")) {
    const json& o = j["oracle"];
    if (!o.is_object()) {
      rd.errors.push_back("oracle: expected an object");
    } else {
      rd.unknown_keys(o, "oracle", {"enabled", "l1_op", "markov_length", "R"});
      cfg.oracle.enabled = rd.get<bool>(o, "enabled", "oracle").value_or(true);
      cfg.oracle.l1_op = rd.get<bool>(o, "l1_op", "oracle").value_or(true);
      cfg.oracle.markov_length = rd.get<std::size_t>(o, "markov_length", "oracle").value_or(0);
      cfg.oracle.R = rd.get<double>(o, "R", "oracle");
      if (cfg.oracle.R && !(*cfg.oracle.R > 0)) rd.errors.push_back("oracle.R must be positive");
    }
  }
  if (j.contains("estimation")) {
    const json& e = j["estimation"];
    if (!e.is_object()) {
      rd.errors.push_back("estimation: expected an object");
    } else {
      rd.unknown_keys(e, "estimation", {"N", "H"});
      if (auto N = rd.get<std::vector<std::size_t>>(e, "N", "estimation")) cfg.estimation.N = *N;
      cfg.estimation.H = rd.get<int>(e, "H", "estimation").value_or(cfg.estimation.H);
      if (cfg.estimation.H < 1) rd.errors.push_back("estimation.H must be >= 1");
      for (auto n : cfg.estimation.N)
        if (n < static_cast<std::size_t>(cfg.estimation.H)) rd.errors.push_back("estimation.N values must be >= H");
    }
  }

  if (have_system) {
    bool needs_full_obs = false;
    for (const auto& c : cfg.controllers) needs_full_obs = needs_full_obs || c.type == "lqr" || c.type == "bpc";
    needs_full_obs = needs_full_obs || cfg.stabilize_with_lqr;
    const Matrix& C = cfg.system.C;
    if (needs_full_obs && (C.rows() != C.cols() || !C.isIdentity(0.0)))
      rd.errors.push_back("lqr, bpc and stabilize_with_lqr need full observation (C = I)");
  }

  if (!rd.errors.empty()) throw ConfigError(std::move(rd.errors));
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------

int default_thread_count() {
  if (const char* env = std::getenv("BANDIT_CONTROL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(v);
    warn(std::string("ignoring BANDIT_CONTROL_THREADS='") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 0) threads = default_thread_count();
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<double> moving_average(std::span<const double> losses, int window) {
  if (window < 1) throw std::invalid_argument("moving_average: window must be >= 1");
  std::vector<double> out(losses.size());
  double acc = 0.0;
  const auto w = static_cast<std::size_t>(window);
  for (std::size_t t = 0; t < losses.size(); ++t) {
    acc += losses[t];
    if (t >= w) acc -= losses[t - w];
    out[t] = acc / static_cast<double>(std::min(w, t + 1));
  }
  return out;
}

const ControllerAggregate& RegretReport::aggregate(const std::string& noise, const std::string& controller) const {
  for (const auto& a : aggregates)
    if (a.noise == noise && a.controller == controller) return a;
  throw std::out_of_range("no aggregate for " + noise + "/" + controller);
}

namespace {

struct OracleValues {
  std::optional<double> fro, l1op;
};

double first_ebpc_R(const std::vector<ControllerSpec>& controllers) {
  for (const auto& c : controllers)
    if (c.type == "ebpc_known" || c.type == "ebpc_unknown") return c.R;
  return 1.0;
}

TrialResult run_controller(const ExperimentConfig& cfg, const ControllerSpec& spec, const NoiseSpec& noise,
                           const NoiseTrace& trace, const CostSpec& costs, const std::optional<Matrix>& K_lqr,
                           std::uint64_t seed) {
  const LdsParams& sys = cfg.system;
  const std::optional<Matrix> K = cfg.stabilize_with_lqr ? K_lqr : std::nullopt;
  const LdsParams model = K ? stabilized(sys, *K) : sys;
  const int H = spec.H.value_or(cfg.H);
  LoopSegment seg;
  seg.steps = static_cast<std::size_t>(cfg.T);

  if (spec.type == "zero") {
    ZeroController z(sys.du());
    return run_closed_loop(sys, trace, costs, z, seg);
  }
  if (spec.type == "lqr") {
    LqrController lqr(*K_lqr);
    return run_closed_loop(sys, trace, costs, lqr, seg);
  }
  if (spec.type == "bpc") {
    BpcConfig bc;
    bc.H = H;
    bc.delta = spec.delta;
    bc.lr = spec.lr;
    bc.R_bound = spec.R_bound;
    bc.T = cfg.T;
    return run_bpc(sys, trace, costs, bc, seed, K);
  }
  if (spec.type == "ebpc_known") {
    EbpcConfig ec;
    ec.H = H;
    ec.R = spec.R;
    ec.T = cfg.T;
    ec.G = markov_operator(model, static_cast<std::size_t>(H));
    ec.eta = spec.eta.value_or(
        eta_default(sys.du(), sys.dy(), costs.L_c(), H, static_cast<double>(cfg.T), spec.eta_multiplier));
    ec.sigma = spec.sigma.value_or(spec.sigma_multiplier * sigma_default_known(model, costs.sigma_c(),
                                                                               noise.params.sigma_e,
                                                                               noise.params.sigma_w,
                                                                               spec.sigma_w_squared));
    EbpcRunOptions opt;
    opt.K = K;
    return run_ebpc(sys, trace, costs, ec, seed, opt);
  }
  if (spec.type == "ebpc_unknown") {
    UnknownOptions opt;
    opt.c_eta = spec.eta_multiplier;
    opt.eta = spec.eta;
    opt.sigma = spec.sigma.value_or(spec.sigma_multiplier * sigma_default_unknown(costs.sigma_c(), noise.params.sigma_e));
    opt.K = K;
    return run_ebpc_unknown(sys, trace, costs, H, spec.R, cfg.T, seed, opt);
  }
  throw std::invalid_argument("unknown controller type '" + spec.type + "'");
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

}  // namespace

RegretReport run_experiment(const ExperimentConfig& cfg, int threads) {
  const std::vector<ControllerSpec> controllers = cfg.expanded_controllers();
  if (controllers.empty()) throw ConfigError({"controllers: need at least one controller"});
  if (cfg.seeds.empty()) throw ConfigError({"seeds: need at least one seed"});
  const CostSpec costs = cfg.cost();
  const LdsParams& sys = cfg.system;

  std::optional<Matrix> K_lqr;
  const bool need_lqr = cfg.stabilize_with_lqr ||
                        std::any_of(controllers.begin(), controllers.end(), [](const auto& c) { return c.type == "lqr"; });
  if (need_lqr) K_lqr = dare_solve(sys.A, sys.B, sys.C.transpose() * cfg.Q * sys.C, cfg.R).K;

  const std::size_t n_noise = cfg.noises.size(), n_seed = cfg.seeds.size(), n_ctrl = controllers.size();
  std::vector<NoiseTrace> traces(n_noise * n_seed);
  std::vector<OracleValues> oracles(n_noise * n_seed);
  const double oracle_R = cfg.oracle.R.value_or(first_ebpc_R(controllers));

  parallel_for(traces.size(), threads, [&](std::size_t idx) {
    const NoiseSpec& ns = cfg.noises[idx / n_seed];
    const std::uint64_t seed = cfg.seeds[idx % n_seed];
    traces[idx] = make_noise(ns.kind, ns.params, static_cast<std::size_t>(cfg.T), derive_seed(seed, 1), sys.dx(), sys.dy());
    if (cfg.oracle.enabled) {
      HindsightOptions ho;
      ho.markov_length = cfg.oracle.markov_length;
      ho.l1_op = cfg.oracle.l1_op;
      if (cfg.stabilize_with_lqr) ho.K = K_lqr;
      const HindsightResult hr = best_drc_hindsight(sys, traces[idx], costs, cfg.H, oracle_R, ho);
      if (!hr.converged) warn("hindsight oracle: projected gradient " + fmt(hr.projected_grad_norm) + " above tolerance");
      oracles[idx].fro = hr.total_cost;
      oracles[idx].l1op = hr.total_cost_l1;
    }
  });

  RegretReport report;
  report.moving_avg_window = cfg.moving_avg_window;
  report.trials.resize(n_noise * n_ctrl * n_seed);
  parallel_for(report.trials.size(), threads, [&](std::size_t idx) {
    const std::size_t ni = idx / (n_ctrl * n_seed);
    const std::size_t ci = (idx / n_seed) % n_ctrl;
    const std::size_t si = idx % n_seed;
    const NoiseTrace& trace = traces[ni * n_seed + si];
    TrialRecord& rec = report.trials[idx];
    rec.noise = cfg.noises[ni].name;
    rec.controller = controllers[ci].name;
    rec.seed = cfg.seeds[si];
    rec.trace_hash = trace.hash();
    try {
      rec.trial = run_controller(cfg, controllers[ci], cfg.noises[ni], trace, costs, K_lqr, derive_seed(rec.seed, 2));
    } catch (const std::exception& e) {
      rec.error = e.what();
      warn(rec.noise + "/" + rec.controller + "/seed " + std::to_string(rec.seed) + " failed: " + rec.error);
      return;
    }
    rec.moving_avg = moving_average(rec.trial.cost, cfg.moving_avg_window);
    rec.total_cost = rec.trial.total_cost();
    const std::size_t T = rec.trial.cost.size();
    const std::size_t q0 = T - std::max<std::size_t>(T / 4, 1);
    double fq = 0.0;
    for (std::size_t k = q0; k < T; ++k) fq += rec.trial.cost[k];
    rec.final_quarter_loss = fq / static_cast<double>(T - q0);
    const OracleValues& ov = oracles[ni * n_seed + si];
    rec.oracle_fro = ov.fro;
    rec.oracle_l1op = ov.l1op;
    if (ov.fro) rec.regret_fro = rec.total_cost - *ov.fro;
    if (ov.l1op) rec.regret_l1op = rec.total_cost - *ov.l1op;
  });

  for (std::size_t ni = 0; ni < n_noise; ++ni)
    for (std::size_t ci = 0; ci < n_ctrl; ++ci) {
      ControllerAggregate agg;
      agg.noise = cfg.noises[ni].name;
      agg.controller = controllers[ci].name;

      std::vector<double> tc, fq, rf, rl;
      std::vector<const TrialRecord*> ok;
      for (std::size_t si = 0; si < n_seed; ++si) {
        const TrialRecord& r = report.trials[(ni * n_ctrl + ci) * n_seed + si];
        if (!r.error.empty()) continue;
        ok.push_back(&r);
        tc.push_back(r.total_cost);
        fq.push_back(r.final_quarter_loss);
        if (r.regret_fro) rf.push_back(*r.regret_fro);
        if (r.regret_l1op) rl.push_back(*r.regret_l1op);
      }
      std::tie(agg.mean_total_cost, agg.std_total_cost) = mean_std(tc);
      std::tie(agg.mean_final_quarter, agg.std_final_quarter) = mean_std(fq);
      if (!rf.empty()) std::tie(agg.mean_regret_fro, agg.std_regret_fro) = mean_std(rf);
      if (!rl.empty()) std::tie(agg.mean_regret_l1op, agg.std_regret_l1op) = mean_std(rl);
      agg.seeds = ok.size();
      const std::size_t T = ok.empty() ? 0 : ok.front()->moving_avg.size();
      agg.mean_moving_avg.resize(T);
      agg.std_moving_avg.resize(T);
      std::vector<double> col(ok.size());
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t si = 0; si < ok.size(); ++si) col[si] = ok[si]->moving_avg[t];
        std::tie(agg.mean_moving_avg[t], agg.std_moving_avg[t]) = mean_std(col);
      }
      report.aggregates.push_back(std::move(agg));
    }
  return report;
}

namespace {

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' || c == '_') ? c : '_';
  return out;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

std::string opt_str(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

}  // namespace

std::vector<std::filesystem::path> emit_csv(const RegretReport& report, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "trials", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "trials").string() + ": " + ec.message());
  std::vector<fs::path> written;

  std::string summary = "noise,controller,seed,total_cost,regret_fro,regret_l1op,final_quarter_loss,trace_hash,status\n";
  for (const auto& r : report.trials) {
    if (!r.error.empty()) {
      summary += r.noise + ',' + r.controller + ',' + std::to_string(r.seed) + ",,,,," + hex64(r.trace_hash) +
                 ",failed\n";
      continue;
    }
    summary += r.noise + ',' + r.controller + ',' + std::to_string(r.seed) + ',' + fmt(r.total_cost) + ',' +
               opt_str(r.regret_fro) + ',' + opt_str(r.regret_l1op) + ',' + fmt(r.final_quarter_loss) + ',' +
               hex64(r.trace_hash) + ",ok\n";

    std::string ts = "t,cost,moving_avg,cum_cost\n";
    double cum = 0.0;
    for (std::size_t k = 0; k < r.trial.cost.size(); ++k) {
      cum += r.trial.cost[k];
      ts += std::to_string(k + 1) + ',' + fmt(r.trial.cost[k]) + ',' + fmt(r.moving_avg[k]) + ',' + fmt(cum) + '\n';
    }
    const fs::path p = out_dir / "trials" /
                       (safe_name(r.noise) + "__" + safe_name(r.controller) + "__seed" + std::to_string(r.seed) + ".csv");
    write_file(p, ts);
    written.push_back(p);
  }
  write_file(out_dir / "summary.csv", summary);
  written.push_back(out_dir / "summary.csv");

  std::string controllers =
      "noise,controller,seeds,mean_total_cost,std_total_cost,mean_final_quarter_loss,std_final_quarter_loss,"
      "mean_regret_fro,std_regret_fro,mean_regret_l1op,std_regret_l1op\n";
  std::string aggregate = "noise,controller,t,mean_moving_avg,std_moving_avg\n";
  for (const auto& a : report.aggregates) {
    controllers += a.noise + ',' + a.controller + ',' + std::to_string(a.seeds) + ',' + fmt(a.mean_total_cost) + ',' +
                   fmt(a.std_total_cost) + ',' + fmt(a.mean_final_quarter) + ',' + fmt(a.std_final_quarter) + ',' +
                   opt_str(a.mean_regret_fro) + ',' + opt_str(a.std_regret_fro) + ',' + opt_str(a.mean_regret_l1op) +
                   ',' + opt_str(a.std_regret_l1op) + '\n';
    for (std::size_t t = 0; t < a.mean_moving_avg.size(); ++t)
      aggregate += a.noise + ',' + a.controller + ',' + std::to_string(t + 1) + ',' + fmt(a.mean_moving_avg[t]) + ',' +
                   fmt(a.std_moving_avg[t]) + '\n';
  }
  write_file(out_dir / "controllers.csv", controllers);
  write_file(out_dir / "aggregate.csv", aggregate);
  written.push_back(out_dir / "controllers.csv");
  written.push_back(out_dir / "aggregate.csv");
  return written;
}

std::vector<EstimationStudyRow> run_estimation_study(const ExperimentConfig& cfg, int threads) {
  if (cfg.noises.empty()) throw ConfigError({"estimation study needs a noise spec"});
  const NoiseSpec& ns = cfg.noises.front();
  const int H = cfg.estimation.H;
  const MarkovOperator G = markov_operator(cfg.system, static_cast<std::size_t>(H));
  const std::size_t nN = cfg.estimation.N.size(), nS = cfg.seeds.size();
  std::vector<EstimationStudyRow> rows(nN * nS);
  parallel_for(rows.size(), threads, [&](std::size_t idx) {
    const std::size_t N = cfg.estimation.N[idx / nS];
    const std::uint64_t seed = cfg.seeds[idx % nS];
    const NoiseTrace trace = make_noise(ns.kind, ns.params, N, derive_seed(seed, 1), cfg.system.dx(), cfg.system.dy());
    EstimationOptions opt;
    opt.costs = cfg.cost();
    opt.G_true = G;
    const EstimationPhase ph = run_estimation_phase(cfg.system, trace, N, H, derive_seed(seed, 3), opt);
    rows[idx] = EstimationStudyRow{ns.name, N, seed, *ph.report.err_l1_op, ph.report.residual, ph.report.rank};
  });
  return rows;
}

void write_estimation_csv(const std::vector<EstimationStudyRow>& rows, std::ostream& os) {
  os << "noise,N,seed,err_l1_op,residual,rank\n";
  for (const auto& r : rows)
    os << r.noise << ',' << r.N << ',' << r.seed << ',' << fmt(r.err_l1_op) << ',' << fmt(r.residual) << ',' << r.rank
       << '\n';
}

}  // namespace bandit_control

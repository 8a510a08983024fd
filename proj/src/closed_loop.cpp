#include "bandit_control/closed_loop.hpp"

#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace bandit_control {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double TrialResult::total_cost() const { return std::accumulate(cost.begin(), cost.end(), 0.0); }

void TrialResult::append(const TrialResult& other) {
  cost.insert(cost.end(), other.cost.begin(), other.cost.end());
  control_norm.insert(control_norm.end(), other.control_norm.begin(), other.control_norm.end());
  policy_fro_norm.insert(policy_fro_norm.end(), other.policy_fro_norm.begin(), other.policy_fro_norm.end());
  phase.insert(phase.end(), other.phase.begin(), other.phase.end());
  controls.insert(controls.end(), other.controls.begin(), other.controls.end());
  observations.insert(observations.end(), other.observations.begin(), other.observations.end());
  final_state = other.final_state;
}

std::string TrialResult::to_csv() const {
  std::string out = "t,cost,control_norm,policy_fro_norm,phase\n";
  char buf[128];
  for (std::size_t k = 0; k < cost.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%s\n", k + 1, cost[k], control_norm[k],
                  policy_fro_norm[k], phase[k] == Phase::kEstimation ? "est" : "ctrl");
    out += buf;
  }
  return out;
}

void TrialResult::write_csv(std::ostream& os) const { os << to_csv(); }

TrialResult run_closed_loop(const LdsParams& system, const NoiseTrace& trace, const CostSpec& costs,
                            Controller& controller, const LoopSegment& segment) {
  if (trace.dx() != system.dx() || trace.dy() != system.dy())
    throw std::invalid_argument("run_closed_loop: trace dimensions do not match the system");
  if (costs.dy() != system.dy() || costs.du() != system.du())
    throw std::invalid_argument("run_closed_loop: cost dimensions do not match the system");
  if (segment.begin < 1 || segment.begin > trace.length())
    throw std::invalid_argument("run_closed_loop: segment starts outside the trace");
  const std::size_t steps = segment.steps == 0 ? trace.length() - segment.begin + 1 : segment.steps;
  if (segment.begin - 1 + steps > trace.length()) throw std::invalid_argument("run_closed_loop: segment too long");

  LdsState state = segment.initial.value_or(LdsState{Vector::Zero(system.dx()), static_cast<std::int64_t>(segment.begin)});
  if (state.x.size() != system.dx()) throw std::invalid_argument("run_closed_loop: initial state dimension mismatch");

  TrialResult out;
  out.cost.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t idx = segment.begin - 1 + k;
    const auto t = static_cast<std::int64_t>(idx + 1);
    const Vector y = system.C * state.x + trace.e[idx];
    const Vector u = controller.act(t, y, state.x);
    if (u.size() != system.du()) throw std::runtime_error("controller returned a control of the wrong dimension");
    const double c = costs.evaluate(t, y, u);
    controller.feedback(c);

    out.cost.push_back(c);
    out.control_norm.push_back(u.norm());
    out.policy_fro_norm.push_back(controller.policy_norm());
    out.phase.push_back(segment.phase);
    out.observations.push_back(y);
    out.controls.push_back(u);

    state.x = system.A * state.x + system.B * u + trace.w[idx];
    state.t = t + 1;
  }
  out.final_state = state;
  return out;
}

}  // namespace bandit_control

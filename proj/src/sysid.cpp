#include "bandit_control/sysid.hpp"

#include "bandit_control/diagnostics.hpp"

#include <cstdio>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace bandit_control {

void EstimationReport::write_csv(std::ostream& os) const {
  const int dy = G_hat.dy(), du = G_hat.du();
  os << 'i';
  for (int r = 0; r < dy; ++r)
    for (int c = 0; c < du; ++c) os << ",g_" << r << '_' << c;
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < G_hat.length(); ++i) {
    os << i;
    for (int r = 0; r < dy; ++r)
      for (int c = 0; c < du; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", G_hat[i](r, c));
        os << ',' << buf;
      }
    os << '\n';
  }
}

std::string EstimationReport::summary_json() const {
  char buf[256];
  if (err_l1_op)
    std::snprintf(buf, sizeof(buf), "{\"N\": %zu, \"residual\": %.17g, \"err_l1_op\": %.17g}", N, residual, *err_l1_op);
  else
    std::snprintf(buf, sizeof(buf), "{\"N\": %zu, \"residual\": %.17g, \"err_l1_op\": null}", N, residual);
  return buf;
}

EstimationReport sysest_ls(std::span<const Vector> y, std::span<const Vector> u, int H) {
  if (H < 1) throw std::invalid_argument("sysest_ls: H must be >= 1");
  if (y.size() != u.size()) throw std::invalid_argument("sysest_ls: y and u lengths differ");
  const std::size_t N = y.size();
  if (N < static_cast<std::size_t>(H)) throw std::invalid_argument("sysest_ls: need N >= H samples");
  const int dy = static_cast<int>(y.front().size());
  const int du = static_cast<int>(u.front().size());
  if (dy < 1 || du < 1) throw std::invalid_argument("sysest_ls: empty vectors");
  if (N < static_cast<std::size_t>(H + du * H))
    warn("sysest_ls: N=" + std::to_string(N) + " < H + du*H; returning the minimum-norm solution");

  const auto rows = static_cast<Eigen::Index>(N - static_cast<std::size_t>(H) + 1);
  Matrix X(rows, du * H);
  Matrix Y(rows, dy);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::size_t t = static_cast<std::size_t>(r) + static_cast<std::size_t>(H) - 1;  // 0-based index of y_t
    if (y[t].size() != dy || u[t].size() != du) throw std::invalid_argument("sysest_ls: inconsistent dimensions");
    Y.row(r) = y[t].transpose();
    for (int i = 0; i < H; ++i) X.block(r, i * du, 1, du) = u[t - static_cast<std::size_t>(i)].transpose();
  }

  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(X);
  const Matrix theta = cod.solve(Y);  // (du H) x dy

  EstimationReport rep;
  rep.N = N;
  rep.rank = static_cast<int>(cod.rank());
  rep.rank_deficient = rep.rank < du * H;
  if (rep.rank_deficient)
    warn("sysest_ls: regressor rank " + std::to_string(rep.rank) + " < " + std::to_string(du * H));
  rep.residual = (X * theta - Y).squaredNorm();
  std::vector<Matrix> blocks;
  blocks.reserve(static_cast<std::size_t>(H));
  for (int i = 0; i < H; ++i) blocks.push_back(theta.block(i * du, 0, du, dy).transpose());
  rep.G_hat = MarkovOperator(std::move(blocks), dy, du);
  return rep;
}

double estimation_error(const MarkovOperator& G_hat, const MarkovOperator& G_true) {
  if (G_hat.dy() != G_true.dy() || G_hat.du() != G_true.du())
    throw std::invalid_argument("estimation_error: operator shapes differ");
  const std::size_t len = std::max(G_hat.length(), G_true.length());
  const MarkovOperator a = G_hat.truncated(len), b = G_true.truncated(len);
  double s = 0.0;
  for (std::size_t i = 0; i < len; ++i) s += op_norm(a[i] - b[i]);
  return s;
}

Vector GaussianExplorer::act(std::int64_t, const Vector&, const Vector&) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector u(du_);
  for (int i = 0; i < du_; ++i) u(i) = nd(rng_);
  controls_.push_back(u);
  return u;
}

EstimationPhase run_estimation_phase(const LdsParams& system, const NoiseTrace& trace, std::size_t N, int H,
                                     std::uint64_t seed, const EstimationOptions& options) {
  if (N < 1 || N > trace.length()) throw std::invalid_argument("run_estimation_phase: need 1 <= N <= trace length");
  const CostSpec costs = options.costs.value_or(CostSpec::identity(system.dy(), system.du()));

  GaussianExplorer explorer(system.du(), seed);
  LoopSegment seg;
  seg.begin = 1;
  seg.steps = N;
  seg.phase = Phase::kEstimation;
  EstimationPhase out;
  if (options.K) {
    StabilizedController wrapped(explorer, *options.K);
    out.trial = run_closed_loop(system, trace, costs, wrapped, seg);
  } else {
    out.trial = run_closed_loop(system, trace, costs, explorer, seg);
  }
  out.controls = explorer.controls();
  out.report = sysest_ls(out.trial.observations, out.controls, H);
  if (options.G_true) out.report.err_l1_op = estimation_error(out.report.G_hat, *options.G_true);
  return out;
}

}  // namespace bandit_control

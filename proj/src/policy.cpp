#include "bandit_control/policy.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace bandit_control {

DrcParams::DrcParams(std::vector<Matrix> blocks, int du, int dy) : blocks_(std::move(blocks)), du_(du), dy_(dy) {
  if (blocks_.empty()) throw std::invalid_argument("DrcParams: need at least one block");
  for (const auto& b : blocks_)
    if (b.rows() != du || b.cols() != dy) throw std::invalid_argument("DrcParams: block shape mismatch");
}

DrcParams DrcParams::zero(int H, int du, int dy) {
  if (H < 1 || du < 1 || dy < 1) throw std::invalid_argument("DrcParams::zero: dimensions must be positive");
  return DrcParams(std::vector<Matrix>(static_cast<std::size_t>(H), Matrix::Zero(du, dy)), du, dy);
}

Vector DrcParams::flatten() const {
  Vector v(flat_size());
  Eigen::Index idx = 0;
  for (const auto& b : blocks_)
    for (int a = 0; a < du_; ++a)
      for (int c = 0; c < dy_; ++c) v(idx++) = b(a, c);
  return v;
}

DrcParams DrcParams::unflatten(const Vector& v, int H, int du, int dy) {
  if (H < 1 || du < 1 || dy < 1) throw std::invalid_argument("unflatten: dimensions must be positive");
  if (v.size() != static_cast<Eigen::Index>(H) * du * dy)
    throw std::invalid_argument("unflatten: vector has size " + std::to_string(v.size()) + ", expected " +
                                std::to_string(H * du * dy));
  std::vector<Matrix> blocks(static_cast<std::size_t>(H), Matrix(du, dy));
  Eigen::Index idx = 0;
  for (auto& b : blocks)
    for (int a = 0; a < du; ++a)
      for (int c = 0; c < dy; ++c) b(a, c) = v(idx++);
  return DrcParams(std::move(blocks), du, dy);
}

double DrcParams::l1_op_norm() const {
  double s = 0.0;
  for (const auto& b : blocks_) s += op_norm(b);
  return s;
}

double DrcParams::frobenius_norm() const {
  double s = 0.0;
  for (const auto& b : blocks_) s += b.squaredNorm();
  return std::sqrt(s);
}

void DrcParams::write_csv(std::ostream& os) const {
  os << "j,a,b,value\n";
  char buf[32];
  for (std::size_t j = 0; j < blocks_.size(); ++j)
    for (int a = 0; a < du_; ++a)
      for (int c = 0; c < dy_; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", blocks_[j](a, c));
        os << j << ',' << a << ',' << c << ',' << buf << '\n';
      }
}

DrcParams DrcParams::read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("j,a,b,value", 0) != 0)
    throw std::runtime_error("DrcParams::read_csv: missing header");
  struct Entry {
    int j, a, b;
    double v;
  };
  std::vector<Entry> entries;
  int H = 0, du = 0, dy = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    Entry e{};
    char c1, c2, c3;
    if (!(ss >> e.j >> c1 >> e.a >> c2 >> e.b >> c3 >> e.v) || c1 != ',' || c2 != ',' || c3 != ',')
      throw std::runtime_error("DrcParams::read_csv: bad row '" + line + "'");
    H = std::max(H, e.j + 1);
    du = std::max(du, e.a + 1);
    dy = std::max(dy, e.b + 1);
    entries.push_back(e);
  }
  if (static_cast<int>(entries.size()) != H * du * dy) throw std::runtime_error("DrcParams::read_csv: incomplete table");
  DrcParams M = zero(H, du, dy);
  for (const auto& e : entries) M[static_cast<std::size_t>(e.j)](e.a, e.b) = e.v;
  return M;
}

Vector drc_control(const DrcParams& M, std::span<const Vector> recent) {
  if (static_cast<int>(recent.size()) != M.H())
    throw std::invalid_argument("drc_control: expected " + std::to_string(M.H()) + " observations, got " +
                                std::to_string(recent.size()));
  Vector u = Vector::Zero(M.du());
  for (std::size_t j = 0; j < recent.size(); ++j) {
    if (recent[j].size() != M.dy()) throw std::invalid_argument("drc_control: observation dimension mismatch");
    u += M[j] * recent[j];
  }
  return u;
}

}  // namespace bandit_control

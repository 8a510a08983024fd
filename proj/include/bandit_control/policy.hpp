#pragma once

#include "bandit_control/lds.hpp"

#include <iosfwd>

namespace bandit_control {

// Disturbance response controller u_t = sum_{j<H} M^[j] y^nat_{t-j}, each
// M^[j] a d_u x d_y matrix.
class DrcParams {
 public:
  DrcParams() = default;
  DrcParams(std::vector<Matrix> blocks, int du, int dy);
  static DrcParams zero(int H, int du, int dy);

  int H() const { return static_cast<int>(blocks_.size()); }
  int du() const { return du_; }
  int dy() const { return dy_; }
  int flat_size() const { return H() * du_ * dy_; }

  const Matrix& operator[](std::size_t j) const { return blocks_.at(j); }
  Matrix& operator[](std::size_t j) { return blocks_.at(j); }

  // Entry M^[j]_{a,b} lands at j*du*dy + a*dy + b.
  Vector flatten() const;
  static DrcParams unflatten(const Vector& v, int H, int du, int dy);

  // sum_j ||M^[j]||_op
  double l1_op_norm() const;
  double frobenius_norm() const;

  // One row per (j, a, b): "j,a,b,value" after a header line.
  void write_csv(std::ostream& os) const;
  static DrcParams read_csv(std::istream& is);

 private:
  std::vector<Matrix> blocks_;
  int du_ = 0;
  int dy_ = 0;
};

// recent[0] is y^nat_t, recent[j] is y^nat_{t-j}; exactly H vectors.
Vector drc_control(const DrcParams& M, std::span<const Vector> recent);

}  // namespace bandit_control

#pragma once

#include <array>
#include <filesystem>

#include <Eigen/Core>

#include "mixwarp/grid_image.hpp"

namespace mixwarp {

/// Interior equidistant anchor lattice a_j = j/(rows+1), b_k = k/(cols+1).
class AnchorGrid {
 public:
  AnchorGrid(int rows, int cols);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  // Length of the displacement vector: one s and one t entry per anchor.
  int dof() const { return 2 * size(); }

  int index(int j, int k) const { return j * cols_ + k; }
  Point anchor(int index) const {
    return {(index / cols_ + 1.0) / (rows_ + 1), (index % cols_ + 1.0) / (cols_ + 1)};
  }

  friend bool operator==(const AnchorGrid&, const AnchorGrid&) = default;

 private:
  int rows_;
  int cols_;
};

/// Anchor displacements, vectorized as all s-displacements (row-major)
/// followed by all t-displacements. This order fixes the block structure of
/// the warp covariance.
class DisplacementGrid {
 public:
  explicit DisplacementGrid(AnchorGrid grid);
  DisplacementGrid(AnchorGrid grid, Eigen::VectorXd w);

  const AnchorGrid& grid() const { return grid_; }
  const Eigen::VectorXd& vector() const { return w_; }
  Eigen::VectorXd& vector() { return w_; }

  double ds(int anchor) const { return w_[anchor]; }
  double dt(int anchor) const { return w_[grid_.size() + anchor]; }
  double& ds(int anchor) { return w_[anchor]; }
  double& dt(int anchor) { return w_[grid_.size() + anchor]; }

 private:
  AnchorGrid grid_;
  Eigen::VectorXd w_;
};

struct BasisWeight {
  int anchor = 0;
  double weight = 0.0;
};

/// Nonzero bilinear weights of the anchors supporting a point.
struct WarpBasis {
  std::array<BasisWeight, 4> items{};
  int count = 0;

  const BasisWeight* begin() const { return items.data(); }
  const BasisWeight* end() const { return items.data() + count; }
  double total() const;
};

// The displacement field interpolates the anchors bilinearly over the anchor
// lattice extended by zero displacement on the boundary of the unit square,
// and is zero outside it.
WarpBasis warp_basis(const AnchorGrid& grid, Point p);
std::array<double, 2> displacement(const DisplacementGrid& w, Point p);
Point eval_warp(const DisplacementGrid& w, Point p);

struct InverseWarp {
  Point point;
  bool converged = false;
  int iterations = 0;
};

/// Fixed-point iteration u <- p - E_w(u) from u = p; stops when the sup-norm
/// step falls below 1e-8 or after 20 iterations.
InverseWarp inverse_warp(const DisplacementGrid& w, Point p);

/// Template evaluated at the warped lattice nodes, theta(v(s_j, t_k, w)).
Image resample(const Image& tmpl, const DisplacementGrid& w);

/// Cells of the extended anchor lattice whose bilinear map has a
/// non-positive Jacobian determinant at one of its corners.
int count_folds(const DisplacementGrid& w);

// CSV with header "row,col,ds,dt", one line per anchor in row-major order.
void write_displacements_csv(const DisplacementGrid& w, const std::filesystem::path& path);
DisplacementGrid read_displacements_csv(const std::filesystem::path& path);

}  // namespace mixwarp

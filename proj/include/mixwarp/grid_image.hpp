#pragma once

#include <array>
#include <functional>

#include <Eigen/Core>

namespace mixwarp {

// A location in the unit square: s runs along image rows, t along columns.
struct Point {
  double s = 0.0;
  double t = 0.0;
};

/// Interior equidistant lattice of [0,1]^2 with s_j = j/(rows+1),
/// t_k = k/(cols+1) for j = 1..rows and k = 1..cols.
class Lattice {
 public:
  Lattice(int rows, int cols);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }

  // Zero-based node coordinates.
  double s(int j) const { return (j + 1.0) / (rows_ + 1); }
  double t(int k) const { return (k + 1.0) / (cols_ + 1); }
  double spacing_s() const { return 1.0 / (rows_ + 1); }
  double spacing_t() const { return 1.0 / (cols_ + 1); }

  int index(int j, int k) const { return j * cols_ + k; }
  Point node(int index) const { return {s(index / cols_), t(index % cols_)}; }

  friend bool operator==(const Lattice&, const Lattice&) = default;

 private:
  int rows_;
  int cols_;
};

Lattice make_lattice(int m1, int m2);

/// Lattice values stored row-major; index(j, k) = j * cols + k.
class Image {
 public:
  explicit Image(Lattice lattice);
  Image(Lattice lattice, Eigen::VectorXd values);

  static Image from_function(const Lattice& lattice,
                             const std::function<double(double, double)>& f);

  const Lattice& lattice() const { return lattice_; }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }

  double operator()(int j, int k) const { return values_[lattice_.index(j, k)]; }
  double& operator()(int j, int k) { return values_[lattice_.index(j, k)]; }

 private:
  Lattice lattice_;
  Eigen::VectorXd values_;
};

struct GradientField {
  Image ds;
  Image dt;
};

/// Bilinear interpolation with clamp-to-edge extension outside the lattice
/// hull. Throws InvalidPoint for non-finite coordinates.
double interp_bilinear(const Image& img, Point p);

/// Central differences at interior nodes, second-order one-sided differences
/// at the boundary (first-order when an axis has only two nodes).
GradientField image_gradient(const Image& img);

/// Exact gradient of the bilinear interpolant used by interp_bilinear.
/// On cell edges the one-sided slopes are averaged; in clamped regions the
/// slope across the clamped axis is zero.
std::array<double, 2> interp_gradient(const Image& img, Point p);

namespace detail {

struct AxisWeights {
  std::array<int, 4> index{};
  std::array<double, 4> weight{};
  int count = 0;

  void add(int i, double w) {
    index[count] = i;
    weight[count] = w;
    ++count;
  }
};

// Weights of the 1D piecewise-linear interpolant on nodes c_j = (j+1)/(n+1).
AxisWeights axis_value_weights(double coord, int n);
// Weights of its derivative with respect to the coordinate.
AxisWeights axis_slope_weights(double coord, int n);

}  // namespace detail

}  // namespace mixwarp

#include "mixwarp/grid_image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mixwarp/errors.hpp"

namespace mixwarp {

namespace {

// Snap fractional indices that sit on a node up to rounding, so evaluating at
// a lattice coordinate returns the nodal value exactly.
constexpr double kNodeSnap = 1e-9;

double fractional_index(double coord, int n) { return coord * (n + 1) - 1.0; }

void check_finite(Point p) {
  if (!std::isfinite(p.s) || !std::isfinite(p.t)) {
    throw InvalidPoint("non-finite evaluation point (" + std::to_string(p.s) + ", " +
                       std::to_string(p.t) + ")");
  }
}

}  // namespace

Lattice::Lattice(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 2 || cols < 2) {
    throw InvalidDimension("lattice needs at least 2x2 nodes, got " + std::to_string(rows) +
                           "x" + std::to_string(cols));
  }
}

Lattice make_lattice(int m1, int m2) { return Lattice(m1, m2); }

Image::Image(Lattice lattice)
    : lattice_(lattice), values_(Eigen::VectorXd::Zero(lattice.size())) {}

Image::Image(Lattice lattice, Eigen::VectorXd values)
    : lattice_(lattice), values_(std::move(values)) {
  if (values_.size() != lattice_.size()) {
    throw DimensionMismatch("image has " + std::to_string(values_.size()) +
                            " values for a lattice of " + std::to_string(lattice_.size()));
  }
}

Image Image::from_function(const Lattice& lattice,
                           const std::function<double(double, double)>& f) {
  Image img(lattice);
  for (int j = 0; j < lattice.rows(); ++j) {
    for (int k = 0; k < lattice.cols(); ++k) img(j, k) = f(lattice.s(j), lattice.t(k));
  }
  return img;
}

namespace detail {

AxisWeights axis_value_weights(double coord, int n) {
  double u = std::clamp(fractional_index(coord, n), 0.0, n - 1.0);
  const double r = std::round(u);
  if (std::abs(u - r) < kNodeSnap) u = r;
  const int j0 = std::min(static_cast<int>(std::floor(u)), n - 2);
  const double f = u - j0;
  AxisWeights w;
  w.add(j0, 1.0 - f);
  w.add(j0 + 1, f);
  return w;
}

AxisWeights axis_slope_weights(double coord, int n) {
  const double u = fractional_index(coord, n);
  const double inv_h = n + 1.0;
  AxisWeights w;
  const double r = std::round(u);
  if (std::abs(u - r) < kNodeSnap && r >= 0.0 && r <= n - 1.0) {
    const int node = static_cast<int>(r);
    if (node >= 1) {
      w.add(node - 1, -0.5 * inv_h);
      w.add(node, 0.5 * inv_h);
    }
    if (node <= n - 2) {
      w.add(node, -0.5 * inv_h);
      w.add(node + 1, 0.5 * inv_h);
    }
    return w;
  }
  if (u < 0.0 || u > n - 1.0) return w;
  const int j0 = std::min(static_cast<int>(std::floor(u)), n - 2);
  w.add(j0, -inv_h);
  w.add(j0 + 1, inv_h);
  return w;
}

}  // namespace detail

double interp_bilinear(const Image& img, Point p) {
  check_finite(p);
  const Lattice& lat = img.lattice();
  const auto ws = detail::axis_value_weights(p.s, lat.rows());
  const auto wt = detail::axis_value_weights(p.t, lat.cols());
  double v = 0.0;
  for (int a = 0; a < ws.count; ++a) {
    for (int b = 0; b < wt.count; ++b) v += ws.weight[a] * wt.weight[b] * img(ws.index[a], wt.index[b]);
  }
  return v;
}

std::array<double, 2> interp_gradient(const Image& img, Point p) {
  check_finite(p);
  const Lattice& lat = img.lattice();
  const auto vs = detail::axis_value_weights(p.s, lat.rows());
  const auto vt = detail::axis_value_weights(p.t, lat.cols());
  const auto ds = detail::axis_slope_weights(p.s, lat.rows());
  const auto dt = detail::axis_slope_weights(p.t, lat.cols());
  // Slope weights come in (i, -c), (i + 1, c) pairs; differencing first keeps
  // constant images exactly flat.
  std::array<double, 2> g{0.0, 0.0};
  for (int a = 0; a + 1 < ds.count; a += 2) {
    double diff = 0.0;
    for (int b = 0; b < vt.count; ++b) {
      diff += vt.weight[b] * (img(ds.index[a + 1], vt.index[b]) - img(ds.index[a], vt.index[b]));
    }
    g[0] += ds.weight[a + 1] * diff;
  }
  for (int b = 0; b + 1 < dt.count; b += 2) {
    double diff = 0.0;
    for (int a = 0; a < vs.count; ++a) {
      diff += vs.weight[a] * (img(vs.index[a], dt.index[b + 1]) - img(vs.index[a], dt.index[b]));
    }
    g[1] += dt.weight[b + 1] * diff;
  }
  return g;
}

namespace {

// Derivative along one axis of a strided sequence of n samples.
template <typename At>
double axis_derivative(At at, int i, int n, double h) {
  if (i > 0 && i < n - 1) return (at(i + 1) - at(i - 1)) / (2.0 * h);
  if (n == 2) return (at(1) - at(0)) / h;
  if (i == 0) return (4.0 * (at(1) - at(0)) - (at(2) - at(0))) / (2.0 * h);
  return (4.0 * (at(n - 1) - at(n - 2)) - (at(n - 1) - at(n - 3))) / (2.0 * h);
}

}  // namespace

GradientField image_gradient(const Image& img) {
  const Lattice& lat = img.lattice();
  GradientField g{Image(lat), Image(lat)};
  for (int j = 0; j < lat.rows(); ++j) {
    for (int k = 0; k < lat.cols(); ++k) {
      g.ds(j, k) = axis_derivative([&](int i) { return img(i, k); }, j, lat.rows(), lat.spacing_s());
      g.dt(j, k) = axis_derivative([&](int i) { return img(j, i); }, k, lat.cols(), lat.spacing_t());
    }
  }
  return g;
}

}  // namespace mixwarp

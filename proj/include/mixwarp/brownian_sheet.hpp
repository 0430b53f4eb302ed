#pragma once

#include <cstdint>
#include <memory>
#include <random>

#include <Eigen/Core>

#include "mixwarp/grid_image.hpp"
#include "mixwarp/sparse_cholesky.hpp"
#include "mixwarp/warp_field.hpp"

namespace mixwarp {

/// Tied-down Brownian sheet covariance tau2 (s^s' - ss')(t^t' - tt').
double bs_cov(Point p, Point q, double tau2);

struct IntensityModel {
  double tau2 = 1.0;
  Lattice lattice;
};

/// Lower-triangle entries of T_{m1} (x) T_{m2}, T_n = tridiag(-1, 2, -1),
/// for the row-major lattice ordering.
std::vector<Triplet> brownian_sheet_stencil(const Lattice& lattice);

/// S^{-1} = ((m1+1)(m2+1)/tau2) (T_{m1} (x) T_{m2}): the 9-point stencil
/// {4, -2, 1} with out-of-lattice neighbours dropped.
SparseSym assemble_precision(const IntensityModel& model);

/// log det(S + I) from the operator series
///   sum_l log(sinh(x_l)/x_l),  x_l = sqrt(tau2 (m1+1)(m2+1)) / (pi l),
/// truncated after 10,000 terms.
double logdet_intensity(double tau2, int m1, int m2);

inline constexpr int kLogdetSeriesTerms = 10000;

/// Gaussian prior on displacement grids: each displacement coordinate is a
/// tied-down Brownian sheet observed at the anchors, coordinates independent.
/// C = gamma2 * blockdiag(K, K) with K the unit-scale kernel.
class WarpPrior {
 public:
  WarpPrior(double gamma2, AnchorGrid grid);

  double gamma2() const { return gamma2_; }
  const AnchorGrid& grid() const { return grid_; }

  const Eigen::MatrixXd& kernel() const { return unit_->kernel; }
  const Eigen::MatrixXd& kernel_cholesky() const { return unit_->kernel_cholesky; }
  Eigen::MatrixXd covariance() const;
  Eigen::MatrixXd precision() const;
  // blockdiag(K^{-1}, K^{-1}), the precision at gamma2 = 1.
  Eigen::MatrixXd unit_precision() const;
  double logdet() const;

  WarpPrior with_gamma2(double gamma2) const;

 private:
  struct UnitKernel {
    Eigen::MatrixXd kernel;
    Eigen::MatrixXd kernel_inverse;
    Eigen::MatrixXd kernel_cholesky;
    double kernel_logdet = 0.0;
  };

  WarpPrior(double gamma2, AnchorGrid grid, std::shared_ptr<const UnitKernel> unit);

  double gamma2_;
  AnchorGrid grid_;
  std::shared_ptr<const UnitKernel> unit_;
};

struct WarpCovariance {
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd cholesky;  // lower
  Eigen::MatrixXd inverse;
};

WarpCovariance warp_cov_matrix(const WarpPrior& prior);

/// Draws N(0, scale * S) fields by back-substitution with the Cholesky factor
/// of the sparse precision, reusing one factorization for every draw.
class GmrfSampler {
 public:
  explicit GmrfSampler(const IntensityModel& model);

  Image draw(std::mt19937_64& rng, double sigma2) const;

 private:
  Lattice lattice_;
  CholFactor factor_;
};

Image sample_gmrf(const IntensityModel& model, double sigma2, std::uint64_t seed);

DisplacementGrid sample_warp(const WarpPrior& prior, double sigma2, std::mt19937_64& rng);
DisplacementGrid sample_warp(const WarpPrior& prior, double sigma2, std::uint64_t seed);

}  // namespace mixwarp

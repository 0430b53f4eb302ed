#include "mixwarp/brownian_sheet.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>

#include "mixwarp/errors.hpp"

namespace mixwarp {

namespace {

// log(sinh(x)/x) without overflow or cancellation.
double log_sinhc(double x) {
  if (x < 1e-4) {
    const double x2 = x * x;
    return x2 / 6.0 - x2 * x2 / 180.0;
  }
  if (x > 20.0) return x - std::log(2.0 * x) + std::log1p(-std::exp(-2.0 * x));
  return std::log(std::sinh(x) / x);
}

}  // namespace

double bs_cov(Point p, Point q, double tau2) {
  return tau2 * (std::min(p.s, q.s) - p.s * q.s) * (std::min(p.t, q.t) - p.t * q.t);
}

std::vector<Triplet> brownian_sheet_stencil(const Lattice& lattice) {
  const int m1 = lattice.rows();
  const int m2 = lattice.cols();
  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(5 * lattice.size()));
  for (int j = 0; j < m1; ++j) {
    for (int k = 0; k < m2; ++k) {
      const int i = lattice.index(j, k);
      // Lower triangle: neighbours with a larger row-major index.
      for (int dj = 0; dj <= 1; ++dj) {
        for (int dk = -1; dk <= 1; ++dk) {
          if (dj == 0 && dk < 0) continue;
          const int jj = j + dj;
          const int kk = k + dk;
          if (jj >= m1 || kk < 0 || kk >= m2) continue;
          const double tj = dj == 0 ? 2.0 : -1.0;
          const double tk = dk == 0 ? 2.0 : -1.0;
          entries.push_back({lattice.index(jj, kk), i, tj * tk});
        }
      }
    }
  }
  return entries;
}

SparseSym assemble_precision(const IntensityModel& model) {
  if (!(model.tau2 > 0.0) || !std::isfinite(model.tau2)) {
    throw InvalidArgument("intensity scale tau2 must be positive and finite");
  }
  const Lattice& lat = model.lattice;
  const double scale = (lat.rows() + 1.0) * (lat.cols() + 1.0) / model.tau2;
  auto entries = brownian_sheet_stencil(lat);
  for (auto& e : entries) e.value *= scale;
  return SparseSym(lat.size(), entries);
}

double logdet_intensity(double tau2, int m1, int m2) {
  if (tau2 < 0.0) throw InvalidArgument("tau2 must be non-negative");
  if (tau2 == 0.0) return 0.0;
  const double root = std::sqrt(tau2 * (m1 + 1.0) * (m2 + 1.0));
  double sum = 0.0;
  for (int l = kLogdetSeriesTerms; l >= 1; --l) sum += log_sinhc(root / (std::numbers::pi * l));
  return sum;
}

WarpPrior::WarpPrior(double gamma2, AnchorGrid grid) : gamma2_(gamma2), grid_(grid) {
  if (!(gamma2 > 0.0) || !std::isfinite(gamma2)) {
    throw InvalidArgument("warp scale gamma2 must be positive and finite");
  }
  auto unit = std::make_shared<UnitKernel>();
  const int na = grid.size();
  unit->kernel.resize(na, na);
  for (int a = 0; a < na; ++a) {
    for (int b = 0; b < na; ++b) unit->kernel(a, b) = bs_cov(grid.anchor(a), grid.anchor(b), 1.0);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(unit->kernel);
  if (llt.info() != Eigen::Success) throw NumericalError("warp kernel is not positive definite");
  unit->kernel_cholesky = llt.matrixL();
  unit->kernel_inverse = llt.solve(Eigen::MatrixXd::Identity(na, na));
  unit->kernel_logdet = 2.0 * unit->kernel_cholesky.diagonal().array().log().sum();
  unit_ = std::move(unit);
}

WarpPrior::WarpPrior(double gamma2, AnchorGrid grid, std::shared_ptr<const UnitKernel> unit)
    : gamma2_(gamma2), grid_(grid), unit_(std::move(unit)) {
  if (!(gamma2 > 0.0) || !std::isfinite(gamma2)) {
    throw InvalidArgument("warp scale gamma2 must be positive and finite");
  }
}

WarpPrior WarpPrior::with_gamma2(double gamma2) const { return WarpPrior(gamma2, grid_, unit_); }

namespace {

Eigen::MatrixXd block_diagonal(const Eigen::MatrixXd& block, double scale) {
  const Eigen::Index n = block.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  out.topLeftCorner(n, n) = scale * block;
  out.bottomRightCorner(n, n) = scale * block;
  return out;
}

}  // namespace

Eigen::MatrixXd WarpPrior::covariance() const { return block_diagonal(unit_->kernel, gamma2_); }

Eigen::MatrixXd WarpPrior::precision() const { return block_diagonal(unit_->kernel_inverse, 1.0 / gamma2_); }

Eigen::MatrixXd WarpPrior::unit_precision() const { return block_diagonal(unit_->kernel_inverse, 1.0); }

double WarpPrior::logdet() const {
  return 2.0 * (grid_.size() * std::log(gamma2_) + unit_->kernel_logdet);
}

WarpCovariance warp_cov_matrix(const WarpPrior& prior) {
  return {prior.covariance(), block_diagonal(prior.kernel_cholesky(), std::sqrt(prior.gamma2())),
          prior.precision()};
}

GmrfSampler::GmrfSampler(const IntensityModel& model)
    : lattice_(model.lattice), factor_(factorize(assemble_precision(model))) {}

Image GmrfSampler::draw(std::mt19937_64& rng, double sigma2) const {
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(lattice_.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  if (sigma2 <= 0.0) return Image(lattice_);
  return Image(lattice_, std::sqrt(sigma2) * factor_.backward(z));
}

Image sample_gmrf(const IntensityModel& model, double sigma2, std::uint64_t seed) {
  if (sigma2 < 0.0 || model.tau2 < 0.0) throw InvalidArgument("variances must be non-negative");
  if (sigma2 == 0.0 || model.tau2 == 0.0) return Image(model.lattice);
  std::mt19937_64 rng(seed);
  return GmrfSampler(model).draw(rng, sigma2);
}

DisplacementGrid sample_warp(const WarpPrior& prior, double sigma2, std::mt19937_64& rng) {
  if (sigma2 < 0.0) throw InvalidArgument("sigma2 must be non-negative");
  std::normal_distribution<double> normal;
  const int q = prior.grid().dof();
  Eigen::VectorXd z(q);
  for (int i = 0; i < q; ++i) z[i] = normal(rng);
  DisplacementGrid w(prior.grid());
  if (sigma2 == 0.0) return w;
  w.vector() = std::sqrt(sigma2) * (warp_cov_matrix(prior).cholesky * z);
  return w;
}

DisplacementGrid sample_warp(const WarpPrior& prior, double sigma2, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_warp(prior, sigma2, rng);
}

}  // namespace mixwarp

#include <doctest.h>

#include <random>

#include "mixwarp/brownian_sheet.hpp"
#include "mixwarp/errors.hpp"
#include "oracles.hpp"

using namespace mixwarp;

TEST_CASE("sheet covariance formula") {
  CHECK(bs_cov({0.5, 0.5}, {0.5, 0.5}, 1.0) == 0.0625);
  CHECK(bs_cov({0.25, 0.5}, {0.5, 0.5}, 2.0) == 0.0625);
  CHECK(bs_cov({0.0, 0.3}, {0.4, 0.6}, 1.0) == 0.0);
  CHECK(bs_cov({0.3, 1.0}, {0.4, 0.6}, 1.0) == 0.0);
  CHECK(bs_cov({0.2, 0.7}, {0.6, 0.1}, 1.3) == bs_cov({0.6, 0.1}, {0.2, 0.7}, 1.3));
}

TEST_CASE("precision on a 3x3 lattice has centre diagonal 64") {
  const Lattice lat = make_lattice(3, 3);
  const Eigen::MatrixXd q = assemble_precision({1.0, lat}).dense();
  CHECK(q(4, 4) == doctest::Approx(64.0).epsilon(1e-14));
  const Eigen::MatrixXd inv = oracle::intensity_covariance(3, 3, 1.0).inverse();
  CHECK(inv(4, 4) == doctest::Approx(64.0).epsilon(1e-10));
  CHECK((q - inv).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("precision times covariance is the identity on a 5x4 lattice") {
  const Lattice lat = make_lattice(5, 4);
  const Eigen::MatrixXd prod = assemble_precision({0.7, lat}).dense() * oracle::intensity_covariance(5, 4, 0.7);
  CHECK((prod - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("precision matches dense inversion on every lattice up to 8x8") {
  for (int m1 = 2; m1 <= 8; ++m1) {
    for (int m2 = 2; m2 <= 8; ++m2) {
      for (double tau2 : {0.3, 1.0, 4.0}) {
        const Eigen::MatrixXd q = assemble_precision({tau2, make_lattice(m1, m2)}).dense();
        const Eigen::MatrixXd inv = oracle::intensity_covariance(m1, m2, tau2).inverse();
        const double scale = inv.cwiseAbs().maxCoeff();
        CHECK((q - inv).cwiseAbs().maxCoeff() / scale < 1e-6);
      }
    }
  }
}

TEST_CASE("precision pattern is a symmetric nine-point stencil") {
  const Lattice lat = make_lattice(6, 7);
  const Eigen::MatrixXd q = assemble_precision({2.0, lat}).dense();
  CHECK((q - q.transpose()).cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < lat.size(); ++i) CHECK((q.row(i).array() != 0.0).count() <= 9);
  const double scale = 7.0 * 8.0 / 2.0;
  const int c = lat.index(3, 3);
  CHECK(q(c, c) == doctest::Approx(4 * scale));
  CHECK(q(c, lat.index(3, 4)) == doctest::Approx(-2 * scale));
  CHECK(q(c, lat.index(4, 4)) == doctest::Approx(scale));
  CHECK_THROWS_AS(assemble_precision({0.0, lat}), InvalidArgument);
}

TEST_CASE("log-determinant series") {
  CHECK(logdet_intensity(0.0, 10, 10) == 0.0);
  const double series = logdet_intensity(1.0, 31, 31);
  const double exact = oracle::kronecker_logdet_s_plus_i(1.0, 31, 31);
  CHECK(oracle::rel_diff(series, exact) < 0.02);

  double previous = 0.0;
  for (double tau2 : {1e-6, 1e-3, 0.1, 1.0, 10.0, 100.0}) {
    const double v = logdet_intensity(tau2, 12, 9);
    CHECK(v >= 0.0);
    CHECK(v > previous);
    previous = v;
  }
  CHECK_THROWS_AS(logdet_intensity(-1.0, 4, 4), InvalidArgument);
}

TEST_CASE("warp covariance") {
  SUBCASE("single centre anchor") {
    const WarpCovariance c = warp_cov_matrix(WarpPrior(1.0, AnchorGrid(1, 1)));
    CHECK(c.covariance.rows() == 2);
    CHECK(c.covariance(0, 0) == 0.0625);
    CHECK(c.covariance(1, 1) == 0.0625);
    CHECK(c.covariance(0, 1) == 0.0);
  }
  SUBCASE("coordinates are independent blocks") {
    const AnchorGrid grid(3, 4);
    const WarpCovariance c = warp_cov_matrix(WarpPrior(0.4, grid));
    const int a = grid.size();
    CHECK(c.covariance.topRightCorner(a, a).cwiseAbs().maxCoeff() == 0.0);
    CHECK(c.covariance.bottomLeftCorner(a, a).cwiseAbs().maxCoeff() == 0.0);
    CHECK((c.covariance - oracle::warp_covariance(3, 4, 0.4)).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("inverse and Cholesky on a 5x5 grid") {
    const WarpCovariance c = warp_cov_matrix(WarpPrior(0.01, AnchorGrid(5, 5)));
    CHECK((c.covariance * c.inverse - Eigen::MatrixXd::Identity(50, 50)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((c.cholesky * c.cholesky.transpose() - c.covariance).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("kernel restricts the lattice covariance to a sublattice") {
    const WarpPrior prior(1.0, AnchorGrid(3, 3));
    const Eigen::MatrixXd full = oracle::intensity_covariance(7, 7, 1.0);
    const Lattice lat = make_lattice(7, 7);
    for (int a = 0; a < 9; ++a) {
      for (int b = 0; b < 9; ++b) {
        const int i = lat.index(2 * (a / 3) + 1, 2 * (a % 3) + 1);
        const int j = lat.index(2 * (b / 3) + 1, 2 * (b % 3) + 1);
        CHECK(prior.kernel()(a, b) == doctest::Approx(full(i, j)).epsilon(1e-14));
      }
    }
  }
  SUBCASE("precision and log-determinant scale with gamma2") {
    const WarpPrior a(1.0, AnchorGrid(4, 4));
    const WarpPrior b = a.with_gamma2(0.25);
    CHECK((b.precision() - 4.0 * a.precision()).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(b.logdet() == doctest::Approx(a.logdet() + 32 * std::log(0.25)));
    CHECK(a.logdet() == doctest::Approx(oracle::dense_logdet(oracle::warp_covariance(4, 4, 1.0))));
    CHECK_THROWS_AS(WarpPrior(0.0, AnchorGrid(2, 2)), InvalidArgument);
  }
}

TEST_CASE("GMRF sampling") {
  const Lattice lat = make_lattice(15, 15);
  SUBCASE("zero scale gives a zero field") {
    CHECK(sample_gmrf({1.0, lat}, 0.0, 1).values().cwiseAbs().maxCoeff() == 0.0);
    CHECK(sample_gmrf({0.0, lat}, 1.0, 1).values().cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("same seed gives identical fields") {
    CHECK(sample_gmrf({1.0, lat}, 1.0, 42).values() == sample_gmrf({1.0, lat}, 1.0, 42).values());
    CHECK(sample_gmrf({1.0, lat}, 1.0, 42).values() != sample_gmrf({1.0, lat}, 1.0, 43).values());
  }
  SUBCASE("centre variance matches the sheet covariance") {
    const GmrfSampler sampler({1.0, lat});
    std::mt19937_64 rng(2024);
    const int centre = lat.index(7, 7);
    double sum = 0.0;
    double sum2 = 0.0;
    const int draws = 2000;
    for (int k = 0; k < draws; ++k) {
      const double v = sampler.draw(rng, 1.0).values()[centre];
      sum += v;
      sum2 += v * v;
    }
    const double var = (sum2 - sum * sum / draws) / (draws - 1);
    CHECK(oracle::rel_diff(var, 0.0625) < 0.10);
  }
}

TEST_CASE("warp sampling") {
  const WarpPrior prior(1.0, AnchorGrid(5, 5));
  CHECK(sample_warp(prior, 0.0, std::uint64_t{3}).vector().cwiseAbs().maxCoeff() == 0.0);
  CHECK(sample_warp(prior, 0.01, std::uint64_t{3}).vector() == sample_warp(prior, 0.01, std::uint64_t{3}).vector());

  const WarpPrior scaled(2.0, AnchorGrid(5, 5));
  const double sigma2 = 0.005;
  std::mt19937_64 rng(77);
  const int centre = 12;
  double sum2 = 0.0;
  const int draws = 5000;
  for (int k = 0; k < draws; ++k) {
    const double v = sample_warp(scaled, sigma2, rng).ds(centre);
    sum2 += v * v;
  }
  const double expected = sigma2 * 2.0 * scaled.kernel()(centre, centre);
  CHECK(oracle::rel_diff(sum2 / draws, expected) < 0.10);
}

#include <doctest.h>

#include <random>

#include "mixwarp/brownian_sheet.hpp"
#include "mixwarp/errors.hpp"
#include "mixwarp/inference.hpp"
#include "mixwarp/simulation.hpp"
#include "oracles.hpp"

using namespace mixwarp;

namespace {

constexpr double kPi = std::numbers::pi;

Image smooth_template(const Lattice& lat) {
  return Image::from_function(lat, [](double s, double t) {
    return 0.5 + 0.25 * std::sin(2 * kPi * s) * std::sin(2 * kPi * t) + 0.1 * std::cos(3 * kPi * s);
  });
}

DisplacementGrid scaled_prior_warp(const AnchorGrid& grid, double max_abs, std::uint64_t seed) {
  DisplacementGrid w = sample_warp(WarpPrior(1.0, grid), 1.0, seed);
  w.vector() *= max_abs / w.vector().cwiseAbs().maxCoeff();
  return w;
}

double data_term(const Image& y, const Image& tmpl, const DisplacementGrid& w, const CholFactor& f) {
  const Eigen::VectorXd r = y.values() - resample(tmpl, w).values();
  return r.dot(apply_Ainv(f, r));
}

std::vector<Image> small_stack(int n, std::uint64_t seed, const Lattice& lat) {
  SimSpec spec{synthetic_template(lat), n, {}, AnchorGrid(3, 3), std::nullopt, seed};
  return simulate_dataset(spec).images;
}

FitConfig small_config() {
  FitConfig c;
  c.warp_rows = 3;
  c.warp_cols = 3;
  c.outer_iterations = 3;
  c.inner_iterations = 2;
  return c;
}

}  // namespace

TEST_CASE("template update") {
  const Lattice lat = make_lattice(12, 12);
  const AnchorGrid grid(3, 3);
  const Image a = smooth_template(lat);
  const Image b = Image::from_function(lat, [](double s, double t) { return s * t; });
  SUBCASE("zero warps give the pointwise mean") {
    const Image mean = update_template({a, b}, {DisplacementGrid(grid), DisplacementGrid(grid)});
    CHECK((mean.values() - 0.5 * (a.values() + b.values())).cwiseAbs().maxCoeff() < 1e-15);
    const Image same = update_template({a, a, a}, std::vector<DisplacementGrid>(3, DisplacementGrid(grid)));
    CHECK((same.values() - a.values()).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("back-warping recovers the template") {
    const Lattice fine = make_lattice(48, 48);
    const Image tmpl = smooth_template(fine);
    const DisplacementGrid w = scaled_prior_warp(AnchorGrid(4, 4), 0.03, 5);
    const Image back = update_template({resample(tmpl, w)}, {w});
    CHECK((back.values() - tmpl.values()).cwiseAbs().maxCoeff() <= 0.02);
  }
  SUBCASE("linear in the data for fixed warps") {
    const std::vector<DisplacementGrid> ws{scaled_prior_warp(grid, 0.03, 6), scaled_prior_warp(grid, 0.03, 7)};
    const Image c = update_template({Image(lat, 2.0 * a.values()), Image(lat, -b.values())}, ws);
    const Image pa = update_template({a, Image(lat)}, ws);
    const Image pb = update_template({Image(lat), b}, ws);
    CHECK((c.values() - (2.0 * pa.values() - pb.values())).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("warp prediction") {
  const Lattice lat = make_lattice(32, 32);
  const Image tmpl = smooth_template(lat);
  const AnchorGrid grid(4, 4);
  const IntensityPrecision precision(lat);
  const VarianceParams params{0.001, 10.0, 10.0};
  const CholFactor f = precision.factor(params.tau2);

  SUBCASE("the template itself needs no warp") {
    const WarpPrediction p = predict_warp(tmpl, tmpl, params, f, DisplacementGrid(grid));
    CHECK(p.warp.vector().cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("noiseless warped template") {
    const DisplacementGrid truth = scaled_prior_warp(grid, 0.03, 8);
    const Image y = resample(tmpl, truth);
    const VarianceParams weak{0.001, 1.0, 100.0};
    const CholFactor fw = precision.factor(weak.tau2);
    const WarpPrediction p = predict_warp(y, tmpl, weak, fw, DisplacementGrid(grid));
    const WarpPrior prior(weak.gamma2, grid);
    const double e0 = data_term(y, tmpl, DisplacementGrid(grid), fw);
    const double e_hat = data_term(y, tmpl, p.warp, fw) + p.warp.vector().dot(prior.precision() * p.warp.vector());
    CHECK(e_hat <= e0);
    CHECK(data_term(y, tmpl, p.warp, fw) <= 0.1 * e0);
    CHECK(p.objective_trace.front() == doctest::Approx(e0).epsilon(1e-12));
    for (std::size_t k = 1; k < p.objective_trace.size(); ++k) {
      CHECK(p.objective_trace[k] <= p.objective_trace[k - 1]);
    }
  }
  SUBCASE("a vanishing warp prior pins the warp to zero") {
    const Image y = resample(tmpl, scaled_prior_warp(grid, 0.03, 9));
    const WarpPrediction p = predict_warp(y, tmpl, {0.001, 10.0, 1e-10}, f, DisplacementGrid(grid));
    CHECK(p.warp.vector().cwiseAbs().maxCoeff() < 1e-4);
  }
  SUBCASE("adding a constant to image and template leaves the warp unchanged") {
    const Image y = resample(tmpl, scaled_prior_warp(grid, 0.03, 10));
    const WarpPrediction p = predict_warp(y, tmpl, params, f, DisplacementGrid(grid));
    Image y2 = y;
    Image t2 = tmpl;
    y2.values().array() += 0.25;
    t2.values().array() += 0.25;
    const WarpPrediction p2 = predict_warp(y2, t2, params, f, DisplacementGrid(grid));
    CHECK((p.warp.vector() - p2.warp.vector()).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("intensity prediction") {
  const Lattice lat = make_lattice(16, 16);
  const Image tmpl = smooth_template(lat);
  const IntensityPrecision precision(lat);
  const CholFactor f = precision.factor(0.5);
  const DisplacementGrid w = scaled_prior_warp(AnchorGrid(3, 3), 0.02, 11);

  CHECK(predict_intensity(resample(tmpl, w), tmpl, w, f).values().cwiseAbs().maxCoeff() == 0.0);

  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal(0.0, 0.05);
  Image y = resample(tmpl, w);
  for (auto& v : y.values()) v += normal(rng);
  const Eigen::VectorXd r = y.values() - resample(tmpl, w).values();
  const Image x = predict_intensity(y, tmpl, w, f);
  CHECK((precision.matrix(0.5).multiply(x.values()) - r).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((x.values() + apply_Ainv(f, r) - r).cwiseAbs().maxCoeff() <= 1e-10);
  const Eigen::MatrixXd s = oracle::intensity_covariance(16, 16, 0.5);
  const Eigen::VectorXd dense = s * (s + Eigen::MatrixXd::Identity(256, 256)).ldlt().solve(r);
  CHECK((x.values() - dense).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("variance estimation") {
  const Lattice lat = make_lattice(16, 16);
  const auto data = small_stack(4, 13, lat);
  const std::vector<DisplacementGrid> w0(4, DisplacementGrid(AnchorGrid(3, 3)));
  const Image tmpl = update_template(data, w0);
  const FitConfig config = small_config();
  auto precision = std::make_shared<const IntensityPrecision>(lat);
  const LinearizedModel model(data, tmpl, w0, precision);

  const VarianceParams start{1.0, 1.0, 0.1};
  const VarianceEstimate est = estimate_variances(data, tmpl, w0, config, start, precision);
  CHECK(est.nll <= model.profiled_nll(start.tau2, start.gamma2));
  CHECK(est.params.sigma2 > 0.0);
  CHECK(est.evaluations > 3);

  const VarianceEstimate again = estimate_variances(data, tmpl, w0, config, est.params, precision);
  CHECK(again.nll <= est.nll + 1e-6 * std::abs(est.nll));
  CHECK(oracle::rel_diff(again.nll, est.nll) < 1e-6);

  const std::vector<Image> same(3, tmpl);
  CHECK_THROWS_AS(estimate_variances(same, tmpl, std::vector<DisplacementGrid>(3, DisplacementGrid(AnchorGrid(3, 3))),
                                     config, start),
                  DegenerateFit);
}

TEST_CASE("fit on identical images returns the common image") {
  const Lattice lat = make_lattice(16, 16);
  const Image img = smooth_template(lat);
  const ModelFit result = fit({img, img, img}, small_config());
  CHECK((result.template_estimate.values() - img.values()).cwiseAbs().maxCoeff() <= 1e-10);
  for (const auto& w : result.warps) CHECK(w.vector().cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(result.diagnostics.degenerate);
  CHECK((reconstruct(result, 1).values() - img.values()).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("fit follows the alternating schedule") {
  const Lattice lat = make_lattice(20, 20);
  const auto data = small_stack(5, 14, lat);
  const FitConfig config = small_config();
  const ModelFit result = fit(data, config);
  CHECK(result.nll_trace.size() == 3);
  CHECK(result.diagnostics.variance_estimations == 3);
  CHECK(result.diagnostics.warp_sweeps == 6);
  CHECK(result.diagnostics.warp_objectives_monotone);
  CHECK(result.diagnostics.fold_counts.size() == 5);
  CHECK(result.warps.size() == 5);
  CHECK(result.warps[0].grid() == AnchorGrid(3, 3));
  for (double v : result.nll_trace) CHECK(std::isfinite(v));

  // Reconstruction residual is the predicted independent noise (S+I)^{-1} r.
  const IntensityPrecision precision(lat);
  const CholFactor f = precision.factor(result.params.tau2);
  for (int i = 0; i < 5; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Eigen::VectorXd r = data[k].values() - resample(result.template_estimate, result.warps[k]).values();
    const Eigen::VectorXd residual = data[k].values() - reconstruct(result, i).values();
    CHECK((residual - apply_Ainv(f, r)).cwiseAbs().maxCoeff() <= 1e-10);
  }

  FitConfig threaded = config;
  threaded.threads = 4;
  const ModelFit parallel = fit(data, threaded);
  CHECK(parallel.nll_trace == result.nll_trace);
  CHECK(parallel.template_estimate.values() == result.template_estimate.values());

  FitConfig early = config;
  early.outer_iterations = 6;
  early.early_stop = true;
  early.early_stop_tolerance = 1.0;
  CHECK(fit(data, early).nll_trace.size() == 2);
}

TEST_CASE("reconstruction") {
  const Lattice lat = make_lattice(12, 12);
  const Image tmpl = smooth_template(lat);
  const DisplacementGrid w = scaled_prior_warp(AnchorGrid(3, 3), 0.02, 15);
  ModelFit manual{tmpl, {}, {w}, {Image(lat)}, {}, {}};
  CHECK((reconstruct(manual, 0).values() - resample(tmpl, w).values()).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(reconstruct(manual, 1), InvalidArgument);

  // Smooth template and negligible intensity effect: the residual is then
  // dominated by interpolation error of the estimated template.
  SimSpec spec{smooth_template(make_lattice(48, 48)), 4, {1e-9, 1e-6, 0.01}, AnchorGrid(3, 3), std::nullopt, 16};
  const SimDataset sim = simulate_dataset(spec);
  const ModelFit result = fit(sim.images, small_config());
  double worst = 0.0;
  for (int i = 0; i < 4; ++i) {
    worst = std::max(worst, (reconstruct(result, i).values() - sim.images[static_cast<std::size_t>(i)].values())
                                .cwiseAbs()
                                .maxCoeff());
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("fit configuration is validated") {
  const Lattice lat = make_lattice(8, 8);
  const std::vector<Image> data(2, smooth_template(lat));
  FitConfig c = small_config();
  c.outer_iterations = 0;
  CHECK_THROWS_AS(fit(data, c), InvalidArgument);
  c = small_config();
  c.warp_rows = 0;
  CHECK_THROWS_AS(fit(data, c), InvalidArgument);
  CHECK_THROWS_AS(fit({data[0]}, small_config()), InvalidArgument);
  CHECK_THROWS_AS(fit({data[0], Image(make_lattice(8, 9))}, small_config()), DimensionMismatch);
}

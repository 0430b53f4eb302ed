#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>

#include "mixwarp/grid_image.hpp"
#include "mixwarp/likelihood.hpp"
#include "mixwarp/nelder_mead.hpp"
#include "mixwarp/warp_field.hpp"

namespace mixwarp {

struct GaussNewtonOptions {
  int max_steps = 20;
  int max_halvings = 10;
  double relative_tolerance = 1e-6;
};

struct FitConfig {
  int warp_rows = 4;
  int warp_cols = 4;
  int outer_iterations = 5;
  int inner_iterations = 3;
  NelderMeadOptions variance_optimizer;
  GaussNewtonOptions gauss_newton;
  double init_tau2 = 1.0;
  double init_gamma2 = 0.1;
  // Optional: stop the outer loop once the nll changes by less than
  // early_stop_tolerance relative. Off by default.
  bool early_stop = false;
  double early_stop_tolerance = 1e-6;
  int threads = 1;

  AnchorGrid anchor_grid() const { return {warp_rows, warp_cols}; }
  void validate() const;
};

struct FitDiagnostics {
  std::vector<int> optimizer_evaluations;  // per variance estimation
  int variance_estimations = 0;
  int warp_sweeps = 0;
  std::vector<int> fold_counts;  // per image, final warps
  // Every Gauss-Newton objective trace was non-increasing.
  bool warp_objectives_monotone = true;
  // All residuals were exactly zero; variance estimation was skipped.
  bool degenerate = false;
};

struct ModelFit {
  Image template_estimate;
  VarianceParams params;
  std::vector<DisplacementGrid> warps;
  std::vector<Image> intensities;
  std::vector<double> nll_trace;  // profiled nll after each variance estimation
  FitDiagnostics diagnostics;
};

/// Pointwise average of the back-warped observations.
Image update_template(const std::vector<Image>& data, const std::vector<DisplacementGrid>& warps);

struct WarpPrediction {
  DisplacementGrid warp;
  std::vector<double> objective_trace;  // objective after each accepted step, starting value first
};

/// Gauss-Newton with step halving on
///   E(w) = (y - theta^w)^T A (y - theta^w) + w^T penalty w,
/// where A = (S + I)^{-1} from the factor of I + S^{-1}, or the identity when
/// `metric` is null.
WarpPrediction minimize_warp_objective(const Image& y, const Image& tmpl, const CholFactor* metric,
                                       const Eigen::MatrixXd& penalty, const DisplacementGrid& w_init,
                                       const GaussNewtonOptions& options = {});

/// Posterior mode of the warp variables given the template and variances.
WarpPrediction predict_warp(const Image& y, const Image& tmpl, const VarianceParams& params,
                            const CholFactor& f, const DisplacementGrid& w_init,
                            const GaussNewtonOptions& options = {});

/// E[x | y, w = w_hat] = S (S + I)^{-1} r = (I + S^{-1})^{-1} r, r = y - theta^{w_hat}.
Image predict_intensity(const Image& y, const Image& tmpl, const DisplacementGrid& w_hat, const CholFactor& f);

struct VarianceEstimate {
  VarianceParams params;
  double nll = 0.0;  // profiled
  int evaluations = 0;
};

/// Nelder-Mead over (log tau2, log gamma2) of the sigma2-profiled nll, from
/// `start`. Throws DegenerateFit for all-zero residuals and NumericalError if
/// no finite objective value is found.
VarianceEstimate estimate_variances(const std::vector<Image>& data, const Image& tmpl,
                                    const std::vector<DisplacementGrid>& w0s, const FitConfig& config,
                                    const VarianceParams& start,
                                    std::shared_ptr<const IntensityPrecision> precision = nullptr);

/// Alternating estimation: variances in the outer loop; warp prediction,
/// linearization update and template recomputation in the inner loop.
ModelFit fit(const std::vector<Image>& data, const FitConfig& config);

/// Warped template plus predicted intensity field for image `index`.
Image reconstruct(const ModelFit& fit, int index);

void check_stack(const std::vector<Image>& data, int minimum);

}  // namespace mixwarp

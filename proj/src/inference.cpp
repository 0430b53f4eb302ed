#include "mixwarp/inference.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>

#include "mixwarp/errors.hpp"
#include "mixwarp/parallel.hpp"

namespace mixwarp {

namespace {

constexpr double kMaxLogScale = 40.0;

// Objective value and the pieces Gauss-Newton needs at one point.
struct WarpState {
  Eigen::VectorXd residual;
  double value = 0.0;
};

double metric_quad(const CholFactor* metric, const Eigen::VectorXd& r) {
  if (!metric) return r.squaredNorm();
  return r.squaredNorm() - metric->forward(r).squaredNorm();
}

WarpState warp_state(const Image& y, const Image& tmpl, const CholFactor* metric, const Eigen::MatrixXd& penalty,
                     const DisplacementGrid& w) {
  WarpState s;
  s.residual = y.values() - resample(tmpl, w).values();
  s.value = metric_quad(metric, s.residual) + w.vector().dot(penalty * w.vector());
  return s;
}

// Solves the normal equations; a ridge is added only when the matrix is
// singular (unpenalized warps over untextured regions).
Eigen::VectorXd solve_normal(const Eigen::MatrixXd& normal, const Eigen::VectorXd& rhs) {
  Eigen::LLT<Eigen::MatrixXd> llt(normal);
  if (llt.info() == Eigen::Success) return llt.solve(rhs);
  const double base = std::max(normal.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  for (double ridge = 1e-10; ridge <= 1e-2; ridge *= 100.0) {
    Eigen::MatrixXd damped = normal;
    damped.diagonal().array() += ridge * base;
    llt.compute(damped);
    if (llt.info() == Eigen::Success) return llt.solve(rhs);
  }
  throw NumericalError("Gauss-Newton normal matrix is not positive definite");
}

}  // namespace

void FitConfig::validate() const {
  if (outer_iterations < 1 || inner_iterations < 1) {
    throw InvalidArgument("outer and inner iteration counts must be at least 1");
  }
  if (warp_rows < 1 || warp_cols < 1) throw InvalidArgument("warp grid must have at least 1x1 anchors");
  if (!(init_tau2 > 0.0) || !(init_gamma2 > 0.0)) throw InvalidArgument("initial variance scales must be positive");
}

void check_stack(const std::vector<Image>& data, int minimum) {
  if (static_cast<int>(data.size()) < minimum) {
    throw InvalidArgument("need at least " + std::to_string(minimum) + " images, got " +
                          std::to_string(data.size()));
  }
  for (const auto& img : data) {
    if (!(img.lattice() == data.front().lattice())) throw DimensionMismatch("images differ in size");
  }
}

Image update_template(const std::vector<Image>& data, const std::vector<DisplacementGrid>& warps) {
  check_stack(data, 1);
  if (warps.size() != data.size()) throw DimensionMismatch("one warp per image is required");
  const Lattice& lat = data.front().lattice();
  Image out(lat);
  for (int p = 0; p < lat.size(); ++p) {
    const Point node = lat.node(p);
    // Running mean: identical inputs reproduce their common value exactly.
    double mean = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double v = interp_bilinear(data[i], inverse_warp(warps[i], node).point);
      mean += (v - mean) / static_cast<double>(i + 1);
    }
    out.values()[p] = mean;
  }
  return out;
}

WarpPrediction minimize_warp_objective(const Image& y, const Image& tmpl, const CholFactor* metric,
                                       const Eigen::MatrixXd& penalty, const DisplacementGrid& w_init,
                                       const GaussNewtonOptions& options) {
  const int q = w_init.grid().dof();
  if (penalty.rows() != q || penalty.cols() != q) throw DimensionMismatch("penalty does not match the warp grid");
  if (!(y.lattice() == tmpl.lattice())) throw DimensionMismatch("image and template lattices differ");

  WarpPrediction out{w_init, {}};
  WarpState state = warp_state(y, tmpl, metric, penalty, out.warp);
  out.objective_trace.push_back(state.value);

  for (int step = 0; step < options.max_steps && state.value > 0.0; ++step) {
    Eigen::MatrixXd z = Eigen::MatrixXd(assemble_Z(tmpl, out.warp));
    Eigen::MatrixXd normal = z.transpose() * z;
    Eigen::VectorXd rhs = z.transpose() * state.residual;
    if (metric) {
      const Eigen::VectorXd g = metric->forward(state.residual);
      metric->forward_in_place(z);
      normal.noalias() -= z.transpose() * z;
      rhs.noalias() -= z.transpose() * g;
    }
    normal += penalty;
    rhs.noalias() -= penalty * out.warp.vector();
    const Eigen::VectorXd delta = solve_normal(normal, rhs);

    bool accepted = false;
    double scale = 1.0;
    for (int h = 0; h <= options.max_halvings; ++h, scale *= 0.5) {
      DisplacementGrid trial(out.warp.grid(), out.warp.vector() + scale * delta);
      WarpState trial_state = warp_state(y, tmpl, metric, penalty, trial);
      if (trial_state.value < state.value) {
        const double decrease = (state.value - trial_state.value) / state.value;
        out.warp = std::move(trial);
        state = std::move(trial_state);
        out.objective_trace.push_back(state.value);
        accepted = decrease >= options.relative_tolerance;
        break;
      }
    }
    if (!accepted) break;
  }
  return out;
}

WarpPrediction predict_warp(const Image& y, const Image& tmpl, const VarianceParams& params, const CholFactor& f,
                            const DisplacementGrid& w_init, const GaussNewtonOptions& options) {
  const WarpPrior prior(params.gamma2, w_init.grid());
  return minimize_warp_objective(y, tmpl, &f, prior.precision(), w_init, options);
}

Image predict_intensity(const Image& y, const Image& tmpl, const DisplacementGrid& w_hat, const CholFactor& f) {
  const Eigen::VectorXd r = y.values() - resample(tmpl, w_hat).values();
  return Image(y.lattice(), f.solve(r));
}

VarianceEstimate estimate_variances(const std::vector<Image>& data, const Image& tmpl,
                                    const std::vector<DisplacementGrid>& w0s, const FitConfig& config,
                                    const VarianceParams& start,
                                    std::shared_ptr<const IntensityPrecision> precision) {
  check_stack(data, 1);
  if (!precision) precision = std::make_shared<const IntensityPrecision>(tmpl.lattice());
  const LinearizedModel model(data, tmpl, w0s, precision, config.threads);
  if (model.residual_sum_of_squares() == 0.0) {
    throw DegenerateFit("all residuals are zero; variance parameters are not identifiable");
  }

  auto objective = [&](const Eigen::VectorXd& x) {
    if (x.cwiseAbs().maxCoeff() > kMaxLogScale) return std::numeric_limits<double>::infinity();
    try {
      return model.profiled_nll(std::exp(x[0]), std::exp(x[1]));
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  const Eigen::Vector2d x0(std::log(start.tau2), std::log(start.gamma2));
  const NelderMeadResult nm = nelder_mead(objective, x0, config.variance_optimizer);
  if (!std::isfinite(nm.value)) {
    throw NumericalError("variance estimation diverged: no finite likelihood value found");
  }
  VarianceEstimate est;
  est.params.tau2 = std::exp(nm.x[0]);
  est.params.gamma2 = std::exp(nm.x[1]);
  est.nll = model.profiled_nll(est.params.tau2, est.params.gamma2, LogdetMode::kSeries, &est.params.sigma2);
  est.evaluations = nm.evaluations + 1;
  return est;
}

ModelFit fit(const std::vector<Image>& data, const FitConfig& config) {
  config.validate();
  check_stack(data, 2);
  const auto n = data.size();
  const Lattice lat = data.front().lattice();
  const auto precision = std::make_shared<const IntensityPrecision>(lat);

  std::vector<DisplacementGrid> w0(n, DisplacementGrid(config.anchor_grid()));
  ModelFit result{update_template(data, w0), VarianceParams{1.0, config.init_tau2, config.init_gamma2}, {}, {}, {}, {}};
  FitDiagnostics& diag = result.diagnostics;

  for (int outer = 0; outer < config.outer_iterations; ++outer) {
    VarianceEstimate est;
    try {
      est = estimate_variances(data, result.template_estimate, w0, config, result.params, precision);
    } catch (const DegenerateFit&) {
      diag.degenerate = true;
      break;
    } catch (const Error& e) {
      throw NumericalError("outer iteration " + std::to_string(outer + 1) + ": " + e.what());
    }
    result.params = est.params;
    result.nll_trace.push_back(est.nll);
    diag.optimizer_evaluations.push_back(est.evaluations);
    ++diag.variance_estimations;

    const CholFactor f = precision->factor(result.params.tau2);
    for (int inner = 0; inner < config.inner_iterations; ++inner) {
      std::vector<DisplacementGrid> next(n, DisplacementGrid(config.anchor_grid()));
      std::vector<char> monotone(n, 1);
      try {
        parallel_for(static_cast<int>(n), config.threads, [&](int i) {
          const auto k = static_cast<std::size_t>(i);
          WarpPrediction pred = predict_warp(data[k], result.template_estimate, result.params, f, w0[k],
                                             config.gauss_newton);
          for (std::size_t s = 1; s < pred.objective_trace.size(); ++s) {
            if (pred.objective_trace[s] > pred.objective_trace[s - 1]) monotone[k] = 0;
          }
          next[k] = std::move(pred.warp);
        });
      } catch (const Error& e) {
        throw NumericalError("outer iteration " + std::to_string(outer + 1) + ", inner iteration " +
                             std::to_string(inner + 1) + ": " + e.what());
      }
      for (char m : monotone) diag.warp_objectives_monotone = diag.warp_objectives_monotone && m;
      ++diag.warp_sweeps;
      w0 = std::move(next);
      result.template_estimate = update_template(data, w0);
    }

    if (config.early_stop && result.nll_trace.size() >= 2) {
      const double prev = result.nll_trace[result.nll_trace.size() - 2];
      if (std::abs(est.nll - prev) < config.early_stop_tolerance * std::abs(prev)) break;
    }
  }

  result.warps = w0;
  if (diag.degenerate) {
    result.params.sigma2 = 0.0;
    for (const auto& y : data) result.intensities.emplace_back(y.lattice());
  } else {
    const CholFactor f = precision->factor(result.params.tau2);
    result.intensities.resize(n, Image(lat));
    parallel_for(static_cast<int>(n), config.threads, [&](int i) {
      const auto k = static_cast<std::size_t>(i);
      result.intensities[k] = predict_intensity(data[k], result.template_estimate, result.warps[k], f);
    });
  }
  for (const auto& w : result.warps) diag.fold_counts.push_back(count_folds(w));
  return result;
}

Image reconstruct(const ModelFit& fit, int index) {
  if (index < 0 || index >= static_cast<int>(fit.warps.size())) throw InvalidArgument("image index out of range");
  const auto k = static_cast<std::size_t>(index);
  Image out = resample(fit.template_estimate, fit.warps[k]);
  out.values() += fit.intensities[k].values();
  return out;
}

}  // namespace mixwarp

#include "mixwarp/simulation.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

#include "mixwarp/brownian_sheet.hpp"
#include "mixwarp/errors.hpp"
#include "mixwarp/parallel.hpp"

namespace mixwarp {

Mask::Mask(Lattice lattice, std::vector<std::uint8_t> inside) : lattice_(lattice), inside_(std::move(inside)) {
  if (static_cast<int>(inside_.size()) != lattice_.size()) throw DimensionMismatch("mask size differs from lattice");
}

Mask Mask::full(const Lattice& lattice) {
  return Mask(lattice, std::vector<std::uint8_t>(static_cast<std::size_t>(lattice.size()), 1));
}

Mask Mask::disk(const Lattice& lattice, Point center, double radius) {
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(lattice.size()));
  for (int i = 0; i < lattice.size(); ++i) {
    const Point p = lattice.node(i);
    inside[static_cast<std::size_t>(i)] = std::hypot(p.s - center.s, p.t - center.t) <= radius ? 1 : 0;
  }
  return Mask(lattice, std::move(inside));
}

Mask Mask::from_image(const Image& img) {
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(img.lattice().size()));
  for (int i = 0; i < img.lattice().size(); ++i) inside[static_cast<std::size_t>(i)] = img.values()[i] >= 0.5 ? 1 : 0;
  return Mask(img.lattice(), std::move(inside));
}

int Mask::count() const {
  int c = 0;
  for (auto v : inside_) c += v ? 1 : 0;
  return c;
}

Image synthetic_template(const Lattice& lattice) {
  constexpr double pi = std::numbers::pi;
  return Image::from_function(lattice, [](double s, double t) {
    const double r = std::hypot(s - 0.5, t - 0.5);
    const double inside = 1.0 / (1.0 + std::exp((r - 0.36) / 0.015));
    const double texture = 0.45 + 0.2 * std::sin(5.0 * pi * s) * std::cos(4.0 * pi * t) +
                           0.15 * std::cos(6.0 * pi * (s + 0.3 * t)) + 0.1 * std::sin(5.0 * pi * r);
    return 0.05 + inside * texture;
  });
}

SimDataset simulate_dataset(const SimSpec& spec) {
  if (spec.n < 0) throw InvalidArgument("image count must be non-negative");
  const SimScales& sc = spec.scales;
  if (sc.sigma2 < 0.0 || sc.sigma2_tau2 < 0.0 || sc.sigma2_gamma2 < 0.0) {
    throw InvalidArgument("variance scales must be non-negative");
  }
  const Lattice& lat = spec.template_image.lattice();
  if (spec.intensity_mask && !(spec.intensity_mask->lattice() == lat)) {
    throw DimensionMismatch("mask lattice differs from the template lattice");
  }
  const WarpPrior unit_prior(1.0, spec.warp_grid);
  std::optional<GmrfSampler> gmrf;
  if (sc.sigma2_tau2 > 0.0) gmrf.emplace(IntensityModel{1.0, lat});

  std::mt19937_64 master(spec.seed);
  SimDataset out;
  for (int i = 0; i < spec.n; ++i) {
    std::mt19937_64 warp_rng(master());
    std::mt19937_64 intensity_rng(master());
    std::mt19937_64 noise_rng(master());

    DisplacementGrid w = sample_warp(unit_prior, sc.sigma2_gamma2, warp_rng);
    Image x = gmrf ? gmrf->draw(intensity_rng, sc.sigma2_tau2) : Image(lat);
    if (spec.intensity_mask) {
      for (int p = 0; p < lat.size(); ++p) {
        if (!spec.intensity_mask->inside(p)) x.values()[p] = 0.0;
      }
    }
    Image y = resample(spec.template_image, w);
    y.values() += x.values();
    if (sc.sigma2 > 0.0) {
      std::normal_distribution<double> normal(0.0, std::sqrt(sc.sigma2));
      for (int p = 0; p < lat.size(); ++p) y.values()[p] += normal(noise_rng);
    }
    out.images.push_back(std::move(y));
    out.warps.push_back(std::move(w));
    out.intensities.push_back(std::move(x));
  }
  return out;
}

Image fit_pointwise(const std::vector<Image>& data) {
  check_stack(data, 1);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(data.front().lattice().size());
  double k = 0.0;
  for (const auto& y : data) mean += (y.values() - mean) / ++k;
  return Image(data.front().lattice(), mean);
}

ModelFit fit_procrustes(const std::vector<Image>& data, double lambda, const FitConfig& config) {
  config.validate();
  check_stack(data, 1);
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");
  const auto n = data.size();
  const AnchorGrid grid = config.anchor_grid();
  const Eigen::MatrixXd penalty = lambda * WarpPrior(1.0, grid).unit_precision();

  std::vector<DisplacementGrid> w(n, DisplacementGrid(grid));
  ModelFit result{update_template(data, w), VarianceParams{0.0, 0.0, 0.0}, {}, {}, {}, {}};
  for (int outer = 0; outer < config.outer_iterations; ++outer) {
    for (int inner = 0; inner < config.inner_iterations; ++inner) {
      std::vector<DisplacementGrid> next(n, DisplacementGrid(grid));
      std::vector<char> monotone(n, 1);
      parallel_for(static_cast<int>(n), config.threads, [&](int i) {
        const auto k = static_cast<std::size_t>(i);
        WarpPrediction pred = minimize_warp_objective(data[k], result.template_estimate, nullptr, penalty, w[k],
                                                      config.gauss_newton);
        for (std::size_t s = 1; s < pred.objective_trace.size(); ++s) {
          if (pred.objective_trace[s] > pred.objective_trace[s - 1]) monotone[k] = 0;
        }
        next[k] = std::move(pred.warp);
      });
      for (char m : monotone) result.diagnostics.warp_objectives_monotone = result.diagnostics.warp_objectives_monotone && m;
      ++result.diagnostics.warp_sweeps;
      w = std::move(next);
      result.template_estimate = update_template(data, w);
    }
  }
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Image residual = data[i];
    residual.values() -= resample(result.template_estimate, w[i]).values();
    rss += residual.values().squaredNorm();
    result.intensities.push_back(Image(residual.lattice()));
  }
  result.params.sigma2 = rss / (static_cast<double>(n) * data.front().lattice().size());
  result.warps = std::move(w);
  for (const auto& wi : result.warps) result.diagnostics.fold_counts.push_back(count_folds(wi));
  return result;
}

double template_mse(const Image& estimate, const Image& truth) {
  if (!(estimate.lattice() == truth.lattice())) throw DimensionMismatch("template lattices differ");
  return (estimate.values() - truth.values()).squaredNorm() / static_cast<double>(truth.lattice().size());
}

double warp_mse(const std::vector<DisplacementGrid>& estimate, const std::vector<DisplacementGrid>& truth,
                const Mask& mask) {
  if (estimate.size() != truth.size() || estimate.empty()) throw DimensionMismatch("warp lists differ in length");
  const int count = mask.count();
  if (count == 0) throw InvalidArgument("warp MSE mask is empty");
  const Lattice& lat = mask.lattice();
  double total = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    for (int p = 0; p < lat.size(); ++p) {
      if (!mask.inside(p)) continue;
      const auto a = displacement(estimate[i], lat.node(p));
      const auto b = displacement(truth[i], lat.node(p));
      total += (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]);
    }
  }
  return total / (static_cast<double>(count) * static_cast<double>(estimate.size()));
}

std::string method_name(BenchMethod method) {
  switch (method) {
    case BenchMethod::kProposed: return "proposed";
    case BenchMethod::kProcrustesFree: return "procrustes_free";
    case BenchMethod::kProcrustesRegularized: return "procrustes_regularized";
    case BenchMethod::kPointwise: return "pointwise";
  }
  return "unknown";
}

std::vector<BenchMethod> all_methods() {
  return {BenchMethod::kProposed, BenchMethod::kProcrustesFree, BenchMethod::kProcrustesRegularized,
          BenchMethod::kPointwise};
}

double matched_lambda(const SimScales& scales) {
  // gamma2 = sigma2_gamma2 / sigma2; without a warp effect the penalty is
  // effectively infinite, without noise it vanishes.
  if (scales.sigma2_gamma2 <= 0.0) return 1e12;
  if (scales.sigma2 <= 0.0) return 0.0;
  return 0.5 * scales.sigma2 / scales.sigma2_gamma2;
}

BenchResult benchmark(const SimSpec& spec, int repetitions, const std::vector<BenchMethod>& methods,
                      const FitConfig& config) {
  if (repetitions < 1) throw InvalidArgument("repetitions must be at least 1");
  const Mask mask = spec.intensity_mask ? *spec.intensity_mask : Mask::full(spec.template_image.lattice());
  FitConfig fit_config = config;
  fit_config.warp_rows = spec.warp_grid.rows();
  fit_config.warp_cols = spec.warp_grid.cols();
  BenchResult result;
  for (int rep = 0; rep < repetitions; ++rep) {
    SimSpec rep_spec = spec;
    rep_spec.seed = spec.seed + static_cast<std::uint64_t>(rep);
    const SimDataset data = simulate_dataset(rep_spec);
    for (BenchMethod method : methods) {
      BenchRow row;
      row.rep = rep;
      row.method = method_name(method);
      const auto start = std::chrono::steady_clock::now();
      try {
        ModelFit fitted{Image(spec.template_image.lattice()), {}, {}, {}, {}, {}};
        switch (method) {
          case BenchMethod::kProposed: fitted = fit(data.images, fit_config); break;
          case BenchMethod::kProcrustesFree: fitted = fit_procrustes(data.images, 0.0, fit_config); break;
          case BenchMethod::kProcrustesRegularized:
            fitted = fit_procrustes(data.images, matched_lambda(spec.scales), fit_config);
            break;
          case BenchMethod::kPointwise:
            fitted.template_estimate = fit_pointwise(data.images);
            fitted.warps.assign(data.images.size(), DisplacementGrid(spec.warp_grid));
            fitted.params = {0.0, 0.0, 0.0};
            break;
        }
        row.template_mse = template_mse(fitted.template_estimate, spec.template_image);
        row.warp_mse = warp_mse(fitted.warps, data.warps, mask);
        row.sigma2 = fitted.params.sigma2;
        row.sigma2_tau2 = fitted.params.sigma2 * fitted.params.tau2;
        row.sigma2_gamma2 = fitted.params.sigma2 * fitted.params.gamma2;
      } catch (const Error& e) {
        row.failed = true;
        row.method += "!failed";
        row.error = e.what();
        row.template_mse = row.warp_mse = std::numeric_limits<double>::quiet_NaN();
        row.sigma2 = row.sigma2_tau2 = row.sigma2_gamma2 = std::numeric_limits<double>::quiet_NaN();
      }
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.rows.push_back(std::move(row));
    }
  }
  return result;
}

void write_bench_csv(const BenchResult& result, std::ostream& out, bool include_timing) {
  out << "rep,method,template_mse,warp_mse,sigma2,sigma2_tau2,sigma2_gamma2,seconds\n";
  char line[512];
  for (const auto& r : result.rows) {
    std::snprintf(line, sizeof line, "%d,%s,%.10g,%.10g,%.10g,%.10g,%.10g,", r.rep, r.method.c_str(), r.template_mse,
                  r.warp_mse, r.sigma2, r.sigma2_tau2, r.sigma2_gamma2);
    out << line;
    if (include_timing) {
      std::snprintf(line, sizeof line, "%.3f", r.seconds);
      out << line;
    }
    out << '\n';
  }
}

}  // namespace mixwarp

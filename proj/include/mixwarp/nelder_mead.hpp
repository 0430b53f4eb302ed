#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

namespace mixwarp {

struct NelderMeadOptions {
  double initial_step = 1.0;
  int max_evaluations = 300;
  // Stop when the simplex values agree to ftol (relative to |f_best| + 1) and
  // the vertices lie within xtol of the best vertex.
  double ftol = 1e-10;
  double xtol = 1e-6;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Downhill simplex minimization. Non-finite objective values are treated as
/// +infinity so the simplex retreats from infeasible regions.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                             const Eigen::VectorXd& start, const NelderMeadOptions& options = {});

}  // namespace mixwarp

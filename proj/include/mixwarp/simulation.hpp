#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mixwarp/grid_image.hpp"
#include "mixwarp/inference.hpp"
#include "mixwarp/warp_field.hpp"

namespace mixwarp {

/// Boolean lattice image.
class Mask {
 public:
  Mask(Lattice lattice, std::vector<std::uint8_t> inside);

  static Mask full(const Lattice& lattice);
  static Mask disk(const Lattice& lattice, Point center, double radius);
  // Nodes with value >= 0.5 are inside.
  static Mask from_image(const Image& img);

  const Lattice& lattice() const { return lattice_; }
  bool inside(int index) const { return inside_[static_cast<std::size_t>(index)] != 0; }
  int count() const;

 private:
  Lattice lattice_;
  std::vector<std::uint8_t> inside_;
};

/// Variance scales of the generative model as products: noise sigma2,
/// intensity sigma2*tau2 and warp sigma2*gamma2. Zero disables an effect.
struct SimScales {
  double sigma2 = 0.001;
  double sigma2_tau2 = 0.1;
  double sigma2_gamma2 = 0.01;
};

struct SimSpec {
  Image template_image;
  int n = 1;
  SimScales scales;
  AnchorGrid warp_grid{4, 4};
  std::optional<Mask> intensity_mask;  // intensity effect is zeroed outside
  std::uint64_t seed = 1;
};

struct SimDataset {
  std::vector<Image> images;  // unclamped
  std::vector<DisplacementGrid> warps;
  std::vector<Image> intensities;
};

/// y_i = theta(v(., w_i)) + x_i + eps_i with w_i ~ N(0, sigma2 gamma2 C_1),
/// x_i ~ N(0, sigma2 tau2 S_1) and eps_i ~ N(0, sigma2 I).
SimDataset simulate_dataset(const SimSpec& spec);

/// Smooth textured disk on a flat background; values in [0, 1].
Image synthetic_template(const Lattice& lattice);

Image fit_pointwise(const std::vector<Image>& data);

/// Warps as fixed parameters with white-noise residuals: alternately
/// minimizes |y_i - theta^{w_i}|^2 + lambda w_i^T C_1^{-1} w_i per image and
/// recomputes the template. Uses the iteration counts of `config`; params
/// reports sigma2 as the mean squared residual and zero for tau2 and gamma2.
ModelFit fit_procrustes(const std::vector<Image>& data, double lambda, const FitConfig& config);

double template_mse(const Image& estimate, const Image& truth);

/// Mean over masked lattice nodes of the squared Euclidean difference
/// between the two displacement fields.
double warp_mse(const std::vector<DisplacementGrid>& estimate, const std::vector<DisplacementGrid>& truth,
                const Mask& mask);

enum class BenchMethod { kProposed, kProcrustesFree, kProcrustesRegularized, kPointwise };

std::string method_name(BenchMethod method);
std::vector<BenchMethod> all_methods();

struct BenchRow {
  int rep = 0;
  std::string method;  // suffixed "!failed" when the fit threw
  double template_mse = 0.0;
  double warp_mse = 0.0;
  double sigma2 = 0.0;
  double sigma2_tau2 = 0.0;
  double sigma2_gamma2 = 0.0;
  double seconds = 0.0;
  bool failed = false;
  std::string error;
};

struct BenchResult {
  std::vector<BenchRow> rows;
};

/// Regularization matching the true warp prior: lambda = 1 / (2 gamma2).
double matched_lambda(const SimScales& scales);

/// Simulates `repetitions` datasets (seed + repetition index) and fits each
/// method. The warp MSE mask is the intensity mask when given, else the full
/// lattice. A failing fit is recorded and the batch continues.
BenchResult benchmark(const SimSpec& spec, int repetitions, const std::vector<BenchMethod>& methods,
                      const FitConfig& config);

// Header "rep,method,template_mse,warp_mse,sigma2,sigma2_tau2,sigma2_gamma2,seconds".
void write_bench_csv(const BenchResult& result, std::ostream& out, bool include_timing = true);

}  // namespace mixwarp

#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "mixwarp/brownian_sheet.hpp"
#include "mixwarp/grid_image.hpp"
#include "mixwarp/sparse_cholesky.hpp"
#include "mixwarp/warp_field.hpp"

namespace mixwarp {

/// sigma2 is the residual variance; the intensity covariance is sigma2 * S(tau2)
/// and the warp covariance sigma2 * C(gamma2).
struct VarianceParams {
  double sigma2 = 1.0;
  double tau2 = 1.0;
  double gamma2 = 0.1;

  static VarianceParams from_scales(double sigma2, double sigma2_tau2, double sigma2_gamma2);

  double intensity_scale() const { return sigma2 * tau2; }
  double warp_scale() const { return sigma2 * gamma2; }
  // Throws InvalidArgument unless all three are positive and finite.
  void validate() const;
};

/// I + S^{-1} for a fixed lattice. The sparsity pattern does not depend on
/// tau2, so one symbolic analysis serves every factorization.
class IntensityPrecision {
 public:
  explicit IntensityPrecision(const Lattice& lattice);

  const Lattice& lattice() const { return lattice_; }
  SparseSym matrix(double tau2) const;
  CholFactor factor(double tau2) const;

  /// log det(S + I) = log det(I + S^{-1}) - log det(S^{-1}), using the factor
  /// of I + S^{-1} and the closed-form determinant of the Kronecker stencil.
  double exact_logdet_s_plus_i(const CholFactor& f, double tau2) const;

 private:
  Lattice lattice_;
  SparseSym stencil_;  // T (x) T plus the identity pattern
  std::vector<double> identity_;
  std::shared_ptr<const SymbolicAnalysis> analysis_;
};

/// Per-image linearization matrix: m rows (lattice nodes) by q columns
/// (anchor displacements), at most 8 nonzeros per row.
using ZMatrix = Eigen::SparseMatrix<double>;

/// Row of node p: gradient of the template interpolant at v(p, w0) times the
/// warp basis weights of p.
ZMatrix assemble_Z(const Image& tmpl, const DisplacementGrid& w0);

/// (S + I)^{-1} r computed as r - (I + S^{-1})^{-1} r.
Eigen::VectorXd apply_Ainv(const CholFactor& f, const Eigen::VectorXd& r);

/// r^T V^{-1} r with V = Z C Z^T + S + I, by the Woodbury identity.
/// Throws NumericalError if C^{-1} + Z^T (S+I)^{-1} Z is not positive definite.
double quad_form_Vinv(const CholFactor& f, const ZMatrix& z, const Eigen::MatrixXd& c_inverse,
                      const Eigen::VectorXd& r);

/// log det V by the matrix determinant lemma, with log det(S + I) taken from
/// the sinh series.
double logdet_V(const CholFactor& f, const ZMatrix& z, const WarpPrior& prior, double tau2,
                const Lattice& lattice);

double profile_sigma2(double quad_total, int n, int m);

enum class LogdetMode {
  kSeries,  // operator series approximation of log det(S + I)
  kExact,   // from the sparse factor
};

/// The linearized model at fixed linearization points: residuals
/// r_i = y_i - theta^{w0_i} + Z_i w0_i and the matrices Z_i. Evaluating it at
/// (tau2, gamma2) performs exactly one sparse factorization shared by all
/// images.
class LinearizedModel {
 public:
  LinearizedModel(const std::vector<Image>& data, const Image& tmpl,
                  const std::vector<DisplacementGrid>& w0s, std::shared_ptr<const IntensityPrecision> precision,
                  int threads = 1);
  LinearizedModel(const std::vector<Image>& data, const Image& tmpl,
                  const std::vector<DisplacementGrid>& w0s, const std::vector<ZMatrix>& zs,
                  std::shared_ptr<const IntensityPrecision> precision, int threads = 1);

  // Parts of the likelihood that do not involve sigma2.
  struct Terms {
    double quad_total = 0.0;    // sum_i r_i^T V_i^{-1} r_i
    double logdet_total = 0.0;  // sum_i log det V_i
  };

  Terms evaluate(double tau2, double gamma2, LogdetMode mode = LogdetMode::kSeries) const;

  double nll(const VarianceParams& params, LogdetMode mode = LogdetMode::kSeries) const;

  /// nll minimized over sigma2; the minimizer is written to *sigma2 if given.
  double profiled_nll(double tau2, double gamma2, LogdetMode mode = LogdetMode::kSeries,
                      double* sigma2 = nullptr) const;

  int images() const { return static_cast<int>(residuals_.size()); }
  int pixels() const { return precision_->lattice().size(); }
  double residual_sum_of_squares() const;

 private:
  void prepare(const std::vector<Image>& data, const Image& tmpl, const std::vector<DisplacementGrid>& w0s,
               const std::vector<ZMatrix>* zs);

  std::shared_ptr<const IntensityPrecision> precision_;
  AnchorGrid grid_;
  int threads_;
  std::vector<Eigen::MatrixXd> z_;
  std::vector<Eigen::VectorXd> residuals_;
  std::vector<Eigen::MatrixXd> ztz_;
  std::vector<Eigen::VectorXd> ztr_;
  std::vector<double> rtr_;
};

/// Negative log-likelihood of the linearized model.
double nll(const std::vector<Image>& data, const Image& tmpl, const std::vector<DisplacementGrid>& w0s,
           const std::vector<ZMatrix>& zs, const VarianceParams& params,
           LogdetMode mode = LogdetMode::kSeries, int threads = 1);

}  // namespace mixwarp

#include "mixwarp/likelihood.hpp"

#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "mixwarp/errors.hpp"
#include "mixwarp/parallel.hpp"

namespace mixwarp {

namespace {

bool positive_finite(double v) { return v > 0.0 && std::isfinite(v); }

struct WoodburyTerms {
  double quad = 0.0;
  double logdet_m = 0.0;
};

// Woodbury pieces for one image given the forward-substituted quantities
// W = L^{-1} P Z and g = L^{-1} P r:
//   Z^T (S+I)^{-1} Z = Z^T Z - W^T W,  Z^T (S+I)^{-1} r = Z^T r - W^T g,
//   r^T (S+I)^{-1} r = r^T r - g^T g.
WoodburyTerms woodbury(const Eigen::MatrixXd& w, const Eigen::VectorXd& g, const Eigen::MatrixXd& ztz,
                       const Eigen::VectorXd& ztr, double rtr, const Eigen::MatrixXd& c_inverse) {
  Eigen::MatrixXd m = c_inverse + ztz;
  m.selfadjointView<Eigen::Lower>().rankUpdate(w.transpose(), -1.0);
  const Eigen::VectorXd u = ztr - w.transpose() * g;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("C^{-1} + Z^T (S+I)^{-1} Z is not positive definite");
  }
  WoodburyTerms t;
  t.quad = rtr - g.squaredNorm() - u.dot(llt.solve(u));
  const Eigen::MatrixXd l = llt.matrixL();
  t.logdet_m = 2.0 * l.diagonal().array().log().sum();
  return t;
}

WoodburyTerms woodbury(const CholFactor& f, const ZMatrix& z, const Eigen::MatrixXd& c_inverse,
                       const Eigen::VectorXd& r) {
  if (z.rows() != r.size() || z.rows() != f.size()) throw DimensionMismatch("Z rows do not match residual");
  if (c_inverse.rows() != z.cols() || c_inverse.cols() != z.cols()) {
    throw DimensionMismatch("warp precision does not match Z columns");
  }
  Eigen::MatrixXd w = Eigen::MatrixXd(z);
  const Eigen::MatrixXd ztz = w.transpose() * w;
  const Eigen::VectorXd ztr = w.transpose() * r;
  f.forward_in_place(w);
  return woodbury(w, f.forward(r), ztz, ztr, r.squaredNorm(), c_inverse);
}

}  // namespace

VarianceParams VarianceParams::from_scales(double sigma2, double sigma2_tau2, double sigma2_gamma2) {
  if (!positive_finite(sigma2)) throw InvalidArgument("sigma2 must be positive to derive relative scales");
  return {sigma2, sigma2_tau2 / sigma2, sigma2_gamma2 / sigma2};
}

void VarianceParams::validate() const {
  if (!positive_finite(sigma2) || !positive_finite(tau2) || !positive_finite(gamma2)) {
    throw InvalidArgument("variance parameters must be positive and finite (sigma2=" + std::to_string(sigma2) +
                          ", tau2=" + std::to_string(tau2) + ", gamma2=" + std::to_string(gamma2) + ")");
  }
}

IntensityPrecision::IntensityPrecision(const Lattice& lattice)
    : lattice_(lattice), stencil_(lattice.size(), brownian_sheet_stencil(lattice)) {
  // The stencil has a full diagonal, so the identity shares its pattern.
  identity_.assign(stencil_.nonzeros(), 0.0);
  for (int j = 0; j < stencil_.size(); ++j) {
    for (int p = stencil_.col_ptr()[j]; p < stencil_.col_ptr()[j + 1]; ++p) {
      if (stencil_.row_index()[p] == j) identity_[static_cast<std::size_t>(p)] = 1.0;
    }
  }
  analysis_ = analyze(stencil_);
}

SparseSym IntensityPrecision::matrix(double tau2) const {
  if (!positive_finite(tau2)) throw InvalidArgument("tau2 must be positive and finite");
  const double scale = (lattice_.rows() + 1.0) * (lattice_.cols() + 1.0) / tau2;
  SparseSym a = stencil_;
  auto& v = a.values();
  for (std::size_t p = 0; p < v.size(); ++p) v[p] = identity_[p] + scale * stencil_.values()[p];
  return a;
}

CholFactor IntensityPrecision::factor(double tau2) const { return factorize(matrix(tau2), analysis_); }

double IntensityPrecision::exact_logdet_s_plus_i(const CholFactor& f, double tau2) const {
  const double m1 = lattice_.rows();
  const double m2 = lattice_.cols();
  // det(T_a (x) T_b) = det(T_a)^b det(T_b)^a and det(T_n) = n + 1.
  const double logdet_precision =
      m1 * m2 * std::log((m1 + 1.0) * (m2 + 1.0) / tau2) + m2 * std::log(m1 + 1.0) + m1 * std::log(m2 + 1.0);
  return f.logdet() - logdet_precision;
}

ZMatrix assemble_Z(const Image& tmpl, const DisplacementGrid& w0) {
  const Lattice& lat = tmpl.lattice();
  const AnchorGrid& grid = w0.grid();
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(8 * lat.size()));
  for (int i = 0; i < lat.size(); ++i) {
    const Point p = lat.node(i);
    const auto grad = interp_gradient(tmpl, eval_warp(w0, p));
    for (const auto& b : warp_basis(grid, p)) {
      if (grad[0] != 0.0) entries.emplace_back(i, b.anchor, b.weight * grad[0]);
      if (grad[1] != 0.0) entries.emplace_back(i, grid.size() + b.anchor, b.weight * grad[1]);
    }
  }
  ZMatrix z(lat.size(), grid.dof());
  z.setFromTriplets(entries.begin(), entries.end());
  return z;
}

Eigen::VectorXd apply_Ainv(const CholFactor& f, const Eigen::VectorXd& r) { return r - f.solve(r); }

double quad_form_Vinv(const CholFactor& f, const ZMatrix& z, const Eigen::MatrixXd& c_inverse,
                      const Eigen::VectorXd& r) {
  return woodbury(f, z, c_inverse, r).quad;
}

double logdet_V(const CholFactor& f, const ZMatrix& z, const WarpPrior& prior, double tau2,
                const Lattice& lattice) {
  if (z.rows() != lattice.size()) throw DimensionMismatch("Z rows do not match the lattice");
  const Eigen::VectorXd r = Eigen::VectorXd::Zero(z.rows());
  const double logdet_m = woodbury(f, z, prior.precision(), r).logdet_m;
  return logdet_m + prior.logdet() + logdet_intensity(tau2, lattice.rows(), lattice.cols());
}

double profile_sigma2(double quad_total, int n, int m) {
  if (n < 1 || m < 1) throw InvalidArgument("profile_sigma2 needs positive counts");
  if (!(quad_total > 0.0)) {
    throw DegenerateFit("residual quadratic form is zero; the residual variance is not identifiable");
  }
  return quad_total / (static_cast<double>(n) * m);
}

LinearizedModel::LinearizedModel(const std::vector<Image>& data, const Image& tmpl,
                                 const std::vector<DisplacementGrid>& w0s,
                                 std::shared_ptr<const IntensityPrecision> precision, int threads)
    : precision_(std::move(precision)),
      grid_(w0s.empty() ? AnchorGrid(1, 1) : w0s.front().grid()),
      threads_(threads) {
  prepare(data, tmpl, w0s, nullptr);
}

LinearizedModel::LinearizedModel(const std::vector<Image>& data, const Image& tmpl,
                                 const std::vector<DisplacementGrid>& w0s, const std::vector<ZMatrix>& zs,
                                 std::shared_ptr<const IntensityPrecision> precision, int threads)
    : precision_(std::move(precision)),
      grid_(w0s.empty() ? AnchorGrid(1, 1) : w0s.front().grid()),
      threads_(threads) {
  prepare(data, tmpl, w0s, &zs);
}

void LinearizedModel::prepare(const std::vector<Image>& data, const Image& tmpl,
                              const std::vector<DisplacementGrid>& w0s, const std::vector<ZMatrix>* zs) {
  if (data.empty()) throw InvalidArgument("no images");
  if (w0s.size() != data.size()) throw DimensionMismatch("one linearization point per image is required");
  if (zs && zs->size() != data.size()) throw DimensionMismatch("one Z matrix per image is required");
  const Lattice& lat = precision_->lattice();
  if (!(tmpl.lattice() == lat)) throw DimensionMismatch("template lattice differs from the model lattice");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!(data[i].lattice() == lat)) throw DimensionMismatch("all images must share one lattice");
    if (!(w0s[i].grid() == grid_)) throw DimensionMismatch("all linearization points must share one anchor grid");
  }
  const int n = static_cast<int>(data.size());
  z_.resize(data.size());
  residuals_.resize(data.size());
  ztz_.resize(data.size());
  ztr_.resize(data.size());
  rtr_.resize(data.size());
  parallel_for(n, threads_, [&](int i) {
    const ZMatrix z = zs ? (*zs)[static_cast<std::size_t>(i)] : assemble_Z(tmpl, w0s[static_cast<std::size_t>(i)]);
    if (z.rows() != lat.size() || z.cols() != grid_.dof()) throw DimensionMismatch("Z has the wrong shape");
    const auto& w0 = w0s[static_cast<std::size_t>(i)];
    Eigen::VectorXd r = data[static_cast<std::size_t>(i)].values() - resample(tmpl, w0).values() + z * w0.vector();
    Eigen::MatrixXd zd(z);
    ztz_[static_cast<std::size_t>(i)] = zd.transpose() * zd;
    ztr_[static_cast<std::size_t>(i)] = zd.transpose() * r;
    rtr_[static_cast<std::size_t>(i)] = r.squaredNorm();
    z_[static_cast<std::size_t>(i)] = std::move(zd);
    residuals_[static_cast<std::size_t>(i)] = std::move(r);
  });
}

LinearizedModel::Terms LinearizedModel::evaluate(double tau2, double gamma2, LogdetMode mode) const {
  const CholFactor f = precision_->factor(tau2);
  const WarpPrior prior(gamma2, grid_);
  const Eigen::MatrixXd c_inverse = prior.precision();
  const int n = images();
  std::vector<WoodburyTerms> per_image(static_cast<std::size_t>(n));
  parallel_for(n, threads_, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    Eigen::MatrixXd w = z_[k];
    f.forward_in_place(w);
    per_image[k] = woodbury(w, f.forward(residuals_[k]), ztz_[k], ztr_[k], rtr_[k], c_inverse);
  });
  const Lattice& lat = precision_->lattice();
  const double logdet_intensity_term = mode == LogdetMode::kSeries
                                           ? logdet_intensity(tau2, lat.rows(), lat.cols())
                                           : precision_->exact_logdet_s_plus_i(f, tau2);
  Terms terms;
  for (const auto& t : per_image) {
    terms.quad_total += t.quad;
    terms.logdet_total += t.logdet_m + prior.logdet() + logdet_intensity_term;
  }
  return terms;
}

double LinearizedModel::nll(const VarianceParams& params, LogdetMode mode) const {
  params.validate();
  const Terms t = evaluate(params.tau2, params.gamma2, mode);
  const double nm = static_cast<double>(images()) * pixels();
  return 0.5 * nm * std::log(params.sigma2) + 0.5 * t.logdet_total + t.quad_total / (2.0 * params.sigma2);
}

double LinearizedModel::profiled_nll(double tau2, double gamma2, LogdetMode mode, double* sigma2) const {
  const Terms t = evaluate(tau2, gamma2, mode);
  const double s2 = profile_sigma2(t.quad_total, images(), pixels());
  if (sigma2) *sigma2 = s2;
  const double nm = static_cast<double>(images()) * pixels();
  return 0.5 * nm * std::log(s2) + 0.5 * t.logdet_total + 0.5 * nm;
}

double LinearizedModel::residual_sum_of_squares() const {
  double total = 0.0;
  for (double v : rtr_) total += v;
  return total;
}

double nll(const std::vector<Image>& data, const Image& tmpl, const std::vector<DisplacementGrid>& w0s,
           const std::vector<ZMatrix>& zs, const VarianceParams& params, LogdetMode mode, int threads) {
  auto precision = std::make_shared<const IntensityPrecision>(tmpl.lattice());
  return LinearizedModel(data, tmpl, w0s, zs, precision, threads).nll(params, mode);
}

}  // namespace mixwarp

#include <doctest.h>

#include <random>

#include "mixwarp/brownian_sheet.hpp"
#include "mixwarp/errors.hpp"
#include "mixwarp/sparse_cholesky.hpp"
#include "oracles.hpp"

using namespace mixwarp;

namespace {

SparseSym identity_plus_precision(int m1, int m2, double tau2) {
  const Lattice lat = make_lattice(m1, m2);
  std::vector<Triplet> entries;
  const SparseSym q = assemble_precision({tau2, lat});
  for (int c = 0; c < q.size(); ++c) {
    for (int p = q.col_ptr()[c]; p < q.col_ptr()[c + 1]; ++p) {
      const int r = q.row_index()[p];
      entries.push_back({r, c, q.values()[p] + (r == c ? 1.0 : 0.0)});
    }
  }
  return SparseSym(lat.size(), entries);
}

// Random sparse symmetric diagonally dominant matrix.
SparseSym random_spd(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<Triplet> entries;
  std::vector<double> row_sum(static_cast<std::size_t>(n), 0.0);
  for (int k = 0; k < 3 * n; ++k) {
    const int i = pick(rng);
    const int j = pick(rng);
    if (i == j) continue;
    const double v = u(rng);
    entries.push_back({std::max(i, j), std::min(i, j), v});
    row_sum[static_cast<std::size_t>(i)] += std::abs(v);
    row_sum[static_cast<std::size_t>(j)] += std::abs(v);
  }
  for (int i = 0; i < n; ++i) entries.push_back({i, i, row_sum[static_cast<std::size_t>(i)] + 0.5 + std::abs(u(rng))});
  return SparseSym(n, entries);
}

Eigen::MatrixXd permuted(const Eigen::MatrixXd& a, const std::vector<int>& order) {
  const auto n = a.rows();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return out;
}

}  // namespace

TEST_CASE("sparse symmetric storage mirrors upper entries and sums duplicates") {
  const SparseSym a(3, {{0, 0, 1.0}, {0, 2, 2.0}, {2, 0, 0.5}, {1, 1, 3.0}, {1, 1, 1.0}});
  Eigen::MatrixXd expected(3, 3);
  expected << 1.0, 0.0, 2.5, 0.0, 4.0, 0.0, 2.5, 0.0, 0.0;
  CHECK(a.dense() == expected);
  CHECK(a.nonzeros() == 4);  // includes the structural zero on the last diagonal
  const Eigen::Vector3d x(1.0, -2.0, 3.0);
  CHECK((a.multiply(x) - expected * x).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(SparseSym(2, {{2, 0, 1.0}}), InvalidArgument);
}

TEST_CASE("identity factorizes to the identity") {
  std::vector<Triplet> entries;
  for (int i = 0; i < 6; ++i) entries.push_back({i, i, 1.0});
  const CholFactor f = factorize(SparseSym(6, entries));
  CHECK(f.lower_dense() == Eigen::MatrixXd::Identity(6, 6));
  CHECK(f.logdet() == 0.0);
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(6, -1.0, 2.0);
  CHECK(f.solve(b) == b);
}

TEST_CASE("factor reconstructs the permuted matrix of a 5x10 lattice") {
  const SparseSym a = identity_plus_precision(5, 10, 0.8);
  const CholFactor f = factorize(a);
  const Eigen::MatrixXd l = f.lower_dense();
  CHECK(l.rows() == 50);
  CHECK((l.diagonal().array() > 0.0).all());
  CHECK(l.isLowerTriangular());
  const Eigen::MatrixXd pap = permuted(a.dense(), f.analysis()->order());
  CHECK((l * l.transpose() - pap).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("non-positive pivots are reported with their index") {
  const SparseSym a(3, {{0, 0, 2.0}, {1, 1, -1.0}, {2, 2, 3.0}});
  try {
    factorize(a);
    FAIL("expected NotPositiveDefinite");
  } catch (const NotPositiveDefinite& e) {
    CHECK(e.pivot() == 1);
  }
  const SparseSym b(2, {{0, 0, 1.0}, {1, 0, 2.0}, {1, 1, 1.0}});
  CHECK_THROWS_AS(factorize(b), NotPositiveDefinite);
}

TEST_CASE("solve") {
  const SparseSym a = random_spd(30, 1);
  const CholFactor f = factorize(a);
  CHECK(f.solve(Eigen::VectorXd::Zero(30)).cwiseAbs().maxCoeff() == 0.0);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  Eigen::VectorXd b(30);
  for (auto& v : b) v = normal(rng);
  const Eigen::VectorXd x = f.solve(b);
  const Eigen::VectorXd dense = a.dense().llt().solve(b);
  CHECK((x - dense).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((a.multiply(x) - b).cwiseAbs().maxCoeff() <= 1e-8 * b.cwiseAbs().maxCoeff());
  CHECK((solve(f, b) - x).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(f.solve(Eigen::VectorXd::Zero(29)), DimensionMismatch);
}

TEST_CASE("half solves compose to the full solve") {
  const SparseSym a = identity_plus_precision(4, 6, 1.0);
  const CholFactor f = factorize(a);
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(24, -1.0, 1.0);
  CHECK((f.backward(f.forward(b)) - f.solve(b)).cwiseAbs().maxCoeff() < 1e-14);
  Eigen::MatrixXd block(24, 2);
  block.col(0) = b;
  block.col(1) = 2.0 * b;
  f.forward_in_place(block);
  CHECK((block.col(0) - f.forward(b)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((block.col(1) - 2.0 * f.forward(b)).cwiseAbs().maxCoeff() < 1e-14);
  // |L^{-1} P b|^2 = b^T A^{-1} b.
  CHECK(f.forward(b).squaredNorm() == doctest::Approx(b.dot(f.solve(b))).epsilon(1e-12));
}

TEST_CASE("log-determinant") {
  const SparseSym diag(3, {{0, 0, 2.0}, {1, 1, 2.0}, {2, 2, 2.0}});
  CHECK(logdet(factorize(diag)) == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-15));

  const SparseSym a = identity_plus_precision(6, 6, 1.0);
  CHECK(std::abs(factorize(a).logdet() - oracle::dense_logdet(a.dense())) <= 1e-9);
}

TEST_CASE("symbolic analysis is reused for equal patterns") {
  SparseSym a = identity_plus_precision(7, 5, 1.0);
  const auto analysis = analyze(a);
  const CholFactor f1 = factorize(a, analysis);
  const double c = 3.7;
  for (auto& v : a.values()) v *= c;
  const std::uint64_t before = factorization_count();
  const CholFactor f2 = factorize(a, analysis);
  CHECK(factorization_count() == before + 1);
  CHECK(f2.analysis() == analysis);
  CHECK(std::abs(f2.logdet() - (f1.logdet() + 35 * std::log(c))) <= 1e-9);

  const SparseSym other = identity_plus_precision(5, 7, 1.0);
  CHECK_THROWS_AS(factorize(other, analysis), InvalidArgument);
}

TEST_CASE("solutions do not depend on the ordering") {
  const SparseSym a = identity_plus_precision(8, 9, 2.0);
  const CholFactor natural = factorize(a, analyze(a, Ordering::kNatural));
  const CholFactor amd = factorize(a, analyze(a, Ordering::kApproximateMinimumDegree));
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(72, 0.0, 5.0);
  CHECK((natural.solve(b) - amd.solve(b)).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(std::abs(natural.logdet() - amd.logdet()) <= 1e-9);
  CHECK(amd.analysis()->factor_nonzeros() <= natural.analysis()->factor_nonzeros());
  for (int i = 0; i < 72; ++i) CHECK(natural.analysis()->order()[static_cast<std::size_t>(i)] == i);
}

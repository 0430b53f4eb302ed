#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Core>

namespace mixwarp {

struct Triplet {
  int row;
  int col;
  double value;
};

/// Symmetric sparse matrix holding its lower triangle in compressed-column
/// form. Every diagonal entry is structurally present.
class SparseSym {
 public:
  // Entries with row < col are mirrored into the lower triangle; duplicates add.
  SparseSym(int n, const std::vector<Triplet>& entries);

  int size() const { return n_; }
  std::size_t nonzeros() const { return row_index_.size(); }
  const std::vector<int>& col_ptr() const { return col_ptr_; }
  const std::vector<int>& row_index() const { return row_index_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd dense() const;

  bool same_pattern(const SparseSym& other) const {
    return n_ == other.n_ && col_ptr_ == other.col_ptr_ && row_index_ == other.row_index_;
  }

 private:
  int n_;
  std::vector<int> col_ptr_;
  std::vector<int> row_index_;
  std::vector<double> values_;
};

class CholFactor;

enum class Ordering { kNatural, kApproximateMinimumDegree };

/// Ordering, elimination tree and factor column layout for one sparsity
/// pattern. Reusable for any matrix with that pattern.
class SymbolicAnalysis {
 public:
  SymbolicAnalysis(const SparseSym& pattern, Ordering ordering);

  int size() const { return n_; }
  // order[k] is the original index eliminated at step k.
  const std::vector<int>& order() const { return order_; }
  const std::vector<int>& inverse_order() const { return inverse_order_; }
  std::size_t factor_nonzeros() const { return static_cast<std::size_t>(factor_col_ptr_.back()); }
  bool matches(const SparseSym& a) const { return pattern_.same_pattern(a); }

 private:
  friend class CholFactor;
  friend CholFactor factorize(const SparseSym&, std::shared_ptr<const SymbolicAnalysis>);

  int n_;
  SparseSym pattern_;
  std::vector<int> order_;
  std::vector<int> inverse_order_;
  // Upper triangle of the permuted matrix, by column.
  std::vector<int> upper_col_ptr_;
  std::vector<int> upper_row_index_;
  std::vector<int> upper_source_;  // position of each entry in the input values
  std::vector<int> parent_;
  std::vector<int> factor_col_ptr_;
};

/// P A P^T = L L^T with L stored by columns, diagonal first in each column.
class CholFactor {
 public:
  int size() const { return analysis_->n_; }
  const std::shared_ptr<const SymbolicAnalysis>& analysis() const { return analysis_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  // L^{-1} P b; columns of a matrix are transformed independently.
  Eigen::VectorXd forward(const Eigen::VectorXd& b) const;
  void forward_in_place(Eigen::Ref<Eigen::MatrixXd> b) const;
  // P^T L^{-T} y.
  Eigen::VectorXd backward(const Eigen::VectorXd& y) const;

  double logdet() const;
  Eigen::MatrixXd lower_dense() const;

 private:
  friend CholFactor factorize(const SparseSym&, std::shared_ptr<const SymbolicAnalysis>);

  explicit CholFactor(std::shared_ptr<const SymbolicAnalysis> analysis);

  void forward_permuted(double* y) const;
  void backward_permuted(double* y) const;

  std::shared_ptr<const SymbolicAnalysis> analysis_;
  std::vector<int> row_index_;
  std::vector<double> values_;
};

std::shared_ptr<const SymbolicAnalysis> analyze(const SparseSym& a,
                                                Ordering ordering = Ordering::kApproximateMinimumDegree);

/// Numeric factorization. A null analysis triggers a fresh symbolic phase.
/// Throws NotPositiveDefinite with the failing original index, or
/// InvalidArgument when the analysis belongs to a different pattern.
CholFactor factorize(const SparseSym& a, std::shared_ptr<const SymbolicAnalysis> analysis = nullptr);

Eigen::VectorXd solve(const CholFactor& f, const Eigen::VectorXd& b);
double logdet(const CholFactor& f);

/// Process-wide count of numeric factorizations performed.
std::uint64_t factorization_count();

}  // namespace mixwarp

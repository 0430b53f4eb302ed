#include "mixwarp/sparse_cholesky.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>

#include "mixwarp/errors.hpp"

namespace mixwarp {

namespace {

std::atomic<std::uint64_t> g_factorizations{0};

std::vector<int> amd_order(const SparseSym& a) {
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(2 * a.nonzeros());
  for (int j = 0; j < a.size(); ++j) {
    for (int p = a.col_ptr()[j]; p < a.col_ptr()[j + 1]; ++p) {
      const int i = a.row_index()[p];
      entries.emplace_back(i, j, 1.0);
      if (i != j) entries.emplace_back(j, i, 1.0);
    }
  }
  Eigen::SparseMatrix<double> full(a.size(), a.size());
  full.setFromTriplets(entries.begin(), entries.end());
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm;
  Eigen::AMDOrdering<int> amd;
  amd(full, perm);
  // The AMD permutation lists, for each new position, the original index.
  return {perm.indices().data(), perm.indices().data() + perm.indices().size()};
}

// Pattern of row k of L (excluding the diagonal) in topological order, written
// to stack[top..n). Marks visited nodes in `mark` with k.
int elimination_reach(int k, const std::vector<int>& col_ptr, const std::vector<int>& row_index,
                      const std::vector<int>& parent, std::vector<int>& mark, std::vector<int>& stack) {
  const int n = static_cast<int>(parent.size());
  int top = n;
  mark[k] = k;
  for (int p = col_ptr[k]; p < col_ptr[k + 1]; ++p) {
    int i = row_index[p];
    int len = 0;
    for (; mark[i] != k; i = parent[i]) {
      stack[len++] = i;
      mark[i] = k;
    }
    while (len > 0) stack[--top] = stack[--len];
  }
  return top;
}

}  // namespace

SparseSym::SparseSym(int n, const std::vector<Triplet>& entries) : n_(n) {
  if (n < 1) throw InvalidDimension("sparse matrix dimension must be positive");
  std::vector<Triplet> lower;
  lower.reserve(entries.size() + static_cast<std::size_t>(n));
  for (const auto& e : entries) {
    if (e.row < 0 || e.col < 0 || e.row >= n || e.col >= n) {
      throw InvalidArgument("sparse entry out of range");
    }
    lower.push_back(e.row >= e.col ? e : Triplet{e.col, e.row, e.value});
  }
  for (int i = 0; i < n; ++i) lower.push_back({i, i, 0.0});
  std::sort(lower.begin(), lower.end(), [](const Triplet& x, const Triplet& y) {
    return x.col != y.col ? x.col < y.col : x.row < y.row;
  });
  col_ptr_.assign(static_cast<std::size_t>(n) + 1, 0);
  const Triplet* prev = nullptr;
  for (const auto& e : lower) {
    if (prev && prev->row == e.row && prev->col == e.col) {
      values_.back() += e.value;
    } else {
      row_index_.push_back(e.row);
      values_.push_back(e.value);
      ++col_ptr_[e.col + 1];
    }
    prev = &e;
  }
  std::partial_sum(col_ptr_.begin(), col_ptr_.end(), col_ptr_.begin());
}

Eigen::VectorXd SparseSym::multiply(const Eigen::VectorXd& x) const {
  if (x.size() != n_) throw DimensionMismatch("vector length does not match matrix dimension");
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n_);
  for (int j = 0; j < n_; ++j) {
    for (int p = col_ptr_[j]; p < col_ptr_[j + 1]; ++p) {
      const int i = row_index_[p];
      y[i] += values_[p] * x[j];
      if (i != j) y[j] += values_[p] * x[i];
    }
  }
  return y;
}

Eigen::MatrixXd SparseSym::dense() const {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n_, n_);
  for (int j = 0; j < n_; ++j) {
    for (int p = col_ptr_[j]; p < col_ptr_[j + 1]; ++p) {
      d(row_index_[p], j) = values_[p];
      d(j, row_index_[p]) = values_[p];
    }
  }
  return d;
}

SymbolicAnalysis::SymbolicAnalysis(const SparseSym& pattern, Ordering ordering)
    : n_(pattern.size()), pattern_(pattern) {
  if (ordering == Ordering::kApproximateMinimumDegree) {
    order_ = amd_order(pattern);
  } else {
    order_.resize(static_cast<std::size_t>(n_));
    std::iota(order_.begin(), order_.end(), 0);
  }
  inverse_order_.assign(static_cast<std::size_t>(n_), 0);
  for (int k = 0; k < n_; ++k) inverse_order_[order_[k]] = k;

  // Upper triangle of P A P^T by column, remembering where each value comes from.
  const auto& cp = pattern.col_ptr();
  const auto& ri = pattern.row_index();
  upper_col_ptr_.assign(static_cast<std::size_t>(n_) + 1, 0);
  for (int j = 0; j < n_; ++j) {
    for (int p = cp[j]; p < cp[j + 1]; ++p) {
      ++upper_col_ptr_[std::max(inverse_order_[ri[p]], inverse_order_[j]) + 1];
    }
  }
  std::partial_sum(upper_col_ptr_.begin(), upper_col_ptr_.end(), upper_col_ptr_.begin());
  upper_row_index_.resize(pattern.nonzeros());
  upper_source_.resize(pattern.nonzeros());
  std::vector<int> next(upper_col_ptr_.begin(), upper_col_ptr_.end() - 1);
  for (int j = 0; j < n_; ++j) {
    for (int p = cp[j]; p < cp[j + 1]; ++p) {
      const int a = inverse_order_[ri[p]];
      const int b = inverse_order_[j];
      const int q = next[std::max(a, b)]++;
      upper_row_index_[q] = std::min(a, b);
      upper_source_[q] = p;
    }
  }

  // Elimination tree.
  parent_.assign(static_cast<std::size_t>(n_), -1);
  std::vector<int> ancestor(static_cast<std::size_t>(n_), -1);
  for (int k = 0; k < n_; ++k) {
    for (int p = upper_col_ptr_[k]; p < upper_col_ptr_[k + 1]; ++p) {
      int i = upper_row_index_[p];
      while (i != -1 && i < k) {
        const int up = ancestor[i];
        ancestor[i] = k;
        if (up == -1) parent_[i] = k;
        i = up;
      }
    }
  }

  // Column counts from the row patterns of L.
  std::vector<int> counts(static_cast<std::size_t>(n_), 1);
  std::vector<int> mark(static_cast<std::size_t>(n_), -1);
  std::vector<int> stack(static_cast<std::size_t>(n_));
  for (int k = 0; k < n_; ++k) {
    const int top = elimination_reach(k, upper_col_ptr_, upper_row_index_, parent_, mark, stack);
    for (int t = top; t < n_; ++t) ++counts[stack[t]];
  }
  factor_col_ptr_.assign(static_cast<std::size_t>(n_) + 1, 0);
  std::partial_sum(counts.begin(), counts.end(), factor_col_ptr_.begin() + 1);
}

std::shared_ptr<const SymbolicAnalysis> analyze(const SparseSym& a, Ordering ordering) {
  return std::make_shared<const SymbolicAnalysis>(a, ordering);
}

CholFactor::CholFactor(std::shared_ptr<const SymbolicAnalysis> analysis)
    : analysis_(std::move(analysis)),
      row_index_(analysis_->factor_nonzeros()),
      values_(analysis_->factor_nonzeros()) {}

CholFactor factorize(const SparseSym& a, std::shared_ptr<const SymbolicAnalysis> analysis) {
  if (!analysis) {
    analysis = analyze(a);
  } else if (!analysis->matches(a)) {
    throw InvalidArgument("symbolic analysis was computed for a different sparsity pattern");
  }
  const SymbolicAnalysis& s = *analysis;
  const int n = s.n_;
  CholFactor f(analysis);
  const auto& Lp = s.factor_col_ptr_;
  auto& Li = f.row_index_;
  auto& Lx = f.values_;
  std::vector<int> fill(Lp.begin(), Lp.end() - 1);
  std::vector<int> mark(static_cast<std::size_t>(n), -1);
  std::vector<int> stack(static_cast<std::size_t>(n));
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  const auto& av = a.values();

  for (int k = 0; k < n; ++k) {
    const int top = elimination_reach(k, s.upper_col_ptr_, s.upper_row_index_, s.parent_, mark, stack);
    x[k] = 0.0;
    for (int p = s.upper_col_ptr_[k]; p < s.upper_col_ptr_[k + 1]; ++p) {
      x[s.upper_row_index_[p]] += av[s.upper_source_[p]];
    }
    double d = x[k];
    x[k] = 0.0;
    for (int t = top; t < n; ++t) {
      const int i = stack[t];
      const double lki = x[i] / Lx[Lp[i]];
      x[i] = 0.0;
      for (int p = Lp[i] + 1; p < fill[i]; ++p) x[Li[p]] -= Lx[p] * lki;
      d -= lki * lki;
      const int p = fill[i]++;
      Li[p] = k;
      Lx[p] = lki;
    }
    if (!(d > 0.0)) {
      throw NotPositiveDefinite(static_cast<std::size_t>(s.order_[k]),
                                "matrix is not positive definite: pivot " + std::to_string(d) +
                                    " at row " + std::to_string(s.order_[k]));
    }
    const int p = fill[k]++;
    Li[p] = k;
    Lx[p] = std::sqrt(d);
  }
  g_factorizations.fetch_add(1, std::memory_order_relaxed);
  return f;
}

void CholFactor::forward_permuted(double* y) const {
  const auto& Lp = analysis_->factor_col_ptr_;
  const int n = analysis_->n_;
  for (int j = 0; j < n; ++j) {
    if (y[j] == 0.0) continue;
    y[j] /= values_[Lp[j]];
    const double yj = y[j];
    for (int p = Lp[j] + 1; p < Lp[j + 1]; ++p) y[row_index_[p]] -= values_[p] * yj;
  }
}

void CholFactor::backward_permuted(double* y) const {
  const auto& Lp = analysis_->factor_col_ptr_;
  for (int j = analysis_->n_ - 1; j >= 0; --j) {
    double v = y[j];
    for (int p = Lp[j] + 1; p < Lp[j + 1]; ++p) v -= values_[p] * y[row_index_[p]];
    y[j] = v / values_[Lp[j]];
  }
}

Eigen::VectorXd CholFactor::forward(const Eigen::VectorXd& b) const {
  if (b.size() != size()) throw DimensionMismatch("right-hand side length does not match factor");
  const auto& order = analysis_->order_;
  Eigen::VectorXd y(size());
  for (int k = 0; k < size(); ++k) y[k] = b[order[k]];
  forward_permuted(y.data());
  return y;
}

void CholFactor::forward_in_place(Eigen::Ref<Eigen::MatrixXd> b) const {
  if (b.rows() != size()) throw DimensionMismatch("right-hand side rows do not match factor");
  const auto& order = analysis_->order_;
  Eigen::VectorXd y(size());
  for (Eigen::Index c = 0; c < b.cols(); ++c) {
    for (int k = 0; k < size(); ++k) y[k] = b(order[k], c);
    forward_permuted(y.data());
    b.col(c) = y;
  }
}

Eigen::VectorXd CholFactor::backward(const Eigen::VectorXd& y) const {
  if (y.size() != size()) throw DimensionMismatch("right-hand side length does not match factor");
  Eigen::VectorXd z = y;
  backward_permuted(z.data());
  Eigen::VectorXd x(size());
  const auto& order = analysis_->order_;
  for (int k = 0; k < size(); ++k) x[order[k]] = z[k];
  return x;
}

Eigen::VectorXd CholFactor::solve(const Eigen::VectorXd& b) const { return backward(forward(b)); }

double CholFactor::logdet() const {
  const auto& Lp = analysis_->factor_col_ptr_;
  double sum = 0.0;
  for (int j = 0; j < size(); ++j) sum += std::log(values_[Lp[j]]);
  return 2.0 * sum;
}

Eigen::MatrixXd CholFactor::lower_dense() const {
  const auto& Lp = analysis_->factor_col_ptr_;
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(size(), size());
  for (int j = 0; j < size(); ++j) {
    for (int p = Lp[j]; p < Lp[j + 1]; ++p) L(row_index_[p], j) = values_[p];
  }
  return L;
}

Eigen::VectorXd solve(const CholFactor& f, const Eigen::VectorXd& b) { return f.solve(b); }

double logdet(const CholFactor& f) { return f.logdet(); }

std::uint64_t factorization_count() { return g_factorizations.load(std::memory_order_relaxed); }

}  // namespace mixwarp

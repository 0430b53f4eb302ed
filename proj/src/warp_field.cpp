#include "mixwarp/warp_field.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mixwarp/errors.hpp"

namespace mixwarp {

namespace {

constexpr int kInverseMaxIterations = 20;
constexpr double kInverseTolerance = 1e-8;
constexpr double kAnchorSnap = 1e-10;

struct ExtendedAxis {
  // Extended indices 0..n+1 where 0 and n+1 are the tied-down boundary.
  int lo = 0;
  double frac = 0.0;
};

ExtendedAxis locate(double coord, int n) {
  double u = std::clamp(coord, 0.0, 1.0) * (n + 1);
  const double r = std::round(u);
  if (std::abs(u - r) < kAnchorSnap) u = r;
  const int lo = std::min(static_cast<int>(std::floor(u)), n);
  return {lo, u - lo};
}

}  // namespace

AnchorGrid::AnchorGrid(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 1 || cols < 1) {
    throw InvalidDimension("anchor grid needs at least 1x1 anchors, got " + std::to_string(rows) +
                           "x" + std::to_string(cols));
  }
}

DisplacementGrid::DisplacementGrid(AnchorGrid grid)
    : grid_(grid), w_(Eigen::VectorXd::Zero(grid.dof())) {}

DisplacementGrid::DisplacementGrid(AnchorGrid grid, Eigen::VectorXd w)
    : grid_(grid), w_(std::move(w)) {
  if (w_.size() != grid_.dof()) {
    throw DimensionMismatch("displacement vector has length " + std::to_string(w_.size()) +
                            ", expected " + std::to_string(grid_.dof()));
  }
}

double WarpBasis::total() const {
  double sum = 0.0;
  for (const auto& b : *this) sum += b.weight;
  return sum;
}

WarpBasis warp_basis(const AnchorGrid& grid, Point p) {
  WarpBasis basis;
  if (!std::isfinite(p.s) || !std::isfinite(p.t)) return basis;
  const ExtendedAxis as = locate(p.s, grid.rows());
  const ExtendedAxis at = locate(p.t, grid.cols());
  const std::array<std::pair<int, double>, 2> ws{{{as.lo, 1.0 - as.frac}, {as.lo + 1, as.frac}}};
  const std::array<std::pair<int, double>, 2> wt{{{at.lo, 1.0 - at.frac}, {at.lo + 1, at.frac}}};
  for (const auto& [ej, wj] : ws) {
    if (ej < 1 || ej > grid.rows() || wj == 0.0) continue;
    for (const auto& [ek, wk] : wt) {
      if (ek < 1 || ek > grid.cols() || wk == 0.0) continue;
      basis.items[basis.count++] = {grid.index(ej - 1, ek - 1), wj * wk};
    }
  }
  return basis;
}

std::array<double, 2> displacement(const DisplacementGrid& w, Point p) {
  std::array<double, 2> d{0.0, 0.0};
  for (const auto& b : warp_basis(w.grid(), p)) {
    d[0] += b.weight * w.ds(b.anchor);
    d[1] += b.weight * w.dt(b.anchor);
  }
  return d;
}

Point eval_warp(const DisplacementGrid& w, Point p) {
  const auto d = displacement(w, p);
  return {p.s + d[0], p.t + d[1]};
}

InverseWarp inverse_warp(const DisplacementGrid& w, Point p) {
  Point u = p;
  for (int it = 1; it <= kInverseMaxIterations; ++it) {
    const auto d = displacement(w, u);
    const Point next{p.s - d[0], p.t - d[1]};
    const double step = std::max(std::abs(next.s - u.s), std::abs(next.t - u.t));
    u = next;
    if (step < kInverseTolerance) return {u, true, it};
  }
  return {u, false, kInverseMaxIterations};
}

Image resample(const Image& tmpl, const DisplacementGrid& w) {
  const Lattice& lat = tmpl.lattice();
  Image out(lat);
  for (int i = 0; i < lat.size(); ++i) out.values()[i] = interp_bilinear(tmpl, eval_warp(w, lat.node(i)));
  return out;
}

int count_folds(const DisplacementGrid& w) {
  const AnchorGrid& g = w.grid();
  const int nr = g.rows() + 2;
  const int nc = g.cols() + 2;
  // Warped positions of the extended anchor lattice (boundary nodes fixed).
  std::vector<Point> pos(static_cast<std::size_t>(nr * nc));
  for (int j = 0; j < nr; ++j) {
    for (int k = 0; k < nc; ++k) {
      Point p{static_cast<double>(j) / (nr - 1), static_cast<double>(k) / (nc - 1)};
      if (j > 0 && j < nr - 1 && k > 0 && k < nc - 1) {
        const int a = g.index(j - 1, k - 1);
        p.s += w.ds(a);
        p.t += w.dt(a);
      }
      pos[static_cast<std::size_t>(j * nc + k)] = p;
    }
  }
  auto at = [&](int j, int k) { return pos[static_cast<std::size_t>(j * nc + k)]; };
  int folds = 0;
  for (int j = 0; j + 1 < nr; ++j) {
    for (int k = 0; k + 1 < nc; ++k) {
      bool folded = false;
      for (int cj = 0; cj < 2 && !folded; ++cj) {
        for (int ck = 0; ck < 2 && !folded; ++ck) {
          // Edge vectors leaving this corner along s and t, oriented positively.
          const Point c = at(j + cj, k + ck);
          const Point es = at(j + 1 - cj, k + ck);
          const Point et = at(j + cj, k + 1 - ck);
          const double sgn_s = cj == 0 ? 1.0 : -1.0;
          const double sgn_t = ck == 0 ? 1.0 : -1.0;
          const double a11 = sgn_s * (es.s - c.s), a21 = sgn_s * (es.t - c.t);
          const double a12 = sgn_t * (et.s - c.s), a22 = sgn_t * (et.t - c.t);
          if (a11 * a22 - a12 * a21 <= 0.0) folded = true;
        }
      }
      folds += folded ? 1 : 0;
    }
  }
  return folds;
}

void write_displacements_csv(const DisplacementGrid& w, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "row,col,ds,dt\n";
  char line[128];
  const AnchorGrid& g = w.grid();
  for (int j = 0; j < g.rows(); ++j) {
    for (int k = 0; k < g.cols(); ++k) {
      const int a = g.index(j, k);
      std::snprintf(line, sizeof line, "%d,%d,%.17g,%.17g\n", j, k, w.ds(a), w.dt(a));
      out << line;
    }
  }
  if (!out) throw FormatError("failed writing " + path.string());
}

DisplacementGrid read_displacements_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "row,col,ds,dt") {
    throw FormatError("bad displacement CSV header in " + path.string());
  }
  struct Row {
    int j, k;
    double ds, dt;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Row r{};
    char extra = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf%c", &r.j, &r.k, &r.ds, &r.dt, &extra) != 4 ||
        !std::isfinite(r.ds) || !std::isfinite(r.dt)) {
      throw FormatError("malformed displacement CSV line in " + path.string() + ": " + line);
    }
    rows.push_back(r);
  }
  if (rows.empty()) throw FormatError("empty displacement CSV: " + path.string());
  const int nr = rows.back().j + 1;
  const int nc = rows.back().k + 1;
  if (nr < 1 || nc < 1 || static_cast<int>(rows.size()) != nr * nc) {
    throw FormatError("displacement CSV does not describe a full anchor grid: " + path.string());
  }
  DisplacementGrid w{AnchorGrid(nr, nc)};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int expected_j = static_cast<int>(i) / nc;
    const int expected_k = static_cast<int>(i) % nc;
    if (rows[i].j != expected_j || rows[i].k != expected_k) {
      throw FormatError("displacement CSV rows out of row-major order in " + path.string());
    }
    w.ds(static_cast<int>(i)) = rows[i].ds;
    w.dt(static_cast<int>(i)) = rows[i].dt;
  }
  return w;
}

}  // namespace mixwarp

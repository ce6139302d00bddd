#include "xseg/random_walker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace xseg {

namespace {

// Per-voxel weights of the +x, +y, +z edges (zero past the border).
struct EdgeWeights {
  std::vector<double> wx, wy, wz;
};

// Intensities are min-max normalized in double; a constant volume maps to 0.
EdgeWeights grid_weights(const Volume& v, const RwConfig& cfg) {
  const Dims& d = v.dims();
  const auto [lo_it, hi_it] = std::minmax_element(v.data().begin(), v.data().end());
  const double lo = *lo_it, range = double(*hi_it) - lo;
  std::vector<double> z(d.count(), 0.0);
  if (range > 0.0)
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = (double(v[i]) - lo) / range;

  EdgeWeights w{std::vector<double>(d.count(), 0.0), std::vector<double>(d.count(), 0.0),
                std::vector<double>(d.count(), 0.0)};
  const std::size_t sy = static_cast<std::size_t>(d.nx);
  const std::size_t sz = sy * static_cast<std::size_t>(d.ny);
  for (int k = 0; k < d.nz; ++k)
    for (int j = 0; j < d.ny; ++j)
      for (int i = 0; i < d.nx; ++i) {
        const std::size_t at = d.linear(i, j, k);
        if (i + 1 < d.nx) w.wx[at] = edge_weight(z[at], z[at + 1], cfg.beta, cfg.weight_epsilon);
        if (j + 1 < d.ny) w.wy[at] = edge_weight(z[at], z[at + sy], cfg.beta, cfg.weight_epsilon);
        if (k + 1 < d.nz) w.wz[at] = edge_weight(z[at], z[at + sz], cfg.beta, cfg.weight_epsilon);
      }
  return w;
}

struct Neighbor {
  std::size_t index;
  double weight;
};

// Neighbors of voxel i in ascending linear index: -z, -y, -x, +x, +y, +z.
template <class Fn>
void for_each_neighbor(const Dims& d, const EdgeWeights& w, int x, int y, int z, Fn&& fn) {
  const std::size_t i = d.linear(x, y, z);
  const std::size_t sy = static_cast<std::size_t>(d.nx);
  const std::size_t sz = sy * static_cast<std::size_t>(d.ny);
  if (z > 0) fn(Neighbor{i - sz, w.wz[i - sz]});
  if (y > 0) fn(Neighbor{i - sy, w.wy[i - sy]});
  if (x > 0) fn(Neighbor{i - 1, w.wx[i - 1]});
  if (x + 1 < d.nx) fn(Neighbor{i + 1, w.wx[i]});
  if (y + 1 < d.ny) fn(Neighbor{i + sy, w.wy[i]});
  if (z + 1 < d.nz) fn(Neighbor{i + sz, w.wz[i]});
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

void RwConfig::validate() const {
  if (!(beta >= 0.0)) throw DataError("beta must be non-negative");
  if (!(cg_tol > 0.0)) throw DataError("cg_tol must be positive");
  if (!(weight_epsilon > 0.0)) throw DataError("weight_epsilon must be positive");
  if (cg_max_iter < 1) throw DataError("cg_max_iter must be at least 1");
}

void SparseMatrix::multiply(std::span<const double> x, std::span<double> y) const {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t k = row_start[r]; k < row_start[r + 1]; ++k) acc += values[k] * x[columns[k]];
    y[r] = acc;
  }
}

double SparseMatrix::diagonal(std::size_t row) const {
  for (std::size_t k = row_start[row]; k < row_start[row + 1]; ++k)
    if (columns[k] == row) return values[k];
  return 0.0;
}

SparseMatrix assemble_laplacian(const Volume& v, const RwConfig& cfg) {
  cfg.validate();
  const Dims& d = v.dims();
  const EdgeWeights w = grid_weights(v, cfg);
  SparseMatrix m;
  m.rows = d.count();
  m.row_start.reserve(m.rows + 1);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const std::size_t i = d.linear(x, y, z);
        std::vector<Neighbor> nbrs;
        for_each_neighbor(d, w, x, y, z, [&](Neighbor n) { nbrs.push_back(n); });
        double degree = 0.0;
        for (const auto& n : nbrs) degree += n.weight;
        bool diagonal_written = false;
        for (const auto& n : nbrs) {
          if (!diagonal_written && n.index > i) {
            m.columns.push_back(i);
            m.values.push_back(degree);
            diagonal_written = true;
          }
          m.columns.push_back(n.index);
          m.values.push_back(-n.weight);
        }
        if (!diagonal_written) {
          m.columns.push_back(i);
          m.values.push_back(degree);
        }
        m.row_start.push_back(m.columns.size());
      }
  return m;
}

CgReport conjugate_gradient(const SparseMatrix& a, std::span<const double> b, std::span<double> x, double tol,
                            int max_iter) {
  const std::size_t n = a.rows;
  std::vector<double> inv_diag(n), r(n), z(n), p(n), ap(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dii = a.diagonal(i);
    if (!(dii > 0.0)) throw NumericalError("conjugate_gradient: non-positive diagonal");
    inv_diag[i] = 1.0 / dii;
  }
  // residuals are measured after Jacobi scaling, so rows of weakly coupled
  // voxels count as much as the rest
  double b_norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) b_norm += (inv_diag[i] * b[i]) * (inv_diag[i] * b[i]);
  b_norm = std::sqrt(b_norm);
  if (b_norm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    return {0, 0.0};
  }
  a.multiply(x, ap);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - ap[i];
  for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
  double residual = std::sqrt(dot(z, z)) / b_norm;
  if (residual <= tol) return {0, residual};
  p = z;
  double rz = dot(r, z);

  for (int it = 1; it <= max_iter; ++it) {
    a.multiply(p, ap);
    const double alpha = rz / dot(p, ap);
    double zz = 0.0, rz_next = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
      z[i] = inv_diag[i] * r[i];
      zz += z[i] * z[i];
      rz_next += r[i] * z[i];
    }
    residual = std::sqrt(zz) / b_norm;
    if (!std::isfinite(residual)) throw NumericalError("conjugate_gradient: residual is not finite");
    if (residual <= tol) return {it, residual};
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw ConvergenceError("conjugate gradient did not converge in " + std::to_string(max_iter) +
                             " iterations (relative residual " + std::to_string(residual) + ")",
                         residual, max_iter);
}

ProbabilityMap random_walker(const Volume& v, const SeedMap& seeds, const RwConfig& cfg, CgReport* report) {
  cfg.validate();
  if (!v.same_grid(seeds)) throw DataError("random_walker: seed map does not match volume");
  const Dims& d = v.dims();
  std::size_t n_fg = 0, n_bg = 0;
  constexpr std::size_t kSeeded = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> unknown(d.count(), kSeeded);
  std::size_t n_unknown = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    switch (seeds[i]) {
      case SeedLabel::Foreground: ++n_fg; break;
      case SeedLabel::Background: ++n_bg; break;
      case SeedLabel::Unlabeled: unknown[i] = n_unknown++; break;
    }
  }
  if (n_fg == 0) throw DataError("random_walker: no foreground seeds");
  if (n_bg == 0) throw DataError("random_walker: no background seeds");

  ProbabilityMap out(d, v.spacing(), 0.0f);
  for (std::size_t i = 0; i < seeds.size(); ++i)
    if (seeds[i] == SeedLabel::Foreground) out[i] = 1.0f;
  if (report) *report = {};
  if (n_unknown == 0) return out;

  const EdgeWeights w = grid_weights(v, cfg);
  SparseMatrix lu;
  lu.rows = n_unknown;
  lu.row_start.reserve(n_unknown + 1);
  lu.columns.reserve(n_unknown * 7);
  lu.values.reserve(n_unknown * 7);
  std::vector<double> rhs(n_unknown, 0.0);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const std::size_t i = d.linear(x, y, z);
        const std::size_t row = unknown[i];
        if (row == kSeeded) continue;
        double degree = 0.0;
        bool diagonal_written = false;
        std::size_t diag_pos = 0;
        for_each_neighbor(d, w, x, y, z, [&](Neighbor n) {
          degree += n.weight;
          const std::size_t col = unknown[n.index];
          if (col == kSeeded) {
            if (seeds[n.index] == SeedLabel::Foreground) rhs[row] += n.weight;
            return;
          }
          if (!diagonal_written && col > row) {
            diag_pos = lu.columns.size();
            lu.columns.push_back(row);
            lu.values.push_back(0.0);
            diagonal_written = true;
          }
          lu.columns.push_back(col);
          lu.values.push_back(-n.weight);
        });
        if (!diagonal_written) {
          diag_pos = lu.columns.size();
          lu.columns.push_back(row);
          lu.values.push_back(0.0);
        }
        lu.values[diag_pos] = degree;
        lu.row_start.push_back(lu.columns.size());
      }

  std::vector<double> solution(n_unknown, 0.0);
  const CgReport cg = conjugate_gradient(lu, rhs, solution, cfg.cg_tol, cfg.cg_max_iter);
  if (report) *report = cg;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (unknown[i] == kSeeded) continue;
    out[i] = static_cast<float>(std::clamp(solution[unknown[i]], 0.0, 1.0));
  }
  return out;
}

Mask threshold(const ProbabilityMap& p, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DataError("threshold must lie in [0,1]");
  Mask out(p.dims(), p.spacing(), std::uint8_t{0});
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] >= t ? 1 : 0;
  return out;
}

}  // namespace xseg

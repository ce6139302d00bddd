#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "xseg/geodesic.hpp"
#include "xseg/volume.hpp"

namespace xseg {

struct RwConfig {
  double beta = 130.0;
  double cg_tol = 1e-6;  ///< Jacobi-scaled relative residual ||D^-1 r|| / ||D^-1 b||
  int cg_max_iter = 2000;
  double weight_epsilon = 1e-6;

  void validate() const;
};

/// exp(-beta (zj - zi)^2) + weight_epsilon.
inline double edge_weight(double zi, double zj, double beta, double weight_epsilon) {
  const double diff = zj - zi;
  return std::exp(-beta * diff * diff) + weight_epsilon;
}

/// Compressed sparse rows; columns ascending within each row.
struct SparseMatrix {
  std::size_t rows = 0;
  std::vector<std::size_t> row_start{0};
  std::vector<std::size_t> columns;
  std::vector<double> values;

  void multiply(std::span<const double> x, std::span<double> y) const;
  double diagonal(std::size_t row) const;
};

/// Graph Laplacian of the 6-connected grid over min-max normalized
/// intensities: off-diagonals -w_ij, diagonal d_i = sum of row weights in
/// column order.
SparseMatrix assemble_laplacian(const Volume& v, const RwConfig& cfg);

struct CgReport {
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradient for SPD `a`. `x` holds the
/// initial guess on entry. Throws ConvergenceError at the iteration cap.
CgReport conjugate_gradient(const SparseMatrix& a, std::span<const double> b, std::span<double> x, double tol,
                            int max_iter);

/// Foreground probability of every voxel: 1 on foreground seeds, 0 on
/// background seeds, harmonic in between (L_U x_U = -B^T m).
ProbabilityMap random_walker(const Volume& v, const SeedMap& seeds, const RwConfig& cfg,
                             CgReport* report = nullptr);

/// Voxel set iff p >= t. Requires t in [0,1].
Mask threshold(const ProbabilityMap& p, double t);

}  // namespace xseg

#pragma once

#include <cstdint>
#include <vector>

#include "xseg/points.hpp"
#include "xseg/volume.hpp"

namespace xseg {

enum class SeedLabel : std::uint8_t { Unlabeled = 0, Foreground = 1, Background = 2 };

struct SeedTag {};
/// Random-walker boundary conditions, one label per voxel.
using SeedMap = Grid<SeedLabel, SeedTag>;

/// 6-connected voxel chain from source to target.
struct VoxelPath {
  std::vector<Index3> voxels;
  /// Sum over voxels after the source of (cost + step_epsilon).
  double cost = 0.0;
};

inline constexpr double kStepEpsilon = 1e-3;

struct SeedConfig {
  int r_fg = 2;
  int r_bg = 30;
};

/// Central differences in physical units, one-sided on the border.
Volume gradient_magnitude(const Volume& v);

/// Dijkstra over the 6-neighborhood; entering voxel u costs cost[u] + eps.
/// Neighbors are relaxed in the order +x,-x,+y,-y,+z,-z and only a strictly
/// shorter distance replaces a parent.
VoxelPath shortest_path(const Volume& cost, const Index3& src, const Index3& dst,
                        double step_epsilon = kStepEpsilon);

/// Re-sums a path's cost against a field, independent of the search.
double path_cost(const Volume& cost, const std::vector<Index3>& voxels, double step_epsilon = kStepEpsilon);

/// Union of the three extreme-pair paths as a mask.
Mask scribble_paths(const Volume& v, const ExtremePointSet& pts);

/// Foreground = paths dilated by r_fg; background = complement of the paths
/// dilated by r_bg; foreground wins on overlap. `v` is normalized to [0,1]
/// before the gradient is taken. Throws DataError when no background is left.
SeedMap build_seed_map(const Volume& v, const ExtremePointSet& pts, const SeedConfig& cfg);

/// Debug dump as u8 (0 unlabeled, 1 foreground, 2 background).
void save_seed_map(const SeedMap& seeds, const std::filesystem::path& path);

}  // namespace xseg

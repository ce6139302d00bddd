#pragma once

#include <array>
#include <vector>

#include "xseg/volume.hpp"

namespace xseg {

/// Discrete ball: all integer offsets with dx^2+dy^2+dz^2 <= r^2.
class BallElement {
 public:
  explicit BallElement(int radius_vox);

  int radius() const { return radius_; }
  const std::vector<std::array<int, 3>>& offsets() const { return offsets_; }

 private:
  int radius_;
  std::vector<std::array<int, 3>> offsets_;
};

inline BallElement ball(int radius_vox) { return BallElement(radius_vox); }

/// Output voxel is set iff some in-bounds voxel within the ball is set.
Mask dilate(const Mask& m, const BallElement& e);

/// Output voxel is set iff every offset in the ball lands on a set voxel;
/// voxels outside the grid count as background.
Mask erode(const Mask& m, const BallElement& e);

Mask complement(const Mask& m);

/// Exact squared Euclidean distance (in voxels) from every voxel to the
/// nearest voxel with `m != 0`. Infinity when `m` is empty.
std::vector<double> squared_distance_to_foreground(const Mask& m);

}  // namespace xseg

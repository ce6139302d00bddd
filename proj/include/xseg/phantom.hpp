#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "xseg/volume.hpp"

namespace xseg {

/// Synthetic bright ellipsoid on a dark background with Gaussian noise.
struct PhantomParams {
  double radius_min = 12.0;  ///< voxels
  double radius_max = 24.0;
  double ratio_min = 0.7;  ///< per-axis semi-axis / radius
  double ratio_max = 1.3;
  double noise_sigma = 0.05;
  double inside = 1.0;
  double outside = 0.0;
  int margin = 24;  ///< voxels between the ellipsoid extent and the volume border
  int center_jitter = 2;
  Spacing spacing{1.0, 1.0, 1.0};
};

struct Phantom {
  Volume image;
  Mask truth;
  std::array<double, 3> center;     ///< voxel coordinates
  std::array<double, 3> semi_axes;  ///< voxels
};

/// Voxel p is inside iff sum(((p - center) / semi_axes)^2) <= 1.
Phantom make_phantom(std::uint64_t seed, const PhantomParams& params = {});

/// Case k of a set uses its own generator seeded from (seed, k).
std::vector<Phantom> make_phantom_set(int n_cases, std::uint64_t seed, const PhantomParams& params = {});

}  // namespace xseg

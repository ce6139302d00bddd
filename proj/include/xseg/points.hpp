#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "xseg/volume.hpp"

namespace xseg {

/// Which extreme a click represents, in the fixed prompt order.
enum class ExtremeSlot : int { XMin = 0, XMax, YMin, YMax, ZMin, ZMax };

inline constexpr std::array<const char*, 6> kSlotNames = {"x_min", "x_max", "y_min", "y_max", "z_min", "z_max"};

/// Six clicked surface voxels: one min/max pair per axis.
struct ExtremePointSet {
  std::array<Index3, 6> points;

  const Index3& operator[](ExtremeSlot s) const { return points[static_cast<int>(s)]; }
  Index3& operator[](ExtremeSlot s) { return points[static_cast<int>(s)]; }
  const Index3& min_point(int axis) const { return points[2 * axis]; }
  const Index3& max_point(int axis) const { return points[2 * axis + 1]; }

  /// Empty when valid, otherwise names the violated invariant.
  std::optional<std::string> violation(const Dims& dims) const;
  /// Throws DataError if `violation` reports anything.
  void validate(const Dims& dims) const;
  /// Same set expressed in the coordinates of `box`.
  ExtremePointSet shifted_into(const BoundingBox& box) const;

  friend bool operator==(const ExtremePointSet&, const ExtremePointSet&) = default;
};

/// Clicks collected so far; any slot may be missing.
struct PartialPointSet {
  std::array<std::optional<Index3>, 6> points;

  bool complete() const;
  std::optional<std::string> violation(const Dims& dims) const;
  ExtremePointSet to_complete() const;
};

struct PointChannelParams {
  double sigma_mm = 3.0;
};

/// Box around the points padded by `padding_mm` (converted to voxels per
/// axis, rounded), clamped to the volume.
BoundingBox bounding_box(const ExtremePointSet& pts, const Dims& dims, const Spacing& spacing, double padding_mm);
inline BoundingBox bounding_box(const ExtremePointSet& pts, const Volume& v, double padding_mm) {
  return bounding_box(pts, v.dims(), v.spacing(), padding_mm);
}

/// Max over the six points of exp(-d^2 / (2 sigma^2)), d in millimeters.
Volume point_channel(const Dims& dims, const Spacing& spacing, const ExtremePointSet& pts,
                     const PointChannelParams& params);

/// Machine clicks from a ground-truth mask. Exact extremes (ties to the
/// lowest linear index), then each is moved to a random surface voxel within
/// `jitter_mm`. Throws DataError on an empty mask.
ExtremePointSet simulate_extreme_points(const Mask& gt, double jitter_mm, std::uint64_t rng_seed);

// Points JSON: {"points": {"x_min": [x,y,z], ...}}
PartialPointSet parse_points_json(const std::string& text);
std::string points_to_json(const ExtremePointSet& pts);
ExtremePointSet load_points(const std::filesystem::path& path);
void save_points(const ExtremePointSet& pts, const std::filesystem::path& path);

}  // namespace xseg

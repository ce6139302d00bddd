#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xseg/error.hpp"

namespace xseg {

/// Integer voxel coordinate.
struct Index3 {
  int x = 0;
  int y = 0;
  int z = 0;

  int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  int& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend auto operator<=>(const Index3&, const Index3&) = default;
};

/// Voxel counts per axis. Linear layout is x-fastest, z-slowest.
struct Dims {
  int nx = 1;
  int ny = 1;
  int nz = 1;

  std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  std::size_t linear(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(nx) +
           static_cast<std::size_t>(x);
  }
  std::size_t linear(const Index3& p) const { return linear(p.x, p.y, p.z); }
  Index3 coord(std::size_t i) const {
    const auto sx = static_cast<std::size_t>(nx);
    const auto sxy = sx * static_cast<std::size_t>(ny);
    return {static_cast<int>(i % sx), static_cast<int>((i / sx) % static_cast<std::size_t>(ny)),
            static_cast<int>(i / sxy)};
  }
  bool contains(const Index3& p) const {
    return p.x >= 0 && p.y >= 0 && p.z >= 0 && p.x < nx && p.y < ny && p.z < nz;
  }
  int operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Millimeters per voxel along x, y, z.
using Spacing = std::array<double, 3>;

struct VolumeTag {};
struct MaskTag {};
struct ProbabilityTag {};

/// Dense 3D grid with physical spacing. The tag keeps intensities, masks and
/// probability maps from being mixed up at call sites.
template <class T, class Tag>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  Grid(Dims dims, Spacing spacing, T fill = T{})
      : dims_(dims), spacing_(spacing) {
    check_shape();
    data_.assign(dims_.count(), fill);
  }

  Grid(Dims dims, Spacing spacing, std::vector<T> data)
      : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    check_shape();
    if (data_.size() != dims_.count()) {
      throw DataError("size mismatch: " + std::to_string(data_.size()) + " values for " +
                      std::to_string(dims_.count()) + " voxels");
    }
  }

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(int x, int y, int z) { return data_[dims_.linear(x, y, z)]; }
  const T& operator()(int x, int y, int z) const { return data_[dims_.linear(x, y, z)]; }
  T& at(const Index3& p) { return data_[dims_.linear(p)]; }
  const T& at(const Index3& p) const { return data_[dims_.linear(p)]; }

  template <class U, class OtherTag>
  bool same_grid(const Grid<U, OtherTag>& other) const {
    return dims_ == other.dims() && spacing_ == other.spacing();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  void check_shape() const {
    if (dims_.nx < 1 || dims_.ny < 1 || dims_.nz < 1) throw DataError("dims must be positive");
    for (double s : spacing_) {
      if (!(s > 0.0)) throw DataError("spacing must be positive");
    }
  }

  Dims dims_{};
  Spacing spacing_{1.0, 1.0, 1.0};
  std::vector<T> data_ = std::vector<T>(1);
};

using Volume = Grid<float, VolumeTag>;
using Mask = Grid<std::uint8_t, MaskTag>;
using ProbabilityMap = Grid<float, ProbabilityTag>;

/// Inclusive voxel box.
struct BoundingBox {
  Index3 lo;
  Index3 hi;

  Dims dims() const { return {hi.x - lo.x + 1, hi.y - lo.y + 1, hi.z - lo.z + 1}; }
  bool contains(const Index3& p) const {
    return p.x >= lo.x && p.y >= lo.y && p.z >= lo.z && p.x <= hi.x && p.y <= hi.y && p.z <= hi.z;
  }
  static BoundingBox full(const Dims& d) { return {{0, 0, 0}, {d.nx - 1, d.ny - 1, d.nz - 1}}; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// --- file I/O -------------------------------------------------------------
// A volume is stored as `<name>.json` (header) plus `<name>.raw` (payload).
// `path` may name either file or the shared stem.

Volume load_volume(const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);
void save_volume(const Volume& v, const std::filesystem::path& path);
void save_mask(const Mask& m, const std::filesystem::path& path);
void save_probability(const ProbabilityMap& p, const std::filesystem::path& path);

/// Header fields of a stored volume, without reading the payload.
struct VolumeHeader {
  Dims dims;
  Spacing spacing;
  std::string dtype;
};
VolumeHeader read_header(const std::filesystem::path& path);

// --- grid operations ------------------------------------------------------

/// Resample to isotropic `target_mm` spacing by trilinear interpolation.
/// Output voxel i sits at physical position i*target; samples beyond the
/// last input voxel clamp to the border.
Volume resample_isotropic(const Volume& v, double target_mm);

/// Throws DataError unless `box` lies inside `dims` with lo <= hi.
void check_box(const BoundingBox& box, const Dims& dims);

template <class T, class Tag>
Grid<T, Tag> crop(const Grid<T, Tag>& g, const BoundingBox& box) {
  check_box(box, g.dims());
  const Dims out_dims = box.dims();
  std::vector<T> out;
  out.reserve(out_dims.count());
  for (int z = box.lo.z; z <= box.hi.z; ++z)
    for (int y = box.lo.y; y <= box.hi.y; ++y) {
      const std::size_t row = g.dims().linear(box.lo.x, y, z);
      out.insert(out.end(), g.data().begin() + static_cast<std::ptrdiff_t>(row),
                 g.data().begin() + static_cast<std::ptrdiff_t>(row + out_dims.nx));
    }
  return Grid<T, Tag>(out_dims, g.spacing(), std::move(out));
}

/// Writes `patch` into `target` with its first voxel at `offset`.
template <class T, class Tag>
void paste(Grid<T, Tag>& target, const Grid<T, Tag>& patch, const Index3& offset) {
  const Dims& pd = patch.dims();
  check_box({offset, {offset.x + pd.nx - 1, offset.y + pd.ny - 1, offset.z + pd.nz - 1}}, target.dims());
  for (int z = 0; z < pd.nz; ++z)
    for (int y = 0; y < pd.ny; ++y)
      for (int x = 0; x < pd.nx; ++x) target(offset.x + x, offset.y + y, offset.z + z) = patch(x, y, z);
}

/// Min-max rescale to [0,1]. A constant volume maps to all zeros.
Volume normalize_intensity(const Volume& v);

/// 2|a∩b| / (|a|+|b|); two empty masks score 1.
double dice_score(const Mask& a, const Mask& b);

std::size_t count_foreground(const Mask& m);

}  // namespace xseg

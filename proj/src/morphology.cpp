#include "xseg/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace xseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher). Reads n samples
// of f with stride, writes the 1D squared distance transform back in place.
// Sample values are integers below 2^53, so every result is exact.
void envelope_pass(double* f, std::size_t stride, int n, std::vector<double>& line, std::vector<int>& v,
                   std::vector<double>& zb) {
  line.resize(n);
  v.resize(n);
  zb.resize(n + 1);
  for (int q = 0; q < n; ++q) line[q] = f[q * stride];

  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (line[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      zb[0] = -kInf;
      zb[1] = kInf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((line[q] + double(q) * q) - (line[p] + double(p) * p)) / (2.0 * (q - p));
      if (s <= zb[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= zb[k]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      zb[0] = -kInf;
      zb[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    zb[k] = s;
    zb[k + 1] = kInf;
  }
  if (k < 0) return;  // no finite samples on this line

  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (zb[j + 1] < q) ++j;
    const double d = q - v[j];
    f[q * stride] = d * d + line[v[j]];
  }
}

}  // namespace

BallElement::BallElement(int radius_vox) : radius_(radius_vox) {
  if (radius_vox < 0) throw DataError("ball radius must be non-negative");
  const int r2 = radius_vox * radius_vox;
  for (int dz = -radius_vox; dz <= radius_vox; ++dz)
    for (int dy = -radius_vox; dy <= radius_vox; ++dy)
      for (int dx = -radius_vox; dx <= radius_vox; ++dx)
        if (dx * dx + dy * dy + dz * dz <= r2) offsets_.push_back({dx, dy, dz});
}

std::vector<double> squared_distance_to_foreground(const Mask& m) {
  const Dims& d = m.dims();
  std::vector<double> dist(d.count());
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = m[i] ? 0.0 : kInf;

  std::vector<double> line;
  std::vector<int> v;
  std::vector<double> zb;
  const std::size_t sx = 1;
  const std::size_t sy = static_cast<std::size_t>(d.nx);
  const std::size_t sz = sy * static_cast<std::size_t>(d.ny);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y) envelope_pass(&dist[d.linear(0, y, z)], sx, d.nx, line, v, zb);
  for (int z = 0; z < d.nz; ++z)
    for (int x = 0; x < d.nx; ++x) envelope_pass(&dist[d.linear(x, 0, z)], sy, d.ny, line, v, zb);
  for (int y = 0; y < d.ny; ++y)
    for (int x = 0; x < d.nx; ++x) envelope_pass(&dist[d.linear(x, y, 0)], sz, d.nz, line, v, zb);
  return dist;
}

Mask dilate(const Mask& m, const BallElement& e) {
  const double r2 = double(e.radius()) * e.radius();
  const auto dist = squared_distance_to_foreground(m);
  Mask out(m.dims(), m.spacing(), std::uint8_t{0});
  for (std::size_t i = 0; i < dist.size(); ++i) out[i] = dist[i] <= r2 ? 1 : 0;
  return out;
}

Mask erode(const Mask& m, const BallElement& e) {
  const Dims& d = m.dims();
  const double r2 = double(e.radius()) * e.radius();
  const auto dist = squared_distance_to_foreground(complement(m));
  Mask out(d, m.spacing(), std::uint8_t{0});
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const std::size_t i = d.linear(x, y, z);
        if (!m[i]) continue;
        // Nearest off-grid voxel is one axis step past the closest face.
        const int wall = std::min({x + 1, d.nx - x, y + 1, d.ny - y, z + 1, d.nz - z});
        const double nearest_bg = std::min(dist[i], double(wall) * wall);
        out[i] = nearest_bg > r2 ? 1 : 0;
      }
  return out;
}

Mask complement(const Mask& m) {
  Mask out(m.dims(), m.spacing(), std::uint8_t{0});
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] ? 0 : 1;
  return out;
}

}  // namespace xseg

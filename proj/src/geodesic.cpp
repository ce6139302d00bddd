#include "xseg/geodesic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "xseg/morphology.hpp"

namespace xseg {

namespace {

double axis_derivative(const Volume& v, int x, int y, int z, int axis) {
  const int n = v.dims()[axis];
  if (n < 2) return 0.0;
  Index3 p{x, y, z};
  const int c = p[axis];
  Index3 lo = p, hi = p;
  lo[axis] = std::max(c - 1, 0);
  hi[axis] = std::min(c + 1, n - 1);
  return (double(v.at(hi)) - double(v.at(lo))) / ((hi[axis] - lo[axis]) * v.spacing()[axis]);
}

struct QueueEntry {
  double dist;
  std::uint64_t order;
  std::size_t index;
  bool operator>(const QueueEntry& o) const { return dist != o.dist ? dist > o.dist : order > o.order; }
};

}  // namespace

Volume gradient_magnitude(const Volume& v) {
  const Dims& d = v.dims();
  Volume out(d, v.spacing(), 0.0f);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const double gx = axis_derivative(v, x, y, z, 0);
        const double gy = axis_derivative(v, x, y, z, 1);
        const double gz = axis_derivative(v, x, y, z, 2);
        out(x, y, z) = static_cast<float>(std::sqrt(gx * gx + gy * gy + gz * gz));
      }
  return out;
}

VoxelPath shortest_path(const Volume& cost, const Index3& src, const Index3& dst, double step_epsilon) {
  const Dims& d = cost.dims();
  if (!d.contains(src) || !d.contains(dst)) throw DataError("path endpoint outside volume");
  const std::size_t source = d.linear(src);
  const std::size_t target = d.linear(dst);
  if (source == target) return {{src}, 0.0};

  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<double> dist(d.count(), std::numeric_limits<double>::infinity());
  std::vector<std::size_t> parent(d.count(), kNone);
  std::vector<std::uint8_t> done(d.count(), 0);
  std::priority_queue<QueueEntry, std::vector<QueueEntry>, std::greater<>> queue;
  std::uint64_t order = 0;
  dist[source] = 0.0;
  queue.push({0.0, order++, source});

  static constexpr int kSteps[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  while (!queue.empty()) {
    const QueueEntry top = queue.top();
    queue.pop();
    if (done[top.index]) continue;
    done[top.index] = 1;
    if (top.index == target) break;
    const Index3 p = d.coord(top.index);
    for (const auto& s : kSteps) {
      const Index3 q{p.x + s[0], p.y + s[1], p.z + s[2]};
      if (!d.contains(q)) continue;
      const std::size_t qi = d.linear(q);
      if (done[qi]) continue;
      const double candidate = dist[top.index] + (double(cost[qi]) + step_epsilon);
      if (candidate < dist[qi]) {
        dist[qi] = candidate;
        parent[qi] = top.index;
        queue.push({candidate, order++, qi});
      }
    }
  }

  VoxelPath path;
  path.cost = dist[target];
  for (std::size_t at = target; at != kNone; at = parent[at]) path.voxels.push_back(d.coord(at));
  std::reverse(path.voxels.begin(), path.voxels.end());
  return path;
}

double path_cost(const Volume& cost, const std::vector<Index3>& voxels, double step_epsilon) {
  double total = 0.0;
  for (std::size_t i = 1; i < voxels.size(); ++i) total = total + (double(cost.at(voxels[i])) + step_epsilon);
  return total;
}

Mask scribble_paths(const Volume& v, const ExtremePointSet& pts) {
  pts.validate(v.dims());
  const Volume cost = gradient_magnitude(normalize_intensity(v));
  Mask paths(v.dims(), v.spacing(), std::uint8_t{0});
  for (int axis = 0; axis < 3; ++axis) {
    const VoxelPath path = shortest_path(cost, pts.min_point(axis), pts.max_point(axis));
    for (const auto& p : path.voxels) paths.at(p) = 1;
  }
  return paths;
}

SeedMap build_seed_map(const Volume& v, const ExtremePointSet& pts, const SeedConfig& cfg) {
  const Mask paths = scribble_paths(v, pts);
  const Mask fg = dilate(paths, ball(cfg.r_fg));
  const Mask near = dilate(paths, ball(cfg.r_bg));
  SeedMap seeds(v.dims(), v.spacing(), SeedLabel::Unlabeled);
  std::size_t n_bg = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (fg[i]) {
      seeds[i] = SeedLabel::Foreground;
    } else if (!near[i]) {
      seeds[i] = SeedLabel::Background;
      ++n_bg;
    }
  }
  if (n_bg == 0) {
    throw DataError("no background seeds: the object fills the crop within r_bg=" + std::to_string(cfg.r_bg) +
                    " voxels of the scribbles; increase padding_mm or reduce r_bg");
  }
  return seeds;
}

void save_seed_map(const SeedMap& seeds, const std::filesystem::path& path) {
  Mask dump(seeds.dims(), seeds.spacing(), std::uint8_t{0});
  for (std::size_t i = 0; i < seeds.size(); ++i) dump[i] = static_cast<std::uint8_t>(seeds[i]);
  save_mask(dump, path);
}

}  // namespace xseg

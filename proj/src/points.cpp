#include "xseg/points.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace xseg {

using nlohmann::json;

namespace {

std::string describe(const Index3& p) {
  return "(" + std::to_string(p.x) + "," + std::to_string(p.y) + "," + std::to_string(p.z) + ")";
}

constexpr const char* kAxisNames = "xyz";

}  // namespace

std::optional<std::string> PartialPointSet::violation(const Dims& dims) const {
  for (int s = 0; s < 6; ++s) {
    if (points[s] && !dims.contains(*points[s]))
      return std::string(kSlotNames[s]) + " " + describe(*points[s]) + " lies outside the volume";
  }
  for (int axis = 0; axis < 3; ++axis) {
    const auto& lo = points[2 * axis];
    const auto& hi = points[2 * axis + 1];
    if (lo && hi && (*lo)[axis] > (*hi)[axis]) {
      return std::string(kSlotNames[2 * axis]) + "." + kAxisNames[axis] + " > " + kSlotNames[2 * axis + 1] + "." +
             kAxisNames[axis];
    }
  }
  return std::nullopt;
}

bool PartialPointSet::complete() const {
  return std::all_of(points.begin(), points.end(), [](const auto& p) { return p.has_value(); });
}

ExtremePointSet PartialPointSet::to_complete() const {
  if (!complete()) throw DataError("point set incomplete");
  ExtremePointSet out;
  for (int s = 0; s < 6; ++s) out.points[s] = *points[s];
  return out;
}

std::optional<std::string> ExtremePointSet::violation(const Dims& dims) const {
  PartialPointSet partial;
  for (int s = 0; s < 6; ++s) partial.points[s] = points[s];
  return partial.violation(dims);
}

void ExtremePointSet::validate(const Dims& dims) const {
  if (auto v = violation(dims)) throw DataError(*v);
}

ExtremePointSet ExtremePointSet::shifted_into(const BoundingBox& box) const {
  ExtremePointSet out = *this;
  for (auto& p : out.points) p = {p.x - box.lo.x, p.y - box.lo.y, p.z - box.lo.z};
  return out;
}

BoundingBox bounding_box(const ExtremePointSet& pts, const Dims& dims, const Spacing& spacing, double padding_mm) {
  if (!(padding_mm >= 0.0)) throw DataError("padding must be non-negative");
  pts.validate(dims);
  BoundingBox box{pts.points[0], pts.points[0]};
  for (const auto& p : pts.points)
    for (int a = 0; a < 3; ++a) {
      box.lo[a] = std::min(box.lo[a], p[a]);
      box.hi[a] = std::max(box.hi[a], p[a]);
    }
  for (int a = 0; a < 3; ++a) {
    const int pad = static_cast<int>(std::lround(padding_mm / spacing[a]));
    box.lo[a] = std::max(0, box.lo[a] - pad);
    box.hi[a] = std::min(dims[a] - 1, box.hi[a] + pad);
  }
  return box;
}

Volume point_channel(const Dims& dims, const Spacing& spacing, const ExtremePointSet& pts,
                     const PointChannelParams& params) {
  if (!(params.sigma_mm > 0.0)) throw DataError("sigma_mm must be positive");
  // Duplicate clicks contribute nothing under max.
  std::vector<Index3> unique(pts.points.begin(), pts.points.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

  const double inv_two_sigma2 = 1.0 / (2.0 * params.sigma_mm * params.sigma_mm);
  Volume out(dims, spacing, 0.0f);
  for (int z = 0; z < dims.nz; ++z)
    for (int y = 0; y < dims.ny; ++y)
      for (int x = 0; x < dims.nx; ++x) {
        double nearest = INFINITY;
        for (const auto& p : unique) {
          const double dx = (x - p.x) * spacing[0];
          const double dy = (y - p.y) * spacing[1];
          const double dz = (z - p.z) * spacing[2];
          nearest = std::min(nearest, dx * dx + dy * dy + dz * dz);
        }
        out(x, y, z) = static_cast<float>(std::exp(-nearest * inv_two_sigma2));
      }
  return out;
}

ExtremePointSet simulate_extreme_points(const Mask& gt, double jitter_mm, std::uint64_t rng_seed) {
  if (!(jitter_mm >= 0.0)) throw DataError("jitter must be non-negative");
  const Dims& d = gt.dims();
  ExtremePointSet pts;
  std::array<bool, 6> found{};
  // Linear scan visits voxels in increasing index, so strict comparisons keep
  // the lowest index among ties.
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt[i]) continue;
    const Index3 p = d.coord(i);
    for (int a = 0; a < 3; ++a) {
      if (!found[2 * a] || p[a] < pts.points[2 * a][a]) pts.points[2 * a] = p, found[2 * a] = true;
      if (!found[2 * a + 1] || p[a] > pts.points[2 * a + 1][a]) pts.points[2 * a + 1] = p, found[2 * a + 1] = true;
    }
  }
  if (!found[0]) throw DataError("ground-truth mask is empty");
  if (jitter_mm == 0.0) return pts;

  auto is_surface = [&](const Index3& p) {
    static constexpr int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (const auto& o : off) {
      const Index3 q{p.x + o[0], p.y + o[1], p.z + o[2]};
      if (!d.contains(q) || !gt.at(q)) return true;
    }
    return false;
  };

  std::mt19937_64 rng(rng_seed);
  const auto& sp = gt.spacing();
  for (auto& p : pts.points) {
    const int rx = static_cast<int>(std::floor(jitter_mm / sp[0]));
    const int ry = static_cast<int>(std::floor(jitter_mm / sp[1]));
    const int rz = static_cast<int>(std::floor(jitter_mm / sp[2]));
    std::vector<Index3> candidates;
    for (int z = p.z - rz; z <= p.z + rz; ++z)
      for (int y = p.y - ry; y <= p.y + ry; ++y)
        for (int x = p.x - rx; x <= p.x + rx; ++x) {
          const Index3 q{x, y, z};
          if (!d.contains(q) || !gt.at(q)) continue;
          const double dx = (x - p.x) * sp[0], dy = (y - p.y) * sp[1], dz = (z - p.z) * sp[2];
          if (dx * dx + dy * dy + dz * dz <= jitter_mm * jitter_mm && is_surface(q)) candidates.push_back(q);
        }
    // The exact extreme is itself a surface voxel, so candidates is nonempty.
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    p = candidates[pick(rng)];
  }
  for (int a = 0; a < 3; ++a) {
    if (pts.points[2 * a][a] > pts.points[2 * a + 1][a]) std::swap(pts.points[2 * a], pts.points[2 * a + 1]);
  }
  return pts;
}

PartialPointSet parse_points_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed points JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("points") || !j["points"].is_object())
    throw DataError("points JSON must hold a \"points\" object");
  PartialPointSet out;
  const auto& obj = j["points"];
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const auto slot = std::find(kSlotNames.begin(), kSlotNames.end(), it.key());
    if (slot == kSlotNames.end()) throw DataError("unknown point slot \"" + it.key() + "\"");
    const auto& v = it.value();
    if (!v.is_array() || v.size() != 3 || !std::all_of(v.begin(), v.end(), [](const json& c) { return c.is_number_integer(); }))
      throw DataError("point \"" + it.key() + "\" must be an array of three integers");
    out.points[slot - kSlotNames.begin()] = Index3{v[0].get<int>(), v[1].get<int>(), v[2].get<int>()};
  }
  return out;
}

std::string points_to_json(const ExtremePointSet& pts) {
  json obj = json::object();
  for (int s = 0; s < 6; ++s) obj[kSlotNames[s]] = {pts.points[s].x, pts.points[s].y, pts.points[s].z};
  return json{{"points", obj}}.dump();
}

ExtremePointSet load_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open points file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const PartialPointSet partial = parse_points_json(ss.str());
  if (!partial.complete()) throw DataError("points file " + path.string() + " does not hold all six extremes");
  return partial.to_complete();
}

void save_points(const ExtremePointSet& pts, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << points_to_json(pts) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace xseg

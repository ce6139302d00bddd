#include "xseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace xseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct StoragePaths {
  fs::path header;
  fs::path payload;
};

StoragePaths storage_paths(const fs::path& path) {
  fs::path stem = path;
  if (stem.extension() == ".json" || stem.extension() == ".raw") stem.replace_extension();
  fs::path header = stem;
  header += ".json";
  fs::path payload = stem;
  payload += ".raw";
  return {header, payload};
}

template <class T>
void to_little_endian_inplace(std::vector<T>& values) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (auto& v : values) {
      auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      v = std::bit_cast<T>(bytes);
    }
  }
}

VolumeHeader parse_header(const fs::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw DataError("cannot open " + header_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed header " + header_path.string() + ": " + e.what());
  }
  try {
    const auto dims = j.at("dims").get<std::array<int, 3>>();
    const auto spacing = j.at("spacing_mm").get<std::array<double, 3>>();
    VolumeHeader h{{dims[0], dims[1], dims[2]}, spacing, j.at("dtype").get<std::string>()};
    if (j.value("order", std::string("x-fastest")) != "x-fastest")
      throw DataError("unsupported voxel order in " + header_path.string());
    if (j.value("byte_order", std::string("little")) != "little")
      throw DataError("unsupported byte order in " + header_path.string());
    if (h.dtype != "f32" && h.dtype != "u8") throw DataError("unsupported dtype " + h.dtype);
    if (h.dims.nx < 1 || h.dims.ny < 1 || h.dims.nz < 1) throw DataError("dims must be positive");
    for (double s : h.spacing)
      if (!(s > 0.0)) throw DataError("spacing must be positive");
    return h;
  } catch (const json::exception& e) {
    throw DataError("bad header " + header_path.string() + ": " + e.what());
  }
}

template <class T>
std::vector<T> read_payload(const fs::path& payload_path, std::size_t count) {
  std::ifstream in(payload_path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open " + payload_path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * sizeof(T)) {
    throw DataError("size mismatch: " + payload_path.string() + " holds " + std::to_string(bytes) +
                    " bytes, header implies " + std::to_string(count * sizeof(T)));
  }
  in.seekg(0);
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("short read on " + payload_path.string());
  to_little_endian_inplace(values);
  return values;
}

template <class T>
void write_grid(const Dims& dims, const Spacing& spacing, std::span<const T> data, const char* dtype,
                const fs::path& path) {
  const auto paths = storage_paths(path);
  json header = {{"dims", {dims.nx, dims.ny, dims.nz}},
                 {"spacing_mm", {spacing[0], spacing[1], spacing[2]}},
                 {"dtype", dtype},
                 {"order", "x-fastest"},
                 {"byte_order", "little"}};
  {
    std::ofstream out(paths.header);
    if (!out) throw DataError("cannot write " + paths.header.string());
    out << header.dump() << '\n';
    if (!out) throw DataError("write failed for " + paths.header.string());
  }
  std::vector<T> payload(data.begin(), data.end());
  to_little_endian_inplace(payload);
  std::ofstream out(paths.payload, std::ios::binary);
  if (!out) throw DataError("cannot write " + paths.payload.string());
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(T)));
  if (!out) throw DataError("write failed for " + paths.payload.string());
}

}  // namespace

VolumeHeader read_header(const fs::path& path) { return parse_header(storage_paths(path).header); }

Volume load_volume(const fs::path& path) {
  const auto paths = storage_paths(path);
  const VolumeHeader h = parse_header(paths.header);
  std::vector<float> values;
  if (h.dtype == "f32") {
    values = read_payload<float>(paths.payload, h.dims.count());
  } else {
    const auto raw = read_payload<std::uint8_t>(paths.payload, h.dims.count());
    values.assign(raw.begin(), raw.end());
  }
  for (float v : values)
    if (!std::isfinite(v)) throw DataError("non-finite intensity in " + paths.payload.string());
  return Volume(h.dims, h.spacing, std::move(values));
}

Mask load_mask(const fs::path& path) {
  const auto paths = storage_paths(path);
  const VolumeHeader h = parse_header(paths.header);
  if (h.dtype != "u8") throw DataError("mask must be stored as u8: " + paths.header.string());
  auto values = read_payload<std::uint8_t>(paths.payload, h.dims.count());
  for (auto v : values)
    if (v > 1) throw DataError("mask values must be 0 or 1 in " + paths.payload.string());
  return Mask(h.dims, h.spacing, std::move(values));
}

void save_volume(const Volume& v, const fs::path& path) {
  write_grid<float>(v.dims(), v.spacing(), v.data(), "f32", path);
}

void save_mask(const Mask& m, const fs::path& path) {
  write_grid<std::uint8_t>(m.dims(), m.spacing(), m.data(), "u8", path);
}

void save_probability(const ProbabilityMap& p, const fs::path& path) {
  write_grid<float>(p.dims(), p.spacing(), p.data(), "f32", path);
}

Volume resample_isotropic(const Volume& v, double target_mm) {
  if (!(target_mm > 0.0) || !std::isfinite(target_mm)) throw DataError("target spacing must be positive");
  const Dims& in = v.dims();
  Dims out;
  std::array<std::vector<int>, 3> i0;
  std::array<std::vector<int>, 3> i1;
  std::array<std::vector<double>, 3> frac;
  for (int axis = 0; axis < 3; ++axis) {
    const int n_in = in[axis];
    const int n_out = std::max(1, static_cast<int>(std::lround(n_in * v.spacing()[axis] / target_mm)));
    (axis == 0 ? out.nx : axis == 1 ? out.ny : out.nz) = n_out;
    for (int i = 0; i < n_out; ++i) {
      const double pos = std::clamp(i * target_mm / v.spacing()[axis], 0.0, static_cast<double>(n_in - 1));
      const int lo = static_cast<int>(std::floor(pos));
      const int hi = std::min(lo + 1, n_in - 1);
      i0[axis].push_back(lo);
      i1[axis].push_back(hi);
      frac[axis].push_back(pos - lo);
    }
  }
  Volume result(out, {target_mm, target_mm, target_mm});
  for (int z = 0; z < out.nz; ++z) {
    const int z0 = i0[2][z], z1 = i1[2][z];
    const double fz = frac[2][z];
    for (int y = 0; y < out.ny; ++y) {
      const int y0 = i0[1][y], y1 = i1[1][y];
      const double fy = frac[1][y];
      for (int x = 0; x < out.nx; ++x) {
        const int x0 = i0[0][x], x1 = i1[0][x];
        const double fx = frac[0][x];
        auto lerp_x = [&](int yy, int zz) {
          return (1.0 - fx) * v(x0, yy, zz) + fx * v(x1, yy, zz);
        };
        const double c0 = (1.0 - fy) * lerp_x(y0, z0) + fy * lerp_x(y1, z0);
        const double c1 = (1.0 - fy) * lerp_x(y0, z1) + fy * lerp_x(y1, z1);
        result(x, y, z) = static_cast<float>((1.0 - fz) * c0 + fz * c1);
      }
    }
  }
  return result;
}

void check_box(const BoundingBox& box, const Dims& dims) {
  if (!dims.contains(box.lo) || !dims.contains(box.hi) || box.lo.x > box.hi.x || box.lo.y > box.hi.y ||
      box.lo.z > box.hi.z) {
    throw DataError("bounding box outside volume");
  }
}

Volume normalize_intensity(const Volume& v) {
  const auto [lo_it, hi_it] = std::minmax_element(v.data().begin(), v.data().end());
  const double lo = *lo_it;
  const double range = static_cast<double>(*hi_it) - lo;
  Volume out(v.dims(), v.spacing(), 0.0f);
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>((v[i] - lo) / range);
  return out;
}

double dice_score(const Mask& a, const Mask& b) {
  if (a.dims() != b.dims()) throw DataError("dice_score: dims mismatch");
  std::size_t both = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool in_a = a[i] != 0;
    const bool in_b = b[i] != 0;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::size_t count_foreground(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.data().begin(), m.data().end(), [](auto v) { return v != 0; }));
}

}  // namespace xseg

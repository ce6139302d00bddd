#include "xseg/phantom.hpp"

#include <cmath>
#include <random>

namespace xseg {

Phantom make_phantom(std::uint64_t seed, const PhantomParams& params) {
  if (!(params.radius_min > 0.0 && params.radius_min <= params.radius_max))
    throw DataError("phantom radius range is invalid");
  if (!(params.ratio_min > 0.0 && params.ratio_min <= params.ratio_max))
    throw DataError("phantom axis ratio range is invalid");
  if (params.margin < 0 || params.center_jitter < 0 || params.center_jitter > params.margin)
    throw DataError("phantom margin must cover the center jitter");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> radius(params.radius_min, params.radius_max);
  std::uniform_real_distribution<double> ratio(params.ratio_min, params.ratio_max);
  std::uniform_int_distribution<int> jitter(-params.center_jitter, params.center_jitter);

  Phantom ph;
  const double r = radius(rng);
  Dims dims;
  for (int a = 0; a < 3; ++a) {
    ph.semi_axes[a] = r * ratio(rng);
    const int n = 2 * static_cast<int>(std::ceil(ph.semi_axes[a])) + 1 + 2 * params.margin;
    (a == 0 ? dims.nx : a == 1 ? dims.ny : dims.nz) = n;
  }
  for (int a = 0; a < 3; ++a) ph.center[a] = (dims[a] - 1) / 2 + jitter(rng);

  ph.image = Volume(dims, params.spacing, 0.0f);
  ph.truth = Mask(dims, params.spacing, std::uint8_t{0});
  std::normal_distribution<double> noise(0.0, params.noise_sigma);
  for (int z = 0; z < dims.nz; ++z)
    for (int y = 0; y < dims.ny; ++y)
      for (int x = 0; x < dims.nx; ++x) {
        const double u = (x - ph.center[0]) / ph.semi_axes[0];
        const double v = (y - ph.center[1]) / ph.semi_axes[1];
        const double w = (z - ph.center[2]) / ph.semi_axes[2];
        const bool inside = u * u + v * v + w * w <= 1.0;
        ph.truth(x, y, z) = inside ? 1 : 0;
        const double n = params.noise_sigma > 0.0 ? noise(rng) : 0.0;
        ph.image(x, y, z) = static_cast<float>((inside ? params.inside : params.outside) + n);
      }
  return ph;
}

std::vector<Phantom> make_phantom_set(int n_cases, std::uint64_t seed, const PhantomParams& params) {
  if (n_cases < 0) throw DataError("case count must be non-negative");
  std::vector<Phantom> out;
  for (int k = 0; k < n_cases; ++k) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(k)};
    std::uint64_t case_seed = 0;
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    case_seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    out.push_back(make_phantom(case_seed, params));
  }
  return out;
}

}  // namespace xseg

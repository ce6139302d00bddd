#pragma once

// Brute-force reference implementations. Each is written from the textbook
// definition and shares no code with the library beyond the container types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "xseg/geodesic.hpp"
#include "xseg/volume.hpp"

namespace oracle {

using namespace xseg;

inline void for_each_neighbor(const Dims& d, const Index3& p, const std::function<void(const Index3&)>& f) {
  static constexpr int kSteps[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (const auto& s : kSteps) {
    const Index3 q{p.x + s[0], p.y + s[1], p.z + s[2]};
    if (d.contains(q)) f(q);
  }
}

/// Random-walker probabilities from the full dense Laplacian, solved by
/// Gaussian elimination with partial pivoting in long double.
inline std::vector<double> dense_random_walker(const Volume& v, const SeedMap& seeds, double beta, double eps) {
  const Dims d = v.dims();
  const std::size_t n = d.count();
  const auto [lo, hi] = std::minmax_element(v.data().begin(), v.data().end());
  const long double range = static_cast<long double>(*hi) - *lo;
  std::vector<long double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = range > 0 ? (static_cast<long double>(v[i]) - *lo) / range : 0.0L;

  std::vector<std::vector<long double>> lap(n, std::vector<long double>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i) {
    for_each_neighbor(d, d.coord(i), [&](const Index3& q) {
      const std::size_t j = d.linear(q);
      const long double w = std::exp(-static_cast<long double>(beta) * (z[j] - z[i]) * (z[j] - z[i])) + eps;
      lap[i][j] -= w;
      lap[i][i] += w;
    });
  }

  std::vector<std::size_t> unknown;
  std::vector<long double> fixed(n, 0.0L);
  for (std::size_t i = 0; i < n; ++i) {
    if (seeds[i] == SeedLabel::Unlabeled) unknown.push_back(i);
    else fixed[i] = seeds[i] == SeedLabel::Foreground ? 1.0L : 0.0L;
  }
  const std::size_t m = unknown.size();
  std::vector<std::vector<long double>> a(m, std::vector<long double>(m + 1, 0.0L));
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t i = unknown[r];
    for (std::size_t c = 0; c < m; ++c) a[r][c] = lap[i][unknown[c]];
    long double rhs = 0.0L;
    for (std::size_t j = 0; j < n; ++j)
      if (seeds[j] != SeedLabel::Unlabeled) rhs -= lap[i][j] * fixed[j];
    a[r][m] = rhs;
  }
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (std::size_t r = col + 1; r < m; ++r) {
      const long double f = a[r][col] / a[col][col];
      if (f == 0.0L) continue;
      for (std::size_t c = col; c <= m; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<long double> x(m);
  for (std::size_t r = m; r-- > 0;) {
    long double s = a[r][m];
    for (std::size_t c = r + 1; c < m; ++c) s -= a[r][c] * x[c];
    x[r] = s / a[r][r];
  }

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(fixed[i]);
  for (std::size_t r = 0; r < m; ++r) out[unknown[r]] = static_cast<double>(x[r]);
  return out;
}

/// Minimal node-weighted path cost by Bellman-Ford relaxation to a fixpoint.
/// Entering voxel q costs cost[q] + step; the source itself is free.
inline double bellman_ford(const Volume& cost, const Index3& src, const Index3& dst, double step) {
  const Dims d = cost.dims();
  const std::size_t n = d.count();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  dist[d.linear(src)] = 0.0;
  for (std::size_t pass = 0; pass < n; ++pass) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(dist[i])) continue;
      for_each_neighbor(d, d.coord(i), [&](const Index3& q) {
        const std::size_t j = d.linear(q);
        const double cand = dist[i] + (static_cast<double>(cost[j]) + step);
        if (cand < dist[j]) {
          dist[j] = cand;
          changed = true;
        }
      });
    }
    if (!changed) break;
  }
  return dist[d.linear(dst)];
}

/// Every ball offset (|o|^2 <= r^2) applied to every voxel.
inline Mask naive_dilate(const Mask& m, int r) {
  const Dims d = m.dims();
  Mask out(d, m.spacing(), std::uint8_t{0});
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Index3 p = d.coord(i);
    bool hit = false;
    for (int dz = -r; dz <= r && !hit; ++dz)
      for (int dy = -r; dy <= r && !hit; ++dy)
        for (int dx = -r; dx <= r && !hit; ++dx) {
          if (dx * dx + dy * dy + dz * dz > r * r) continue;
          const Index3 q{p.x + dx, p.y + dy, p.z + dz};
          hit = d.contains(q) && m.at(q);
        }
    out[i] = hit;
  }
  return out;
}

/// Outside the grid counts as background.
inline Mask naive_erode(const Mask& m, int r) {
  const Dims d = m.dims();
  Mask out(d, m.spacing(), std::uint8_t{0});
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Index3 p = d.coord(i);
    bool all = true;
    for (int dz = -r; dz <= r && all; ++dz)
      for (int dy = -r; dy <= r && all; ++dy)
        for (int dx = -r; dx <= r && all; ++dx) {
          if (dx * dx + dy * dy + dz * dz > r * r) continue;
          const Index3 q{p.x + dx, p.y + dy, p.z + dz};
          all = d.contains(q) && m.at(q);
        }
    out[i] = all;
  }
  return out;
}

inline bool subset(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && !b[i]) return false;
  return true;
}

inline Mask random_mask(std::mt19937_64& rng, const Dims& d, double density) {
  std::bernoulli_distribution on(density);
  Mask m(d, {1.0, 1.0, 1.0}, std::uint8_t{0});
  for (auto& v : m.data()) v = on(rng);
  return m;
}

inline Volume random_volume(std::mt19937_64& rng, const Dims& d, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Volume v(d, {1.0, 1.0, 1.0}, 0.0f);
  for (auto& x : v.data()) x = static_cast<float>(u(rng));
  return v;
}

/// Random seeds with at least one voxel of each class.
inline SeedMap random_seeds(std::mt19937_64& rng, const Dims& d) {
  SeedMap s(d, {1.0, 1.0, 1.0}, SeedLabel::Unlabeled);
  const std::size_t n = d.count();
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::uniform_int_distribution<int> label(0, 5);
  for (auto& v : s.data()) {
    const int l = label(rng);
    v = l == 0 ? SeedLabel::Foreground : l == 1 ? SeedLabel::Background : SeedLabel::Unlabeled;
  }
  const std::size_t f = pick(rng);
  std::size_t b = pick(rng);
  while (b == f) b = pick(rng);
  s[f] = SeedLabel::Foreground;
  s[b] = SeedLabel::Background;
  return s;
}

/// Central finite difference of f at x along coordinate i.
template <class F>
double central_difference(F&& f, std::vector<double>& x, std::size_t i, double h) {
  const double keep = x[i];
  x[i] = keep + h;
  const double up = f(x);
  x[i] = keep - h;
  const double down = f(x);
  x[i] = keep;
  return (up - down) / (2.0 * h);
}

/// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero pairs from
/// dominating.
inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

}  // namespace oracle

#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "xseg/random_walker.hpp"

using namespace xseg;

namespace {

SeedMap chain_seeds(int n) {
  SeedMap s(Dims{n, 1, 1}, {1, 1, 1}, SeedLabel::Unlabeled);
  s[0] = SeedLabel::Foreground;
  s[n - 1] = SeedLabel::Background;
  return s;
}

RwConfig tight() {
  RwConfig c;
  c.cg_tol = 1e-12;
  return c;
}

double max_abs_diff(const ProbabilityMap& p, const std::vector<double>& q) {
  double m = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) m = std::max(m, std::fabs(p[i] - q[i]));
  return m;
}

// For each unseeded voxel, which seed classes its unseeded component touches
// (bit 0 foreground, bit 1 background).
std::vector<int> reachable_classes(const SeedMap& s) {
  const Dims d = s.dims();
  std::vector<int> out(s.size(), 0);
  std::vector<bool> done(s.size(), false);
  for (std::size_t start = 0; start < s.size(); ++start) {
    if (done[start] || s[start] != SeedLabel::Unlabeled) continue;
    std::vector<std::size_t> comp{start}, stack{start};
    done[start] = true;
    int classes = 0;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      oracle::for_each_neighbor(d, d.coord(i), [&](const Index3& q) {
        const std::size_t j = d.linear(q);
        if (s[j] == SeedLabel::Foreground) classes |= 1;
        else if (s[j] == SeedLabel::Background) classes |= 2;
        else if (!done[j]) {
          done[j] = true;
          comp.push_back(j);
          stack.push_back(j);
        }
      });
    }
    for (std::size_t i : comp) out[i] = classes;
  }
  return out;
}

}  // namespace

TEST_CASE("edge weights") {
  CHECK(edge_weight(0.3, 0.3, 130, 1e-6) == doctest::Approx(1.0 + 1e-6));
  CHECK(edge_weight(0.0, 1.0, 130, 1e-6) == doctest::Approx(1e-6).epsilon(1e-9));
  CHECK(edge_weight(0.0, 1.0, 0, 1e-6) == doctest::Approx(1.0 + 1e-6));
  CHECK(edge_weight(0.2, 0.7, 130, 1e-6) == edge_weight(0.7, 0.2, 130, 1e-6));
  CHECK_THROWS_AS((RwConfig{-1.0, 1e-6, 10, 1e-6}.validate()), DataError);
  CHECK_THROWS_AS((RwConfig{130, 0.0, 10, 1e-6}.validate()), DataError);
  CHECK_THROWS_AS((RwConfig{130, 1e-6, 10, 0.0}.validate()), DataError);
}

TEST_CASE("harmonic chain") {
  const Volume v(Dims{5, 1, 1}, {1, 1, 1}, 0.4f);
  const ProbabilityMap p = random_walker(v, chain_seeds(5), RwConfig{});
  const double expected[] = {1.0, 0.75, 0.5, 0.25, 0.0};
  for (int i = 0; i < 5; ++i) CHECK(std::fabs(p[i] - expected[i]) <= 1e-6);

  const Mask m = threshold(p, 0.5);
  CHECK(m[0] == 1);
  CHECK(m[1] == 1);
  CHECK(m[2] == 1);
  CHECK(m[3] == 0);
}

TEST_CASE("threshold") {
  const ProbabilityMap half(Dims{2, 2, 1}, {1, 1, 1}, 0.5f);
  CHECK(count_foreground(threshold(half, 0.5)) == 4);
  CHECK(count_foreground(threshold(ProbabilityMap(Dims{3, 1, 1}, {1, 1, 1}, 0.0f), 0.0)) == 3);
  CHECK_THROWS_AS(threshold(half, 1.0000001), DataError);
  CHECK_THROWS_AS(threshold(half, -0.1), DataError);
}

TEST_CASE("seeding preconditions") {
  const Volume v(Dims{3, 3, 1}, {1, 1, 1}, 0.0f);
  SeedMap s(v.dims(), v.spacing(), SeedLabel::Unlabeled);
  s[0] = SeedLabel::Foreground;
  CHECK_THROWS_WITH_AS(random_walker(v, s, {}), doctest::Contains("background"), DataError);
  s[0] = SeedLabel::Background;
  CHECK_THROWS_WITH_AS(random_walker(v, s, {}), doctest::Contains("foreground"), DataError);

  SeedMap all(v.dims(), v.spacing(), SeedLabel::Background);
  all[4] = SeedLabel::Foreground;
  all[7] = SeedLabel::Foreground;
  const ProbabilityMap p = random_walker(v, all, {});
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == (i == 4 || i == 7 ? 1.0f : 0.0f));
}

TEST_CASE("Laplacian rows sum to zero") {
  std::mt19937_64 rng(41);
  for (int t = 0; t < 10; ++t) {
    const Volume v = oracle::random_volume(rng, {4, 3, 5}, -3.0, 8.0);
    const SparseMatrix l = assemble_laplacian(v, {});
    REQUIRE(l.rows == v.size());
    for (std::size_t r = 0; r < l.rows; ++r) {
      // off-diagonals accumulated in column order, then the diagonal
      double off = 0.0;
      for (std::size_t k = l.row_start[r]; k < l.row_start[r + 1]; ++k) {
        if (l.columns[k] == r) continue;
        CHECK(l.values[k] < 0.0);
        off += l.values[k];
      }
      CHECK(off + l.diagonal(r) == 0.0);
    }
  }
}

TEST_CASE("conjugate gradient reports non-convergence") {
  std::mt19937_64 rng(43);
  const Volume v = oracle::random_volume(rng, {6, 6, 6});
  const SeedMap s = oracle::random_seeds(rng, v.dims());
  RwConfig cfg;
  cfg.cg_max_iter = 1;
  cfg.cg_tol = 1e-14;
  try {
    random_walker(v, s, cfg);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.iterations() == 1);
    CHECK(e.residual() > 1e-14);
  }
}

TEST_CASE("random walker matches a dense direct solve") {
  std::mt19937_64 rng(47);
  std::uniform_int_distribution<int> side(1, 5);
  std::uniform_real_distribution<double> beta(0.0, 200.0);
  int solved = 0;
  while (solved < 60) {
    const Dims d{side(rng), side(rng), side(rng)};
    if (d.count() < 2) continue;
    const Volume v = oracle::random_volume(rng, d, 0.0, 1.0);
    const SeedMap s = oracle::random_seeds(rng, d);
    RwConfig cfg = tight();
    cfg.beta = beta(rng);
    const ProbabilityMap p = random_walker(v, s, cfg);
    CHECK(max_abs_diff(p, oracle::dense_random_walker(v, s, cfg.beta, cfg.weight_epsilon)) <= 1e-6);
    ++solved;
  }
}

TEST_CASE("maximum principle, shift invariance and mirror symmetry") {
  std::mt19937_64 rng(53);
  for (int t = 0; t < 20; ++t) {
    const Dims d{5, 4, 3};
    const Volume v = oracle::random_volume(rng, d);
    const SeedMap s = oracle::random_seeds(rng, d);
    RwConfig cfg = tight();
    cfg.beta = 10.0;
    const ProbabilityMap p = random_walker(v, s, cfg);
    const std::vector<int> classes = reachable_classes(s);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (s[i] == SeedLabel::Foreground) CHECK(p[i] == 1.0f);
      else if (s[i] == SeedLabel::Background) CHECK(p[i] == 0.0f);
      else if (classes[i] == 3) {
        CHECK(p[i] > 0.0f);
        CHECK(p[i] < 1.0f);
      } else {
        // enclosed by a single seed class
        CHECK(std::fabs(p[i] - (classes[i] == 1 ? 1.0 : 0.0)) <= 1e-6);
      }
    }

    Volume shifted = v;
    for (auto& x : shifted.data()) x += 5.0f;
    const ProbabilityMap ps = random_walker(shifted, s, cfg);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::fabs(ps[i] - p[i]) <= 2 * cfg.cg_tol + 1e-6);

    Volume vm = v;
    SeedMap sm = s;
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) {
          vm(x, y, z) = v(d.nx - 1 - x, y, z);
          sm(x, y, z) = s(d.nx - 1 - x, y, z);
        }
    const ProbabilityMap pm = random_walker(vm, sm, cfg);
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) CHECK(std::fabs(pm(x, y, z) - p(d.nx - 1 - x, y, z)) <= 1e-6);
  }
}

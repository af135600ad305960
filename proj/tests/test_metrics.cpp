#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "firenet/error.hpp"
#include "firenet/metrics.hpp"
#include "oracle/metric_oracles.hpp"
#include "test_helpers.hpp"

using namespace firenet;
using namespace firenet::oracle;

namespace {

std::vector<int> box(const Extent3& e, Voxel lo, Voxel hi, int k = 1) {
  std::vector<int> m(static_cast<std::size_t>(e[0] * e[1] * e[2]), 0);
  for (int64_t d = lo.d; d < hi.d; ++d)
    for (int64_t h = lo.h; h < hi.h; ++h)
      for (int64_t w = lo.w; w < hi.w; ++w) m[static_cast<std::size_t>((d * e[1] + h) * e[2] + w)] = k;
  return m;
}

std::vector<int> random_labels(std::size_t n, int classes, double p_fg, Rng& rng) {
  std::vector<int> v(n);
  for (auto& x : v) x = uniform01(rng) < p_fg ? 1 + static_cast<int>(rng() % (classes - 1)) : 0;
  return v;
}

}  // namespace

TEST_CASE("dsc") {
  SUBCASE("examples") {
    const Extent3 e{4, 4, 4};
    auto a = box(e, {0, 0, 0}, {2, 2, 2});
    CHECK(dsc(a, a, 1) == 1.0);
    CHECK(dsc(a, box(e, {2, 2, 2}, {4, 4, 4}), 1) == 0.0);
    CHECK(dsc(a, box(e, {1, 0, 0}, {3, 2, 2}), 1) == 0.5);  // 8, 8, overlap 4
    CHECK(dsc(a, a, 3) == 1.0);                            // both empty
    CHECK_THROWS_AS(dsc(a, std::vector<int>(3), 1), ShapeError);
  }
  SUBCASE("exhaustive binary masks on 2x2x2") {
    int mismatches = 0;
    std::vector<int> a(8), b(8);
    for (int ma = 0; ma < 256; ++ma) {
      for (int i = 0; i < 8; ++i) a[i] = (ma >> i) & 1;
      for (int mb = 0; mb < 256; ++mb) {
        for (int i = 0; i < 8; ++i) b[i] = (mb >> i) & 1;
        for (int k = 0; k < 2; ++k) mismatches += dsc(a, b, k) != dsc_oracle(a, b, k);
        mismatches += dsc(a, b, 1) != dsc(b, a, 1);
      }
    }
    CHECK(mismatches == 0);
  }
  SUBCASE("random multi-class volumes up to 5^3") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + rng() % 125;
      auto a = random_labels(n, 4, 0.5, rng), b = random_labels(n, 4, 0.5, rng);
      for (int k = 0; k < 4; ++k) REQUIRE(dsc(a, b, k) == dsc_oracle(a, b, k));
    }
  }
}

TEST_CASE("distance transform") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Extent3 e{1 + static_cast<int64_t>(rng() % 7), 1 + static_cast<int64_t>(rng() % 7),
                    1 + static_cast<int64_t>(rng() % 7)};
    const Spacing sp{0.5 + uniform01(rng), 0.5 + uniform01(rng), 0.5 + uniform01(rng)};
    std::vector<uint8_t> f(static_cast<std::size_t>(e[0] * e[1] * e[2]));
    for (auto& x : f) x = uniform01(rng) < 0.1;
    const auto dt = squared_distance_transform(f, e, sp);
    for (int64_t d = 0; d < e[0]; ++d)
      for (int64_t h = 0; h < e[1]; ++h)
        for (int64_t w = 0; w < e[2]; ++w) {
          double best = std::numeric_limits<double>::infinity();
          for (int64_t d2 = 0; d2 < e[0]; ++d2)
            for (int64_t h2 = 0; h2 < e[1]; ++h2)
              for (int64_t w2 = 0; w2 < e[2]; ++w2) {
                if (!f[static_cast<std::size_t>((d2 * e[1] + h2) * e[2] + w2)]) continue;
                const double a = (d - d2) * sp[0], b = (h - h2) * sp[1], c = (w - w2) * sp[2];
                best = std::min(best, a * a + b * b + c * c);
              }
          const double got = dt[static_cast<std::size_t>((d * e[1] + h) * e[2] + w)];
          if (std::isinf(best)) {
            REQUIRE(std::isinf(got));
          } else {
            REQUIRE(got == doctest::Approx(best).epsilon(1e-12));
          }
        }
  }
}

TEST_CASE("msd") {
  const Extent3 e{6, 6, 6};
  SUBCASE("identical masks") {
    auto a = box(e, {1, 1, 1}, {4, 5, 3});
    CHECK(msd(a, a, e, 1, {1, 1, 1}) == 0.0);
  }
  SUBCASE("unit cubes offset by one voxel") {
    auto a = box(e, {2, 2, 2}, {3, 3, 3});
    auto b = box(e, {2, 2, 3}, {3, 3, 4});
    CHECK(msd(a, b, e, 1, {1, 1, 1}) == msd_oracle(a, b, e, 1, {1, 1, 1}));
    CHECK(msd(a, b, e, 1, {1, 1, 1}) == 1.0);
    auto c = box(e, {1, 1, 1}, {3, 3, 3});
    auto d = box(e, {2, 1, 1}, {4, 3, 3});
    CHECK(msd(c, d, e, 1, {1, 1, 1}) == doctest::Approx(msd_oracle(c, d, e, 1, {1, 1, 1})).epsilon(1e-14));
  }
  SUBCASE("linear in spacing, symmetric") {
    auto a = box(e, {0, 1, 1}, {3, 4, 5});
    auto b = box(e, {2, 2, 0}, {6, 3, 4});
    const double one = msd(a, b, e, 1, {1, 1, 1});
    CHECK(msd(a, b, e, 1, {2, 2, 2}) == doctest::Approx(2 * one).epsilon(1e-14));
    CHECK(msd(b, a, e, 1, {1, 1, 1}) == doctest::Approx(one).epsilon(1e-14));
  }
  SUBCASE("empty mask") {
    auto a = box(e, {0, 0, 0}, {2, 2, 2});
    CHECK_THROWS_AS(msd(a, std::vector<int>(a.size(), 0), e, 1, {1, 1, 1}), Error);
  }
  SUBCASE("random volumes up to 10^3 against all pairs") {
    Rng rng(17);
    for (int trial = 0; trial < 30; ++trial) {
      const Extent3 ex{2 + static_cast<int64_t>(rng() % 9), 2 + static_cast<int64_t>(rng() % 9),
                       2 + static_cast<int64_t>(rng() % 9)};
      const Spacing sp{0.5 + uniform01(rng), 0.5 + uniform01(rng), 2.0};
      const std::size_t n = static_cast<std::size_t>(ex[0] * ex[1] * ex[2]);
      auto a = random_labels(n, 3, 0.3, rng), b = random_labels(n, 3, 0.3, rng);
      for (int k = 1; k < 3; ++k) {
        if (surface_oracle(a, ex, k).empty() || surface_oracle(b, ex, k).empty()) continue;
        REQUIRE(msd(a, b, ex, k, sp) == doctest::Approx(msd_oracle(a, b, ex, k, sp)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("summary statistics") {
  CHECK(median_of({0.2, 0.9, 1.0}) == 0.9);
  CHECK(median_of({1.0, 0.2, 0.4, 0.9}) == doctest::Approx(0.65));
  const std::vector<double> v{0.2, 0.9, 1.0};
  CHECK(mean_of(v) == doctest::Approx(0.7));
  CHECK(std::isnan(median_of({})));
}

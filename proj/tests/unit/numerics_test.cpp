#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "lsf/numerics/half.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/reduce.hpp"
#include "lsf/numerics/rng.hpp"

using namespace lsf;

namespace {

// Independent decoder: sign * 2^(e-15) * (1 + m/1024), subnormals 2^-14 * m/1024.
double decode(std::uint16_t bits) {
  const int sign = bits >> 15 ? -1 : 1;
  const int e = (bits >> 10) & 0x1F;
  const int m = bits & 0x3FF;
  if (e == 31) return m ? std::numeric_limits<double>::quiet_NaN() : sign * std::numeric_limits<double>::infinity();
  if (e == 0) return sign * std::ldexp(static_cast<double>(m), -24);
  return sign * std::ldexp(1.0 + m / 1024.0, e - 15);
}

struct ThreadGuard {
  std::size_t saved = num_threads();
  ~ThreadGuard() { set_num_threads(saved); }
};

}  // namespace

TEST(Half, DecodeMatchesIndependentFormulaForAllPatterns) {
  for (std::uint32_t b = 0; b <= 0xFFFF; ++b) {
    const double want = decode(static_cast<std::uint16_t>(b));
    const float got = half_to_float(Half::from_bits(static_cast<std::uint16_t>(b)));
    if (std::isnan(want))
      EXPECT_TRUE(std::isnan(got)) << b;
    else
      EXPECT_EQ(static_cast<double>(got), want) << b;
  }
}

TEST(Half, RoundTripIsIdentityOnEveryNonNaN) {
  for (std::uint32_t b = 0; b <= 0xFFFF; ++b) {
    const Half h = Half::from_bits(static_cast<std::uint16_t>(b));
    const Half back = float_to_half(half_to_float(h));
    if (std::isnan(decode(h.bits)))
      EXPECT_TRUE(std::isnan(half_to_float(back)));
    else
      EXPECT_EQ(back.bits, h.bits) << b;
  }
}

// Midpoints between adjacent representable values go to the even mantissa;
// anything off the midpoint goes to the nearer neighbour.
TEST(Half, MidpointsRoundToEven) {
  for (std::uint32_t b = 0; b < 0x7BFF; ++b) {
    const double lo = decode(static_cast<std::uint16_t>(b)), hi = decode(static_cast<std::uint16_t>(b + 1));
    const double mid = 0.5 * (lo + hi);
    const float fm = static_cast<float>(mid);
    ASSERT_EQ(static_cast<double>(fm), mid);  // exact in binary32
    const std::uint16_t even = (b & 1u) ? static_cast<std::uint16_t>(b + 1) : static_cast<std::uint16_t>(b);
    EXPECT_EQ(float_to_half(fm).bits, even) << b;
    EXPECT_EQ(float_to_half(std::nextafter(fm, 0.0f)).bits, b);
    EXPECT_EQ(float_to_half(std::nextafter(fm, INFINITY)).bits, b + 1);
    EXPECT_EQ(float_to_half(-fm).bits, even | 0x8000u);
  }
}

TEST(Half, SpotValues) {
  EXPECT_EQ(float_to_half(1.0f).bits, 0x3C00);
  EXPECT_EQ(float_to_half(-2.0f).bits, 0xC000);
  EXPECT_EQ(float_to_half(65504.0f).bits, 0x7BFF);
  EXPECT_EQ(float_to_half(65519.0f).bits, 0x7BFF);
  EXPECT_EQ(float_to_half(65520.0f).bits, 0x7C00);  // tie above max goes to inf
  EXPECT_EQ(float_to_half(1e9f).bits, 0x7C00);
  EXPECT_EQ(float_to_half(std::ldexp(1.0f, -24)).bits, 0x0001);
  EXPECT_EQ(float_to_half(std::ldexp(1.0f, -25)).bits, 0x0000);      // tie to even zero
  EXPECT_EQ(float_to_half(std::ldexp(3.0f, -26)).bits, 0x0001);
  EXPECT_EQ(float_to_half(std::ldexp(3.0f, -25)).bits, 0x0002);      // 1.5 ulp -> 2
  EXPECT_EQ(float_to_half(std::ldexp(1.0f, -14)).bits, 0x0400);      // smallest normal
  EXPECT_EQ(float_to_half(-0.0f).bits, 0x8000);
  EXPECT_EQ(float_to_half(1.0f + std::ldexp(1.0f, -11)).bits, 0x3C00);  // halfway 1 -> 1+2^-10
  EXPECT_EQ(float_to_half(1.0f + 3 * std::ldexp(1.0f, -11)).bits, 0x3C02);
  EXPECT_TRUE(std::isnan(half_to_float(float_to_half(std::numeric_limits<float>::quiet_NaN()))));
  EXPECT_EQ(float_to_half(INFINITY).bits, 0x7C00);
  EXPECT_EQ(float_to_half(-INFINITY).bits, 0xFC00);
}

TEST(Rng, MatchesReferenceSplitmixStream) {
  // seed 0 outputs of the usual splitmix64 sequence
  EXPECT_EQ(splitmix64_mix(0, 1), 0xE220A8397B1DCDAFull);
  EXPECT_EQ(splitmix64_mix(0, 2), 0x6E789E6AA1B965F4ull);
  EXPECT_EQ(splitmix64_mix(1234567, 0), 0xD7CDDB79D5642718ull);
  EXPECT_EQ(derive_seed(42, 3, 7), 0x7CB0357504762AEFull);
  EXPECT_DOUBLE_EQ(rand_uniform(0, 1), 0.8833108082136426);
}

TEST(Rng, UniformAndBelowStayInRange) {
  const CounterRng r{99};
  for (std::uint64_t i = 0; i < 20000; ++i) {
    const double u = r(i);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(i, 7), 7u);
  }
  EXPECT_EQ(r.below(5, 1), 0u);
}

TEST(Rng, DrawsDependOnlyOnSeedAndIndex) {
  const CounterRng r{5};
  std::vector<double> fwd, bwd(100);
  for (std::uint64_t i = 0; i < 100; ++i) fwd.push_back(r(i));
  for (std::uint64_t i = 100; i-- > 0;) bwd[i] = r(i);
  EXPECT_EQ(fwd, bwd);
  EXPECT_NE(derive_seed(1, 0, 1), derive_seed(1, 1, 0));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
}

TEST(Rng, BelowIsRoughlyUniform) {
  const CounterRng r{17};
  std::vector<int> hist(10, 0);
  for (std::uint64_t i = 0; i < 100000; ++i) ++hist[r.below(i, 10)];
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
}

TEST(Parallel, ChunkedReductionIsThreadCountInvariant) {
  ThreadGuard guard;
  std::vector<float> x(10007);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rand_uniform(3, i) * 2 - 1) * 1e3f;
  auto run = [&] {
    return parallel_reduce_rows<float>(x.size(), kRowGrain, 2, [&](std::size_t b, std::size_t e, std::vector<float>& p) {
      for (std::size_t i = b; i < e; ++i) {
        p[0] += x[i];
        p[1] += x[i] * x[i];
      }
    });
  };
  set_num_threads(1);
  const auto one = run();
  for (std::size_t t : {2u, 3u, 5u}) {
    set_num_threads(t);
    EXPECT_EQ(run(), one) << t << " threads";
  }
}

TEST(Parallel, ParallelForCoversEveryIndexOnce) {
  ThreadGuard guard;
  set_num_threads(3);
  std::vector<int> hit(1000, 0);
  parallel_for(hit.size(), 7, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) ++hit[i];
  });
  for (int h : hit) EXPECT_EQ(h, 1);
}

TEST(Reduce, TreeSumIsExactOnIntegersAndFixedOrder) {
  EXPECT_EQ(tree_sum<double>(1000, [](std::size_t i) { return static_cast<double>(i); }), 499500.0);
  EXPECT_EQ(tree_sum<double>(0, [](std::size_t) { return 1.0; }), 0.0);
  // same terms, same answer regardless of how often it is called
  auto term = [](std::size_t i) { return static_cast<float>(rand_uniform(8, i)) * 1e-3f + (i % 2 ? 1e4f : -1e4f); };
  const float a = tree_sum<float>(5000, term), b = tree_sum<float>(5000, term);
  EXPECT_EQ(a, b);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "connectome/rng.hpp"

using connectome::SeededRng;

TEST_CASE("identical seeds give identical sequences") {
  SeededRng a(1234), b(1234);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  SeededRng c(1234), d(1234);
  for (int i = 0; i < 100; ++i) {
    CHECK(c.uniform() == d.uniform());
    CHECK(c.gaussian() == d.gaussian());
  }
}

TEST_CASE("splitmix64 reference values") {
  // First three outputs for seed 0; the standard SplitMix64 test vector.
  SeededRng rng(0);
  CHECK(rng.next_u64() == 0xE220A8397B1DCDAFULL);
  CHECK(rng.next_u64() == 0x6E789E6AA1B965F4ULL);
  CHECK(rng.next_u64() == 0x06C45D188009454FULL);
}

TEST_CASE("child streams are independent of parent draws") {
  SeededRng a(77);
  SeededRng b(77);
  for (int i = 0; i < 50; ++i) (void)b.next_u64();  // advance the parent
  auto ca = a.child("init");
  auto cb = b.child("init");
  for (int i = 0; i < 100; ++i) {
    CHECK(ca.next_u64() == cb.next_u64());
  }
}

TEST_CASE("distinct labels give distinct streams") {
  SeededRng rng(99);
  std::set<std::uint64_t> first_draws;
  for (const char* label : {"init", "shuffle", "noise", "dropout", "member/0",
                            "member/1", "member/2"}) {
    first_draws.insert(rng.child(label).next_u64());
  }
  CHECK(first_draws.size() == 7);
}

TEST_CASE("uniform stays in [0,1) and fills the range") {
  SeededRng rng(5);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("gaussian moments") {
  SeededRng rng(7);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.gaussian();
    sum += z;
    sumsq += z * z;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.01);
  CHECK(std::fabs(var - 1.0) < 0.02);
}

TEST_CASE("below covers [0,n) uniformly enough") {
  SeededRng rng(11);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) {
    counts[rng.below(10)]++;
  }
  for (int c : counts) {
    CHECK(c > 800);
    CHECK(c < 1200);
  }
}

#include "sepkit/rng.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"

using namespace sepkit;

TEST_CASE("same seed reproduces the same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.uniform() == b.uniform());
}

TEST_CASE("uniform stays in range and roughly covers it") {
  Rng rng(7);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.001);
  CHECK(hi > 0.999);
}

TEST_CASE("normal has near-zero mean and unit variance") {
  Rng rng(8);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("uniform_int covers every value in a small range") {
  Rng rng(9);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 4000; ++i) {
    const long v = rng.uniform_int(1, 4);
    REQUIRE(v >= 1);
    REQUIRE(v <= 4);
    ++counts[v - 1];
  }
  for (int c : counts) CHECK(c > 500);
}

TEST_CASE("substreams differ from each other and from the master") {
  const uint64_t master = 1234;
  CHECK(substream_seed(master, 0) != substream_seed(master, 1));
  CHECK(substream_seed(master, 0) != substream_seed(master + 1, 0));
  Rng s0(substream_seed(master, 0));
  Rng s1(substream_seed(master, 1));
  int same = 0;
  for (int i = 0; i < 100; ++i)
    if (s0.uniform() == s1.uniform()) ++same;
  CHECK(same == 0);
}

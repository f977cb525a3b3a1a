#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fmm/rng.hpp"
#include "fmm/stats.hpp"

using namespace fmm;

TEST_CASE("rng is reproducible and in range") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform01();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(r.uniform_int(7) < 7);
  }
  CHECK(derive_seed(1, 2) != derive_seed(2, 1));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("sample draws distinct elements") {
  Rng r(3);
  const std::vector<int> pool{1, 2, 3, 4, 5, 6};
  for (int i = 0; i < 200; ++i) {
    auto s = r.sample(pool, 4);
    CHECK(s.size() == 4);
    std::sort(s.begin(), s.end());
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  }
}

TEST_CASE("normal quantile inverts the cdf") {
  for (double p : {0.025, 0.2, 0.5, 0.9, 0.999}) {
    CHECK(stats::normal_cdf(stats::normal_quantile(p)) == doctest::Approx(p).epsilon(1e-12));
  }
  CHECK(stats::normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
}

TEST_CASE("ks distance and p-value") {
  const double s[] = {0.1, 0.4, 0.7};
  // D+ = max(1/3 - 0.1, 2/3 - 0.4, 1 - 0.7), D- = max(0.1, 0.4 - 1/3, 0.7 - 2/3).
  CHECK(stats::ks_uniform_distance(s) == doctest::Approx(0.3).epsilon(1e-15));
  // References from scipy.stats.kstwobign with the same small-sample correction.
  CHECK(stats::ks_pvalue(0.1, 100) == doctest::Approx(0.25622118507010405).epsilon(1e-9));
  CHECK(stats::ks_pvalue(0.05, 200) == doctest::Approx(0.6886673872769066).epsilon(1e-9));
  CHECK(stats::ks_pvalue(0.2, 30) == doctest::Approx(0.16014114551077294).epsilon(1e-9));
}

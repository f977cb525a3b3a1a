#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fmm/error.hpp"
#include "fmm/faithfulness.hpp"
#include "support.hpp"

using namespace fmm;
using namespace fmm::faith;

namespace {

// Trapezoids summed from the right end, written independently of acu().
double oracle_area(const std::vector<double>& x, const std::vector<double>& top, const std::vector<double>& bottom) {
  double s = 0.0;
  for (std::size_t i = x.size() - 1; i > 0; --i) {
    const double left = top[i - 1] - bottom[i - 1];
    const double right = top[i] - bottom[i];
    s += (x[i] - x[i - 1]) * (left + right) / 2.0;
  }
  return s;
}

}  // namespace

TEST_CASE("acu and racu hand cases") {
  const std::vector<double> x{0.0, 1.0};
  const std::vector<double> b{0.9, 0.5};
  const std::vector<double> p{0.9, 0.3};
  CHECK(std::abs(acu(x, p, b) - 0.1) < 1e-12);
  CHECK(std::abs(racu(x, p, b) - 0.5) < 1e-12);
  CHECK(acu(x, b, b) == 0.0);
  CHECK(racu(x, b, b) == 0.0);
  const std::vector<double> above{0.95, 0.6};
  CHECK(acu(x, above, b) < 0.0);

  // Uneven grid, reference from an independent trapezoid routine.
  const std::vector<double> gx{0.0, 0.1, 0.25, 0.5, 0.75, 1.0};
  const std::vector<double> gb{0.9, 0.8, 0.7, 0.6, 0.55, 0.5};
  const std::vector<double> gp{0.9, 0.5, 0.45, 0.5, 0.52, 0.5};
  CHECK(std::abs(acu(gx, gp, gb) - 0.12000000000000001) < 1e-12);
  CHECK(std::abs(racu(gx, gp, gb) - 0.888888888888889) < 1e-12);
}

TEST_CASE("theoretical optimum has relative area one") {
  Rng rng(1);
  const auto x = ratio_grid(10);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> b(11);
    b[0] = 0.6 + 0.4 * rng.uniform01();
    for (std::size_t k = 1; k < 11; ++k) b[k] = b[k - 1] - 0.05 * rng.uniform01();
    const std::vector<double> p(11, b.back());
    CHECK(std::abs(racu(x, p, b) - 1.0) < 1e-12);
    // Keeping the unmasked point loses exactly the first half-interval.
    auto q = p;
    q[0] = b[0];
    const std::vector<double> flat(11, b.back());
    const double expected = 1.0 - 0.5 * 0.1 * (b[0] - b.back()) / oracle_area(x, b, flat);
    CHECK(std::abs(racu(x, q, b) - expected) < 1e-12);
  }
}

TEST_CASE("acu matches a brute-force oracle and is antisymmetric") {
  Rng rng(2);
  const auto x = ratio_grid(10);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(11), b(11);
    for (auto& v : p) v = rng.uniform01();
    for (auto& v : b) v = rng.uniform01();
    b.back() = std::min(b.back(), 0.2);
    b.front() = std::max(b.front(), 0.8);
    const double a = acu(x, p, b);
    CHECK(std::abs(a - oracle_area(x, b, p)) < 1e-12);
    CHECK(std::abs(a + acu(x, b, p)) < 1e-12);
    std::vector<double> flat(11, b.back());
    const double norm = oracle_area(x, b, flat);
    if (norm > 1e-9) CHECK(std::abs(racu(x, p, b) - a / norm) < 1e-12);
  }
}

TEST_CASE("flat baseline and grid mismatch are errors") {
  const std::vector<double> x{0.0, 0.5, 1.0};
  const std::vector<double> flat{0.5, 0.5, 0.5};
  const std::vector<double> p{0.5, 0.4, 0.3};
  CHECK_THROWS_AS(racu(x, p, flat), NumericError);
  const std::vector<double> shortp{0.5, 0.4};
  CHECK_THROWS_AS(acu(x, shortp, flat), ContractError);
  MaskingCurve a, b;
  a.ratios = {0.0, 1.0};
  a.performance = {1.0, 0.5};
  b.ratios = {0.0, 0.9};
  b.performance = {1.0, 0.5};
  CHECK_THROWS_AS(acu(a, b), ContractError);
}

TEST_CASE("bca interval") {
  Rng rng(3);
  const double same[] = {0.4, 0.4, 0.4};
  const auto deg = bca_interval(same, rng);
  CHECK(deg.lo == 0.4);
  CHECK(deg.hi == 0.4);

  const double sym[] = {-2, -1, 0, 1, 2};
  const auto iv = bca_interval(sym, rng);
  CHECK(iv.lo < 0.0);
  CHECK(iv.hi > 0.0);
  CHECK(std::abs((iv.lo + iv.hi) / 2.0) < 0.2);

  const double one[] = {1.0};
  CHECK_THROWS_AS(bca_interval(one, rng), ContractError);
}

TEST_CASE("bca coverage for n = 5 normal samples") {
  Rng rng(4);
  int covered = 0;
  const int reps = 2000;
  for (int r = 0; r < reps; ++r) {
    double v[5];
    for (double& x : v) x = 1.0 + 2.0 * rng.normal();
    const auto iv = bca_interval(v, rng, 0.95, 2000);
    CHECK(iv.lo <= iv.hi);
    covered += (iv.lo <= 1.0 && 1.0 <= iv.hi) ? 1 : 0;
  }
  const double rate = static_cast<double>(covered) / reps;
  // Reference coverage from an independent BCa implementation, 4000 reps.
  CHECK(std::abs(rate - 0.842) < 0.03);
}

TEST_CASE("mean across tasks") {
  const double two[] = {0.8, 0.6};
  const double single[] = {0.42};
  const double five[] = {0.81, 0.62, 0.7, 0.55, 0.92};
  CHECK(mean_across_tasks(two) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(mean_across_tasks(single) == 0.42);
  CHECK(mean_across_tasks(five) == doctest::Approx(0.72).epsilon(1e-15));
  CHECK_THROWS_AS(mean_across_tasks(std::span<const double>{}), ContractError);
}

TEST_CASE("cumulative counts") {
  CHECK(ratio_grid(10).size() == 11);
  CHECK(ratio_grid(10)[3] == 0.3);
  for (std::size_t m : {1u, 7u, 10u, 15u}) {
    CHECK(cumulative_count(0, 10, m) == 0);
    CHECK(cumulative_count(10, 10, m) == m);
    for (int i = 1; i <= 10; ++i) CHECK(cumulative_count(i, 10, m) >= cumulative_count(i - 1, 10, m));
  }
  CHECK(cumulative_count(5, 10, 7) == 4);  // 3.5 rounds up
  CHECK(cumulative_count(3, 10, 15) == 5);  // 4.5 rounds up
}

TEST_CASE("masking schedules are nested permutations") {
  const auto c = fmm::testing::small_config(40);
  const auto m = fmm::testing::random_model(c);
  Rng gen(5);
  const auto o = fmm::testing::random_observation(c, gen, 8, 8);
  for (auto measure : {ims::Measure::LeaveOneOutAbs, ims::Measure::GradL2, ims::Measure::Random, ims::Measure::Beam}) {
    for (bool rec : {true, false}) {
      Rng rng(6);
      const auto order = masking_schedule(m, o, measure, rec, rng, {});
      auto sorted = order;
      std::sort(sorted.begin(), sorted.end());
      CHECK(sorted == o.maskable);
    }
  }
  // Non-recursive schedules consume the initial explanation unchanged.
  Rng r1(7), r2(7);
  CHECK(masking_schedule(m, o, ims::Measure::LeaveOneOutSigned, false, r1, {}) ==
        ims::explain(m, o, ims::Measure::LeaveOneOutSigned, r2).order.positions);
  // Recursive: the first step uses the explanation of the unmasked input.
  Rng r3(8), r4(8);
  const auto rec = masking_schedule(m, o, ims::Measure::LeaveOneOutAbs, true, r3, {});
  CHECK(rec.front() == ims::explain(m, o, ims::Measure::LeaveOneOutAbs, r4).order.positions.front());
}

TEST_CASE("masking curve") {
  data::TaskConfig tc;
  tc.test_size = 30;
  const auto test = data::generate(tc).test;
  auto mc = tc.model_config({});
  mc.seed = 3;
  const auto m = ModelCheckpoint::initialize(mc);
  const auto curve = masking_curve(m, test, ims::Measure::LeaveOneOutAbs, true, nullptr, 11);
  CHECK(curve.ratios.size() == 11);
  CHECK(curve.performance.size() == 11);
  CHECK(curve.dataset_pvalues.empty());
  CHECK_FALSE(curve.ood_flagged);
  CHECK(curve.ratios.front() == 0.0);
  CHECK(curve.ratios.back() == 1.0);
  Rng rng(0);
  CHECK(curve.performance.front() == train::evaluate(m, test, 0.0, rng, data::Metric::Accuracy));
  CHECK(curve_from_json(curve_to_json(curve)) == curve);
  CHECK(masking_curve(m, test, ims::Measure::LeaveOneOutAbs, true, nullptr, 11) == curve);
}

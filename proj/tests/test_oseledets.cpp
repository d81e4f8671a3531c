#include <doctest.h>

#include <cmath>
#include <random>

#include "qshadow/oseledets.hpp"

using namespace qshadow;

namespace {

// log of the leading root of t^2 - 3t + 1.
const double kCatExponent = 0.96242365011920694;

TorusPoint random_point(std::mt19937_64& rng, int d) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = u(rng);
  return TorusPoint(v);
}

const BlockParams kExampleParams{0.96, 0.96, 0.001, 0.001, 0.01};

}  // namespace

TEST_CASE("cat map leading exponent oracle") {
  CHECK(std::log((3.0 + std::sqrt(5.0)) / 2.0) == doctest::Approx(kCatExponent).epsilon(1e-15));
}

TEST_CASE("Lyapunov spectra of the linear registry systems") {
  auto cat = lyapunov_spectrum(make_system("cat"), TorusPoint{0.21, 0.77}, 10'000);
  REQUIRE(cat.exponents.size() == 2);
  CHECK(std::abs(cat.exponents[0] - kCatExponent) <= 1e-6);
  CHECK(std::abs(cat.exponents[1] + kCatExponent) <= 1e-6);

  auto rot = lyapunov_spectrum(make_system("rotation"), TorusPoint{0.4}, 1000);
  CHECK(std::abs(rot.exponents[0]) <= 1e-12);

  auto prod = lyapunov_spectrum(make_system("cat_x_rot"), TorusPoint{0.1, 0.2, 0.3}, 10'000);
  CHECK(std::abs(prod.exponents[0] - kCatExponent) <= 1e-6);
  CHECK(std::abs(prod.exponents[1]) <= 1e-6);
  CHECK(std::abs(prod.exponents[2] + kCatExponent) <= 1e-6);

  CHECK_THROWS_AS(lyapunov_spectrum(make_system("cat"), TorusPoint{0.1, 0.1}, 50), Error);
}

TEST_CASE("exponent sums vanish for volume-preserving systems") {
  for (const auto& name : registry_names()) {
    auto sys = make_system(name);
    auto sp = lyapunov_spectrum(sys, TorusPoint(Vec::Constant(sys.dimension(), 0.377)), 10'000);
    double sum = 0;
    for (double e : sp.exponents) sum += e;
    CHECK(std::abs(sum) <= 0.01);
    CHECK(std::is_sorted(sp.exponents.rbegin(), sp.exponents.rend()));
  }
}

TEST_CASE("splitting estimates match the eigen-directions") {
  Vec eu(2);
  eu << 1.0, (std::sqrt(5.0) - 1.0) / 2.0;
  auto cat_split = estimate_splitting(make_system("cat"), TorusPoint{0.3, 0.6}, 100);
  CHECK(subspace_distance(cat_split.unstable(), Subspace::span(eu)) <= 1e-8);
  Vec es(2);
  es << 1.0, -(std::sqrt(5.0) + 1.0) / 2.0;
  CHECK(subspace_distance(cat_split.stable(), Subspace::span(es)) <= 1e-8);

  Vec fiber(3);
  fiber << 0, 0, 1;
  auto prod_split = estimate_splitting(make_system("cat_x_rot"), TorusPoint{0.3, 0.6, 0.1}, 100);
  CHECK(subspace_distance(prod_split.center(), Subspace::span(fiber)) <= 1e-8);

  try {
    estimate_splitting(make_system("rotation"), TorusPoint{0.1}, 100);
    FAIL("rotation has no gap");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::gap_violation);
  }
}

TEST_CASE("estimated unstable bundle is invariant") {
  std::mt19937_64 rng(41);
  for (const char* name : {"cat", "cat_x_rot", "cat_x_rot_perturbed"}) {
    auto sys = make_system(name);
    SplittingEstimator est(sys, 0.01, random_point(rng, sys.dimension()));
    for (int trial = 0; trial < 5; ++trial) {
      auto x = random_point(rng, sys.dimension());
      auto here = est.at(x, 1000);
      auto there = est.at(sys.step(x), 1000);
      Mat image = sys.jacobian(x) * here.unstable().basis();
      CHECK(subspace_distance(Subspace::span(image), there.unstable()) <= 1e-6);
      Mat cimage = sys.jacobian(x) * here.center_stable().basis();
      CHECK(subspace_distance(Subspace::span(cimage), there.center_stable()) <= 1e-6);
    }
  }
}

TEST_CASE("block params validation") {
  CHECK_NOTHROW(kExampleParams.validate());
  CHECK_THROWS_AS((BlockParams{0.96, 0.96, 0.001, 0.001, 0.2}.validate()), Error);
  CHECK_THROWS_AS((BlockParams{-0.1, 0.96, 0.001, 0.001, 0.01}.validate()), Error);
  CHECK_THROWS_AS((BlockParams{0.5, 0.96, 0.6, 0.001, 0.01}.validate()), Error);
}

TEST_CASE("linear systems sit in the first block") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = classify_block(make_system("cat_x_rot"), random_point(rng, 3), kExampleParams, 50);
    CHECK(c.kappa == 1);
    CHECK(c.margins.stable_forward >= 0.0);
    CHECK(c.margins.center_forward >= 0.0);
    auto d = classify_block(make_system("cat"), random_point(rng, 2), kExampleParams, 50);
    CHECK(d.kappa == 1);
    CHECK(std::isinf(d.margins.center_forward));
    CHECK(std::isinf(d.margins.center_backward));
  }
}

TEST_CASE("perturbed system block indices") {
  auto sys = make_system("cat_x_rot_perturbed");
  auto spec = lyapunov_spectrum(sys, TorusPoint{0.3, 0.2, 0.1}, 100'000);
  auto params = params_from_spectrum(spec, sys.bundle_dims(), 0.01);
  std::mt19937_64 rng(47);
  int certified = 0, above_one = 0;
  const int n = 300;
  for (int i = 0; i < n; ++i) {
    auto x = random_point(rng, 3);
    SplittingWindow w(sys, x, -50, 50, 200);
    try {
      auto c = classify_block(w, params, 50);
      ++certified;
      above_one += c.kappa > 1;
      // The block family is nested and kappa is minimal.
      CHECK(block_conditions_hold(w, params, 50, c.kappa));
      CHECK(block_conditions_hold(w, params, 50, c.kappa + 1));
      if (c.kappa > 1) CHECK_FALSE(block_conditions_hold(w, params, 50, c.kappa - 1));
      // Shorter windows test a subset of the conditions.
      auto shorter = classify_block(w, params, 20);
      CHECK(shorter.kappa <= c.kappa);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::no_block_index);
    }
  }
  CHECK(certified >= 0.99 * n);
  CHECK(above_one > 0);
}

TEST_CASE("certificates serialize") {
  auto c = classify_block(make_system("cat"), TorusPoint{0.2, 0.4}, kExampleParams, 10);
  auto j = to_json(c);
  CHECK(j["kappa"] == 1);
  CHECK(j["splitting"]["dims"] == nlohmann::json::array({1, 0, 1}));
  CHECK(j["witnessed_margins"]["center_forward"].is_null());
  CHECK(j["params"]["eps"] == 0.01);
}

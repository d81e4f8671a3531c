#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "qshadow/regularity.hpp"

using namespace qshadow;

namespace {

BlockParams sample_params() { return {0.96, 0.96, 0.001, 0.001, 0.01}; }

Subspace random_subspace(int d, int r, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Mat m(d, r);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < r; ++j) m(i, j) = g(rng);
  return Subspace::span(m);
}

}  // namespace

TEST_CASE("fractions follow the closed form for the cat map") {
  const SystemSpec cat = make_system("cat");
  const HolderBudget b = holder_constants(cat, sample_params());
  // a = 1.01 L^2 with L the golden-ratio square.
  CHECK(b.fractions[0] == doctest::Approx(0.3220329876825621).epsilon(1e-12));
  CHECK(b.fractions[1] == doctest::Approx(0.4828990248173224).epsilon(1e-12));
  CHECK(b.fractions[2] == doctest::Approx(b.fractions[0]));
  CHECK(b.fractions[3] == doctest::Approx(b.fractions[1]));
  CHECK(b.a1 == doctest::Approx(0.4828990248173224));
  CHECK(b.D == 0.0);
  CHECK(b.b1 == 0.0);
  CHECK(b.theta == doctest::Approx(b.a1));
}

TEST_CASE("a1 lies in (0, 1) and bounds every fraction") {
  const SystemSpec sys = make_system("cat_x_rot_perturbed");
  const HolderBudget b = holder_constants(sys, sample_params());
  CHECK(b.a1 > 0.0);
  CHECK(b.a1 < 1.0);
  for (double f : b.fractions) CHECK(f <= b.a1);
  CHECK(b.D > 0.0);
  CHECK(b.b2 == doctest::Approx(b.C1 * b.b1 * std::pow(3.0, b.a1)));
  HolderOptions opt;
  opt.theta_override = 0.1;
  CHECK(holder_constants(sys, sample_params(), opt).theta == 0.1);
}

TEST_CASE("bounds grow with the index and the separation") {
  const HolderBudget b = holder_constants(make_system("cat_x_rot_perturbed"), sample_params());
  for (int k = 1; k < 30; ++k) {
    CHECK(b.ambient_bound(k + 1, 1e-4) > b.ambient_bound(k, 1e-4));
    CHECK(b.adapted_bound(k + 1, 1e-4) > b.adapted_bound(k, 1e-4));
  }
  CHECK(b.ambient_bound(3, 1e-3) > b.ambient_bound(3, 1e-5));
}

TEST_CASE("nonpositive denominators are rejected") {
  const BlockParams p{3.0, 3.0, 2.5, 2.5, 0.01};
  CHECK_THROWS_AS(holder_constants(make_system("cat"), p), Error);
  try {
    holder_constants(make_system("cat"), p);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_argument);
  }
}

TEST_CASE("normed distance reduces to the projection distance for the Euclidean norm") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int ra = 1 + trial % 2, rb = ra;
    const Subspace a = random_subspace(3, ra, rng), b = random_subspace(3, rb, rng);
    const double ref = subspace_distance(a, b);
    const double got = normed_subspace_distance(a, b, euclidean_norm);
    CHECK(got == doctest::Approx(ref).epsilon(1e-6));
    CHECK(normed_subspace_distance(b, a, euclidean_norm) == doctest::Approx(got).epsilon(1e-9));
    CHECK(normed_subspace_distance(a, a, euclidean_norm) < 1e-8);
  }
}

TEST_CASE("linear systems have identical splittings at nearby points") {
  const SystemSpec cat = make_system("cat");
  const BlockParams p = params_from_spectrum(lyapunov_spectrum(cat, {0.1, 0.2}, 2000), cat.bundle_dims(), 0.01);
  const HolderBudget b = holder_constants(cat, p);
  const auto pairs = sample_holder_pairs(cat, p, ball_scale(cat, p), 12, 3);
  const HolderFitReport rep = empirical_holder_fit(cat, p, b, pairs, 50, 12);
  CHECK(rep.pair_pass_rate == 1.0);
  for (const HolderRow& r : rep.rows) CHECK(r.distance < 1e-12);
}

TEST_CASE("perturbed splittings respect the Hoelder budget") {
  const SystemSpec sys = make_system("cat_x_rot_perturbed");
  const BlockParams p = params_from_spectrum(lyapunov_spectrum(sys, {0.1, 0.2, 0.3}, 20000), sys.bundle_dims(), 0.01);
  const HolderBudget b = holder_constants(sys, p);
  const auto pairs = sample_holder_pairs(sys, p, ball_scale(sys, p), 20, 5);
  const HolderFitReport rep = empirical_holder_fit(sys, p, b, pairs, 50, 20);
  CHECK(rep.pairs_used == 20);
  CHECK(rep.pair_pass_rate >= 0.95);
  CHECK(rep.rows.size() == 200);
  CHECK(rep.angle_chain_ratio <= 1.0);

  const std::string path = "holder_report_test.csv";
  write_holder_csv(rep, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "pair_id,bundle,separation,distance,bound,pass,norm");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 200);

  CHECK_THROWS_AS(empirical_holder_fit(sys, p, b, pairs, 50, 21), Error);
}

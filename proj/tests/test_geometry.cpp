#include <doctest.h>

#include <cmath>
#include <random>

#include "qshadow/geometry.hpp"

using namespace qshadow;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// Brute-force distance over all representatives shifted by {-1,0,1}^d.
double brute_distance(const TorusPoint& x, const TorusPoint& y) {
  const int d = x.dim();
  double best = 1e9;
  int combos = 1;
  for (int i = 0; i < d; ++i) combos *= 3;
  for (int c = 0; c < combos; ++c) {
    int r = c;
    double s = 0;
    for (int i = 0; i < d; ++i) {
      const double shift = (r % 3) - 1;
      r /= 3;
      const double diff = y[i] + shift - x[i];
      s += diff * diff;
    }
    best = std::min(best, std::sqrt(s));
  }
  return best;
}

TorusPoint random_point(std::mt19937_64& rng, int d) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = u(rng);
  return TorusPoint(v);
}

}  // namespace

TEST_CASE("torus points wrap into the unit cube") {
  TorusPoint p{1.25, -0.25, -1e-18};
  CHECK(p[0] == doctest::Approx(0.25));
  CHECK(p[1] == doctest::Approx(0.75));
  CHECK(p[2] >= 0.0);
  CHECK(p[2] < 1.0);
  CHECK_THROWS_AS(TorusPoint(Vec(5)), Error);
}

TEST_CASE("torus distance") {
  TorusPoint x{0.3, 0.7};
  CHECK(torus_distance(x, x) == 0.0);
  CHECK(torus_distance(TorusPoint{0, 0}, TorusPoint{0.5, 0}) == doctest::Approx(0.5));
  const double frozen = 0.28284271247461906;
  CHECK(brute_distance(TorusPoint{0.1, 0.9}, TorusPoint{0.9, 0.1}) == doctest::Approx(frozen).epsilon(1e-14));
  CHECK(torus_distance(TorusPoint{0.1, 0.9}, TorusPoint{0.9, 0.1}) == doctest::Approx(frozen).epsilon(1e-14));
  CHECK_THROWS_AS(torus_distance(TorusPoint{0.1}, TorusPoint{0.1, 0.2}), Error);
}

TEST_CASE("torus distance agrees with shift enumeration and obeys the triangle inequality") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 1 + trial % 3;
    auto a = random_point(rng, d), b = random_point(rng, d), c = random_point(rng, d);
    CHECK(torus_distance(a, b) == doctest::Approx(brute_distance(a, b)).epsilon(1e-13));
    CHECK(torus_distance(a, c) <= torus_distance(a, b) + torus_distance(b, c) + 1e-12);
    CHECK(torus_distance(a, b) <= std::sqrt(d) / 2 + 1e-15);
    CHECK(torus_distance(a, b) == torus_distance(b, a));
  }
}

TEST_CASE("chart difference") {
  TorusPoint x{0.4, 0.6};
  CHECK(chart_difference(x, x).isZero(0.0));
  Vec w = chart_difference(TorusPoint{0.95, 0.5}, TorusPoint{0.05, 0.5});
  CHECK(w[0] == doctest::Approx(0.1));
  CHECK(w[1] == doctest::Approx(0.0));
  Vec n = chart_difference(TorusPoint{0.2, 0.2}, TorusPoint{0.3, 0.1});
  CHECK(n[0] == doctest::Approx(0.1));
  CHECK(n[1] == doctest::Approx(-0.1));
  CHECK_THROWS_AS(chart_difference(TorusPoint{0.0, 0.0}, TorusPoint{0.3, 0.0}), Error);
}

TEST_CASE("chart difference inverts translation") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.12, 0.12);
  for (int trial = 0; trial < 1000; ++trial) {
    auto anchor = random_point(rng, 2);
    auto y = translate(anchor, vec2(u(rng), u(rng)));
    auto back = translate(anchor, chart_difference(anchor, y));
    CHECK(torus_distance(back, y) <= 1e-15);
    CHECK(chart_difference(anchor, y).norm() == doctest::Approx(torus_distance(anchor, y)).epsilon(1e-14));
  }
}

TEST_CASE("subspace distance") {
  auto e1 = Subspace::span(vec2(1, 0));
  auto e2 = Subspace::span(vec2(0, 1));
  CHECK(subspace_distance(e1, e1) == doctest::Approx(0.0));
  CHECK(subspace_distance(e1, e2) == doctest::Approx(1.0));
  // Residual of e1 after projecting onto (1, 0.1)/sqrt(1.01): 0.1/sqrt(1.01).
  const double frozen = 0.099503719020998915;
  CHECK(subspace_distance(e1, Subspace::span(vec2(1, 0.1))) == doctest::Approx(frozen).epsilon(1e-13));
  CHECK_THROWS_AS(subspace_distance(e1, Subspace::zero(2)), Error);
  CHECK_THROWS_AS(Subspace::span(Mat::Ones(2, 2)), Error);
}

TEST_CASE("subspace distance is symmetric on random pairs") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 500; ++trial) {
    Mat a(4, 1 + trial % 3), b(4, 1 + (trial / 3) % 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = g(rng);
    auto A = Subspace::span(a), B = Subspace::span(b);
    CHECK(std::abs(subspace_distance(A, B) - subspace_distance(B, A)) <= 1e-12);
    CHECK((A.basis().transpose() * A.basis() - Mat::Identity(A.rank(), A.rank())).norm() <= 1e-12);
    CHECK(subspace_distance(A, A) == 0.0);
  }
}

TEST_CASE("splitting frame and decomposition") {
  Mat s(3, 1), c(3, 1), u(3, 1);
  s << 1, 0, 0;
  c << 0, 0, 1;
  u << 1, 1, 0;
  Splitting sp(Subspace::span(s), Subspace::span(c), Subspace::span(u));
  CHECK(sp.dims() == BundleDims{1, 1, 1});
  Vec v(3);
  v << 0.3, -1.2, 2.0;
  auto parts = sp.decompose(v);
  CHECK((parts.s + parts.c + parts.u - v).norm() <= 1e-14);
  CHECK(parts.c[0] == 0.0);
  CHECK_THROWS_AS(Splitting(Subspace::span(s), Subspace::span(s), Subspace::span(u)), Error);
}

TEST_CASE("cone membership") {
  auto base = Subspace::span(vec2(1, 0));
  auto comp = Subspace::span(vec2(0, 1));
  const double xi = 0.3;
  Cone cone(base, comp, xi);
  CHECK(cone_contains(vec2(2, 0), cone));
  CHECK(cone_contains(vec2(1, xi), cone));
  CHECK_FALSE(cone_contains(vec2(1, 2 * xi), cone));
  CHECK_THROWS_AS(cone_contains(vec2(0, 0), cone), Error);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 500; ++trial) {
    Vec v = vec2(g(rng), g(rng));
    const double t = g(rng) * 10;
    if (t == 0.0) continue;
    CHECK(cone_contains(v, cone) == cone_contains(Vec(t * v), cone));
  }
}

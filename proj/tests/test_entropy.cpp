#include <doctest.h>

#include <cmath>
#include <fstream>

#include "qshadow/entropy.hpp"

using namespace qshadow;

namespace {

struct Setup {
  explicit Setup(const std::string& name)
      : system(make_system(name)),
        params{0.96, 0.96, 0.001, 0.001, 0.01},
        budget(holder_constants(system, params)),
        ball(ball_scale(system, params)),
        scales(make_shadow_scales(system, params, budget, ball, 0.1, 0.1, default_cone_ratio(params))),
        certifier(system, params) {}
  SystemSpec system;
  BlockParams params;
  HolderBudget budget;
  BallScale ball;
  ShadowScales scales;
  Certifier certifier;
};

// t_n = trace(A^n) for the cat matrix via t_n = 3 t_{n-1} - t_{n-2}.
double cat_trace(long n) {
  double a = 2.0, b = 3.0;
  for (long i = 1; i < n; ++i) {
    const double c = 3.0 * b - a;
    a = b;
    b = c;
  }
  return n == 0 ? 2.0 : b;
}

const TorusPoint& ref_start() {
  static const TorusPoint p{0.1234567, 0.7654321, 0.3141592};
  return p;
}

TorusPoint start_for(const SystemSpec& s) {
  Vec c(s.dimension());
  for (int i = 0; i < s.dimension(); ++i) c[i] = ref_start()[i];
  return TorusPoint(c);
}

}  // namespace

TEST_CASE("uniform samples are deterministic and in the unit cube") {
  const auto a = uniform_samples(3, 100, 9);
  const auto b = uniform_samples(3, 100, 9);
  const auto c = uniform_samples(3, 100, 10);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const TorusPoint& p : a) {
    for (int i = 0; i < 3; ++i) CHECK((p[i] >= 0.0 && p[i] < 1.0));
  }
}

TEST_CASE("Bowen distance matches iterated torus distances") {
  const SystemSpec cat = make_system("cat");
  const auto pts = uniform_samples(2, 20, 4);
  const OrbitTable t(cat, pts, 6);
  for (int i = 0; i < 5; ++i) {
    for (int j = 10; j < 15; ++j) {
      double worst = 0.0;
      for (int s = 0; s < 6; ++s) {
        worst = std::max(worst, torus_distance(evaluate(cat, pts[i], s), evaluate(cat, pts[j], s)));
      }
      CHECK(t.bowen_distance(i, j, 6) == doctest::Approx(worst).epsilon(1e-12));
      CHECK(t.bowen_within(i, j, 6, worst * 1.0001));
      CHECK_FALSE(t.bowen_within(i, j, 6, worst * 0.9999));
    }
  }
}

TEST_CASE("covers and separated sets bracket each other") {
  const SystemSpec cat = make_system("cat");
  const auto pts = uniform_samples(2, 5000, 11);
  const OrbitTable t(cat, pts, 6);
  std::vector<int> order(pts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  long prev = 0;
  for (int n = 1; n <= 6; ++n) {
    const long fine = greedy_bowen_cover(t, n, 0.05, 0.1);
    const long coarse = greedy_bowen_cover(t, n, 0.1, 0.1);
    const auto sep = separated_subset(t, n, 0.05, order);
    CHECK(coarse <= fine);
    CHECK(fine >= prev);
    CHECK(static_cast<long>(sep.size()) >= greedy_bowen_cover(t, n, 0.1, 0.0));
    for (std::size_t a = 0; a < std::min<std::size_t>(sep.size(), 60); ++a) {
      for (std::size_t b = 0; b < a; ++b) CHECK(t.bowen_distance(sep[a], sep[b], n) > 0.05);
    }
    prev = fine;
  }
  CHECK(greedy_bowen_cover(t, 3, 0.05, 0.0) >= greedy_bowen_cover(t, 3, 0.05, 0.5));
  CHECK_THROWS_AS(greedy_bowen_cover(t, 7, 0.05, 0.1), Error);
}

TEST_CASE("rotation has no entropy") {
  const SystemSpec rot = make_system("rotation");
  const EntropyEstimate e = katok_entropy(rot, uniform_samples(1, 4000, 2), 0.05, 0.1, 4, 16);
  CHECK(e.h_hat <= 0.02);
  CHECK(e.rows.front().N_cover == e.rows.back().N_cover);
  for (const EntropyRow& r : e.rows) CHECK(r.N_separated >= r.N_cover_double);
}

TEST_CASE("entropy estimate needs an unsaturated range") {
  const SystemSpec cat = make_system("cat");
  const auto pts = uniform_samples(2, 3000, 2);
  try {
    katok_entropy(cat, pts, 0.05, 0.1, 6, 10);
    FAIL("expected a sample budget error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::sample_budget);
  }
  CHECK_THROWS_AS(katok_entropy(cat, pts, 0.2, 0.1, 1, 3), Error);
}

TEST_CASE("entropy CSV layout") {
  const SystemSpec rot = make_system("rotation");
  const EntropyEstimate e = katok_entropy(rot, uniform_samples(1, 1000, 2), 0.05, 0.1, 1, 3);
  write_entropy_csv(e, "entropy_test.csv");
  std::ifstream in("entropy_test.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "n,N_cover,N_separated");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 3);
}

TEST_CASE("exact periodic counts follow the trace recurrence") {
  const SystemSpec cat = make_system("cat");
  const double expected[] = {1, 5, 16, 45, 121, 320};
  for (long n = 1; n <= 6; ++n) {
    CHECK(periodic_point_count(cat, n) == expected[n - 1]);
    CHECK(periodic_point_count(cat, n) == cat_trace(n) - 2.0);
  }
  CHECK(periodic_point_count(cat, 20) == cat_trace(20) - 2.0);
  CHECK_THROWS_AS(periodic_point_count(make_system("cat_x_rot"), 3), Error);
}

TEST_CASE("Kendall tau") {
  CHECK(kendall_tau({1, 2, 3, 4}) == doctest::Approx(1.0));
  CHECK(kendall_tau({4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(kendall_tau({1, 1, 1}) == 0.0);
  // 5 concordant, 1 discordant, no ties.
  CHECK(kendall_tau({1, 3, 2, 4}) == doctest::Approx(4.0 / 6.0));
}

TEST_CASE("K_n members recheck and harvest genuine periodic points on the cat map") {
  const Setup s("cat");
  const OrbitTable t(s.system, uniform_samples(2, 20000, 3), 12);
  const KnSet kn = build_Kn(s.system, s.certifier, t, 1, 0.25, 2.0, 8, 0.1);
  REQUIRE(kn.members.size() >= 1);
  CHECK(kn.lambda_k == 20000);
  CHECK(kn.mesh * std::sqrt(2.0) < kn.beta);
  CHECK(kn_violations(s.system, s.certifier, kn).empty());

  const SeparatedQPPSet h = harvest_quasi_periodic(s.system, s.certifier, kn, s.scales);
  REQUIRE(h.count() >= 1);
  const long p = h.points.front().period;
  CHECK(static_cast<double>(h.count()) <= periodic_point_count(s.system, p));
  for (const QuasiPeriodicPoint& q : h.points) {
    CHECK(q.period == p);
    CHECK(torus_distance(evaluate(s.system, q.y, p), q.y) < 1e-12);
    CHECK(q.center_disp == 0.0);
  }
  CHECK(qpp_violations(s.system, s.certifier, h, 0.1).empty());

  CHECK_THROWS_AS(build_Kn(s.system, s.certifier, t, 1, 0.25, 2.0, 10, 0.1), Error);
}

TEST_CASE("K_n on the rotation is limited by circle packing") {
  const SystemSpec rot = make_system("rotation", {{"alpha_rot", 0.001}});
  const Certifier cert(rot, {0.5, 0.5, 0.001, 0.001, 0.01});
  const OrbitTable t(rot, uniform_samples(1, 5000, 3), 12);
  const double l = 4.0;
  const KnSet kn = build_Kn(rot, cert, t, 1, 0.25, l, 8, 0.1);
  CHECK(kn.lambda_kn >= 0.8 * kn.lambda_k);
  CHECK(kn.members.size() <= static_cast<std::size_t>(std::ceil(l)));
  CHECK(kn_violations(rot, cert, kn).empty());
}

TEST_CASE("separated quasi-periodic counts") {
  SUBCASE("cat map at period 5 finds every fixed point of A^5") {
    const Setup s("cat");
    const ReferenceOrbit ref(s.system, start_for(s.system), 400000, 0.02);
    const SeparatedQPPSet q = count_separated_qpp(s.system, s.certifier, ref, 5, 0.05, s.scales);
    CHECK(q.count() <= 121);
    CHECK(q.count() >= 61);
    CHECK(qpp_violations(s.system, s.certifier, q, 0.1).empty());
  }
  SUBCASE("cat x rotation carries a circle of quasi-periodic points per base point") {
    const Setup s("cat_x_rot");
    const ReferenceOrbit ref(s.system, start_for(s.system), 400000, 0.02);
    long prev = 0;
    for (double eps : {0.2, 0.1, 0.05}) {
      const SeparatedQPPSet q = count_separated_qpp(s.system, s.certifier, ref, 4, eps, s.scales);
      CHECK(static_cast<long>(q.count()) >= prev);
      CHECK(static_cast<double>(q.count()) > 45.0);
      CHECK(static_cast<double>(q.count()) <= 45.0 * std::ceil(1.0 / eps));
      prev = static_cast<long>(q.count());
      if (eps == 0.05) CHECK(qpp_violations(s.system, s.certifier, q, 0.1).empty());
    }
  }
  SUBCASE("rotation counts by packing") {
    const SystemSpec rot = make_system("rotation");
    const Certifier cert(rot, {0.5, 0.5, 0.001, 0.001, 0.01});
    const ReferenceOrbit ref(rot, TorusPoint{0.3}, 200000, 0.01);
    for (double eps : {0.05, 0.1, 0.15}) {
      const SeparatedQPPSet q = count_separated_qpp(rot, cert, ref, 7, eps, ShadowScales{});
      CHECK(q.packing_only);
      CHECK(q.count() == static_cast<std::size_t>(std::ceil(1.0 / eps) - 1.0));
    }
  }
}

TEST_CASE("growth check on the cat map uses exact counts") {
  const Setup s("cat");
  const ReferenceOrbit ref(s.system, start_for(s.system), 1000, 0.1);
  EntropyEstimate e;
  e.h_hat = 0.9;
  TheoremCOptions opt;
  const TheoremCReport r = theorem_c_check(s.system, s.certifier, ref, e, s.scales, opt);
  // Least-squares slope of ln(t_n - 2) over n = 4..14.
  double mx = 9.0, sxy = 0.0, sxx = 0.0, my = 0.0;
  for (int n = 4; n <= 14; ++n) my += std::log(cat_trace(n) - 2.0) / 11.0;
  for (int n = 4; n <= 14; ++n) {
    sxy += (n - mx) * (std::log(cat_trace(n) - 2.0) - my);
    sxx += (n - mx) * (n - mx);
  }
  for (double rate : r.rates) CHECK(rate == doctest::Approx(sxy / sxx).epsilon(1e-12));
  CHECK(r.rates.front() == doctest::Approx(std::log((3.0 + std::sqrt(5.0)) / 2.0)).epsilon(2e-3));
  CHECK(r.pass);
  write_qpp_csv(r, "qpp_test.csv");
  std::ifstream in("qpp_test.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "n,epsilon,count,rate_fit");
  const nlohmann::json j = r.to_json();
  CHECK(j.contains("h_hat"));
  CHECK(j["rates"].size() == 4);
}

TEST_CASE("Lambda_{k,n} fraction grows with n on cat x rotation") {
  const Setup s("cat_x_rot");
  const OrbitTable t(s.system, uniform_samples(3, 20000, 5), 21);
  TheoremCReport r;
  lambda_kn_trend(s.system, s.certifier, t, 1, 0.25, 0.2, {4, 6, 8, 10, 12, 14, 16}, r);
  CHECK(r.trend_tau > 0.0);
  CHECK(r.trend_pass);
}

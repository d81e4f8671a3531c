#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "qshadow/shadowing.hpp"

using namespace qshadow;

namespace {

BlockParams probe_params(const SystemSpec& sys) {
  const TorusPoint probe = sys.dimension() == 2 ? TorusPoint{0.1, 0.2} : TorusPoint{0.1, 0.2, 0.3};
  return params_from_spectrum(lyapunov_spectrum(sys, probe, 20000), sys.bundle_dims(), 0.01);
}

struct Setup {
  explicit Setup(const std::string& name, int k_max = 64)
      : system(make_system(name)),
        params(probe_params(system)),
        budget(holder_constants(system, params)),
        ball(ball_scale(system, params)),
        scales(make_shadow_scales(system, params, budget, ball, 0.1, 0.1, default_cone_ratio(params))),
        certifier(system, params, 50, {k_max, 200}) {}
  SystemSpec system;
  BlockParams params;
  HolderBudget budget;
  BallScale ball;
  ShadowScales scales;
  Certifier certifier;
};

double golden() { return 0.5 * (1.0 + std::sqrt(5.0)); }

const double kAlphaRot = std::sqrt(2.0) / 1000.0;

}  // namespace

TEST_CASE("schedule constants follow their closed forms") {
  const Setup s("cat_x_rot_perturbed");
  const ShadowScales& sc = s.scales;
  for (int k : {1, 4, 9}) {
    const double d = sc.delta_holder(k);
    CHECK(sc.b2 * std::exp(6.0 * k * sc.eps) * std::pow(d, sc.holder_exponent) ==
          doctest::Approx((1.0 - sc.sigma) * sc.xi).epsilon(1e-10));
    const double expected = 0.5 * sc.gamma * (1.0 - std::exp(-sc.lambda3 + sc.rate / sc.theta)) / sc.C *
                            std::exp(-(1.0 + 1.0 / sc.theta) * k * sc.rate);
    CHECK(sc.delta_junction(k) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(sc.delta_certified(k) <= d);
    CHECK(sc.delta_certified(k + 1) < sc.delta_certified(k));
  }
  CHECK(sc.gamma == doctest::Approx(std::pow(sc.eps0 * sc.eta / (3.0 * sc.C2), 1.0 / sc.theta)).epsilon(1e-12));
  CHECK(sc.C2 == doctest::Approx(2.0 * s.system.derivative_bound() * 2.0));
  const Setup c("cat");
  CHECK(std::isinf(c.scales.delta_holder(1)));
  CHECK_THROWS_AS(make_shadow_scales(c.system, c.params, c.budget, c.ball, 0.0, 0.1, 0.5), Error);
  CHECK_THROWS_AS(make_shadow_scales(c.system, c.params, c.budget, c.ball, 0.1, 0.1, 1.0), Error);
}

TEST_CASE("generated pseudo-orbits satisfy the stored invariants") {
  const Setup s("cat_x_rot_perturbed");
  const auto sources = certified_sources(s.system, s.certifier, 10, 3);
  PseudoOrbitRequest rq;
  rq.segments = 40;
  rq.min_length = rq.max_length = 10;
  rq.rho = 0.5;
  const auto schedule = practical_schedule(s.scales, 64);
  const PseudoOrbit po = generate_pseudo_orbit(s.system, s.certifier, sources, rq, schedule, 17);
  CHECK(pseudo_orbit_violations(s.system, po).empty());
  CHECK(po.junction_count() == 39);
  for (int n = 0; n < po.junction_count(); ++n) {
    CHECK(po.jumps[n].norm() <= 0.5 * po.delta(po.segments[n].s_plus));
    CHECK(po.jumps[n].norm() > 0.0);
  }

  const PseudoOrbit again = generate_pseudo_orbit(s.system, s.certifier, sources, rq, schedule, 17);
  for (int n = 0; n < po.junction_count(); ++n) CHECK(again.jumps[n] == po.jumps[n]);

  PseudoOrbit broken = po;
  broken.segments[3].points[2] = translate(broken.segments[3].points[2], Vec::Constant(3, 1e-12));
  CHECK_FALSE(pseudo_orbit_violations(s.system, broken).empty());
  PseudoOrbit far = po;
  far.delta_schedule = constant_schedule(1e-30, 64);
  CHECK_FALSE(pseudo_orbit_violations(s.system, far).empty());

  CHECK_THROWS_AS(make_segment(s.system, s.certifier, sources[0], 0), Error);
}

TEST_CASE("single-block systems use one schedule entry") {
  const Setup s("cat_x_rot");
  const auto sources = certified_sources(s.system, s.certifier, 5, 4);
  const PseudoOrbit po =
      generate_pseudo_orbit(s.system, s.certifier, sources, {}, certified_schedule(s.scales, 64), 5);
  for (const Segment& seg : po.segments) {
    CHECK(seg.s_minus == 1);
    CHECK(seg.s_plus == 1);
  }
  for (const Vec& j : po.jumps) CHECK(j.norm() < po.delta(1));
}

TEST_CASE("a true orbit shadows itself") {
  const Setup s("cat_x_rot_perturbed");
  const auto sources = certified_sources(s.system, s.certifier, 3, 6);
  PseudoOrbitRequest rq;
  rq.rho = 0.0;
  rq.segments = 10;
  const PseudoOrbit po = generate_pseudo_orbit(s.system, s.certifier, sources, rq, practical_schedule(s.scales, 64), 7);
  for (const Vec& j : po.jumps) CHECK(j.norm() == 0.0);
  const ShadowResult r = quasi_shadow_solve(s.system, po, s.scales);
  CHECK(r.iterations == 0);
  CHECK(r.converged);
  for (const Vec& c : r.offsets) CHECK(c.norm() == 0.0);
  CHECK(r.max_center_disp() == 0.0);
}

TEST_CASE("cat map pseudo-orbits match the eigencoordinate solution") {
  const Setup s("cat");
  const auto sources = certified_sources(s.system, s.certifier, 5, 8);
  PseudoOrbitRequest rq;
  rq.segments = 100;
  rq.min_length = rq.max_length = 1;
  rq.rho = 1.0;
  const double delta = 1e-6;
  const PseudoOrbit po = generate_pseudo_orbit(s.system, s.certifier, sources, rq, constant_schedule(delta, 64), 9);
  const ShadowResult r = quasi_shadow_solve(s.system, po, s.scales);
  CHECK(r.iterations == 1);
  CHECK(r.final_residual <= 1e-12);
  CHECK(r.sup_error() <= 4.0 * delta);
  CHECK(r.max_center_disp() == 0.0);

  // Orthonormal eigenvectors of the symmetric cat matrix.
  const double lu = golden() * golden(), ls = 1.0 / lu;
  Vec eu(2), es(2);
  eu << 1.0, lu - 2.0;
  es << 1.0, ls - 2.0;
  eu.normalize();
  es.normalize();
  const std::size_t N = po.segments.size();
  std::vector<double> sig(N, 0.0), ups(N, 0.0);
  for (std::size_t n = 0; n + 1 < N; ++n) sig[n + 1] = ls * sig[n] + es.dot(po.jumps[n]);
  for (std::size_t n = N - 1; n-- > 0;) ups[n] = (ups[n + 1] - eu.dot(po.jumps[n])) / lu;
  double worst = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const Vec expect = sig[n] * es + ups[n] * eu;
    worst = std::max(worst, (r.offsets[n] - expect).norm());
  }
  CHECK(worst <= 1e-12 * delta);
  for (double res : r.su_residuals) CHECK(res <= 1e-10);
  CHECK(verify_quasi_shadow(s.system, po, r, s.scales).pass);
}

TEST_CASE("fiber jumps on the product system are pure center") {
  const Setup s("cat_x_rot");
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> small(-1e-3, 1e-3);
  std::vector<Segment> segs;
  TorusPoint x{0.31, 0.47, 0.2};
  std::vector<double> fiber;
  for (int n = 0; n < 12; ++n) {
    segs.push_back(make_segment(s.system, s.certifier, x, 1 + n % 4));
    const double t = small(rng);
    fiber.push_back(t);
    x = translate(segs.back().points.back(), Vec{{0.0, 0.0, t}});
  }
  const PseudoOrbit po = assemble_pseudo_orbit(std::move(segs), constant_schedule(1e-2, 64), false);
  const ShadowResult r = quasi_shadow_solve(s.system, po, s.scales);
  for (const Vec& c : r.offsets) CHECK(c.norm() <= 1e-12);
  for (int n = 0; n < po.junction_count(); ++n) {
    CHECK((r.center_displacements[n] - po.jumps[n]).norm() <= 1e-12);
    CHECK(std::abs(po.jumps[n][2] + fiber[n]) <= 1e-15);
  }
  CHECK(r.cumulative_center_disp() > r.max_center_disp());
}

TEST_CASE("perturbed pseudo-orbits converge and pass verification") {
  const Setup s("cat_x_rot_perturbed");
  const auto sources = certified_sources(s.system, s.certifier, 10, 13);
  const auto schedule = practical_schedule(s.scales, 64);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const PseudoOrbit po = generate_pseudo_orbit(s.system, s.certifier, sources, {}, schedule, seed);
    const ShadowResult r = quasi_shadow_solve(s.system, po, s.scales);
    CHECK(r.converged);
    CHECK(r.center_leak <= 1e-12);
    const ShadowVerification v = verify_quasi_shadow(s.system, po, r, s.scales);
    CHECK(v.pass);
    CHECK(v.segment_margins.size() == po.segments.size());

    // Push one start off along E^u by twice the target scale.
    ShadowResult bad = r;
    const Segment& seg = po.segments[5];
    bad.offsets[5] += 2.0 * r.eps_scale[5] * seg.splitting.unstable().basis().col(0);
    const ShadowVerification vb = verify_quasi_shadow(s.system, po, bad, s.scales);
    CHECK_FALSE(vb.pass);
    CHECK(vb.segment_margins[5] < 0.0);
  }
}

TEST_CASE("divergence and contract failures are distinct") {
  const Setup s("cat_x_rot_perturbed");
  const auto sources = certified_sources(s.system, s.certifier, 3, 14);
  const PseudoOrbit po =
      generate_pseudo_orbit(s.system, s.certifier, sources, {}, practical_schedule(s.scales, 64), 15);
  ShadowOptions opt;
  opt.max_iter = 0;
  try {
    quasi_shadow_solve(s.system, po, s.scales, opt);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::divergence);
  }

  PseudoOrbitRequest rq;
  rq.rho = 1.0;
  const PseudoOrbit wide =
      generate_pseudo_orbit(s.system, s.certifier, sources, rq, practical_schedule(s.scales, 64, 40.0), 15);
  try {
    quasi_shadow_solve(s.system, wide, s.scales);
    FAIL("expected a contract failure");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::contract_failure);
  }
  opt = {};
  opt.strict = false;
  const ShadowResult r = quasi_shadow_solve(s.system, wide, s.scales, opt);
  CHECK_FALSE(r.converged);
  CHECK_FALSE(verify_quasi_shadow(s.system, wide, r, s.scales).pass);
}

TEST_CASE("shadowing error grows linearly with the jump fraction") {
  const Setup s("cat_x_rot");
  const auto sources = certified_sources(s.system, s.certifier, 5, 16);
  const auto schedule = certified_schedule(s.scales, 64);
  std::vector<double> rho, err;
  for (int i = 1; i <= 10; ++i) {
    PseudoOrbitRequest rq;
    rq.rho = 0.1 * i;
    const PseudoOrbit po = generate_pseudo_orbit(s.system, s.certifier, sources, rq, schedule, 21);
    const ShadowResult r = quasi_shadow_solve(s.system, po, s.scales);
    CHECK(verify_quasi_shadow(s.system, po, r, s.scales).pass);
    rho.push_back(rq.rho);
    err.push_back(r.sup_error());
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rho.size(); ++i) mx += rho[i], my += err[i];
  mx /= rho.size();
  my /= rho.size();
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < rho.size(); ++i) sxx += (rho[i] - mx) * (rho[i] - mx), sxy += (rho[i] - mx) * (err[i] - my);
  const double slope = sxy / sxx;
  CHECK(slope >= schedule[0] / 4.0);
  CHECK(slope <= schedule[0] * 4.0);
}

TEST_CASE("closing a fixed point and a period-5 recurrence of the cat map") {
  const Setup s("cat");
  const ClosingResult fixed = quasi_close(s.system, s.certifier, TorusPoint{0.0, 0.0}, 1, s.scales, 0.05);
  CHECK(fixed.shadow.offsets[0].norm() == 0.0);
  CHECK(fixed.shadow.max_center_disp() == 0.0);

  // (A^5 - I) y = (-1, 0) mod 1 gives the period-5 point (88, 55) / 121.
  const TorusPoint y5{88.0 / 121.0, 55.0 / 121.0};
  const double ls = 1.0 / (golden() * golden());
  Vec es(2);
  es << 1.0, ls - 2.0;
  es.normalize();
  const TorusPoint x = translate(y5, 1e-7 / (1.0 - std::pow(ls, 5)) * es);
  CHECK(torus_distance(x, evaluate(s.system, x, 5)) == doctest::Approx(1e-7).epsilon(1e-6));
  const ClosingResult r = quasi_close(s.system, s.certifier, x, 5, s.scales, 1e-6);
  const TorusPoint& y = r.shadow.starts[0];
  CHECK(torus_distance(y, x) <= 4e-7);
  CHECK(torus_distance(y, y5) <= 1e-14);
  CHECK(r.period_defect <= 1e-12);
  CHECK(r.shadow.max_center_disp() == 0.0);

  CHECK_THROWS_AS(quasi_close(s.system, s.certifier, TorusPoint{0.3, 0.1}, 5, s.scales, 1e-3), Error);
}

TEST_CASE("closing on the product system leaves the fiber drift as center displacement") {
  const Setup s("cat_x_rot");
  const ClosingResult r =
      quasi_close(s.system, s.certifier, TorusPoint{88.0 / 121.0, 55.0 / 121.0, 0.4}, 5, s.scales, 0.05);
  CHECK(r.shadow.offsets[0].norm() <= 1e-12);
  const Vec u = r.shadow.center_displacements[0];
  CHECK(std::abs(std::abs(u[2]) - 5.0 * kAlphaRot) <= 1e-8);
  CHECK(std::hypot(u[0], u[1]) <= 1e-8);
  CHECK(r.shadow.su_residuals[0] <= 1e-8);
  CHECK(r.shadow.cone_pass[0]);
}

TEST_CASE("exhaustive closing finds every period-3 point") {
  const Setup s("cat");
  const ClosingSweep sweep = exhaustive_closing(s.system, s.certifier, s.scales, 3, {400}, 0.05);
  // #Fix(A^3) = trace(A^3) - 2 with traces 3, 7, 18.
  CHECK(sweep.distinct.size() == 16);
  CHECK(sweep.failures == 0);
  CHECK(sweep.max_period_defect <= 1e-12);
}

TEST_CASE("reference orbit neighbourhoods match brute force") {
  const SystemSpec sys = make_system("cat_x_rot");
  const ReferenceOrbit ref(sys, TorusPoint{0.1, 0.2, 0.3}, 20000, 0.05);
  std::mt19937_64 rng(30);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const TorusPoint c{unit(rng), unit(rng), unit(rng)};
    std::vector<long> brute;
    for (long t = 0; t < ref.size(); ++t)
      if (torus_distance(c, ref.at(t)) < 0.08) brute.push_back(t);
    CHECK(ref.near(c, 0.08) == brute);
  }
  CHECK(ref.at(7) == evaluate(sys, TorusPoint{0.1, 0.2, 0.3}, 7));
}

TEST_CASE("specification glues two segments through reference transitions") {
  const Setup s("cat_x_rot");
  const ReferenceOrbit ref(s.system, TorusPoint{0.123, 0.456, 0.789}, 500000, 0.05);
  const std::vector<std::pair<TorusPoint, long>> pieces{{TorusPoint{0.1, 0.1, 0.5}, 8}, {TorusPoint{0.6, 0.7, 0.5}, 8}};
  const SpecificationResult r = quasi_specification(s.system, s.certifier, pieces, ref, 0.05, 40, s.scales);
  CHECK(r.transitions.size() == 2);
  for (long X : r.transitions) {
    CHECK(X >= 1);
    CHECK(X <= 40);
  }
  CHECK(r.pseudo.periodic);
  CHECK(r.pseudo.segments.size() == 4);
  CHECK(r.shadow.converged);
  CHECK(verify_quasi_shadow(s.system, r.pseudo, r.shadow, s.scales).pass);

  const TorusPoint fixed{0.0, 0.0, 0.5};
  const SpecificationResult one = quasi_specification(s.system, s.certifier, {{fixed, 3}}, ref, 0.05, 40, s.scales);
  CHECK(one.transitions == std::vector<long>{0});
  CHECK(one.pseudo.segments.size() == 1);

  CHECK_THROWS_AS(quasi_specification(s.system, s.certifier, pieces, ref, 1e-4, 40, s.scales), Error);
}

TEST_CASE("segments outside the admissible blocks are rejected") {
  const Setup s("cat_x_rot_perturbed", 1);
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TorusPoint hard;
  for (int i = 0; i < 500; ++i) {
    const TorusPoint x{unit(rng), unit(rng), unit(rng)};
    try {
      s.certifier(x);
    } catch (const Error&) {
      hard = x;
      break;
    }
  }
  REQUIRE(hard.dim() == 3);
  const ReferenceOrbit ref(s.system, TorusPoint{0.1, 0.2, 0.3}, 1000, 0.05);
  try {
    quasi_specification(s.system, s.certifier, {{hard, 5}}, ref, 0.05, 10, s.scales);
    FAIL("expected a precondition error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::precondition);
  }
}

TEST_CASE("trace and junction files carry the documented columns") {
  const Setup s("cat_x_rot");
  const auto sources = certified_sources(s.system, s.certifier, 3, 40);
  PseudoOrbitRequest rq;
  rq.segments = 5;
  const PseudoOrbit po = generate_pseudo_orbit(s.system, s.certifier, sources, rq, certified_schedule(s.scales, 64), 41);
  const ShadowResult r = quasi_shadow_solve(s.system, po, s.scales);
  write_shadow_trace(s.system, po, r, "trace_test.csv");
  write_junctions(po, r, "junction_test.csv");
  std::ifstream t("trace_test.csv"), j("junction_test.csv");
  std::string header;
  std::getline(t, header);
  CHECK(header == "segment,step,x_0,x_1,x_2,y_0,y_1,y_2,step_error,eps_scale,pass");
  long rows = 0;
  for (std::string line; std::getline(t, line);) ++rows;
  long expected = 0;
  for (const Segment& seg : po.segments) expected += seg.length + 1;
  CHECK(rows == expected);
  std::getline(j, header);
  CHECK(header == "junction,jump_norm,center_disp_norm,su_residual,cone_pass");
  const nlohmann::json js = shadow_summary(po, r, s.scales);
  for (const char* key : {"converged", "iterations", "sup_error", "max_center_disp", "eta", "xi", "gamma",
                          "delta_schedule"}) {
    CHECK(js.contains(key));
  }
}

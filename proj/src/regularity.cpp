#include "qshadow/regularity.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "qshadow/csv.hpp"

namespace qshadow {

namespace {

constexpr double kGolden = 0.6180339887498949;

// Minimum of a convex function on [lo, hi]; `hint` is evaluated as well.
template <typename Fn>
double golden_min(Fn&& fn, double lo, double hi, double tol, double hint) {
  const double at_hint = fn(hint);
  double x1 = hi - kGolden * (hi - lo), x2 = lo + kGolden * (hi - lo);
  double f1 = fn(x1), f2 = fn(x2);
  while (hi - lo > tol) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kGolden * (hi - lo);
      f1 = fn(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kGolden * (hi - lo);
      f2 = fn(x2);
    }
  }
  return std::min({f1, f2, fn(0.5 * (lo + hi)), at_hint});
}

Vec random_unit(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = g(rng);
  return v / v.norm();
}

// min over w in B of norm(v - w); B has rank <= 2.
double distance_to(const Vec& v, const Subspace& b, const NormFn& norm) {
  const double nv = norm(v);
  if (b.rank() == 0) return nv;
  const Vec c0 = b.basis().transpose() * v;
  const double R = 6.0 * std::max(nv, v.norm());
  const double tol = 1e-10 * R + 1e-300;
  if (b.rank() == 1) {
    const Vec e = b.basis().col(0);
    return golden_min([&](double t) { return norm(v - t * e); }, c0[0] - R, c0[0] + R, tol, c0[0]);
  }
  if (b.rank() > 2) throw Error(Errc::invalid_argument, "normed_subspace_distance supports ranks up to 2");
  const Vec e0 = b.basis().col(0), e1 = b.basis().col(1);
  return golden_min(
      [&](double t0) {
        const Vec r = v - t0 * e0;
        return golden_min([&](double t1) { return norm(r - t1 * e1); }, c0[1] - R, c0[1] + R, tol, c0[1]);
      },
      c0[0] - R, c0[0] + R, tol, c0[0]);
}

double one_sided(const Subspace& a, const Subspace& b, const NormFn& norm) {
  if (a.rank() == 0) return 0.0;
  auto at_unit = [&](const Vec& v) { return distance_to(v / norm(v), b, norm); };
  if (a.rank() == 1) return at_unit(a.basis().col(0));
  if (a.rank() > 2) throw Error(Errc::invalid_argument, "normed_subspace_distance supports ranks up to 2");
  const Vec e0 = a.basis().col(0), e1 = a.basis().col(1);
  auto along = [&](double phi) { return at_unit(std::cos(phi) * e0 + std::sin(phi) * e1); };
  constexpr int kAngles = 32;
  const double step = std::numbers::pi / kAngles;
  double best = -1.0, best_phi = 0.0;
  for (int i = 0; i < kAngles; ++i) {
    const double val = along(i * step);
    if (val > best) best = val, best_phi = i * step;
  }
  const double refined = -golden_min([&](double phi) { return -along(phi); }, best_phi - step, best_phi + step, 1e-8, best_phi);
  return std::max(best, refined);
}

const char* const kBundles[5] = {"s", "cs", "c", "cu", "u"};

Subspace bundle(const Splitting& sp, int i) {
  switch (i) {
    case 0: return sp.stable();
    case 1: return sp.center_stable();
    case 2: return sp.center();
    case 3: return sp.center_unstable();
    default: return sp.unstable();
  }
}

double fit_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) mx += xs[i], my += ys[i];
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  return sxx > 1e-12 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

double HolderBudget::ambient_bound(int k, double separation) const {
  return b1 * std::exp(4.0 * k * eps) * std::pow(separation, exponent());
}

double HolderBudget::adapted_bound(int k, double separation) const {
  return b2 * std::exp(6.0 * k * eps) * std::pow(separation, exponent());
}

HolderBudget holder_constants(const SystemSpec& system, const BlockParams& p, const HolderOptions& options) {
  p.validate();
  HolderBudget out;
  out.alpha = system.holder_exponent();
  out.eps = p.eps;
  const double L = system.derivative_bound();
  out.a = 1.01 * std::pow(L, 1.0 + out.alpha);

  if (!system.is_linear()) {
    const int d = system.dimension();
    const int g = options.grid_per_axis;
    std::mt19937_64 rng(0x486f6c646572ULL);
    double worst = 0.0;
    long total = 1;
    for (int i = 0; i < d; ++i) total *= g;
    for (long idx = 0; idx < total; ++idx) {
      Vec c(d);
      long rem = idx;
      for (int i = 0; i < d; ++i, rem /= g) c[i] = (rem % g + 0.5) / g;
      const TorusPoint x(c);
      for (double h : {1e-2, 1e-3, 1e-4}) {
        const Vec off = h * random_unit(d, rng);
        const TorusPoint y = translate(x, off);
        const double sep = std::pow(off.norm(), out.alpha);
        for (int dir : {+1, -1}) {
          TorusPoint px = x, py = y;
          Mat mx = Mat::Identity(d, d), my = Mat::Identity(d, d);
          double an = 1.0;
          for (int n = 1; n <= options.n_max; ++n) {
            an *= out.a;
            if (dir > 0) {
              mx = system.jacobian(px) * mx;
              my = system.jacobian(py) * my;
              px = system.step(px);
              py = system.step(py);
            } else {
              mx = system.inverse_jacobian(px) * mx;
              my = system.inverse_jacobian(py) * my;
              px = system.step_inverse(px);
              py = system.step_inverse(py);
            }
            worst = std::max(worst, (mx - my).norm() / (an * sep));
          }
        }
      }
    }
    out.D = options.safety * worst;
  }

  const double eps = p.eps;
  const double la = std::log(out.a);
  const double nums[4] = {p.lambda - p.lambda_c - 3 * eps, p.mu - p.mu_c - 3 * eps, p.mu - p.mu_c - 3 * eps,
                          p.lambda - p.lambda_c - 3 * eps};
  const double dens[4] = {la + p.lambda - eps, la - p.mu_c - eps, la + p.mu - eps, la - p.lambda_c - eps};
  out.a1 = 0.0;
  out.b1 = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (!(nums[i] > 0.0) || !(dens[i] > 0.0)) {
      throw Error(Errc::invalid_argument, "Hoelder fraction " + std::to_string(i + 1) + " has a nonpositive term");
    }
    out.fractions[i] = nums[i] / dens[i];
    out.a1 = std::max(out.a1, out.fractions[i]);
    out.b1 = std::max(out.b1, 3.0 * std::exp(nums[i]) * std::pow(out.D, out.fractions[i]));
  }
  if (!(out.a1 > 0.0 && out.a1 < 1.0)) throw Error(Errc::invalid_argument, "Hoelder exponent a1 outside (0, 1)");
  out.C1 = 6.0 * std::numbers::pi * series_constant(eps);
  out.b2 = out.C1 * out.b1 * std::pow(3.0, out.exponent());
  out.theta = options.theta_override > 0.0 ? options.theta_override : out.exponent();
  return out;
}

double normed_subspace_distance(const Subspace& a, const Subspace& b, const NormFn& norm) {
  if (a.ambient_dim() != b.ambient_dim()) throw Error(Errc::dimension_mismatch, "subspaces of different ambient spaces");
  if (a.rank() == b.rank() && a.basis() == b.basis()) return 0.0;
  return std::max(one_sided(a, b, norm), one_sided(b, a, norm));
}

std::vector<HolderPair> sample_holder_pairs(const SystemSpec& system, const BlockParams& params, const BallScale& ball,
                                            int count, std::uint64_t seed, long horizon) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int d = system.dimension();
  const int k_max = static_cast<int>(ball.eps_k.size());
  std::vector<HolderPair> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > 4 * count + 100) throw Error(Errc::sample_budget, "too few certified base points for Hoelder pairs");
    Vec c(d);
    for (int i = 0; i < d; ++i) c[i] = unit(rng);
    const TorusPoint x(c);
    int kappa;
    try {
      kappa = classify_block(system, x, params, horizon, {k_max, 200}).kappa;
    } catch (const Error& e) {
      if (e.code() != Errc::no_block_index) throw;
      continue;
    }
    const double sep = std::min(ball.radius(kappa), 0.2) * std::pow(10.0, -3.0 * unit(rng));
    out.push_back({x, translate(x, sep * random_unit(d, rng))});
  }
  return out;
}

HolderFitReport empirical_holder_fit(const SystemSpec& system, const BlockParams& params, const HolderBudget& budget,
                                     const std::vector<HolderPair>& pairs, long horizon, int min_pairs) {
  HolderFitReport rep;
  std::vector<double> log_sep[5], log_dist[5];
  int passed = 0;
  long id = 0;
  for (const HolderPair& pr : pairs) {
    ++id;
    BlockCertificate cx, cy;
    try {
      cx = classify_block(system, pr.x, params, horizon);
      cy = classify_block(system, pr.y, params, horizon);
    } catch (const Error& e) {
      if (e.code() != Errc::no_block_index) throw;
      ++rep.pairs_excluded;
      continue;
    }
    ++rep.pairs_used;
    const int k = std::max(cx.kappa, cy.kappa);
    const Vec off = chart_difference(pr.x, pr.y);
    const double sep = off.norm();
    const AdaptedNormEvaluator ev(system, cx);
    const NormFn adapted = [&ev](const Vec& v) { return ev.norm(v); };
    const double sep_adapted = ev.norm(off);
    bool all = true;
    for (int b = 0; b < 5; ++b) {
      const Subspace ex = bundle(cx.splitting, b), ey = bundle(cy.splitting, b);
      if (ex.rank() == 0 && ey.rank() == 0) continue;
      const double d_amb = subspace_distance(ex, ey);
      const double d_ad = normed_subspace_distance(ex, ey, adapted);
      HolderRow amb{id, kBundles[b], "ambient", sep, d_amb, budget.ambient_bound(k, sep), false};
      HolderRow ad{id, kBundles[b], "adapted", sep_adapted, d_ad, budget.adapted_bound(k, sep_adapted), false};
      amb.pass = amb.distance <= amb.bound + 1e-12;
      ad.pass = ad.distance <= ad.bound + 1e-12;
      all = all && amb.pass && ad.pass;
      if (d_amb > 0.0) {
        log_sep[b].push_back(std::log(sep));
        log_dist[b].push_back(std::log(d_amb));
        const double chain = budget.C1 * std::exp(2.0 * k * params.eps) * d_amb;
        rep.angle_chain_ratio = std::max(rep.angle_chain_ratio, d_ad / chain);
      }
      rep.rows.push_back(amb);
      rep.rows.push_back(ad);
    }
    if (all) ++passed;
  }
  if (rep.pairs_used < min_pairs) {
    throw Error(Errc::sample_budget, "only " + std::to_string(rep.pairs_used) + " certified Hoelder pairs, need " +
                                         std::to_string(min_pairs));
  }
  rep.pair_pass_rate = static_cast<double>(passed) / rep.pairs_used;
  for (int b = 0; b < 5; ++b) rep.slopes.emplace_back(kBundles[b], fit_slope(log_sep[b], log_dist[b]));
  return rep;
}

nlohmann::json HolderFitReport::to_json() const {
  nlohmann::json slope_obj = nlohmann::json::object();
  for (const auto& [name, s] : slopes) slope_obj[name] = std::isfinite(s) ? nlohmann::json(s) : nlohmann::json(nullptr);
  return {{"pairs_used", pairs_used},
          {"pairs_excluded", pairs_excluded},
          {"pair_pass_rate", pair_pass_rate},
          {"slopes", slope_obj},
          {"angle_chain_ratio", angle_chain_ratio}};
}

void write_holder_csv(const HolderFitReport& report, const std::string& path) {
  CsvWriter csv(path, {"pair_id", "bundle", "separation", "distance", "bound", "pass", "norm"});
  for (const HolderRow& r : report.rows) {
    csv << r.pair_id << r.bundle << r.separation << r.distance << r.bound << r.pass << r.norm;
    csv.end_row();
  }
}

}  // namespace qshadow

#include "qshadow/lyapnorm.hpp"

#include <cmath>
#include <limits>

namespace qshadow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum Bundle { kStable = 0, kCenter = 1, kUnstable = 2 };

const Subspace& bundle_of(const Splitting& sp, int which) {
  switch (which) {
    case kStable: return sp.stable();
    case kCenter: return sp.center();
    default: return sp.unstable();
  }
}

Vec random_in(const Subspace& s, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vec c(s.rank());
  for (int i = 0; i < s.rank(); ++i) c[i] = g(rng);
  if (c.norm() == 0.0) c[0] = 1.0;
  return s.basis() * (c / c.norm());
}

Vec random_direction(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = g(rng);
  return v / v.norm();
}

// Relative slack of ratio against an upper or lower bound.
double upper_slack(double ratio, double bound) {
  return std::isfinite(ratio) ? (bound - ratio) / bound : -kInf;
}
double lower_slack(double ratio, double bound) {
  if (bound <= 0.0) return std::isfinite(ratio) ? kInf : -kInf;
  return std::isfinite(ratio) ? (ratio - bound) / bound : -kInf;
}

}  // namespace

RateLadder rates_at_level(const BlockParams& p, int level) {
  const double shift = (level + 1) * p.eps;
  return {p.lambda - shift, p.mu - shift, p.lambda_c + shift, p.mu_c + shift};
}

double series_constant(double eps) { return (1.0 + std::exp(-eps)) / (1.0 - std::exp(-eps)); }

// ---------------------------------------------------------------------------

double AdaptedNormEvaluator::Series::apply(const Vec& coeffs) const {
  if (scalar_weight >= 0.0) return scalar_weight * std::abs(coeffs[0]);
  double sum = 0.0;
  for (const Mat& w : terms) sum += (w * coeffs).norm();
  return sum;
}

long AdaptedNormEvaluator::default_truncation(double eps, int index) {
  const double target = 1e-8;
  const double n1 = (eps * (index + 1) + std::log(2.0 / (target * (1.0 - std::exp(-eps))))) / eps;
  return static_cast<long>(std::ceil(n1));
}

AdaptedNormEvaluator::AdaptedNormEvaluator(const SystemSpec& system, const BlockCertificate& certificate,
                                           long sweep_horizon, long truncation)
    : AdaptedNormEvaluator(
          std::make_shared<const SplittingWindow>(
              system, certificate.point,
              -(truncation > 0 ? truncation : default_truncation(certificate.params.eps, certificate.kappa)) - 1,
              (truncation > 0 ? truncation : default_truncation(certificate.params.eps, certificate.kappa)) + 1,
              sweep_horizon),
          certificate.params, certificate.kappa, truncation) {}

AdaptedNormEvaluator::AdaptedNormEvaluator(std::shared_ptr<const SplittingWindow> window, const BlockParams& params,
                                           int index, long truncation)
    : window_(std::move(window)), params_(params), index_(index) {
  params_.validate();
  if (index_ < 1) throw Error(Errc::invalid_argument, "adapted norm index must be positive");
  truncation_ = truncation > 0 ? truncation : default_truncation(params_.eps, index_);
  if (window_->lo() > -(truncation_ + 1) || window_->hi() < truncation_ + 1) {
    throw Error(Errc::precondition, "splitting window too short for the truncation length");
  }
  const RateLadder r = rates_at_level(params_, 1);
  for (long m = -1; m <= 1; ++m) {
    Anchor& a = anchors_[m + 1];
    a.s = build_series(m, kStable, +1, r.lambda, 0);
    a.c_forward = build_series(m, kCenter, +1, -r.mu_c, 0);
    a.c_backward = build_series(m, kCenter, -1, -r.lambda_c, 1);
    a.u = build_series(m, kUnstable, -1, r.mu, 0);
  }
}

AdaptedNormEvaluator::Series AdaptedNormEvaluator::build_series(long m, int which, int dir, double rate,
                                                                long first) const {
  Series out;
  const int r = bundle_of(window_->splitting(m), which).rank();
  if (r == 0) return out;
  const double growth = std::exp(rate);
  if (r == 1) {
    double w = 1.0;
    out.scalar_weight = first == 0 ? 1.0 : 0.0;
    long cur = m;
    for (long n = 1; n <= truncation_; ++n) {
      const long next = cur + dir;
      const Mat& step = dir > 0 ? window_->jacobian(cur) : window_->inverse_jacobian(cur);
      const Vec image = step * bundle_of(window_->splitting(cur), which).basis().col(0);
      w *= growth * bundle_of(window_->splitting(next), which).basis().col(0).dot(image);
      out.scalar_weight += std::abs(w);
      cur = next;
    }
    return out;
  }
  Mat w = Mat::Identity(r, r);
  out.terms.reserve(static_cast<std::size_t>(truncation_ + 1));
  if (first == 0) out.terms.push_back(w);
  long cur = m;
  for (long n = 1; n <= truncation_; ++n) {
    const long next = cur + dir;
    const Mat& step = dir > 0 ? window_->jacobian(cur) : window_->inverse_jacobian(cur);
    const Mat& b0 = bundle_of(window_->splitting(cur), which).basis();
    const Mat& b1 = bundle_of(window_->splitting(next), which).basis();
    w = growth * (b1.transpose() * step * b0) * w;
    out.terms.push_back(w);
    cur = next;
  }
  return out;
}

const AdaptedNormEvaluator::Anchor& AdaptedNormEvaluator::at(long m) const {
  if (m < -1 || m > 1) throw Error(Errc::invalid_argument, "adapted norm anchors are f^{-1}x, x and f(x)");
  return anchors_[m + 1];
}

AdaptedNormEvaluator::Components AdaptedNormEvaluator::components(const Vec& v, long m) const {
  const Anchor& a = at(m);
  const Splitting& sp = window_->splitting(m);
  if (v.size() != sp.ambient_dim()) throw Error(Errc::dimension_mismatch, "adapted norm");
  const Vec coef = sp.coefficients(v);
  const BundleDims d = sp.dims();
  Components out;
  if (d.s) out.s = a.s.apply(coef.segment(0, d.s));
  if (d.c) {
    const Vec cc = coef.segment(d.s, d.c);
    out.c = a.c_forward.apply(cc) + a.c_backward.apply(cc);
  }
  if (d.u) out.u = a.u.apply(coef.segment(d.s + d.c, d.u));
  return out;
}

double AdaptedNormEvaluator::norm(const Vec& v, long m) const { return components(v, m).max(); }

double AdaptedNormEvaluator::tail_bound(long m) const {
  const double e = params_.eps;
  return 2.0 * std::exp(e * (index_ + std::abs(m))) * std::exp(-e * (truncation_ + 1)) / (1.0 - std::exp(-e));
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json point_json(const TorusPoint& x) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < x.dim(); ++i) arr.push_back(x[i]);
  return arr;
}

struct SlackFold {
  double worst = kInf;
  void add(double s) { worst = std::min(worst, s); }
};

}  // namespace

nlohmann::json to_json(const CheckReport& r) {
  nlohmann::json j = {{"check", r.check},
                      {"anchor", point_json(r.anchor)},
                      {"k", r.k},
                      {"margin", std::isfinite(r.margin) ? nlohmann::json(r.margin) : nlohmann::json(nullptr)},
                      {"tolerance", r.tolerance},
                      {"pass", r.pass}};
  for (auto it = r.extra.begin(); it != r.extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

CheckReport verify_adapted_contraction(const SystemSpec& system, const AdaptedNormEvaluator& ev, int samples,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const RateLadder r = rates_at_level(ev.params(), 1);
  const double inv_l = 1.0 / system.derivative_bound();
  const Splitting& sp = ev.splitting(0);
  SlackFold fold;
  double worst_ratio_s = 0.0, worst_ratio_u = 0.0;
  for (int i = 0; i < samples; ++i) {
    if (sp.stable().rank()) {
      const Vec v = random_in(sp.stable(), rng);
      const double ratio = ev.norm(ev.jacobian(0) * v, 1) / ev.norm(v, 0);
      worst_ratio_s = std::max(worst_ratio_s, ratio);
      fold.add(upper_slack(ratio, std::exp(-r.lambda)));
      fold.add(lower_slack(ratio, inv_l));
    }
    if (sp.center().rank()) {
      const Vec v = random_in(sp.center(), rng);
      const double ratio = ev.norm(ev.jacobian(0) * v, 1) / ev.norm(v, 0);
      fold.add(upper_slack(ratio, std::exp(r.mu_c)));
      fold.add(lower_slack(ratio, std::exp(-r.lambda_c)));
    }
    if (sp.unstable().rank()) {
      const Vec v = random_in(sp.unstable(), rng);
      const double ratio = ev.norm(ev.inverse_jacobian(0) * v, -1) / ev.norm(v, 0);
      worst_ratio_u = std::max(worst_ratio_u, ratio);
      fold.add(upper_slack(ratio, std::exp(-r.mu)));
      fold.add(lower_slack(ratio, inv_l));
    }
  }
  CheckReport rep;
  rep.check = "adapted_contraction";
  rep.anchor = ev.anchor(0);
  rep.k = ev.index();
  rep.margin = fold.worst;
  rep.tolerance = ev.tail_bound(0) + ev.tail_bound(1) + 1e-10;
  rep.pass = rep.margin >= -rep.tolerance;
  rep.extra = {{"max_stable_ratio", worst_ratio_s}, {"max_unstable_inverse_ratio", worst_ratio_u}};
  return rep;
}

CheckReport norm_equivalence_bounds(const AdaptedNormEvaluator& ev, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double eps = ev.params().eps;
  const double upper_factor = series_constant(eps) * std::exp(eps * ev.index());
  SlackFold fold;
  // v = 0: both sides vanish.
  const Vec zero = Vec::Zero(ev.dimension());
  if (ev.norm(zero) != 0.0) fold.add(-kInf);
  double largest = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Vec v = random_direction(ev.dimension(), rng);
    const double a = ev.norm(v);
    largest = std::max(largest, a);
    fold.add(lower_slack(a, 1.0 / 3.0));
    fold.add(upper_slack(a, upper_factor));
  }
  CheckReport rep;
  rep.check = "norm_equivalence";
  rep.anchor = ev.anchor(0);
  rep.k = ev.index();
  rep.margin = fold.worst;
  rep.tolerance = ev.tail_bound(0);
  rep.pass = rep.margin >= -rep.tolerance;
  rep.extra = {{"C", series_constant(eps)}, {"upper_factor", upper_factor}, {"max_adapted_norm", largest}};
  return rep;
}

BallScale ball_scale(const SystemSpec& system, const BlockParams& params, int k_max) {
  params.validate();
  const double alpha = system.holder_exponent();
  const double K = system.holder_constant();
  const double eps = params.eps;
  const double C = series_constant(eps);
  const RateLadder r1 = rates_at_level(params, 1);
  const RateLadder r2 = rates_at_level(params, 2);
  const double gaps[4] = {std::exp(-r2.lambda) - std::exp(-r1.lambda), std::exp(r2.lambda_c) - std::exp(r1.lambda_c),
                          std::exp(-r2.mu) - std::exp(-r1.mu), std::exp(r2.mu_c) - std::exp(r1.mu_c)};
  BallScale out;
  out.rate = eps / alpha;
  out.eps0 = kInf;
  for (int k = 1; k <= k_max; ++k) {
    double ek = 1.0;
    if (K > 0.0) {
      for (double g : gaps) ek = std::min(ek, std::pow(g / (3.0 * C * std::exp(eps * (k + 1)) * K), 1.0 / alpha));
    }
    out.eps_k.push_back(ek);
    out.eps0 = std::min(out.eps0, ek * std::exp(out.rate * k));
  }
  return out;
}

CheckReport translated_norm_check(const SystemSpec& system, const AdaptedNormEvaluator& ev, const TorusPoint& y,
                                  double radius, int samples, std::uint64_t seed) {
  const double dist = torus_distance(ev.anchor(0), y);
  if (!(dist < radius) && dist != 0.0) throw Error(Errc::precondition, "translated_norm_check: y outside the ball");
  std::mt19937_64 rng(seed);
  const BlockParams& p = ev.params();
  const RateLadder r1 = rates_at_level(p, 1);
  const RateLadder r2 = rates_at_level(p, 2);
  const double floor_rate = 1.0 / system.derivative_bound() - (std::exp(p.eps) - 1.0);
  const double proof_upper =
      std::exp(-r1.lambda) + 3.0 * series_constant(p.eps) * std::exp(p.eps * (ev.index() + 1)) *
                                 system.holder_constant() * std::pow(dist, system.holder_exponent());
  const Mat jy = system.jacobian(y);
  const Mat jy_inv = system.inverse_jacobian(y);
  const Splitting& sp = ev.splitting(0);
  SlackFold fold, proof;
  for (int i = 0; i < samples; ++i) {
    if (sp.stable().rank()) {
      const Vec v = random_in(sp.stable(), rng);
      const double ratio = ev.norm(jy * v, 1) / ev.norm(v, 0);
      fold.add(upper_slack(ratio, std::exp(-r2.lambda)));
      fold.add(lower_slack(ratio, floor_rate));
      proof.add(upper_slack(ratio, proof_upper));
    }
    if (sp.center().rank()) {
      const Vec v = random_in(sp.center(), rng);
      const double ratio = ev.norm(jy * v, 1) / ev.norm(v, 0);
      fold.add(upper_slack(ratio, std::exp(r2.mu_c)));
      fold.add(lower_slack(ratio, std::exp(-r2.lambda_c)));
    }
    if (sp.unstable().rank()) {
      const Vec v = random_in(sp.unstable(), rng);
      const double ratio = ev.norm(jy_inv * v, -1) / ev.norm(v, 0);
      fold.add(upper_slack(ratio, std::exp(-r2.mu)));
      fold.add(lower_slack(ratio, floor_rate));
    }
  }
  CheckReport rep;
  rep.check = "translated_norm";
  rep.anchor = ev.anchor(0);
  rep.k = ev.index();
  rep.margin = fold.worst;
  rep.tolerance = ev.tail_bound(0) + ev.tail_bound(1) + 1e-10;
  rep.pass = rep.margin >= -rep.tolerance;
  rep.extra = {{"distance", dist},
               {"radius", radius},
               {"proof_margin", std::isfinite(proof.worst) ? nlohmann::json(proof.worst) : nlohmann::json(nullptr)}};
  return rep;
}

double linear_cone_prediction(const BlockParams& params) {
  const RateLadder r3 = rates_at_level(params, 3);
  return std::max(std::exp(r3.mu_c - r3.mu), std::exp(r3.lambda_c - r3.lambda));
}

double default_cone_ratio(const BlockParams& params) { return 0.5 * (1.0 + linear_cone_prediction(params)); }

CheckReport cone_invariance_check(const SystemSpec& system, const AdaptedNormEvaluator& ev, double xi, double sigma,
                                  double radius, int samples, std::uint64_t seed) {
  if (!(xi > 0.0)) throw Error(Errc::invalid_argument, "cone width must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int d = ev.dimension();
  auto norm_at = [&ev](long m) { return NormFn([&ev, m](const Vec& v) { return ev.norm(v, m); }); };

  struct ConeSpec {
    const char* name;
    Subspace base_src, comp_src, base_dst, comp_dst;
    bool forward;
  };
  auto make = [](const char* name, const Splitting& src, const Splitting& dst, bool forward) {
    auto pick = [&](const Splitting& sp, bool base) {
      const std::string n = name;
      if (n == "u") return base ? sp.unstable() : sp.center_stable();
      if (n == "cu") return base ? sp.center_unstable() : sp.stable();
      if (n == "s") return base ? sp.stable() : sp.center_unstable();
      return base ? sp.center_stable() : sp.unstable();
    };
    return ConeSpec{name, pick(src, true), pick(src, false), pick(dst, true), pick(dst, false), forward};
  };
  const Splitting& here = ev.splitting(0);
  const std::vector<ConeSpec> cones = {make("u", here, ev.splitting(1), true), make("cu", here, ev.splitting(1), true),
                                       make("s", here, ev.splitting(-1), false),
                                       make("cs", here, ev.splitting(-1), false)};
  nlohmann::json per_cone = nlohmann::json::object();
  double sigma_hat = 0.0;
  for (const ConeSpec& c : cones) {
    if (c.base_src.rank() == 0 || c.comp_src.rank() == 0) continue;
    const Cone src(c.base_src, c.comp_src, xi, NormTag::adapted);
    const Cone dst(c.base_dst, c.comp_dst, xi, NormTag::adapted);
    const NormFn n_src = norm_at(0);
    const NormFn n_dst = norm_at(c.forward ? 1 : -1);
    double cone_worst = 0.0;
    for (int i = 0; i < samples; ++i) {
      TorusPoint y = ev.anchor(0);
      if (radius > 0.0) y = translate(y, Vec(random_direction(d, rng) * radius * std::pow(unit(rng), 1.0 / d)));
      const Mat step = c.forward ? system.jacobian(y) : system.inverse_jacobian(y);
      const Vec v1 = random_in(c.base_src, rng);
      Vec v2 = random_in(c.comp_src, rng);
      const double t = (i % 3 == 0) ? 0.0 : (i % 3 == 1 ? 1.0 : unit(rng));
      v2 *= t * xi * n_src(v1) / n_src(v2);
      const Vec v = v1 + v2;
      const double image_ratio = cone_ratio(step * v, dst, n_dst);
      cone_worst = std::max(cone_worst, image_ratio / xi);
    }
    per_cone[c.name] = cone_worst;
    sigma_hat = std::max(sigma_hat, cone_worst);
  }
  CheckReport rep;
  rep.check = "cone_invariance";
  rep.anchor = ev.anchor(0);
  rep.k = ev.index();
  rep.margin = std::isfinite(sigma_hat) ? (sigma - sigma_hat) / sigma : -kInf;
  rep.tolerance = 0.0;
  rep.pass = sigma_hat <= sigma;
  rep.extra = {{"xi", xi}, {"sigma", sigma}, {"sigma_hat", sigma_hat}, {"radius", radius}, {"per_cone", per_cone}};
  return rep;
}

double calibrate_a_xi(const SystemSpec& system, const std::vector<const AdaptedNormEvaluator*>& evaluators,
                      const BallScale& ball, double xi, double sigma, int samples, std::uint64_t seed) {
  const double alpha = system.holder_exponent();
  const double K = system.holder_constant();
  for (int j = 0; j <= 40; ++j) {
    const double a = std::ldexp(1.0, -j);
    bool ok = true;
    for (const AdaptedNormEvaluator* ev : evaluators) {
      const int k = ev->index();
      const double eps = ev->params().eps;
      const double ek = ball.radius(k);
      if (series_constant(eps) * std::exp((k + 1) * eps) * K * std::pow(a * ek, alpha) > std::pow(a, alpha)) {
        ok = false;
        break;
      }
      if (!cone_invariance_check(system, *ev, xi, sigma, a * ek, samples, seed).pass) {
        ok = false;
        break;
      }
    }
    if (ok) return a;
  }
  throw Error(Errc::contract_failure, "no a_xi in {2^-j : j <= 40} passes the cone check");
}

}  // namespace qshadow

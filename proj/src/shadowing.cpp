#include "qshadow/shadowing.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "qshadow/csv.hpp"

namespace qshadow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Offsets beyond this leave the regime where the chart and the linearization
// are meaningful.
constexpr double kOffsetLimit = 0.1;

struct Parts {
  Vec s, c, u;
};

Parts split_coefficients(const Splitting& sp, const Vec& v) {
  const BundleDims d = sp.dims();
  const Vec coef = sp.coefficients(v);
  return {coef.head(d.s), coef.segment(d.s, d.c), coef.tail(d.u)};
}

double json_number_or_inf(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::max(); }

}  // namespace

double ShadowScales::delta_holder(int k) const {
  if (b2 <= 0.0) return kInf;
  return std::pow((1.0 - sigma) * xi / (b2 * std::exp(6.0 * k * eps)), 1.0 / holder_exponent);
}

double ShadowScales::delta_junction(int k) const {
  return 0.5 * gamma * (1.0 - std::exp(-lambda3 + rate / theta)) / C * std::exp(-(1.0 + 1.0 / theta) * k * rate);
}

nlohmann::json ShadowScales::to_json() const {
  return {{"eta", eta},     {"xi", xi},         {"sigma", sigma},   {"eps", eps},
          {"eps0", eps0},   {"rate", rate},     {"C", C},           {"C1", C1},
          {"C2", C2},       {"theta", theta},   {"lambda3", lambda3}, {"gamma", gamma},
          {"b2", b2},       {"holder_exponent", holder_exponent}};
}

ShadowScales make_shadow_scales(const SystemSpec& system, const BlockParams& params, const HolderBudget& budget,
                                const BallScale& ball, double eta, double xi, double sigma, double c_tilde) {
  params.validate();
  if (!(eta > 0.0 && eta <= 1.0)) throw Error(Errc::invalid_argument, "eta must lie in (0, 1]");
  if (!(xi > 0.0)) throw Error(Errc::invalid_argument, "xi must be positive");
  if (!(sigma > 0.0 && sigma < 1.0)) throw Error(Errc::invalid_argument, "sigma must lie in (0, 1)");
  if (!(c_tilde >= 0.0)) throw Error(Errc::invalid_argument, "C_tilde must be nonnegative");
  ShadowScales s;
  s.eta = eta;
  s.xi = xi;
  s.sigma = sigma;
  s.eps = params.eps;
  s.eps0 = ball.eps0;
  s.rate = ball.rate;
  s.C = series_constant(params.eps);
  s.C1 = c_tilde + 1.0;
  s.C2 = 2.0 * system.derivative_bound() * s.C1;
  s.theta = budget.theta;
  s.lambda3 = rates_at_level(params, 3).lambda;
  s.b2 = budget.b2;
  s.holder_exponent = budget.exponent();
  if (!(s.lambda3 > s.rate / s.theta)) {
    throw Error(Errc::precondition, "junction schedule needs lambda_3 > eps / (alpha theta)");
  }
  s.gamma = std::pow(s.eps0 * eta / (3.0 * s.C2), 1.0 / s.theta);
  return s;
}

std::vector<double> certified_schedule(const ShadowScales& scales, int k_max) {
  std::vector<double> out;
  for (int k = 1; k <= k_max; ++k) out.push_back(scales.delta_certified(k));
  return out;
}

std::vector<double> practical_schedule(const ShadowScales& scales, int k_max, double fraction) {
  std::vector<double> out;
  for (int k = 1; k <= k_max; ++k) out.push_back(fraction * scales.eta * scales.eps_k(k));
  return out;
}

std::vector<double> constant_schedule(double delta, int k_max) {
  return std::vector<double>(static_cast<std::size_t>(k_max), delta);
}

// ---------------------------------------------------------------------------

Certifier::Certifier(const SystemSpec& system, const BlockParams& params, long horizon, ClassifyOptions options)
    : system_(&system), params_(params), horizon_(horizon), options_(options) {
  params_.validate();
  if (system.is_linear()) {
    cached_ = (*this)(TorusPoint(Vec::Constant(system.dimension(), 0.1234)));
    shared_ = true;
  }
}

Certifier::Result Certifier::operator()(const TorusPoint& x) const {
  if (shared_) return cached_;
  const BlockCertificate cert = classify_block(*system_, x, params_, horizon_, options_);
  return {cert.kappa, cert.splitting};
}

namespace {

Segment segment_from(const SystemSpec& system, const Certifier& certifier, const TorusPoint& anchor, long length,
                     const Certifier::Result& start) {
  if (length < 1) throw Error(Errc::precondition, "segments need length >= 1");
  Segment seg;
  seg.anchor = anchor;
  seg.length = length;
  seg.points.reserve(static_cast<std::size_t>(length + 1));
  seg.points.push_back(anchor);
  for (long i = 0; i < length; ++i) seg.points.push_back(system.step(seg.points.back()));
  seg.s_minus = start.kappa;
  seg.splitting = start.splitting;
  seg.s_plus = certifier(seg.points.back()).kappa;
  return seg;
}

}  // namespace

Segment make_segment(const SystemSpec& system, const Certifier& certifier, const TorusPoint& anchor, long length) {
  return segment_from(system, certifier, anchor, length, certifier(anchor));
}

int PseudoOrbit::junction_count() const {
  if (segments.empty()) return 0;
  return static_cast<int>(periodic ? segments.size() : segments.size() - 1);
}

double PseudoOrbit::delta(int k) const {
  if (k < 1 || k > static_cast<int>(delta_schedule.size())) {
    throw Error(Errc::precondition, "block index " + std::to_string(k) + " outside the delta schedule");
  }
  return delta_schedule[static_cast<std::size_t>(k - 1)];
}

PseudoOrbit assemble_pseudo_orbit(std::vector<Segment> segments, std::vector<double> schedule, bool periodic) {
  if (segments.empty()) throw Error(Errc::precondition, "empty pseudo-orbit");
  PseudoOrbit p;
  p.segments = std::move(segments);
  p.delta_schedule = std::move(schedule);
  p.periodic = periodic;
  for (int n = 0; n < p.junction_count(); ++n) {
    const Segment& a = p.segments[static_cast<std::size_t>(n)];
    p.jumps.push_back(chart_difference(p.segments[p.next(n)].anchor, a.points.back()));
  }
  return p;
}

std::vector<std::string> pseudo_orbit_violations(const SystemSpec& system, const PseudoOrbit& pseudo) {
  std::vector<std::string> out;
  if (pseudo.segments.empty()) return {"no segments"};
  if (static_cast<int>(pseudo.jumps.size()) != pseudo.junction_count()) out.push_back("jump count mismatch");
  const int k_count = static_cast<int>(pseudo.delta_schedule.size());
  for (std::size_t n = 0; n < pseudo.segments.size(); ++n) {
    const Segment& s = pseudo.segments[n];
    const std::string tag = "segment " + std::to_string(n) + ": ";
    if (s.length < 1) out.push_back(tag + "length below 1");
    if (static_cast<long>(s.points.size()) != s.length + 1 || !(s.points.front() == s.anchor)) {
      out.push_back(tag + "stored points do not match the anchor and length");
      continue;
    }
    TorusPoint p = s.anchor;
    for (long i = 1; i <= s.length; ++i) {
      p = system.step(p);
      if (!(p == s.points[static_cast<std::size_t>(i)])) {
        out.push_back(tag + "not a true orbit at step " + std::to_string(i));
        break;
      }
    }
    if (s.s_minus < 1 || s.s_minus > k_count || s.s_plus < 1 || s.s_plus > k_count) {
      out.push_back(tag + "block index outside the schedule");
    }
  }
  for (int n = 0; n < std::min<int>(pseudo.junction_count(), static_cast<int>(pseudo.jumps.size())); ++n) {
    const Segment& a = pseudo.segments[static_cast<std::size_t>(n)];
    const Segment& b = pseudo.segments[pseudo.next(n)];
    const std::string tag = "junction " + std::to_string(n) + ": ";
    if (std::abs(a.s_plus - b.s_minus) > 1) out.push_back(tag + "index jump above 1");
    const Vec j = minimal_offset(b.anchor, a.points.back());
    if ((j - pseudo.jumps[static_cast<std::size_t>(n)]).norm() > 0.0) out.push_back(tag + "stored jump is stale");
    if (a.s_plus >= 1 && a.s_plus <= k_count && !(j.norm() < pseudo.delta(a.s_plus))) {
      out.push_back(tag + "jump " + format_number(j.norm()) + " not below delta");
    }
  }
  return out;
}

std::vector<TorusPoint> certified_sources(const SystemSpec& system, const Certifier& certifier, int count,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<TorusPoint> out;
  const int d = system.dimension();
  for (long attempt = 0; static_cast<int>(out.size()) < count; ++attempt) {
    if (attempt > 20L * count + 100) throw Error(Errc::retry_exhausted, "too few certified source points");
    Vec c(d);
    for (int i = 0; i < d; ++i) c[i] = unit(rng);
    try {
      certifier(TorusPoint(c));
      out.emplace_back(c);
    } catch (const Error& e) {
      if (e.code() != Errc::no_block_index) throw;
    }
  }
  return out;
}

PseudoOrbit generate_pseudo_orbit(const SystemSpec& system, const Certifier& certifier,
                                  const std::vector<TorusPoint>& sources, const PseudoOrbitRequest& req,
                                  std::vector<double> schedule, std::uint64_t seed) {
  if (sources.empty()) throw Error(Errc::precondition, "no certified source points");
  if (req.segments < 1 || req.min_length < 1 || req.max_length < req.min_length) {
    throw Error(Errc::invalid_argument, "pseudo-orbit segment counts and lengths");
  }
  if (!(req.rho >= 0.0 && req.rho <= 1.0)) throw Error(Errc::invalid_argument, "rho must lie in [0, 1]");
  const int d = system.dimension();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss;
  std::uniform_int_distribution<long> length(req.min_length, req.max_length);
  const TorusPoint x0 = sources[std::uniform_int_distribution<std::size_t>(0, sources.size() - 1)(rng)];

  auto delta_at = [&](int k) {
    if (k < 1 || k > static_cast<int>(schedule.size())) throw Error(Errc::precondition, "index outside the schedule");
    return schedule[static_cast<std::size_t>(k - 1)];
  };

  std::vector<Segment> segs;
  TorusPoint anchor = x0;
  Certifier::Result start = certifier(x0);
  for (int n = 0; n < req.segments; ++n) {
    segs.push_back(segment_from(system, certifier, anchor, length(rng), start));
    if (n + 1 == req.segments) break;
    const Segment& cur = segs.back();
    const TorusPoint& end = cur.points.back();
    const double delta = delta_at(cur.s_plus);
    if (req.rho == 0.0) {
      anchor = end;
      start = certifier(end);
      continue;
    }
    if (!(delta > 0.0)) throw Error(Errc::precondition, "rho * delta must be positive");
    bool placed = false;
    for (int attempt = 0; attempt < req.retry_budget && !placed; ++attempt) {
      Vec dir(d);
      for (int i = 0; i < d; ++i) dir[i] = gauss(rng);
      const double r = req.rho * delta * std::pow(unit(rng), 1.0 / d);
      const TorusPoint landing = translate(end, r * dir / dir.norm());
      if (!(minimal_offset(landing, end).norm() < delta)) continue;
      try {
        const Certifier::Result res = certifier(landing);
        if (std::abs(res.kappa - cur.s_plus) > 1) continue;
        anchor = landing;
        start = res;
        placed = true;
      } catch (const Error& e) {
        if (e.code() != Errc::no_block_index) throw;
      }
    }
    if (!placed) throw Error(Errc::retry_exhausted, "no certifiable landing point at junction " + std::to_string(n));
  }
  return assemble_pseudo_orbit(std::move(segs), std::move(schedule), false);
}

std::vector<Vec> offset_trajectory(const SystemSpec& system, const Segment& segment, const Vec& offset) {
  std::vector<Vec> out;
  out.reserve(segment.points.size());
  out.push_back(offset);
  for (long i = 0; i < segment.length; ++i) {
    out.push_back(system.step_offset(segment.points[static_cast<std::size_t>(i)], out.back()));
  }
  return out;
}

// ---------------------------------------------------------------------------

double ShadowResult::sup_error() const {
  double m = 0.0;
  for (const auto& row : step_errors)
    for (double e : row) m = std::max(m, e);
  return m;
}

double ShadowResult::max_center_disp() const {
  double m = 0.0;
  for (const Vec& u : center_displacements) m = std::max(m, u.norm());
  return m;
}

double ShadowResult::cumulative_center_disp() const {
  double m = 0.0;
  for (const Vec& u : center_displacements) m += u.norm();
  return m;
}

namespace {

struct JunctionState {
  std::vector<std::vector<Vec>> traj;
  std::vector<Mat> cocycles;
  std::vector<Parts> defects;
  std::vector<double> su;
  double residual = 0.0;
};

JunctionState linearize(const SystemSpec& system, const PseudoOrbit& pseudo, const std::vector<Vec>& offsets,
                        bool with_cocycles) {
  JunctionState st;
  const int d = system.dimension();
  for (std::size_t n = 0; n < pseudo.segments.size(); ++n) {
    const Segment& seg = pseudo.segments[n];
    st.traj.push_back(offset_trajectory(system, seg, offsets[n]));
    for (const Vec& v : st.traj.back()) {
      if (!(v.norm() < kOffsetLimit)) throw Error(Errc::divergence, "shadowing offsets left the chart");
    }
    if (with_cocycles) {
      Mat a = Mat::Identity(d, d);
      for (long i = 0; i < seg.length; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        a = system.jacobian(translate(seg.points[idx], st.traj.back()[idx])) * a;
      }
      st.cocycles.push_back(a);
    }
  }
  for (int n = 0; n < pseudo.junction_count(); ++n) {
    const std::size_t m = pseudo.next(n);
    const Vec w = pseudo.jumps[static_cast<std::size_t>(n)] + st.traj[static_cast<std::size_t>(n)].back() - offsets[m];
    const Splitting& sp = pseudo.segments[m].splitting;
    Parts parts = split_coefficients(sp, w);
    const double su = (sp.stable().basis() * parts.s + sp.unstable().basis() * parts.u).norm();
    st.defects.push_back(std::move(parts));
    st.su.push_back(su);
    st.residual = std::max(st.residual, su);
  }
  if (!std::isfinite(st.residual)) throw Error(Errc::divergence, "non-finite junction residual");
  return st;
}

// Restricted one-segment matrices in frame coefficients: rows of the target
// splitting's `block` applied to A times the source basis.
Mat restricted(const Mat& a, const Splitting& from, const Splitting& to, bool stable) {
  const Mat& basis = stable ? from.stable().basis() : from.unstable().basis();
  const BundleDims d = to.dims();
  Mat out(stable ? d.s : d.u, basis.cols());
  for (Eigen::Index j = 0; j < basis.cols(); ++j) {
    const Vec coef = to.coefficients(a * basis.col(j));
    out.col(j) = stable ? Vec(coef.head(d.s)) : Vec(coef.tail(d.u));
  }
  return out;
}

struct Recursions {
  std::vector<Mat> S, U, U_inv;
};

Recursions recursions(const PseudoOrbit& pseudo, const JunctionState& st) {
  Recursions r;
  for (int n = 0; n < pseudo.junction_count(); ++n) {
    const Splitting& from = pseudo.segments[static_cast<std::size_t>(n)].splitting;
    const Splitting& to = pseudo.segments[pseudo.next(n)].splitting;
    r.S.push_back(restricted(st.cocycles[static_cast<std::size_t>(n)], from, to, true));
    r.U.push_back(restricted(st.cocycles[static_cast<std::size_t>(n)], from, to, false));
    r.U_inv.push_back(small_inverse(r.U.back()));
  }
  return r;
}

// Corrections cancelling the s/u defects when cross terms between the bundles
// are ignored.
std::vector<Vec> decoupled_solve(const PseudoOrbit& pseudo, const Recursions& rec, const std::vector<Parts>& defects) {
  const std::size_t N = pseudo.segments.size();
  const int J = pseudo.junction_count();
  const BundleDims dims = pseudo.segments[0].splitting.dims();
  const int ds = dims.s, du = dims.u;
  std::vector<Vec> sigma(N, Vec::Zero(ds)), ups(N, Vec::Zero(du));

  if (ds > 0) {
    if (pseudo.periodic) {
      Vec r = Vec::Zero(ds);
      Mat phi = Mat::Identity(ds, ds);
      for (int n = 0; n < J; ++n) {
        r = rec.S[n] * r + defects[n].s;
        phi = rec.S[n] * phi;
      }
      sigma[0] = (Mat::Identity(ds, ds) - phi).partialPivLu().solve(r);
    }
    for (std::size_t n = 0; n + 1 < N; ++n) sigma[n + 1] = rec.S[n] * sigma[n] + defects[n].s;
  }
  if (du > 0) {
    if (pseudo.periodic) {
      Vec q = Vec::Zero(du);
      Mat psi = Mat::Identity(du, du);
      for (int n = J - 1; n >= 0; --n) {
        q = rec.U_inv[n] * (q - defects[n].u);
        psi = rec.U_inv[n] * psi;
      }
      ups[0] = (Mat::Identity(du, du) - psi).partialPivLu().solve(q);
      for (int n = J - 1; n >= 1; --n) ups[n] = rec.U_inv[n] * (ups[pseudo.next(n)] - defects[n].u);
    } else {
      for (int n = J - 1; n >= 0; --n) ups[n] = rec.U_inv[n] * (ups[n + 1] - defects[n].u);
    }
  }

  std::vector<Vec> delta(N);
  for (std::size_t n = 0; n < N; ++n) {
    const Splitting& sp = pseudo.segments[n].splitting;
    delta[n] = sp.stable().basis() * sigma[n] + sp.unstable().basis() * ups[n];
  }
  return delta;
}

// s/u parts of the linearized defects w_n + A_n delta_n - delta_{n+1}.
std::vector<Parts> linear_defects(const PseudoOrbit& pseudo, const JunctionState& st, const std::vector<Vec>& delta,
                                  double& size) {
  std::vector<Parts> out;
  size = 0.0;
  for (int n = 0; n < pseudo.junction_count(); ++n) {
    const std::size_t m = pseudo.next(n);
    const Splitting& sp = pseudo.segments[m].splitting;
    Parts p = split_coefficients(sp, st.cocycles[static_cast<std::size_t>(n)] * delta[static_cast<std::size_t>(n)] -
                                         delta[m]);
    p.s += st.defects[n].s;
    p.u += st.defects[n].u;
    size = std::max(size, (sp.stable().basis() * p.s + sp.unstable().basis() * p.u).norm());
    out.push_back(std::move(p));
  }
  return out;
}

// Newton step of the full linearization, by refinement of the decoupled
// solve. Exact in one pass when the splittings are invariant.
std::vector<Vec> newton_step(const PseudoOrbit& pseudo, const JunctionState& st, double& leak) {
  const Recursions rec = recursions(pseudo, st);
  std::vector<Vec> delta = decoupled_solve(pseudo, rec, st.defects);
  double size = 0.0;
  std::vector<Parts> r = linear_defects(pseudo, st, delta, size);
  for (int pass = 0; pass < 50 && size > 1e-6 * st.residual; ++pass) {
    const std::vector<Vec> fix = decoupled_solve(pseudo, rec, r);
    std::vector<Vec> trial = delta;
    for (std::size_t n = 0; n < trial.size(); ++n) trial[n] += fix[n];
    double trial_size = 0.0;
    std::vector<Parts> trial_r = linear_defects(pseudo, st, trial, trial_size);
    if (!(trial_size < size)) break;
    delta = std::move(trial);
    r = std::move(trial_r);
    size = trial_size;
  }
  for (std::size_t n = 0; n < delta.size(); ++n) {
    const double norm = delta[n].norm();
    if (norm > 0.0) leak = std::max(leak, split_coefficients(pseudo.segments[n].splitting, delta[n]).c.norm() / norm);
  }
  return delta;
}

}  // namespace

ShadowResult quasi_shadow_solve(const SystemSpec& system, const PseudoOrbit& pseudo, const ShadowScales& scales,
                                const ShadowOptions& options) {
  const std::vector<std::string> bad = pseudo_orbit_violations(system, pseudo);
  if (!bad.empty()) throw Error(Errc::precondition, "invalid pseudo-orbit: " + bad.front());
  const std::size_t N = pseudo.segments.size();
  const int d = system.dimension();

  ShadowResult res;
  std::vector<Vec> offsets(N, Vec::Zero(d));
  JunctionState st = linearize(system, pseudo, offsets, true);
  while (st.residual >= options.tol_su) {
    if (res.iterations >= options.max_iter) {
      throw Error(Errc::divergence,
                  "s/u residual " + format_number(st.residual) + " after " + std::to_string(res.iterations) + " steps");
    }
    const std::vector<Vec> step = newton_step(pseudo, st, res.center_leak);
    double t = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 30 && !accepted; ++halving, t *= 0.5) {
      std::vector<Vec> trial = offsets;
      for (std::size_t n = 0; n < N; ++n) trial[n] += t * step[n];
      try {
        JunctionState next = linearize(system, pseudo, trial, true);
        if (next.residual < st.residual || next.residual < options.tol_su) {
          offsets = std::move(trial);
          st = std::move(next);
          accepted = true;
        }
      } catch (const Error& e) {
        if (e.code() != Errc::divergence) throw;
      }
    }
    if (!accepted) throw Error(Errc::divergence, "damped Newton step failed to reduce the residual");
    ++res.iterations;
  }
  res.final_residual = st.residual;

  res.offsets = offsets;
  bool all = true;
  for (std::size_t n = 0; n < N; ++n) {
    const Segment& seg = pseudo.segments[n];
    res.starts.push_back(translate(seg.anchor, offsets[n]));
    const double target = scales.eta * scales.eps_k(seg.s_minus);
    res.eps_scale.push_back(target);
    std::vector<double> errs;
    bool ok = true;
    for (const Vec& v : st.traj[n]) {
      errs.push_back(v.norm());
      ok = ok && v.norm() < target;
    }
    res.step_errors.push_back(std::move(errs));
    res.segment_pass.push_back(ok);
    all = all && ok;
  }
  for (int n = 0; n < pseudo.junction_count(); ++n) {
    const Splitting& sp = pseudo.segments[pseudo.next(n)].splitting;
    const Vec center = sp.center().basis() * st.defects[n].c;
    const double su = st.su[n];
    const bool pass = su <= options.tol_leaf && su <= scales.xi * center.norm() + options.tol_leaf;
    res.center_displacements.push_back(center);
    res.su_residuals.push_back(su);
    res.cone_pass.push_back(pass);
    all = all && pass;
  }
  res.converged = all;
  if (!all && options.strict) {
    throw Error(Errc::contract_failure, "shadowing bounds violated at eta = " + format_number(scales.eta));
  }
  return res;
}

ShadowVerification verify_quasi_shadow(const SystemSpec& system, const PseudoOrbit& pseudo, const ShadowResult& result,
                                       const ShadowScales& scales, double tol_leaf) {
  ShadowVerification rep;
  const std::size_t N = pseudo.segments.size();
  if (result.offsets.size() != N) return rep;
  std::vector<TorusPoint> ends(N);
  std::vector<Vec> end_offsets(N);
  for (std::size_t n = 0; n < N; ++n) {
    const Segment& seg = pseudo.segments[n];
    TorusPoint p = seg.anchor;
    Vec off = result.offsets[n];
    const double target = scales.eta * scales.eps_k(seg.s_minus);
    double worst = off.norm();
    for (long i = 0; i < seg.length; ++i) {
      off = system.step_offset(p, off);
      p = system.step(p);
      worst = std::max(worst, off.norm());
    }
    ends[n] = p;
    end_offsets[n] = off;
    const double margin = 1.0 - worst / target;
    rep.segment_margins.push_back(margin);
    if (!(margin > 0.0)) ++rep.failed_segments;
  }
  for (int n = 0; n < pseudo.junction_count(); ++n) {
    const std::size_t m = pseudo.next(n);
    const Vec jump = chart_difference(pseudo.segments[m].anchor, ends[static_cast<std::size_t>(n)]);
    const Vec w = jump + end_offsets[static_cast<std::size_t>(n)] - result.offsets[m];
    const Splitting& sp = pseudo.segments[m].splitting;
    const Parts parts = split_coefficients(sp, w);
    const double su = (sp.stable().basis() * parts.s + sp.unstable().basis() * parts.u).norm();
    const double c = (sp.center().basis() * parts.c).norm();
    const bool pass = su <= tol_leaf && su <= scales.xi * c + tol_leaf;
    rep.junction_pass.push_back(pass);
    if (!pass) ++rep.failed_junctions;
  }
  rep.pass = rep.failed_segments == 0 && rep.failed_junctions == 0;
  return rep;
}

// ---------------------------------------------------------------------------

void write_shadow_trace(const SystemSpec& system, const PseudoOrbit& pseudo, const ShadowResult& result,
                        const std::string& path) {
  const int d = system.dimension();
  std::vector<std::string> header{"segment", "step"};
  for (int i = 0; i < d; ++i) header.push_back("x_" + std::to_string(i));
  for (int i = 0; i < d; ++i) header.push_back("y_" + std::to_string(i));
  for (const char* h : {"step_error", "eps_scale", "pass"}) header.emplace_back(h);
  CsvWriter csv(path, header);
  for (std::size_t n = 0; n < pseudo.segments.size(); ++n) {
    const Segment& seg = pseudo.segments[n];
    const std::vector<Vec> traj = offset_trajectory(system, seg, result.offsets[n]);
    for (long i = 0; i <= seg.length; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      const TorusPoint& x = seg.points[idx];
      const TorusPoint y = translate(x, traj[idx]);
      csv << static_cast<long>(n) << i;
      for (int c = 0; c < d; ++c) csv << x[c];
      for (int c = 0; c < d; ++c) csv << y[c];
      const double e = traj[idx].norm();
      csv << e << result.eps_scale[n] << (e < result.eps_scale[n]);
      csv.end_row();
    }
  }
}

void write_junctions(const PseudoOrbit& pseudo, const ShadowResult& result, const std::string& path) {
  CsvWriter csv(path, {"junction", "jump_norm", "center_disp_norm", "su_residual", "cone_pass"});
  for (int n = 0; n < pseudo.junction_count(); ++n) {
    const auto idx = static_cast<std::size_t>(n);
    csv << n << pseudo.jumps[idx].norm() << result.center_displacements[idx].norm() << result.su_residuals[idx]
        << static_cast<bool>(result.cone_pass[idx]);
    csv.end_row();
  }
}

nlohmann::json shadow_summary(const PseudoOrbit& pseudo, const ShadowResult& result, const ShadowScales& scales) {
  nlohmann::json schedule = nlohmann::json::array();
  for (double v : pseudo.delta_schedule) schedule.push_back(json_number_or_inf(v));
  return {{"converged", result.converged},
          {"iterations", result.iterations},
          {"sup_error", result.sup_error()},
          {"max_center_disp", result.max_center_disp()},
          {"cumulative_center_disp", result.cumulative_center_disp()},
          {"final_residual", result.final_residual},
          {"center_leak", result.center_leak},
          {"segments", pseudo.segments.size()},
          {"junctions", pseudo.junction_count()},
          {"periodic", pseudo.periodic},
          {"eta", scales.eta},
          {"xi", scales.xi},
          {"gamma", scales.gamma},
          {"delta_schedule", schedule}};
}

}  // namespace qshadow

#include "qshadow/harness.hpp"

#include <openssl/opensslv.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include <boost/version.hpp>

#include "qshadow/csv.hpp"
#include "qshadow/entropy.hpp"

namespace qshadow {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

// Everything the stages share; built once per run.
struct Context {
  explicit Context(const ExperimentConfig& c)
      : cfg(c), hash(config_hash(c)), out(resolve_output_dir(c)), system(make_system(c.system.name, c.system.params)) {
    const BundleDims dims = system.bundle_dims();
    degenerate = dims.s + dims.u == 0;
    if (cfg.blocks.rates) {
      params = *cfg.blocks.rates;
      params_source = "config";
    } else if (degenerate) {
      params = {0.5, 0.5, 1e-3, 1e-3, cfg.blocks.eps};
      params_source = "nominal";
    } else {
      std::mt19937_64 rng(seed("blocks/probe"));
      const LyapunovSpectrum spec = lyapunov_spectrum(system, random_point(rng), cfg.blocks.spectrum_horizon);
      params = params_from_spectrum(spec, dims, cfg.blocks.eps);
      params_source = "spectrum";
    }
    params.validate();
    certifier = std::make_unique<Certifier>(system, params, cfg.blocks.horizon,
                                            ClassifyOptions{cfg.blocks.k_max, cfg.blocks.sweep_horizon});
    ball = ball_scale(system, params, cfg.blocks.k_max);
    if (!degenerate) {
      HolderOptions ho;
      ho.n_max = cfg.holder.n_max;
      ho.safety = cfg.holder.safety;
      budget = holder_constants(system, params, ho);
      const double sigma = cfg.shadow.sigma > 0.0 ? cfg.shadow.sigma : default_cone_ratio(params);
      scales = make_shadow_scales(system, params, *budget, ball, cfg.shadow.eta, cfg.shadow.xi, sigma);
    }
    fs::create_directories(out);
  }

  std::uint64_t seed(const std::string& name) const { return substream_seed(cfg.run.seed, name); }

  TorusPoint random_point(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vec c(system.dimension());
    for (int j = 0; j < c.size(); ++j) c[j] = unit(rng);
    return TorusPoint(c);
  }

  ShadowOptions shadow_options(bool strict) const {
    ShadowOptions o;
    o.tol_su = cfg.shadow.tol_su;
    o.tol_leaf = cfg.shadow.tol_leaf;
    o.max_iter = cfg.shadow.max_iter;
    o.strict = strict;
    return o;
  }

  std::string path(const std::string& name) const { return (out / name).string(); }

  const ExperimentConfig& cfg;
  std::string hash;
  fs::path out;
  SystemSpec system;
  bool degenerate = false;
  BlockParams params;
  std::string params_source;
  std::unique_ptr<Certifier> certifier;
  BallScale ball;
  std::optional<HolderBudget> budget;
  std::optional<ShadowScales> scales;
  std::optional<EntropyEstimate> entropy;
  std::optional<TheoremCReport> qpp;
};

void write_json(const Context& ctx, StageOutcome& outcome, const std::string& name, nlohmann::json body) {
  body["config_hash"] = ctx.hash;
  std::ofstream f(ctx.path(name));
  f << body.dump(2) << '\n';
  if (!f) throw Error(Errc::precondition, "cannot write " + ctx.path(name));
  outcome.artifacts.push_back(name);
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; fn must only touch slot i.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  const int workers = std::max(1, std::min(jobs, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::string> coord_columns(const std::string& prefix, int d) {
  std::vector<std::string> cols;
  for (int j = 0; j < d; ++j) cols.push_back(prefix + std::to_string(j));
  return cols;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void put_point(CsvWriter& csv, const TorusPoint& p) {
  for (int j = 0; j < p.dim(); ++j) csv << p[j];
}

nlohmann::json point_json(const TorusPoint& p) {
  nlohmann::json a = nlohmann::json::array();
  for (int j = 0; j < p.dim(); ++j) a.push_back(p[j]);
  return a;
}

double rate(long good, long total) { return total > 0 ? static_cast<double>(good) / total : 1.0; }

// ---------------------------------------------------------------------------

void stage_lyap(Context& ctx, StageOutcome& o) {
  std::mt19937_64 rng(ctx.seed("lyap"));
  const int d = ctx.system.dimension();
  CsvWriter csv(ctx.path("exponents.csv"), {"point", "index", "exponent"});
  nlohmann::json spectra = nlohmann::json::array();
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  bool ok = true;
  for (int i = 0; i < ctx.cfg.lyap.points; ++i) {
    const LyapunovSpectrum s = lyapunov_spectrum(ctx.system, ctx.random_point(rng), ctx.cfg.lyap.horizon);
    for (int j = 0; j < d; ++j) {
      csv << i << j << s.exponents[j];
      csv.end_row();
      mean[j] += s.exponents[j] / ctx.cfg.lyap.points;
      ok = ok && std::isfinite(s.exponents[j]);
    }
    if (!ctx.degenerate) {
      try {
        check_exponent_gap(s, ctx.system.bundle_dims(), ctx.params.eps);
      } catch (const Error& e) {
        ok = false;
        o.note = e.what();
      }
    }
    spectra.push_back(to_json(s));
  }
  o.artifacts.push_back("exponents.csv");
  o.summary = {{"mean_exponents", mean}, {"horizon", ctx.cfg.lyap.horizon}};
  write_json(ctx, o, "lyap.json", {{"spectra", spectra}, {"mean_exponents", mean}});
  o.pass = ok;
}

void stage_blocks(Context& ctx, StageOutcome& o) {
  std::mt19937_64 rng(ctx.seed("blocks"));
  const int d = ctx.system.dimension();
  CsvWriter csv(ctx.path("blocks.csv"),
                concat(concat({"point"}, coord_columns("x", d)),
                       {"kappa", "required_index", "stable_forward", "center_forward", "center_backward",
                        "unstable_backward"}));
  nlohmann::json certs = nlohmann::json::array();
  long failures = 0;
  int worst = 0;
  for (int i = 0; i < ctx.cfg.blocks.points; ++i) {
    const TorusPoint x = ctx.random_point(rng);
    try {
      const BlockCertificate c =
          classify_block(ctx.system, x, ctx.params, ctx.cfg.blocks.horizon,
                         ClassifyOptions{ctx.cfg.blocks.k_max, ctx.cfg.blocks.sweep_horizon});
      csv << i;
      put_point(csv, x);
      csv << c.kappa << c.required_index << c.margins.stable_forward << c.margins.center_forward
          << c.margins.center_backward << c.margins.unstable_backward;
      csv.end_row();
      worst = std::max(worst, c.kappa);
      certs.push_back(to_json(c));
    } catch (const Error& e) {
      if (e.code() != Errc::no_block_index) throw;
      ++failures;
    }
  }
  o.artifacts.push_back("blocks.csv");
  o.summary = {{"points", ctx.cfg.blocks.points}, {"uncertified", failures}, {"max_kappa", worst}};
  write_json(ctx, o, "certificates.json",
             {{"params", to_json(ctx.params)}, {"params_source", ctx.params_source}, {"certificates", certs},
              {"uncertified", failures}});
  o.pass = failures == 0;
  if (failures) o.note = std::to_string(failures) + " points exceed k_max";
}

// Truncated against a 1.5x longer series on the same window.
CheckReport truncation_check(const AdaptedNormEvaluator& ev, const AdaptedNormEvaluator& longer, int samples,
                             std::uint64_t seed) {
  CheckReport r;
  r.check = "truncation";
  r.anchor = ev.anchor();
  r.k = ev.index();
  r.tolerance = ev.tail_bound();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < samples; ++i) {
    Vec v(ev.dimension());
    for (int j = 0; j < v.size(); ++j) v[j] = g(rng);
    const double a = ev.norm(v), b = longer.norm(v);
    worst = std::min(worst, 1.0 - std::abs(a - b) / (r.tolerance * a));
  }
  r.margin = worst;
  r.pass = worst >= 0.0;
  return r;
}

void stage_norms(Context& ctx, StageOutcome& o) {
  const auto& nc = ctx.cfg.norms;
  const int n = nc.points;
  const double sigma = nc.sigma > 0.0 ? nc.sigma : default_cone_ratio(ctx.params);
  const std::vector<std::string> names{"contraction", "equivalence", "truncation", "cone", "translated"};
  std::vector<std::vector<CheckReport>> reports(static_cast<std::size_t>(n));
  std::vector<char> certified(static_cast<std::size_t>(n), 1);
  parallel_for(n, ctx.cfg.run.jobs, [&](int i) {
    std::mt19937_64 rng(ctx.seed("norms/" + std::to_string(i)));
    const TorusPoint x = ctx.random_point(rng);
    const std::uint64_t s = rng();
    BlockCertificate cert;
    try {
      cert = classify_block(ctx.system, x, ctx.params, ctx.cfg.blocks.horizon,
                            ClassifyOptions{ctx.cfg.blocks.k_max, ctx.cfg.blocks.sweep_horizon});
    } catch (const Error& e) {
      if (e.code() != Errc::no_block_index) throw;
      certified[static_cast<std::size_t>(i)] = 0;
      return;
    }
    const long t = AdaptedNormEvaluator::default_truncation(ctx.params.eps, cert.kappa);
    const long t_long = t * 3 / 2;
    auto window = std::make_shared<const SplittingWindow>(ctx.system, x, -(t_long + 1), t_long + 1, 100);
    const AdaptedNormEvaluator ev(window, ctx.params, cert.kappa, t);
    const AdaptedNormEvaluator longer(window, ctx.params, cert.kappa, t_long);
    const double r = ctx.ball.radius(cert.kappa);
    Vec dir(x.dim());
    std::normal_distribution<double> g;
    for (int j = 0; j < dir.size(); ++j) dir[j] = g(rng);
    const TorusPoint y = translate(x, Vec(0.9 * r * dir / dir.norm()));
    auto& out = reports[static_cast<std::size_t>(i)];
    out.push_back(verify_adapted_contraction(ctx.system, ev, nc.samples, s));
    out.push_back(norm_equivalence_bounds(ev, nc.samples, s));
    out.push_back(truncation_check(ev, longer, nc.samples, s));
    out.push_back(cone_invariance_check(ctx.system, ev, nc.xi, sigma, r, nc.samples, s));
    out.push_back(translated_norm_check(ctx.system, ev, y, r, nc.samples, s));
  });

  CsvWriter csv(ctx.path("norms.csv"), {"point", "check", "k", "margin", "pass"});
  nlohmann::json records = nlohmann::json::array();
  std::vector<long> passed(names.size(), 0), total(names.size(), 0);
  std::vector<double> worst(names.size(), std::numeric_limits<double>::infinity());
  double sigma_hat = 0.0;
  long uncertified = 0;
  for (int i = 0; i < n; ++i) {
    if (!certified[static_cast<std::size_t>(i)]) {
      ++uncertified;
      continue;
    }
    const auto& reps = reports[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < reps.size(); ++c) {
      const CheckReport& r = reps[c];
      csv << i << r.check << r.k << r.margin << r.pass;
      csv.end_row();
      nlohmann::json j = to_json(r);
      j["point"] = i;
      records.push_back(j);
      passed[c] += r.pass;
      ++total[c];
      worst[c] = std::min(worst[c], r.margin);
      if (c == 3) sigma_hat = std::max(sigma_hat, r.extra["sigma_hat"].get<double>());
    }
  }
  o.artifacts.push_back("norms.csv");
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t c = 0; c < names.size(); ++c) {
    per[names[c]] = {{"passed", passed[c]}, {"total", total[c]}, {"pass_rate", rate(passed[c], total[c])},
                     {"worst_margin", total[c] ? nlohmann::json(worst[c]) : nlohmann::json(nullptr)}};
  }
  o.summary = {{"checks", per}, {"sigma", sigma}, {"sigma_hat_max", sigma_hat}, {"uncertified", uncertified}};
  write_json(ctx, o, "norms.json", {{"records", records}, {"summary", o.summary}});
  o.pass = uncertified == 0;
  for (std::size_t c = 0; c < 3; ++c) o.pass = o.pass && passed[c] == total[c];
  for (std::size_t c = 3; c < names.size(); ++c) o.pass = o.pass && rate(passed[c], total[c]) >= 0.95;
}

nlohmann::json budget_json(const HolderBudget& b) {
  return {{"alpha", b.alpha}, {"a", b.a},     {"D", b.D},       {"fractions", b.fractions}, {"a1", b.a1},
          {"b1", b.b1},       {"C1", b.C1},   {"b2", b.b2},     {"eps", b.eps},             {"theta", b.theta},
          {"exponent", b.exponent()}};
}

void stage_holder(Context& ctx, StageOutcome& o) {
  if (!ctx.budget) {
    o.skipped = true;
    o.pass = true;
    o.note = "no stable or unstable bundle";
    return;
  }
  const auto& hc = ctx.cfg.holder;
  const auto pairs = sample_holder_pairs(ctx.system, ctx.params, ctx.ball, hc.pairs, ctx.seed("holder"), hc.horizon);
  const HolderFitReport rep =
      empirical_holder_fit(ctx.system, ctx.params, *ctx.budget, pairs, hc.horizon, std::min(100, hc.pairs));
  write_holder_csv(rep, ctx.path("holder_report.csv"));
  o.artifacts.push_back("holder_report.csv");
  o.summary = rep.to_json();
  write_json(ctx, o, "holder.json", {{"budget", budget_json(*ctx.budget)}, {"fit", o.summary}});
  o.pass = rep.pair_pass_rate >= 0.95;
}

std::vector<double> shadow_schedule(const Context& ctx) {
  const auto& sc = ctx.cfg.shadow;
  const int k_max = ctx.cfg.blocks.k_max;
  if (sc.schedule == "certified") return certified_schedule(*ctx.scales, k_max);
  if (sc.schedule == "constant") return constant_schedule(sc.fraction, k_max);
  return practical_schedule(*ctx.scales, k_max, sc.fraction);
}

void skip_without_scales(StageOutcome& o) {
  o.skipped = true;
  o.pass = true;
  o.note = "no stable or unstable bundle";
}

void stage_shadow(Context& ctx, StageOutcome& o) {
  if (!ctx.scales) return skip_without_scales(o);
  const auto& sc = ctx.cfg.shadow;
  const std::vector<double> schedule = shadow_schedule(ctx);
  const auto sources = certified_sources(ctx.system, *ctx.certifier, sc.sources, ctx.seed("shadow/sources"));
  PseudoOrbitRequest req;
  req.segments = sc.segments;
  req.min_length = sc.min_length;
  req.max_length = sc.max_length;
  req.rho = sc.rho;

  struct Trial {
    std::optional<PseudoOrbit> pseudo;
    std::optional<ShadowResult> result;
    std::string error;
    bool verified = false;
  };
  std::vector<Trial> trials(static_cast<std::size_t>(sc.trials));
  parallel_for(sc.trials, ctx.cfg.run.jobs, [&](int i) {
    Trial& t = trials[static_cast<std::size_t>(i)];
    try {
      t.pseudo = generate_pseudo_orbit(ctx.system, *ctx.certifier, sources, req, schedule,
                                       ctx.seed("shadow/trial/" + std::to_string(i)));
      t.result = quasi_shadow_solve(ctx.system, *t.pseudo, *ctx.scales, ctx.shadow_options(false));
      if (t.result->converged) {
        t.verified = verify_quasi_shadow(ctx.system, *t.pseudo, *t.result, *ctx.scales, sc.tol_leaf).pass;
      }
    } catch (const Error& e) {
      if (e.code() == Errc::invalid_argument || e.code() == Errc::precondition) throw;
      t.error = e.what();
    }
  });

  CsvWriter csv(ctx.path("shadow_trials.csv"), {"trial", "converged", "verified", "iterations", "final_residual",
                                                 "sup_error", "max_center_disp", "cumulative_center_disp"});
  long converged = 0, verified = 0;
  nlohmann::json errors = nlohmann::json::array();
  for (int i = 0; i < sc.trials; ++i) {
    const Trial& t = trials[static_cast<std::size_t>(i)];
    const bool conv = t.result && t.result->converged;
    converged += conv;
    verified += t.verified;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    csv << i << conv << t.verified << static_cast<long>(t.result ? t.result->iterations : 0)
        << (t.result ? t.result->final_residual : nan) << (t.result ? t.result->sup_error() : nan)
        << (t.result ? t.result->max_center_disp() : nan) << (t.result ? t.result->cumulative_center_disp() : nan);
    csv.end_row();
    if (!t.error.empty()) errors.push_back({{"trial", i}, {"error", t.error}});
  }
  o.artifacts.push_back("shadow_trials.csv");
  nlohmann::json first = nullptr;
  if (!trials.empty() && trials.front().result) {
    const Trial& t = trials.front();
    write_shadow_trace(ctx.system, *t.pseudo, *t.result, ctx.path("shadow_trace.csv"));
    write_junctions(*t.pseudo, *t.result, ctx.path("junction.csv"));
    o.artifacts.push_back("shadow_trace.csv");
    o.artifacts.push_back("junction.csv");
    first = shadow_summary(*t.pseudo, *t.result, *ctx.scales);
  }
  o.summary = {{"trials", sc.trials},
               {"converged", converged},
               {"verified", verified},
               {"convergence_rate", rate(converged, sc.trials)},
               {"schedule", sc.schedule}};
  write_json(ctx, o, "shadow.json",
             {{"summary", o.summary}, {"scales", ctx.scales->to_json()}, {"trial0", first}, {"errors", errors}});
  o.pass = rate(converged, sc.trials) >= 0.99 && verified == converged;
}

void stage_close(Context& ctx, StageOutcome& o) {
  if (!ctx.scales) return skip_without_scales(o);
  const auto& cc = ctx.cfg.close;
  const ClosingSweep sweep = exhaustive_closing(ctx.system, *ctx.certifier, *ctx.scales, cc.period, cc.grid, cc.beta,
                                                cc.dedup, ctx.shadow_options(true));
  const int d = ctx.system.dimension();
  const BundleDims dims = ctx.system.bundle_dims();
  CsvWriter csv(ctx.path("closing.csv"), concat(concat({"point"}, coord_columns("y", d)), {"center_disp_norm"}));
  double drift_dev = 0.0;
  const bool fiber_oracle = ctx.system.is_linear() && dims.c > 0 && ctx.system.parameters().count("alpha_rot");
  const double drift = fiber_oracle ? std::abs(cc.period * ctx.system.parameters().at("alpha_rot")) : 0.0;
  for (std::size_t i = 0; i < sweep.distinct.size(); ++i) {
    csv << static_cast<long>(i);
    put_point(csv, sweep.distinct[i]);
    const double u = sweep.distinct_center[i].norm();
    csv << u;
    csv.end_row();
    if (fiber_oracle) drift_dev = std::max(drift_dev, std::abs(u - drift));
  }
  o.artifacts.push_back("closing.csv");
  o.summary = {{"period", cc.period},          {"grid_points", sweep.grid_points}, {"candidates", sweep.candidates},
               {"solved", sweep.solved},       {"failures", sweep.failures},       {"distinct", sweep.distinct.size()},
               {"max_period_defect", sweep.max_period_defect}};
  o.pass = sweep.failures == 0;
  if (sweep.failures) {
    o.note = std::to_string(sweep.failures) + " of " + std::to_string(sweep.candidates) +
             " candidates failed; certified step bound eta*eps_1 = " +
             format_number(ctx.scales->eta * ctx.scales->eps_k(1));
  }
  if (ctx.system.is_linear() && dims.c == 0) {
    const double exact = periodic_point_count(ctx.system, cc.period);
    o.summary["exact_count"] = exact;
    o.pass = o.pass && static_cast<double>(sweep.distinct.size()) == exact && sweep.max_period_defect <= 1e-12;
  }
  if (fiber_oracle) {
    o.summary["fiber_drift"] = drift;
    o.summary["drift_deviation"] = drift_dev;
    o.pass = o.pass && drift_dev <= 1e-8;
  }
  write_json(ctx, o, "closing.json", o.summary);
}

void stage_spec(Context& ctx, StageOutcome& o) {
  if (!ctx.scales) return skip_without_scales(o);
  const auto& sp = ctx.cfg.spec;
  std::mt19937_64 rng(ctx.seed("spec"));
  const ReferenceOrbit ref(ctx.system, ctx.random_point(rng), sp.reference_length, sp.cell);
  // Segments share their center coordinates.
  const int d = ctx.system.dimension();
  const int base = d - ctx.system.bundle_dims().c;
  const TorusPoint fiber = ctx.random_point(rng);
  std::vector<std::pair<TorusPoint, long>> pieces;
  for (int i = 0; i < sp.segments; ++i) {
    TorusPoint p = ctx.random_point(rng);
    Vec c(d);
    for (int j = 0; j < d; ++j) c[j] = j < base ? p[j] : fiber[j];
    pieces.emplace_back(TorusPoint(c), sp.length);
  }
  const SpecificationResult r =
      quasi_specification(ctx.system, *ctx.certifier, pieces, ref, sp.delta, sp.horizon, *ctx.scales,
                          ctx.shadow_options(false));
  const ShadowVerification v = r.shadow.converged
                                   ? verify_quasi_shadow(ctx.system, r.pseudo, r.shadow, *ctx.scales, ctx.cfg.shadow.tol_leaf)
                                   : ShadowVerification{};
  write_shadow_trace(ctx.system, r.pseudo, r.shadow, ctx.path("spec_trace.csv"));
  write_junctions(r.pseudo, r.shadow, ctx.path("spec_junction.csv"));
  o.artifacts.push_back("spec_trace.csv");
  o.artifacts.push_back("spec_junction.csv");
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& [p, len] : pieces) anchors.push_back({{"anchor", point_json(p)}, {"length", len}});
  o.summary = {{"segments", sp.segments},          {"transitions", r.transitions},
               {"horizon", sp.horizon},            {"converged", r.shadow.converged},
               {"verified", v.pass},               {"failed_segments", v.failed_segments},
               {"failed_junctions", v.failed_junctions}};
  write_json(ctx, o, "spec.json",
             {{"summary", o.summary}, {"pieces", anchors}, {"shadow", shadow_summary(r.pseudo, r.shadow, *ctx.scales)}});
  o.pass = r.shadow.converged && v.pass;
}

void stage_entropy(Context& ctx, StageOutcome& o) {
  const auto& ec = ctx.cfg.entropy;
  const auto samples = uniform_samples(ctx.system.dimension(), ec.samples, ctx.seed("entropy"));
  ctx.entropy = katok_estimate(ctx.system, samples, ec.gamma, ec.delta, ec.n_lo, ec.n_hi);
  write_entropy_csv(*ctx.entropy, ctx.path("entropy.csv"));
  o.artifacts.push_back("entropy.csv");
  o.summary = ctx.entropy->to_json();
  o.summary.erase("rows");
  write_json(ctx, o, "entropy.json", ctx.entropy->to_json());
  o.pass = ctx.entropy->budget_issue.empty();
  o.note = ctx.entropy->budget_issue;
}

TheoremCOptions qpp_options(const Context& ctx) {
  const auto& q = ctx.cfg.qpp;
  TheoremCOptions opt;
  opt.epsilons = q.epsilons;
  opt.n_lo = q.n_lo;
  opt.n_hi = q.n_hi;
  opt.gamma = q.gamma;
  opt.budget.beta = q.beta;
  opt.budget.max_candidates = q.max_candidates;
  opt.saturation = q.saturation;
  return opt;
}

void stage_qpp(Context& ctx, StageOutcome& o) {
  const auto& q = ctx.cfg.qpp;
  std::mt19937_64 rng(ctx.seed("qpp"));
  const ReferenceOrbit ref(ctx.system, ctx.random_point(rng), q.reference_length, q.cell);
  EntropyEstimate h;
  h.h_hat = ctx.entropy ? ctx.entropy->h_hat : std::numeric_limits<double>::quiet_NaN();
  ctx.qpp = theorem_c_check(ctx.system, *ctx.certifier, ref, h, ctx.scales.value_or(ShadowScales{}), qpp_options(ctx));
  write_qpp_csv(*ctx.qpp, ctx.path("qpp.csv"));
  o.artifacts.push_back("qpp.csv");
  o.summary = {{"epsilons", ctx.qpp->epsilons}, {"rates", ctx.qpp->rates}};
  write_json(ctx, o, "qpp.json", ctx.qpp->to_json());
  o.pass = std::all_of(ctx.qpp->rates.begin(), ctx.qpp->rates.end(), [](double r) { return std::isfinite(r); });
}

void stage_theorem_c(Context& ctx, StageOutcome& o) {
  if (!ctx.entropy) {
    StageOutcome sub;
    stage_entropy(ctx, sub);
    o.artifacts.insert(o.artifacts.end(), sub.artifacts.begin(), sub.artifacts.end());
  }
  if (!ctx.qpp) {
    StageOutcome sub;
    stage_qpp(ctx, sub);
    o.artifacts.insert(o.artifacts.end(), sub.artifacts.begin(), sub.artifacts.end());
  }
  TheoremCReport report = *ctx.qpp;
  const auto& q = ctx.cfg.qpp;
  const long longest = std::max(q.kn_n, q.trend_n.back());
  const int length = static_cast<int>(std::floor((1.0 + q.gamma) * longest)) + 2;
  const OrbitTable table(ctx.system, uniform_samples(ctx.system.dimension(), q.kn_samples, ctx.seed("kn")), length);

  const KnSet kn = build_Kn(ctx.system, *ctx.certifier, table, q.k, q.gamma, q.l, q.kn_n, q.kn_beta);
  const auto kn_bad = kn_violations(ctx.system, *ctx.certifier, kn);
  const int d = ctx.system.dimension();
  {
    CsvWriter csv(ctx.path("kn_members.csv"), concat(coord_columns("x", d), {"m", "kappa", "kappa_return"}));
    for (const KnMember& m : kn.members) {
      put_point(csv, m.x);
      csv << m.m << m.kappa << m.kappa_return;
      csv.end_row();
    }
    o.artifacts.push_back("kn_members.csv");
  }
  nlohmann::json harvest_json = nullptr;
  std::vector<std::string> harvest_bad;
  if (ctx.scales) {
    const SeparatedQPPSet h = harvest_quasi_periodic(ctx.system, *ctx.certifier, kn, *ctx.scales,
                                                     ctx.shadow_options(false));
    harvest_bad = qpp_violations(ctx.system, *ctx.certifier, h, ctx.cfg.shadow.xi, ctx.cfg.shadow.tol_leaf);
    CsvWriter csv(ctx.path("harvest.csv"), concat(coord_columns("y", d), {"period", "su_residual", "center_disp"}));
    for (const QuasiPeriodicPoint& p : h.points) {
      put_point(csv, p.y);
      csv << p.period << p.su_residual << p.center_disp;
      csv.end_row();
    }
    o.artifacts.push_back("harvest.csv");
    harvest_json = {{"count", h.count()},      {"attempts", h.attempts}, {"failures", h.failures},
                    {"separation", h.separation}, {"violations", harvest_bad}};
  }
  if (!ctx.degenerate) {
    lambda_kn_trend(ctx.system, *ctx.certifier, table, q.k, q.gamma, q.kn_beta, q.trend_n, report);
  }
  set_entropy(report, ctx.entropy->h_hat);
  const nlohmann::json kn_json = {{"k", kn.k},           {"n", kn.n},
                                  {"members", kn.members.size()}, {"lambda_k", kn.lambda_k},
                                  {"lambda_kn", kn.lambda_kn}, {"mesh", kn.mesh},
                                  {"beta", kn.beta},     {"violations", kn_bad}};
  o.summary = {{"h_hat", report.h_hat}, {"rates", report.rates},       {"margins", report.margins},
               {"trend_tau", report.trend_tau}, {"kn_members", kn.members.size()}};
  nlohmann::json body = report.to_json();
  body["entropy"] = ctx.entropy->to_json();
  body["kn"] = kn_json;
  body["harvest"] = harvest_json;
  write_json(ctx, o, "theoremC.json", body);
  o.pass = report.pass && kn_bad.empty() && harvest_bad.empty();
  std::vector<std::string> notes;
  if (!ctx.entropy->budget_issue.empty()) notes.push_back("entropy: " + ctx.entropy->budget_issue);
  if (!report.trend_pass) notes.push_back("Lambda_{k,n} trend not increasing (tau = " + format_number(report.trend_tau) + ")");
  if (!kn_bad.empty()) notes.push_back(std::to_string(kn_bad.size()) + " K_n members fail revalidation");
  if (!harvest_bad.empty()) notes.push_back(std::to_string(harvest_bad.size()) + " harvest violations");
  for (const std::string& n : notes) o.note += (o.note.empty() ? "" : "; ") + n;
}

using StageFn = void (*)(Context&, StageOutcome&);

const std::vector<std::pair<std::string, StageFn>>& stage_table() {
  static const std::vector<std::pair<std::string, StageFn>> t{
      {"lyap", stage_lyap},       {"blocks", stage_blocks}, {"norms", stage_norms},
      {"holder", stage_holder},   {"shadow", stage_shadow}, {"close", stage_close},
      {"spec", stage_spec},       {"entropy", stage_entropy}, {"qpp", stage_qpp},
      {"theorem-c", stage_theorem_c}};
  return t;
}

nlohmann::json versions() {
  return {{"qshadow", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", BOOST_LIB_VERSION},
          {"openssl", OPENSSL_VERSION_TEXT},
          {"compiler", __VERSION__}};
}

std::string file_sha256(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [name, fn] : stage_table()) v.push_back(name);
    v.push_back("all");
    return v;
  }();
  return names;
}

std::string resolve_output_dir(const ExperimentConfig& config) {
  if (!config.run.out.empty()) return config.run.out;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "results";
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json stages_json = nlohmann::json::array();
  for (const StageOutcome& s : stages) {
    stages_json.push_back({{"stage", s.stage},
                           {"pass", s.pass},
                           {"skipped", s.skipped},
                           {"note", s.note},
                           {"seconds", s.seconds},
                           {"artifacts", s.artifacts},
                           {"summary", s.summary}});
  }
  return {{"subcommand", subcommand},
          {"output_dir", output_dir},
          {"config_hash", config_hash},
          {"exit_code", static_cast<int>(exit_code)},
          {"stages", stages_json}};
}

RunReport run(const std::string& subcommand, const ExperimentConfig& config) {
  std::vector<std::pair<std::string, StageFn>> selected;
  for (const auto& entry : stage_table())
    if (subcommand == "all" || subcommand == entry.first) selected.push_back(entry);
  if (selected.empty()) throw Error(Errc::config, "unknown subcommand '" + subcommand + "'");

  Context ctx(config);
  RunReport report;
  report.subcommand = subcommand;
  report.output_dir = ctx.out.string();
  report.config_hash = ctx.hash;
  for (const auto& [name, fn] : selected) {
    StageOutcome o;
    o.stage = name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(ctx, o);
    } catch (const Error& e) {
      if (e.code() == Errc::config) throw;
      o.pass = false;
      o.note = e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) report.exit_code = ExitCode::contract_fail;
    report.stages.push_back(std::move(o));
  }

  nlohmann::json artifacts = nlohmann::json::array();
  for (const StageOutcome& s : report.stages)
    for (const std::string& a : s.artifacts)
      artifacts.push_back({{"path", a}, {"stage", s.stage}, {"sha256", file_sha256(ctx.out / a)}, {"config_hash", ctx.hash}});
  nlohmann::json manifest = report.to_json();
  manifest["seed"] = config.run.seed;
  manifest["versions"] = versions();
  manifest["config"] = serialize_config(config);
  manifest["artifacts"] = artifacts;
  std::ofstream f(ctx.out / ("manifest_" + subcommand + ".json"));
  f << manifest.dump(2) << '\n';
  return report;
}

}  // namespace qshadow

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "qshadow/csv.hpp"
#include "qshadow/entropy.hpp"

namespace qshadow {

namespace {

// Orbit of a point over n steps, flattened.
std::vector<double> orbit_coords(const SystemSpec& system, const TorusPoint& x, long n) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n * x.dim()));
  TorusPoint p = x;
  for (long t = 0; t < n; ++t) {
    for (int j = 0; j < x.dim(); ++j) out.push_back(p[j]);
    if (t + 1 < n) p = system.step(p);
  }
  return out;
}

double bowen(const std::vector<double>& a, const std::vector<double>& b, int d) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); k += static_cast<std::size_t>(d)) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      double r = b[k + j] - a[k + j];
      r -= std::ceil(r - 0.5);
      s += r * r;
    }
    worst = std::max(worst, s);
  }
  return std::sqrt(worst);
}

// Greedy (n, eps)-separated selection with a time-0 grid of cells at least eps
// wide, so every point within eps lies in the 3^d surrounding cells.
class SeparatedPicker {
 public:
  SeparatedPicker(const SystemSpec& system, long n, double eps)
      : system_(system), n_(n), eps_(eps), d_(system.dimension()) {
    per_axis_ = std::max(1L, static_cast<long>(std::floor(1.0 / eps)));
  }

  bool offer(const TorusPoint& x) {
    std::vector<double> orbit = orbit_coords(system_, x, n_);
    std::vector<long> home(static_cast<std::size_t>(d_));
    for (int j = 0; j < d_; ++j) home[j] = std::min(per_axis_ - 1, static_cast<long>(x[j] * per_axis_));
    const long span = std::min(3L, per_axis_);
    std::vector<long> off(static_cast<std::size_t>(d_), 0);
    while (true) {
      long key = 0;
      for (int j = d_ - 1; j >= 0; --j) {
        const long c = per_axis_ < 3 ? off[j] : ((home[j] + off[j] - 1) % per_axis_ + per_axis_) % per_axis_;
        key = key * per_axis_ + c;
      }
      const auto it = cells_.find(key);
      if (it != cells_.end()) {
        for (std::size_t k : it->second) {
          if (!(bowen(orbits_[k], orbit, d_) > eps_)) return false;
        }
      }
      int j = 0;
      while (j < d_ && ++off[j] == span) off[j++] = 0;
      if (j == d_) break;
    }
    long key = 0;
    for (int j = d_ - 1; j >= 0; --j) key = key * per_axis_ + home[j];
    cells_[key].push_back(orbits_.size());
    orbits_.push_back(std::move(orbit));
    return true;
  }

 private:
  const SystemSpec& system_;
  long n_;
  double eps_;
  int d_;
  long per_axis_;
  std::unordered_map<long, std::vector<std::size_t>> cells_;
  std::vector<std::vector<double>> orbits_;
};

struct Certificate {
  double su = 0.0;
  double center = 0.0;
};

Certificate period_certificate(const SystemSpec& system, const Certifier& certifier, const TorusPoint& y, long p) {
  const Vec w = minimal_offset(y, evaluate(system, y, p));
  const SplitComponents parts = certifier(y).splitting.decompose(w);
  return {(parts.s + parts.u).norm(), parts.c.norm()};
}

bool degenerate(const SystemSpec& system) {
  const BundleDims d = system.bundle_dims();
  return d.s == 0 && d.u == 0;
}

// Closed candidates: converged closings of beta-recurrences at lag n.
struct Mined {
  long candidates = 0;
  long failures = 0;
  std::vector<QuasiPeriodicPoint> points;
};

Mined mine_and_close(const SystemSpec& system, const Certifier& certifier, const ReferenceOrbit& reference, long n,
                     const ShadowScales& scales, const QppBudget& budget, ShadowOptions options) {
  options.strict = false;
  Mined out;
  for (long t = 0; t + n < reference.size() && out.candidates < budget.max_candidates; ++t) {
    const TorusPoint x = reference.at(t);
    if (!(torus_distance(x, reference.at(t + n)) < budget.beta)) continue;
    ++out.candidates;
    try {
      const ClosingResult r = quasi_close(system, certifier, x, n, scales, budget.beta, options);
      if (!r.shadow.converged) {
        ++out.failures;
        continue;
      }
      QuasiPeriodicPoint q;
      q.y = r.shadow.starts.front();
      q.period = n;
      q.su_residual = r.shadow.su_residuals.front();
      q.center_disp = r.shadow.center_displacements.front().norm();
      q.source = x;
      out.points.push_back(std::move(q));
    } catch (const Error& e) {
      if (e.code() == Errc::invalid_argument || e.code() == Errc::dimension_mismatch) throw;
      ++out.failures;
    }
  }
  return out;
}

SeparatedQPPSet separate(const SystemSpec& system, const std::vector<QuasiPeriodicPoint>& points, long n, double eps) {
  SeparatedQPPSet out;
  out.n = n;
  out.separation = eps;
  SeparatedPicker picker(system, n, eps);
  for (const QuasiPeriodicPoint& q : points) {
    if (picker.offer(q.y)) out.points.push_back(q);
  }
  return out;
}

// Every point of a system without s/u bundles is quasi-periodic: count a
// maximal separated subset of the reference orbit in lexicographic order.
SeparatedQPPSet packing_count(const SystemSpec& system, const ReferenceOrbit& reference, long n, double eps,
                              long max_points) {
  const long m = std::min(reference.size(), max_points);
  std::vector<QuasiPeriodicPoint> pts;
  pts.reserve(static_cast<std::size_t>(m));
  for (long t = 0; t < m; ++t) {
    QuasiPeriodicPoint q;
    q.y = reference.at(t);
    q.period = n;
    q.source = q.y;
    pts.push_back(std::move(q));
  }
  std::sort(pts.begin(), pts.end(), [](const QuasiPeriodicPoint& a, const QuasiPeriodicPoint& b) {
    return std::lexicographical_compare(a.y.coords().begin(), a.y.coords().end(), b.y.coords().begin(),
                                        b.y.coords().end());
  });
  SeparatedQPPSet out = separate(system, pts, n, eps);
  out.attempts = m;
  out.packing_only = true;
  return out;
}

double slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() < 2) return std::nan("");
  const double k = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / k;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / k;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace

KnSet build_Kn(const SystemSpec& system, const Certifier& certifier, const OrbitTable& samples, int k, double gamma,
               double l, long n, double beta) {
  if (n < 1 || !(gamma > 0.0) || !(l >= 1.0) || !(beta > 0.0 && beta <= 1.0) || k < 1) {
    throw Error(Errc::invalid_argument, "K_n parameters");
  }
  if (samples.dim() != system.dimension()) throw Error(Errc::dimension_mismatch, "sample table dimension");
  const long m_hi = static_cast<long>(std::floor((1.0 + gamma) * n));
  if (m_hi >= samples.length()) {
    throw Error(Errc::precondition, "orbit windows of length " + std::to_string(samples.length()) +
                                        " do not reach (1 + gamma) n = " + std::to_string(m_hi));
  }
  const int d = samples.dim();
  KnSet out;
  out.k = k;
  out.n = n;
  out.gamma = gamma;
  out.l = l;
  out.beta = beta;
  const long cells = static_cast<long>(std::floor(std::sqrt(static_cast<double>(d)) / beta)) + 1;
  out.mesh = 1.0 / cells;
  auto cell = [&](const double* p) {
    long idx = 0;
    for (int j = d - 1; j >= 0; --j) idx = idx * cells + std::min(cells - 1, static_cast<long>(p[j] * cells));
    return idx;
  };
  auto kappa_of = [&](const TorusPoint& x) {
    try {
      return certifier(x).kappa;
    } catch (const Error& e) {
      if (e.code() != Errc::no_block_index) throw;
      return certifier.k_max() + 1;
    }
  };

  std::vector<int> returning;
  std::vector<KnMember> data;
  for (int i = 0; i < samples.size(); ++i) {
    const int kappa = kappa_of(samples.point(i, 0));
    if (kappa > k) continue;
    ++out.lambda_k;
    const long home = cell(samples.at(i, 0));
    for (long m = n; m <= m_hi; ++m) {
      if (cell(samples.at(i, static_cast<int>(m))) != home) continue;
      const int back = kappa_of(samples.point(i, static_cast<int>(m)));
      if (back > k) continue;
      returning.push_back(i);
      data.push_back({samples.point(i, 0), m, kappa, back});
      break;
    }
  }
  out.lambda_kn = static_cast<long>(returning.size());
  std::vector<int> kept;
  for (std::size_t a = 0; a < returning.size(); ++a) {
    const int i = returning[a];
    const bool free = std::all_of(kept.begin(), kept.end(), [&](int b) {
      return samples.bowen_distance(i, returning[static_cast<std::size_t>(b)], static_cast<int>(n)) > 1.0 / l;
    });
    if (free) {
      kept.push_back(static_cast<int>(a));
      out.members.push_back(data[a]);
    }
  }
  return out;
}

std::vector<std::string> kn_violations(const SystemSpec& system, const Certifier& certifier, const KnSet& set) {
  std::vector<std::string> out;
  const long m_hi = static_cast<long>(std::floor((1.0 + set.gamma) * set.n));
  std::vector<std::vector<double>> orbits;
  for (std::size_t a = 0; a < set.members.size(); ++a) {
    const KnMember& x = set.members[a];
    const std::string tag = "member " + std::to_string(a) + ": ";
    try {
      if (certifier(x.x).kappa > set.k) out.push_back(tag + "outside Lambda_k");
    } catch (const Error&) {
      out.push_back(tag + "not certified");
    }
    if (x.m < set.n || x.m > m_hi) out.push_back(tag + "return time outside [n, (1 + gamma) n]");
    const TorusPoint back = evaluate(system, x.x, x.m);
    try {
      if (certifier(back).kappa > set.k) out.push_back(tag + "return point outside Lambda_k");
    } catch (const Error&) {
      out.push_back(tag + "return point not certified");
    }
    if (!(torus_distance(x.x, back) <= set.beta)) out.push_back(tag + "return farther than beta");
    orbits.push_back(orbit_coords(system, x.x, set.n));
  }
  for (std::size_t a = 0; a < orbits.size(); ++a) {
    for (std::size_t b = 0; b < a; ++b) {
      if (!(bowen(orbits[a], orbits[b], system.dimension()) > 1.0 / set.l)) {
        out.push_back("members " + std::to_string(b) + ", " + std::to_string(a) + " not (n, 1/l)-separated");
      }
    }
  }
  return out;
}

SeparatedQPPSet harvest_quasi_periodic(const SystemSpec& system, const Certifier& certifier, const KnSet& set,
                                       const ShadowScales& scales, const ShadowOptions& options) {
  if (set.members.empty()) throw Error(Errc::precondition, "K_n is empty");
  ShadowOptions opts = options;
  opts.strict = false;
  const double near = 1.0 / (3.0 * set.l);
  std::map<long, std::vector<QuasiPeriodicPoint>> classes;
  long attempts = 0, failures = 0;
  for (const KnMember& x : set.members) {
    ++attempts;
    try {
      const ClosingResult r = quasi_close(system, certifier, x.x, x.m, scales, set.beta, opts);
      const TorusPoint& y = r.shadow.starts.front();
      if (!r.shadow.converged || bowen(orbit_coords(system, x.x, x.m), orbit_coords(system, y, x.m),
                                       system.dimension()) >= near) {
        ++failures;
        continue;
      }
      classes[x.m].push_back(
          {y, x.m, r.shadow.su_residuals.front(), r.shadow.center_displacements.front().norm(), x.x});
    } catch (const Error& e) {
      if (e.code() == Errc::invalid_argument || e.code() == Errc::dimension_mismatch) throw;
      ++failures;
    }
  }
  SeparatedQPPSet out;
  out.n = set.n;
  out.separation = near;
  out.attempts = attempts;
  out.failures = failures;
  for (auto& [m, pts] : classes) {
    if (pts.size() > out.points.size()) out.points = std::move(pts);
  }
  return out;
}

std::vector<std::string> qpp_violations(const SystemSpec& system, const Certifier& certifier,
                                        const SeparatedQPPSet& set, double xi, double tol_leaf) {
  std::vector<std::string> out;
  std::vector<std::vector<double>> orbits;
  for (std::size_t a = 0; a < set.points.size(); ++a) {
    const QuasiPeriodicPoint& q = set.points[a];
    orbits.push_back(orbit_coords(system, q.y, set.n));
    if (set.packing_only) continue;
    const Certificate c = period_certificate(system, certifier, q.y, q.period);
    if (!(c.su <= tol_leaf && c.su <= xi * c.center + tol_leaf)) {
      out.push_back("point " + std::to_string(a) + ": f^p(y) - y outside the center cone (s/u " +
                    format_number(c.su) + ")");
    }
  }
  for (std::size_t a = 0; a < orbits.size(); ++a) {
    for (std::size_t b = 0; b < a; ++b) {
      if (!(bowen(orbits[a], orbits[b], system.dimension()) > set.separation)) {
        out.push_back("points " + std::to_string(b) + ", " + std::to_string(a) + " not separated");
      }
    }
  }
  return out;
}

SeparatedQPPSet count_separated_qpp(const SystemSpec& system, const Certifier& certifier, const ReferenceOrbit& reference,
                                    long n, double eps, const ShadowScales& scales, const QppBudget& budget,
                                    const ShadowOptions& options) {
  if (n < 1 || !(eps > 0.0)) throw Error(Errc::invalid_argument, "qpp period and separation");
  if (degenerate(system)) return packing_count(system, reference, n, eps, budget.max_candidates);
  const Mined mined = mine_and_close(system, certifier, reference, n, scales, budget, options);
  SeparatedQPPSet out = separate(system, mined.points, n, eps);
  out.attempts = mined.candidates;
  out.failures = mined.failures;
  return out;
}

double periodic_point_count(const SystemSpec& system, long n) {
  if (!system.is_linear() || system.bundle_dims().c != 0) {
    throw Error(Errc::precondition, "exact periodic counts need a linear map without center");
  }
  if (n < 1) throw Error(Errc::invalid_argument, "period must be positive");
  const int d = system.dimension();
  const Mat A = system.jacobian(TorusPoint(Vec::Zero(d)));
  using Int = __int128;
  std::vector<std::vector<Int>> a(d, std::vector<Int>(d)), p(d, std::vector<Int>(d, 0));
  for (int i = 0; i < d; ++i) {
    p[i][i] = 1;
    for (int j = 0; j < d; ++j) {
      if (A(i, j) != std::round(A(i, j))) throw Error(Errc::precondition, "matrix is not integral");
      a[i][j] = static_cast<Int>(A(i, j));
    }
  }
  const Int limit = static_cast<Int>(1) << (100 / d);
  for (long step = 0; step < n; ++step) {
    std::vector<std::vector<Int>> q(d, std::vector<Int>(d, 0));
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        for (int k = 0; k < d; ++k) q[i][j] += a[i][k] * p[k][j];
        if (q[i][j] > limit || q[i][j] < -limit) throw Error(Errc::overflow, "periodic count out of range");
      }
    }
    p = std::move(q);
  }
  for (int i = 0; i < d; ++i) p[i][i] -= 1;
  // Bareiss elimination keeps every intermediate an exact integer.
  Int prev = 1;
  int sign = 1;
  for (int k = 0; k + 1 < d; ++k) {
    if (p[k][k] == 0) {
      int r = k + 1;
      while (r < d && p[r][k] == 0) ++r;
      if (r == d) return 0.0;
      std::swap(p[k], p[r]);
      sign = -sign;
    }
    for (int i = k + 1; i < d; ++i) {
      for (int j = k + 1; j < d; ++j) p[i][j] = (p[i][j] * p[k][k] - p[i][k] * p[k][j]) / prev;
    }
    prev = p[k][k];
  }
  const Int det = sign * p[d - 1][d - 1];
  return static_cast<double>(det < 0 ? -det : det);
}

double kendall_tau(const std::vector<double>& v) {
  long concordant = 0, discordant = 0, ties = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      if (v[j] > v[i]) {
        ++concordant;
      } else if (v[j] < v[i]) {
        ++discordant;
      } else {
        ++ties;
      }
    }
  }
  const double pairs = static_cast<double>(concordant + discordant + ties);
  const double untied = static_cast<double>(concordant + discordant);
  if (untied == 0.0) return 0.0;
  return (concordant - discordant) / std::sqrt(pairs * untied);
}

nlohmann::json TheoremCReport::to_json() const {
  nlohmann::json rates_json = nlohmann::json::object();
  nlohmann::json margins_json = nlohmann::json::object();
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    const std::string key = format_number(epsilons[i]);
    rates_json[key] = std::isfinite(rates[i]) ? nlohmann::json(rates[i]) : nlohmann::json(nullptr);
    margins_json[key] = std::isfinite(margins[i]) ? nlohmann::json(margins[i]) : nlohmann::json(nullptr);
  }
  nlohmann::json trend = {{"n", trend_n}, {"fraction", trend_fraction}, {"kendall_tau", trend_tau},
                          {"pass", trend_pass}};
  return {{"h_hat", h_hat}, {"gamma", gamma},   {"rates", rates_json},
          {"margins", margins_json}, {"lambda_kn_trend", trend}, {"pass", pass}};
}

TheoremCReport theorem_c_check(const SystemSpec& system, const Certifier& certifier, const ReferenceOrbit& reference,
                               const EntropyEstimate& entropy, const ShadowScales& scales,
                               const TheoremCOptions& options) {
  if (options.epsilons.empty() || options.n_lo < 1 || options.n_hi < options.n_lo) {
    throw Error(Errc::invalid_argument, "theorem C schedule");
  }
  TheoremCReport rep;
  rep.h_hat = entropy.h_hat;
  rep.gamma = options.gamma;
  rep.epsilons = options.epsilons;
  const bool exact = system.is_linear() && system.bundle_dims().c == 0;
  std::vector<std::vector<double>> xs(options.epsilons.size()), ys(options.epsilons.size());
  for (long n = options.n_lo; n <= options.n_hi; ++n) {
    Mined mined;
    if (!exact && !degenerate(system)) {
      mined = mine_and_close(system, certifier, reference, n, scales, options.budget, {});
    }
    for (std::size_t e = 0; e < options.epsilons.size(); ++e) {
      QppRow row;
      row.n = n;
      row.eps = options.epsilons[e];
      row.exact = exact;
      if (exact) {
        row.count = periodic_point_count(system, n);
      } else {
        const SeparatedQPPSet set =
            degenerate(system) ? packing_count(system, reference, n, row.eps, options.budget.max_candidates)
                               : separate(system, mined.points, n, row.eps);
        row.count = static_cast<double>(set.count());
        row.candidates = degenerate(system) ? set.attempts : mined.candidates;
        row.saturated = row.count >= options.saturation * static_cast<double>(row.candidates);
      }
      if (!row.saturated && row.count > 0) {
        xs[e].push_back(static_cast<double>(n));
        ys[e].push_back(std::log(row.count));
      }
      rep.rows.push_back(row);
    }
  }
  for (std::size_t e = 0; e < options.epsilons.size(); ++e) rep.rates.push_back(slope(xs[e], ys[e]));
  set_entropy(rep, entropy.h_hat);
  return rep;
}

void set_entropy(TheoremCReport& report, double h_hat) {
  report.h_hat = h_hat;
  report.margins.clear();
  for (double r : report.rates) report.margins.push_back(r - h_hat / (1.0 + report.gamma));
  const std::size_t smallest = static_cast<std::size_t>(
      std::min_element(report.epsilons.begin(), report.epsilons.end()) - report.epsilons.begin());
  report.pass = smallest < report.margins.size() && std::isfinite(report.margins[smallest]) &&
                report.margins[smallest] >= -0.1 && report.trend_pass;
}

void lambda_kn_trend(const SystemSpec& system, const Certifier& certifier, const OrbitTable& samples, int k,
                     double gamma, double beta, const std::vector<long>& ns, TheoremCReport& report) {
  report.trend_n = ns;
  report.trend_fraction.clear();
  for (long n : ns) {
    report.trend_fraction.push_back(build_Kn(system, certifier, samples, k, gamma, 1.0, n, beta).return_fraction());
  }
  report.trend_tau = kendall_tau(report.trend_fraction);
  report.trend_pass = report.trend_tau > 0.0;
  report.pass = report.pass && report.trend_pass;
}

void write_qpp_csv(const TheoremCReport& report, const std::string& path) {
  CsvWriter csv(path, {"n", "epsilon", "count", "rate_fit"});
  for (const QppRow& r : report.rows) {
    std::size_t e = 0;
    while (e < report.epsilons.size() && report.epsilons[e] != r.eps) ++e;
    csv << r.n << r.eps << r.count << report.rates[e];
    csv.end_row();
  }
}

}  // namespace qshadow

#pragma once

// Katok entropy estimates, the return-set construction K_n, harvesting and
// counting of separated quasi-periodic points, and the growth-rate check
// against the metric entropy.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "qshadow/shadowing.hpp"

namespace qshadow {

/// i.i.d. uniform points; Lebesgue measure is invariant for every registry map.
std::vector<TorusPoint> uniform_samples(int dim, int count, std::uint64_t seed);

/// Orbit pieces x, f(x), ..., f^{length-1}(x) of each start, stored flat.
class OrbitTable {
 public:
  OrbitTable(const SystemSpec& system, const std::vector<TorusPoint>& starts, int length);

  int dim() const { return d_; }
  int length() const { return length_; }
  int size() const { return count_; }
  const double* at(int i, int t) const { return &coords_[(static_cast<std::size_t>(i) * length_ + t) * d_]; }
  TorusPoint point(int i, int t) const;
  /// d_n(x_i, x_j) = max_{t < n} d(f^t x_i, f^t x_j).
  double bowen_distance(int i, int j, int n) const;
  /// Whether d_n(x_i, x_j) < r (stops at the first step that exceeds r).
  bool bowen_within(int i, int j, int n, double r) const;

 private:
  int d_, length_, count_;
  std::vector<double> coords_;
};

/// Greedy cover of at least (1 - delta) of the table by d_n-balls of radius r
/// centred at table points; returns the number of balls.
long greedy_bowen_cover(const OrbitTable& table, int n, double r, double delta);

/// Maximal (n, r)-separated subset (pairwise d_n > r) chosen greedily in the
/// given order; returns table indices.
std::vector<int> separated_subset(const OrbitTable& table, int n, double r, const std::vector<int>& order);

struct EntropyRow {
  int n = 0;
  long N_cover = 0;
  long N_separated = 0;
  /// Greedy cover count at radius 2 gamma, compared against N_separated.
  long N_cover_double = 0;
  bool saturated = false;
};

struct EntropyEstimate {
  double gamma = 0.0;
  double delta = 0.0;
  /// Samples actually used; below samples_requested when the Bowen-ball
  /// neighbour lists forced a thinner prefix.
  long samples = 0;
  long samples_requested = 0;
  std::vector<EntropyRow> rows;
  /// Least-squares slope of ln N_cover over the unsaturated rows (nats/iterate).
  double h_hat = 0.0;
  int fit_lo = 0;
  int fit_hi = 0;
  double fit_residual = 0.0;
  /// Largest max(N_cover / N_separated, N_separated / N_cover) over the rows.
  double bracket_gap = 0.0;
  /// Why katok_entropy would reject the estimate; empty when it is usable.
  std::string budget_issue;
  nlohmann::json to_json() const;
};

/// Rows with N_cover above samples / 10 count as saturated and are left out of
/// the fit. Throws Errc::sample_budget when the bracket gap exceeds 4 or fewer
/// than two rows are unsaturated. When the Bowen-ball neighbour lists at n_lo
/// do not fit in memory the sample is thinned to a halved prefix (at least
/// 1000 points); slow isometries need this.
EntropyEstimate katok_entropy(const SystemSpec& system, const std::vector<TorusPoint>& samples, double gamma,
                              double delta, int n_lo, int n_hi);
/// Same estimate without the budget errors; h_hat is NaN below two
/// unsaturated rows.
EntropyEstimate katok_estimate(const SystemSpec& system, const std::vector<TorusPoint>& samples, double gamma,
                               double delta, int n_lo, int n_hi);

/// CSV: n,N_cover,N_separated
void write_entropy_csv(const EntropyEstimate& estimate, const std::string& path);

// ---------------------------------------------------------------------------

struct KnMember {
  TorusPoint x;
  /// Return time in [n, (1 + gamma) n] to the cell of x.
  long m = 0;
  int kappa = 0;
  int kappa_return = 0;
};

struct KnSet {
  int k = 0;
  long n = 0;
  double gamma = 0.0;
  double l = 0.0;
  /// Partition mesh (cell side) and the bound beta on the cell diameter.
  double mesh = 0.0;
  double beta = 0.0;
  long lambda_k = 0;   // samples in Lambda_k
  long lambda_kn = 0;  // samples in Lambda_{k,n}
  std::vector<KnMember> members;

  double return_fraction() const { return lambda_k > 0 ? static_cast<double>(lambda_kn) / lambda_k : 0.0; }
};

/// Uniform-grid partition with cell diameter below beta; Lambda_{k,n} holds the
/// samples of Lambda_k whose orbit re-enters their own cell inside Lambda_k at
/// some time in [n, (1 + gamma) n]; the members form a maximal
/// (n, 1/l)-separated subset of it. An empty result is not an error. Throws
/// Errc::precondition when the table is shorter than (1 + gamma) n + 1.
KnSet build_Kn(const SystemSpec& system, const Certifier& certifier, const OrbitTable& samples, int k, double gamma,
               double l, long n, double beta);

/// Violations of K_n properties (i)-(iii), rechecked from the members alone.
std::vector<std::string> kn_violations(const SystemSpec& system, const Certifier& certifier, const KnSet& set);

struct QuasiPeriodicPoint {
  TorusPoint y;
  long period = 0;
  double su_residual = 0.0;
  double center_disp = 0.0;
  /// Shadowed point (the K_n member or mined candidate), when there is one.
  TorusPoint source;
};

struct SeparatedQPPSet {
  long n = 0;
  double separation = 0.0;
  std::vector<QuasiPeriodicPoint> points;
  long attempts = 0;
  long failures = 0;
  /// Degenerate bundles: counted by packing, no solver involved.
  bool packing_only = false;

  std::size_t count() const { return points.size(); }
};

/// Closes every member at its return time with beta as the recurrence bound,
/// keeps the outputs passing the closing contract within 1/(3l) of their source,
/// and returns the largest class of a common period after an
/// (n, 1/(3l))-separation pass.
SeparatedQPPSet harvest_quasi_periodic(const SystemSpec& system, const Certifier& certifier, const KnSet& set,
                                       const ShadowScales& scales, const ShadowOptions& options = {});

/// Violations of the separation and quasi-period invariants of a set.
std::vector<std::string> qpp_violations(const SystemSpec& system, const Certifier& certifier,
                                        const SeparatedQPPSet& set, double xi, double tol_leaf = 1e-8);

struct QppBudget {
  /// Recurrence bound for candidates (closing beta).
  double beta = 0.05;
  long max_candidates = 200'000;
};

/// Lower bound on the number of (n, eps)-separated quasi-periodic points:
/// beta-recurrences at lag n mined from the reference orbit, closed and
/// deduplicated greedily. Systems without s/u bundles count a maximal
/// separated subset of the reference orbit instead.
SeparatedQPPSet count_separated_qpp(const SystemSpec& system, const Certifier& certifier, const ReferenceOrbit& reference,
                                    long n, double eps, const ShadowScales& scales, const QppBudget& budget = {},
                                    const ShadowOptions& options = {});

/// #Fix(f^n) = |det(A^n - I)| for a linear map without center.
double periodic_point_count(const SystemSpec& system, long n);

/// Kendall rank correlation of the values against their position.
double kendall_tau(const std::vector<double>& values);

struct TheoremCOptions {
  std::vector<double> epsilons{0.2, 0.1, 0.05, 0.025};
  int n_lo = 4;
  int n_hi = 14;
  /// gamma of the K_n construction, entering the margin as h / (1 + gamma).
  double gamma = 0.25;
  QppBudget budget;
  /// Rows whose count reaches this fraction of the candidates are budget
  /// limited and left out of the rate fit.
  double saturation = 0.25;
};

struct QppRow {
  long n = 0;
  double eps = 0.0;
  double count = 0.0;
  long candidates = 0;
  bool exact = false;
  bool saturated = false;
};

struct TheoremCReport {
  double h_hat = 0.0;
  double gamma = 0.0;
  std::vector<QppRow> rows;
  std::vector<double> epsilons;
  std::vector<double> rates;
  std::vector<double> margins;
  /// Lambda_{k,n} fractions and their trend (filled when a trend run is made).
  std::vector<long> trend_n;
  std::vector<double> trend_fraction;
  double trend_tau = 0.0;
  bool trend_pass = true;
  bool pass = false;
  nlohmann::json to_json() const;
};

/// Growth rates of the quasi-periodic counts per eps and the margins
/// rate - h / (1 + gamma); PASS iff the margin at the smallest eps is at least
/// -0.1. Linear maps without center use exact periodic counts.
TheoremCReport theorem_c_check(const SystemSpec& system, const Certifier& certifier, const ReferenceOrbit& reference,
                               const EntropyEstimate& entropy, const ShadowScales& scales,
                               const TheoremCOptions& options = {});

/// Recomputes the margins and the verdict for another entropy estimate.
void set_entropy(TheoremCReport& report, double h_hat);

/// Fractions of Lambda_{k,n} in Lambda_k over the given n; the trend passes
/// when the Kendall tau is positive.
void lambda_kn_trend(const SystemSpec& system, const Certifier& certifier, const OrbitTable& samples, int k,
                     double gamma, double beta, const std::vector<long>& ns, TheoremCReport& report);

/// CSV: n,epsilon,count,rate_fit
void write_qpp_csv(const TheoremCReport& report, const std::string& path);

}  // namespace qshadow

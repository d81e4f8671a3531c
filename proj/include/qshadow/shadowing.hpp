#pragma once

// Pseudo-orbits glued from true orbit segments, the quasi-shadowing solver and
// its closing and specification modes.
//
// Shadowing points are carried as anchor + offset. Offsets are propagated with
// the systems' offset maps, so corrections far below the coordinate resolution
// keep their digits.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qshadow/regularity.hpp"

namespace qshadow {

/// Scales and constants of the gluing construction.
struct ShadowScales {
  double eta = 0.1;
  double xi = 0.1;
  double sigma = 0.5;
  double eps = 0.0;
  /// eps_k = eps0 e^{-rate k}; rate = eps / alpha.
  double eps0 = 0.0;
  double rate = 0.0;
  /// Norm equivalence constant of the adapted norm.
  double C = 0.0;
  /// t-point constant C1 = C_tilde + 1 and C2 = 2 L C1.
  double C1 = 0.0;
  double C2 = 0.0;
  double theta = 0.0;
  double lambda3 = 0.0;
  double gamma = 0.0;
  double b2 = 0.0;
  double holder_exponent = 0.0;

  double eps_k(int k) const { return eps0 * std::exp(-rate * k); }
  /// ((1 - sigma) xi / (b2 e^{6 k eps}))^{1 / (a1 alpha)}; infinite when b2 = 0.
  double delta_holder(int k) const;
  /// (gamma / 2)(1 - e^{-lambda3 + rate / theta}) C^{-1} e^{-(1 + 1/theta) k rate}.
  double delta_junction(int k) const;
  double delta_certified(int k) const { return std::min(delta_holder(k), delta_junction(k)); }
  nlohmann::json to_json() const;
};

/// Throws Errc::invalid_argument for eta outside (0, 1], xi <= 0 or sigma
/// outside (0, 1), and Errc::precondition when lambda3 <= rate / theta.
ShadowScales make_shadow_scales(const SystemSpec& system, const BlockParams& params, const HolderBudget& budget,
                                const BallScale& ball, double eta, double xi, double sigma, double c_tilde = 1.0);

/// delta_k for k = 1..k_max (index k - 1).
std::vector<double> certified_schedule(const ShadowScales& scales, int k_max);
/// fraction * eta * eps_k: jumps resolvable in double precision that keep the
/// shadowing error inside the target scale.
std::vector<double> practical_schedule(const ShadowScales& scales, int k_max, double fraction = 0.125);
std::vector<double> constant_schedule(double delta, int k_max);

/// Block index and splitting of a point. Linear systems share one certificate.
class Certifier {
 public:
  Certifier(const SystemSpec& system, const BlockParams& params, long horizon = 50, ClassifyOptions options = {});

  struct Result {
    int kappa = 0;
    Splitting splitting;
  };
  /// Throws Errc::no_block_index past k_max.
  Result operator()(const TorusPoint& x) const;
  const BlockParams& params() const { return params_; }
  int k_max() const { return options_.k_max; }

 private:
  const SystemSpec* system_;
  BlockParams params_;
  long horizon_;
  ClassifyOptions options_;
  bool shared_ = false;
  Result cached_;
};

struct Segment {
  TorusPoint anchor;
  long length = 0;
  /// points[i] = f^i(anchor) for i = 0..length.
  std::vector<TorusPoint> points;
  int s_minus = 0;
  int s_plus = 0;
  Splitting splitting;  // at the anchor
};

Segment make_segment(const SystemSpec& system, const Certifier& certifier, const TorusPoint& anchor, long length);

struct PseudoOrbit {
  std::vector<Segment> segments;
  /// jumps[n] = f^{a_n}(x_n) - x_{n+1}, one per junction.
  std::vector<Vec> jumps;
  /// delta_k at index k - 1.
  std::vector<double> delta_schedule;
  bool periodic = false;

  int junction_count() const;
  std::size_t next(std::size_t n) const { return (n + 1) % segments.size(); }
  double delta(int k) const;
};

/// Fills in the jumps (periodic orbits close the last segment onto the first).
PseudoOrbit assemble_pseudo_orbit(std::vector<Segment> segments, std::vector<double> schedule, bool periodic);

/// Human-readable violations of the stored invariants; empty when valid.
std::vector<std::string> pseudo_orbit_violations(const SystemSpec& system, const PseudoOrbit& pseudo);

struct PseudoOrbitRequest {
  int segments = 40;
  long min_length = 1;
  long max_length = 20;
  /// Jumps are uniform in the ball of radius rho * delta_{s+}.
  double rho = 0.5;
  int retry_budget = 100;
};

/// Starts at a random source point and glues segments of random length with
/// random jumps, resampling a jump until its landing point certifies with an
/// index within one of the previous endpoint. Throws Errc::retry_exhausted.
PseudoOrbit generate_pseudo_orbit(const SystemSpec& system, const Certifier& certifier,
                                  const std::vector<TorusPoint>& sources, const PseudoOrbitRequest& request,
                                  std::vector<double> schedule, std::uint64_t seed);

/// Points drawn uniformly and kept when they certify.
std::vector<TorusPoint> certified_sources(const SystemSpec& system, const Certifier& certifier, int count,
                                          std::uint64_t seed);

/// delta_0 = offset, delta_{i+1} = f(p_i + delta_i) - f(p_i) along the segment.
std::vector<Vec> offset_trajectory(const SystemSpec& system, const Segment& segment, const Vec& offset);

struct ShadowOptions {
  double tol_su = 1e-10;
  double tol_leaf = 1e-8;
  int max_iter = 200;
  /// Throw Errc::contract_failure instead of returning converged = false.
  bool strict = true;
};

struct ShadowResult {
  /// y_n = x_n + offsets[n]; starts holds the rounded points.
  std::vector<Vec> offsets;
  std::vector<TorusPoint> starts;
  /// Center part of each junction defect f^{a_n}(y_n) - y_{n+1}.
  std::vector<Vec> center_displacements;
  std::vector<std::vector<double>> step_errors;
  /// eta * eps_{s_n^-} per segment.
  std::vector<double> eps_scale;
  std::vector<double> su_residuals;
  std::vector<bool> cone_pass;
  std::vector<bool> segment_pass;
  int iterations = 0;
  bool converged = false;
  double final_residual = 0.0;
  /// Largest relative E^c component of any applied correction.
  double center_leak = 0.0;

  double sup_error() const;
  double max_center_disp() const;
  double cumulative_center_disp() const;
};

/// Newton iteration on the s/u parts of the junction defects: forward
/// recursion for E^s, backward for E^u, cyclic solves when periodic. Center
/// defects are left in place. Throws Errc::precondition for invalid input,
/// Errc::divergence and (when strict) Errc::contract_failure.
ShadowResult quasi_shadow_solve(const SystemSpec& system, const PseudoOrbit& pseudo, const ShadowScales& scales,
                                const ShadowOptions& options = {});

struct ShadowVerification {
  bool pass = false;
  /// 1 - worst step error / target per segment (negative = violated).
  std::vector<double> segment_margins;
  std::vector<bool> junction_pass;
  int failed_segments = 0;
  int failed_junctions = 0;
};

/// Recomputes every per-step distance and junction test from the pseudo-orbit
/// and the result's offsets alone.
ShadowVerification verify_quasi_shadow(const SystemSpec& system, const PseudoOrbit& pseudo, const ShadowResult& result,
                                       const ShadowScales& scales, double tol_leaf = 1e-8);

struct ClosingResult {
  PseudoOrbit pseudo;
  ShadowResult shadow;
  /// |f^p(y) - y| evaluated on rounded coordinates.
  double period_defect = 0.0;
};

/// Single-segment periodic pseudo-orbit {x, ..., f^{p-1}(x)} solved
/// cyclically. beta replaces delta_k when positive. Throws Errc::precondition
/// when d(x, f^p x) >= beta.
ClosingResult quasi_close(const SystemSpec& system, const Certifier& certifier, const TorusPoint& x, long p,
                          const ShadowScales& scales, double beta = 0.0, const ShadowOptions& options = {});

struct ClosingSweep {
  long grid_points = 0;
  long candidates = 0;
  long solved = 0;
  long failures = 0;
  std::vector<TorusPoint> distinct;
  std::vector<Vec> distinct_center;
  double max_period_defect = 0.0;
};

/// Closes every grid point with d(x, f^p x) < beta and collects the distinct
/// shadowing points (closer than `dedup` are merged).
ClosingSweep exhaustive_closing(const SystemSpec& system, const Certifier& certifier, const ShadowScales& scales,
                                long p, const std::vector<int>& per_axis, double beta, double dedup = 1e-7,
                                const ShadowOptions& options = {});

/// One long orbit with a uniform grid index for neighbourhood queries.
class ReferenceOrbit {
 public:
  ReferenceOrbit(const SystemSpec& system, const TorusPoint& start, long length, double cell);

  long size() const { return length_; }
  TorusPoint at(long t) const;
  /// Orbit times t (ascending) with d(f^t(start), c) < radius.
  std::vector<long> near(const TorusPoint& c, double radius) const;

 private:
  long cell_of(const double* p) const;
  int d_;
  long length_;
  long per_axis_;
  std::vector<double> coords_;
  std::vector<std::uint32_t> cell_start_;
  std::vector<std::uint32_t> order_;
};

struct SpecificationResult {
  PseudoOrbit pseudo;
  ShadowResult shadow;
  /// Transition time from the end of segment i to the start of segment i + 1
  /// (0 when they are already delta-close).
  std::vector<long> transitions;
};

/// Glues the given segments cyclically through transition pieces of the
/// reference orbit of length at most H, then shadows the periodic
/// concatenation. Throws Errc::precondition for uncertifiable segments and
/// Errc::no_transition when a pair has no transition within H.
SpecificationResult quasi_specification(const SystemSpec& system, const Certifier& certifier,
                                        const std::vector<std::pair<TorusPoint, long>>& segments,
                                        const ReferenceOrbit& reference, double delta, long H,
                                        const ShadowScales& scales, const ShadowOptions& options = {});

/// CSV: segment,step,x_0..,y_0..,step_error,eps_scale,pass
void write_shadow_trace(const SystemSpec& system, const PseudoOrbit& pseudo, const ShadowResult& result,
                        const std::string& path);
/// CSV: junction,jump_norm,center_disp_norm,su_residual,cone_pass
void write_junctions(const PseudoOrbit& pseudo, const ShadowResult& result, const std::string& path);
nlohmann::json shadow_summary(const PseudoOrbit& pseudo, const ShadowResult& result, const ShadowScales& scales);

}  // namespace qshadow

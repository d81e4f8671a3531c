#pragma once

// Hoelder regularity of the splitting: certified budget and empirical fit.

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "qshadow/lyapnorm.hpp"

namespace qshadow {

struct HolderBudget {
  double alpha = 1.0;
  /// a > max(|Df|^{1+alpha}, |Df^{-1}|^{1+alpha}).
  double a = 0.0;
  /// |D_x f^{+-n} - D_y f^{+-n}| <= D a^n |x - y|^alpha on the sampled set.
  double D = 0.0;
  /// Exponent fractions for E^s, E^cs, E^u, E^cu, and a1 = their maximum.
  std::array<double, 4> fractions{};
  double a1 = 0.0;
  double b1 = 0.0;
  /// Angle comparison constant between ambient and adapted norms.
  double C1 = 0.0;
  double b2 = 0.0;
  double eps = 0.0;
  /// Foliation Hoelder exponent, a1 * alpha unless overridden.
  double theta = 0.0;

  double exponent() const { return a1 * alpha; }
  double ambient_bound(int k, double separation) const;
  double adapted_bound(int k, double separation) const;
};

struct HolderOptions {
  int n_max = 20;
  double safety = 2.0;
  int grid_per_axis = 6;
  /// Overrides theta when positive.
  double theta_override = 0.0;
};

/// Throws Errc::invalid_argument when a numerator or denominator of the
/// fractions is not positive or a1 falls outside (0, 1).
HolderBudget holder_constants(const SystemSpec& system, const BlockParams& params, const HolderOptions& options = {});

/// Subspace distance measured in a (non-Euclidean) norm: the larger of the two
/// one-sided maxima of min_{w in B} |v - w| over |v| = 1 in A, each inner
/// minimum solved by nested golden-section search (convex objective).
double normed_subspace_distance(const Subspace& a, const Subspace& b, const NormFn& norm);

struct HolderPair {
  TorusPoint x, y;
};

/// Random pairs: x uniform, y at a log-uniform separation in
/// [1e-3, 1] * min(ball.radius(kappa(x)), 0.2).
std::vector<HolderPair> sample_holder_pairs(const SystemSpec& system, const BlockParams& params, const BallScale& ball,
                                            int count, std::uint64_t seed, long horizon = 50);

struct HolderRow {
  long pair_id = 0;
  std::string bundle;  // s, cs, c, cu, u
  std::string norm;    // ambient, adapted
  double separation = 0.0;
  double distance = 0.0;
  double bound = 0.0;
  bool pass = false;
};

struct HolderFitReport {
  std::vector<HolderRow> rows;
  int pairs_used = 0;
  int pairs_excluded = 0;
  /// Fraction of pairs whose every row passes.
  double pair_pass_rate = 0.0;
  /// Least-squares slope of log distance against log separation, per bundle
  /// (ambient rows with positive distance); NaN when there is no spread.
  std::vector<std::pair<std::string, double>> slopes;
  /// Worst ratio of adapted to ambient angle over C1 e^{2k eps}.
  double angle_chain_ratio = 0.0;
  nlohmann::json to_json() const;
};

/// Requires at least `min_pairs` pairs (Errc::sample_budget otherwise).
HolderFitReport empirical_holder_fit(const SystemSpec& system, const BlockParams& params, const HolderBudget& budget,
                                     const std::vector<HolderPair>& pairs, long horizon = 50, int min_pairs = 100);

/// CSV: pair_id,bundle,separation,distance,bound,pass,norm
void write_holder_csv(const HolderFitReport& report, const std::string& path);

}  // namespace qshadow

#pragma once

// Adapted (Lyapunov) norms built from the block series, their translates to
// nearby points, and cone-field checks.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "qshadow/oseledets.hpp"

namespace qshadow {

/// Rate ladder derived from BlockParams: level j moves every rate (j + 1) eps
/// towards neutrality. Level 1 feeds the series, level 2 the ball estimates
/// and level 3 the cone estimates.
struct RateLadder {
  double lambda, mu, lambda_c, mu_c;
};
RateLadder rates_at_level(const BlockParams& params, int level);

/// C = sum over n in Z of e^{-eps |n|}.
double series_constant(double eps);

/// Series norms anchored on an orbit window. The anchor f^m(x) may be any m
/// with |m| <= 1 so that images and preimages of vectors at x can be measured.
class AdaptedNormEvaluator {
 public:
  struct Components {
    double s = 0.0, c = 0.0, u = 0.0;
    double max() const { return std::max({s, c, u}); }
  };

  /// Builds its own splitting window around the certificate's point.
  AdaptedNormEvaluator(const SystemSpec& system, const BlockCertificate& certificate, long sweep_horizon = 100,
                       long truncation = 0);
  /// Uses an existing window, which must cover [-(truncation + 1), truncation + 1].
  AdaptedNormEvaluator(std::shared_ptr<const SplittingWindow> window, const BlockParams& params, int index,
                       long truncation = 0);

  /// Truncation length giving a relative tail of at most 1e-8 for index k.
  static long default_truncation(double eps, int index);

  double norm(const Vec& v, long m = 0) const;
  Components components(const Vec& v, long m = 0) const;
  /// Relative truncation error bound of every component series at anchor m.
  double tail_bound(long m = 0) const;

  const Splitting& splitting(long m = 0) const { return window_->splitting(m); }
  const TorusPoint& anchor(long m = 0) const { return window_->point(m); }
  const Mat& jacobian(long m = 0) const { return window_->jacobian(m); }
  const Mat& inverse_jacobian(long m = 0) const { return window_->inverse_jacobian(m); }
  const BlockParams& params() const { return params_; }
  int index() const { return index_; }
  long truncation() const { return truncation_; }
  int dimension() const { return static_cast<int>(window_->splitting(0).ambient_dim()); }

 private:
  // Weighted restricted products e^{rate n} Df^{+-n}|_E, n = first..truncation.
  // Rank-one bundles collapse to the scalar sum of |terms|.
  struct Series {
    std::vector<Mat> terms;
    double scalar_weight = -1.0;
    double apply(const Vec& coeffs) const;
  };
  struct Anchor {
    Series s, c_forward, c_backward, u;
  };
  Series build_series(long m, int which, int dir, double rate, long first) const;
  const Anchor& at(long m) const;

  std::shared_ptr<const SplittingWindow> window_;
  BlockParams params_;
  int index_;
  long truncation_;
  Anchor anchors_[3];
};

struct CheckReport {
  std::string check;
  TorusPoint anchor;
  int k = 0;
  /// Worst relative slack over every sampled inequality (negative = violated).
  double margin = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  /// Check-specific diagnostics.
  nlohmann::json extra = nlohmann::json::object();
};
nlohmann::json to_json(const CheckReport& report);

/// One-step rates of the adapted norm at the anchor itself: contraction on
/// E^s, two-sided bounds on E^c, expansion on E^u, each with the
/// 1/|Df^{-+1}| lower bounds. PASS iff the margin is above minus the tail bounds.
CheckReport verify_adapted_contraction(const SystemSpec& system, const AdaptedNormEvaluator& evaluator, int samples,
                                       std::uint64_t seed = 1);

/// (1/3)|v| <= |v|' <= C e^{eps k} |v| on random vectors (and v = 0).
CheckReport norm_equivalence_bounds(const AdaptedNormEvaluator& evaluator, int samples, std::uint64_t seed = 1);

/// eps_k from the four-branch minimum for k = 1..k_max and
/// eps0 = min_k eps_k e^{k eps / alpha}.
struct BallScale {
  double eps0 = 0.0;
  double rate = 0.0;  // eps / alpha
  std::vector<double> eps_k;
  double radius(int k) const { return eps0 * std::exp(-rate * k); }
};
BallScale ball_scale(const SystemSpec& system, const BlockParams& params, int k_max = 64);

/// The six one-step inequalities at y with the splitting and norm translated
/// from the anchor x (identity on coordinates). Also records the proof-level
/// bound e^{-lambda_1} + 3 C e^{eps(k+1)} K |y - x|^alpha as extra.proof_margin.
CheckReport translated_norm_check(const SystemSpec& system, const AdaptedNormEvaluator& evaluator,
                                  const TorusPoint& y, double radius, int samples, std::uint64_t seed = 1);

/// sigma_1: contraction of cone widths predicted by the cone rates.
double linear_cone_prediction(const BlockParams& params);
/// Default target ratio, midway between the prediction and 1.
double default_cone_ratio(const BlockParams& params);

/// Maps boundary and interior vectors of the u, cu (by D_y f) and s, cs
/// (by D_y f^{-1}) cones of width xi at points y within `radius` of the
/// anchor and measures the largest image width over xi (extra.sigma_hat).
/// PASS iff sigma_hat <= sigma.
CheckReport cone_invariance_check(const SystemSpec& system, const AdaptedNormEvaluator& evaluator, double xi,
                                  double sigma, double radius, int samples, std::uint64_t seed = 1);

/// Largest a in {2^-j : j = 0..40} such that the cone check passes at every
/// evaluator with radius a * ball.radius(k).
double calibrate_a_xi(const SystemSpec& system, const std::vector<const AdaptedNormEvaluator*>& evaluators,
                      const BallScale& ball, double xi, double sigma, int samples, std::uint64_t seed = 1);

}  // namespace qshadow

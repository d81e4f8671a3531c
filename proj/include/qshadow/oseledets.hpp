#pragma once

// Lyapunov spectra, Oseledets splittings along orbit windows and
// finite-horizon Pesin block classification.

#include <string>
#include <vector>

#include <json.hpp>

#include "qshadow/systems.hpp"

namespace qshadow {

struct LyapunovSpectrum {
  std::vector<double> exponents;  // descending, nats per iterate
  long horizon = 0;
  TorusPoint point;
};

/// Sequential QR (Benettin) estimate. A transient of min(n/10, 200) steps is
/// discarded before n averaged steps.
LyapunovSpectrum lyapunov_spectrum(const SystemSpec& system, const TorusPoint& x, long n);

/// lambda, mu: stable / unstable rates. lambda_c, mu_c: center backward /
/// forward growth allowances (lambda', mu'). eps: tempering rate.
struct BlockParams {
  double lambda = 0.0;
  double mu = 0.0;
  double lambda_c = 0.0;
  double mu_c = 0.0;
  double eps = 0.0;

  /// Throws Errc::invalid_argument unless lambda, mu > 0,
  /// -lambda < -lambda_c < mu_c < mu and
  /// eps < min{lambda, mu, |lambda - lambda_c|, |mu - mu_c|} / 10.
  void validate() const;
  bool operator==(const BlockParams&) const = default;
};

/// Rates read off a spectrum: lambda = |largest stable exponent| - eps,
/// mu = smallest unstable exponent - eps, center allowances cover the center
/// exponents (at least 1e-3 each).
BlockParams params_from_spectrum(const LyapunovSpectrum& spectrum, BundleDims dims, double eps);

/// Throws Errc::gap_violation unless the system has a hyperbolic direction and
/// consecutive exponent groups (unstable / center / stable) are separated by
/// more than 4 eps.
void check_exponent_gap(const LyapunovSpectrum& spectrum, BundleDims dims, double eps);

/// Splittings at f^m(x) for m in [lo, hi] obtained from one forward sweep of
/// a QR frame (giving E^u and E^cu) and one backward sweep with inverse
/// Jacobians (giving E^s and E^cs). Each sweep starts `horizon` steps outside
/// the window. E^c is the principal-vector intersection of E^cs and E^cu.
class SplittingWindow {
 public:
  SplittingWindow(const SystemSpec& system, const TorusPoint& x, long lo, long hi, long horizon);

  long lo() const { return lo_; }
  long hi() const { return hi_; }
  const TorusPoint& point(long m) const { return points_[idx(m)]; }
  const Splitting& splitting(long m) const { return splittings_[idx(m)]; }
  /// Df and Df^{-1} evaluated at f^m(x).
  const Mat& jacobian(long m) const { return jac_[idx(m)]; }
  const Mat& inverse_jacobian(long m) const { return inv_jac_[idx(m)]; }

  /// Replaces every splitting by fn(m, current); used to build deliberately
  /// inconsistent windows in diagnostics.
  template <typename Fn>
  void transform_splittings(Fn&& fn) {
    for (long m = lo_; m <= hi_; ++m) splittings_[idx(m)] = fn(m, splittings_[idx(m)]);
  }

 private:
  std::size_t idx(long m) const { return static_cast<std::size_t>(m - lo_); }
  long lo_, hi_;
  std::vector<TorusPoint> points_;
  std::vector<Splitting> splittings_;
  std::vector<Mat> jac_, inv_jac_;
};

/// Gap-checked splitting at a single point. The exponent gap is checked once
/// at construction from a spectrum at `probe`.
class SplittingEstimator {
 public:
  SplittingEstimator(const SystemSpec& system, double eps, const TorusPoint& probe, long spectrum_horizon = 10'000);

  const LyapunovSpectrum& spectrum() const { return spectrum_; }
  Splitting at(const TorusPoint& x, long horizon) const;
  SplittingWindow window(const TorusPoint& x, long lo, long hi, long horizon) const;

 private:
  const SystemSpec* system_;
  LyapunovSpectrum spectrum_;
};

/// One-shot version: checks the gap from the spectrum at x, then sweeps.
Splitting estimate_splitting(const SystemSpec& system, const TorusPoint& x, long horizon, double eps = 0.01);

struct ConditionMargins {
  // Worst slack, in nats, of each inequality at the certified index.
  // +infinity when the condition is vacuous (empty bundle).
  double stable_forward;
  double center_forward;
  double center_backward;
  double unstable_backward;
};

struct BlockCertificate {
  TorusPoint point;
  BlockParams params;
  long horizon = 0;
  int kappa = 0;
  Splitting splitting;
  ConditionMargins margins{};
  /// Largest real k needed by any tested (n, m); kappa = max(1, ceil(required)).
  double required_index = 0.0;
};

struct ClassifyOptions {
  int k_max = 64;
  /// Steps the splitting sweeps start outside the window.
  long sweep_horizon = 200;
};

/// Minimal k for which every (n, m) with n >= 0, |m| + n <= N satisfies the
/// three families of block inequalities along the estimated splitting.
/// Throws Errc::no_block_index when the minimal k exceeds k_max.
BlockCertificate classify_block(const SystemSpec& system, const TorusPoint& x, const BlockParams& params, long horizon,
                                const ClassifyOptions& options = {});

/// Same, reusing splittings already computed on a window containing [-N, N].
BlockCertificate classify_block(const SplittingWindow& window, const BlockParams& params, long horizon,
                                int k_max = 64);

/// Re-checks every condition with a given k (true when all hold).
bool block_conditions_hold(const SplittingWindow& window, const BlockParams& params, long horizon, int k);

nlohmann::json to_json(const BlockParams& params);
nlohmann::json to_json(const BlockCertificate& certificate);
nlohmann::json to_json(const LyapunovSpectrum& spectrum);

}  // namespace qshadow

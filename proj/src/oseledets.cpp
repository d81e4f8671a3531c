#include "qshadow/oseledets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace qshadow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// QR with a positive R diagonal so that consecutive frames vary continuously:
// classical Gram-Schmidt with one reorthogonalization pass.
void qr_step(Mat& q, Vec& log_diag) {
  const int k = static_cast<int>(q.cols());
  log_diag.resize(k);
  for (int j = 0; j < k; ++j) {
    auto col = q.col(j);
    for (int pass = 0; pass < 2; ++pass)
      for (int i = 0; i < j; ++i) col -= q.col(i).dot(col) * q.col(i);
    const double r = col.norm();
    log_diag[j] = std::log(r);
    col /= r;
  }
}

// Deterministic generic orthonormal frame: its leading columns are transverse
// to any invariant subspace the registry systems have.
Mat generic_frame(int d) {
  std::mt19937_64 rng(0x5eedf00dULL);
  std::normal_distribution<double> g;
  Mat m(d, d);
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < d; ++i) m(i, j) = g(rng);
  Eigen::HouseholderQR<Mat> qr(m);
  return qr.householderQ() * Mat::Identity(d, d);
}

double restricted_norm(const Mat& p) {
  if (p.size() == 1) return std::abs(p(0, 0));
  Eigen::JacobiSVD<Mat> svd(p);
  return svd.singularValues()[0];
}

Subspace leading(const Mat& q, int k) {
  if (k == 0) return Subspace::zero(static_cast<int>(q.rows()));
  return Subspace::from_orthonormal(q.leftCols(k));
}

Subspace intersect(const Subspace& cs, const Subspace& cu, int dc) {
  const int d = cs.ambient_dim();
  if (cs.rank() == 0 || cu.rank() == 0) {
    if (dc != 0) throw Error(Errc::intersection_dimension, "empty center-stable or center-unstable space");
    return Subspace::zero(d);
  }
  // Principal vectors: eigenvectors of C C^T with C = Q_cs^T Q_cu; the
  // cosines of the principal angles are the square roots of the eigenvalues.
  const Mat cross = cs.basis().transpose() * cu.basis();
  const Mat gram = cross * cross.transpose();
  Vec cos2;
  Mat vecs;
  if (gram.rows() == 2) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es;
    es.computeDirect(Eigen::Matrix2d(gram));
    cos2 = es.eigenvalues();
    vecs = es.eigenvectors();
  } else if (gram.rows() == 3) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
    es.computeDirect(Eigen::Matrix3d(gram));
    cos2 = es.eigenvalues();
    vecs = es.eigenvectors();
  } else {
    Eigen::SelfAdjointEigenSolver<Mat> es(gram);
    cos2 = es.eigenvalues();
    vecs = es.eigenvectors();
  }
  const double threshold = (1.0 - 1e-6) * (1.0 - 1e-6);
  int found = 0;
  for (Eigen::Index i = 0; i < cos2.size(); ++i) found += cos2[i] >= threshold ? 1 : 0;
  if (found != dc) {
    throw Error(Errc::intersection_dimension,
                "E^cs and E^cu meet in dimension " + std::to_string(found) + ", expected " + std::to_string(dc));
  }
  if (dc == 0) return Subspace::zero(d);
  // Eigenvalues ascend, so the principal vectors sit in the trailing columns.
  Mat basis = cs.basis() * vecs.rightCols(dc);
  return Subspace::span(basis);
}

// Largest required index per condition family, plus the per-family maxima
// of the un-normalized excess (in nats) used to report margins.
struct Requirement {
  double stable_forward = -kInf;
  double center_forward = -kInf;
  double center_backward = -kInf;
  double unstable_backward = -kInf;
  double overall() const { return std::max({stable_forward, center_forward, center_backward, unstable_backward}); }
};

// Walks the restricted one-step matrices of a bundle along the window and
// returns max over (n, m) of (log |Df^{+-n}|_E(f^m x)| + rate * n - eps |m|).
// `basis(m)` gives the orthonormal basis at f^m x, `step(m)` the one-step
// derivative leaving f^m x (forward or backward), `dir` is +1 or -1.
template <typename BasisFn, typename StepFn>
double worst_excess(long N, double rate, double eps, int dir, BasisFn basis, StepFn step) {
  double worst = -kInf;
  for (long m = -N; m <= N; ++m) {
    const Mat b0 = basis(m);
    if (b0.cols() == 0) return -kInf;
    const long reach = N - std::abs(m);
    Mat p = Mat::Identity(b0.cols(), b0.cols());
    double log_scale = 0.0;
    worst = std::max(worst, -eps * std::abs(m));
    long cur = m;
    for (long n = 1; n <= reach; ++n) {
      const long next = cur + dir;
      p = (basis(next).transpose() * step(cur) * basis(cur)) * p;
      const double nrm = restricted_norm(p);
      if (!(nrm > 0.0) || !std::isfinite(nrm)) throw Error(Errc::overflow, "restricted cocycle degenerated");
      const double lg = std::log(nrm) + log_scale;
      worst = std::max(worst, lg + rate * static_cast<double>(n) - eps * std::abs(m));
      p /= nrm;
      log_scale = lg;
      cur = next;
    }
  }
  return worst;
}

Requirement requirement(const SplittingWindow& w, const BlockParams& p, long N) {
  if (w.lo() > -N || w.hi() < N) throw Error(Errc::precondition, "splitting window does not cover [-N, N]");
  Requirement r;
  auto s_basis = [&](long m) -> const Mat& { return w.splitting(m).stable().basis(); };
  auto c_basis = [&](long m) -> const Mat& { return w.splitting(m).center().basis(); };
  auto u_basis = [&](long m) -> const Mat& { return w.splitting(m).unstable().basis(); };
  auto fwd = [&](long m) -> const Mat& { return w.jacobian(m); };
  auto bwd = [&](long m) -> const Mat& { return w.inverse_jacobian(m); };
  const double e = p.eps;
  r.stable_forward = worst_excess(N, p.lambda - e, e, +1, s_basis, fwd);
  r.center_forward = worst_excess(N, -(p.mu_c + e), e, +1, c_basis, fwd);
  r.center_backward = worst_excess(N, -(p.lambda_c + e), e, -1, c_basis, bwd);
  r.unstable_backward = worst_excess(N, p.mu - e, e, -1, u_basis, bwd);
  return r;
}

}  // namespace

LyapunovSpectrum lyapunov_spectrum(const SystemSpec& system, const TorusPoint& x, long n) {
  if (n < 100) throw Error(Errc::precondition, "lyapunov_spectrum needs n >= 100");
  if (x.dim() != system.dimension()) throw Error(Errc::dimension_mismatch, "lyapunov_spectrum");
  const int d = system.dimension();
  const long warmup = std::min(n / 10, 200L);
  Mat q = generic_frame(d);
  Vec log_diag, sum = Vec::Zero(d);
  TorusPoint p = x;
  for (long i = 0; i < warmup + n; ++i) {
    q = system.jacobian(p) * q;
    qr_step(q, log_diag);
    if (!log_diag.allFinite()) throw Error(Errc::overflow, "QR factor left the floating-point range");
    if (i >= warmup) sum += log_diag;
    p = system.step(p);
  }
  LyapunovSpectrum out;
  out.horizon = n;
  out.point = x;
  for (int i = 0; i < d; ++i) out.exponents.push_back(sum[i] / static_cast<double>(n));
  std::sort(out.exponents.begin(), out.exponents.end(), std::greater<>());
  return out;
}

void BlockParams::validate() const {
  if (!(lambda > 0 && mu > 0)) throw Error(Errc::invalid_argument, "block params: lambda and mu must be positive");
  if (!(-lambda < -lambda_c && -lambda_c < mu_c && mu_c < mu)) {
    throw Error(Errc::invalid_argument, "block params: need -lambda < -lambda' < mu' < mu");
  }
  const double bound = 0.1 * std::min({lambda, mu, std::abs(lambda - lambda_c), std::abs(mu - mu_c)});
  if (!(eps > 0 && eps < bound)) {
    throw Error(Errc::invalid_argument, "block params: eps must lie in (0, " + std::to_string(bound) + ")");
  }
}

void check_exponent_gap(const LyapunovSpectrum& spectrum, BundleDims dims, double eps) {
  const auto& ex = spectrum.exponents;
  if (static_cast<int>(ex.size()) != dims.total()) throw Error(Errc::dimension_mismatch, "spectrum vs bundle dims");
  if (dims.s + dims.u == 0) throw Error(Errc::gap_violation, "no hyperbolic direction");
  const double gap = 4.0 * eps;
  auto separated = [&](int upper_count) {
    if (upper_count == 0 || upper_count == dims.total()) return true;
    return ex[upper_count - 1] - ex[upper_count] > gap;
  };
  if (dims.u > 0 && !separated(dims.u)) throw Error(Errc::gap_violation, "unstable exponents not separated");
  if (dims.s > 0 && !separated(dims.u + dims.c)) throw Error(Errc::gap_violation, "stable exponents not separated");
  if (dims.u > 0 && ex[dims.u - 1] <= gap) throw Error(Errc::gap_violation, "unstable exponent too small");
  if (dims.s > 0 && ex[dims.u + dims.c] >= -gap) throw Error(Errc::gap_violation, "stable exponent too small");
}

BlockParams params_from_spectrum(const LyapunovSpectrum& spectrum, BundleDims dims, double eps) {
  check_exponent_gap(spectrum, dims, eps);
  if (dims.s == 0 || dims.u == 0) throw Error(Errc::gap_violation, "block params need stable and unstable bundles");
  const auto& ex = spectrum.exponents;
  BlockParams p;
  p.eps = eps;
  p.mu = ex[dims.u - 1] - eps;
  p.lambda = -ex[dims.u + dims.c] - eps;
  p.mu_c = 1e-3;
  p.lambda_c = 1e-3;
  for (int i = dims.u; i < dims.u + dims.c; ++i) {
    p.mu_c = std::max(p.mu_c, ex[i]);
    p.lambda_c = std::max(p.lambda_c, -ex[i]);
  }
  p.validate();
  return p;
}

SplittingWindow::SplittingWindow(const SystemSpec& system, const TorusPoint& x, long lo, long hi, long horizon)
    : lo_(lo), hi_(hi) {
  if (lo > 0 || hi < 0 || horizon < 0) throw Error(Errc::invalid_argument, "SplittingWindow bounds");
  const BundleDims dims = system.bundle_dims();
  const int d = system.dimension();
  const OrbitWindow orbit(system, x, lo - horizon, hi + horizon);
  const std::size_t count = static_cast<std::size_t>(hi - lo + 1);
  points_.resize(count);
  jac_.resize(count);
  inv_jac_.resize(count);
  for (long m = lo; m <= hi; ++m) points_[idx(m)] = orbit.at(m);

  if (system.is_linear()) {
    // Constant derivative: one converged splitting serves every point.
    const Mat a = system.jacobian(x), a_inv = system.inverse_jacobian(x);
    jac_.assign(count, a);
    inv_jac_.assign(count, a_inv);
    // Fixed, so every window of a linear system holds the same splitting bits.
    constexpr long sweeps = 200;
    Vec scratch;
    Mat fwd = generic_frame(d), bwd = generic_frame(d);
    for (long i = 0; i < sweeps; ++i) {
      fwd = a * fwd;
      qr_step(fwd, scratch);
      bwd = a_inv * bwd;
      qr_step(bwd, scratch);
    }
    const Splitting shared(leading(bwd, dims.s), intersect(leading(bwd, dims.s + dims.c), leading(fwd, dims.u + dims.c), dims.c),
                           leading(fwd, dims.u));
    splittings_.assign(count, shared);
    return;
  }

  for (long m = lo; m <= hi; ++m) {
    jac_[idx(m)] = system.jacobian(orbit.at(m));
    inv_jac_[idx(m)] = system.inverse_jacobian(orbit.at(m));
  }

  std::vector<Subspace> eu(count), ecu(count), es(count), ecs(count);
  Vec scratch;
  // Only the leading columns a sweep reports need to be carried.
  const int fwd_cols = std::max(dims.u + dims.c, 1), bwd_cols = std::max(dims.s + dims.c, 1);
  Mat q = generic_frame(d).leftCols(fwd_cols);
  for (long m = lo - horizon; m <= hi; ++m) {
    if (m >= lo) {
      eu[idx(m)] = leading(q, dims.u);
      ecu[idx(m)] = leading(q, dims.u + dims.c);
    }
    if (m == hi) break;
    q = system.jacobian(orbit.at(m)) * q;
    qr_step(q, scratch);
  }
  q = generic_frame(d).leftCols(bwd_cols);
  for (long m = hi + horizon; m >= lo; --m) {
    if (m <= hi) {
      es[idx(m)] = leading(q, dims.s);
      ecs[idx(m)] = leading(q, dims.s + dims.c);
    }
    if (m == lo) break;
    q = system.inverse_jacobian(orbit.at(m)) * q;
    qr_step(q, scratch);
  }

  splittings_.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    splittings_.emplace_back(es[i], intersect(ecs[i], ecu[i], dims.c), eu[i]);
  }
}

SplittingEstimator::SplittingEstimator(const SystemSpec& system, double eps, const TorusPoint& probe,
                                       long spectrum_horizon)
    : system_(&system), spectrum_(lyapunov_spectrum(system, probe, spectrum_horizon)) {
  check_exponent_gap(spectrum_, system.bundle_dims(), eps);
}

Splitting SplittingEstimator::at(const TorusPoint& x, long horizon) const {
  return SplittingWindow(*system_, x, 0, 0, horizon).splitting(0);
}

SplittingWindow SplittingEstimator::window(const TorusPoint& x, long lo, long hi, long horizon) const {
  return SplittingWindow(*system_, x, lo, hi, horizon);
}

Splitting estimate_splitting(const SystemSpec& system, const TorusPoint& x, long horizon, double eps) {
  return SplittingEstimator(system, eps, x).at(x, horizon);
}

BlockCertificate classify_block(const SplittingWindow& window, const BlockParams& params, long horizon, int k_max) {
  params.validate();
  if (horizon < 0) throw Error(Errc::invalid_argument, "classify_block horizon");
  const Requirement r = requirement(window, params, horizon);
  const double eps = params.eps;
  BlockCertificate cert;
  cert.point = window.point(0);
  cert.params = params;
  cert.horizon = horizon;
  cert.splitting = window.splitting(0);
  cert.required_index = r.overall() / eps;
  cert.kappa = std::max(1, static_cast<int>(std::ceil(cert.required_index - 1e-9)));
  if (cert.kappa > k_max) {
    throw Error(Errc::no_block_index, "index " + std::to_string(cert.kappa) + " exceeds k_max " + std::to_string(k_max));
  }
  const double allowance = eps * cert.kappa;
  auto slack = [&](double excess) { return excess == -kInf ? kInf : allowance - excess; };
  cert.margins = {slack(r.stable_forward), slack(r.center_forward), slack(r.center_backward),
                  slack(r.unstable_backward)};
  return cert;
}

BlockCertificate classify_block(const SystemSpec& system, const TorusPoint& x, const BlockParams& params, long horizon,
                                const ClassifyOptions& options) {
  params.validate();
  const SplittingWindow window(system, x, -horizon, horizon, options.sweep_horizon);
  return classify_block(window, params, horizon, options.k_max);
}

bool block_conditions_hold(const SplittingWindow& window, const BlockParams& params, long horizon, int k) {
  return requirement(window, params, horizon).overall() <= params.eps * k + 1e-9 * params.eps;
}

nlohmann::json to_json(const BlockParams& p) {
  return {{"lambda", p.lambda}, {"mu", p.mu}, {"lambda_prime", p.lambda_c}, {"mu_prime", p.mu_c}, {"eps", p.eps}};
}

namespace {

nlohmann::json basis_json(const Subspace& s) {
  nlohmann::json cols = nlohmann::json::array();
  for (int j = 0; j < s.rank(); ++j) {
    nlohmann::json col = nlohmann::json::array();
    for (int i = 0; i < s.ambient_dim(); ++i) col.push_back(s.basis()(i, j));
    cols.push_back(col);
  }
  return cols;
}

nlohmann::json point_json(const TorusPoint& x) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < x.dim(); ++i) arr.push_back(x[i]);
  return arr;
}

nlohmann::json margin_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const BlockCertificate& c) {
  return {{"point", point_json(c.point)},
          {"params", to_json(c.params)},
          {"horizon", c.horizon},
          {"kappa", c.kappa},
          {"required_index", c.required_index},
          {"splitting",
           {{"E_s", basis_json(c.splitting.stable())},
            {"E_c", basis_json(c.splitting.center())},
            {"E_u", basis_json(c.splitting.unstable())},
            {"dims", {c.splitting.dims().s, c.splitting.dims().c, c.splitting.dims().u}}}},
          {"witnessed_margins",
           {{"stable_forward", margin_json(c.margins.stable_forward)},
            {"center_forward", margin_json(c.margins.center_forward)},
            {"center_backward", margin_json(c.margins.center_backward)},
            {"unstable_backward", margin_json(c.margins.unstable_backward)}}}};
}

nlohmann::json to_json(const LyapunovSpectrum& s) {
  return {{"exponents", s.exponents}, {"horizon", s.horizon}, {"point", point_json(s.point)}};
}

}  // namespace qshadow

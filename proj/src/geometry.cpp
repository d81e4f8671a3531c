#include "qshadow/geometry.hpp"

#include <cmath>
#include <limits>

namespace qshadow {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::dimension_mismatch: return "dimension mismatch";
    case Errc::precondition: return "precondition violated";
    case Errc::invalid_argument: return "invalid argument";
    case Errc::unknown_system: return "unknown system";
    case Errc::gap_violation: return "gap violation";
    case Errc::intersection_dimension: return "intersection dimension";
    case Errc::no_block_index: return "no block index";
    case Errc::overflow: return "overflow";
    case Errc::divergence: return "divergence";
    case Errc::contract_failure: return "contract failure";
    case Errc::retry_exhausted: return "retry budget exhausted";
    case Errc::no_transition: return "no transition";
    case Errc::sample_budget: return "sample budget insufficient";
    case Errc::config: return "config";
  }
  return "unknown";
}

double wrap_unit(double c) {
  double r = c - std::floor(c);
  // c slightly below an integer can round to exactly 1.0
  if (r >= 1.0) r = 0.0;
  return r;
}

TorusPoint::TorusPoint(const Vec& coords) : coords_(coords) {
  if (coords_.size() < 1 || coords_.size() > kMaxDim) {
    throw Error(Errc::dimension_mismatch, "torus dimension must be in [1, " + std::to_string(kMaxDim) + "]");
  }
  for (Eigen::Index i = 0; i < coords_.size(); ++i) coords_[i] = wrap_unit(coords_[i]);
}

TorusPoint::TorusPoint(std::initializer_list<double> coords) {
  Vec v(static_cast<Eigen::Index>(coords.size()));
  Eigen::Index i = 0;
  for (double c : coords) v[i++] = c;
  *this = TorusPoint(v);
}

TorusPoint translate(const TorusPoint& x, const Vec& v) {
  if (v.size() != x.dim()) throw Error(Errc::dimension_mismatch, "translate");
  return TorusPoint(Vec(x.coords() + v));
}

Vec minimal_offset(const TorusPoint& anchor, const TorusPoint& y) {
  if (anchor.dim() != y.dim()) throw Error(Errc::dimension_mismatch, "points live on different tori");
  Vec r = y.coords() - anchor.coords();
  for (Eigen::Index i = 0; i < r.size(); ++i) r[i] -= std::ceil(r[i] - 0.5);
  return r;
}

double torus_distance(const TorusPoint& x, const TorusPoint& y) {
  return minimal_offset(x, y).norm();
}

Vec chart_difference(const TorusPoint& anchor, const TorusPoint& y) {
  Vec r = minimal_offset(anchor, y);
  if (r.norm() >= 0.25) {
    throw Error(Errc::precondition, "chart_difference: points too far apart (" + std::to_string(r.norm()) + ")");
  }
  return r;
}

// ---------------------------------------------------------------------------

Subspace Subspace::span(const Mat& spanning) {
  Subspace s;
  s.ambient_dim_ = static_cast<int>(spanning.rows());
  if (spanning.cols() == 0) {
    s.basis_.resize(spanning.rows(), 0);
    return s;
  }
  if (spanning.cols() == 1) {
    const double n = spanning.col(0).norm();
    if (!(n > 1e-300)) throw Error(Errc::invalid_argument, "Subspace::span: columns are linearly dependent");
    s.basis_ = spanning / n;
    return s;
  }
  Eigen::JacobiSVD<Mat> svd(spanning, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  if (sv[sv.size() - 1] <= 1e-12 * std::max(1.0, sv[0])) {
    throw Error(Errc::invalid_argument, "Subspace::span: columns are linearly dependent");
  }
  s.basis_ = svd.matrixU();
  return s;
}

Subspace Subspace::from_orthonormal(const Mat& basis) {
  Mat gram = basis.transpose() * basis;
  if (!gram.isIdentity(1e-12)) {
    throw Error(Errc::invalid_argument, "Subspace::from_orthonormal: basis is not orthonormal");
  }
  Subspace s;
  s.ambient_dim_ = static_cast<int>(basis.rows());
  s.basis_ = basis;
  return s;
}

Subspace Subspace::zero(int ambient_dim) {
  Subspace s;
  s.ambient_dim_ = ambient_dim;
  s.basis_.resize(ambient_dim, 0);
  return s;
}

Vec Subspace::project(const Vec& v) const {
  if (rank() == 0) return Vec::Zero(ambient_dim_);
  return basis_ * (basis_.transpose() * v);
}

namespace {

// max over unit v in span(qa) of dist(v, span(qb)) = || (I - Qb Qb^T) Qa ||_2
double one_sided(const Mat& qa, const Mat& qb) {
  Mat residual = qa - qb * (qb.transpose() * qa);
  if (residual.cols() == 1) return residual.norm();
  Eigen::JacobiSVD<Mat> svd(residual);
  return svd.singularValues()[0];
}

}  // namespace

double subspace_distance(const Subspace& a, const Subspace& b) {
  if (a.ambient_dim() != b.ambient_dim()) throw Error(Errc::dimension_mismatch, "subspace_distance");
  if (a.rank() == 0 || b.rank() == 0) throw Error(Errc::invalid_argument, "subspace_distance: zero-rank subspace");
  if (a.rank() == b.rank() && a.basis() == b.basis()) return 0.0;
  return std::max(one_sided(a.basis(), b.basis()), one_sided(b.basis(), a.basis()));
}

// ---------------------------------------------------------------------------

Splitting::Splitting(Subspace es, Subspace ec, Subspace eu)
    : es_(std::move(es)), ec_(std::move(ec)), eu_(std::move(eu)) {
  const int d = es_.ambient_dim();
  if (ec_.ambient_dim() != d || eu_.ambient_dim() != d) throw Error(Errc::dimension_mismatch, "Splitting");
  if (es_.rank() + ec_.rank() + eu_.rank() != d) {
    throw Error(Errc::invalid_argument, "Splitting: bundle ranks do not add up to the ambient dimension");
  }
  frame_.resize(d, d);
  frame_ << es_.basis(), ec_.basis(), eu_.basis();
  // sigma_min <= sqrt(d) / |F^{-1}|_F
  frame_inverse_ = small_inverse(frame_);
  const double inv_norm = frame_inverse_.norm();
  if (!std::isfinite(inv_norm) || std::sqrt(static_cast<double>(d)) / inv_norm <= 1e-9) {
    throw Error(Errc::invalid_argument, "Splitting: bundles are not transverse");
  }
}

Vec Splitting::coefficients(const Vec& v) const { return frame_inverse_ * v; }

SplitComponents Splitting::decompose(const Vec& v) const {
  Vec coef = coefficients(v);
  const int ds = es_.rank(), dc = ec_.rank(), du = eu_.rank();
  SplitComponents out;
  out.s = ds ? Vec(es_.basis() * coef.segment(0, ds)) : Vec(Vec::Zero(v.size()));
  out.c = dc ? Vec(ec_.basis() * coef.segment(ds, dc)) : Vec(Vec::Zero(v.size()));
  out.u = du ? Vec(eu_.basis() * coef.segment(ds + dc, du)) : Vec(Vec::Zero(v.size()));
  return out;
}

Subspace Splitting::center_stable() const {
  Mat m(ambient_dim(), es_.rank() + ec_.rank());
  m << es_.basis(), ec_.basis();
  return m.cols() ? Subspace::span(m) : Subspace::zero(ambient_dim());
}

Subspace Splitting::center_unstable() const {
  Mat m(ambient_dim(), ec_.rank() + eu_.rank());
  m << ec_.basis(), eu_.basis();
  return m.cols() ? Subspace::span(m) : Subspace::zero(ambient_dim());
}

// ---------------------------------------------------------------------------

Cone::Cone(Subspace base_, Subspace complement_, double width_, NormTag tag)
    : base(std::move(base_)), complement(std::move(complement_)), width(width_), norm_tag(tag) {
  const int d = base.ambient_dim();
  if (complement.ambient_dim() != d || base.rank() + complement.rank() != d) {
    throw Error(Errc::invalid_argument, "Cone: base and complement must span the ambient space");
  }
  if (!(width > 0.0)) throw Error(Errc::invalid_argument, "Cone: width must be positive");
  Mat frame(d, d);
  frame << base.basis(), complement.basis();
  Eigen::JacobiSVD<Mat> svd(frame);
  if (svd.singularValues()[d - 1] <= 1e-12) throw Error(Errc::invalid_argument, "Cone: degenerate frame");
  frame_inverse_ = small_inverse(frame);
}

std::pair<Vec, Vec> Cone::decompose(const Vec& v) const {
  Vec coef = frame_inverse_ * v;
  const int r = base.rank();
  Vec v1 = r ? Vec(base.basis() * coef.head(r)) : Vec(Vec::Zero(v.size()));
  Vec v2 = complement.rank() ? Vec(complement.basis() * coef.tail(complement.rank())) : Vec(Vec::Zero(v.size()));
  return {v1, v2};
}

double euclidean_norm(const Vec& v) { return v.norm(); }

Mat small_inverse(const Mat& m) {
  if (m.rows() != m.cols()) throw Error(Errc::dimension_mismatch, "small_inverse: matrix is not square");
  switch (m.rows()) {
    case 1: return Mat::Constant(1, 1, 1.0 / m(0, 0));
    case 2: return Mat(Eigen::Matrix2d(m).inverse());
    case 3: return Mat(Eigen::Matrix3d(m).inverse());
    case 4: return Mat(Eigen::Matrix4d(m).inverse());
    default: return m.inverse();
  }
}

double cone_ratio(const Vec& v, const Cone& cone, const NormFn& norm) {
  auto [v1, v2] = cone.decompose(v);
  const double n1 = norm(v1);
  const double n2 = norm(v2);
  if (n1 == 0.0) return n2 == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return n2 / n1;
}

bool cone_contains(const Vec& v, const Cone& cone, const NormFn& norm) {
  if (v.size() != cone.base.ambient_dim()) throw Error(Errc::dimension_mismatch, "cone_contains");
  if (v.isZero(0.0)) throw Error(Errc::invalid_argument, "cone_contains: zero vector has no cone membership");
  auto [v1, v2] = cone.decompose(v);
  return norm(v2) <= cone.width * norm(v1);
}

}  // namespace qshadow

#pragma once

// Flat-torus geometry: points on T^d, tangent-space subspaces, splittings,
// cones and the additive exponential chart.

#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qshadow/error.hpp"

namespace qshadow {

inline constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

/// Point on the flat torus T^d. Coordinates always lie in [0, 1).
class TorusPoint {
 public:
  TorusPoint() = default;
  explicit TorusPoint(const Vec& coords);
  TorusPoint(std::initializer_list<double> coords);

  int dim() const { return static_cast<int>(coords_.size()); }
  const Vec& coords() const { return coords_; }
  double operator[](int i) const { return coords_[i]; }

  bool operator==(const TorusPoint& other) const { return coords_ == other.coords_; }

 private:
  Vec coords_;
};

/// Reduces a real number to [0, 1).
double wrap_unit(double c);

/// Adds a tangent vector to a point (the exponential map of the flat torus).
TorusPoint translate(const TorusPoint& x, const Vec& v);

double torus_distance(const TorusPoint& x, const TorusPoint& y);

/// Representative of y - anchor with every coordinate in (-1/2, 1/2].
/// Throws Errc::precondition when the points are 1/4 or more apart.
Vec chart_difference(const TorusPoint& anchor, const TorusPoint& y);

/// Same representative without the injectivity-radius check.
Vec minimal_offset(const TorusPoint& anchor, const TorusPoint& y);

/// Linear subspace of R^d carried by an orthonormal basis (columns).
class Subspace {
 public:
  Subspace() = default;

  /// Orthonormalizes the columns of `spanning`; they must be independent.
  static Subspace span(const Mat& spanning);
  /// Wraps a basis that is already orthonormal to 1e-12.
  static Subspace from_orthonormal(const Mat& basis);
  static Subspace zero(int ambient_dim);

  int ambient_dim() const { return ambient_dim_; }
  int rank() const { return static_cast<int>(basis_.cols()); }
  const Mat& basis() const { return basis_; }

  /// Orthogonal projection onto the subspace.
  Vec project(const Vec& v) const;

 private:
  int ambient_dim_ = 0;
  Mat basis_;
};

/// d(A, B) = max of the two one-sided maxima of distances from unit vectors
/// to the other subspace, evaluated through projection residual norms.
double subspace_distance(const Subspace& a, const Subspace& b);

struct BundleDims {
  int s = 0;
  int c = 0;
  int u = 0;
  int total() const { return s + c + u; }
  bool operator==(const BundleDims&) const = default;
};

struct SplitComponents {
  Vec s;
  Vec c;
  Vec u;
};

/// Transverse decomposition E^s + E^c + E^u of the tangent space.
class Splitting {
 public:
  Splitting() = default;
  Splitting(Subspace es, Subspace ec, Subspace eu);

  const Subspace& stable() const { return es_; }
  const Subspace& center() const { return ec_; }
  const Subspace& unstable() const { return eu_; }
  BundleDims dims() const { return {es_.rank(), ec_.rank(), eu_.rank()}; }
  int ambient_dim() const { return es_.ambient_dim(); }

  /// Columns [E^s | E^c | E^u].
  const Mat& frame() const { return frame_; }

  /// Coefficients of v in the frame basis (s first, then c, then u).
  Vec coefficients(const Vec& v) const;
  SplitComponents decompose(const Vec& v) const;

  Subspace center_stable() const;
  Subspace center_unstable() const;

 private:
  Subspace es_, ec_, eu_;
  Mat frame_;
  Mat frame_inverse_;
};

enum class NormTag { ambient, adapted };

using NormFn = std::function<double(const Vec&)>;

/// Cone Q(F1, width) = { v1 + v2 : |v2| <= width |v1| } for F1 + F2 = R^d.
struct Cone {
  Subspace base;
  Subspace complement;
  double width = 0.0;
  NormTag norm_tag = NormTag::ambient;

  Cone(Subspace base_, Subspace complement_, double width_, NormTag tag = NormTag::ambient);

  /// Splits v along base / complement.
  std::pair<Vec, Vec> decompose(const Vec& v) const;

 private:
  Mat frame_inverse_;
};

double euclidean_norm(const Vec& v);

/// Inverse of a square matrix of order at most kMaxDim via the fixed-size
/// closed forms.
Mat small_inverse(const Mat& m);

/// Closed cone membership. Rejects v = 0.
bool cone_contains(const Vec& v, const Cone& cone, const NormFn& norm = euclidean_norm);

/// Ratio |v2| / |v1| for the cone decomposition (infinity when v1 = 0).
double cone_ratio(const Vec& v, const Cone& cone, const NormFn& norm = euclidean_norm);

}  // namespace qshadow

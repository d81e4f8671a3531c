#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "qshadow/geometry.hpp"

namespace qshadow {

/// Smooth invertible map of T^d given in lifted coordinates. Implementations
/// return unwrapped values; SystemSpec wraps them back onto the torus.
class DiffeoMap {
 public:
  virtual ~DiffeoMap() = default;
  virtual int dimension() const = 0;
  virtual Vec forward(const Vec& x) const = 0;
  virtual Vec backward(const Vec& x) const = 0;
  virtual Mat jacobian(const Vec& x) const = 0;
  /// Jacobian of the inverse map evaluated at x.
  virtual Mat inverse_jacobian(const Vec& x) const = 0;
  /// forward(x + d) - forward(x), accurate to the relative precision of d.
  virtual Vec forward_offset(const Vec& x, const Vec& d) const { return forward(x + d) - forward(x); }
  virtual Vec backward_offset(const Vec& x, const Vec& d) const { return backward(x + d) - backward(x); }
};

using Parameters = std::map<std::string, double>;

/// Immutable, validated dynamical system together with its certified
/// regularity constants.
class SystemSpec {
 public:
  SystemSpec(std::string name, Parameters params, std::shared_ptr<const DiffeoMap> map, BundleDims dims,
             double holder_exponent, double holder_constant, double derivative_bound, bool linear);

  const std::string& name() const { return name_; }
  int dimension() const { return map_->dimension(); }
  const Parameters& parameters() const { return params_; }
  BundleDims bundle_dims() const { return dims_; }
  /// Hoelder exponent of Df (alpha).
  double holder_exponent() const { return alpha_; }
  /// Hoelder constant K of Df and Df^{-1}.
  double holder_constant() const { return holder_constant_; }
  /// L >= max(sup |Df|, sup |Df^{-1}|).
  double derivative_bound() const { return derivative_bound_; }
  /// True when the derivative is constant (splitting independent of the point).
  bool is_linear() const { return linear_; }
  long max_iterations() const { return max_iterations_; }

  TorusPoint step(const TorusPoint& x) const;
  TorusPoint step_inverse(const TorusPoint& x) const;
  Mat jacobian(const TorusPoint& x) const;
  Mat inverse_jacobian(const TorusPoint& x) const;
  /// f(x + d) - f(x) for a small tangent offset d, without cancellation.
  Vec step_offset(const TorusPoint& x, const Vec& d) const;
  Vec step_inverse_offset(const TorusPoint& x, const Vec& d) const;

 private:
  std::string name_;
  Parameters params_;
  std::shared_ptr<const DiffeoMap> map_;
  BundleDims dims_;
  double alpha_;
  double holder_constant_;
  double derivative_bound_;
  bool linear_;
  long max_iterations_ = 1'000'000;
};

/// f^n(x); n < 0 iterates the inverse.
TorusPoint evaluate(const SystemSpec& system, const TorusPoint& x, long n);

/// D_x f^n as the ordered product of one-step Jacobians. Throws
/// Errc::overflow when the product leaves the floating-point range.
Mat cocycle(const SystemSpec& system, const TorusPoint& x, long n);

/// Points f^m(x) for m in [lo, hi], each obtained by iterating from x
/// (forward for m > 0, inverse for m < 0).
class OrbitWindow {
 public:
  OrbitWindow(const SystemSpec& system, const TorusPoint& x, long lo, long hi);

  long lo() const { return lo_; }
  long hi() const { return hi_; }
  const TorusPoint& at(long m) const { return points_[static_cast<std::size_t>(m - lo_)]; }

 private:
  long lo_, hi_;
  std::vector<TorusPoint> points_;
};

/// Registry: "cat", "cat_x_rot", "cat_x_rot_perturbed", "rotation".
///   cat_x_rot            alpha_rot (default sqrt(2)/1000)
///   cat_x_rot_perturbed  alpha_rot, nu (default 0.05, |nu| <= 0.2)
///   rotation             alpha_rot (default (sqrt(5)-1)/2)
SystemSpec make_system(const std::string& name, const Parameters& params = {});

std::vector<std::string> registry_names();

/// Smallest |det Df| over a uniform grid with `per_axis` points per axis.
double min_abs_jacobian_determinant(const DiffeoMap& map, int per_axis);

}  // namespace qshadow

#include "qshadow/systems.hpp"

#include <cmath>
#include <numbers>

namespace qshadow {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// sin(2 pi (a + h)) - sin(2 pi a)
double sin_increment(double a, double h) {
  return 2.0 * std::cos(kTwoPi * (a + 0.5 * h)) * std::sin(std::numbers::pi * h);
}

Mat cat_matrix() {
  Mat a(2, 2);
  a << 2, 1, 1, 1;
  return a;
}

Mat cat_inverse_matrix() {
  Mat a(2, 2);
  a << 1, -1, -1, 2;
  return a;
}

class CatMap final : public DiffeoMap {
 public:
  int dimension() const override { return 2; }
  Vec forward(const Vec& x) const override { return cat_matrix() * x; }
  Vec backward(const Vec& x) const override { return cat_inverse_matrix() * x; }
  Mat jacobian(const Vec&) const override { return cat_matrix(); }
  Mat inverse_jacobian(const Vec&) const override { return cat_inverse_matrix(); }
  Vec forward_offset(const Vec&, const Vec& d) const override { return cat_matrix() * d; }
  Vec backward_offset(const Vec&, const Vec& d) const override { return cat_inverse_matrix() * d; }
};

// (x, y, theta) -> (2x + y, x + y, theta + alpha)
class CatTimesRotation final : public DiffeoMap {
 public:
  explicit CatTimesRotation(double alpha) : alpha_(alpha) {}
  int dimension() const override { return 3; }
  Vec forward(const Vec& p) const override {
    Vec r(3);
    r << 2 * p[0] + p[1], p[0] + p[1], p[2] + alpha_;
    return r;
  }
  Vec backward(const Vec& p) const override {
    Vec r(3);
    r << p[0] - p[1], -p[0] + 2 * p[1], p[2] - alpha_;
    return r;
  }
  Mat jacobian(const Vec&) const override {
    Mat j = Mat::Zero(3, 3);
    j.topLeftCorner(2, 2) = cat_matrix();
    j(2, 2) = 1;
    return j;
  }
  Mat inverse_jacobian(const Vec&) const override {
    Mat j = Mat::Zero(3, 3);
    j.topLeftCorner(2, 2) = cat_inverse_matrix();
    j(2, 2) = 1;
    return j;
  }
  Vec forward_offset(const Vec& p, const Vec& d) const override { return jacobian(p) * d; }
  Vec backward_offset(const Vec& p, const Vec& d) const override { return inverse_jacobian(p) * d; }

 private:
  double alpha_;
};

// Fiber shear first, then the base shear driven by the new fiber coordinate:
//   theta' = theta + alpha + nu sin(2 pi x)
//   x'     = 2x + y + nu sin(2 pi theta')
//   y'     = x + y
// Both shears have unit Jacobian determinant, so the map preserves volume and
// inverts in closed form (base first from theta', then the fiber).
class PerturbedSkewProduct final : public DiffeoMap {
 public:
  PerturbedSkewProduct(double alpha, double nu) : alpha_(alpha), nu_(nu) {}
  int dimension() const override { return 3; }

  Vec forward(const Vec& p) const override {
    const double th = p[2] + alpha_ + nu_ * std::sin(kTwoPi * p[0]);
    Vec r(3);
    r << 2 * p[0] + p[1] + nu_ * std::sin(kTwoPi * th), p[0] + p[1], th;
    return r;
  }

  Vec backward(const Vec& q) const override {
    const double shift = nu_ * std::sin(kTwoPi * q[2]);
    const double x = q[0] - q[1] - shift;
    const double y = 2 * q[1] - q[0] + shift;
    Vec r(3);
    r << x, y, q[2] - alpha_ - nu_ * std::sin(kTwoPi * x);
    return r;
  }

  Mat jacobian(const Vec& p) const override {
    const double th = p[2] + alpha_ + nu_ * std::sin(kTwoPi * p[0]);
    const double gx = kTwoPi * nu_ * std::cos(kTwoPi * p[0]);   // d theta' / dx
    const double gt = kTwoPi * nu_ * std::cos(kTwoPi * th);     // d x' / d theta'
    Mat j(3, 3);
    j << 2 + gt * gx, 1, gt,
         1, 1, 0,
         gx, 0, 1;
    return j;
  }

  Mat inverse_jacobian(const Vec& q) const override { return small_inverse(jacobian(backward(q))); }

  Vec forward_offset(const Vec& p, const Vec& d) const override {
    const double th = p[2] + alpha_ + nu_ * std::sin(kTwoPi * p[0]);
    const double dth = d[2] + nu_ * sin_increment(p[0], d[0]);
    Vec r(3);
    r << 2 * d[0] + d[1] + nu_ * sin_increment(th, dth), d[0] + d[1], dth;
    return r;
  }

  Vec backward_offset(const Vec& q, const Vec& e) const override {
    const double shift = nu_ * sin_increment(q[2], e[2]);
    const double x = q[0] - q[1] - nu_ * std::sin(kTwoPi * q[2]);
    const double dx = e[0] - e[1] - shift;
    Vec r(3);
    r << dx, 2 * e[1] - e[0] + shift, e[2] - nu_ * sin_increment(x, dx);
    return r;
  }

 private:
  double alpha_, nu_;
};

class CircleRotation final : public DiffeoMap {
 public:
  explicit CircleRotation(double alpha) : alpha_(alpha) {}
  int dimension() const override { return 1; }
  Vec forward(const Vec& p) const override { return Vec::Constant(1, p[0] + alpha_); }
  Vec backward(const Vec& p) const override { return Vec::Constant(1, p[0] - alpha_); }
  Mat jacobian(const Vec&) const override { return Mat::Identity(1, 1); }
  Mat inverse_jacobian(const Vec&) const override { return Mat::Identity(1, 1); }
  Vec forward_offset(const Vec&, const Vec& d) const override { return d; }
  Vec backward_offset(const Vec&, const Vec& d) const override { return d; }

 private:
  double alpha_;
};

double operator_norm(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()[0];
}

// Grid sweep over T^d: calls fn(point) for per_axis^d points offset by half a cell.
template <typename Fn>
void for_each_grid_point(int dim, int per_axis, Fn&& fn) {
  long total = 1;
  for (int i = 0; i < dim; ++i) total *= per_axis;
  Vec p(dim);
  for (long idx = 0; idx < total; ++idx) {
    long rem = idx;
    for (int i = 0; i < dim; ++i) {
      p[i] = (static_cast<double>(rem % per_axis) + 0.5) / per_axis;
      rem /= per_axis;
    }
    fn(p);
  }
}

struct SampledConstants {
  double holder = 0.0;  // Lipschitz constant of Df and Df^{-1} (alpha = 1)
  double bound = 0.0;   // max(|Df|, |Df^{-1}|)
};

SampledConstants sample_constants(const DiffeoMap& map, int per_axis) {
  SampledConstants out;
  const int d = map.dimension();
  const double h = 1e-5;
  for_each_grid_point(d, per_axis, [&](const Vec& p) {
    const Mat j = map.jacobian(p);
    const Mat ji = map.inverse_jacobian(p);
    out.bound = std::max({out.bound, operator_norm(j), operator_norm(ji)});
    for (int i = 0; i < d; ++i) {
      Vec q = p;
      q[i] += h;
      out.holder = std::max(out.holder, operator_norm(map.jacobian(q) - j) / h);
      out.holder = std::max(out.holder, operator_norm(map.inverse_jacobian(q) - ji) / h);
    }
  });
  return out;
}

void check_keys(const std::string& name, const Parameters& params, std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : params) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(Errc::invalid_argument, "system '" + name + "' has no parameter '" + key + "'");
    if (!std::isfinite(value)) throw Error(Errc::invalid_argument, "parameter '" + key + "' is not finite");
  }
}

void check_inverse_consistency(const DiffeoMap& map, const std::string& name) {
  double worst = 0.0;
  for_each_grid_point(map.dimension(), 9, [&](const Vec& p) {
    const TorusPoint x(p);
    const TorusPoint back(map.backward(TorusPoint(map.forward(p)).coords()));
    worst = std::max(worst, torus_distance(x, back));
  });
  if (worst > 1e-10) {
    throw Error(Errc::invalid_argument, "system '" + name + "' fails the inverse consistency check");
  }
}

}  // namespace

double min_abs_jacobian_determinant(const DiffeoMap& map, int per_axis) {
  double worst = std::numeric_limits<double>::infinity();
  for_each_grid_point(map.dimension(), per_axis,
                      [&](const Vec& p) { worst = std::min(worst, std::abs(map.jacobian(p).determinant())); });
  return worst;
}

SystemSpec::SystemSpec(std::string name, Parameters params, std::shared_ptr<const DiffeoMap> map, BundleDims dims,
                       double holder_exponent, double holder_constant, double derivative_bound, bool linear)
    : name_(std::move(name)),
      params_(std::move(params)),
      map_(std::move(map)),
      dims_(dims),
      alpha_(holder_exponent),
      holder_constant_(holder_constant),
      derivative_bound_(derivative_bound),
      linear_(linear) {
  if (dims_.total() != map_->dimension()) throw Error(Errc::invalid_argument, "bundle dimensions");
  if (!(alpha_ > 0.0 && alpha_ <= 1.0)) throw Error(Errc::invalid_argument, "holder exponent must be in (0, 1]");
  if (holder_constant_ < 0.0) throw Error(Errc::invalid_argument, "holder constant must be nonnegative");
  if (derivative_bound_ < 1.0) throw Error(Errc::invalid_argument, "derivative bound must be >= 1");
}

TorusPoint SystemSpec::step(const TorusPoint& x) const { return TorusPoint(map_->forward(x.coords())); }
TorusPoint SystemSpec::step_inverse(const TorusPoint& x) const { return TorusPoint(map_->backward(x.coords())); }
Vec SystemSpec::step_offset(const TorusPoint& x, const Vec& d) const { return map_->forward_offset(x.coords(), d); }
Vec SystemSpec::step_inverse_offset(const TorusPoint& x, const Vec& d) const {
  return map_->backward_offset(x.coords(), d);
}
Mat SystemSpec::jacobian(const TorusPoint& x) const { return map_->jacobian(x.coords()); }
Mat SystemSpec::inverse_jacobian(const TorusPoint& x) const { return map_->inverse_jacobian(x.coords()); }

TorusPoint evaluate(const SystemSpec& system, const TorusPoint& x, long n) {
  if (x.dim() != system.dimension()) throw Error(Errc::dimension_mismatch, "evaluate");
  if (std::abs(n) > system.max_iterations()) throw Error(Errc::precondition, "evaluate: iteration count too large");
  TorusPoint p = x;
  if (n >= 0) {
    for (long i = 0; i < n; ++i) p = system.step(p);
  } else {
    for (long i = 0; i < -n; ++i) p = system.step_inverse(p);
  }
  return p;
}

Mat cocycle(const SystemSpec& system, const TorusPoint& x, long n) {
  if (x.dim() != system.dimension()) throw Error(Errc::dimension_mismatch, "cocycle");
  if (std::abs(n) > system.max_iterations()) throw Error(Errc::precondition, "cocycle: iteration count too large");
  const int d = system.dimension();
  Mat product = Mat::Identity(d, d);
  TorusPoint p = x;
  if (n >= 0) {
    for (long i = 0; i < n; ++i) {
      product = system.jacobian(p) * product;
      p = system.step(p);
    }
  } else {
    for (long i = 0; i < -n; ++i) {
      product = system.inverse_jacobian(p) * product;
      p = system.step_inverse(p);
    }
  }
  if (!product.allFinite()) throw Error(Errc::overflow, "cocycle product left the floating-point range");
  return product;
}

OrbitWindow::OrbitWindow(const SystemSpec& system, const TorusPoint& x, long lo, long hi) : lo_(lo), hi_(hi) {
  if (lo > 0 || hi < 0) throw Error(Errc::invalid_argument, "OrbitWindow must contain m = 0");
  points_.resize(static_cast<std::size_t>(hi - lo + 1));
  points_[static_cast<std::size_t>(-lo)] = x;
  for (long m = 1; m <= hi; ++m) points_[static_cast<std::size_t>(m - lo)] = system.step(at(m - 1));
  for (long m = -1; m >= lo; --m) points_[static_cast<std::size_t>(m - lo)] = system.step_inverse(at(m + 1));
}

std::vector<std::string> registry_names() { return {"cat", "cat_x_rot", "cat_x_rot_perturbed", "rotation"}; }

SystemSpec make_system(const std::string& name, const Parameters& params) {
  const double golden_cat = (3.0 + std::sqrt(5.0)) / 2.0;
  if (name == "cat") {
    check_keys(name, params, {});
    return SystemSpec(name, params, std::make_shared<CatMap>(), {1, 0, 1}, 1.0, 0.0, golden_cat, true);
  }
  if (name == "cat_x_rot") {
    check_keys(name, params, {"alpha_rot"});
    Parameters p = params;
    p.try_emplace("alpha_rot", std::sqrt(2.0) / 1000.0);
    return SystemSpec(name, p, std::make_shared<CatTimesRotation>(p.at("alpha_rot")), {1, 1, 1}, 1.0, 0.0,
                      golden_cat, true);
  }
  if (name == "cat_x_rot_perturbed") {
    check_keys(name, params, {"alpha_rot", "nu"});
    Parameters p = params;
    p.try_emplace("alpha_rot", std::sqrt(2.0) / 1000.0);
    p.try_emplace("nu", 0.05);
    const double nu = p.at("nu");
    auto map = std::make_shared<PerturbedSkewProduct>(p.at("alpha_rot"), nu);
    if (min_abs_jacobian_determinant(*map, 17) < 0.1) {
      throw Error(Errc::invalid_argument, "cat_x_rot_perturbed: Jacobian determinant check failed");
    }
    if (std::abs(nu) > 0.2) {
      throw Error(Errc::invalid_argument, "cat_x_rot_perturbed: |nu| must not exceed 0.2 (small perturbation regime)");
    }
    check_inverse_consistency(*map, name);
    const SampledConstants sampled = sample_constants(*map, 24);
    // Grid-sampled constants carry a safety factor of 2.
    return SystemSpec(name, p, map, {1, 1, 1}, 1.0, 2.0 * sampled.holder, 2.0 * sampled.bound, nu == 0.0);
  }
  if (name == "rotation") {
    check_keys(name, params, {"alpha_rot"});
    Parameters p = params;
    p.try_emplace("alpha_rot", (std::sqrt(5.0) - 1.0) / 2.0);
    return SystemSpec(name, p, std::make_shared<CircleRotation>(p.at("alpha_rot")), {0, 1, 0}, 1.0, 0.0, 1.0, true);
  }
  throw Error(Errc::unknown_system, "'" + name + "' is not in the registry");
}

}  // namespace qshadow

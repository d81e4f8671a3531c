#include <algorithm>
#include <cmath>

#include "qshadow/shadowing.hpp"

namespace qshadow {

ClosingResult quasi_close(const SystemSpec& system, const Certifier& certifier, const TorusPoint& x, long p,
                          const ShadowScales& scales, double beta, const ShadowOptions& options) {
  if (p < 1) throw Error(Errc::precondition, "closing period must be at least 1");
  Segment seg;
  try {
    seg = make_segment(system, certifier, x, p);
  } catch (const Error& e) {
    if (e.code() != Errc::no_block_index) throw;
    throw Error(Errc::precondition, std::string("closing point is not certified: ") + e.what());
  }
  std::vector<double> schedule =
      beta > 0.0 ? constant_schedule(beta, certifier.k_max()) : certified_schedule(scales, certifier.k_max());
  const double bound = schedule[static_cast<std::size_t>(seg.s_plus - 1)];
  const double gap = torus_distance(x, seg.points.back());
  if (!(gap < bound)) {
    throw Error(Errc::precondition, "recurrence " + std::to_string(gap) + " not below beta " + std::to_string(bound));
  }
  ClosingResult out;
  out.pseudo = assemble_pseudo_orbit({std::move(seg)}, std::move(schedule), true);
  out.shadow = quasi_shadow_solve(system, out.pseudo, scales, options);
  const TorusPoint& y = out.shadow.starts.front();
  out.period_defect = torus_distance(evaluate(system, y, p), y);
  return out;
}

ClosingSweep exhaustive_closing(const SystemSpec& system, const Certifier& certifier, const ShadowScales& scales,
                                long p, const std::vector<int>& per_axis, double beta, double dedup,
                                const ShadowOptions& options) {
  const int d = system.dimension();
  if (per_axis.empty() || (per_axis.size() != 1 && static_cast<int>(per_axis.size()) != d)) {
    throw Error(Errc::invalid_argument, "grid needs one size or one per axis");
  }
  std::vector<int> g(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) g[i] = per_axis.size() == 1 ? per_axis[0] : per_axis[i];
  ClosingSweep out;
  out.grid_points = 1;
  for (int v : g) out.grid_points *= v;
  Vec c(d);
  for (long idx = 0; idx < out.grid_points; ++idx) {
    long rem = idx;
    for (int i = 0; i < d; ++i) {
      c[i] = static_cast<double>(rem % g[i]) / g[i];
      rem /= g[i];
    }
    const TorusPoint x(c);
    if (!(torus_distance(x, evaluate(system, x, p)) < beta)) continue;
    ++out.candidates;
    try {
      const ClosingResult r = quasi_close(system, certifier, x, p, scales, beta, options);
      ++out.solved;
      out.max_period_defect = std::max(out.max_period_defect, r.period_defect);
      const TorusPoint& y = r.shadow.starts.front();
      const bool known = std::any_of(out.distinct.begin(), out.distinct.end(),
                                     [&](const TorusPoint& z) { return torus_distance(z, y) < dedup; });
      if (!known) {
        out.distinct.push_back(y);
        out.distinct_center.push_back(r.shadow.center_displacements.front());
      }
    } catch (const Error& e) {
      if (e.code() == Errc::invalid_argument || e.code() == Errc::dimension_mismatch) throw;
      ++out.failures;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ReferenceOrbit::ReferenceOrbit(const SystemSpec& system, const TorusPoint& start, long length, double cell)
    : d_(system.dimension()), length_(length) {
  if (length < 1 || length > 4'000'000'000L) throw Error(Errc::invalid_argument, "reference orbit length");
  if (!(cell > 0.0)) throw Error(Errc::invalid_argument, "reference grid cell must be positive");
  const long cap = static_cast<long>(std::floor(std::pow(4'194'304.0, 1.0 / d_)));
  per_axis_ = std::clamp(static_cast<long>(std::floor(1.0 / cell)), 1L, cap);
  long cells = 1;
  for (int i = 0; i < d_; ++i) cells *= per_axis_;

  coords_.resize(static_cast<std::size_t>(length) * d_);
  TorusPoint p = start;
  std::vector<long> cell_of_point(static_cast<std::size_t>(length));
  cell_start_.assign(static_cast<std::size_t>(cells) + 1, 0);
  for (long t = 0; t < length; ++t) {
    double* dst = &coords_[static_cast<std::size_t>(t) * d_];
    for (int i = 0; i < d_; ++i) dst[i] = p[i];
    cell_of_point[static_cast<std::size_t>(t)] = cell_of(dst);
    ++cell_start_[static_cast<std::size_t>(cell_of_point[static_cast<std::size_t>(t)]) + 1];
    if (t + 1 < length) p = system.step(p);
  }
  for (long c = 0; c < cells; ++c) cell_start_[c + 1] += cell_start_[c];
  order_.resize(static_cast<std::size_t>(length));
  std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
  for (long t = 0; t < length; ++t) order_[fill[cell_of_point[static_cast<std::size_t>(t)]]++] = static_cast<std::uint32_t>(t);
}

long ReferenceOrbit::cell_of(const double* p) const {
  long idx = 0;
  for (int i = d_ - 1; i >= 0; --i) {
    const long c = std::min(per_axis_ - 1, static_cast<long>(p[i] * per_axis_));
    idx = idx * per_axis_ + c;
  }
  return idx;
}

TorusPoint ReferenceOrbit::at(long t) const {
  if (t < 0 || t >= length_) throw Error(Errc::invalid_argument, "reference orbit time out of range");
  Vec c(d_);
  for (int i = 0; i < d_; ++i) c[i] = coords_[static_cast<std::size_t>(t) * d_ + i];
  return TorusPoint(c);
}

std::vector<long> ReferenceOrbit::near(const TorusPoint& c, double radius) const {
  const long reach = std::max(1L, static_cast<long>(std::ceil(radius * per_axis_)));
  std::vector<std::vector<long>> axes(static_cast<std::size_t>(d_));
  for (int i = 0; i < d_; ++i) {
    const long home = std::min(per_axis_ - 1, static_cast<long>(c[i] * per_axis_));
    if (2 * reach + 1 >= per_axis_) {
      for (long v = 0; v < per_axis_; ++v) axes[i].push_back(v);
    } else {
      for (long o = -reach; o <= reach; ++o) axes[i].push_back(((home + o) % per_axis_ + per_axis_) % per_axis_);
    }
  }
  std::vector<long> out;
  std::vector<std::size_t> pos(static_cast<std::size_t>(d_), 0);
  Vec q(d_);
  while (true) {
    long cell = 0;
    for (int i = d_ - 1; i >= 0; --i) cell = cell * per_axis_ + axes[i][pos[i]];
    for (std::uint32_t k = cell_start_[cell]; k < cell_start_[cell + 1]; ++k) {
      const long t = order_[k];
      for (int i = 0; i < d_; ++i) q[i] = coords_[static_cast<std::size_t>(t) * d_ + i];
      if (torus_distance(c, TorusPoint(q)) < radius) out.push_back(t);
    }
    int i = 0;
    while (i < d_ && ++pos[i] == axes[i].size()) pos[i++] = 0;
    if (i == d_) break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

SpecificationResult quasi_specification(const SystemSpec& system, const Certifier& certifier,
                                        const std::vector<std::pair<TorusPoint, long>>& pieces,
                                        const ReferenceOrbit& reference, double delta, long H,
                                        const ShadowScales& scales, const ShadowOptions& options) {
  if (pieces.empty()) throw Error(Errc::precondition, "specification needs at least one segment");
  if (!(delta > 0.0) || H < 1) throw Error(Errc::invalid_argument, "specification delta and horizon");
  std::vector<Segment> given;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    try {
      given.push_back(make_segment(system, certifier, pieces[i].first, pieces[i].second));
    } catch (const Error& e) {
      if (e.code() != Errc::no_block_index) throw;
      throw Error(Errc::precondition, "segment " + std::to_string(i) + " has no certificate within k_max");
    }
  }

  SpecificationResult out;
  std::vector<Segment> chain;
  const std::size_t l = given.size();
  for (std::size_t i = 0; i < l; ++i) {
    const Segment& seg = given[i];
    const Segment& nxt = given[(i + 1) % l];
    chain.push_back(seg);
    const TorusPoint& end = seg.points.back();
    if (torus_distance(end, nxt.anchor) < delta) {
      out.transitions.push_back(0);
      continue;
    }
    std::vector<std::pair<long, long>> hits;  // (X, t)
    for (long t : reference.near(end, delta)) {
      for (long X = 1; X <= H && t + X < reference.size(); ++X) {
        if (torus_distance(reference.at(t + X), nxt.anchor) < delta) {
          hits.emplace_back(X, t);
          break;
        }
      }
    }
    std::sort(hits.begin(), hits.end());
    bool found = false;
    for (const auto& [X, t] : hits) {
      try {
        Segment bridge = make_segment(system, certifier, reference.at(t), X);
        if (std::abs(bridge.s_minus - seg.s_plus) > 1 || std::abs(bridge.s_plus - nxt.s_minus) > 1) continue;
        chain.push_back(std::move(bridge));
        out.transitions.push_back(X);
        found = true;
        break;
      } catch (const Error& e) {
        if (e.code() != Errc::no_block_index) throw;
      }
    }
    if (!found) {
      throw Error(Errc::no_transition, "no certified transition from segment " + std::to_string(i) + " within H = " +
                                           std::to_string(H));
    }
  }
  out.pseudo = assemble_pseudo_orbit(std::move(chain), constant_schedule(delta, certifier.k_max()), true);
  out.shadow = quasi_shadow_solve(system, out.pseudo, scales, options);
  return out;
}

}  // namespace qshadow

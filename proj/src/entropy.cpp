#include "qshadow/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <queue>
#include <random>
#include <unordered_map>

#include "qshadow/csv.hpp"

namespace qshadow {

std::vector<TorusPoint> uniform_samples(int dim, int count, std::uint64_t seed) {
  if (dim < 1 || dim > kMaxDim || count < 0) throw Error(Errc::invalid_argument, "sample dimension or count");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<TorusPoint> out;
  out.reserve(static_cast<std::size_t>(count));
  Vec c(dim);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < dim; ++j) c[j] = unit(rng);
    out.emplace_back(c);
  }
  return out;
}

OrbitTable::OrbitTable(const SystemSpec& system, const std::vector<TorusPoint>& starts, int length)
    : d_(system.dimension()), length_(length), count_(static_cast<int>(starts.size())) {
  if (length < 1) throw Error(Errc::invalid_argument, "orbit table length must be positive");
  coords_.resize(static_cast<std::size_t>(count_) * length_ * d_);
  for (int i = 0; i < count_; ++i) {
    if (starts[static_cast<std::size_t>(i)].dim() != d_) throw Error(Errc::dimension_mismatch, "sample dimension");
    TorusPoint p = starts[static_cast<std::size_t>(i)];
    for (int t = 0; t < length_; ++t) {
      double* dst = &coords_[(static_cast<std::size_t>(i) * length_ + t) * d_];
      for (int j = 0; j < d_; ++j) dst[j] = p[j];
      if (t + 1 < length_) p = system.step(p);
    }
  }
}

TorusPoint OrbitTable::point(int i, int t) const {
  Vec c(d_);
  const double* p = at(i, t);
  for (int j = 0; j < d_; ++j) c[j] = p[j];
  return TorusPoint(c);
}

namespace {

double wrapped_sq(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int j = 0; j < d; ++j) {
    double r = b[j] - a[j];
    r -= std::ceil(r - 0.5);
    s += r * r;
  }
  return s;
}

void check_horizon(const OrbitTable& t, int n) {
  if (n < 1 || n > t.length()) throw Error(Errc::precondition, "n outside the orbit table length");
}

// Hash grid on the positions at times 0 and n - 1. Cells are at least 2r wide,
// so every point within r sits in the own cell or the nearer neighbour per axis.
class BowenGrid {
 public:
  BowenGrid(const OrbitTable& table, int n, double r) : table_(table), n_(n) {
    per_axis_ = std::max(1L, static_cast<long>(std::floor(1.0 / (2.0 * r))));
    axes_ = n > 1 ? 2 * table.dim() : table.dim();
  }

  void insert(int i) { cells_[key(i)].push_back(i); }

  template <class F>
  void visit(int i, F&& fn) const {
    std::vector<std::vector<long>> choices(static_cast<std::size_t>(axes_));
    for (int a = 0; a < axes_; ++a) {
      const double c = coord(i, a) * per_axis_;
      const long home = std::min(per_axis_ - 1, static_cast<long>(c));
      if (per_axis_ <= 2) {
        for (long v = 0; v < per_axis_; ++v) choices[a].push_back(v);
      } else {
        choices[a].push_back(home);
        const long side = c - home < 0.5 ? home - 1 : home + 1;
        choices[a].push_back((side + per_axis_) % per_axis_);
      }
    }
    std::vector<std::size_t> pos(static_cast<std::size_t>(axes_), 0);
    while (true) {
      std::uint64_t k = 0;
      for (int a = axes_ - 1; a >= 0; --a) k = k * per_axis_ + choices[a][pos[a]];
      const auto it = cells_.find(k);
      if (it != cells_.end()) {
        for (int j : it->second) fn(j);
      }
      int a = 0;
      while (a < axes_ && ++pos[a] == choices[a].size()) pos[a++] = 0;
      if (a == axes_) break;
    }
  }

 private:
  double coord(int i, int a) const {
    const int d = table_.dim();
    return a < d ? table_.at(i, 0)[a] : table_.at(i, n_ - 1)[a - d];
  }
  std::uint64_t key(int i) const {
    std::uint64_t k = 0;
    for (int a = axes_ - 1; a >= 0; --a) {
      k = k * per_axis_ + std::min(per_axis_ - 1, static_cast<long>(coord(i, a) * per_axis_));
    }
    return k;
  }

  const OrbitTable& table_;
  int n_;
  long per_axis_;
  int axes_;
  std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

constexpr std::size_t kNeighbourCap = 120'000'000;
constexpr std::size_t kMinThinnedSamples = 1000;

}  // namespace

double OrbitTable::bowen_distance(int i, int j, int n) const {
  double worst = 0.0;
  for (int t = 0; t < n; ++t) worst = std::max(worst, wrapped_sq(at(i, t), at(j, t), d_));
  return std::sqrt(worst);
}

bool OrbitTable::bowen_within(int i, int j, int n, double r) const {
  const double r2 = r * r;
  for (int t = 0; t < n; ++t) {
    if (!(wrapped_sq(at(i, t), at(j, t), d_) < r2)) return false;
  }
  return true;
}

namespace {

// Symmetric neighbour lists in CSR form (each point lists itself).
struct Neighbours {
  std::vector<std::size_t> start;
  std::vector<int> idx;

  template <class Keep>
  static Neighbours build(int N, Keep&& collect) {
    Neighbours out;
    out.start.assign(static_cast<std::size_t>(N) + 1, 0);
    for (int i = 0; i < N; ++i) {
      collect(i, out.idx);
      if (out.idx.size() > kNeighbourCap) throw Error(Errc::sample_budget, "Bowen-ball neighbour lists too large");
      out.start[static_cast<std::size_t>(i) + 1] = out.idx.size();
    }
    return out;
  }
};

// Pairs with d_n < r, from the grid.
Neighbours grid_neighbours(const OrbitTable& table, int n, double r) {
  BowenGrid grid(table, n, r);
  for (int i = 0; i < table.size(); ++i) grid.insert(i);
  return Neighbours::build(table.size(), [&](int i, std::vector<int>& out) {
    grid.visit(i, [&](int j) {
      if (table.bowen_within(i, j, n, r)) out.push_back(j);
    });
  });
}

// Pairs of `sup` with d_n < r; `sup` must contain every such pair.
Neighbours refine(const Neighbours& sup, const OrbitTable& table, int n, double r) {
  return Neighbours::build(table.size(), [&](int i, std::vector<int>& out) {
    for (std::size_t a = sup.start[i]; a < sup.start[i + 1]; ++a) {
      if (table.bowen_within(i, sup.idx[a], n, r)) out.push_back(sup.idx[a]);
    }
  });
}

// Pairs of `prev` (d_{t} < r) that stay within r at time t.
Neighbours extend(const Neighbours& prev, const OrbitTable& table, int t, double r) {
  const double r2 = r * r;
  return Neighbours::build(table.size(), [&](int i, std::vector<int>& out) {
    for (std::size_t a = prev.start[i]; a < prev.start[i + 1]; ++a) {
      const int j = prev.idx[a];
      if (wrapped_sq(table.at(i, t), table.at(j, t), table.dim()) < r2) out.push_back(j);
    }
  });
}

// Lazy greedy: stored gains are upper bounds since gains only decrease.
long lazy_cover(const Neighbours& nb, int N, double delta) {
  const long target = static_cast<long>(std::ceil((1.0 - delta) * N - 1e-9));
  std::vector<char> covered(static_cast<std::size_t>(N), 0);
  std::priority_queue<std::pair<long, int>> heap;
  for (int i = 0; i < N; ++i) heap.emplace(static_cast<long>(nb.start[i + 1] - nb.start[i]), -i);
  long done = 0, balls = 0;
  while (done < target && !heap.empty()) {
    const int c = -heap.top().second;
    const long bound = heap.top().first;
    heap.pop();
    long g = 0;
    for (std::size_t a = nb.start[c]; a < nb.start[c + 1]; ++a) g += !covered[nb.idx[a]];
    if (g == 0) continue;
    if (g < bound && !heap.empty() && g < heap.top().first) {
      heap.emplace(g, -c);
      continue;
    }
    ++balls;
    for (std::size_t a = nb.start[c]; a < nb.start[c + 1]; ++a) {
      if (!covered[nb.idx[a]]) {
        covered[nb.idx[a]] = 1;
        ++done;
      }
    }
  }
  return balls;
}

// Greedy maximal (n, r)-separated subset; `sup` must contain every pair with
// d_n <= r.
long separated_count(const Neighbours& sup, const OrbitTable& table, int n, double r) {
  std::vector<char> kept(static_cast<std::size_t>(table.size()), 0);
  long count = 0;
  for (int i = 0; i < table.size(); ++i) {
    bool free = true;
    for (std::size_t a = sup.start[i]; a < sup.start[i + 1] && free; ++a) {
      const int j = sup.idx[a];
      if (kept[j] && !(table.bowen_distance(i, j, n) > r)) free = false;
    }
    if (free) {
      kept[i] = 1;
      ++count;
    }
  }
  return count;
}

}  // namespace

long greedy_bowen_cover(const OrbitTable& table, int n, double r, double delta) {
  check_horizon(table, n);
  if (!(r > 0.0 && r <= 0.25)) throw Error(Errc::invalid_argument, "cover radius must lie in (0, 1/4]");
  if (!(delta >= 0.0 && delta < 1.0)) throw Error(Errc::invalid_argument, "delta must lie in [0, 1)");
  if (table.size() == 0) return 0;
  return lazy_cover(grid_neighbours(table, n, r), table.size(), delta);
}

std::vector<int> separated_subset(const OrbitTable& table, int n, double r, const std::vector<int>& order) {
  check_horizon(table, n);
  if (!(r > 0.0 && r <= 0.25)) throw Error(Errc::invalid_argument, "separation must lie in (0, 1/4]");
  BowenGrid grid(table, n, r);
  std::vector<int> kept;
  for (int i : order) {
    bool free = true;
    grid.visit(i, [&](int j) {
      if (free && !(table.bowen_distance(i, j, n) > r)) free = false;
    });
    if (free) {
      kept.push_back(i);
      grid.insert(i);
    }
  }
  return kept;
}

nlohmann::json EntropyEstimate::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const EntropyRow& r : rows) {
    rows_json.push_back({{"n", r.n},
                         {"N_cover", r.N_cover},
                         {"N_separated", r.N_separated},
                         {"N_cover_double", r.N_cover_double},
                         {"saturated", r.saturated}});
  }
  return {{"gamma", gamma},   {"delta", delta},   {"samples", samples},
          {"h_hat", h_hat},   {"fit_lo", fit_lo}, {"fit_hi", fit_hi},
          {"fit_residual", fit_residual}, {"bracket_gap", bracket_gap}, {"budget_issue", budget_issue},
          {"samples_requested", samples_requested},
          {"rows", rows_json}};
}

EntropyEstimate katok_estimate(const SystemSpec& system, const std::vector<TorusPoint>& samples, double gamma,
                               double delta, int n_lo, int n_hi) {
  if (n_lo < 1 || n_hi < n_lo) throw Error(Errc::invalid_argument, "entropy n range");
  if (!(gamma > 0.0 && 2.0 * gamma <= 0.25)) throw Error(Errc::invalid_argument, "gamma must lie in (0, 1/8]");
  EntropyEstimate est;
  est.gamma = gamma;
  est.delta = delta;
  if (!(delta >= 0.0 && delta < 1.0)) throw Error(Errc::invalid_argument, "delta must lie in [0, 1)");

  // Neighbour lists only shrink with n, so an overflow shows at n_lo. Halve
  // the sample prefix until they fit: a slowly separating map has few Bowen
  // balls and stays unsaturated on the thinner sample.
  std::size_t used = samples.size();
  std::unique_ptr<OrbitTable> table;
  Neighbours wide;
  while (true) {
    table = std::make_unique<OrbitTable>(system, std::vector<TorusPoint>(samples.begin(), samples.begin() + used), n_hi);
    try {
      wide = grid_neighbours(*table, n_lo, 2.0 * gamma);
      break;
    } catch (const Error& e) {
      if (e.code() != Errc::sample_budget || used / 2 < kMinThinnedSamples) throw;
      used /= 2;
    }
  }
  est.samples = static_cast<long>(used);
  est.samples_requested = static_cast<long>(samples.size());
  const int N = table->size();

  std::vector<double> xs, ys;
  for (int n = n_lo; n <= n_hi; ++n) {
    if (n > n_lo) wide = extend(wide, *table, n - 1, 2.0 * gamma);
    EntropyRow row;
    row.n = n;
    row.N_cover = lazy_cover(refine(wide, *table, n, gamma), N, delta);
    row.N_separated = separated_count(wide, *table, n, gamma);
    row.N_cover_double = lazy_cover(wide, N, delta);
    if (row.N_separated < row.N_cover_double) {
      throw Error(Errc::contract_failure, "separated count below the cover at twice the radius, n = " +
                                              std::to_string(n));
    }
    row.saturated = 10 * row.N_cover > est.samples;
    const double gap = std::max(static_cast<double>(row.N_cover) / std::max(1L, row.N_separated),
                                static_cast<double>(row.N_separated) / std::max(1L, row.N_cover));
    est.bracket_gap = std::max(est.bracket_gap, gap);
    if (!row.saturated) {
      xs.push_back(n);
      ys.push_back(std::log(static_cast<double>(row.N_cover)));
    }
    est.rows.push_back(row);
  }
  if (est.bracket_gap > 4.0) {
    est.budget_issue = "cover/separated bracket wider than a factor 4 (" + std::to_string(est.bracket_gap) + ")";
  }
  if (xs.size() < 2) {
    if (est.budget_issue.empty()) est.budget_issue = "fewer than two unsaturated n for the entropy fit";
    est.h_hat = std::numeric_limits<double>::quiet_NaN();
    return est;
  }
  est.fit_lo = static_cast<int>(xs.front());
  est.fit_hi = static_cast<int>(xs.back());
  const double k = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i] / k;
    my += ys[i] / k;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  est.h_hat = sxy / sxx;
  double ss = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (my + est.h_hat * (xs[i] - mx));
    ss += e * e;
  }
  est.fit_residual = std::sqrt(ss / k);
  return est;
}

EntropyEstimate katok_entropy(const SystemSpec& system, const std::vector<TorusPoint>& samples, double gamma,
                              double delta, int n_lo, int n_hi) {
  EntropyEstimate est = katok_estimate(system, samples, gamma, delta, n_lo, n_hi);
  if (!est.budget_issue.empty()) throw Error(Errc::sample_budget, est.budget_issue);
  return est;
}

void write_entropy_csv(const EntropyEstimate& estimate, const std::string& path) {
  CsvWriter csv(path, {"n", "N_cover", "N_separated"});
  for (const EntropyRow& r : estimate.rows) {
    csv << r.n << r.N_cover << r.N_separated;
    csv.end_row();
  }
}

}  // namespace qshadow

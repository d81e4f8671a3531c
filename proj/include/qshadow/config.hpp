#pragma once

// Experiment configuration: flat INI sections of `key = value` lines.
//
//   [system]  name, alpha_rot, nu
//   [blocks]  eps, lambda, mu, lambda_c, mu_c, horizon, k_max, sweep_horizon,
//             spectrum_horizon, points
//   [lyap]    horizon, points
//   [norms]   points, samples, xi, sigma
//   [holder]  pairs, horizon, n_max, safety
//   [shadow]  eta, xi, sigma, tol_su, tol_leaf, max_iter, trials, segments,
//             min_length, max_length, rho, schedule, fraction, sources
//   [close]   period, grid, beta, dedup
//   [spec]    segments, length, delta, horizon, reference_length, cell
//   [entropy] gamma, delta, n_lo, n_hi, samples
//   [qpp]     epsilons, n_lo, n_hi, beta, max_candidates, saturation,
//             reference_length, cell, gamma, k, l, kn_n, kn_beta, kn_samples,
//             trend_n
//   [run]     seed, out, jobs
//
// Only [system] is required; everything else falls back to the defaults below.
// lambda, mu, lambda_c and mu_c come as a group: when absent the rates are read
// off a Lyapunov spectrum at a probe point.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qshadow/oseledets.hpp"

namespace qshadow {

struct ExperimentConfig {
  struct System {
    std::string name = "cat_x_rot";
    Parameters params;
    bool operator==(const System&) const = default;
  } system;

  struct Blocks {
    double eps = 0.01;
    std::optional<BlockParams> rates;
    long horizon = 50;
    int k_max = 64;
    long sweep_horizon = 200;
    long spectrum_horizon = 20000;
    int points = 200;
    bool operator==(const Blocks&) const = default;
  } blocks;

  struct Lyap {
    long horizon = 10000;
    int points = 4;
    bool operator==(const Lyap&) const = default;
  } lyap;

  struct Norms {
    int points = 1000;
    int samples = 10;
    double xi = 0.1;
    /// 0 selects the default cone ratio.
    double sigma = 0.0;
    bool operator==(const Norms&) const = default;
  } norms;

  struct Holder {
    int pairs = 1000;
    long horizon = 50;
    int n_max = 20;
    double safety = 2.0;
    bool operator==(const Holder&) const = default;
  } holder;

  struct Shadow {
    double eta = 0.1;
    double xi = 0.1;
    double sigma = 0.0;
    double tol_su = 1e-10;
    double tol_leaf = 1e-8;
    int max_iter = 200;
    int trials = 100;
    int segments = 40;
    long min_length = 1;
    long max_length = 20;
    double rho = 0.5;
    /// certified | practical | constant (fraction is delta for constant).
    std::string schedule = "practical";
    double fraction = 0.125;
    int sources = 200;
    bool operator==(const Shadow&) const = default;
  } shadow;

  struct Close {
    long period = 5;
    /// One size for every axis or one per axis.
    std::vector<int> grid{1000};
    double beta = 0.05;
    double dedup = 1e-7;
    bool operator==(const Close&) const = default;
  } close;

  struct Spec {
    int segments = 3;
    long length = 8;
    double delta = 0.05;
    long horizon = 40;
    long reference_length = 1000000;
    double cell = 0.05;
    bool operator==(const Spec&) const = default;
  } spec;

  struct Entropy {
    double gamma = 0.05;
    double delta = 0.1;
    int n_lo = 4;
    int n_hi = 16;
    int samples = 100000;
    bool operator==(const Entropy&) const = default;
  } entropy;

  struct Qpp {
    std::vector<double> epsilons{0.2, 0.1, 0.05, 0.025};
    int n_lo = 4;
    int n_hi = 14;
    double beta = 0.05;
    long max_candidates = 200000;
    double saturation = 0.25;
    long reference_length = 2000000;
    double cell = 0.02;
    double gamma = 0.25;
    int k = 1;
    double l = 2.0;
    long kn_n = 8;
    double kn_beta = 0.2;
    int kn_samples = 20000;
    std::vector<long> trend_n{4, 6, 8, 10, 12, 14, 16};
    bool operator==(const Qpp&) const = default;
  } qpp;

  struct Run {
    std::uint64_t seed = 1;
    std::string out;
    int jobs = 1;
    bool operator==(const Run&) const = default;
  } run;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Throws Errc::config naming the first offending key (section.key).
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Every field, numbers with 17 significant digits; parse_config inverts it.
std::string serialize_config(const ExperimentConfig& config);

/// Hex SHA-256 of the serialized config, leaving out run.out and run.jobs
/// (they do not change results).
std::string config_hash(const ExperimentConfig& config);
std::string sha256_hex(const std::string& bytes);

/// Seed of the named substream of a root seed; independent of call order.
std::uint64_t substream_seed(std::uint64_t root, const std::string& name);

}  // namespace qshadow

#include "qshadow/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <regex>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "qshadow/csv.hpp"

namespace qshadow {
namespace {

namespace pt = boost::property_tree;

[[noreturn]] void fail(const std::string& key, const std::string& what) {
  throw Error(Errc::config, key + ": " + what);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) fail(key, "not a number: '" + t + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) fail(key, "must be finite");
  }
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) items.push_back(trim(item));
  return items;
}

// Interval with optionally open ends, printed in the usual bracket notation.
struct Range {
  double lo, hi;
  bool lo_open = false, hi_open = false;
  bool contains(double v) const {
    return (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
  }
  std::string str() const {
    return std::string(lo_open ? "(" : "[") + format_number(lo) + ", " + format_number(hi) + (hi_open ? ")" : "]");
  }
};

constexpr double kBig = 1e18;

Range closed(double lo, double hi) { return {lo, hi}; }
Range open_lo(double lo, double hi) { return {lo, hi, true, false}; }
Range open_both(double lo, double hi) { return {lo, hi, true, true}; }
Range half_open(double lo, double hi) { return {lo, hi, false, true}; }

struct Field {
  std::string key;
  std::function<void(const std::string& key, const std::string& value)> read;
  std::function<std::optional<std::string>()> write;
};

struct Section {
  std::string name;
  std::vector<Field> fields;
};

void check_range(const std::string& key, double v, const Range& r) {
  if (!r.contains(v)) fail(key, "value " + format_number(v) + " outside " + r.str());
}

Field real(const std::string& key, double& ref, Range r) {
  return {key,
          [&ref, r](const std::string& k, const std::string& v) {
            ref = parse_number<double>(k, v);
            check_range(k, ref, r);
          },
          [&ref] { return std::optional<std::string>(format_number(ref)); }};
}

template <typename T>
Field integer(const std::string& key, T& ref, Range r) {
  return {key,
          [&ref, r](const std::string& k, const std::string& v) {
            ref = parse_number<T>(k, v);
            check_range(k, static_cast<double>(ref), r);
          },
          [&ref] { return std::optional<std::string>(std::to_string(ref)); }};
}

Field text(const std::string& key, std::string& ref, std::vector<std::string> allowed) {
  return {key,
          [&ref, allowed](const std::string& k, const std::string& v) {
            ref = trim(v);
            if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), ref) == allowed.end()) {
              std::string opts;
              for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
              fail(k, "'" + ref + "' is not one of " + opts);
            }
          },
          [&ref] { return std::optional<std::string>(ref); }};
}

Field optional_real(const std::string& key, std::optional<double>& ref, Range r) {
  return {key,
          [&ref, r](const std::string& k, const std::string& v) {
            ref = parse_number<double>(k, v);
            check_range(k, *ref, r);
          },
          [&ref] { return ref ? std::optional<std::string>(format_number(*ref)) : std::nullopt; }};
}

Field real_list(const std::string& key, std::vector<double>& ref, Range r) {
  return {key,
          [&ref, r](const std::string& k, const std::string& v) {
            ref.clear();
            for (const auto& item : split_list(v)) {
              ref.push_back(parse_number<double>(k, item));
              check_range(k, ref.back(), r);
            }
            if (ref.empty()) fail(k, "empty list");
          },
          [&ref] {
            std::string s;
            for (double x : ref) s += (s.empty() ? "" : ", ") + format_number(x);
            return std::optional<std::string>(s);
          }};
}

Field int_list(const std::string& key, std::vector<int>& ref, Range r) {
  return {key,
          [&ref, r](const std::string& k, const std::string& v) {
            ref.clear();
            for (const auto& item : split_list(v)) {
              ref.push_back(parse_number<int>(k, item));
              check_range(k, static_cast<double>(ref.back()), r);
            }
            if (ref.empty()) fail(k, "empty list");
          },
          [&ref] {
            std::string s;
            for (int x : ref) s += (s.empty() ? "" : ", ") + std::to_string(x);
            return std::optional<std::string>(s);
          }};
}

Field long_list(const std::string& key, std::vector<long>& ref, Range r) {
  return {key,
          [&ref, r](const std::string& k, const std::string& v) {
            ref.clear();
            for (const auto& item : split_list(v)) {
              ref.push_back(parse_number<long>(k, item));
              check_range(k, static_cast<double>(ref.back()), r);
            }
            if (ref.size() < 2) fail(k, "needs at least two entries");
            for (std::size_t i = 1; i < ref.size(); ++i)
              if (ref[i] <= ref[i - 1]) fail(k, "entries must increase");
          },
          [&ref] {
            std::string s;
            for (long x : ref) s += (s.empty() ? "" : ", ") + std::to_string(x);
            return std::optional<std::string>(s);
          }};
}

// Staging for fields that are optional or keyed into maps.
struct Staging {
  std::optional<double> alpha_rot, nu;
  std::optional<double> lambda, mu, lambda_c, mu_c;
};

std::vector<Section> bind(ExperimentConfig& c, Staging& st) {
  auto& b = c.blocks;
  auto& sh = c.shadow;
  auto& q = c.qpp;
  return {
      {"system",
       {text("name", c.system.name, registry_names()), optional_real("alpha_rot", st.alpha_rot, closed(-kBig, kBig)),
        optional_real("nu", st.nu, closed(-0.2, 0.2))}},
      {"blocks",
       {real("eps", b.eps, open_both(0.0, 0.1)), optional_real("lambda", st.lambda, open_lo(0.0, 100.0)),
        optional_real("mu", st.mu, open_lo(0.0, 100.0)), optional_real("lambda_c", st.lambda_c, closed(0.0, 100.0)),
        optional_real("mu_c", st.mu_c, closed(0.0, 100.0)), integer("horizon", b.horizon, closed(1, 1e6)),
        integer("k_max", b.k_max, closed(1, 1000)), integer("sweep_horizon", b.sweep_horizon, closed(0, 1e6)),
        integer("spectrum_horizon", b.spectrum_horizon, closed(10, 1e8)),
        integer("points", b.points, closed(1, 1e7))}},
      {"lyap", {integer("horizon", c.lyap.horizon, closed(1, 1e8)), integer("points", c.lyap.points, closed(1, 1e6))}},
      {"norms",
       {integer("points", c.norms.points, closed(1, 1e7)), integer("samples", c.norms.samples, closed(1, 1e5)),
        real("xi", c.norms.xi, open_lo(0.0, 1.0)), real("sigma", c.norms.sigma, half_open(0.0, 1.0))}},
      {"holder",
       {integer("pairs", c.holder.pairs, closed(1, 1e7)), integer("horizon", c.holder.horizon, closed(1, 1e5)),
        integer("n_max", c.holder.n_max, closed(1, 1000)), real("safety", c.holder.safety, closed(1.0, 1e3))}},
      {"shadow",
       {real("eta", sh.eta, open_lo(0.0, 1.0)), real("xi", sh.xi, open_lo(0.0, 1.0)),
        real("sigma", sh.sigma, half_open(0.0, 1.0)), real("tol_su", sh.tol_su, open_lo(0.0, 1e-2)),
        real("tol_leaf", sh.tol_leaf, open_lo(0.0, 1e-2)), integer("max_iter", sh.max_iter, closed(1, 1e6)),
        integer("trials", sh.trials, closed(1, 1e7)), integer("segments", sh.segments, closed(1, 1e6)),
        integer("min_length", sh.min_length, closed(1, 1e6)), integer("max_length", sh.max_length, closed(1, 1e6)),
        real("rho", sh.rho, closed(0.0, 1.0)), text("schedule", sh.schedule, {"certified", "practical", "constant"}),
        real("fraction", sh.fraction, open_lo(0.0, 1.0)), integer("sources", sh.sources, closed(1, 1e6))}},
      {"close",
       {integer("period", c.close.period, closed(1, 1000)), int_list("grid", c.close.grid, closed(1, 1e5)),
        real("beta", c.close.beta, open_lo(0.0, 0.5)), real("dedup", c.close.dedup, open_lo(0.0, 1e-2))}},
      {"spec",
       {integer("segments", c.spec.segments, closed(1, 100)), integer("length", c.spec.length, closed(1, 1e5)),
        real("delta", c.spec.delta, open_lo(0.0, 0.5)), integer("horizon", c.spec.horizon, closed(1, 1e6)),
        integer("reference_length", c.spec.reference_length, closed(1, 1e9)),
        real("cell", c.spec.cell, open_lo(0.0, 0.5))}},
      {"entropy",
       {real("gamma", c.entropy.gamma, open_lo(0.0, 0.125)), real("delta", c.entropy.delta, half_open(0.0, 1.0)),
        integer("n_lo", c.entropy.n_lo, closed(1, 1e4)), integer("n_hi", c.entropy.n_hi, closed(1, 1e4)),
        integer("samples", c.entropy.samples, closed(2, 1e8))}},
      {"qpp",
       {real_list("epsilons", q.epsilons, open_lo(0.0, 0.5)), integer("n_lo", q.n_lo, closed(1, 1e4)),
        integer("n_hi", q.n_hi, closed(1, 1e4)), real("beta", q.beta, open_lo(0.0, 0.5)),
        integer("max_candidates", q.max_candidates, closed(1, 1e9)),
        real("saturation", q.saturation, open_lo(0.0, 1.0)),
        integer("reference_length", q.reference_length, closed(1, 1e9)), real("cell", q.cell, open_lo(0.0, 0.5)),
        real("gamma", q.gamma, open_lo(0.0, 1.0)), integer("k", q.k, closed(1, 1000)),
        real("l", q.l, open_lo(0.0, 1e6)), integer("kn_n", q.kn_n, closed(1, 1e6)),
        real("kn_beta", q.kn_beta, open_lo(0.0, 1.0)), integer("kn_samples", q.kn_samples, closed(1, 1e8)),
        long_list("trend_n", q.trend_n, closed(1, 1e6))}},
      {"run",
       {integer("seed", c.run.seed, closed(0, static_cast<double>(std::numeric_limits<std::uint64_t>::max()))),
        text("out", c.run.out, {}), integer("jobs", c.run.jobs, closed(1, 1024))}},
  };
}

std::size_t registry_dimension(const std::string& name) {
  if (name == "cat") return 2;
  if (name == "rotation") return 1;
  return 3;
}

void check_order(const std::string& key, double lo, double hi, const std::string& lo_key) {
  if (hi < lo) fail(key, "must not be below " + lo_key);
}

void finish(ExperimentConfig& c, const Staging& st) {
  if (st.alpha_rot) c.system.params["alpha_rot"] = *st.alpha_rot;
  if (st.nu) c.system.params["nu"] = *st.nu;
  if (st.nu && c.system.name != "cat_x_rot_perturbed") fail("system.nu", "only cat_x_rot_perturbed takes nu");
  if (st.alpha_rot && c.system.name == "cat") fail("system.alpha_rot", "cat takes no parameters");

  const std::optional<double>* group[] = {&st.lambda, &st.mu, &st.lambda_c, &st.mu_c};
  const char* names[] = {"blocks.lambda", "blocks.mu", "blocks.lambda_c", "blocks.mu_c"};
  const bool any = std::any_of(std::begin(group), std::end(group), [](auto* o) { return o->has_value(); });
  if (any) {
    for (int i = 0; i < 4; ++i)
      if (!group[i]->has_value()) fail(names[i], "required together with the other block rates");
    BlockParams p;
    p.lambda = *st.lambda;
    p.mu = *st.mu;
    p.lambda_c = *st.lambda_c;
    p.mu_c = *st.mu_c;
    p.eps = c.blocks.eps;
    try {
      p.validate();
    } catch (const Error& e) {
      const std::string what = e.what();
      fail(what.find("eps") != std::string::npos ? "blocks.eps" : "blocks.lambda_c", what);
    }
    c.blocks.rates = p;
  } else {
    c.blocks.rates.reset();
  }

  if (c.close.grid.size() != 1 && c.close.grid.size() != registry_dimension(c.system.name))
    fail("close.grid", "needs one size or one per axis");
  check_order("shadow.max_length", c.shadow.min_length, c.shadow.max_length, "shadow.min_length");
  check_order("entropy.n_hi", c.entropy.n_lo, c.entropy.n_hi, "entropy.n_lo");
  check_order("qpp.n_hi", c.qpp.n_lo, c.qpp.n_hi, "qpp.n_lo");
  if (c.qpp.n_hi == c.qpp.n_lo) fail("qpp.n_hi", "the rate fit needs at least two n");
}

}  // namespace

ExperimentConfig parse_config(const std::string& input) {
  pt::ptree tree;
  try {
    std::istringstream in(input);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(Errc::config, "line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig c;
  Staging st;
  const auto sections = bind(c, st);
  // The INI reader drops sections without keys; catch misspelled ones anyway.
  {
    std::istringstream in(input);
    const std::regex header(R"(^\s*\[([^\]]*)\]\s*$)");
    std::smatch m;
    for (std::string line; std::getline(in, line);) {
      if (!std::regex_match(line, m, header)) continue;
      const std::string name = m[1];
      if (std::none_of(sections.begin(), sections.end(), [&](const Section& s) { return s.name == name; }))
        fail(name, "unknown section");
    }
  }
  for (const auto& [name, node] : tree) {
    const auto sec = std::find_if(sections.begin(), sections.end(), [&](const Section& s) { return s.name == name; });
    if (node.empty() || sec == sections.end()) fail(name, node.empty() ? "key outside any section" : "unknown section");
    for (const auto& [key, value] : node) {
      const std::string full = name + "." + key;
      const auto f = std::find_if(sec->fields.begin(), sec->fields.end(), [&](const Field& x) { return x.key == key; });
      if (f == sec->fields.end()) fail(full, "unknown key");
      f->read(full, value.data());
    }
  }
  if (tree.find("system") == tree.not_found()) fail("system", "missing required section");
  if (tree.get_child("system").find("name") == tree.get_child("system").not_found())
    fail("system.name", "missing required key");
  finish(c, st);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::config, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  Staging st;
  if (auto it = c.system.params.find("alpha_rot"); it != c.system.params.end()) st.alpha_rot = it->second;
  if (auto it = c.system.params.find("nu"); it != c.system.params.end()) st.nu = it->second;
  if (c.blocks.rates) {
    st.lambda = c.blocks.rates->lambda;
    st.mu = c.blocks.rates->mu;
    st.lambda_c = c.blocks.rates->lambda_c;
    st.mu_c = c.blocks.rates->mu_c;
  }
  std::ostringstream out;
  bool first = true;
  for (const Section& sec : bind(c, st)) {
    out << (first ? "" : "\n") << '[' << sec.name << "]\n";
    first = false;
    for (const Field& f : sec.fields)
      if (auto v = f.write()) out << f.key << " = " << *v << '\n';
  }
  return out.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(Errc::precondition, "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[digest[i] >> 4];
    s += hex[digest[i] & 15];
  }
  return s;
}

std::string config_hash(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.run.out.clear();
  c.run.jobs = 1;
  return sha256_hex(serialize_config(c));
}

std::uint64_t substream_seed(std::uint64_t root, const std::string& name) {
  const std::string h = sha256_hex(std::to_string(root) + "/" + name);
  std::uint64_t v = 0;
  std::from_chars(h.data(), h.data() + 16, v, 16);
  return v;
}

}  // namespace qshadow

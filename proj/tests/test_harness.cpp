#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "qshadow/harness.hpp"

using namespace qshadow;
namespace fs = std::filesystem;

namespace {

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config);
    return e.what();
  }
  FAIL("config accepted: " << text);
  return {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("qshadow_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig tiny(const std::string& system, const std::string& out) {
  ExperimentConfig c = parse_config("[system]\nname = " + system + "\n");
  c.lyap = {2000, 2};
  c.blocks.points = 10;
  c.norms.points = 5;
  c.holder.pairs = 50;
  c.shadow.trials = 3;
  c.shadow.segments = 6;
  c.close.grid = {30};
  c.spec.reference_length = 100000;
  c.entropy = {0.125, 0.1, 1, 4, 3000};
  c.qpp.epsilons = {0.2, 0.1};
  c.qpp.n_lo = 2;
  c.qpp.n_hi = 5;
  c.qpp.reference_length = 100000;
  c.qpp.kn_samples = 5000;
  c.qpp.trend_n = {4, 8, 16};
  c.run.out = out;
  return c;
}

}  // namespace

TEST_CASE("minimal config fills documented defaults") {
  const ExperimentConfig c = parse_config("[system]\nname = cat\n");
  ExperimentConfig expect;
  expect.system.name = "cat";
  CHECK(c == expect);
  CHECK(c.blocks.eps == 0.01);
  CHECK_FALSE(c.blocks.rates.has_value());
  CHECK(c.shadow.eta == 0.1);
  CHECK(c.shadow.tol_su == 1e-10);
  CHECK(c.entropy.n_lo == 4);
  CHECK(c.entropy.n_hi == 16);
  CHECK(c.entropy.samples == 100000);
  CHECK(c.run.seed == 1);
}

TEST_CASE("serialize then parse is the identity") {
  ExperimentConfig c = parse_config(R"(
[system]
name = cat_x_rot_perturbed
alpha_rot = 0.0031415926535897933
nu = 0.04

[blocks]
eps = 0.02
lambda = 0.9
mu = 0.9
lambda_c = 0.001
mu_c = 0.002

[shadow]
schedule = constant
fraction = 1e-6

[close]
grid = 10, 20, 30

[qpp]
epsilons = 0.3, 0.15
trend_n = 3, 5, 9

[run]
seed = 18446744073709551615
out = somewhere
jobs = 4
)");
  CHECK(parse_config(serialize_config(c)) == c);
  CHECK(serialize_config(parse_config(serialize_config(c))) == serialize_config(c));
  c.shadow.rho = 0.1 + 0.2;
  c.norms.xi = 1.0 / 3.0;
  CHECK(parse_config(serialize_config(c)) == c);
}

TEST_CASE("diagnostics name the offending key") {
  CHECK(config_error("[system]\nname = cat\n[shadow]\ncolour = red\n").find("shadow.colour") != std::string::npos);
  CHECK(config_error("[blocks]\neps = 0.01\n").find("system") != std::string::npos);
  CHECK(config_error("[system]\nname = cat\n[oops]\n").find("oops") != std::string::npos);
  CHECK(config_error("[system]\nname = klein\n").find("system.name") != std::string::npos);
  CHECK(config_error("[system]\nname = cat\n[shadow]\neta = 0\n").find("shadow.eta") != std::string::npos);
  CHECK(config_error("[system]\nname = cat\n[shadow]\nmax_iter = 2.5\n").find("shadow.max_iter") != std::string::npos);
  CHECK(config_error("[system]\nname = cat\n[entropy]\ngamma = 0.2\n").find("entropy.gamma") != std::string::npos);
  CHECK(config_error("[system]\nname = cat\nnu = 0.1\n").find("system.nu") != std::string::npos);
  CHECK(config_error("[system]\nname = cat\n[blocks]\nlambda = 1\n").find("blocks.") != std::string::npos);
  CHECK(config_error("[system]\nname = cat\n[close]\ngrid = 3, 4, 5\n").find("close.grid") != std::string::npos);
  CHECK(config_error("[system]\nname = cat\n[qpp]\nn_lo = 9\nn_hi = 9\n").find("qpp.n_hi") != std::string::npos);
}

TEST_CASE("epsilon that is not small against the rates names the bound") {
  const std::string msg = config_error(
      "[system]\nname = cat\n[blocks]\neps = 0.09\nlambda = 0.1\nmu = 0.1\nlambda_c = 0.001\nmu_c = 0.001\n");
  CHECK(msg.find("blocks.eps") != std::string::npos);
}

TEST_CASE("config hash ignores output location and worker count only") {
  ExperimentConfig a;
  ExperimentConfig b = a;
  b.run.out = "elsewhere";
  b.run.jobs = 8;
  CHECK(config_hash(a) == config_hash(b));
  b.run.seed = 2;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(config_hash(a).size() == 64);
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("substreams are named, stable and distinct") {
  CHECK(substream_seed(1, "shadow/trial/0") == substream_seed(1, "shadow/trial/0"));
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 200; ++i) seen.insert(substream_seed(1, "shadow/trial/" + std::to_string(i)));
  CHECK(seen.size() == 200);
  CHECK(substream_seed(1, "lyap") != substream_seed(2, "lyap"));
}

TEST_CASE("unknown subcommand is a usage error") {
  CHECK_THROWS_AS(run("everything", ExperimentConfig{}), Error);
  CHECK(subcommands().back() == "all");
  CHECK(subcommands().size() == 11);
}

TEST_CASE("output root falls back to the environment") {
  ExperimentConfig c;
  c.run.out = "explicit";
  CHECK(resolve_output_dir(c) == "explicit");
  c.run.out.clear();
  setenv(kOutputRootEnv, "/tmp/from_env", 1);
  CHECK(resolve_output_dir(c) == "/tmp/from_env");
  unsetenv(kOutputRootEnv);
  CHECK(resolve_output_dir(c) == "results");
}

TEST_CASE("lyap on the cat map writes the hyperbolic pair") {
  const fs::path dir = scratch("lyap");
  ExperimentConfig c = tiny("cat", dir.string());
  c.lyap = {10000, 1};
  const RunReport r = run("lyap", c);
  CHECK(r.exit_code == ExitCode::pass);
  std::ifstream in(dir / "exponents.csv");
  std::string header, row0, row1;
  std::getline(in, header);
  std::getline(in, row0);
  std::getline(in, row1);
  CHECK(header == "point,index,exponent");
  const double h = std::log((3.0 + std::sqrt(5.0)) / 2.0);
  CHECK(std::stod(row0.substr(4)) == doctest::Approx(h).epsilon(1e-6));
  CHECK(std::stod(row1.substr(4)) == doctest::Approx(-h).epsilon(1e-6));
}

TEST_CASE("shadow without perturbation converges trivially") {
  const fs::path dir = scratch("rho0");
  ExperimentConfig c = tiny("cat", dir.string());
  c.shadow.rho = 0.0;
  const RunReport r = run("shadow", c);
  REQUIRE(r.stages.size() == 1);
  CHECK(r.stages[0].pass);
  CHECK(r.stages[0].summary["converged"] == 3);
  CHECK(fs::exists(dir / "manifest_shadow.json"));
}

TEST_CASE("every artifact carries the config hash and is listed in the manifest") {
  const fs::path dir = scratch("manifest");
  const ExperimentConfig c = tiny("cat_x_rot", dir.string());
  const RunReport r = run("all", c);
  CHECK(r.exit_code == ExitCode::pass);
  for (const auto& s : r.stages) CHECK_MESSAGE(s.pass, s.stage << ": " << s.note);
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest_all.json"));
  CHECK(manifest["config_hash"] == config_hash(c));
  CHECK(manifest["seed"] == c.run.seed);
  CHECK(manifest["versions"].contains("eigen"));
  CHECK(parse_config(manifest["config"].get<std::string>()) == c);
  std::set<std::string> listed;
  for (const auto& a : manifest["artifacts"]) {
    listed.insert(a["path"].get<std::string>());
    CHECK(a["config_hash"] == config_hash(c));
    CHECK(a["sha256"] == sha256_hex(slurp(dir / a["path"].get<std::string>())));
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("manifest_", 0) == 0) continue;
    CHECK_MESSAGE(listed.count(name), name);
    if (entry.path().extension() == ".json") {
      CHECK(nlohmann::json::parse(slurp(entry.path()))["config_hash"] == config_hash(c));
    }
  }
}

TEST_CASE("rotation skips the hyperbolic stages") {
  const fs::path dir = scratch("rotation");
  const RunReport r = run("holder", tiny("rotation", dir.string()));
  CHECK(r.stages[0].skipped);
  CHECK(r.exit_code == ExitCode::pass);
}

TEST_CASE("worker count does not change results") {
  const fs::path a = scratch("jobs1"), b = scratch("jobs3");
  ExperimentConfig c = tiny("cat_x_rot", a.string());
  run("norms", c);
  c.run.out = b.string();
  c.run.jobs = 3;
  run("norms", c);
  CHECK(slurp(a / "norms.csv") == slurp(b / "norms.csv"));
  CHECK(slurp(a / "norms.json") == slurp(b / "norms.json"));
}

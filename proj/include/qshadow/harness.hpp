#pragma once

// Experiment orchestration: one stage per module, each writing its artifacts
// and a manifest into the output directory.

#include <string>
#include <vector>

#include <json.hpp>

#include "qshadow/config.hpp"

namespace qshadow {

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "QSHADOW_OUT";

enum class ExitCode { pass = 0, usage = 1, contract_fail = 2 };

struct StageOutcome {
  std::string stage;
  bool pass = false;
  bool skipped = false;
  std::string note;
  std::vector<std::string> artifacts;
  double seconds = 0.0;
  nlohmann::json summary = nlohmann::json::object();
};

struct RunReport {
  std::string subcommand;
  std::string output_dir;
  std::string config_hash;
  std::vector<StageOutcome> stages;
  ExitCode exit_code = ExitCode::pass;
  nlohmann::json to_json() const;
};

/// lyap, blocks, norms, holder, shadow, close, spec, entropy, qpp, theorem-c
/// and all (every stage in that order).
const std::vector<std::string>& subcommands();

/// run.out when set, else $QSHADOW_OUT, else "results".
std::string resolve_output_dir(const ExperimentConfig& config);

/// Runs the subcommand and writes manifest.json next to the artifacts.
/// Throws Errc::config for an unknown subcommand.
RunReport run(const std::string& subcommand, const ExperimentConfig& config);

}  // namespace qshadow

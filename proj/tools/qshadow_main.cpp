// qshadow run <stage> [--config PATH] [--seed N] [--out DIR] [--jobs N]
// qshadow config [--config PATH]
//
// Exit status: 0 when every stage passes, 2 on a failed contract, 1 on usage
// or configuration errors.

#include <iostream>

#include <CLI11.hpp>

#include "qshadow/harness.hpp"

namespace {

int code(qshadow::ExitCode c) { return static_cast<int>(c); }

}  // namespace

int main(int argc, char** argv) {
  using qshadow::ExitCode;

  CLI::App app{"Quasi-shadowing experiments on flat tori"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> jobs;
  std::string stage;

  CLI::App* run = app.add_subcommand("run", "Run one stage, or all of them");
  run->add_option("stage", stage, "Stage name")->required()->check(CLI::IsMember(qshadow::subcommands()));
  run->add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override run.seed");
  run->add_option("--out", out, "Override run.out (default: $" + std::string(qshadow::kOutputRootEnv) + " or results)");
  run->add_option("--jobs", jobs, "Worker threads")->check(CLI::Range(1, 1024));

  CLI::App* show = app.add_subcommand("config", "Print the effective configuration");
  show->add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : code(ExitCode::usage);
  }

  try {
    qshadow::ExperimentConfig cfg = config_path.empty() ? qshadow::ExperimentConfig{} : qshadow::load_config(config_path);
    if (seed) cfg.run.seed = *seed;
    if (out) cfg.run.out = *out;
    if (jobs) cfg.run.jobs = *jobs;

    if (show->parsed()) {
      std::cout << qshadow::serialize_config(cfg);
      return code(ExitCode::pass);
    }

    const qshadow::RunReport report = qshadow::run(stage, cfg);
    for (const auto& s : report.stages) {
      std::cout << (s.skipped ? "SKIP" : s.pass ? "PASS" : "FAIL") << "  " << s.stage << "  (" << s.seconds << " s)";
      if (!s.note.empty()) std::cout << "  " << s.note;
      std::cout << '\n';
    }
    std::cout << "manifest: " << report.output_dir << "/manifest_" << stage << ".json\n";
    return code(report.exit_code);
  } catch (const qshadow::Error& e) {
    std::cerr << "qshadow: " << e.what() << '\n';
    return code(e.code() == qshadow::Errc::config ? ExitCode::usage : ExitCode::contract_fail);
  }
}

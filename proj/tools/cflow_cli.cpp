#include "cflow/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Curvature flows on graph hypersurfaces: batch experiments from JSON configs"};
  std::string command, config_path, out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> resolution;
  app.add_option("command", command, "Command to run when no config is given, or a check against the config")
      ->check(CLI::IsMember(std::vector<std::string>(cflow::detail::commands().begin(), cflow::detail::commands().end())));
  app.add_option("--config", config_path, "Experiment config (JSON)");
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--resolution", resolution, "Override the grid resolution (all axes)");
  app.footer("Threads: CFLOW_THREADS (default 1). Exit codes: 0 ok, 1 check failed, 2 MaxSteps, "
             "3 admissibility/spacelike loss, 4 IMCF floor, 5 numerical, 64 config, 74 IO.");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cflow::exit_code::config;
  }

  cflow::ExperimentConfig cfg;
  try {
    if (!config_path.empty()) {
      cfg = cflow::load_config(config_path);
      if (!command.empty() && command != cfg.command)
        cflow::fail(cflow::ErrorCode::ConfigError,
                    "command '" + command + "' does not match config command '" + cfg.command + "'");
    } else if (!command.empty()) {
      cfg = cflow::parse_config(R"({"schema_version": 1, "command": ")" + command + R"("})", "<defaults>");
    } else {
      cflow::fail(cflow::ErrorCode::ConfigError, "give --config PATH or a command");
    }
  } catch (const cflow::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cflow::exit_code_for(e.code());
  }
  cflow::RunOptions opt;
  opt.out_dir = out_dir;
  opt.seed = seed;
  opt.resolution = resolution;
  const int code = cflow::run_command_safe(cfg, opt, std::cerr);
  std::cout << cfg.command << ": exit " << code << " (" << opt.out_dir.string() << ")\n";
  return code;
}

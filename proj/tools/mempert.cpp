// mempert <scatter|sweep|track|evolve|verify> --config <file.json> [--seed N] [--out DIR]

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mempert/cli.hpp"
#include "mempert/error.hpp"
#include "mempert/kernels.hpp"

namespace {

int code(mempert::cli::ExitCode c) { return static_cast<int>(c); }

}  // namespace

int main(int argc, char** argv) {
  using mempert::cli::ExitCode;

  CLI::App app{"Training-data sensitivity estimates from the memory-perturbation equation"};
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  app.add_option("command", command, "scatter | sweep | track | evolve | verify")
      ->required()
      ->check(CLI::IsMember({"scatter", "sweep", "track", "evolve", "verify"}));
  app.add_option("--config", config_path, "experiment configuration (JSON)")->required();
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--out", out, "output directory (overrides output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return code(ExitCode::kConfigError);
  }

  try {
    mempert::cli::ExperimentConfig config = mempert::cli::load_config(config_path);
    mempert::cli::apply_overrides(config, seed, out);
    std::clog << "mempert " << command << " (kernels: "
              << mempert::kernels::isa_name(mempert::kernels::active_isa()) << ")\n";
    return code(mempert::cli::run_command(command, config, std::clog));
  } catch (const mempert::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return code(mempert::cli::exit_code_for(e));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return code(ExitCode::kNumericalFailure);
  }
}

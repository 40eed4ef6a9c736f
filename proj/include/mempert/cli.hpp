#pragma once
// Experiment configuration and the command runner behind the mempert tool.

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mempert/data.hpp"
#include "mempert/error.hpp"
#include "mempert/models.hpp"
#include "mempert/mpe.hpp"
#include "mempert/optim.hpp"
#include "mempert/oracle.hpp"
#include "mempert/predict.hpp"

namespace mempert::cli {

enum class ExitCode : int {
  kSuccess = 0,
  kConfigError = 1,
  kVerifyFailure = 2,
  kNumericalFailure = 3,
};

struct ModelConfig {
  std::optional<Architecture> architecture;  // default: convex model for the task
  std::vector<Index> hidden = {32, 16};
  double delta = 1.0;
  bool intercept = true;
};

struct TrainerConfig {
  Algorithm algorithm = Algorithm::kNewton;
  Hyper hyper;
  bool cosine = false;
  double lr = 1.0;
  double lr_min = 0.0;
  int epochs = 20;
};

struct EstimatorConfig {
  // "auto" uses the trainer's own preconditioner; "identity", "full_hessian"
  // and "diag_ggn" build one at the final iterate.
  std::string view = "auto";
  bool allow_mismatch = false;
  EvalMode eval;
  bool rho_from_trainer = false;
  GroupMode group_mode = GroupMode::kDiag;
  Index group_cap = kDefaultGroupCap;
  SubsetMode loco_mode = SubsetMode::kSingleGradient;
};

struct ExperimentSettings {
  int removals = 50;   // scatter: groups removed and retrained
  int group_size = 1;  // scatter: examples per group
  bool loco = false;   // scatter: also emit loco.csv (classification)
  std::vector<double> deltas;  // sweep grid; empty = default log grid
  double delta_min = 1e-1;
  double delta_max = 1e2;
  int delta_points = 10;
  std::vector<Index> evolve_examples;  // empty = every training example
  RetrainConfig retrain;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = ".";
  DataConfig data;
  bool data_seed_set = false;
  ModelConfig model;
  TrainerConfig trainer;
  EstimatorConfig estimator;
  ExperimentSettings experiment;
};

// Throws Error(kConfigError) naming the offending field path.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

// Command-line overrides applied after parsing.
void apply_overrides(ExperimentConfig& config, std::optional<std::uint64_t> seed,
                     std::optional<std::string> output_dir);

// Runs scatter | sweep | track | evolve | verify and writes its artifacts into
// config.output_dir. Errors propagate as mempert::Error.
ExitCode run_command(std::string_view command, const ExperimentConfig& config, std::ostream& log);

// Maps a library error onto the process exit code.
ExitCode exit_code_for(const Error& error);

// Verification suite used by `verify`; returns the JSON document written to
// verify.json.
nlohmann::json run_verification(const ExperimentConfig& config);

// Pieces shared by the commands.
struct Prepared {
  Split split;
  ModelSpec model;
};
Prepared prepare_experiment(const ExperimentConfig& config, double delta);
TrainerState train(const ExperimentConfig& config, const ModelSpec& model, const Dataset& train,
                   const std::function<void(const TrainerState&, int epoch)>& on_epoch = {});
PreconditionerView estimator_view(const ExperimentConfig& config, const ModelSpec& model,
                                  const Dataset& train, const TrainerState& trainer);
std::vector<double> sweep_grid(const ExperimentSettings& settings);

}  // namespace mempert::cli

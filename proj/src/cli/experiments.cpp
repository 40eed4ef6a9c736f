#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mempert/cli.hpp"
#include "mempert/error.hpp"
#include "mempert/format.hpp"

namespace mempert::cli {
namespace {

using nlohmann::json;

enum SeedStream : std::uint64_t { kTrainerStream = 1, kGroupStream = 2, kEvalStream = 3 };

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  std::mt19937_64 gen(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(stream)));
  return gen();
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out << content;
  if (!out) fail(ErrorCode::kIoError, "write failed for " + path.string());
}

std::filesystem::path output_path(const ExperimentConfig& config, const std::string& name) {
  return std::filesystem::path(config.output_dir) / name;
}

json number_or_null(double value) { return std::isfinite(value) ? json(value) : json(nullptr); }

std::optional<double> correlation(std::span<const double> xs, std::span<const double> ys,
                                  CorrelationKind kind) {
  if (xs.size() < 3) return std::nullopt;
  try {
    return rank_correlation(xs, ys, kind);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCorrelationUndefined) return std::nullopt;
    throw;
  }
}

json optional_json(const std::optional<double>& value) {
  return value ? number_or_null(*value) : json(nullptr);
}

double rho_for(const ExperimentConfig& config, const TrainerState& trainer) {
  return config.estimator.rho_from_trainer ? trainer.last_rate : 1.0;
}

std::vector<std::vector<Index>> removal_groups(const ExperimentConfig& config, Index n) {
  const auto& x = config.experiment;
  const Index needed = static_cast<Index>(x.removals) * x.group_size;
  if (needed > n) {
    fail(ErrorCode::kConfigError, "experiment.removals: " + std::to_string(x.removals) + " groups of " +
                                      std::to_string(x.group_size) + " exceed " + std::to_string(n) +
                                      " training examples");
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(derive_seed(config.seed, kGroupStream));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Index>> groups;
  for (int g = 0; g < x.removals; ++g) {
    auto first = order.begin() + static_cast<std::ptrdiff_t>(g) * x.group_size;
    std::vector<Index> group(first, first + x.group_size);
    std::sort(group.begin(), group.end());
    groups.push_back(std::move(group));
  }
  return groups;
}

ExitCode run_scatter(const ExperimentConfig& config, std::ostream& log) {
  const Prepared prep = prepare_experiment(config, config.model.delta);
  const Dataset& data = prep.split.train;
  const TrainerState trainer = train(config, prep.model, data);
  const PreconditionerView view = estimator_view(config, prep.model, data, trainer);
  const double rho = rho_for(config, trainer);

  std::ostringstream sens;
  sens << sensitivity_csv_header() << "\n";
  for (SensitivityRecord r : output_deviations(prep.model, trainer.theta, view, data)) {
    r.v *= rho;
    r.output_shift *= rho;
    r.deviation *= rho;
    r.score *= rho;
    sens << sensitivity_csv_row(r) << "\n";
  }
  write_text(output_path(config, "sensitivity.csv"), sens.str());

  const auto groups = removal_groups(config, data.size());
  std::ostringstream csv;
  csv << comparison_csv_header() << "\n";
  std::vector<double> truth;
  std::vector<double> estimate;
  int converged = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::string id = config.experiment.group_size == 1 ? std::to_string(groups[g].front())
                                                             : "g" + std::to_string(g);
    DeviationComparison row = compare_removal(prep.model, data, trainer.theta, view, groups[g],
                                              config.estimator.group_mode, config.experiment.retrain, id);
    row.estimated_deviation *= rho;
    row.estimate_norm *= rho;
    csv << comparison_csv_row(row) << "\n";
    truth.push_back(row.true_score());
    estimate.push_back(row.estimate_score());
    converged += row.retrain_converged ? 1 : 0;
  }
  write_text(output_path(config, "scatter.csv"), csv.str());

  const auto spearman = correlation(estimate, truth, CorrelationKind::kSpearman);
  json summary = {
      {"n", groups.size()},
      {"group_size", config.experiment.group_size},
      {"group_mode", config.estimator.group_mode == GroupMode::kFull ? "full" : "diag"},
      {"spearman", optional_json(spearman)},
      {"pearson", optional_json(correlation(estimate, truth, CorrelationKind::kPearson))},
      {"retrain_converged", converged},
  };

  if (config.experiment.loco) {
    if (data.task == Task::kRegression) fail(ErrorCode::kConfigError, "experiment.loco: needs a classification task");
    std::ostringstream loco;
    loco << "class,estimate,heldout_estimate,true_train_nll,true_test_nll\n";
    std::vector<double> loco_est;
    std::vector<double> loco_true;
    for (int c = 0; c < data.num_classes; ++c) {
      const std::vector<Index> members = data.indices_of_class(c);
      if (members.empty()) continue;
      const std::vector<Index> test_members = prep.split.test.indices_of_class(c);
      const double est = subset_loss_estimate(prep.model, trainer.theta, view, data, members,
                                              config.estimator.loco_mode);
      double heldout_est = std::nan("");
      double true_test = std::nan("");
      PerturbationSpec pert;
      pert.indices = members;
      const RetrainResult refit = retrain_without(prep.model, data, pert, config.experiment.retrain, trainer.theta);
      double true_train = 0.0;
      for (Index i : members) true_train += nll_from_output(prep.model, output(prep.model, refit.theta, data, i), data, i);
      if (!test_members.empty()) {
        heldout_est = subset_loss_estimate_heldout(prep.model, trainer.theta, view, data, members,
                                                   prep.split.test, test_members);
        true_test = 0.0;
        for (Index i : test_members) {
          true_test += nll_from_output(prep.model, output(prep.model, refit.theta, prep.split.test, i),
                                       prep.split.test, i);
        }
      }
      loco << c << "," << format_double(est) << "," << format_double(heldout_est) << ","
           << format_double(true_train) << "," << format_double(true_test) << "\n";
      loco_est.push_back(est);
      loco_true.push_back(true_train);
    }
    write_text(output_path(config, "loco.csv"), loco.str());
    summary["loco_spearman"] = optional_json(correlation(loco_est, loco_true, CorrelationKind::kSpearman));
  }
  write_text(output_path(config, "scatter_summary.json"), summary.dump(2) + "\n");
  log << "scatter: " << groups.size() << " removals, spearman "
      << (spearman ? format_double(*spearman) : std::string("undefined")) << "\n";
  return ExitCode::kSuccess;
}

ExitCode run_sweep(const ExperimentConfig& config, std::ostream& log) {
  const std::vector<double> grid = sweep_grid(config.experiment);
  std::ostringstream csv;
  csv << "delta,loo,test_nll\n";
  std::vector<double> loo;
  std::vector<double> test;
  for (double delta : grid) {
    const Prepared prep = prepare_experiment(config, delta);
    const TrainerState trainer = train(config, prep.model, prep.split.train);
    const PreconditionerView view = estimator_view(config, prep.model, prep.split.train, trainer);
    const double l = loo_estimate(prep.model, trainer.theta, view, prep.split.train,
                                  rho_for(config, trainer)).loo_mean;
    const double t = prep.split.test.size() > 0
                         ? test_nll(prep.model, trainer.theta, prep.split.test).nll_mean
                         : std::nan("");
    csv << format_double(delta) << "," << format_double(l) << "," << format_double(t) << "\n";
    loo.push_back(l);
    test.push_back(t);
  }
  write_text(output_path(config, "sweep.csv"), csv.str());

  auto argmin = [](const std::vector<double>& v) {
    return static_cast<long>(std::min_element(v.begin(), v.end()) - v.begin());
  };
  const long a_loo = argmin(loo);
  const long a_test = argmin(test);
  json summary = {
      {"points", grid.size()},
      {"argmin_loo", a_loo},
      {"argmin_test_nll", a_test},
      {"delta_argmin_loo", grid[static_cast<std::size_t>(a_loo)]},
      {"delta_argmin_test_nll", grid[static_cast<std::size_t>(a_test)]},
      {"grid_distance", std::labs(a_loo - a_test)},
      {"pearson", optional_json(correlation(loo, test, CorrelationKind::kPearson))},
  };
  write_text(output_path(config, "sweep_summary.json"), summary.dump(2) + "\n");
  log << "sweep: " << grid.size() << " points, argmin loo " << a_loo << ", argmin test " << a_test << "\n";
  return ExitCode::kSuccess;
}

ExitCode run_track(const ExperimentConfig& config, std::ostream& log) {
  const Prepared prep = prepare_experiment(config, config.model.delta);
  const Dataset& data = prep.split.train;
  std::ostringstream lines;
  std::vector<double> loo;
  std::vector<double> test;
  train(config, prep.model, data, [&](const TrainerState& state, int) {
    const PreconditionerView view = estimator_view(config, prep.model, data, state);
    GeneralizationReport report = loo_estimate(prep.model, state.theta, view, data, rho_for(config, state));
    report.step = state.step;
    if (prep.split.test.size() > 0) report.test_nll = test_nll(prep.model, state.theta, prep.split.test).nll_mean;
    lines << report_jsonl(report) << "\n";
    loo.push_back(report.loo_mean);
    test.push_back(report.test_nll.value_or(std::nan("")));
  });
  write_text(output_path(config, "track.jsonl"), lines.str());
  const auto spearman = correlation(loo, test, CorrelationKind::kSpearman);
  json summary = {{"checkpoints", loo.size()}, {"spearman", optional_json(spearman)}};
  write_text(output_path(config, "track_summary.json"), summary.dump(2) + "\n");
  log << "track: " << loo.size() << " checkpoints, spearman "
      << (spearman ? format_double(*spearman) : std::string("undefined")) << "\n";
  return ExitCode::kSuccess;
}

ExitCode run_evolve(const ExperimentConfig& config, std::ostream& log) {
  const Prepared prep = prepare_experiment(config, config.model.delta);
  const Dataset& data = prep.split.train;
  std::vector<Index> ids = config.experiment.evolve_examples;
  if (ids.empty()) ids = all_indices(data);
  for (Index i : ids) {
    if (i >= data.size()) {
      fail(ErrorCode::kConfigError, "experiment.evolve_examples: index " + std::to_string(i) +
                                        " out of range for " + std::to_string(data.size()) + " examples");
    }
  }
  std::ostringstream csv;
  csv << "step,example_id,score\n";
  long checkpoints = 0;
  train(config, prep.model, data, [&](const TrainerState& state, int) {
    const PreconditionerView view = estimator_view(config, prep.model, data, state);
    const double rho = rho_for(config, state);
    for (Index i : ids) {
      const SensitivityRecord r = output_deviation(prep.model, state.theta, view, data, i);
      csv << state.step << "," << i << "," << format_double(rho * r.score) << "\n";
    }
    ++checkpoints;
  });
  write_text(output_path(config, "evolve.csv"), csv.str());
  log << "evolve: " << checkpoints << " checkpoints x " << ids.size() << " examples\n";
  return ExitCode::kSuccess;
}

ExitCode run_verify(const ExperimentConfig& config, std::ostream& log) {
  const json report = run_verification(config);
  write_text(output_path(config, "verify.json"), report.dump(2) + "\n");
  const bool passed = report.at("passed").get<bool>();
  int failures = 0;
  for (const auto& check : report.at("checks")) {
    if (!check.at("passed").get<bool>()) {
      ++failures;
      log << "verify: FAIL " << check.at("name").get<std::string>() << "\n";
    }
  }
  log << "verify: " << report.at("checks").size() - static_cast<std::size_t>(failures) << "/"
      << report.at("checks").size() << " passed\n";
  return passed ? ExitCode::kSuccess : ExitCode::kVerifyFailure;
}

}  // namespace

Prepared prepare_experiment(const ExperimentConfig& config, double delta) {
  Prepared prep;
  prep.split = prepare(config.data, delta);
  const Dataset& train = prep.split.train;
  const ModelConfig& m = config.model;
  if (m.architecture && *m.architecture == Architecture::kMlp) {
    prep.model = ModelSpec::mlp(train.dim(), train.task, train.num_classes, m.hidden);
  } else if (m.architecture) {
    switch (*m.architecture) {
      case Architecture::kLinear: prep.model = ModelSpec::linear(train.dim(), m.intercept); break;
      case Architecture::kLogistic: prep.model = ModelSpec::logistic(train.dim(), m.intercept); break;
      default: prep.model = ModelSpec::softmax(train.dim(), train.num_classes, m.intercept); break;
    }
  } else {
    prep.model = ModelSpec::for_task(train.task, train.dim(), train.num_classes, m.intercept);
  }
  try {
    prep.model.check_compatible(train);
  } catch (const Error& e) {
    fail(ErrorCode::kConfigError, "model.architecture: " + std::string(e.what()));
  }
  return prep;
}

TrainerState train(const ExperimentConfig& config, const ModelSpec& model, const Dataset& train,
                   const std::function<void(const TrainerState&, int epoch)>& on_epoch) {
  const TrainerConfig& t = config.trainer;
  Hyper hyper = t.hyper;
  hyper.seed = derive_seed(config.seed, kTrainerStream);
  hyper.eval = config.estimator.eval;
  hyper.eval.seed = derive_seed(config.seed, kEvalStream);
  hyper.schedule = LrSchedule::constant(t.lr);
  TrainerState state = init_trainer(model, train, t.algorithm, hyper);
  if (t.cosine) {
    state.hyper.schedule = LrSchedule::cosine(t.lr, t.lr_min, static_cast<long>(t.epochs) * steps_per_epoch(state));
  }
  for (int epoch = 0; epoch < t.epochs; ++epoch) {
    train_epoch(state, model, train);
    if (!all_finite(state.theta)) {
      fail(ErrorCode::kNumericalFailure, "training diverged at epoch " + std::to_string(epoch + 1));
    }
    if (on_epoch) on_epoch(state, epoch + 1);
  }
  return state;
}

PreconditionerView estimator_view(const ExperimentConfig& config, const ModelSpec& model,
                                  const Dataset& train, const TrainerState& trainer) {
  const std::string& view = config.estimator.view;
  if (view == "auto") return preconditioner_view(trainer);
  if (view == "identity") return PreconditionerView::identity(trainer.theta.size());
  const CurvatureKind kind = view == "full_hessian" ? CurvatureKind::kFullHessian : CurvatureKind::kDiagGgn;
  if (kind == CurvatureKind::kFullHessian && !model.convex()) {
    fail(ErrorCode::kConfigError, "estimator.view: full_hessian is only available for convex models");
  }
  return PreconditionerView::from_curvature(curvature(model, trainer.theta, train, kind));
}

std::vector<double> sweep_grid(const ExperimentSettings& settings) {
  if (!settings.deltas.empty()) return settings.deltas;
  std::vector<double> grid;
  const double lo = std::log10(settings.delta_min);
  const double hi = std::log10(settings.delta_max);
  for (int k = 0; k < settings.delta_points; ++k) {
    grid.push_back(std::pow(10.0, lo + (hi - lo) * k / (settings.delta_points - 1)));
  }
  return grid;
}

ExitCode run_command(std::string_view command, const ExperimentConfig& config, std::ostream& log) {
  std::error_code ec;
  std::filesystem::create_directories(config.output_dir, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create output directory " + config.output_dir + ": " + ec.message());
  if (command == "scatter") return run_scatter(config, log);
  if (command == "sweep") return run_sweep(config, log);
  if (command == "track") return run_track(config, log);
  if (command == "evolve") return run_evolve(config, log);
  if (command == "verify") return run_verify(config, log);
  fail(ErrorCode::kConfigError, "unknown command " + std::string(command));
}

}  // namespace mempert::cli

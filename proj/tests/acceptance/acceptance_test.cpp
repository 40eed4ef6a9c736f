// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mempert/error.hpp"
#include "mempert/expfam.hpp"
#include "mempert/format.hpp"
#include "mempert/models.hpp"
#include "mempert/mpe.hpp"
#include "mempert/optim.hpp"
#include "mempert/oracle.hpp"
#include "mempert/tolerances.hpp"
#include "oracles.hpp"

namespace {

using namespace mempert;
namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

fs::path workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "mempert_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run_cli(const std::string& command, const json& config, const fs::path& out,
            std::optional<std::uint64_t> seed = std::nullopt) {
  fs::create_directories(out);
  const fs::path cfg = out / "config.json";
  std::ofstream(cfg) << config.dump(2);
  std::string cmd = std::string(MEMPERT_BINARY) + " " + command + " --config " + cfg.string() + " --out " +
                    out.string();
  if (seed) cmd += " --seed " + std::to_string(*seed);
  cmd += " 2>" + (out / "log.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  return json::parse(in);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    rows.push_back(fields);
  }
  return rows;
}

// 1. Beta-Bernoulli removal through the MPE is exact.
Outcome conjugate_exactness() {
  Timer t;
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> size(1, 50);
  std::uniform_real_distribution<double> prior(0.5, 5.0);
  std::bernoulli_distribution coin(0.4);
  double worst = 0.0;
  double refit = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Dataset data;
    data.task = Task::kBinary;
    data.num_classes = 2;
    const int n = size(rng);
    data.features = Matrix::Zero(n, 1);
    data.labels.resize(n);
    for (int i = 0; i < n; ++i) data.labels(i) = coin(rng) ? 1.0 : 0.0;
    const BetaParams p{prior(rng), prior(rng)};
    const NaturalParams posterior = exact_conjugate_refit(ConjugateKind::kBetaBernoulli, data, {}, p);
    const Index i = std::uniform_int_distribution<Index>(0, n - 1)(rng);
    const int y = data.label_class(i);
    const NaturalParams g = conjugate_natural_gradient(bernoulli_likelihood_natural(y));
    const NaturalParams deviation = mpe_deviation_natural(posterior, std::span(&g, 1), {}, 1.0);
    const Index removed[] = {i};
    const NaturalParams truth = exact_conjugate_refit(ConjugateKind::kBetaBernoulli, data, removed, p);
    worst = std::max({worst, std::abs(deviation.first(0) + y), std::abs(deviation.second(0, 0) - (y - 1))});
    // Non-integer priors make the refit sum in a different order.
    refit = std::max(refit, max_abs_difference(posterior + deviation, truth));
  }
  const double secs = t.seconds();
  return {worst == 0.0 && refit <= 1e-12 && secs < 1.0,
          "100 instances, max |MPE deviation - (-y, y-1)| = " + fmt(worst) + " (needs 0), posterior vs refit " +
              fmt(refit) + " (roundoff), " + fmt(secs) + " s (< 1 s)"};
}

// 2. Ridge: refit, Sherman-Morrison and MPE with leave-out precision agree.
Outcome linreg_exactness() {
  Timer t;
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<Index> dims(1, 10);
  std::uniform_real_distribution<double> deltas(0.1, 5.0);
  double worst = 0.0;
  for (int problem = 0; problem < 50; ++problem) {
    const Index d = dims(rng);
    const Index n = std::uniform_int_distribution<Index>(d + 2, 100)(rng);
    const Dataset data = testing::random_regression(rng(), n, d, deltas(rng));
    const ModelSpec model = ModelSpec::linear(d);
    const Vector theta = testing::ridge_qr(data.features, data.labels, data.delta);
    Matrix h = data.features.transpose() * data.features;
    h.diagonal().array() += data.delta;
    const Eigen::LDLT<Matrix> full(h);
    for (Index i = 0; i < n; ++i) {
      const Vector x = data.features.row(i).transpose();
      const Vector refit = testing::ridge_qr_without(data.features, data.labels, data.delta, i) - theta;
      const double e = x.dot(theta) - data.labels(i);
      const Vector hx = full.solve(x);
      const Vector sherman = hx * (e / (1.0 - x.dot(hx)));
      const PreconditionerView leave_out = PreconditionerView::full_inverse(h - x * x.transpose());
      const Vector mpe = parameter_deviation_estimate(model, theta, leave_out, data, PerturbationSpec{{i}, {}});
      const Vector library = linreg_loo_exact(data, i).delta_theta;
      worst = std::max({worst, (refit - sherman).lpNorm<Eigen::Infinity>(), (refit - mpe).lpNorm<Eigen::Infinity>(),
                        (refit - library).lpNorm<Eigen::Infinity>()});
    }
  }
  Dataset two;
  two.task = Task::kRegression;
  two.delta = 1.0;
  two.features = Matrix{{1.0}, {2.0}};
  two.labels = Vector{{1.0, 2.0}};
  const double dtheta = linreg_loo_exact(two, 0).delta_theta(0);
  const double two_point = std::abs(dtheta + 1.0 / 30.0);
  const double secs = t.seconds();
  return {worst <= tol::kLinregRoutes && two_point <= 1e-15 && secs < 5.0,
          "50 problems, max route disagreement " + fmt(worst) + " (<= 1e-8), two-point dtheta " +
              format_double(dtheta) + " (-1/30), " + fmt(secs) + " s (< 5 s)"};
}

// 3. Influence-function equality and the epsilon derivative of a logistic fit.
Outcome influence_equality() {
  const Dataset data = testing::random_classification(303, 150, 4, 2, 1.0);
  const ModelSpec model = ModelSpec::logistic(4, true);
  Hyper hyper;
  hyper.schedule = LrSchedule::constant(1.0);
  TrainerState state = init_trainer(model, data, Algorithm::kNewton, hyper);
  for (int epoch = 0; epoch < 30; ++epoch) train_epoch(state, model, data);
  const Vector theta = state.theta;
  const double grad_norm = loss_and_grad(model, theta, data).grad.norm();

  const Matrix h = curvature(model, theta, data, CurvatureKind::kFullHessian).full;
  const Eigen::LDLT<Matrix> ldlt(h);
  const PosteriorState q = PosteriorState::full(theta, h);
  const PreconditionerView view = PreconditionerView::full_inverse(h);
  RetrainConfig config;
  config.tolerance = 1e-13;
  double worst_influence = 0.0;
  double worst_derivative = 0.0;
  const double step = 1e-4;
  for (Index i = 0; i < data.size(); i += 15) {
    const Vector mpe = mean_deviation_linearized(q, gaussian_natural_gradient(q, model, data, i).natural());
    const Vector influence = ldlt.solve(example_gradient(model, theta, data, i));
    worst_influence = std::max(worst_influence, relative_error(mpe, influence));

    const double ve = output_deviation(model, theta, view, data, i).output_shift(0);
    const Vector plus = retrain_without(model, data, PerturbationSpec{{i}, {step}}, config, theta).theta;
    const Vector minus = retrain_without(model, data, PerturbationSpec{{i}, {-step}}, config, theta).theta;
    const double fd = (output(model, plus, data, i)(0) - output(model, minus, data, i)(0)) / (2.0 * step);
    worst_derivative = std::max(worst_derivative, std::abs(ve - fd) / std::max(std::abs(fd), 1e-12));
  }
  return {grad_norm < tol::kStationaryGradient && worst_influence <= tol::kInfluenceEquality &&
              worst_derivative <= tol::kWeightedRefitDerivative,
          "grad norm " + fmt(grad_norm) + " (< 1e-8), MPE vs H^-1 grad rel err " + fmt(worst_influence) +
              " (<= 1e-10), df/deps vs FD refit rel err " + fmt(worst_derivative) + " (<= 1e-3)"};
}

json scatter_config() {
  return json::parse(R"({
    "seed": 7,
    "data": {"kind": "blobs", "classes": 2, "n": 200, "dim": 2, "noise": 1.5, "radius": 1.5},
    "model": {"architecture": "logistic", "delta": 1.0},
    "trainer": {"algorithm": "newton", "epochs": 30},
    "experiment": {"removals": 50, "group_size": 1}
  })");
}

// 4. Single-example removals on a logistic model.
Outcome scatter_fidelity() {
  Timer t;
  const fs::path out = workdir() / "scatter";
  const int rc = run_cli("scatter", scatter_config(), out);
  const double secs = t.seconds();
  if (rc != 0) return {false, "mempert scatter exited " + std::to_string(rc)};
  const json s = read_json(out / "scatter_summary.json");
  const double rho = s.at("spearman").get<double>();
  const int converged = s.at("retrain_converged").get<int>();
  return {rho >= 0.9 && secs < 60.0 && converged == 50,
          "Spearman " + fmt(rho) + " (>= 0.9), " + std::to_string(converged) + "/50 retrains converged, " +
              fmt(secs) + " s (< 60 s)"};
}

// 5. Groups of eight, diagonal mode.
Outcome group_removal() {
  Timer t;
  json config = scatter_config();
  config["data"]["n"] = 2000;
  config["data"]["dim"] = 50;
  config["experiment"] = {{"removals", 10}, {"group_size", 8}};
  config["estimator"] = {{"group_mode", "diag"}};
  const fs::path out = workdir() / "groups";
  const int rc = run_cli("scatter", config, out);
  if (rc != 0) return {false, "mempert scatter exited " + std::to_string(rc)};
  const json s = read_json(out / "scatter_summary.json");
  const double rho = s.at("spearman").get<double>();
  return {rho >= 0.8, "10 groups of 8 (N=2000, D=50), Spearman " + fmt(rho) + " (>= 0.8), " + fmt(t.seconds()) + " s"};
}

// 6. LOO estimate over a delta grid against held-out NLL.
Outcome loo_sweep() {
  Timer t;
  const json config = json::parse(R"({
    "seed": 11,
    "data": {"kind": "two_gaussians", "n": 300, "n_test": 3000, "dim": 20, "noise": 1.0, "radius": 1.0},
    "model": {"architecture": "logistic"},
    "trainer": {"algorithm": "newton", "epochs": 25},
    "experiment": {"delta_min": 0.1, "delta_max": 100, "delta_points": 10}
  })");
  const fs::path out = workdir() / "sweep";
  const int rc = run_cli("sweep", config, out);
  const double secs = t.seconds();
  if (rc != 0) return {false, "mempert sweep exited " + std::to_string(rc)};
  const json s = read_json(out / "sweep_summary.json");
  const long distance = s.at("grid_distance").get<long>();
  const double pearson = s.at("pearson").get<double>();
  return {distance <= 1 && pearson >= 0.95 && secs < 120.0,
          "argmin distance " + std::to_string(distance) + " grid steps (<= 1), Pearson " + fmt(pearson) +
              " (>= 0.95), " + fmt(secs) + " s (< 120 s)"};
}

// 7. iBLR on an MLP, LOO estimate tracked per epoch.
Outcome training_tracking() {
  Timer t;
  const json config = json::parse(R"({
    "seed": 1,
    "data": {"kind": "blobs", "classes": 3, "n": 500, "n_test": 1000, "dim": 2, "noise": 1.0, "radius": 2.0},
    "model": {"architecture": "mlp", "hidden": [16, 16], "delta": 1.0},
    "trainer": {"algorithm": "iblr", "lr": 0.01, "schedule": "cosine", "epochs": 20, "batch_size": 50,
                "beta2": 0.999, "h0": 0.1}
  })");
  const fs::path out = workdir() / "track";
  const int rc = run_cli("track", config, out);
  const double secs = t.seconds();
  if (rc != 0) return {false, "mempert track exited " + std::to_string(rc)};
  const json s = read_json(out / "track_summary.json");
  const long checkpoints = s.at("checkpoints").get<long>();
  const double rho = s.at("spearman").get<double>();
  return {checkpoints >= 15 && rho >= 0.8 && secs < 120.0,
          std::to_string(checkpoints) + " checkpoints (>= 15), Spearman " + fmt(rho) + " (>= 0.8), " + fmt(secs) +
              " s (< 120 s)"};
}

json loco_config(std::uint64_t seed) {
  json config = json::parse(R"({
    "data": {"kind": "blobs", "classes": 3, "n": 300, "n_test": 600, "dim": 2, "noise": 1.0,
             "class_noise": [0.5, 1.5, 6.0], "radius": 2.0},
    "model": {"delta": 10.0},
    "trainer": {"algorithm": "newton", "epochs": 30},
    "estimator": {"loco_mode": "group_sum"},
    "experiment": {"removals": 1, "loco": true}
  })");
  config["seed"] = seed;
  return config;
}

struct LocoResult {
  bool ok = false;
  double spearman = 0.0;
  int top = -1;
};

LocoResult run_loco(std::uint64_t seed, const fs::path& out) {
  LocoResult r;
  if (run_cli("scatter", loco_config(seed), out) != 0) return r;
  std::vector<double> est, truth;
  for (const auto& row : read_csv(out / "loco.csv")) {
    est.push_back(std::stod(row.at(1)));
    truth.push_back(std::stod(row.at(3)));
  }
  if (est.size() != 3) return r;
  r.top = static_cast<int>(std::max_element(est.begin(), est.end()) - est.begin());
  r.spearman = testing::spearman(est, truth);
  r.ok = true;
  return r;
}

// 8. Leave-one-class-out ordering with one noisy class.
Outcome loco_ordering() {
  Timer t;
  const LocoResult main = run_loco(1, workdir() / "loco");
  if (!main.ok) return {false, "mempert scatter with loco failed"};
  int exact = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const LocoResult r = run_loco(seed, workdir() / ("loco_seed" + std::to_string(seed)));
    exact += (r.ok && r.spearman == 1.0 && r.top == 2) ? 1 : 0;
  }
  return {main.spearman == 1.0 && main.top == 2,
          "seed 1: Spearman " + fmt(main.spearman) + " (= 1), most sensitive class " + std::to_string(main.top) +
              " (noisy = 2); seeds 1-10 with exact order: " + std::to_string(exact) + "/10, " + fmt(t.seconds()) +
              " s"};
}

// 9. Finite differences, Bonnet smoothing and iBLR positivity.
Outcome numerical_hygiene() {
  std::mt19937_64 rng(909);
  std::normal_distribution<double> normal;
  const Dataset reg = testing::random_regression(1, 20, 3, 0.7);
  const Dataset bin = testing::random_classification(2, 20, 3, 2, 0.7);
  const Dataset multi = testing::random_classification(3, 20, 3, 3, 0.7);
  const std::vector<std::pair<ModelSpec, const Dataset*>> cases = {
      {ModelSpec::linear(3, true), &reg},
      {ModelSpec::logistic(3, true), &bin},
      {ModelSpec::softmax(3, 3, true), &multi},
      {ModelSpec::mlp(3, Task::kRegression, 1, {5, 4}), &reg},
      {ModelSpec::mlp(3, Task::kBinary, 2, {5, 4}), &bin},
      {ModelSpec::mlp(3, Task::kMulticlass, 3, {6}), &multi},
  };
  double fd = 0.0;
  for (const auto& [model, data] : cases) {
    const Vector theta = Vector::NullaryExpr(model.parameter_dim(), [&] { return 0.5 * normal(rng); });
    const ScalarLoss loss = [&](const Vector& t) { return loss_value(model, t, *data); };
    const GradientFn grad = [&](const Vector& t) { return loss_and_grad(model, t, *data).grad; };
    fd = std::max(fd, finite_difference_check(loss, grad, theta));
    for (Index i = 0; i < data->size(); i += 5) {
      const VectorFn out = [&](const Vector& t) { return output(model, t, *data, i); };
      const auto jac = [&](const Vector& t) { return output_and_jacobian(model, t, *data, i).jacobian; };
      fd = std::max(fd, finite_difference_check(out, jac, theta));
    }
    if (model.convex()) {
      const Matrix hess = curvature(model, theta, *data, CurvatureKind::kFullHessian).full;
      fd = std::max(fd, relative_error(hess, fd_jacobian(grad, theta)));
    }
  }

  const Vector mean{{0.3, -0.8, 1.2, 0.0}};
  const Vector precision{{4.0, 1.0, 9.0, 2.0}};
  const PosteriorState q = PosteriorState::diag(mean, precision);
  const ScalarLoss abs_loss = [](const Vector& t) { return t.cwiseAbs().sum(); };
  const GradientFn sign = [](const Vector& t) {
    return Vector(t.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }));
  };
  const int samples = 10000;
  const SmoothedGradient sg = expected_grad_smoothed(q, abs_loss, sign, samples, 31);
  double z = 0.0;
  for (Index k = 0; k < mean.size(); ++k) {
    const double exact = std::erf(mean(k) * std::sqrt(precision(k) / 2.0));
    const double se = std::sqrt((1.0 - exact * exact) / samples);
    z = std::max(z, std::abs(sg.mean(k) - exact) / se);
  }

  const Dataset blobs = testing::random_classification(4, 64, 2, 3, 1.0, 0.5);
  const ModelSpec mlp = ModelSpec::mlp(2, Task::kMulticlass, 3, {8});
  Hyper hyper;
  hyper.schedule = LrSchedule::constant(0.1);
  hyper.batch_size = 8;
  hyper.beta2 = 0.9;
  hyper.seed = 41;
  TrainerState state = init_trainer(mlp, blobs, Algorithm::kIblr, hyper);
  const double delta_bar = blobs.delta / static_cast<double>(blobs.size());
  double smallest = std::numeric_limits<double>::infinity();
  for (int s = 0; s < 10000; ++s) {
    const auto batch = next_batch(state);
    step(state, mlp, blobs, batch);
    smallest = std::min(smallest, state.scale.minCoeff() + delta_bar);
  }
  return {fd <= tol::kFiniteDifferenceRelative && z <= tol::kMonteCarloSigmas && smallest > 0.0,
          "worst FD rel err " + fmt(fd) + " (<= 1e-4), Bonnet " + fmt(z) + " SE (<= 3), min h + delta/N over 10k " +
              "iBLR steps " + fmt(smallest) + " (> 0)"};
}

// 10. Every command twice with the same seed.
Outcome determinism() {
  Timer t;
  json base = json::parse(R"({
    "data": {"kind": "blobs", "classes": 3, "n": 80, "n_test": 80, "dim": 2, "radius": 2.0},
    "model": {"delta": 1.0},
    "trainer": {"algorithm": "newton", "epochs": 8},
    "experiment": {"removals": 8, "loco": true, "delta_points": 4, "evolve_examples": [0, 5, 9]}
  })");
  json iblr = base;
  iblr["model"] = {{"architecture", "mlp"}, {"hidden", {8}}};
  iblr["trainer"] = {{"algorithm", "iblr"}, {"lr", 0.05}, {"epochs", 6}, {"batch_size", 16}};
  const std::vector<std::pair<std::string, json>> runs = {
      {"scatter", base}, {"sweep", base}, {"track", iblr}, {"evolve", iblr}, {"verify", base}};
  std::vector<std::string> differing;
  int files = 0;
  for (const auto& [command, config] : runs) {
    const fs::path a = workdir() / ("det_" + command + "_a");
    const fs::path b = workdir() / ("det_" + command + "_b");
    if (run_cli(command, config, a, 123) != 0 || run_cli(command, config, b, 123) != 0) {
      differing.push_back(command + " (nonzero exit)");
      continue;
    }
    for (const auto& entry : fs::directory_iterator(a)) {
      const std::string name = entry.path().filename().string();
      if (name == "config.json" || name == "log.txt") continue;
      ++files;
      if (slurp(entry.path()) != slurp(b / name)) differing.push_back(command + "/" + name);
    }
  }
  std::string detail = std::to_string(files) + " artifacts from 5 commands compared";
  for (const auto& d : differing) detail += ", differs: " + d;
  return {differing.empty() && files >= 10, detail + ", " + fmt(t.seconds()) + " s"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"conjugate exactness", conjugate_exactness},
      {"linear-regression exactness", linreg_exactness},
      {"influence-function equality", influence_equality},
      {"scatter fidelity", scatter_fidelity},
      {"group removal", group_removal},
      {"LOO sweep", loo_sweep},
      {"during-training tracking", training_tracking},
      {"LOCO ordering", loco_ordering},
      {"numerical hygiene", numerical_hygiene},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.passed ? 0 : 1;
    std::cout << (o.passed ? "PASS" : "FAIL") << "  " << (k + 1) << ". " << criteria[k].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}

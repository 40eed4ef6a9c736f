// Invariant checks behind `mempert verify`. Each check is small enough to run
// in well under a second; together they exercise the exact identities
// (conjugate removal, ridge leave-one-out, influence functions), the numerical
// plumbing (finite differences, smoothing, kernels) and the artifact formats.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mempert/cli.hpp"
#include "mempert/error.hpp"
#include "mempert/format.hpp"
#include "mempert/kernels.hpp"
#include "mempert/tolerances.hpp"

namespace mempert::cli {
namespace {

using nlohmann::json;

struct Check {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

Check within(std::string name, double value, double tolerance) {
  return {std::move(name), value, tolerance, std::isfinite(value) && value <= tolerance, ""};
}

Dataset random_regression(std::mt19937_64& rng, Index n, Index d, double delta) {
  std::normal_distribution<double> normal;
  Dataset data;
  data.task = Task::kRegression;
  data.delta = delta;
  data.features.resize(n, d);
  data.labels.resize(n);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < d; ++k) data.features(i, k) = normal(rng);
    data.labels(i) = data.features.row(i).sum() + 0.5 * normal(rng);
  }
  return data;
}

Dataset random_classification(std::mt19937_64& rng, Index n, Index d, int classes, double delta) {
  std::normal_distribution<double> normal;
  Dataset data;
  data.task = classes == 2 ? Task::kBinary : Task::kMulticlass;
  data.num_classes = classes;
  data.delta = delta;
  data.features.resize(n, d);
  data.labels.resize(n);
  for (Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % classes);
    for (Index k = 0; k < d; ++k) data.features(i, k) = normal(rng) + (k % classes == c ? 1.5 : 0.0);
    data.labels(i) = c;
  }
  return data;
}

Check check_round_trip(std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = 1 + trial % 5;
    Matrix a = Matrix::NullaryExpr(d, d, [&] { return normal(rng); });
    const Matrix precision = a * a.transpose() + Matrix::Identity(d, d);
    const Vector mean = Vector::NullaryExpr(d, [&] { return normal(rng); });
    const auto full = std::get<GaussianFullParams>(from_natural(to_natural(GaussianFullParams{mean, precision})));
    worst = std::max(worst, relative_error(full.mean, mean));
    worst = std::max(worst, relative_error(full.precision, precision));
    const Vector s = precision.diagonal();
    const auto diag = std::get<GaussianDiagParams>(from_natural(to_natural(GaussianDiagParams{mean, s})));
    worst = std::max(worst, relative_error(diag.mean, mean));
    worst = std::max(worst, relative_error(diag.precision, s));
    const BetaParams beta{0.5 + std::abs(normal(rng)), 0.5 + std::abs(normal(rng))};
    const auto back = std::get<BetaParams>(from_natural(to_natural(beta)));
    worst = std::max({worst, std::abs(back.alpha - beta.alpha), std::abs(back.beta - beta.beta)});
  }
  return within("expfam_round_trip", worst, tol::kRoundTrip);
}

Check check_beta_bernoulli(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(1, 50);
  std::bernoulli_distribution coin(0.4);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Dataset data;
    data.task = Task::kBinary;
    data.num_classes = 2;
    const int n = size(rng);
    data.features = Matrix::Zero(n, 1);
    data.labels.resize(n);
    for (int i = 0; i < n; ++i) data.labels(i) = coin(rng) ? 1.0 : 0.0;
    const BetaParams prior{2.0, 3.0};
    const NaturalParams posterior = exact_conjugate_refit(ConjugateKind::kBetaBernoulli, data, {}, prior);
    const Index i = trial % n;
    const NaturalParams g = conjugate_natural_gradient(bernoulli_likelihood_natural(data.label_class(i)));
    const NaturalParams estimate = posterior + mpe_deviation_natural(posterior, std::span(&g, 1));
    const Index removed[] = {i};
    const NaturalParams truth = exact_conjugate_refit(ConjugateKind::kBetaBernoulli, data, removed, prior);
    worst = std::max(worst, max_abs_difference(estimate, truth));
  }
  Check c = within("beta_bernoulli_removal", worst, 0.0);
  return c;
}

Check check_ridge_routes(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Dataset data = random_regression(rng, 10 + 5 * trial, 1 + trial % 6, 0.5 + trial);
    const NaturalParams posterior = exact_conjugate_refit(ConjugateKind::kRidge, data, {}, {});
    const PosteriorState q = PosteriorState::from_natural(posterior);
    for (Index i = 0; i < data.size(); i += 3) {
      const LinregLoo loo = linreg_loo_exact(data, i);
      const Index removed[] = {i};
      const auto refit = std::get<GaussianFullParams>(
          from_natural(exact_conjugate_refit(ConjugateKind::kRidge, data, removed, {})));
      const NaturalParams g =
          conjugate_natural_gradient(linreg_likelihood_natural(data.features.row(i).transpose(), data.labels(i)));
      const Vector mpe = mean_deviation_exact(q, g);
      const Vector refit_shift = refit.mean - q.mean();
      worst = std::max({worst, (mpe - refit_shift).lpNorm<Eigen::Infinity>(),
                        (loo.delta_theta - refit_shift).lpNorm<Eigen::Infinity>()});
    }
  }
  return within("ridge_loo_three_routes", worst, tol::kLinregRoutes);
}

Check check_two_point() {
  Dataset data;
  data.task = Task::kRegression;
  data.delta = 1.0;
  data.features = Matrix{{1.0}, {2.0}};
  data.labels = Vector{{1.0, 2.0}};
  const LinregLoo loo = linreg_loo_exact(data, 0);
  const auto refit = std::get<GaussianFullParams>(
      from_natural(exact_conjugate_refit(ConjugateKind::kRidge, data, std::vector<Index>{0}, {})));
  const double theta_star = 5.0 / 6.0;
  const double worst = std::max({std::abs(loo.e + 1.0 / 6.0), std::abs(loo.v_loo - 0.2),
                                 std::abs(loo.delta_f + 1.0 / 30.0), std::abs(loo.delta_theta(0) + 1.0 / 30.0),
                                 std::abs(refit.mean(0) - 0.8), std::abs(refit.mean(0) - theta_star - loo.delta_theta(0))});
  return within("two_point_removal", worst, tol::kConjugateRefit);
}

Check check_influence(std::mt19937_64& rng) {
  const Dataset data = random_classification(rng, 60, 3, 2, 1.0);
  const ModelSpec model = ModelSpec::logistic(3, true);
  RetrainConfig config;
  config.tolerance = tol::kStationaryGradient * 1e-2;
  const RetrainResult fitted = fit(model, data, config, Vector::Zero(model.parameter_dim()));
  const Curvature h = curvature(model, fitted.theta, data, CurvatureKind::kFullHessian);
  const PosteriorState q = PosteriorState::full(fitted.theta, h.full);
  const Eigen::LDLT<Matrix> ldlt(h.full);
  double worst = 0.0;
  for (Index i = 0; i < data.size(); i += 7) {
    const NaturalParams g = gaussian_natural_gradient(q, model, data, i).natural();
    const Vector mpe = mean_deviation_linearized(q, g);
    const Vector influence = ldlt.solve(example_gradient(model, fitted.theta, data, i));
    worst = std::max(worst, relative_error(mpe, influence));
  }
  Check c = within("influence_function_equality", worst, tol::kInfluenceEquality);
  if (fitted.grad_norm >= tol::kStationaryGradient) {
    c.passed = false;
    c.detail = "training stopped at gradient norm " + format_double(fitted.grad_norm);
  }
  return c;
}

Check check_finite_differences(std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  double worst = 0.0;
  const Dataset binary = random_classification(rng, 12, 3, 2, 0.7);
  const Dataset multi = random_classification(rng, 12, 3, 3, 0.7);
  const Dataset reg = random_regression(rng, 12, 3, 0.7);
  const std::vector<std::pair<ModelSpec, const Dataset*>> cases = {
      {ModelSpec::linear(3, true), &reg},
      {ModelSpec::logistic(3, true), &binary},
      {ModelSpec::softmax(3, 3, true), &multi},
      {ModelSpec::mlp(3, Task::kBinary, 2, {5, 4}), &binary},
      {ModelSpec::mlp(3, Task::kMulticlass, 3, {4}), &multi},
  };
  const double h = tol::kFiniteDifferenceStep;
  for (const auto& [model, data] : cases) {
    const Vector theta = Vector::NullaryExpr(model.parameter_dim(), [&] { return 0.5 * normal(rng); });
    const ScalarLoss loss = [&](const Vector& t) { return loss_value(model, t, *data); };
    const GradientFn grad = [&](const Vector& t) { return loss_and_grad(model, t, *data).grad; };
    worst = std::max(worst, finite_difference_check(loss, grad, theta, h));
    const VectorFn out = [&](const Vector& t) { return output(model, t, *data, 1); };
    const auto jac = [&](const Vector& t) { return output_and_jacobian(model, t, *data, 1).jacobian; };
    worst = std::max(worst, finite_difference_check(out, jac, theta, h));
    if (model.convex()) {
      // Hessian columns against differences of the analytic gradient.
      const Matrix hess = curvature(model, theta, *data, CurvatureKind::kFullHessian).full;
      const VectorFn g = [&](const Vector& t) { return loss_and_grad(model, t, *data).grad; };
      worst = std::max(worst, relative_error(hess, fd_jacobian(g, theta, h)));
    }
  }
  return within("finite_differences", worst, tol::kFiniteDifferenceRelative);
}

Check check_bonnet(std::uint64_t seed) {
  const Vector mean{{0.3, -0.8, 1.2}};
  const Vector precision{{4.0, 1.0, 9.0}};
  const PosteriorState q = PosteriorState::diag(mean, precision);
  const ScalarLoss loss = [](const Vector& t) { return t.cwiseAbs().sum(); };
  const GradientFn grad = [](const Vector& t) {
    return Vector(t.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }));
  };
  const SmoothedGradient sg = expected_grad_smoothed(q, loss, grad, 4000, seed);
  double worst = 0.0;
  for (Index k = 0; k < mean.size(); ++k) {
    const double sigma = 1.0 / std::sqrt(precision(k));
    const double exact = std::erf(mean(k) / (sigma * std::sqrt(2.0)));
    // Analytic sampling error of a mean of signs; the empirical one is zero
    // when every draw lands on one side.
    const double se = std::sqrt((1.0 - exact * exact) / static_cast<double>(sg.samples));
    worst = std::max(worst, std::abs(sg.mean(k) - exact) / se);
  }
  return within("bonnet_abs_smoothing", worst, tol::kMonteCarloSigmas);
}

Check check_iblr_positivity(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Dataset data = random_classification(rng, 40, 2, 2, 1.0);
  const ModelSpec model = ModelSpec::mlp(2, Task::kBinary, 2, {6});
  Hyper hyper;
  hyper.schedule = LrSchedule::constant(0.2);
  hyper.batch_size = 8;
  hyper.seed = seed;
  hyper.beta2 = 0.9;
  TrainerState state = init_trainer(model, data, Algorithm::kIblr, hyper);
  double smallest = std::numeric_limits<double>::infinity();
  for (int s = 0; s < 2000; ++s) {
    const auto batch = next_batch(state);
    step(state, model, data, batch);
    // The recursion keeps the posterior precision h + delta / N positive; h
    // alone may dip below zero.
    smallest = std::min(smallest, state.scale.minCoeff() + state.delta / static_cast<double>(state.num_examples));
  }
  Check c{"iblr_positivity", smallest, 0.0, std::isfinite(smallest) && smallest > 0.0, ""};
  return c;
}

Check check_online_newton(std::mt19937_64& rng) {
  const Dataset data = random_classification(rng, 30, 3, 2, 1.0);
  const ModelSpec model = ModelSpec::logistic(3, true);
  Hyper hyper;
  hyper.schedule = LrSchedule::constant(1.0);
  hyper.init_scale = 0.0;
  TrainerState newton = init_trainer(model, data, Algorithm::kNewton, hyper);
  TrainerState online = init_trainer(model, data, Algorithm::kOnlineNewton, hyper);
  double worst = 0.0;
  for (int s = 0; s < 5; ++s) {
    train_epoch(newton, model, data);
    train_epoch(online, model, data);
    worst = std::max(worst, relative_error(newton.theta, online.theta));
  }
  return within("online_newton_unit_rate_is_newton", worst, tol::kConjugateRefit);
}

Check check_kernels(std::mt19937_64& rng) {
  const kernels::KernelTable* avx = kernels::avx2_table();
  if (avx == nullptr) return {"kernel_equivalence", 0.0, tol::kKernelReduction, true, "avx2 unavailable"};
  const kernels::KernelTable& ref = kernels::scalar_table();
  std::uniform_real_distribution<double> u(0.1, 2.0);
  double worst = 0.0;
  for (std::size_t n : {1u, 3u, 4u, 7u, 16u, 33u, 257u}) {
    std::vector<double> x(n), y(n), w(n);
    for (std::size_t k = 0; k < n; ++k) {
      x[k] = u(rng) - 1.0;
      y[k] = u(rng);
      w[k] = u(rng);
    }
    const double d0 = ref.dot(x.data(), y.data(), n);
    worst = std::max(worst, std::abs(avx->dot(x.data(), y.data(), n) - d0) / std::max(1.0, std::abs(d0)));
    const double s0 = ref.weighted_sum_squares(x.data(), w.data(), n);
    worst = std::max(worst, std::abs(avx->weighted_sum_squares(x.data(), w.data(), n) - s0) / std::max(1.0, s0));
    auto same = [&](auto&& apply) {
      std::vector<double> a = y, b = y;
      apply(ref, a);
      apply(*avx, b);
      for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, a[k] == b[k] ? 0.0 : std::abs(a[k] - b[k]));
    };
    same([&](const kernels::KernelTable& t, std::vector<double>& out) { t.axpy(0.3, x.data(), out.data(), n); });
    same([&](const kernels::KernelTable& t, std::vector<double>& out) { t.divide(x.data(), w.data(), out.data(), n); });
    same([&](const kernels::KernelTable& t, std::vector<double>& out) { t.ema(0.9, x.data(), out.data(), n); });
    same([&](const kernels::KernelTable& t, std::vector<double>& out) { t.square_ema(0.99, x.data(), out.data(), n); });
    same([&](const kernels::KernelTable& t, std::vector<double>& out) {
      t.iblr_hessian_update(0.95, 0.01, x.data(), out.data(), n);
    });
    same([&](const kernels::KernelTable& t, std::vector<double>& out) {
      t.iblr_mean_update(0.1, 0.01, x.data(), w.data(), out.data(), n);
    });
  }
  return within("kernel_equivalence", worst, tol::kKernelReduction);
}

// Artifact validation: header row as expected and every field numeric (or an
// integer id / group label in the first column).
std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Multi-output columns hold ';'-separated numbers.
bool numeric(const std::string& field) {
  if (field.empty()) return false;
  std::stringstream ss(field);
  std::string part;
  while (std::getline(ss, part, ';')) {
    if (part == "nan" || part == "inf" || part == "-inf") continue;
    char* end = nullptr;
    std::strtod(part.c_str(), &end);
    if (part.empty() || end != part.c_str() + part.size()) return false;
  }
  return field.back() != ';';
}

std::optional<Check> check_csv(const std::filesystem::path& dir, const std::string& name,
                               const std::string& header, bool label_first) {
  const auto path = dir / name;
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  std::string line;
  Check c{"artifact_" + name, 0.0, 0.0, false, ""};
  if (!std::getline(in, line) || line != header) {
    c.detail = "unexpected header";
    return c;
  }
  const std::size_t columns = split_row(header).size();
  long rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    const auto fields = split_row(line);
    bool ok = fields.size() == columns;
    for (std::size_t k = label_first ? 1 : 0; ok && k < fields.size(); ++k) ok = numeric(fields[k]);
    if (!ok) {
      c.detail = "malformed row " + std::to_string(rows + 1);
      return c;
    }
  }
  c.value = static_cast<double>(rows);
  c.passed = true;
  return c;
}

std::optional<Check> check_json(const std::filesystem::path& dir, const std::string& name, bool lines) {
  const auto path = dir / name;
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  Check c{"artifact_" + name, 0.0, 0.0, true, ""};
  try {
    if (lines) {
      std::string line;
      long rows = 0;
      while (std::getline(in, line)) {
        const json j = json::parse(line);
        for (const char* key : {"step", "loo", "test_nll", "n"}) {
          if (!j.contains(key)) fail(ErrorCode::kParseError, std::string("missing key ") + key);
        }
        ++rows;
      }
      c.value = static_cast<double>(rows);
    } else {
      const json j = json::parse(in);
      c.passed = j.is_object();
    }
  } catch (const std::exception& e) {
    c.passed = false;
    c.detail = e.what();
  }
  return c;
}

void guarded(std::vector<Check>& checks, const std::string& name, const std::function<Check()>& run) {
  try {
    checks.push_back(run());
  } catch (const std::exception& e) {
    checks.push_back({name, std::nan(""), 0.0, false, e.what()});
  }
}

}  // namespace

nlohmann::json run_verification(const ExperimentConfig& config) {
  std::mt19937_64 rng(config.seed);
  std::vector<Check> checks;
  guarded(checks, "expfam_round_trip", [&] { return check_round_trip(rng); });
  guarded(checks, "beta_bernoulli_removal", [&] { return check_beta_bernoulli(rng); });
  guarded(checks, "ridge_loo_three_routes", [&] { return check_ridge_routes(rng); });
  guarded(checks, "two_point_removal", [&] { return check_two_point(); });
  guarded(checks, "influence_function_equality", [&] { return check_influence(rng); });
  guarded(checks, "finite_differences", [&] { return check_finite_differences(rng); });
  guarded(checks, "bonnet_abs_smoothing", [&] { return check_bonnet(config.seed + 17); });
  guarded(checks, "iblr_positivity", [&] { return check_iblr_positivity(config.seed + 29); });
  guarded(checks, "online_newton_unit_rate_is_newton", [&] { return check_online_newton(rng); });
  guarded(checks, "kernel_equivalence", [&] { return check_kernels(rng); });

  const std::filesystem::path dir(config.output_dir);
  for (auto c : {check_csv(dir, "scatter.csv", comparison_csv_header(), true),
                 check_csv(dir, "sensitivity.csv", sensitivity_csv_header(), false),
                 check_csv(dir, "loco.csv", "class,estimate,heldout_estimate,true_train_nll,true_test_nll", false),
                 check_csv(dir, "sweep.csv", "delta,loo,test_nll", false),
                 check_csv(dir, "evolve.csv", "step,example_id,score", false),
                 check_json(dir, "track.jsonl", true),
                 check_json(dir, "scatter_summary.json", false),
                 check_json(dir, "sweep_summary.json", false),
                 check_json(dir, "track_summary.json", false)}) {
    if (c) checks.push_back(*c);
  }

  json out = json::object();
  json list = json::array();
  bool passed = true;
  for (const Check& c : checks) {
    json entry = {{"name", c.name}, {"passed", c.passed}, {"value", std::isfinite(c.value) ? json(c.value) : json(nullptr)},
                  {"tolerance", c.tolerance}};
    if (!c.detail.empty()) entry["detail"] = c.detail;
    list.push_back(entry);
    passed = passed && c.passed;
  }
  out["isa"] = std::string(kernels::isa_name(kernels::active_isa()));
  out["checks"] = list;
  out["passed"] = passed;
  return out;
}

}  // namespace mempert::cli

#include "mempert/models.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "gtest/gtest.h"
#include "mempert/error.hpp"
#include "mempert/oracle.hpp"
#include "mempert/tolerances.hpp"
#include "oracles.hpp"

namespace mempert {
namespace {

struct Case {
  const char* name;
  ModelSpec model;
  Dataset data;
};

std::vector<Case> cases() {
  std::vector<Case> out;
  out.push_back({"linear", ModelSpec::linear(3, true), testing::random_regression(1, 25, 3, 0.5)});
  out.push_back({"logistic", ModelSpec::logistic(3, true), testing::random_classification(2, 25, 3, 2, 0.5)});
  out.push_back({"softmax", ModelSpec::softmax(3, 4, true), testing::random_classification(3, 25, 3, 4, 0.5)});
  const Dataset reg = testing::random_regression(4, 20, 3, 0.5);
  out.push_back({"mlp_regression", ModelSpec::mlp(3, Task::kRegression, 1, {5, 4}), reg});
  const Dataset bin = testing::random_classification(5, 20, 3, 2, 0.5);
  out.push_back({"mlp_binary", ModelSpec::mlp(3, Task::kBinary, 2, {6}), bin});
  const Dataset multi = testing::random_classification(6, 20, 3, 3, 0.5);
  out.push_back({"mlp_multiclass", ModelSpec::mlp(3, Task::kMulticlass, 3, {5, 4}), multi});
  return out;
}

Vector random_theta(const ModelSpec& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.5);
  return Vector::NullaryExpr(model.parameter_dim(), [&] { return normal(rng); });
}

class ModelCase : public ::testing::TestWithParam<int> {
 protected:
  Case c = cases()[static_cast<std::size_t>(GetParam())];
};

TEST_P(ModelCase, GradientMatchesFiniteDifferences) {
  const Vector theta = random_theta(c.model, 10);
  const ScalarLoss f = [&](const Vector& t) { return loss_value(c.model, t, c.data); };
  const GradientFn g = [&](const Vector& t) { return loss_and_grad(c.model, t, c.data).grad; };
  EXPECT_LE(finite_difference_check(f, g, theta), tol::kFiniteDifferenceRelative) << c.name;
}

TEST_P(ModelCase, JacobianMatchesFiniteDifferences) {
  const Vector theta = random_theta(c.model, 11);
  for (Index i : {Index{0}, Index{7}}) {
    const VectorFn f = [&](const Vector& t) { return output(c.model, t, c.data, i); };
    const auto j = [&](const Vector& t) { return output_and_jacobian(c.model, t, c.data, i).jacobian; };
    EXPECT_LE(finite_difference_check(f, j, theta), tol::kFiniteDifferenceRelative) << c.name;
  }
}

TEST_P(ModelCase, ExampleGradientRoutesAgree) {
  const Vector theta = random_theta(c.model, 12);
  for (Index i = 0; i < c.data.size(); ++i) {
    const Vector a = example_gradient(c.model, theta, c.data, i);
    const Vector b = example_gradient_via_jacobian(c.model, theta, c.data, i);
    ASSERT_LE(relative_error(a, b), 1e-12) << c.name << " example " << i;
  }
}

TEST_P(ModelCase, LossIsSumOfExamplesPlusRegularizer) {
  const Vector theta = random_theta(c.model, 13);
  double sum = 0.0;
  for (Index i = 0; i < c.data.size(); ++i) {
    sum += loss_from_output(c.model, output(c.model, theta, c.data, i), c.data, i);
  }
  EXPECT_NEAR(loss_value(c.model, theta, c.data, {.include_regularizer = false}), sum, 1e-10);
  EXPECT_NEAR(loss_value(c.model, theta, c.data), sum + 0.5 * c.data.delta * theta.squaredNorm(), 1e-10);
}

TEST_P(ModelCase, DiagGgnMatchesFullGgnDiagonal) {
  const Vector theta = random_theta(c.model, 14);
  Matrix full = Matrix::Zero(theta.size(), theta.size());
  for (Index i = 0; i < c.data.size(); ++i) {
    const OutputJacobian oj = output_and_jacobian(c.model, theta, c.data, i);
    full += oj.jacobian * link_hessian(c.model, oj.f) * oj.jacobian.transpose();
  }
  const Curvature diag = curvature(c.model, theta, c.data, CurvatureKind::kDiagGgn);
  Vector expected = full.diagonal();
  expected.array() += c.data.delta;
  EXPECT_LE((diag.diag - expected).lpNorm<Eigen::Infinity>(), 1e-10) << c.name;
  const Curvature iso = curvature(c.model, theta, c.data, CurvatureKind::kScaledIdentity);
  EXPECT_NEAR(iso.scale, expected.mean(), 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Architectures, ModelCase, ::testing::Range(0, 6),
                         [](const ::testing::TestParamInfo<int>& info) {
                           return std::string(cases()[static_cast<std::size_t>(info.param)].name);
                         });

TEST(Curvature, FullHessianMatchesFiniteDifferencesForConvexModels) {
  for (const Case& c : cases()) {
    if (!c.model.convex()) continue;
    const Vector theta = random_theta(c.model, 20);
    const VectorFn g = [&](const Vector& t) { return loss_and_grad(c.model, t, c.data).grad; };
    const Matrix h = curvature(c.model, theta, c.data, CurvatureKind::kFullHessian).full;
    EXPECT_LE(relative_error(h, fd_jacobian(g, theta)), tol::kFiniteDifferenceRelative) << c.name;
  }
}

TEST(Curvature, FullHessianUnsupportedForMlp) {
  const Case c = cases()[3];
  try {
    curvature(c.model, random_theta(c.model, 1), c.data, CurvatureKind::kFullHessian);
    FAIL() << "expected UnsupportedCurvature";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupportedCurvature);
  }
}

TEST(Links, DerivativesOfSigmoidAndSoftmax) {
  const ModelSpec logistic = ModelSpec::logistic(2);
  const Vector f{{0.3}};
  const double p = 1.0 / (1.0 + std::exp(-0.3));
  EXPECT_NEAR(link_mean(logistic, f)(0), p, 1e-15);
  EXPECT_NEAR(link_derivative(logistic, f)(0), p * (1 - p), 1e-15);

  const ModelSpec softmax = ModelSpec::softmax(2, 3);
  const Vector z{{1000.0, 999.0, -5.0}};
  const Vector pz = link_mean(softmax, z);
  EXPECT_TRUE(all_finite(pz));
  EXPECT_NEAR(pz.sum(), 1.0, 1e-15);
  const Matrix lambda = link_hessian(softmax, z);
  EXPECT_LE((lambda - (Matrix(pz.asDiagonal()) - pz * pz.transpose())).lpNorm<Eigen::Infinity>(), 1e-15);
  EXPECT_LE((link_derivative(softmax, z) - lambda.diagonal()).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(Losses, StableForLargeLogits) {
  Dataset data;
  data.task = Task::kBinary;
  data.num_classes = 2;
  data.features = Matrix::Ones(1, 1);
  data.labels = Vector::Zero(1);
  const ModelSpec model = ModelSpec::logistic(1);
  const double l = loss_from_output(model, Vector::Constant(1, 800.0), data, 0);
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, 800.0, 1e-9);
  EXPECT_NEAR(nll_from_output(model, Vector::Constant(1, 0.0), data, 0), std::log(2.0), 1e-15);
}

TEST(Losses, RegressionNllAddsNormalizer) {
  Dataset data = testing::random_regression(1, 3, 2, 1.0);
  const ModelSpec model = ModelSpec::linear(2);
  const Vector f{{0.25}};
  EXPECT_NEAR(nll_from_output(model, f, data, 0) - loss_from_output(model, f, data, 0),
              0.5 * std::log(2.0 * M_PI), 1e-14);
}

TEST(ModelSpec, ParameterDimensions) {
  EXPECT_EQ(ModelSpec::linear(4).parameter_dim(), 4);
  EXPECT_EQ(ModelSpec::logistic(4, true).parameter_dim(), 5);
  EXPECT_EQ(ModelSpec::softmax(4, 3, true).parameter_dim(), 15);
  EXPECT_EQ(ModelSpec::mlp(2, Task::kMulticlass, 3, {4}).parameter_dim(), 2 * 4 + 4 + 4 * 3 + 3);
  EXPECT_EQ(ModelSpec::mlp(2, Task::kBinary, 2, {4}).output_dim, 1);
}

TEST(ModelSpec, IncompatibleDataRejected) {
  const Dataset data = testing::random_classification(1, 10, 3, 3, 1.0);
  EXPECT_THROW(ModelSpec::logistic(3).check_compatible(data), Error);
  EXPECT_THROW(ModelSpec::softmax(2, 3).check_compatible(data), Error);
  EXPECT_NO_THROW(ModelSpec::softmax(3, 3).check_compatible(data));
}

TEST(Dataset, SubsetsAndLabels) {
  const Dataset data = testing::random_classification(8, 12, 2, 3, 1.0);
  std::size_t total = 0;
  for (int c = 0; c < 3; ++c) total += data.indices_of_class(c).size();
  EXPECT_EQ(total, 12u);
  const std::vector<Index> rows = {1, 5};
  const Dataset sub = data.subset(rows);
  EXPECT_EQ(sub.size(), 2);
  EXPECT_EQ(sub.features.row(1), data.features.row(5));
  EXPECT_EQ(data.without(rows).size(), 10);
  Dataset broken = data;
  broken.labels(0) = 1.5;
  EXPECT_THROW(broken.validate(), Error);
}

TEST(EvalModes, NamesRoundTrip) {
  for (auto kind : {EvalMode::Kind::kMean, EvalMode::Kind::kSample, EvalMode::Kind::kMonteCarlo}) {
    EXPECT_EQ(parse_eval_mode(eval_mode_name(kind)), kind);
  }
  EXPECT_THROW(parse_eval_mode("median"), Error);
}

TEST(Smoothing, ExpectedGradientIsDeterministicInSeed) {
  const PosteriorState q = PosteriorState::diag(Vector{{0.5, -0.2}}, Vector{{4.0, 9.0}});
  const ScalarLoss loss = [](const Vector& t) { return t.squaredNorm(); };
  const GradientFn grad = [](const Vector& t) -> Vector { return 2.0 * t; };
  const SmoothedGradient a = expected_grad_smoothed(q, loss, grad, 500, 17);
  const SmoothedGradient b = expected_grad_smoothed(q, loss, grad, 500, 17);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_LE(((a.mean - 2.0 * q.mean()).array().abs() - 4.0 * a.standard_error.array()).maxCoeff(), 0.0);
}

TEST(Smoothing, BonnetOnAbsoluteValue) {
  // d/dm E|theta| = erf(m / (s sqrt 2)) for theta ~ N(m, s^2).
  const double m = 0.4;
  const double s = 0.7;
  const PosteriorState q = PosteriorState::diag(Vector{{m}}, Vector{{1.0 / (s * s)}});
  const ScalarLoss loss = [](const Vector& t) { return std::abs(t(0)); };
  const GradientFn grad = [](const Vector& t) -> Vector { return Vector::Constant(1, t(0) > 0 ? 1.0 : -1.0); };
  const SmoothedGradient est = expected_grad_smoothed(q, loss, grad, 20000, 5);
  EXPECT_NEAR(est.mean(0), std::erf(m / (s * std::sqrt(2.0))), tol::kMonteCarloSigmas * est.standard_error(0));
  const SmoothedGradient score = expected_grad_smoothed(q, loss, nullptr, 20000, 5);
  EXPECT_NEAR(score.mean(0), std::erf(m / (s * std::sqrt(2.0))), tol::kMonteCarloSigmas * score.standard_error(0));
}

}  // namespace
}  // namespace mempert

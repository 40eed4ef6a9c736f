#pragma once
// Ground truth: brute-force retraining, exact conjugate refits, finite
// differences and rank statistics.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mempert/expfam.hpp"
#include "mempert/models.hpp"
#include "mempert/mpe.hpp"
#include "mempert/optim.hpp"
#include "mempert/tolerances.hpp"

namespace mempert {

struct RetrainConfig {
  // Convex models: damped Newton.
  double tolerance = tol::kConvexRetrain;
  int max_newton_iterations = 100;
  // MLP: full-batch Adam with a cosine schedule.
  int epochs = 300;
  double lr = 1e-2;
  double lr_min = 1e-4;
  double mlp_tolerance = tol::kNonconvexRetrain;
  std::uint64_t seed = 0;
};

struct RetrainResult {
  Vector theta;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Minimizes sum_i w_i l_i + delta |theta|^2 / 2 with w_i = 1 - eps_i for the
// perturbed indices (eps = 1 removes the example) and 1 elsewhere, starting
// from `warm_start`. Non-convergence is reported in the result, not thrown.
RetrainResult retrain_without(const ModelSpec& model, const Dataset& data,
                              const PerturbationSpec& pert, const RetrainConfig& config,
                              const Vector& warm_start);

// Full-data fit from `start` with the same solver.
RetrainResult fit(const ModelSpec& model, const Dataset& data, const RetrainConfig& config,
                  const Vector& start);

enum class ConjugateKind { kBetaBernoulli, kRidge };

// Closed-form posterior on data \ removed. Beta-Bernoulli reads the 0/1
// labels and counts them as integers; ridge uses the raw features with unit
// noise, lambda = (X^T y, -(X^T X + delta I) / 2).
NaturalParams exact_conjugate_refit(ConjugateKind kind, const Dataset& data,
                                    std::span<const Index> removed,
                                    const BetaParams& beta_prior = {});

using VectorFn = std::function<Vector(const Vector&)>;

Vector fd_gradient(const ScalarLoss& fn, const Vector& point,
                   double step = tol::kFiniteDifferenceStep);
// P x K with column k = d fn_k / d point (same layout as OutputJacobian).
Matrix fd_jacobian(const VectorFn& fn, const Vector& point,
                   double step = tol::kFiniteDifferenceStep);

// |a - b|_inf / max(|a|_inf, |b|_inf, tiny)
double relative_error(const Matrix& a, const Matrix& b);

// Worst-case relative error between `gradient` and central differences of `fn`.
double finite_difference_check(const ScalarLoss& fn, const GradientFn& gradient,
                               const Vector& point, double step = tol::kFiniteDifferenceStep);
// Same for a vector map and its P x K Jacobian.
double finite_difference_check(const VectorFn& fn, const std::function<Matrix(const Vector&)>& jacobian,
                               const Vector& point, double step = tol::kFiniteDifferenceStep);
// Directional: gradient . d against (fn(x + h d) - fn(x - h d)) / 2h.
double finite_difference_check(const ScalarLoss& fn, const GradientFn& gradient,
                               const Vector& point, const Vector& direction,
                               double step = tol::kFiniteDifferenceStep);

enum class CorrelationKind { kSpearman, kPearson };

// Average ranks for ties; constant input raises CorrelationUndefined.
double rank_correlation(std::span<const double> xs, std::span<const double> ys,
                        CorrelationKind kind = CorrelationKind::kSpearman);

struct DeviationComparison {
  std::string id;
  Vector true_deviation;       // sigma(f(theta^{\M})) - sigma(f(theta_*)) over M's outputs
  Vector estimated_deviation;  // sigma' v e over the same outputs
  double true_norm = 0.0;      // |theta^{\M} - theta_*|
  double estimate_norm = 0.0;  // |P^{-1} sum_M grad l_j|
  bool retrain_converged = true;

  double true_score() const { return true_deviation.cwiseAbs().sum(); }
  double estimate_score() const { return estimated_deviation.cwiseAbs().sum(); }
};

// Removes `group` from the data, retrains warm-started at theta_star, and
// pairs the truth with the estimate from `view` in the given group mode.
DeviationComparison compare_removal(const ModelSpec& model, const Dataset& data,
                                    const Vector& theta_star, const PreconditionerView& view,
                                    std::span<const Index> group, GroupMode mode,
                                    const RetrainConfig& config, std::string id);

std::string comparison_csv_header();
std::string comparison_csv_row(const DeviationComparison& row);

}  // namespace mempert

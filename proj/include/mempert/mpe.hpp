#pragma once
// Memory-perturbation estimators.
//
// Perturbing example j with weight eps_j shifts the posterior natural
// parameter by approximately rho * sum_j eps_j * g~_j, where g~_j is the
// natural gradient of l_j. For Gaussians g~_j = (g_j - H_j m, H_j / 2), whose
// induced mean shift is S^{-1} g_j: a preconditioned gradient step for the
// perturbed examples. Output-space deviations are the bilinear products
// sigma'(f) * v * e with v = J^T S^{-1} J and e = sigma(f) - y.

#include <span>
#include <string>
#include <vector>

#include "mempert/expfam.hpp"
#include "mempert/models.hpp"
#include "mempert/optim.hpp"

namespace mempert {

struct PerturbationSpec {
  std::vector<Index> indices;
  std::vector<double> epsilons;  // empty = all ones

  double epsilon(std::size_t k) const { return epsilons.empty() ? 1.0 : epsilons[k]; }
  void validate(Index num_examples) const;
};

struct GaussianNaturalGradient {
  Vector first;      // g - H m
  Curvature second;  // H / 2, shaped like q's precision

  NaturalParams natural() const;
};

// Natural gradient of l_i at q. The curvature shape follows q: full precision
// uses the exact Hessian (convex models), diagonal / scaled identity use the
// diagonal GGN.
GaussianNaturalGradient gaussian_natural_gradient(const PosteriorState& q, const ModelSpec& model,
                                                  const Dataset& data, Index i,
                                                  const EvalMode& mode = {});

// For conjugate factors the natural gradient of -log p~_j is -lambda~_j.
NaturalParams conjugate_natural_gradient(const LikelihoodNat& factor);

// rho * sum_j eps_j g~_j, zero-shaped like `lambda` when there are no terms.
NaturalParams mpe_deviation_natural(const NaturalParams& lambda,
                                    std::span<const NaturalParams> contributions,
                                    std::span<const double> epsilons = {}, double rho = 1.0);

// First-order mean shift induced by a natural-parameter change at q:
// S^{-1} (d_first + 2 d_second m).
Vector mean_deviation_linearized(const PosteriorState& q, const NaturalParams& delta_lambda);
// Exact mean of lambda(q) + delta_lambda minus m (leave-out precision kept).
Vector mean_deviation_exact(const PosteriorState& q, const NaturalParams& delta_lambda);

Vector sensitivity_direction(const PreconditionerView& view, const Vector& grad);

struct SensitivityRecord {
  Index id = 0;
  Vector e;             // sigma(f) - y per output
  Vector v;             // j_c^T P^{-1} j_c per output
  Vector output_shift;  // v * e
  Vector deviation;     // sigma'(f) * v * e
  double score = 0.0;   // sum_c |deviation_c|
  Vector direction;     // P^{-1} grad l_i, filled on request
};

SensitivityRecord output_deviation(const ModelSpec& model, const Vector& theta,
                                   const PreconditionerView& view, const Dataset& data, Index i,
                                   bool with_direction = false);

std::vector<SensitivityRecord> output_deviations(const ModelSpec& model, const Vector& theta,
                                                 const PreconditionerView& view,
                                                 const Dataset& data);

enum class GroupMode { kFull, kDiag };

inline constexpr Index kDefaultGroupCap = 512;

// Per-example prediction deviations of the examples in `group` when the whole
// group is removed. Full mode couples examples (and classes) through
// J_M^T P^{-1} J_M; diag mode keeps only each example's own v. Full mode
// with |M| * K above `cap` raises ResourceLimit.
std::vector<Vector> group_output_deviation(const ModelSpec& model, const Vector& theta,
                                           const PreconditionerView& view, const Dataset& data,
                                           std::span<const Index> group, GroupMode mode,
                                           Index cap = kDefaultGroupCap);

// Sum of |deviation| over the group's examples and outputs.
double group_score(const std::vector<Vector>& deviations);

struct LinregLoo {
  Vector delta_theta;  // theta^{\i} - theta_*
  double delta_f = 0.0;
  double e = 0.0;
  double e_loo = 0.0;      // e_i / (1 - v_i)
  double leverage = 0.0;   // v_i = x^T H^{-1} x
  double v_loo = 0.0;      // x^T (H^{\i})^{-1} x
};

// Exact leave-one-out for ridge regression on the raw features (no intercept
// column is added). Computes the direct leave-out solve and the
// Sherman-Morrison form and fails with NumericalFailure if they disagree.
LinregLoo linreg_loo_exact(const Dataset& data, Index i);

struct LinregEpsilonDerivative {
  Vector dtheta;    // d theta / d eps for the loss L - eps l_i
  double df = 0.0;  // x_i^T dtheta
};

LinregEpsilonDerivative linreg_epsilon_derivative(const Dataset& data, Index i, double epsilon);

// rho * view(sum_j eps_j grad l_j(theta)).
Vector parameter_deviation_estimate(const ModelSpec& model, const Vector& theta,
                                    const PreconditionerView& view, const Dataset& data,
                                    const PerturbationSpec& pert, double rho = 1.0);
// Same, from a trainer's iterate and own preconditioner.
Vector parameter_deviation_estimate(const TrainerState& state, const ModelSpec& model,
                                    const Dataset& data, const PerturbationSpec& pert,
                                    bool scale_by_rate = false);

// Example ids ordered by descending score, ties by ascending id.
std::vector<Index> rank_by_score(const std::vector<SensitivityRecord>& records);

std::string sensitivity_csv_header();
std::string sensitivity_csv_row(const SensitivityRecord& record);

}  // namespace mempert

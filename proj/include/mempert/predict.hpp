#pragma once
// Generalization estimates from training data alone. Each example's outputs
// are shifted by its own v * e (the linearized leave-one-out prediction) and
// scored under the likelihood; nothing is retrained.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mempert/models.hpp"
#include "mempert/optim.hpp"

namespace mempert {

struct GeneralizationReport {
  double loo_sum = 0.0;
  double loo_mean = 0.0;
  std::vector<double> per_example;
  std::optional<double> test_nll;  // mean NLL on held-out data
  long step = 0;
  Index n = 0;
};

// -sum_i log p(y_i | sigma(f_i + v_i e_i)); `variance_scale` multiplies every v.
GeneralizationReport loo_estimate(const ModelSpec& model, const Vector& theta,
                                  const PreconditionerView& view, const Dataset& data,
                                  double variance_scale = 1.0);

// loo_estimate at the IBLR mean with its diagonal precision N (h_t + delta / N).
GeneralizationReport loo_estimate_iblr(const ModelSpec& model, const TrainerState& trainer,
                                       const Dataset& data);

enum class SubsetMode {
  kSingleGradient,  // each example shifted by its own v e
  kGroupSum,        // shifted by J_i^T P^{-1} sum_{j in C} grad l_j
};

// Leave-group-out loss estimate, summed over the training examples in `subset`.
double subset_loss_estimate(const ModelSpec& model, const Vector& theta,
                            const PreconditionerView& view, const Dataset& data,
                            std::span<const Index> subset,
                            SubsetMode mode = SubsetMode::kSingleGradient);

// Held-out variant: removal of `subset` from `train`, scored on the rows
// `heldout_rows` of `heldout` with the group-sum shift.
double subset_loss_estimate_heldout(const ModelSpec& model, const Vector& theta,
                                    const PreconditionerView& view, const Dataset& train,
                                    std::span<const Index> subset, const Dataset& heldout,
                                    std::span<const Index> heldout_rows);

struct HeldoutMetrics {
  double nll_mean = 0.0;
  double nll_sum = 0.0;
  double accuracy = 0.0;  // classification only
  bool has_accuracy = false;
  Index n = 0;
};

HeldoutMetrics test_nll(const ModelSpec& model, const Vector& theta, const Dataset& heldout);

// Sum of per-example NLL at theta.
double training_nll(const ModelSpec& model, const Vector& theta, const Dataset& data);

// {"step":..,"loo":..,"test_nll":..,"n":..}; loo is the mean.
std::string report_jsonl(const GeneralizationReport& report);

}  // namespace mempert

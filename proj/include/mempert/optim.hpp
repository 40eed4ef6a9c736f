#pragma once
// Trainers from the Bayesian-learning-rule family. Each keeps the
// preconditioner its sensitivity measure needs:
//
//   SGD        identity
//   Newton     H_{t-1}, the full Hessian at the previous iterate
//   ON         S_t = (1 - rho) S_{t-1} + rho * Hessian
//   ONDiag     s_t, same recursion on the diagonal GGN
//   IBLR       h_t, exposed as the precision N (h_t + delta / N)
//   Adaptive   Adam moments, exposed as N sqrt(s_t)
//
// Newton/ON/ONDiag work with sum-scaled losses, (N/|B|) sum_B l_i + delta R;
// SGD, Adaptive and IBLR use batch means with weight decay delta / N.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "mempert/expfam.hpp"
#include "mempert/models.hpp"

namespace mempert {

enum class Algorithm { kSgd, kNewton, kOnlineNewton, kOnlineNewtonDiag, kIblr, kAdaptive };

std::string_view algorithm_name(Algorithm algorithm);
Algorithm parse_algorithm(std::string_view name);

struct LrSchedule {
  enum class Kind { kConstant, kCosine };
  Kind kind = Kind::kConstant;
  double start = 0.1;
  double min = 0.0;
  long total_steps = 1;

  static LrSchedule constant(double lr) { return {Kind::kConstant, lr, lr, 1}; }
  static LrSchedule cosine(double start, double min, long total_steps) {
    return {Kind::kCosine, start, min, total_steps};
  }
  // min + (start - min) (1 + cos(pi t / total)) / 2, held at min past the end.
  double at(long step) const;
};

struct Hyper {
  LrSchedule schedule = LrSchedule::constant(0.1);
  double beta1 = 0.9;
  double beta2 = 0.999;
  double h0 = 0.1;
  double eps = 1e-8;
  double momentum = 0.0;   // SGD heavy-ball coefficient
  Index batch_size = 0;    // 0 = full batch
  int mc_samples = 1;      // IBLR draws per step
  std::uint64_t seed = 0;
  double init_scale = 0.1; // theta_0 ~ N(0, init_scale^2 I)
  EvalMode eval;           // where ON/ONDiag/Newton evaluate expectations

  void validate(Algorithm algorithm) const;
};

// Linear SPD operator P^{-1} used as a sensitivity metric.
class PreconditionerView {
 public:
  enum class Shape { kFullInverseApply, kDiagInverseApply, kDiagInverseSqrtApply, kIdentity };

  static PreconditionerView identity(Index dim);
  // Factorizes `precision` (one jitter retry, then SingularCurvature).
  static PreconditionerView full_inverse(Matrix precision);
  static PreconditionerView diag_inverse(Vector precision);
  // apply(v) = v / (n * sqrt(s)), sqrt(s) floored at `floor`.
  static PreconditionerView diag_inverse_sqrt(const Vector& s, double n, double floor);
  static PreconditionerView from_curvature(const Curvature& curvature);

  Shape shape() const { return shape_; }
  Index dim() const { return dim_; }

  Vector apply(const Vector& v) const;
  Matrix apply(const Matrix& columns) const;
  // j^T P^{-1} j
  double quadratic(const Vector& j) const;
  // Precision diagonal (diag shapes: effective d with apply = v / d).
  Vector precision_diagonal() const;
  // Dense precision (tests and small problems).
  Matrix precision_dense() const;

 private:
  PreconditionerView() = default;

  Shape shape_ = Shape::kIdentity;
  Index dim_ = 0;
  Matrix full_;
  std::optional<Cholesky> factor_;
  Vector diag_;
  Vector inverse_diag_;
};

std::string_view view_shape_name(PreconditionerView::Shape shape);

struct TrainerState {
  Algorithm algorithm = Algorithm::kSgd;
  Hyper hyper;
  Index num_examples = 0;
  double delta = 0.0;

  Vector theta;      // theta_t, or the mean m_t for IBLR
  Matrix precision;  // Newton H_{t-1}; ON S_t
  Vector scale;      // ONDiag s_t; IBLR h_t; Adaptive second moment s_t
  Vector momentum;   // SGD velocity; IBLR g_t; Adaptive first moment r_t
  long step = 0;
  double last_rate = 0.0;

  std::mt19937_64 rng;
  std::vector<Index> order;
  std::size_t cursor = 0;
};

TrainerState init_trainer(const ModelSpec& model, const Dataset& data, Algorithm algorithm,
                          const Hyper& hyper);

// One update on `batch`.
void step(TrainerState& state, const ModelSpec& model, const Dataset& data,
          std::span<const Index> batch);

// Next minibatch from a seeded without-replacement pass over the data.
std::vector<Index> next_batch(TrainerState& state);
Index steps_per_epoch(const TrainerState& state);
// Runs one epoch; returns the number of steps taken.
Index train_epoch(TrainerState& state, const ModelSpec& model, const Dataset& data);

PreconditionerView preconditioner_view(const TrainerState& state);

// IBLR posterior variance 1 / (N (h_t + delta / N)).
Vector iblr_variance(const TrainerState& state);

// Gaussian posterior implied by the trainer's mean and preconditioner.
PosteriorState posterior_state(const TrainerState& state);

}  // namespace mempert

#pragma once
// Differentiable predictive models over a labelled dataset.
//
// Every model produces a K-vector of outputs f_i(theta) per example, mapped
// through a link sigma(.) (identity, sigmoid, softmax). Per-example loss is
// the negative log-likelihood of y_i under sigma(f_i); the regularizer is
// delta * |theta|^2 / 2 and is toggled per call.
//
// Parameter layouts:
//   Linear / Logistic: theta = [w (D), b (1 if intercept)]
//   Softmax:           class-major, theta[c * D' + d] with D' = D + intercept
//   MLP:               per layer, W (out x in, row-major) followed by b (out)

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "mempert/expfam.hpp"
#include "mempert/linalg.hpp"

namespace mempert {

enum class Task { kRegression, kBinary, kMulticlass };

std::string_view task_name(Task task);
Task parse_task(std::string_view name);

struct Dataset {
  Matrix features;  // N x D
  Vector labels;    // targets, or class indices stored as doubles
  Task task = Task::kRegression;
  int num_classes = 1;
  double delta = 1.0;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  int label_class(Index i) const { return static_cast<int>(labels(i)); }

  // Throws InvalidParameter / LabelError on a broken dataset.
  void validate() const;

  Dataset subset(std::span<const Index> rows) const;
  Dataset without(std::span<const Index> rows) const;
  std::vector<Index> indices_of_class(int c) const;
};

std::vector<Index> all_indices(const Dataset& data);

enum class Architecture { kLinear, kLogistic, kSoftmax, kMlp };
enum class Link { kIdentity, kSigmoid, kSoftmax };

std::string_view architecture_name(Architecture a);
Architecture parse_architecture(std::string_view name);

struct ModelSpec {
  Architecture architecture = Architecture::kLinear;
  Link link = Link::kIdentity;
  Index input_dim = 1;
  Index output_dim = 1;
  std::vector<Index> hidden;  // MLP only
  bool intercept = false;     // convex models only; MLP layers always carry biases

  static ModelSpec linear(Index input_dim, bool intercept = false);
  static ModelSpec logistic(Index input_dim, bool intercept = false);
  static ModelSpec softmax(Index input_dim, Index num_classes, bool intercept = false);
  // Output link chosen from the task: regression identity, binary sigmoid (K=1),
  // multiclass softmax (K=C).
  static ModelSpec mlp(Index input_dim, Task task, int num_classes,
                       std::vector<Index> hidden = {32, 16});
  // Convex model matching the task.
  static ModelSpec for_task(Task task, Index input_dim, int num_classes, bool intercept);

  Index parameter_dim() const;
  bool convex() const { return architecture != Architecture::kMlp; }
  // Throws InvalidParameter when the model cannot fit this dataset.
  void check_compatible(const Dataset& data) const;
};

Vector output(const ModelSpec& model, const Vector& theta, const Vector& x);
Vector output(const ModelSpec& model, const Vector& theta, const Dataset& data, Index i);

struct OutputJacobian {
  Vector f;         // K
  Matrix jacobian;  // P x K, column k = d f_k / d theta
};

OutputJacobian output_and_jacobian(const ModelSpec& model, const Vector& theta, const Vector& x);
OutputJacobian output_and_jacobian(const ModelSpec& model, const Vector& theta,
                                   const Dataset& data, Index i);

// sigma(f)
Vector link_mean(const ModelSpec& model, const Vector& f);
// Output-space Hessian of the NLL, Lambda = d sigma / d f (K x K).
Matrix link_hessian(const ModelSpec& model, const Vector& f);
// Diagonal of d sigma / d f: 1, p(1-p), or p_c(1-p_c).
Vector link_derivative(const ModelSpec& model, const Vector& f);

// Label in output space: the target, or a one-hot / 0-1 encoding.
Vector encode_label(const ModelSpec& model, const Dataset& data, Index i);

// e_i = sigma(f_i) - y_i
Vector residual(const ModelSpec& model, const Vector& theta, const Dataset& data, Index i);
Vector residual_from_output(const ModelSpec& model, const Vector& f, const Dataset& data, Index i);

// Training loss of one example given its outputs: 0.5 (f - y)^2 for regression,
// the Bernoulli / categorical NLL otherwise.
double loss_from_output(const ModelSpec& model, const Vector& f, const Dataset& data, Index i);
// Full negative log-likelihood; regression adds 0.5 log(2 pi).
double nll_from_output(const ModelSpec& model, const Vector& f, const Dataset& data, Index i);

struct EvalOptions {
  bool include_regularizer = true;
  // Multiplies the data term: data_scale * sum_i w_i l_i.
  double data_scale = 1.0;
  // Per-entry weights aligned with the subset (empty = all ones).
  std::span<const double> weights = {};
};

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

// Over all examples.
LossGrad loss_and_grad(const ModelSpec& model, const Vector& theta, const Dataset& data,
                       const EvalOptions& options = {});
// Over `subset`; an empty subset leaves only the regularizer.
LossGrad loss_and_grad(const ModelSpec& model, const Vector& theta, const Dataset& data,
                       std::span<const Index> subset, const EvalOptions& options = {});

double loss_value(const ModelSpec& model, const Vector& theta, const Dataset& data,
                  const EvalOptions& options = {});

// grad l_i, by closed form (convex models) or backprop (MLP).
Vector example_gradient(const ModelSpec& model, const Vector& theta, const Dataset& data, Index i);
// grad l_i assembled as J_i e_i.
Vector example_gradient_via_jacobian(const ModelSpec& model, const Vector& theta,
                                     const Dataset& data, Index i);

enum class CurvatureKind { kFullHessian, kDiagGgn, kScaledIdentity };

std::string_view curvature_kind_name(CurvatureKind kind);

struct Curvature {
  CurvatureKind kind = CurvatureKind::kFullHessian;
  Matrix full;        // kFullHessian
  Vector diag;        // kDiagGgn
  double scale = 0.0; // kScaledIdentity
  bool includes_regularizer = false;

  Index dim() const;
  Matrix dense() const;
  Vector diagonal() const;
};

// sum_i J_i Lambda_i J_i^T (+ delta I); FullHessian is exact for the convex
// models, DiagGgn is available for all, ScaledIdentity averages the diagonal.
Curvature curvature(const ModelSpec& model, const Vector& theta, const Dataset& data,
                    CurvatureKind kind, const EvalOptions& options = {});
Curvature curvature(const ModelSpec& model, const Vector& theta, const Dataset& data,
                    std::span<const Index> subset, CurvatureKind kind,
                    const EvalOptions& options = {});

// Per-example J_i Lambda_i J_i^T, without the regularizer.
Curvature example_curvature(const ModelSpec& model, const Vector& theta, const Dataset& data,
                            Index i, CurvatureKind kind);

// Where expectations under q are evaluated.
struct EvalMode {
  enum class Kind { kMean, kSample, kMonteCarlo };
  Kind kind = Kind::kMean;
  int samples = 1;
  std::uint64_t seed = 0;

  static EvalMode mean() { return {}; }
  static EvalMode sample(std::uint64_t seed) { return {Kind::kSample, 1, seed}; }
  static EvalMode monte_carlo(int n, std::uint64_t seed) { return {Kind::kMonteCarlo, n, seed}; }
};

std::string_view eval_mode_name(EvalMode::Kind kind);
EvalMode::Kind parse_eval_mode(std::string_view name);

struct SmoothedGradient {
  Vector mean;
  Vector standard_error;
  int samples = 0;
};

using ScalarLoss = std::function<double(const Vector&)>;
using GradientFn = std::function<Vector(const Vector&)>;

// Monte Carlo estimate of grad_m E_q[l(theta)]. With a gradient, averages
// grad l at samples (Bonnet); without one, uses the score-function identity
// E[l(theta) S (theta - m)]. Deterministic in `seed`.
SmoothedGradient expected_grad_smoothed(const PosteriorState& q, const ScalarLoss& loss,
                                        const GradientFn& gradient, int n_samples,
                                        std::uint64_t seed);

// E_q[grad l_i] under the given evaluation mode (mean = plain gradient at m).
Vector expected_grad_smoothed(const ModelSpec& model, const PosteriorState& q,
                              const Dataset& data, Index i, const EvalMode& mode);

}  // namespace mempert

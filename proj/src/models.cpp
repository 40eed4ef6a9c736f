#include "mempert/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "mempert/error.hpp"

namespace mempert {
namespace {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double sigmoid(double f) {
  if (f >= 0.0) return 1.0 / (1.0 + std::exp(-f));
  const double z = std::exp(f);
  return z / (1.0 + z);
}

double softplus(double f) { return std::max(f, 0.0) + std::log1p(std::exp(-std::abs(f))); }

double log_sum_exp(const Vector& f) {
  const double top = f.maxCoeff();
  return top + std::log((f.array() - top).exp().sum());
}

Vector softmax(const Vector& f) {
  Vector p = (f.array() - f.maxCoeff()).exp().matrix();
  return p / p.sum();
}

// Offsets of each MLP layer inside theta.
struct MlpLayout {
  std::vector<Index> sizes;  // D, h1, ..., K
  std::vector<Index> weight_offset;
  std::vector<Index> bias_offset;
  Index total = 0;

  explicit MlpLayout(const ModelSpec& model) {
    sizes.push_back(model.input_dim);
    for (Index h : model.hidden) sizes.push_back(h);
    sizes.push_back(model.output_dim);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      weight_offset.push_back(total);
      total += sizes[l + 1] * sizes[l];
      bias_offset.push_back(total);
      total += sizes[l + 1];
    }
  }
  std::size_t layers() const { return weight_offset.size(); }
  RowMajorMap weight(const Vector& theta, std::size_t l) const {
    return RowMajorMap(theta.data() + weight_offset[l], sizes[l + 1], sizes[l]);
  }
};

// Activations a_0 = x, a_l = tanh(W_l a_{l-1} + b_l), output layer linear.
std::vector<Vector> mlp_forward(const MlpLayout& layout, const Vector& theta, const Vector& x) {
  std::vector<Vector> acts;
  acts.reserve(layout.layers() + 1);
  acts.push_back(x);
  for (std::size_t l = 0; l < layout.layers(); ++l) {
    Vector z = layout.weight(theta, l) * acts.back() +
               theta.segment(layout.bias_offset[l], layout.sizes[l + 1]);
    if (l + 1 < layout.layers()) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
  }
  return acts;
}

// Backpropagates output cotangents (K x R columns); returns P x R.
Matrix mlp_backward(const MlpLayout& layout, const Vector& theta, const std::vector<Vector>& acts,
                    Matrix delta) {
  Matrix out = Matrix::Zero(layout.total, delta.cols());
  for (std::size_t l = layout.layers(); l-- > 0;) {
    const Vector& input = acts[l];
    const Index rows = layout.sizes[l + 1];
    const Index cols = layout.sizes[l];
    for (Index r = 0; r < delta.cols(); ++r) {
      for (Index o = 0; o < rows; ++o) {
        out.col(r).segment(layout.weight_offset[l] + o * cols, cols) = delta(o, r) * input;
      }
    }
    out.block(layout.bias_offset[l], 0, rows, delta.cols()) = delta;
    if (l > 0) {
      const Vector slope = (1.0 - input.array().square()).matrix();
      delta = (layout.weight(theta, l).transpose() * delta).array().colwise() * slope.array();
    }
  }
  return out;
}

Vector augmented(const ModelSpec& model, const Vector& x) {
  if (!model.intercept) return x;
  Vector out(x.size() + 1);
  out << x, 1.0;
  return out;
}

void require_finite_output(const Vector& f) {
  if (!f.allFinite()) fail(ErrorCode::kNumericalFailure, "non-finite model output");
}

void check_theta(const ModelSpec& model, const Vector& theta) {
  if (theta.size() != model.parameter_dim()) {
    fail(ErrorCode::kInvalidParameter, "theta has " + std::to_string(theta.size()) +
                                           " entries, model expects " +
                                           std::to_string(model.parameter_dim()));
  }
}

double weight_at(const EvalOptions& options, std::size_t k) {
  return options.weights.empty() ? 1.0 : options.weights[k];
}

void check_weights(const EvalOptions& options, std::size_t n) {
  if (!options.weights.empty() && options.weights.size() != n) {
    fail(ErrorCode::kInvalidParameter, "weights must align with the evaluated examples");
  }
}

// Precision times (theta - m), i.e. the Gaussian score up to sign.
Vector precision_times(const PosteriorState& q, const Vector& v) {
  switch (q.shape()) {
    case PosteriorState::Shape::kFull: return q.full_precision() * v;
    case PosteriorState::Shape::kDiag: return q.precision_diagonal().cwiseProduct(v);
    case PosteriorState::Shape::kScaledIdentity: return q.identity_scale() * v;
  }
  return v;
}

}  // namespace

std::string_view task_name(Task task) {
  switch (task) {
    case Task::kRegression: return "regression";
    case Task::kBinary: return "binary";
    case Task::kMulticlass: return "multiclass";
  }
  return "unknown";
}

Task parse_task(std::string_view name) {
  if (name == "regression") return Task::kRegression;
  if (name == "binary") return Task::kBinary;
  if (name == "multiclass") return Task::kMulticlass;
  fail(ErrorCode::kInvalidParameter, "unknown task '" + std::string(name) + "'");
}

void Dataset::validate() const {
  if (size() < 1 || dim() < 1) fail(ErrorCode::kInvalidParameter, "dataset must have N >= 1, D >= 1");
  if (labels.size() != size()) fail(ErrorCode::kInvalidParameter, "label count differs from row count");
  if (!features.allFinite()) fail(ErrorCode::kInvalidParameter, "non-finite feature value");
  if (!labels.allFinite()) fail(ErrorCode::kLabelError, "non-finite label");
  if (!(delta >= 0.0) || !std::isfinite(delta)) fail(ErrorCode::kInvalidParameter, "delta must be >= 0");
  if (task == Task::kRegression) return;
  const int classes = task == Task::kBinary ? 2 : num_classes;
  if (task == Task::kBinary && num_classes != 2) {
    fail(ErrorCode::kInvalidParameter, "binary task needs num_classes = 2");
  }
  if (classes < 2) fail(ErrorCode::kInvalidParameter, "classification needs at least 2 classes");
  for (Index i = 0; i < size(); ++i) {
    const double y = labels(i);
    if (y != std::floor(y) || y < 0 || y >= classes) {
      fail(ErrorCode::kLabelError, "label " + std::to_string(y) + " at row " + std::to_string(i) +
                                       " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

Dataset Dataset::subset(std::span<const Index> rows) const {
  Dataset out{Matrix(static_cast<Index>(rows.size()), dim()),
              Vector(static_cast<Index>(rows.size())), task, num_classes, delta};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= size()) fail(ErrorCode::kInvalidParameter, "row index out of range");
    out.features.row(static_cast<Index>(k)) = features.row(rows[k]);
    out.labels(static_cast<Index>(k)) = labels(rows[k]);
  }
  return out;
}

Dataset Dataset::without(std::span<const Index> rows) const {
  std::vector<char> drop(static_cast<std::size_t>(size()), 0);
  for (Index r : rows) {
    if (r < 0 || r >= size()) fail(ErrorCode::kInvalidParameter, "row index out of range");
    drop[static_cast<std::size_t>(r)] = 1;
  }
  std::vector<Index> keep;
  for (Index i = 0; i < size(); ++i) {
    if (!drop[static_cast<std::size_t>(i)]) keep.push_back(i);
  }
  return subset(keep);
}

std::vector<Index> Dataset::indices_of_class(int c) const {
  std::vector<Index> out;
  for (Index i = 0; i < size(); ++i) {
    if (label_class(i) == c) out.push_back(i);
  }
  return out;
}

std::vector<Index> all_indices(const Dataset& data) {
  std::vector<Index> out(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) out[static_cast<std::size_t>(i)] = i;
  return out;
}

std::string_view architecture_name(Architecture a) {
  switch (a) {
    case Architecture::kLinear: return "linear";
    case Architecture::kLogistic: return "logistic";
    case Architecture::kSoftmax: return "softmax";
    case Architecture::kMlp: return "mlp";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "linear") return Architecture::kLinear;
  if (name == "logistic") return Architecture::kLogistic;
  if (name == "softmax") return Architecture::kSoftmax;
  if (name == "mlp") return Architecture::kMlp;
  fail(ErrorCode::kInvalidParameter, "unknown architecture '" + std::string(name) + "'");
}

ModelSpec ModelSpec::linear(Index input_dim, bool intercept) {
  return ModelSpec{Architecture::kLinear, Link::kIdentity, input_dim, 1, {}, intercept};
}

ModelSpec ModelSpec::logistic(Index input_dim, bool intercept) {
  return ModelSpec{Architecture::kLogistic, Link::kSigmoid, input_dim, 1, {}, intercept};
}

ModelSpec ModelSpec::softmax(Index input_dim, Index num_classes, bool intercept) {
  return ModelSpec{Architecture::kSoftmax, Link::kSoftmax, input_dim, num_classes, {}, intercept};
}

ModelSpec ModelSpec::mlp(Index input_dim, Task task, int num_classes, std::vector<Index> hidden) {
  ModelSpec spec{Architecture::kMlp, Link::kIdentity, input_dim, 1, std::move(hidden), false};
  if (task == Task::kBinary) spec.link = Link::kSigmoid;
  if (task == Task::kMulticlass) {
    spec.link = Link::kSoftmax;
    spec.output_dim = num_classes;
  }
  return spec;
}

ModelSpec ModelSpec::for_task(Task task, Index input_dim, int num_classes, bool intercept) {
  switch (task) {
    case Task::kRegression: return linear(input_dim, intercept);
    case Task::kBinary: return logistic(input_dim, intercept);
    case Task::kMulticlass: return softmax(input_dim, num_classes, intercept);
  }
  return linear(input_dim, intercept);
}

Index ModelSpec::parameter_dim() const {
  const Index width = input_dim + (intercept ? 1 : 0);
  switch (architecture) {
    case Architecture::kLinear:
    case Architecture::kLogistic: return width;
    case Architecture::kSoftmax: return width * output_dim;
    case Architecture::kMlp: return MlpLayout(*this).total;
  }
  return 0;
}

void ModelSpec::check_compatible(const Dataset& data) const {
  if (input_dim != data.dim()) {
    fail(ErrorCode::kInvalidParameter, "model input_dim " + std::to_string(input_dim) +
                                           " differs from data dimension " +
                                           std::to_string(data.dim()));
  }
  const bool ok = (data.task == Task::kRegression && link == Link::kIdentity && output_dim == 1) ||
                  (data.task == Task::kBinary && link == Link::kSigmoid && output_dim == 1) ||
                  (data.task == Task::kMulticlass && link == Link::kSoftmax &&
                   output_dim == data.num_classes);
  if (!ok) {
    fail(ErrorCode::kInvalidParameter, std::string(architecture_name(architecture)) +
                                           " model does not match " +
                                           std::string(task_name(data.task)) + " data");
  }
  for (Index h : hidden) {
    if (h < 1) fail(ErrorCode::kInvalidParameter, "hidden widths must be positive");
  }
}

Vector output(const ModelSpec& model, const Vector& theta, const Vector& x) {
  check_theta(model, theta);
  Vector f;
  switch (model.architecture) {
    case Architecture::kLinear:
    case Architecture::kLogistic:
      f = Vector::Constant(1, theta.dot(augmented(model, x)));
      break;
    case Architecture::kSoftmax: {
      const Vector xa = augmented(model, x);
      f = RowMajorMap(theta.data(), model.output_dim, xa.size()) * xa;
      break;
    }
    case Architecture::kMlp: {
      const MlpLayout layout(model);
      f = mlp_forward(layout, theta, x).back();
      break;
    }
  }
  require_finite_output(f);
  return f;
}

Vector output(const ModelSpec& model, const Vector& theta, const Dataset& data, Index i) {
  return output(model, theta, Vector(data.features.row(i).transpose()));
}

OutputJacobian output_and_jacobian(const ModelSpec& model, const Vector& theta, const Vector& x) {
  check_theta(model, theta);
  OutputJacobian out;
  switch (model.architecture) {
    case Architecture::kLinear:
    case Architecture::kLogistic: {
      out.jacobian = augmented(model, x);
      out.f = Vector::Constant(1, theta.dot(out.jacobian.col(0)));
      break;
    }
    case Architecture::kSoftmax: {
      const Vector xa = augmented(model, x);
      const Index width = xa.size();
      out.f = RowMajorMap(theta.data(), model.output_dim, width) * xa;
      out.jacobian = Matrix::Zero(model.parameter_dim(), model.output_dim);
      for (Index c = 0; c < model.output_dim; ++c) out.jacobian.col(c).segment(c * width, width) = xa;
      break;
    }
    case Architecture::kMlp: {
      const MlpLayout layout(model);
      const auto acts = mlp_forward(layout, theta, x);
      out.f = acts.back();
      out.jacobian = mlp_backward(layout, theta, acts, Matrix::Identity(model.output_dim, model.output_dim));
      break;
    }
  }
  require_finite_output(out.f);
  return out;
}

OutputJacobian output_and_jacobian(const ModelSpec& model, const Vector& theta,
                                   const Dataset& data, Index i) {
  return output_and_jacobian(model, theta, Vector(data.features.row(i).transpose()));
}

Vector link_mean(const ModelSpec& model, const Vector& f) {
  switch (model.link) {
    case Link::kIdentity: return f;
    case Link::kSigmoid: return f.unaryExpr([](double v) { return sigmoid(v); });
    case Link::kSoftmax: return softmax(f);
  }
  return f;
}

Matrix link_hessian(const ModelSpec& model, const Vector& f) {
  switch (model.link) {
    case Link::kIdentity: return Matrix::Identity(f.size(), f.size());
    case Link::kSigmoid: {
      const double p = sigmoid(f(0));
      return Matrix::Constant(1, 1, p * (1.0 - p));
    }
    case Link::kSoftmax: {
      const Vector p = softmax(f);
      Matrix lambda = -p * p.transpose();
      lambda.diagonal() += p;
      return lambda;
    }
  }
  return Matrix::Identity(f.size(), f.size());
}

Vector link_derivative(const ModelSpec& model, const Vector& f) {
  if (model.link == Link::kIdentity) return Vector::Ones(f.size());
  const Vector p = link_mean(model, f);
  return p.cwiseProduct((1.0 - p.array()).matrix());
}

Vector encode_label(const ModelSpec& model, const Dataset& data, Index i) {
  if (model.link != Link::kSoftmax) return Vector::Constant(1, data.labels(i));
  Vector y = Vector::Zero(model.output_dim);
  y(data.label_class(i)) = 1.0;
  return y;
}

Vector residual_from_output(const ModelSpec& model, const Vector& f, const Dataset& data, Index i) {
  return link_mean(model, f) - encode_label(model, data, i);
}

Vector residual(const ModelSpec& model, const Vector& theta, const Dataset& data, Index i) {
  return residual_from_output(model, output(model, theta, data, i), data, i);
}

double loss_from_output(const ModelSpec& model, const Vector& f, const Dataset& data, Index i) {
  switch (model.link) {
    case Link::kIdentity: return 0.5 * (f - encode_label(model, data, i)).squaredNorm();
    case Link::kSigmoid: return softplus(f(0)) - data.labels(i) * f(0);
    case Link::kSoftmax: return log_sum_exp(f) - f(data.label_class(i));
  }
  return 0.0;
}

double nll_from_output(const ModelSpec& model, const Vector& f, const Dataset& data, Index i) {
  const double loss = loss_from_output(model, f, data, i);
  return model.link == Link::kIdentity ? loss + kHalfLog2Pi * static_cast<double>(f.size()) : loss;
}

Vector example_gradient(const ModelSpec& model, const Vector& theta, const Dataset& data, Index i) {
  const Vector x = data.features.row(i).transpose();
  switch (model.architecture) {
    case Architecture::kLinear:
    case Architecture::kLogistic: {
      const Vector xa = augmented(model, x);
      const Vector f = Vector::Constant(1, theta.dot(xa));
      require_finite_output(f);
      return residual_from_output(model, f, data, i)(0) * xa;
    }
    case Architecture::kSoftmax: {
      const Vector xa = augmented(model, x);
      const Vector f = RowMajorMap(theta.data(), model.output_dim, xa.size()) * xa;
      require_finite_output(f);
      const Vector e = residual_from_output(model, f, data, i);
      Vector g(model.parameter_dim());
      for (Index c = 0; c < model.output_dim; ++c) g.segment(c * xa.size(), xa.size()) = e(c) * xa;
      return g;
    }
    case Architecture::kMlp: {
      check_theta(model, theta);
      const MlpLayout layout(model);
      const auto acts = mlp_forward(layout, theta, x);
      require_finite_output(acts.back());
      const Vector e = residual_from_output(model, acts.back(), data, i);
      return mlp_backward(layout, theta, acts, e).col(0);
    }
  }
  return {};
}

Vector example_gradient_via_jacobian(const ModelSpec& model, const Vector& theta,
                                     const Dataset& data, Index i) {
  const OutputJacobian oj = output_and_jacobian(model, theta, data, i);
  return oj.jacobian * residual_from_output(model, oj.f, data, i);
}

LossGrad loss_and_grad(const ModelSpec& model, const Vector& theta, const Dataset& data,
                       std::span<const Index> subset, const EvalOptions& options) {
  check_theta(model, theta);
  check_weights(options, subset.size());
  LossGrad out{0.0, Vector::Zero(theta.size())};
  for (std::size_t k = 0; k < subset.size(); ++k) {
    const Index i = subset[k];
    const double w = weight_at(options, k) * options.data_scale;
    const Vector f = output(model, theta, data, i);
    out.loss += w * loss_from_output(model, f, data, i);
    out.grad += w * example_gradient(model, theta, data, i);
  }
  if (options.include_regularizer) {
    out.loss += 0.5 * data.delta * theta.squaredNorm();
    out.grad += data.delta * theta;
  }
  if (!std::isfinite(out.loss) || !out.grad.allFinite()) {
    fail(ErrorCode::kNumericalFailure, "non-finite loss or gradient");
  }
  return out;
}

LossGrad loss_and_grad(const ModelSpec& model, const Vector& theta, const Dataset& data,
                       const EvalOptions& options) {
  const auto rows = all_indices(data);
  return loss_and_grad(model, theta, data, rows, options);
}

double loss_value(const ModelSpec& model, const Vector& theta, const Dataset& data,
                  const EvalOptions& options) {
  check_weights(options, static_cast<std::size_t>(data.size()));
  double loss = 0.0;
  for (Index i = 0; i < data.size(); ++i) {
    const double w = weight_at(options, static_cast<std::size_t>(i)) * options.data_scale;
    loss += w * loss_from_output(model, output(model, theta, data, i), data, i);
  }
  if (options.include_regularizer) loss += 0.5 * data.delta * theta.squaredNorm();
  if (!std::isfinite(loss)) fail(ErrorCode::kNumericalFailure, "non-finite loss");
  return loss;
}

std::string_view curvature_kind_name(CurvatureKind kind) {
  switch (kind) {
    case CurvatureKind::kFullHessian: return "full_hessian";
    case CurvatureKind::kDiagGgn: return "diag_ggn";
    case CurvatureKind::kScaledIdentity: return "scaled_identity";
  }
  return "unknown";
}

Index Curvature::dim() const {
  switch (kind) {
    case CurvatureKind::kFullHessian: return full.rows();
    case CurvatureKind::kDiagGgn: return diag.size();
    case CurvatureKind::kScaledIdentity: return diag.size();
  }
  return 0;
}

Matrix Curvature::dense() const {
  switch (kind) {
    case CurvatureKind::kFullHessian: return full;
    case CurvatureKind::kDiagGgn: return diag.asDiagonal();
    case CurvatureKind::kScaledIdentity: return scale * Matrix::Identity(dim(), dim());
  }
  return {};
}

Vector Curvature::diagonal() const {
  switch (kind) {
    case CurvatureKind::kFullHessian: return full.diagonal();
    case CurvatureKind::kDiagGgn: return diag;
    case CurvatureKind::kScaledIdentity: return Vector::Constant(dim(), scale);
  }
  return {};
}

Curvature example_curvature(const ModelSpec& model, const Vector& theta, const Dataset& data,
                            Index i, CurvatureKind kind) {
  if (kind == CurvatureKind::kFullHessian && !model.convex()) {
    fail(ErrorCode::kUnsupportedCurvature, "full Hessian is only available for convex models");
  }
  const OutputJacobian oj = output_and_jacobian(model, theta, data, i);
  const Matrix lambda = link_hessian(model, oj.f);
  const Matrix jl = oj.jacobian * lambda;
  Curvature c;
  c.kind = kind;
  if (kind == CurvatureKind::kFullHessian) {
    c.full = jl * oj.jacobian.transpose();
    return c;
  }
  c.diag = jl.cwiseProduct(oj.jacobian).rowwise().sum();
  if (kind == CurvatureKind::kScaledIdentity) c.scale = c.diag.mean();
  return c;
}

Curvature curvature(const ModelSpec& model, const Vector& theta, const Dataset& data,
                    std::span<const Index> subset, CurvatureKind kind, const EvalOptions& options) {
  check_theta(model, theta);
  check_weights(options, subset.size());
  if (kind == CurvatureKind::kFullHessian && !model.convex()) {
    fail(ErrorCode::kUnsupportedCurvature, "full Hessian is only available for convex models");
  }
  const Index p = theta.size();
  Curvature c;
  c.kind = kind;
  c.includes_regularizer = options.include_regularizer;
  if (kind == CurvatureKind::kFullHessian) {
    c.full = Matrix::Zero(p, p);
  } else {
    c.diag = Vector::Zero(p);
  }
  for (std::size_t k = 0; k < subset.size(); ++k) {
    const double w = weight_at(options, k) * options.data_scale;
    const OutputJacobian oj = output_and_jacobian(model, theta, data, subset[k]);
    const Matrix jl = oj.jacobian * link_hessian(model, oj.f);
    if (kind == CurvatureKind::kFullHessian) {
      c.full.noalias() += w * (jl * oj.jacobian.transpose());
    } else {
      c.diag += w * jl.cwiseProduct(oj.jacobian).rowwise().sum();
    }
  }
  const double reg = options.include_regularizer ? data.delta : 0.0;
  if (kind == CurvatureKind::kFullHessian) {
    c.full = 0.5 * (c.full + c.full.transpose());
    c.full.diagonal().array() += reg;
    if (!c.full.allFinite()) fail(ErrorCode::kNumericalFailure, "non-finite curvature");
  } else {
    c.diag.array() += reg;
    if (!c.diag.allFinite()) fail(ErrorCode::kNumericalFailure, "non-finite curvature");
    if (kind == CurvatureKind::kScaledIdentity) {
      c.scale = c.diag.mean();
      c.diag = Vector::Constant(p, c.scale);
    }
  }
  return c;
}

Curvature curvature(const ModelSpec& model, const Vector& theta, const Dataset& data,
                    CurvatureKind kind, const EvalOptions& options) {
  const auto rows = all_indices(data);
  return curvature(model, theta, data, rows, kind, options);
}

std::string_view eval_mode_name(EvalMode::Kind kind) {
  switch (kind) {
    case EvalMode::Kind::kMean: return "mean";
    case EvalMode::Kind::kSample: return "sample";
    case EvalMode::Kind::kMonteCarlo: return "mc";
  }
  return "unknown";
}

EvalMode::Kind parse_eval_mode(std::string_view name) {
  if (name == "mean") return EvalMode::Kind::kMean;
  if (name == "sample") return EvalMode::Kind::kSample;
  if (name == "mc") return EvalMode::Kind::kMonteCarlo;
  fail(ErrorCode::kInvalidParameter, "unknown eval mode '" + std::string(name) + "'");
}

SmoothedGradient expected_grad_smoothed(const PosteriorState& q, const ScalarLoss& loss,
                                        const GradientFn& gradient, int n_samples,
                                        std::uint64_t seed) {
  if (n_samples < 1) fail(ErrorCode::kInvalidParameter, "n_samples must be >= 1");
  if (!gradient && !loss) fail(ErrorCode::kInvalidParameter, "need a loss or a gradient");
  std::mt19937_64 rng(seed);
  const Index p = q.dim();
  Vector sum = Vector::Zero(p);
  Vector sum_sq = Vector::Zero(p);
  const double baseline = gradient ? 0.0 : loss(q.mean());
  for (int s = 0; s < n_samples; ++s) {
    const Vector theta = q.sample(rng);
    Vector term;
    if (gradient) {
      term = gradient(theta);
    } else {
      term = (loss(theta) - baseline) * precision_times(q, theta - q.mean());
    }
    sum += term;
    sum_sq += term.cwiseProduct(term);
  }
  const double n = n_samples;
  SmoothedGradient out;
  out.samples = n_samples;
  out.mean = sum / n;
  if (n_samples > 1) {
    const Vector var = ((sum_sq / n - out.mean.cwiseProduct(out.mean)) * (n / (n - 1.0))).cwiseMax(0.0);
    out.standard_error = (var / n).cwiseSqrt();
  } else {
    out.standard_error = Vector::Constant(p, std::numeric_limits<double>::infinity());
  }
  return out;
}

Vector expected_grad_smoothed(const ModelSpec& model, const PosteriorState& q,
                              const Dataset& data, Index i, const EvalMode& mode) {
  if (mode.kind == EvalMode::Kind::kMean) return example_gradient(model, q.mean(), data, i);
  const int n = mode.kind == EvalMode::Kind::kSample ? 1 : mode.samples;
  const GradientFn grad = [&](const Vector& theta) { return example_gradient(model, theta, data, i); };
  return expected_grad_smoothed(q, ScalarLoss{}, grad, n, mode.seed).mean;
}

}  // namespace mempert

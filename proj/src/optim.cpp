#include "mempert/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mempert/error.hpp"
#include "mempert/kernels.hpp"

namespace mempert {
namespace {

std::span<double> span_of(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> span_of(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

double sum_scale(const TrainerState& state, std::size_t batch) {
  return static_cast<double>(state.num_examples) / static_cast<double>(batch);
}

// Points at which ON/Newton expectations are evaluated.
std::vector<Vector> evaluation_points(TrainerState& state) {
  const EvalMode& mode = state.hyper.eval;
  if (mode.kind == EvalMode::Kind::kMean || state.step == 0) return {state.theta};
  const PosteriorState q = posterior_state(state);
  const int n = mode.kind == EvalMode::Kind::kSample ? 1 : mode.samples;
  std::vector<Vector> points;
  for (int s = 0; s < n; ++s) points.push_back(q.sample(state.rng));
  return points;
}

// Sum-scaled gradient and curvature averaged over the evaluation points.
std::pair<Vector, Curvature> sum_scaled_terms(TrainerState& state, const ModelSpec& model,
                                              const Dataset& data, std::span<const Index> batch,
                                              CurvatureKind kind) {
  EvalOptions opts;
  opts.data_scale = sum_scale(state, batch.size());
  const auto points = evaluation_points(state);
  Vector grad = Vector::Zero(state.theta.size());
  Curvature curv;
  for (std::size_t s = 0; s < points.size(); ++s) {
    grad += loss_and_grad(model, points[s], data, batch, opts).grad;
    Curvature c = curvature(model, points[s], data, batch, kind, opts);
    if (s == 0) {
      curv = std::move(c);
    } else if (kind == CurvatureKind::kFullHessian) {
      curv.full += c.full;
    } else {
      curv.diag += c.diag;
    }
  }
  const double n = static_cast<double>(points.size());
  if (points.size() > 1) {
    grad /= n;
    if (kind == CurvatureKind::kFullHessian) {
      curv.full /= n;
    } else {
      curv.diag /= n;
    }
  }
  return {grad, curv};
}

Vector mean_batch_gradient(const ModelSpec& model, const Vector& theta, const Dataset& data,
                           std::span<const Index> batch) {
  EvalOptions opts;
  opts.include_regularizer = false;
  opts.data_scale = 1.0 / static_cast<double>(batch.size());
  return loss_and_grad(model, theta, data, batch, opts).grad;
}

void step_newton(TrainerState& state, const ModelSpec& model, const Dataset& data,
                 std::span<const Index> batch) {
  auto [grad, curv] = sum_scaled_terms(state, model, data, batch, CurvatureKind::kFullHessian);
  const Cholesky factor = cholesky_with_jitter(curv.full);
  state.theta -= factor.solve(grad);
  state.precision = std::move(curv.full);
  state.last_rate = 1.0;
}

void step_online_newton(TrainerState& state, const ModelSpec& model, const Dataset& data,
                        std::span<const Index> batch, double rho) {
  auto [grad, curv] = sum_scaled_terms(state, model, data, batch, CurvatureKind::kFullHessian);
  state.precision = (1.0 - rho) * state.precision + rho * curv.full;
  const Cholesky factor = cholesky_with_jitter(state.precision);
  state.theta -= rho * factor.solve(grad);
}

void step_online_newton_diag(TrainerState& state, const ModelSpec& model, const Dataset& data,
                             std::span<const Index> batch, double rho) {
  auto [grad, curv] = sum_scaled_terms(state, model, data, batch, CurvatureKind::kDiagGgn);
  kernels::ema(1.0 - rho, span_of(curv.diag), span_of(state.scale));
  if (!(state.scale.array() > 0.0).all()) {
    fail(ErrorCode::kSingularCurvature, "diagonal precision lost positivity");
  }
  Vector direction(grad.size());
  kernels::divide(span_of(grad), span_of(state.scale), span_of(direction));
  kernels::axpy(-rho, span_of(direction), span_of(state.theta));
}

void step_sgd(TrainerState& state, const ModelSpec& model, const Dataset& data,
              std::span<const Index> batch, double lr) {
  const double decay = state.delta / static_cast<double>(state.num_examples);
  Vector grad = mean_batch_gradient(model, state.theta, data, batch);
  kernels::axpy(decay, span_of(state.theta), span_of(grad));
  if (state.hyper.momentum > 0.0) {
    state.momentum = state.hyper.momentum * state.momentum + grad;
    grad = state.momentum;
  }
  kernels::axpy(-lr, span_of(grad), span_of(state.theta));
}

void step_adaptive(TrainerState& state, const ModelSpec& model, const Dataset& data,
                   std::span<const Index> batch, double lr) {
  const Hyper& h = state.hyper;
  const double decay = state.delta / static_cast<double>(state.num_examples);
  Vector grad = mean_batch_gradient(model, state.theta, data, batch);
  kernels::axpy(decay, span_of(state.theta), span_of(grad));
  kernels::ema(h.beta1, span_of(grad), span_of(state.momentum));
  kernels::square_ema(h.beta2, span_of(grad), span_of(state.scale));
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  const Vector denom = ((state.scale / c2).array().sqrt() + h.eps).matrix();
  Vector direction(grad.size());
  kernels::divide(span_of(state.momentum), span_of(denom), span_of(direction));
  kernels::axpy(-lr / c1, span_of(direction), span_of(state.theta));
}

void step_iblr(TrainerState& state, const ModelSpec& model, const Dataset& data,
               std::span<const Index> batch, double lr) {
  const Hyper& h = state.hyper;
  const double n = static_cast<double>(state.num_examples);
  const double delta_bar = state.delta / n;
  const Vector sigma = iblr_variance(state).cwiseSqrt();
  const Index p = state.theta.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector g_hat = Vector::Zero(p);
  Vector h_hat = Vector::Zero(p);
  Vector z(p);
  for (int s = 0; s < h.mc_samples; ++s) {
    for (Index k = 0; k < p; ++k) z(k) = normal(state.rng);
    const Vector theta = state.theta + sigma.cwiseProduct(z);
    const Vector g = mean_batch_gradient(model, theta, data, batch);
    g_hat += g;
    h_hat += g.cwiseProduct(z).cwiseQuotient(sigma);
  }
  g_hat /= static_cast<double>(h.mc_samples);
  h_hat /= static_cast<double>(h.mc_samples);
  kernels::ema(h.beta1, span_of(g_hat), span_of(state.momentum));
  kernels::iblr_hessian_update(h.beta2, delta_bar, span_of(h_hat), span_of(state.scale));
  kernels::iblr_mean_update(lr, delta_bar, span_of(state.momentum), span_of(state.scale),
                            span_of(state.theta));
}

}  // namespace

std::string_view algorithm_name(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kSgd: return "sgd";
    case Algorithm::kNewton: return "newton";
    case Algorithm::kOnlineNewton: return "on";
    case Algorithm::kOnlineNewtonDiag: return "on_diag";
    case Algorithm::kIblr: return "iblr";
    case Algorithm::kAdaptive: return "adam";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
  if (name == "sgd") return Algorithm::kSgd;
  if (name == "newton") return Algorithm::kNewton;
  if (name == "on") return Algorithm::kOnlineNewton;
  if (name == "on_diag") return Algorithm::kOnlineNewtonDiag;
  if (name == "iblr") return Algorithm::kIblr;
  if (name == "adam") return Algorithm::kAdaptive;
  fail(ErrorCode::kInvalidParameter, "unknown algorithm '" + std::string(name) + "'");
}

double LrSchedule::at(long step) const {
  if (kind == Kind::kConstant) return start;
  if (step >= total_steps) return min;
  const double frac = static_cast<double>(std::max(step, 0L)) / static_cast<double>(total_steps);
  return min + 0.5 * (start - min) * (1.0 + std::cos(std::numbers::pi * frac));
}

void Hyper::validate(Algorithm algorithm) const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kInvalidParameter, what); };
  if (!(schedule.start > 0.0) || !(schedule.min >= 0.0) || schedule.min > schedule.start) {
    bad("learning rate must satisfy 0 <= min <= start, start > 0");
  }
  if (schedule.kind == LrSchedule::Kind::kCosine && schedule.total_steps < 1) {
    bad("cosine schedule needs total_steps >= 1");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) bad("beta1, beta2 must be in [0, 1)");
  if (algorithm == Algorithm::kIblr && !(h0 > 0.0)) bad("h0 must be > 0");
  if (!(eps > 0.0)) bad("eps must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must be in [0, 1)");
  if (batch_size < 0) bad("batch_size must be >= 0");
  if (mc_samples < 1 || eval.samples < 1) bad("sample counts must be >= 1");
  if (!(init_scale >= 0.0)) bad("init_scale must be >= 0");
  if ((algorithm == Algorithm::kOnlineNewton || algorithm == Algorithm::kOnlineNewtonDiag) &&
      schedule.start > 1.0) {
    bad("online Newton needs rho <= 1");
  }
}

PreconditionerView PreconditionerView::identity(Index dim) {
  PreconditionerView v;
  v.shape_ = Shape::kIdentity;
  v.dim_ = dim;
  return v;
}

PreconditionerView PreconditionerView::full_inverse(Matrix precision) {
  PreconditionerView v;
  v.shape_ = Shape::kFullInverseApply;
  v.dim_ = precision.rows();
  v.factor_ = cholesky_with_jitter(precision);
  v.full_ = std::move(precision);
  return v;
}

PreconditionerView PreconditionerView::diag_inverse(Vector precision) {
  if (!(precision.array() > 0.0).all()) {
    fail(ErrorCode::kSingularCurvature, "diagonal preconditioner must be strictly positive");
  }
  PreconditionerView v;
  v.shape_ = Shape::kDiagInverseApply;
  v.dim_ = precision.size();
  v.inverse_diag_ = precision.cwiseInverse();
  v.diag_ = std::move(precision);
  return v;
}

PreconditionerView PreconditionerView::diag_inverse_sqrt(const Vector& s, double n, double floor) {
  PreconditionerView v = diag_inverse(n * s.cwiseMax(0.0).cwiseSqrt().cwiseMax(floor));
  v.shape_ = Shape::kDiagInverseSqrtApply;
  return v;
}

PreconditionerView PreconditionerView::from_curvature(const Curvature& curvature) {
  switch (curvature.kind) {
    case CurvatureKind::kFullHessian: return full_inverse(curvature.full);
    case CurvatureKind::kDiagGgn: return diag_inverse(curvature.diag);
    case CurvatureKind::kScaledIdentity: return diag_inverse(curvature.diagonal());
  }
  return identity(curvature.dim());
}

Vector PreconditionerView::apply(const Vector& v) const {
  if (v.size() != dim_) fail(ErrorCode::kInvalidParameter, "preconditioner dimension mismatch");
  switch (shape_) {
    case Shape::kIdentity: return v;
    case Shape::kFullInverseApply: return factor_->solve(v);
    case Shape::kDiagInverseApply:
    case Shape::kDiagInverseSqrtApply: {
      Vector out(v.size());
      kernels::divide(span_of(v), span_of(diag_), span_of(out));
      return out;
    }
  }
  return v;
}

Matrix PreconditionerView::apply(const Matrix& columns) const {
  if (columns.rows() != dim_) fail(ErrorCode::kInvalidParameter, "preconditioner dimension mismatch");
  switch (shape_) {
    case Shape::kIdentity: return columns;
    case Shape::kFullInverseApply: return factor_->solve(columns);
    case Shape::kDiagInverseApply:
    case Shape::kDiagInverseSqrtApply: return inverse_diag_.asDiagonal() * columns;
  }
  return columns;
}

double PreconditionerView::quadratic(const Vector& j) const {
  if (j.size() != dim_) fail(ErrorCode::kInvalidParameter, "preconditioner dimension mismatch");
  switch (shape_) {
    case Shape::kIdentity: return kernels::dot(span_of(j), span_of(j));
    case Shape::kFullInverseApply: {
      const Vector half = factor_->matrixL().solve(j);
      return half.squaredNorm();
    }
    case Shape::kDiagInverseApply:
    case Shape::kDiagInverseSqrtApply:
      return kernels::weighted_sum_squares(span_of(j), span_of(inverse_diag_));
  }
  return 0.0;
}

Vector PreconditionerView::precision_diagonal() const {
  switch (shape_) {
    case Shape::kIdentity: return Vector::Ones(dim_);
    case Shape::kFullInverseApply: return full_.diagonal();
    case Shape::kDiagInverseApply:
    case Shape::kDiagInverseSqrtApply: return diag_;
  }
  return {};
}

Matrix PreconditionerView::precision_dense() const {
  switch (shape_) {
    case Shape::kIdentity: return Matrix::Identity(dim_, dim_);
    case Shape::kFullInverseApply: return full_;
    case Shape::kDiagInverseApply:
    case Shape::kDiagInverseSqrtApply: return diag_.asDiagonal();
  }
  return {};
}

std::string_view view_shape_name(PreconditionerView::Shape shape) {
  switch (shape) {
    case PreconditionerView::Shape::kFullInverseApply: return "full_inverse";
    case PreconditionerView::Shape::kDiagInverseApply: return "diag_inverse";
    case PreconditionerView::Shape::kDiagInverseSqrtApply: return "diag_inverse_sqrt";
    case PreconditionerView::Shape::kIdentity: return "identity";
  }
  return "unknown";
}

TrainerState init_trainer(const ModelSpec& model, const Dataset& data, Algorithm algorithm,
                          const Hyper& hyper) {
  hyper.validate(algorithm);
  data.validate();
  model.check_compatible(data);
  TrainerState state;
  state.algorithm = algorithm;
  state.hyper = hyper;
  state.num_examples = data.size();
  state.delta = data.delta;
  state.rng.seed(hyper.seed);

  const Index p = model.parameter_dim();
  std::normal_distribution<double> normal(0.0, 1.0);
  state.theta.resize(p);
  for (Index k = 0; k < p; ++k) state.theta(k) = hyper.init_scale * normal(state.rng);

  switch (algorithm) {
    case Algorithm::kNewton:
    case Algorithm::kOnlineNewton:
      state.precision = data.delta * Matrix::Identity(p, p);
      break;
    case Algorithm::kOnlineNewtonDiag:
      state.scale = Vector::Constant(p, data.delta);
      break;
    case Algorithm::kIblr:
      state.scale = Vector::Constant(p, hyper.h0);
      state.momentum = Vector::Zero(p);
      break;
    case Algorithm::kAdaptive:
      state.scale = Vector::Zero(p);
      state.momentum = Vector::Zero(p);
      break;
    case Algorithm::kSgd:
      state.momentum = Vector::Zero(p);
      break;
  }
  return state;
}

void step(TrainerState& state, const ModelSpec& model, const Dataset& data,
          std::span<const Index> batch) {
  if (batch.empty()) fail(ErrorCode::kInvalidParameter, "minibatch must be nonempty");
  const double rate = state.hyper.schedule.at(state.step);
  state.last_rate = rate;
  switch (state.algorithm) {
    case Algorithm::kSgd: step_sgd(state, model, data, batch, rate); break;
    case Algorithm::kNewton: step_newton(state, model, data, batch); break;
    case Algorithm::kOnlineNewton: step_online_newton(state, model, data, batch, rate); break;
    case Algorithm::kOnlineNewtonDiag: step_online_newton_diag(state, model, data, batch, rate); break;
    case Algorithm::kIblr: step_iblr(state, model, data, batch, rate); break;
    case Algorithm::kAdaptive: step_adaptive(state, model, data, batch, rate); break;
  }
  if (!state.theta.allFinite()) {
    fail(ErrorCode::kNumericalFailure, std::string(algorithm_name(state.algorithm)) +
                                           " produced a non-finite iterate at step " +
                                           std::to_string(state.step));
  }
  ++state.step;
}

Index steps_per_epoch(const TrainerState& state) {
  const Index b = state.hyper.batch_size;
  if (b <= 0 || b >= state.num_examples) return 1;
  return (state.num_examples + b - 1) / b;
}

std::vector<Index> next_batch(TrainerState& state) {
  const Index n = state.num_examples;
  const Index b = state.hyper.batch_size;
  if (b <= 0 || b >= n) {
    std::vector<Index> all(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  if (state.cursor >= state.order.size()) {
    state.order.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) state.order[static_cast<std::size_t>(i)] = i;
    std::shuffle(state.order.begin(), state.order.end(), state.rng);
    state.cursor = 0;
  }
  const std::size_t end = std::min(state.order.size(), state.cursor + static_cast<std::size_t>(b));
  std::vector<Index> batch(state.order.begin() + static_cast<std::ptrdiff_t>(state.cursor),
                           state.order.begin() + static_cast<std::ptrdiff_t>(end));
  state.cursor = end;
  return batch;
}

Index train_epoch(TrainerState& state, const ModelSpec& model, const Dataset& data) {
  const Index steps = steps_per_epoch(state);
  for (Index s = 0; s < steps; ++s) {
    const auto batch = next_batch(state);
    step(state, model, data, batch);
  }
  return steps;
}

Vector iblr_variance(const TrainerState& state) {
  if (state.algorithm != Algorithm::kIblr) fail(ErrorCode::kInvalidParameter, "not an IBLR trainer");
  const double n = static_cast<double>(state.num_examples);
  const Vector precision = (n * state.scale.array() + state.delta).matrix();
  if (!(precision.array() > 0.0).all()) {
    fail(ErrorCode::kNumericalFailure, "IBLR precision lost positivity");
  }
  return precision.cwiseInverse();
}

PreconditionerView preconditioner_view(const TrainerState& state) {
  const double n = static_cast<double>(state.num_examples);
  switch (state.algorithm) {
    case Algorithm::kSgd: return PreconditionerView::identity(state.theta.size());
    case Algorithm::kNewton:
    case Algorithm::kOnlineNewton: return PreconditionerView::full_inverse(state.precision);
    case Algorithm::kOnlineNewtonDiag: return PreconditionerView::diag_inverse(state.scale);
    case Algorithm::kIblr:
      return PreconditionerView::diag_inverse((n * state.scale.array() + state.delta).matrix());
    case Algorithm::kAdaptive:
      return PreconditionerView::diag_inverse_sqrt(state.scale, n, state.hyper.eps);
  }
  return PreconditionerView::identity(state.theta.size());
}

PosteriorState posterior_state(const TrainerState& state) {
  if (state.algorithm == Algorithm::kSgd) return PosteriorState::scaled_identity(state.theta, 1.0);
  const PreconditionerView view = preconditioner_view(state);
  if (view.shape() == PreconditionerView::Shape::kFullInverseApply) {
    return PosteriorState::full(state.theta, view.precision_dense());
  }
  return PosteriorState::diag(state.theta, view.precision_diagonal());
}

}  // namespace mempert

#include "mempert/mpe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "mempert/error.hpp"
#include "mempert/format.hpp"

namespace mempert {
namespace {

CurvatureKind kind_for(const PosteriorState& q) {
  switch (q.shape()) {
    case PosteriorState::Shape::kFull: return CurvatureKind::kFullHessian;
    case PosteriorState::Shape::kDiag: return CurvatureKind::kDiagGgn;
    case PosteriorState::Shape::kScaledIdentity: return CurvatureKind::kScaledIdentity;
  }
  return CurvatureKind::kDiagGgn;
}

Vector precision_solve(const PosteriorState& q, const Vector& v) {
  if (q.shape() == PosteriorState::Shape::kFull) return cholesky_with_jitter(q.full_precision()).solve(v);
  return v.cwiseQuotient(q.precision_diagonal());
}

void accumulate(Curvature& into, const Curvature& add) {
  if (into.kind == CurvatureKind::kFullHessian) {
    into.full += add.full;
  } else {
    into.diag += add.diag;
  }
}

void scale(Curvature& c, double s) {
  if (c.kind == CurvatureKind::kFullHessian) {
    c.full *= s;
  } else {
    c.diag *= s;
  }
  c.scale *= s;
}

// sigma' * v * e, per output, with a diagonal v.
SensitivityRecord record_from(const ModelSpec& model, const PreconditionerView& view,
                              const OutputJacobian& oj, const Dataset& data, Index i) {
  SensitivityRecord r;
  r.id = i;
  r.e = residual_from_output(model, oj.f, data, i);
  const Index k = oj.f.size();
  r.v.resize(k);
  for (Index c = 0; c < k; ++c) r.v(c) = view.quadratic(oj.jacobian.col(c));
  r.output_shift = r.v.cwiseProduct(r.e);
  r.deviation = link_derivative(model, oj.f).cwiseProduct(r.output_shift);
  r.score = r.deviation.cwiseAbs().sum();
  return r;
}

std::string join(const Vector& v) {
  return join_doubles(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

}  // namespace

void PerturbationSpec::validate(Index num_examples) const {
  if (!epsilons.empty() && epsilons.size() != indices.size()) {
    fail(ErrorCode::kInvalidParameter, "one epsilon per perturbed index required");
  }
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] < 0 || indices[k] >= num_examples) {
      fail(ErrorCode::kInvalidParameter, "perturbed index " + std::to_string(indices[k]) + " out of range");
    }
    if (!std::isfinite(epsilon(k))) fail(ErrorCode::kInvalidParameter, "non-finite epsilon");
  }
}

NaturalParams GaussianNaturalGradient::natural() const {
  if (second.kind == CurvatureKind::kFullHessian) {
    return NaturalParams::gaussian_full(first, second.full);
  }
  return NaturalParams::gaussian_diag(first, second.diagonal());
}

GaussianNaturalGradient gaussian_natural_gradient(const PosteriorState& q, const ModelSpec& model,
                                                  const Dataset& data, Index i,
                                                  const EvalMode& mode) {
  const CurvatureKind kind = kind_for(q);
  std::vector<Vector> points;
  if (mode.kind == EvalMode::Kind::kMean) {
    points.push_back(q.mean());
  } else {
    std::mt19937_64 rng(mode.seed);
    const int n = mode.kind == EvalMode::Kind::kSample ? 1 : mode.samples;
    for (int s = 0; s < n; ++s) points.push_back(q.sample(rng));
  }
  Vector g = Vector::Zero(q.dim());
  Curvature h;
  for (std::size_t s = 0; s < points.size(); ++s) {
    g += example_gradient(model, points[s], data, i);
    const Curvature c = example_curvature(model, points[s], data, i, kind);
    if (s == 0) {
      h = c;
    } else {
      accumulate(h, c);
    }
  }
  const double inv = 1.0 / static_cast<double>(points.size());
  g *= inv;
  scale(h, inv);
  if (kind == CurvatureKind::kScaledIdentity) {
    h.scale = h.diag.mean();
    h.diag = Vector::Constant(q.dim(), h.scale);
  }

  GaussianNaturalGradient out;
  const Vector hm = h.kind == CurvatureKind::kFullHessian ? Vector(h.full * q.mean())
                                                           : Vector(h.diag.cwiseProduct(q.mean()));
  out.first = g - hm;
  out.second = h;
  scale(out.second, 0.5);
  return out;
}

NaturalParams conjugate_natural_gradient(const LikelihoodNat& factor) { return -1.0 * factor; }

NaturalParams mpe_deviation_natural(const NaturalParams& lambda,
                                    std::span<const NaturalParams> contributions,
                                    std::span<const double> epsilons, double rho) {
  if (!epsilons.empty() && epsilons.size() != contributions.size()) {
    fail(ErrorCode::kInvalidParameter, "one epsilon per contribution required");
  }
  NaturalParams delta = NaturalParams::zeros_like(lambda);
  for (std::size_t j = 0; j < contributions.size(); ++j) {
    const double eps = epsilons.empty() ? 1.0 : epsilons[j];
    delta += (rho * eps) * contributions[j];
  }
  return delta;
}

Vector mean_deviation_linearized(const PosteriorState& q, const NaturalParams& delta_lambda) {
  Vector rhs = delta_lambda.first;
  if (delta_lambda.family == Family::kGaussianFull) {
    rhs += 2.0 * delta_lambda.second * q.mean();
  } else if (delta_lambda.family == Family::kGaussianDiag) {
    rhs += 2.0 * delta_lambda.second.col(0).cwiseProduct(q.mean());
  } else {
    fail(ErrorCode::kUnsupportedFamily, "mean deviation needs a Gaussian perturbation");
  }
  return precision_solve(q, rhs);
}

Vector mean_deviation_exact(const PosteriorState& q, const NaturalParams& delta_lambda) {
  const NaturalParams moved = q.natural() + delta_lambda;
  if (!is_valid(moved)) fail(ErrorCode::kDegeneratePosterior, "perturbed posterior is not valid");
  const FamilyParams params = from_natural(moved);
  if (const auto* full = std::get_if<GaussianFullParams>(&params)) return full->mean - q.mean();
  return std::get<GaussianDiagParams>(params).mean - q.mean();
}

Vector sensitivity_direction(const PreconditionerView& view, const Vector& grad) {
  return view.apply(grad);
}

SensitivityRecord output_deviation(const ModelSpec& model, const Vector& theta,
                                   const PreconditionerView& view, const Dataset& data, Index i,
                                   bool with_direction) {
  const OutputJacobian oj = output_and_jacobian(model, theta, data, i);
  SensitivityRecord r = record_from(model, view, oj, data, i);
  if (with_direction) r.direction = view.apply(Vector(oj.jacobian * r.e));
  return r;
}

std::vector<SensitivityRecord> output_deviations(const ModelSpec& model, const Vector& theta,
                                                 const PreconditionerView& view,
                                                 const Dataset& data) {
  std::vector<SensitivityRecord> out;
  out.reserve(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) out.push_back(output_deviation(model, theta, view, data, i));
  return out;
}

std::vector<Vector> group_output_deviation(const ModelSpec& model, const Vector& theta,
                                           const PreconditionerView& view, const Dataset& data,
                                           std::span<const Index> group, GroupMode mode,
                                           Index cap) {
  if (group.empty()) fail(ErrorCode::kInvalidParameter, "group must be nonempty");
  std::vector<Vector> out;
  out.reserve(group.size());
  if (mode == GroupMode::kDiag) {
    for (Index i : group) out.push_back(output_deviation(model, theta, view, data, i).deviation);
    return out;
  }
  const Index k = model.output_dim;
  const Index m = static_cast<Index>(group.size());
  if (m * k > cap) {
    fail(ErrorCode::kResourceLimit, "group of " + std::to_string(m) + " examples x " +
                                        std::to_string(k) + " outputs exceeds the full-mode cap " +
                                        std::to_string(cap));
  }
  Matrix jac(theta.size(), m * k);
  Vector errors(m * k);
  Vector slopes(m * k);
  for (Index a = 0; a < m; ++a) {
    const Index i = group[static_cast<std::size_t>(a)];
    const OutputJacobian oj = output_and_jacobian(model, theta, data, i);
    jac.middleCols(a * k, k) = oj.jacobian;
    errors.segment(a * k, k) = residual_from_output(model, oj.f, data, i);
    slopes.segment(a * k, k) = link_derivative(model, oj.f);
  }
  const Matrix cov = jac.transpose() * view.apply(jac);
  const Vector shift = cov * errors;
  for (Index a = 0; a < m; ++a) {
    out.push_back(slopes.segment(a * k, k).cwiseProduct(shift.segment(a * k, k)));
  }
  return out;
}

double group_score(const std::vector<Vector>& deviations) {
  double s = 0.0;
  for (const auto& d : deviations) s += d.cwiseAbs().sum();
  return s;
}

LinregLoo linreg_loo_exact(const Dataset& data, Index i) {
  if (i < 0 || i >= data.size()) fail(ErrorCode::kInvalidParameter, "example index out of range");
  const Matrix& x = data.features;
  Matrix h = x.transpose() * x;
  h.diagonal().array() += data.delta;
  const auto factor = try_cholesky(h);
  if (!factor) fail(ErrorCode::kSingularCurvature, "ridge Hessian is singular");
  const Vector theta = factor->solve(x.transpose() * data.labels);
  const Vector xi = x.row(i).transpose();

  LinregLoo out;
  out.e = xi.dot(theta) - data.labels(i);
  const Vector h_inv_x = factor->solve(xi);
  out.leverage = xi.dot(h_inv_x);
  if (out.leverage >= 1.0 - 1e-12) {
    fail(ErrorCode::kLeverageDegenerate, "leverage of example " + std::to_string(i) + " is " +
                                             format_double(out.leverage));
  }

  // Direct solve with the leave-out Hessian.
  const Matrix h_loo = h - xi * xi.transpose();
  const auto loo_factor = try_cholesky(h_loo);
  if (!loo_factor) fail(ErrorCode::kLeverageDegenerate, "leave-out Hessian is not positive definite");
  const Vector direct = loo_factor->solve(xi * out.e);
  // Sherman-Morrison through the full-data inverse.
  const Vector sherman = h_inv_x * (out.e / (1.0 - out.leverage));

  const double scale_ref = std::max({1.0, direct.lpNorm<Eigen::Infinity>(), sherman.lpNorm<Eigen::Infinity>()});
  if ((direct - sherman).lpNorm<Eigen::Infinity>() > 1e-10 * scale_ref) {
    fail(ErrorCode::kNumericalFailure, "leave-one-out routes disagree for example " + std::to_string(i));
  }
  out.delta_theta = direct;
  out.v_loo = xi.dot(loo_factor->solve(xi));
  out.delta_f = out.v_loo * out.e;
  out.e_loo = out.e / (1.0 - out.leverage);
  return out;
}

LinregEpsilonDerivative linreg_epsilon_derivative(const Dataset& data, Index i, double epsilon) {
  if (i < 0 || i >= data.size()) fail(ErrorCode::kInvalidParameter, "example index out of range");
  const Matrix& x = data.features;
  Matrix h = x.transpose() * x;
  h.diagonal().array() += data.delta;
  const auto factor = try_cholesky(h);
  if (!factor) fail(ErrorCode::kSingularCurvature, "ridge Hessian is singular");
  const Vector theta = factor->solve(x.transpose() * data.labels);
  const Vector xi = x.row(i).transpose();
  const double e = xi.dot(theta) - data.labels(i);
  const Vector h_inv_x = factor->solve(xi);
  const double v = xi.dot(h_inv_x);
  const double denom = 1.0 - epsilon * v;
  if (std::abs(denom) < 1e-12) {
    fail(ErrorCode::kLeverageDegenerate, "1 - eps v vanishes for example " + std::to_string(i));
  }
  LinregEpsilonDerivative out;
  out.dtheta = h_inv_x * (e / (denom * denom));
  out.df = xi.dot(out.dtheta);
  return out;
}

Vector parameter_deviation_estimate(const ModelSpec& model, const Vector& theta,
                                    const PreconditionerView& view, const Dataset& data,
                                    const PerturbationSpec& pert, double rho) {
  pert.validate(data.size());
  Vector total = Vector::Zero(theta.size());
  for (std::size_t k = 0; k < pert.indices.size(); ++k) {
    total += pert.epsilon(k) * example_gradient(model, theta, data, pert.indices[k]);
  }
  return rho * view.apply(total);
}

Vector parameter_deviation_estimate(const TrainerState& state, const ModelSpec& model,
                                    const Dataset& data, const PerturbationSpec& pert,
                                    bool scale_by_rate) {
  const double rho = scale_by_rate ? state.hyper.schedule.at(state.step) : 1.0;
  return parameter_deviation_estimate(model, state.theta, preconditioner_view(state), data, pert, rho);
}

std::vector<Index> rank_by_score(const std::vector<SensitivityRecord>& records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (records[a].score != records[b].score) return records[a].score > records[b].score;
    return records[a].id < records[b].id;
  });
  std::vector<Index> ids;
  ids.reserve(order.size());
  for (std::size_t k : order) ids.push_back(records[k].id);
  return ids;
}

std::string sensitivity_csv_header() { return "example_id,score,v,e,deviation"; }

std::string sensitivity_csv_row(const SensitivityRecord& r) {
  return std::to_string(r.id) + "," + format_double(r.score) + "," + join(r.v) + "," + join(r.e) +
         "," + join(r.deviation);
}

}  // namespace mempert

#include "mempert/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mempert/error.hpp"
#include "mempert/format.hpp"

namespace mempert {
namespace {

std::vector<double> example_weights(const Dataset& data, const PerturbationSpec& pert) {
  pert.validate(data.size());
  std::vector<double> w(static_cast<std::size_t>(data.size()), 1.0);
  for (std::size_t k = 0; k < pert.indices.size(); ++k) {
    w[static_cast<std::size_t>(pert.indices[k])] -= pert.epsilon(k);
  }
  return w;
}

RetrainResult newton_solve(const ModelSpec& model, const Dataset& data,
                           const std::vector<double>& weights, const RetrainConfig& config,
                           const Vector& start) {
  EvalOptions opts;
  opts.weights = weights;
  RetrainResult r;
  r.theta = start;
  for (r.iterations = 0; r.iterations <= config.max_newton_iterations; ++r.iterations) {
    const LossGrad lg = loss_and_grad(model, r.theta, data, opts);
    r.grad_norm = lg.grad.norm();
    if (r.grad_norm <= config.tolerance) {
      r.converged = true;
      return r;
    }
    if (r.iterations == config.max_newton_iterations) break;
    const Curvature h = curvature(model, r.theta, data, CurvatureKind::kFullHessian, opts);
    const Vector d = cholesky_with_jitter(h.full).solve(lg.grad);
    const double slope = lg.grad.dot(d);
    // Once the predicted decrease is below the loss roundoff, Armijo tests are
    // noise; take the full Newton step if it shrinks the gradient.
    if (0.5 * slope <= 1e-12 * std::max(1.0, std::abs(lg.loss))) {
      const Vector cand = r.theta - d;
      if (loss_and_grad(model, cand, data, opts).grad.norm() >= r.grad_norm) break;
      r.theta = cand;
      continue;
    }
    double t = 1.0;
    bool accepted = false;
    while (t > 1e-12) {
      const Vector cand = r.theta - t * d;
      if (loss_value(model, cand, data, opts) <= lg.loss - 1e-4 * t * slope) {
        r.theta = cand;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // Loss differences have hit roundoff; keep the full step if it still
      // shrinks the gradient.
      const Vector cand = r.theta - d;
      if (loss_and_grad(model, cand, data, opts).grad.norm() >= r.grad_norm) break;
      r.theta = cand;
    }
  }
  return r;
}

RetrainResult adam_solve(const ModelSpec& model, const Dataset& data,
                         const std::vector<double>& weights, const RetrainConfig& config,
                         const Vector& start) {
  EvalOptions opts;
  opts.weights = weights;
  opts.data_scale = 1.0 / static_cast<double>(data.size());
  const double decay = data.delta / static_cast<double>(data.size());
  opts.include_regularizer = false;
  const double beta1 = 0.9;
  const double beta2 = 0.999;
  const double eps = 1e-8;
  const LrSchedule schedule = LrSchedule::cosine(config.lr, config.lr_min, config.epochs);
  RetrainResult r;
  r.theta = start;
  Vector m = Vector::Zero(start.size());
  Vector v = Vector::Zero(start.size());
  for (int t = 0; t < config.epochs; ++t) {
    Vector g = loss_and_grad(model, r.theta, data, opts).grad + decay * r.theta;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(beta1, t + 1);
    const double c2 = 1.0 - std::pow(beta2, t + 1);
    r.theta -= schedule.at(t) / c1 * m.cwiseQuotient(((v / c2).array().sqrt() + eps).matrix());
    r.iterations = t + 1;
  }
  r.grad_norm = (loss_and_grad(model, r.theta, data, opts).grad + decay * r.theta).norm();
  r.converged = r.grad_norm <= config.mlp_tolerance;
  return r;
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t k = 0;
  while (k < order.size()) {
    std::size_t end = k;
    while (end + 1 < order.size() && xs[order[end + 1]] == xs[order[k]]) ++end;
    const double rank = 0.5 * static_cast<double>(k + end) + 1.0;
    for (std::size_t j = k; j <= end; ++j) ranks[order[j]] = rank;
    k = end + 1;
  }
  return ranks;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxy += (xs[k] - mx) * (ys[k] - my);
    sxx += (xs[k] - mx) * (xs[k] - mx);
    syy += (ys[k] - my) * (ys[k] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorCode::kCorrelationUndefined, "constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

RetrainResult retrain_without(const ModelSpec& model, const Dataset& data,
                              const PerturbationSpec& pert, const RetrainConfig& config,
                              const Vector& warm_start) {
  const std::vector<double> w = example_weights(data, pert);
  if (model.convex()) return newton_solve(model, data, w, config, warm_start);
  return adam_solve(model, data, w, config, warm_start);
}

RetrainResult fit(const ModelSpec& model, const Dataset& data, const RetrainConfig& config,
                  const Vector& start) {
  return retrain_without(model, data, PerturbationSpec{}, config, start);
}

NaturalParams exact_conjugate_refit(ConjugateKind kind, const Dataset& data,
                                    std::span<const Index> removed, const BetaParams& beta_prior) {
  std::vector<char> drop(static_cast<std::size_t>(data.size()), 0);
  for (Index r : removed) {
    if (r < 0 || r >= data.size()) fail(ErrorCode::kInvalidParameter, "removed index out of range");
    drop[static_cast<std::size_t>(r)] = 1;
  }
  if (kind == ConjugateKind::kBetaBernoulli) {
    long ones = 0;
    long zeros = 0;
    for (Index i = 0; i < data.size(); ++i) {
      if (drop[static_cast<std::size_t>(i)]) continue;
      const double y = data.labels(i);
      if (y != 0.0 && y != 1.0) fail(ErrorCode::kLabelError, "Bernoulli labels must be 0 or 1");
      (y == 1.0 ? ones : zeros) += 1;
    }
    return to_natural(BetaParams{beta_prior.alpha + static_cast<double>(ones),
                                 beta_prior.beta + static_cast<double>(zeros)});
  }
  const Index d = data.dim();
  Vector first = Vector::Zero(d);
  Matrix precision = data.delta * Matrix::Identity(d, d);
  Index kept = 0;
  for (Index i = 0; i < data.size(); ++i) {
    if (drop[static_cast<std::size_t>(i)]) continue;
    const Vector x = data.features.row(i).transpose();
    first += x * data.labels(i);
    precision.noalias() += x * x.transpose();
    ++kept;
  }
  if ((kept == 0 && data.delta == 0.0) || !try_cholesky(precision)) {
    fail(ErrorCode::kDegeneratePosterior, "ridge posterior on the remaining data is improper");
  }
  return NaturalParams::gaussian_full(first, -0.5 * precision);
}

Vector fd_gradient(const ScalarLoss& fn, const Vector& point, double step) {
  Vector g(point.size());
  Vector x = point;
  for (Index k = 0; k < point.size(); ++k) {
    x(k) = point(k) + step;
    const double up = fn(x);
    x(k) = point(k) - step;
    const double down = fn(x);
    x(k) = point(k);
    g(k) = (up - down) / (2.0 * step);
  }
  return g;
}

Matrix fd_jacobian(const VectorFn& fn, const Vector& point, double step) {
  const Vector f0 = fn(point);
  Matrix jac(point.size(), f0.size());
  Vector x = point;
  for (Index k = 0; k < point.size(); ++k) {
    x(k) = point(k) + step;
    const Vector up = fn(x);
    x(k) = point(k) - step;
    const Vector down = fn(x);
    x(k) = point(k);
    jac.row(k) = ((up - down) / (2.0 * step)).transpose();
  }
  return jac;
}

double relative_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorCode::kInvalidParameter, "relative_error shape mismatch");
  }
  if (a.size() == 0) return 0.0;
  const double diff = (a - b).lpNorm<Eigen::Infinity>();
  const double ref = std::max({a.lpNorm<Eigen::Infinity>(), b.lpNorm<Eigen::Infinity>(),
                               std::numeric_limits<double>::min()});
  return diff / ref;
}

double finite_difference_check(const ScalarLoss& fn, const GradientFn& gradient,
                               const Vector& point, double step) {
  return relative_error(gradient(point), fd_gradient(fn, point, step));
}

double finite_difference_check(const VectorFn& fn, const std::function<Matrix(const Vector&)>& jacobian,
                               const Vector& point, double step) {
  return relative_error(jacobian(point), fd_jacobian(fn, point, step));
}

double finite_difference_check(const ScalarLoss& fn, const GradientFn& gradient,
                               const Vector& point, const Vector& direction, double step) {
  const double analytic = gradient(point).dot(direction);
  const double numeric = (fn(point + step * direction) - fn(point - step * direction)) / (2.0 * step);
  return relative_error(Matrix::Constant(1, 1, analytic), Matrix::Constant(1, 1, numeric));
}

double rank_correlation(std::span<const double> xs, std::span<const double> ys, CorrelationKind kind) {
  if (xs.size() != ys.size()) fail(ErrorCode::kInvalidParameter, "correlation inputs differ in length");
  if (xs.size() < 3) fail(ErrorCode::kInvalidParameter, "correlation needs at least 3 points");
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (!std::isfinite(xs[k]) || !std::isfinite(ys[k])) {
      fail(ErrorCode::kNumericalFailure, "non-finite correlation input");
    }
  }
  if (kind == CorrelationKind::kPearson) return pearson(xs, ys);
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

DeviationComparison compare_removal(const ModelSpec& model, const Dataset& data,
                                    const Vector& theta_star, const PreconditionerView& view,
                                    std::span<const Index> group, GroupMode mode,
                                    const RetrainConfig& config, std::string id) {
  PerturbationSpec pert;
  pert.indices.assign(group.begin(), group.end());
  const RetrainResult refit = retrain_without(model, data, pert, config, theta_star);

  DeviationComparison row;
  row.id = std::move(id);
  row.retrain_converged = refit.converged;
  const Index k = model.output_dim;
  const Index m = static_cast<Index>(group.size());
  row.true_deviation.resize(m * k);
  row.estimated_deviation.resize(m * k);
  const auto est = group_output_deviation(model, theta_star, view, data, group, mode);
  for (Index a = 0; a < m; ++a) {
    const Index i = group[static_cast<std::size_t>(a)];
    row.true_deviation.segment(a * k, k) =
        link_mean(model, output(model, refit.theta, data, i)) - link_mean(model, output(model, theta_star, data, i));
    row.estimated_deviation.segment(a * k, k) = est[static_cast<std::size_t>(a)];
  }
  row.true_norm = (refit.theta - theta_star).norm();
  row.estimate_norm = parameter_deviation_estimate(model, theta_star, view, data, pert).norm();
  return row;
}

std::string comparison_csv_header() { return "id,true_score,est_score,true_norm,est_norm"; }

std::string comparison_csv_row(const DeviationComparison& row) {
  return row.id + "," + format_double(row.true_score()) + "," + format_double(row.estimate_score()) +
         "," + format_double(row.true_norm) + "," + format_double(row.estimate_norm);
}

}  // namespace mempert

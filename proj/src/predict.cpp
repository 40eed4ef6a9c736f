#include "mempert/predict.hpp"

#include <cmath>

#include "mempert/error.hpp"
#include "mempert/format.hpp"
#include "mempert/mpe.hpp"

namespace mempert {
namespace {

double shifted_nll(const ModelSpec& model, const Vector& f, const Vector& shift, const Dataset& data,
                   Index i) {
  const Vector moved = f + shift;
  if (!moved.allFinite()) {
    fail(ErrorCode::kNumericalFailure, "non-finite perturbed output for example " + std::to_string(i));
  }
  return nll_from_output(model, moved, data, i);
}

Vector group_gradient(const ModelSpec& model, const Vector& theta, const Dataset& data,
                      std::span<const Index> subset) {
  Vector total = Vector::Zero(theta.size());
  for (Index j : subset) total += example_gradient(model, theta, data, j);
  return total;
}

}  // namespace

GeneralizationReport loo_estimate(const ModelSpec& model, const Vector& theta,
                                  const PreconditionerView& view, const Dataset& data,
                                  double variance_scale) {
  GeneralizationReport report;
  report.n = data.size();
  report.per_example.reserve(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) {
    const OutputJacobian oj = output_and_jacobian(model, theta, data, i);
    const Vector e = residual_from_output(model, oj.f, data, i);
    Vector shift(oj.f.size());
    for (Index c = 0; c < shift.size(); ++c) {
      shift(c) = variance_scale * view.quadratic(oj.jacobian.col(c)) * e(c);
    }
    const double nll = shifted_nll(model, oj.f, shift, data, i);
    report.per_example.push_back(nll);
    report.loo_sum += nll;
  }
  report.loo_mean = report.loo_sum / static_cast<double>(report.n);
  if (!std::isfinite(report.loo_sum)) fail(ErrorCode::kNumericalFailure, "non-finite LOO estimate");
  return report;
}

GeneralizationReport loo_estimate_iblr(const ModelSpec& model, const TrainerState& trainer,
                                       const Dataset& data) {
  if (trainer.algorithm != Algorithm::kIblr) {
    fail(ErrorCode::kInvalidParameter, "loo_estimate_iblr needs an IBLR trainer");
  }
  GeneralizationReport report = loo_estimate(model, trainer.theta, preconditioner_view(trainer), data);
  report.step = trainer.step;
  return report;
}

double subset_loss_estimate(const ModelSpec& model, const Vector& theta,
                            const PreconditionerView& view, const Dataset& data,
                            std::span<const Index> subset, SubsetMode mode) {
  if (subset.empty()) fail(ErrorCode::kInvalidParameter, "subset must be nonempty");
  Vector direction;
  if (mode == SubsetMode::kGroupSum) direction = view.apply(group_gradient(model, theta, data, subset));
  double total = 0.0;
  for (Index i : subset) {
    const OutputJacobian oj = output_and_jacobian(model, theta, data, i);
    Vector shift;
    if (mode == SubsetMode::kGroupSum) {
      shift = oj.jacobian.transpose() * direction;
    } else {
      const Vector e = residual_from_output(model, oj.f, data, i);
      shift.resize(oj.f.size());
      for (Index c = 0; c < shift.size(); ++c) shift(c) = view.quadratic(oj.jacobian.col(c)) * e(c);
    }
    total += shifted_nll(model, oj.f, shift, data, i);
  }
  return total;
}

double subset_loss_estimate_heldout(const ModelSpec& model, const Vector& theta,
                                    const PreconditionerView& view, const Dataset& train,
                                    std::span<const Index> subset, const Dataset& heldout,
                                    std::span<const Index> heldout_rows) {
  if (subset.empty()) fail(ErrorCode::kInvalidParameter, "subset must be nonempty");
  const Vector direction = view.apply(group_gradient(model, theta, train, subset));
  double total = 0.0;
  for (Index i : heldout_rows) {
    const OutputJacobian oj = output_and_jacobian(model, theta, heldout, i);
    total += shifted_nll(model, oj.f, oj.jacobian.transpose() * direction, heldout, i);
  }
  return total;
}

HeldoutMetrics test_nll(const ModelSpec& model, const Vector& theta, const Dataset& heldout) {
  if (heldout.size() < 1) fail(ErrorCode::kInvalidParameter, "held-out set is empty");
  HeldoutMetrics m;
  m.n = heldout.size();
  m.has_accuracy = heldout.task != Task::kRegression;
  Index correct = 0;
  for (Index i = 0; i < heldout.size(); ++i) {
    const Vector f = output(model, theta, heldout, i);
    m.nll_sum += nll_from_output(model, f, heldout, i);
    if (heldout.task == Task::kBinary) {
      correct += ((f(0) > 0.0) == (heldout.labels(i) > 0.5)) ? 1 : 0;
    } else if (heldout.task == Task::kMulticlass) {
      Index arg = 0;
      f.maxCoeff(&arg);
      correct += arg == heldout.label_class(i) ? 1 : 0;
    }
  }
  m.nll_mean = m.nll_sum / static_cast<double>(m.n);
  if (m.has_accuracy) m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);
  return m;
}

double training_nll(const ModelSpec& model, const Vector& theta, const Dataset& data) {
  double total = 0.0;
  for (Index i = 0; i < data.size(); ++i) total += nll_from_output(model, output(model, theta, data, i), data, i);
  return total;
}

std::string report_jsonl(const GeneralizationReport& report) {
  std::string out = "{\"step\":" + std::to_string(report.step) + ",\"loo\":" + format_double(report.loo_mean);
  out += ",\"test_nll\":" + (report.test_nll ? format_double(*report.test_nll) : std::string("null"));
  out += ",\"n\":" + std::to_string(report.n) + "}";
  return out;
}

}  // namespace mempert

#include "mempert/expfam.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mempert/error.hpp"

namespace mempert {
namespace {

void require_same_layout(const NaturalParams& a, const NaturalParams& b) {
  if (a.family != b.family || a.first.size() != b.first.size() ||
      a.second.rows() != b.second.rows() || a.second.cols() != b.second.cols()) {
    fail(ErrorCode::kInvalidParameter, "natural parameters have different families or shapes");
  }
}

bool valid_gaussian_full(const NaturalParams& lambda) {
  const Index p = lambda.first.size();
  if (p == 0 || lambda.second.rows() != p || lambda.second.cols() != p) return false;
  if (!lambda.first.allFinite() || !lambda.second.allFinite()) return false;
  const Matrix precision = -2.0 * lambda.second;
  return is_symmetric(precision, 1e-10) && try_cholesky(precision).has_value();
}

bool valid_gaussian_diag(const NaturalParams& lambda) {
  const Index p = lambda.first.size();
  if (p == 0 || lambda.second.rows() != p || lambda.second.cols() != 1) return false;
  if (!lambda.first.allFinite() || !lambda.second.allFinite()) return false;
  return ((-2.0 * lambda.second).array() > 0.0).all();
}

bool valid_beta(const NaturalParams& lambda) {
  if (lambda.first.size() != 1 || lambda.second.size() != 1) return false;
  const double a = lambda.first(0);
  const double b = lambda.second(0, 0);
  return std::isfinite(a) && std::isfinite(b) && a > -1.0 && b > -1.0;
}

}  // namespace

std::string_view family_name(Family family) {
  switch (family) {
    case Family::kGaussianFull: return "gaussian_full";
    case Family::kGaussianDiag: return "gaussian_diag";
    case Family::kBeta: return "beta";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  if (name == "gaussian_full") return Family::kGaussianFull;
  if (name == "gaussian_diag") return Family::kGaussianDiag;
  if (name == "beta") return Family::kBeta;
  fail(ErrorCode::kInvalidParameter, "unknown family '" + std::string(name) + "'");
}

NaturalParams NaturalParams::gaussian_full(Vector first, Matrix second) {
  return NaturalParams{Family::kGaussianFull, std::move(first), std::move(second)};
}

NaturalParams NaturalParams::gaussian_diag(Vector first, Vector second) {
  return NaturalParams{Family::kGaussianDiag, std::move(first), Matrix(std::move(second))};
}

NaturalParams NaturalParams::beta(double first, double second) {
  return NaturalParams{Family::kBeta, Vector::Constant(1, first), Matrix::Constant(1, 1, second)};
}

NaturalParams NaturalParams::zeros_like(const NaturalParams& other) {
  return NaturalParams{other.family, Vector::Zero(other.first.size()),
                       Matrix::Zero(other.second.rows(), other.second.cols())};
}

NaturalParams& NaturalParams::operator+=(const NaturalParams& other) {
  require_same_layout(*this, other);
  first += other.first;
  second += other.second;
  return *this;
}

NaturalParams& NaturalParams::operator-=(const NaturalParams& other) {
  require_same_layout(*this, other);
  first -= other.first;
  second -= other.second;
  return *this;
}

NaturalParams& NaturalParams::operator*=(double scale) {
  first *= scale;
  second *= scale;
  return *this;
}

NaturalParams operator+(NaturalParams lhs, const NaturalParams& rhs) { return lhs += rhs; }
NaturalParams operator-(NaturalParams lhs, const NaturalParams& rhs) { return lhs -= rhs; }
NaturalParams operator*(double scale, NaturalParams rhs) { return rhs *= scale; }

bool is_valid(const NaturalParams& lambda) {
  switch (lambda.family) {
    case Family::kGaussianFull: return valid_gaussian_full(lambda);
    case Family::kGaussianDiag: return valid_gaussian_diag(lambda);
    case Family::kBeta: return valid_beta(lambda);
  }
  return false;
}

double max_abs_difference(const NaturalParams& a, const NaturalParams& b) {
  require_same_layout(a, b);
  const double d1 = a.first.size() ? (a.first - b.first).cwiseAbs().maxCoeff() : 0.0;
  const double d2 = a.second.size() ? (a.second - b.second).cwiseAbs().maxCoeff() : 0.0;
  return std::max(d1, d2);
}

NaturalParams to_natural(const GaussianFullParams& params) {
  const Index p = params.mean.size();
  if (p == 0 || params.precision.rows() != p || params.precision.cols() != p) {
    fail(ErrorCode::kInvalidParameter, "mean/precision shape mismatch");
  }
  if (!is_symmetric(params.precision, 1e-10) || !try_cholesky(params.precision)) {
    fail(ErrorCode::kInvalidParameter, "precision is not symmetric positive definite");
  }
  return NaturalParams::gaussian_full(params.precision * params.mean, -0.5 * params.precision);
}

NaturalParams to_natural(const GaussianDiagParams& params) {
  if (params.mean.size() == 0 || params.precision.size() != params.mean.size()) {
    fail(ErrorCode::kInvalidParameter, "mean/precision shape mismatch");
  }
  if (!(params.precision.array() > 0.0).all() || !params.precision.allFinite()) {
    fail(ErrorCode::kInvalidParameter, "diagonal precision must be strictly positive");
  }
  return NaturalParams::gaussian_diag(params.precision.cwiseProduct(params.mean),
                                      -0.5 * params.precision);
}

NaturalParams to_natural(const BetaParams& params) {
  if (!(params.alpha > 0.0) || !(params.beta > 0.0) || !std::isfinite(params.alpha) ||
      !std::isfinite(params.beta)) {
    fail(ErrorCode::kInvalidParameter, "Beta parameters must be positive");
  }
  return NaturalParams::beta(params.alpha - 1.0, params.beta - 1.0);
}

NaturalParams to_natural(const FamilyParams& params) {
  return std::visit([](const auto& p) { return to_natural(p); }, params);
}

FamilyParams from_natural(const NaturalParams& lambda) {
  if (!is_valid(lambda)) {
    fail(ErrorCode::kInvalidParameter,
         "natural parameter outside the " + std::string(family_name(lambda.family)) + " domain");
  }
  switch (lambda.family) {
    case Family::kGaussianFull: {
      Matrix precision = -2.0 * lambda.second;
      Vector mean = Cholesky(precision).solve(lambda.first);
      return GaussianFullParams{std::move(mean), std::move(precision)};
    }
    case Family::kGaussianDiag: {
      Vector precision = -2.0 * lambda.second.col(0);
      Vector mean = lambda.first.cwiseQuotient(precision);
      return GaussianDiagParams{std::move(mean), std::move(precision)};
    }
    case Family::kBeta:
      return BetaParams{lambda.first(0) + 1.0, lambda.second(0, 0) + 1.0};
  }
  fail(ErrorCode::kInvalidParameter, "unknown family");
}

LikelihoodNat bernoulli_likelihood_natural(int y) {
  if (y != 0 && y != 1) fail(ErrorCode::kInvalidParameter, "Bernoulli label must be 0 or 1");
  return NaturalParams::beta(static_cast<double>(y), static_cast<double>(1 - y));
}

LikelihoodNat linreg_likelihood_natural(const Vector& x, double y) {
  return NaturalParams::gaussian_full(x * y, -0.5 * (x * x.transpose()));
}

NaturalParams remove_from_posterior(const NaturalParams& lambda,
                                    std::span<const LikelihoodNat> factors,
                                    std::span<const double> epsilons) {
  if (!epsilons.empty() && epsilons.size() != factors.size()) {
    fail(ErrorCode::kInvalidParameter, "one epsilon per factor required");
  }
  NaturalParams out = lambda;
  for (std::size_t j = 0; j < factors.size(); ++j) {
    const double eps = epsilons.empty() ? 1.0 : epsilons[j];
    require_same_layout(out, factors[j]);
    out.first -= eps * factors[j].first;
    out.second -= eps * factors[j].second;
  }
  if (!is_valid(out)) {
    fail(ErrorCode::kDegeneratePosterior,
         "removal leaves no valid " + std::string(family_name(out.family)) + " posterior");
  }
  return out;
}

NaturalParams absorb_factors(const NaturalParams& prior, std::span<const LikelihoodNat> factors) {
  NaturalParams out = prior;
  for (const auto& f : factors) out += f;
  if (!is_valid(out)) fail(ErrorCode::kDegeneratePosterior, "posterior outside family domain");
  return out;
}

nlohmann::json to_json(const NaturalParams& lambda) {
  nlohmann::json j;
  j["family"] = std::string(family_name(lambda.family));
  j["first"] = std::vector<double>(lambda.first.data(), lambda.first.data() + lambda.first.size());
  if (lambda.family == Family::kGaussianFull) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index r = 0; r < lambda.second.rows(); ++r) {
      std::vector<double> row(lambda.second.cols());
      for (Index c = 0; c < lambda.second.cols(); ++c) row[c] = lambda.second(r, c);
      rows.push_back(row);
    }
    j["second"] = rows;
  } else if (lambda.family == Family::kGaussianDiag) {
    j["second"] = std::vector<double>(lambda.second.data(),
                                      lambda.second.data() + lambda.second.size());
  } else {
    j["first"] = lambda.first(0);
    j["second"] = lambda.second(0, 0);
  }
  return j;
}

NaturalParams natural_params_from_json(const nlohmann::json& j) {
  const Family family = parse_family(j.at("family").get<std::string>());
  if (family == Family::kBeta) {
    return NaturalParams::beta(j.at("first").get<double>(), j.at("second").get<double>());
  }
  const auto first = j.at("first").get<std::vector<double>>();
  Vector f = Eigen::Map<const Vector>(first.data(), static_cast<Index>(first.size()));
  if (family == Family::kGaussianDiag) {
    const auto second = j.at("second").get<std::vector<double>>();
    return NaturalParams::gaussian_diag(
        f, Eigen::Map<const Vector>(second.data(), static_cast<Index>(second.size())));
  }
  const auto rows = j.at("second").get<std::vector<std::vector<double>>>();
  Matrix s(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (Index r = 0; r < s.rows(); ++r) {
    if (static_cast<Index>(rows[r].size()) != s.cols()) {
      fail(ErrorCode::kParseError, "ragged matrix in natural parameter JSON");
    }
    for (Index c = 0; c < s.cols(); ++c) s(r, c) = rows[r][c];
  }
  return NaturalParams::gaussian_full(std::move(f), std::move(s));
}

PosteriorState PosteriorState::full(Vector mean, Matrix precision) {
  if (precision.rows() != mean.size() || precision.cols() != mean.size()) {
    fail(ErrorCode::kInvalidParameter, "precision shape mismatch");
  }
  auto factor = try_cholesky(precision);
  if (!factor || !is_symmetric(precision, 1e-10)) {
    fail(ErrorCode::kInvalidParameter, "precision is not symmetric positive definite");
  }
  PosteriorState q;
  q.mean_ = std::move(mean);
  q.shape_ = Shape::kFull;
  q.full_ = std::move(precision);
  q.factor_ = std::move(*factor);
  return q;
}

PosteriorState PosteriorState::diag(Vector mean, Vector precision) {
  if (precision.size() != mean.size()) fail(ErrorCode::kInvalidParameter, "precision shape mismatch");
  if (!(precision.array() > 0.0).all()) {
    fail(ErrorCode::kInvalidParameter, "diagonal precision must be strictly positive");
  }
  PosteriorState q;
  q.mean_ = std::move(mean);
  q.shape_ = Shape::kDiag;
  q.diag_ = std::move(precision);
  return q;
}

PosteriorState PosteriorState::scaled_identity(Vector mean, double precision) {
  if (!(precision > 0.0)) fail(ErrorCode::kInvalidParameter, "precision must be positive");
  PosteriorState q;
  q.mean_ = std::move(mean);
  q.shape_ = Shape::kScaledIdentity;
  q.scale_ = precision;
  return q;
}

PosteriorState PosteriorState::from_natural(const NaturalParams& lambda) {
  const FamilyParams params = mempert::from_natural(lambda);
  if (const auto* full_params = std::get_if<GaussianFullParams>(&params)) {
    return full(full_params->mean, full_params->precision);
  }
  if (const auto* diag_params = std::get_if<GaussianDiagParams>(&params)) {
    return diag(diag_params->mean, diag_params->precision);
  }
  fail(ErrorCode::kUnsupportedFamily, "posterior state is Gaussian only");
}

const Matrix& PosteriorState::full_precision() const {
  if (shape_ != Shape::kFull) fail(ErrorCode::kInvalidParameter, "posterior is not full-rank");
  return full_;
}

Vector PosteriorState::precision_diagonal() const {
  switch (shape_) {
    case Shape::kFull: return full_.diagonal();
    case Shape::kDiag: return diag_;
    case Shape::kScaledIdentity: return Vector::Constant(mean_.size(), scale_);
  }
  return {};
}

NaturalParams PosteriorState::natural() const {
  if (shape_ == Shape::kFull) return to_natural(GaussianFullParams{mean_, full_});
  return to_natural(GaussianDiagParams{mean_, precision_diagonal()});
}

Vector PosteriorState::sample(std::mt19937_64& rng) const {
  Vector z;
  return sample(rng, z);
}

Vector PosteriorState::sample(std::mt19937_64& rng, Vector& standard_normal) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  standard_normal.resize(mean_.size());
  for (Index k = 0; k < standard_normal.size(); ++k) standard_normal(k) = normal(rng);
  switch (shape_) {
    case Shape::kFull:
      return mean_ + factor_->matrixU().solve(standard_normal);
    case Shape::kDiag:
      return mean_ + standard_normal.cwiseQuotient(diag_.cwiseSqrt());
    case Shape::kScaledIdentity:
      return mean_ + standard_normal / std::sqrt(scale_);
  }
  return mean_;
}

}  // namespace mempert

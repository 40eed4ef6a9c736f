#pragma once
// Exponential-family parameter algebra for the Gaussian (full / diagonal
// precision) and Beta families.
//
// Natural parameters use the layouts
//   Gaussian: first = S m,   second = -S/2   (P x P, or P x 1 for diagonal S)
//   Beta:     first = a - 1, second = b - 1  (1-vector and 1 x 1)
// so that conjugate updates and removals are plain additions/subtractions.

#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <variant>

#include "json.hpp"
#include "mempert/linalg.hpp"

namespace mempert {

enum class Family { kGaussianFull, kGaussianDiag, kBeta };

std::string_view family_name(Family family);
Family parse_family(std::string_view name);

struct NaturalParams {
  Family family = Family::kGaussianFull;
  Vector first;
  Matrix second;

  static NaturalParams gaussian_full(Vector first, Matrix second);
  static NaturalParams gaussian_diag(Vector first, Vector second);
  static NaturalParams beta(double first, double second);
  static NaturalParams zeros_like(const NaturalParams& other);

  Index dim() const { return first.size(); }

  NaturalParams& operator+=(const NaturalParams& other);
  NaturalParams& operator-=(const NaturalParams& other);
  NaturalParams& operator*=(double scale);
};

NaturalParams operator+(NaturalParams lhs, const NaturalParams& rhs);
NaturalParams operator-(NaturalParams lhs, const NaturalParams& rhs);
NaturalParams operator*(double scale, NaturalParams rhs);

// Natural parameter of a single likelihood factor. May be improper (its
// second component need not be negative definite); validity is only required
// of posteriors.
using LikelihoodNat = NaturalParams;

bool is_valid(const NaturalParams& lambda);
double max_abs_difference(const NaturalParams& a, const NaturalParams& b);

struct GaussianFullParams {
  Vector mean;
  Matrix precision;
};

struct GaussianDiagParams {
  Vector mean;
  Vector precision;
};

struct BetaParams {
  double alpha = 1.0;
  double beta = 1.0;
};

using FamilyParams = std::variant<GaussianFullParams, GaussianDiagParams, BetaParams>;

NaturalParams to_natural(const GaussianFullParams& params);
NaturalParams to_natural(const GaussianDiagParams& params);
NaturalParams to_natural(const BetaParams& params);
NaturalParams to_natural(const FamilyParams& params);

FamilyParams from_natural(const NaturalParams& lambda);

// Bernoulli likelihood theta^y (1 - theta)^(1 - y) in Beta layout: (y, 1 - y).
LikelihoodNat bernoulli_likelihood_natural(int y);

// Unit-noise Gaussian likelihood N(y | x^T theta, 1): (x y, -x x^T / 2).
LikelihoodNat linreg_likelihood_natural(const Vector& x, double y);

// lambda - sum_j eps_j * factor_j. `epsilons` empty means all ones.
// Throws DegeneratePosterior when the result leaves the family's domain.
NaturalParams remove_from_posterior(const NaturalParams& lambda,
                                    std::span<const LikelihoodNat> factors,
                                    std::span<const double> epsilons = {});

// prior + sum_j factor_j, validated.
NaturalParams absorb_factors(const NaturalParams& prior, std::span<const LikelihoodNat> factors);

nlohmann::json to_json(const NaturalParams& lambda);
NaturalParams natural_params_from_json(const nlohmann::json& j);

// Gaussian q(theta) = N(m, S^-1) with S stored as a full matrix, a diagonal,
// or a scaled identity.
class PosteriorState {
 public:
  enum class Shape { kFull, kDiag, kScaledIdentity };

  static PosteriorState full(Vector mean, Matrix precision);
  static PosteriorState diag(Vector mean, Vector precision);
  static PosteriorState scaled_identity(Vector mean, double precision);
  static PosteriorState from_natural(const NaturalParams& lambda);

  const Vector& mean() const { return mean_; }
  Shape shape() const { return shape_; }
  Index dim() const { return mean_.size(); }
  // Full precision matrix; only for kFull.
  const Matrix& full_precision() const;
  // Diagonal of S for every shape.
  Vector precision_diagonal() const;
  double identity_scale() const { return scale_; }

  // Full shape maps to GaussianFull, the other two to GaussianDiag.
  NaturalParams natural() const;

  Vector sample(std::mt19937_64& rng) const;
  // One standard-normal draw mapped through S^{-1/2}; exposes the noise used.
  Vector sample(std::mt19937_64& rng, Vector& standard_normal) const;

 private:
  PosteriorState() = default;

  Vector mean_;
  Shape shape_ = Shape::kDiag;
  Matrix full_;
  Vector diag_;
  double scale_ = 1.0;
  std::optional<Cholesky> factor_;
};

}  // namespace mempert

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <optional>

namespace mempert {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using Cholesky = Eigen::LLT<Matrix>;

// Jitter added once when a full-matrix factorization fails.
inline constexpr double kFactorizationJitter = 1e-8;

// Exact factorization; no eigenvalue slack.
std::optional<Cholesky> try_cholesky(const Matrix& spd);

// Factorizes `spd`, retrying once with kFactorizationJitter on the diagonal.
// A second failure throws SingularCurvature.
Cholesky cholesky_with_jitter(const Matrix& spd);

bool is_symmetric(const Matrix& m, double relative_tolerance = 1e-12);

bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);

}  // namespace mempert

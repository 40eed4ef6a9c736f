#pragma once
// Reference computations used only by the tests. Each one takes a different
// route from the library code it checks (QR instead of normal equations,
// Fisher information instead of conjugacy, plain sorting for ranks).

#include <span>
#include <vector>

#include "mempert/linalg.hpp"
#include "mempert/models.hpp"

namespace mempert::testing {

// argmin |X theta - y|^2 + delta |theta|^2 via QR of the stacked system.
Vector ridge_qr(const Matrix& x, const Vector& y, double delta);

// Ridge fit with row `drop` deleted, by the same QR route.
Vector ridge_qr_without(const Matrix& x, const Vector& y, double delta, Index drop);

// Natural gradient of E_q[-log p(y | theta)] for q = Beta(alpha, beta), computed
// as F^{-1} grad_lambda with the Fisher matrix of the Beta log-partition.
Vector beta_fisher_natural_gradient(double alpha, double beta, int y);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> xs, std::span<const double> ys);
double pearson(std::span<const double> xs, std::span<const double> ys);

// Random datasets with fixed seeds.
Dataset random_regression(std::uint64_t seed, Index n, Index d, double delta);
Dataset random_classification(std::uint64_t seed, Index n, Index d, int classes, double delta,
                              double separation = 1.5);

}  // namespace mempert::testing

#include "mempert/linalg.hpp"

#include "mempert/error.hpp"

namespace mempert {

std::optional<Cholesky> try_cholesky(const Matrix& spd) {
  if (spd.rows() != spd.cols() || spd.rows() == 0 || !spd.allFinite()) return std::nullopt;
  Cholesky llt(spd);
  if (llt.info() != Eigen::Success) return std::nullopt;
  return llt;
}

Cholesky cholesky_with_jitter(const Matrix& spd) {
  if (auto llt = try_cholesky(spd)) return std::move(*llt);
  Matrix damped = spd;
  damped.diagonal().array() += kFactorizationJitter;
  if (auto llt = try_cholesky(damped)) return std::move(*llt);
  fail(ErrorCode::kSingularCurvature, "matrix is not positive definite even after jitter");
}

bool is_symmetric(const Matrix& m, double relative_tolerance) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= relative_tolerance * scale;
}

bool all_finite(const Vector& v) { return v.allFinite(); }
bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace mempert

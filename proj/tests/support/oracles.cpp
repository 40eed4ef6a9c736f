#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace mempert::testing {

Vector ridge_qr(const Matrix& x, const Vector& y, double delta) {
  const Index n = x.rows();
  const Index d = x.cols();
  Matrix a(n + d, d);
  a << x, std::sqrt(delta) * Matrix::Identity(d, d);
  Vector b = Vector::Zero(n + d);
  b.head(n) = y;
  return a.colPivHouseholderQr().solve(b);
}

Vector ridge_qr_without(const Matrix& x, const Vector& y, double delta, Index drop) {
  Matrix xr(x.rows() - 1, x.cols());
  Vector yr(x.rows() - 1);
  for (Index i = 0, r = 0; i < x.rows(); ++i) {
    if (i == drop) continue;
    xr.row(r) = x.row(i);
    yr(r++) = y(i);
  }
  return ridge_qr(xr, yr, delta);
}

Vector beta_fisher_natural_gradient(double alpha, double beta, int y) {
  using boost::math::digamma;
  using boost::math::trigamma;
  const double t_ab = trigamma(alpha + beta);
  Matrix fisher(2, 2);
  fisher << trigamma(alpha) - t_ab, -t_ab, -t_ab, trigamma(beta) - t_ab;
  // Gradient of E_q[-log p(y | theta)] in lambda = (a - 1, b - 1), by central
  // differences of the digamma expressions E[log theta] = psi(a) - psi(a + b)
  // and E[log(1 - theta)] = psi(b) - psi(a + b).
  auto expected_loss = [y](double a, double b) {
    return -(y * (digamma(a) - digamma(a + b)) + (1 - y) * (digamma(b) - digamma(a + b)));
  };
  const double h = 1e-6;
  Vector grad(2);
  grad << (expected_loss(alpha + h, beta) - expected_loss(alpha - h, beta)) / (2 * h),
      (expected_loss(alpha, beta + h) - expected_loss(alpha, beta - h)) / (2 * h);
  return fisher.fullPivLu().solve(grad);
}

namespace {

std::vector<double> ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (std::size_t k = 0; k < idx.size();) {
    std::size_t e = k;
    while (e + 1 < idx.size() && xs[idx[e + 1]] == xs[idx[k]]) ++e;
    for (std::size_t j = k; j <= e; ++j) r[idx[j]] = 0.5 * static_cast<double>(k + e) + 1.0;
    k = e + 1;
  }
  return r;
}

}  // namespace

double pearson(std::span<const double> xs, std::span<const double> ys) {
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxy += (xs[k] - mx) * (ys[k] - my);
    sxx += (xs[k] - mx) * (xs[k] - mx);
    syy += (ys[k] - my) * (ys[k] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  const auto rx = ranks(xs);
  const auto ry = ranks(ys);
  return pearson(rx, ry);
}

Dataset random_regression(std::uint64_t seed, Index n, Index d, double delta) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Dataset data;
  data.task = Task::kRegression;
  data.delta = delta;
  data.features.resize(n, d);
  data.labels.resize(n);
  Vector w(d);
  for (Index k = 0; k < d; ++k) w(k) = normal(rng);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < d; ++k) data.features(i, k) = normal(rng);
    data.labels(i) = data.features.row(i).dot(w) + 0.3 * normal(rng);
  }
  return data;
}

Dataset random_classification(std::uint64_t seed, Index n, Index d, int classes, double delta,
                              double separation) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Dataset data;
  data.task = classes == 2 ? Task::kBinary : Task::kMulticlass;
  data.num_classes = classes;
  data.delta = delta;
  data.features.resize(n, d);
  data.labels.resize(n);
  for (Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % classes);
    for (Index k = 0; k < d; ++k) {
      data.features(i, k) = normal(rng) + (k % classes == c ? separation : 0.0);
    }
    data.labels(i) = c;
  }
  return data;
}

}  // namespace mempert::testing

#include "mempert/kernels.hpp"

namespace mempert::kernels {
namespace {

double dot(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += x[k] * y[k];
  return acc;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) y[k] += a * x[k];
}

double weighted_sum_squares(const double* x, const double* w, std::size_t n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += w[k] * (x[k] * x[k]);
  return acc;
}

void divide(const double* x, const double* d, double* out, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) out[k] = x[k] / d[k];
}

void ema(double beta, const double* x, double* avg, std::size_t n) {
  const double rest = 1.0 - beta;
  for (std::size_t k = 0; k < n; ++k) avg[k] = beta * avg[k] + rest * x[k];
}

void square_ema(double beta, const double* x, double* avg, std::size_t n) {
  const double rest = 1.0 - beta;
  for (std::size_t k = 0; k < n; ++k) avg[k] = beta * avg[k] + rest * (x[k] * x[k]);
}

void iblr_hessian_update(double beta2, double delta, const double* hhat, double* h,
                         std::size_t n) {
  const double rest = 1.0 - beta2;
  const double corr = 0.5 * rest * rest;
  for (std::size_t k = 0; k < n; ++k) {
    const double gap = h[k] - hhat[k];
    h[k] = beta2 * h[k] + rest * hhat[k] + corr * (gap * gap) / (h[k] + delta);
  }
}

void iblr_mean_update(double alpha, double delta, const double* g, const double* h, double* m,
                      std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    m[k] = m[k] - alpha * ((g[k] + delta * m[k]) / (h[k] + delta));
  }
}

constexpr KernelTable kScalar{
    Isa::kScalar, dot, axpy, weighted_sum_squares, divide, ema, square_ema,
    iblr_hessian_update, iblr_mean_update,
};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace mempert::kernels

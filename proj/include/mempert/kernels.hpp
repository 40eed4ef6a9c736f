#pragma once
// Data-parallel inner loops used by the preconditioners and the diagonal
// trainers. Each kernel has a scalar reference implementation and an AVX2
// variant; the active table is chosen once at startup from CPUID and can be
// pinned with MEMPERT_ISA=scalar|avx2.
//
// Elementwise kernels are bit-identical across tables. Reductions (dot,
// weighted_sum_squares) differ only by summation order.

#include <cstddef>
#include <span>
#include <string_view>

namespace mempert::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  // sum_k x[k] * y[k]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // sum_k w[k] * x[k]^2
  double (*weighted_sum_squares)(const double* x, const double* w, std::size_t n);
  // out = x / d
  void (*divide)(const double* x, const double* d, double* out, std::size_t n);
  // avg = beta * avg + (1 - beta) * x
  void (*ema)(double beta, const double* x, double* avg, std::size_t n);
  // avg = beta * avg + (1 - beta) * x^2
  void (*square_ema)(double beta, const double* x, double* avg, std::size_t n);
  // h = b2 h + (1-b2) hh + 0.5 (1-b2)^2 (h - hh)^2 / (h + delta)
  void (*iblr_hessian_update)(double beta2, double delta, const double* hhat, double* h,
                              std::size_t n);
  // m -= alpha (g + delta m) / (h + delta)
  void (*iblr_mean_update)(double alpha, double delta, const double* g, const double* h,
                           double* m, std::size_t n);
};

const KernelTable& scalar_table();
// Null when the binary was built without the AVX2 translation unit or the
// CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

const KernelTable& active();
Isa active_isa();
std::string_view isa_name(Isa isa);
// Pins the active table (tests, benchmarking). Returns false if unavailable.
bool select(Isa isa);

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}
inline double weighted_sum_squares(std::span<const double> x, std::span<const double> w) {
  return active().weighted_sum_squares(x.data(), w.data(), x.size());
}
inline void divide(std::span<const double> x, std::span<const double> d, std::span<double> out) {
  active().divide(x.data(), d.data(), out.data(), x.size());
}
inline void ema(double beta, std::span<const double> x, std::span<double> avg) {
  active().ema(beta, x.data(), avg.data(), x.size());
}
inline void square_ema(double beta, std::span<const double> x, std::span<double> avg) {
  active().square_ema(beta, x.data(), avg.data(), x.size());
}
inline void iblr_hessian_update(double beta2, double delta, std::span<const double> hhat,
                                std::span<double> h) {
  active().iblr_hessian_update(beta2, delta, hhat.data(), h.data(), h.size());
}
inline void iblr_mean_update(double alpha, double delta, std::span<const double> g,
                             std::span<const double> h, std::span<double> m) {
  active().iblr_mean_update(alpha, delta, g.data(), h.data(), m.data(), m.size());
}

}  // namespace mempert::kernels

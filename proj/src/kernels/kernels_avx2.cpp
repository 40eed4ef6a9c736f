// Compiled with -mavx2 -mfma; only reached after a CPUID check.
#include <immintrin.h>

#include "mempert/kernels.hpp"

namespace mempert::kernels {
namespace {

inline double horizontal_sum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  const __m128d swapped = _mm_unpackhi_pd(pair, pair);
  return _mm_cvtsd_f64(_mm_add_sd(pair, swapped));
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + k), _mm256_loadu_pd(y + k), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + k + 4), _mm256_loadu_pd(y + k + 4), acc1);
  }
  for (; k + 4 <= n; k += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + k), _mm256_loadu_pd(y + k), acc0);
  }
  double acc = horizontal_sum(_mm256_add_pd(acc0, acc1));
  for (; k < n; ++k) acc += x[k] * y[k];
  return acc;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + k));
    _mm256_storeu_pd(y + k, _mm256_add_pd(_mm256_loadu_pd(y + k), prod));
  }
  for (; k < n; ++k) y[k] += a * x[k];
}

double weighted_sum_squares(const double* x, const double* w, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d vx = _mm256_loadu_pd(x + k);
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(w + k), _mm256_mul_pd(vx, vx), acc);
  }
  double sum = horizontal_sum(acc);
  for (; k < n; ++k) sum += w[k] * (x[k] * x[k]);
  return sum;
}

void divide(const double* x, const double* d, double* out, std::size_t n) {
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    _mm256_storeu_pd(out + k, _mm256_div_pd(_mm256_loadu_pd(x + k), _mm256_loadu_pd(d + k)));
  }
  for (; k < n; ++k) out[k] = x[k] / d[k];
}

void ema(double beta, const double* x, double* avg, std::size_t n) {
  const double rest = 1.0 - beta;
  const __m256d vb = _mm256_set1_pd(beta);
  const __m256d vr = _mm256_set1_pd(rest);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d kept = _mm256_mul_pd(vb, _mm256_loadu_pd(avg + k));
    const __m256d fresh = _mm256_mul_pd(vr, _mm256_loadu_pd(x + k));
    _mm256_storeu_pd(avg + k, _mm256_add_pd(kept, fresh));
  }
  for (; k < n; ++k) avg[k] = beta * avg[k] + rest * x[k];
}

void square_ema(double beta, const double* x, double* avg, std::size_t n) {
  const double rest = 1.0 - beta;
  const __m256d vb = _mm256_set1_pd(beta);
  const __m256d vr = _mm256_set1_pd(rest);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d vx = _mm256_loadu_pd(x + k);
    const __m256d kept = _mm256_mul_pd(vb, _mm256_loadu_pd(avg + k));
    const __m256d fresh = _mm256_mul_pd(vr, _mm256_mul_pd(vx, vx));
    _mm256_storeu_pd(avg + k, _mm256_add_pd(kept, fresh));
  }
  for (; k < n; ++k) avg[k] = beta * avg[k] + rest * (x[k] * x[k]);
}

void iblr_hessian_update(double beta2, double delta, const double* hhat, double* h,
                         std::size_t n) {
  const double rest = 1.0 - beta2;
  const double corr = 0.5 * rest * rest;
  const __m256d vb = _mm256_set1_pd(beta2);
  const __m256d vr = _mm256_set1_pd(rest);
  const __m256d vc = _mm256_set1_pd(corr);
  const __m256d vd = _mm256_set1_pd(delta);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d vh = _mm256_loadu_pd(h + k);
    const __m256d vhh = _mm256_loadu_pd(hhat + k);
    const __m256d gap = _mm256_sub_pd(vh, vhh);
    const __m256d linear = _mm256_add_pd(_mm256_mul_pd(vb, vh), _mm256_mul_pd(vr, vhh));
    const __m256d quad =
        _mm256_div_pd(_mm256_mul_pd(vc, _mm256_mul_pd(gap, gap)), _mm256_add_pd(vh, vd));
    _mm256_storeu_pd(h + k, _mm256_add_pd(linear, quad));
  }
  for (; k < n; ++k) {
    const double gap = h[k] - hhat[k];
    h[k] = beta2 * h[k] + rest * hhat[k] + corr * (gap * gap) / (h[k] + delta);
  }
}

void iblr_mean_update(double alpha, double delta, const double* g, const double* h, double* m,
                      std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  const __m256d vd = _mm256_set1_pd(delta);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d vm = _mm256_loadu_pd(m + k);
    const __m256d num = _mm256_add_pd(_mm256_loadu_pd(g + k), _mm256_mul_pd(vd, vm));
    const __m256d den = _mm256_add_pd(_mm256_loadu_pd(h + k), vd);
    _mm256_storeu_pd(m + k, _mm256_sub_pd(vm, _mm256_mul_pd(va, _mm256_div_pd(num, den))));
  }
  for (; k < n; ++k) {
    m[k] = m[k] - alpha * ((g[k] + delta * m[k]) / (h[k] + delta));
  }
}

constexpr KernelTable kAvx2{
    Isa::kAvx2, dot, axpy, weighted_sum_squares, divide, ema, square_ema,
    iblr_hessian_update, iblr_mean_update,
};

}  // namespace

const KernelTable& avx2_table_unchecked() { return kAvx2; }

}  // namespace mempert::kernels

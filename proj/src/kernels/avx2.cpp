// AVX2 + FMA variants. Compiled with -mavx2 -mfma; only called after the
// dispatcher has confirmed CPU support.

#include <immintrin.h>

#include "mvsum/kernels.hpp"

namespace mvsum::kernels::avx2 {

namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d high64 = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

// Row update crow[0..n) += sum_{r<4} coef[r] * rows[r][0..n).
inline void fma4_row(float* crow, const float* const rows[4], const float coef[4], std::size_t n) {
  const __m256 c0 = _mm256_set1_ps(coef[0]);
  const __m256 c1 = _mm256_set1_ps(coef[1]);
  const __m256 c2 = _mm256_set1_ps(coef[2]);
  const __m256 c3 = _mm256_set1_ps(coef[3]);
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256 acc = _mm256_loadu_ps(crow + j);
    acc = _mm256_fmadd_ps(c0, _mm256_loadu_ps(rows[0] + j), acc);
    acc = _mm256_fmadd_ps(c1, _mm256_loadu_ps(rows[1] + j), acc);
    acc = _mm256_fmadd_ps(c2, _mm256_loadu_ps(rows[2] + j), acc);
    acc = _mm256_fmadd_ps(c3, _mm256_loadu_ps(rows[3] + j), acc);
    _mm256_storeu_ps(crow + j, acc);
  }
  for (; j < n; ++j) {
    float acc = crow[j];
    acc += coef[0] * rows[0][j];
    acc += coef[1] * rows[1][j];
    acc += coef[2] * rows[2][j];
    acc += coef[3] * rows[3][j];
    crow[j] = acc;
  }
}

inline void fma4_row(double* crow, const double* const rows[4], const double coef[4], std::size_t n) {
  const __m256d c0 = _mm256_set1_pd(coef[0]);
  const __m256d c1 = _mm256_set1_pd(coef[1]);
  const __m256d c2 = _mm256_set1_pd(coef[2]);
  const __m256d c3 = _mm256_set1_pd(coef[3]);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d acc = _mm256_loadu_pd(crow + j);
    acc = _mm256_fmadd_pd(c0, _mm256_loadu_pd(rows[0] + j), acc);
    acc = _mm256_fmadd_pd(c1, _mm256_loadu_pd(rows[1] + j), acc);
    acc = _mm256_fmadd_pd(c2, _mm256_loadu_pd(rows[2] + j), acc);
    acc = _mm256_fmadd_pd(c3, _mm256_loadu_pd(rows[3] + j), acc);
    _mm256_storeu_pd(crow + j, acc);
  }
  for (; j < n; ++j) {
    double acc = crow[j];
    acc += coef[0] * rows[0][j];
    acc += coef[1] * rows[1][j];
    acc += coef[2] * rows[2][j];
    acc += coef[3] * rows[3][j];
    crow[j] = acc;
  }
}

}  // namespace

float dot(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

namespace {

template <typename T>
void gemm_nn_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const T* rows[4] = {b + p * n, b + (p + 1) * n, b + (p + 2) * n, b + (p + 3) * n};
      const T coef[4] = {arow[p], arow[p + 1], arow[p + 2], arow[p + 3]};
      fma4_row(crow, rows, coef, n);
    }
    for (; p < k; ++p) axpy(arow[p], b + p * n, crow, n);
  }
}

template <typename T>
void gemm_nt_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
}

template <typename T>
void gemm_tn_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const T* rows[4] = {b + p * n, b + (p + 1) * n, b + (p + 2) * n, b + (p + 3) * n};
      const T coef[4] = {a[p * m + i], a[(p + 1) * m + i], a[(p + 2) * m + i], a[(p + 3) * m + i]};
      fma4_row(crow, rows, coef, n);
    }
    for (; p < k; ++p) axpy(a[p * m + i], b + p * n, crow, n);
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  gemm_nn_impl(m, n, k, a, b, c);
}
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  gemm_nn_impl(m, n, k, a, b, c);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  gemm_nt_impl(m, n, k, a, b, c);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  gemm_nt_impl(m, n, k, a, b, c);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  gemm_tn_impl(m, n, k, a, b, c);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  gemm_tn_impl(m, n, k, a, b, c);
}

}  // namespace mvsum::kernels::avx2

#include "edge/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace edge::kernels {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

// Four B rows at a time share each A load.
void gemm_nt_avx2(std::size_t M, std::size_t N, std::size_t K,
                  const double* A, std::size_t lda,
                  const double* B, std::size_t ldb,
                  double* C, std::size_t ldc, bool accumulate) {
    const std::size_t k4 = K & ~std::size_t{3};
    for (std::size_t m = 0; m < M; ++m) {
        const double* a = A + m * lda;
        double* c = C + m * ldc;
        std::size_t n = 0;
        for (; n + 4 <= N; n += 4) {
            const double* b0 = B + n * ldb;
            const double* b1 = b0 + ldb;
            const double* b2 = b1 + ldb;
            const double* b3 = b2 + ldb;
            __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
            __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
            for (std::size_t k = 0; k < k4; k += 4) {
                const __m256d va = _mm256_loadu_pd(a + k);
                s0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b0 + k), s0);
                s1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b1 + k), s1);
                s2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b2 + k), s2);
                s3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b3 + k), s3);
            }
            double r[4] = {hsum(s0), hsum(s1), hsum(s2), hsum(s3)};
            for (std::size_t k = k4; k < K; ++k) {
                r[0] += a[k] * b0[k];
                r[1] += a[k] * b1[k];
                r[2] += a[k] * b2[k];
                r[3] += a[k] * b3[k];
            }
            for (int j = 0; j < 4; ++j) c[n + j] = accumulate ? c[n + j] + r[j] : r[j];
        }
        for (; n < N; ++n) {
            double s = dot_avx2(a, B + n * ldb, K);
            c[n] = accumulate ? c[n] + s : s;
        }
    }
}

}  // namespace

const KernelTable* avx2_kernel_table() {
    static const KernelTable table{Isa::avx2, dot_avx2, axpy_avx2, gemm_nt_avx2};
    return &table;
}

}  // namespace edge::kernels

#else

namespace edge::kernels {
const KernelTable* avx2_kernel_table() { return nullptr; }
}  // namespace edge::kernels

#endif

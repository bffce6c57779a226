#include "edge/kernels.hpp"

namespace edge::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nt_scalar(std::size_t M, std::size_t N, std::size_t K,
                    const double* A, std::size_t lda,
                    const double* B, std::size_t ldb,
                    double* C, std::size_t ldc, bool accumulate) {
    for (std::size_t m = 0; m < M; ++m) {
        const double* a = A + m * lda;
        double* c = C + m * ldc;
        for (std::size_t n = 0; n < N; ++n) {
            double s = dot_scalar(a, B + n * ldb, K);
            c[n] = accumulate ? c[n] + s : s;
        }
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{Isa::scalar, dot_scalar, axpy_scalar, gemm_nt_scalar};
    return table;
}

}  // namespace edge::kernels

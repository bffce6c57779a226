#pragma once
// Dense double-precision inner loops used by the tensor layer.
//
// Every kernel has a scalar reference implementation and, on x86-64, an AVX2+FMA
// variant. The variant is chosen once at startup from CPUID; setting the
// environment variable EDGE_KERNELS=scalar pins the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace edge::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
    Isa isa;
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // C[m][n] (+)= sum_k A[m][k] * B[n][k]; all row-major with leading dimensions.
    void (*gemm_nt)(std::size_t M, std::size_t N, std::size_t K,
                    const double* A, std::size_t lda,
                    const double* B, std::size_t ldb,
                    double* C, std::size_t ldc, bool accumulate);
};

const KernelTable& scalar_table();
// nullptr when the AVX2 translation unit was not built or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

const KernelTable& active();
Isa active_isa();
std::string_view isa_name(Isa isa);

// Test hook; not thread-safe with concurrent kernel calls.
void force_isa(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
    return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    active().axpy(alpha, x.data(), y.data(), x.size());
}

inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
                    const double* A, std::size_t lda,
                    const double* B, std::size_t ldb,
                    double* C, std::size_t ldc, bool accumulate) {
    active().gemm_nt(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

}  // namespace edge::kernels

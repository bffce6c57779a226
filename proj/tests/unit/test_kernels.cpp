#include "doctest.h"

#include <random>
#include <vector>

#include "edge/kernels.hpp"
#include "helpers.hpp"

using namespace edge;

TEST_SUITE("kernels") {

namespace {
std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}
}  // namespace

TEST_CASE("scalar dot and axpy match hand-computed values") {
    const auto& k = kernels::scalar_table();
    const double a[] = {1.0, 2.0, 3.0};
    const double b[] = {4.0, -5.0, 6.0};
    CHECK(k.dot(a, b, 3) == doctest::Approx(12.0));
    double y[] = {1.0, 1.0, 1.0};
    k.axpy(2.0, a, y, 3);
    CHECK(y[0] == 3.0);
    CHECK(y[2] == 7.0);
}

TEST_CASE("scalar gemm_nt matches a naive triple loop with leading dimensions") {
    std::mt19937_64 rng(1);
    const std::size_t M = 5, N = 7, K = 9, lda = 11, ldb = 10, ldc = 8;
    auto A = random_vec(M * lda, rng), B = random_vec(N * ldb, rng), C = random_vec(M * ldc, rng);
    auto expect = C;
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t n = 0; n < N; ++n) {
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += A[m * lda + k] * B[n * ldb + k];
            expect[m * ldc + n] += s;
        }
    kernels::scalar_table().gemm_nt(M, N, K, A.data(), lda, B.data(), ldb, C.data(), ldc, true);
    for (std::size_t i = 0; i < C.size(); ++i) CHECK(C[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("AVX2 kernels agree with the scalar reference") {
    const kernels::KernelTable* simd = kernels::avx2_table();
    if (!simd) {
        MESSAGE("AVX2 not available on this host; equivalence test skipped");
        return;
    }
    const auto& ref = kernels::scalar_table();
    std::mt19937_64 rng(7);
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 8u, 15u, 16u, 17u, 63u, 100u, 1001u}) {
        auto a = random_vec(n, rng), b = random_vec(n, rng);
        const double r = ref.dot(a.data(), b.data(), n);
        const double s = simd->dot(a.data(), b.data(), n);
        CHECK(std::abs(r - s) <= 1e-12 * (1.0 + std::abs(r)) * std::sqrt(static_cast<double>(n) + 1.0));
        auto y1 = random_vec(n, rng);
        auto y2 = y1;
        ref.axpy(0.37, a.data(), y1.data(), n);
        simd->axpy(0.37, a.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));
    }
    for (auto [M, N, K] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 5, 7}, {4, 4, 4}, {9, 13, 27}, {16, 33, 65}}) {
        for (bool acc : {false, true}) {
            auto A = random_vec(M * K, rng), B = random_vec(N * K, rng), C0 = random_vec(M * N, rng);
            auto C1 = C0, C2 = C0;
            ref.gemm_nt(M, N, K, A.data(), K, B.data(), K, C1.data(), N, acc);
            simd->gemm_nt(M, N, K, A.data(), K, B.data(), K, C2.data(), N, acc);
            for (std::size_t i = 0; i < C1.size(); ++i) CHECK(std::abs(C1[i] - C2[i]) <= 1e-11 * (1.0 + std::abs(C1[i])));
        }
    }
}

TEST_CASE("force_isa switches the active table and the dispatching wrappers follow it") {
    testing::IsaGuard guard;
    kernels::force_isa(kernels::Isa::scalar);
    CHECK(kernels::active_isa() == kernels::Isa::scalar);
    CHECK(kernels::isa_name(kernels::active_isa()) == "scalar");
    std::vector<double> a{1, 2, 3, 4, 5}, b{5, 4, 3, 2, 1};
    CHECK(kernels::dot(a, b) == doctest::Approx(35.0));
    if (kernels::avx2_table()) {
        kernels::force_isa(kernels::Isa::avx2);
        CHECK(kernels::active_isa() == kernels::Isa::avx2);
        CHECK(kernels::dot(a, b) == doctest::Approx(35.0));
    }
}

}

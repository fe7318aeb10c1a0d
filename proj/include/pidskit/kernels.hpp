#pragma once

// Dense double-precision kernels used by skip-gram training and the model.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2+FMA variant. The variant is chosen once per process from CPU
// features; PIDSKIT_KERNELS=scalar forces the reference path. Within one
// process the choice never changes, so results are reproducible run to run.

#include <cstddef>
#include <span>
#include <string_view>

namespace pidskit::kernels {

enum class Backend { Scalar, Avx2 };

// C[m x n] += A[m x k] * B[k x n]
// C[k x n] += A^T * B           where A is m x k and B is m x n
// C[m x k] += A * B^T           where A is m x n and B is k x n
// All matrices are dense row-major.
struct KernelTable {
    double (*dot)(const double* a, const double* b, std::size_t n);
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n);
    void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n);
    void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k);
};

namespace scalar {
const KernelTable& table();
}

namespace avx2 {
// Null when the binary was built without AVX2 support.
const KernelTable* table();
}

bool cpu_supports_avx2();

Backend active_backend();
std::string_view backend_name(Backend b);
const KernelTable& table_for(Backend b);

// Tests use this to pin a backend; not thread-safe against concurrent kernel calls.
void force_backend(Backend b);

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k);

}  // namespace pidskit::kernels

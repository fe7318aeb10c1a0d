#include "pidskit/kernels.hpp"

namespace pidskit::kernels::scalar {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            axpy(av, b + p * n, crow, n);
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t p = 0; p < m; ++p) {
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = a[p * k + i];
            if (av == 0.0) continue;
            axpy(av, brow, c + i * n, n);
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) c[i * k + j] += dot(a + i * n, b + j * n, n);
}

const KernelTable kTable{dot, axpy, gemm_nn, gemm_tn, gemm_nt};

}  // namespace

const KernelTable& table() { return kTable; }

}  // namespace pidskit::kernels::scalar

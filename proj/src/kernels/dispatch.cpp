#include <atomic>
#include <cassert>
#include <cstdlib>
#include <string>

#include "pidskit/kernels.hpp"

namespace pidskit::kernels {

#ifndef PIDSKIT_HAVE_AVX2
namespace avx2 {
const KernelTable* table() { return nullptr; }
}  // namespace avx2
#endif

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    static const bool supported = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    }();
    return supported && avx2::table() != nullptr;
#else
    return false;
#endif
}

namespace {

Backend detect() {
    if (const char* env = std::getenv("PIDSKIT_KERNELS"); env && std::string(env) == "scalar")
        return Backend::Scalar;
    return cpu_supports_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& current() {
    static std::atomic<Backend> b{detect()};
    return b;
}

const KernelTable& active() { return table_for(current().load(std::memory_order_relaxed)); }

}  // namespace

Backend active_backend() { return current().load(); }

std::string_view backend_name(Backend b) { return b == Backend::Avx2 ? "avx2" : "scalar"; }

const KernelTable& table_for(Backend b) {
    if (b == Backend::Avx2 && cpu_supports_avx2()) return *avx2::table();
    return scalar::table();
}

void force_backend(Backend b) {
    if (b == Backend::Avx2 && !cpu_supports_avx2()) b = Backend::Scalar;
    current().store(b);
}

double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    return active().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    active().axpy(alpha, x.data(), y.data(), x.size());
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    assert(a.size() == m * k && b.size() == k * n && c.size() == m * n);
    active().gemm_nn(a.data(), b.data(), c.data(), m, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    assert(a.size() == m * k && b.size() == m * n && c.size() == k * n);
    active().gemm_tn(a.data(), b.data(), c.data(), m, k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k) {
    assert(a.size() == m * n && b.size() == k * n && c.size() == m * k);
    active().gemm_nt(a.data(), b.data(), c.data(), m, n, k);
}

}  // namespace pidskit::kernels

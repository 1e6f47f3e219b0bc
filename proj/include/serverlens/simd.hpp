#pragma once

// Data-parallel inner loops shared by the learners, imputer and metrics.
//
// Each kernel has a portable scalar reference and an AVX2/FMA variant. The
// variant is chosen once at startup from CPUID; SERVERLENS_SIMD=scalar forces
// the reference path. The variants agree to rounding (different summation
// order), not bit-for-bit, so a fitted model is reproducible only under the
// same dispatch choice.

#include <cstddef>
#include <span>
#include <string_view>

namespace serverlens::simd {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
    Isa isa;
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    double (*squared_distance)(const double* a, const double* b, std::size_t n);
    // Squared distance over coordinates observed (non-NaN) in both inputs;
    // writes the number of such coordinates to *observed.
    double (*masked_squared_distance)(const double* a, const double* b, std::size_t n,
                                      std::size_t* observed);
    double (*sum)(const double* a, std::size_t n);
};

const KernelTable& scalar_kernels() noexcept;
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_kernels() noexcept;
#endif

bool isa_supported(Isa isa) noexcept;
// Throws ArgumentError when the ISA is not available on this CPU/build.
const KernelTable& kernels_for(Isa isa);
// Process-wide selection.
const KernelTable& active() noexcept;
std::string_view isa_name(Isa isa) noexcept;

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
    active().axpy(alpha, x.data(), y.data(), x.size());
}
inline double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
    return active().squared_distance(a.data(), b.data(), a.size());
}
inline double masked_squared_distance(std::span<const double> a, std::span<const double> b,
                                      std::size_t& observed) noexcept {
    return active().masked_squared_distance(a.data(), b.data(), a.size(), &observed);
}
inline double sum(std::span<const double> a) noexcept { return active().sum(a.data(), a.size()); }

}  // namespace serverlens::simd

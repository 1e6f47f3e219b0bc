#include <cmath>

#include "serverlens/simd.hpp"

namespace serverlens::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += a[i] * b[i];
    }
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

double squared_distance_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double masked_squared_distance_scalar(const double* a, const double* b, std::size_t n,
                                      std::size_t* observed) {
    double s = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (std::isnan(a[i]) || std::isnan(b[i])) {
            continue;
        }
        const double d = a[i] - b[i];
        s += d * d;
        ++count;
    }
    *observed = count;
    return s;
}

double sum_scalar(const double* a, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += a[i];
    }
    return s;
}

constexpr KernelTable kScalar{
    Isa::Scalar,      dot_scalar, axpy_scalar, squared_distance_scalar, masked_squared_distance_scalar,
    sum_scalar,
};

}  // namespace

const KernelTable& scalar_kernels() noexcept { return kScalar; }

}  // namespace serverlens::simd

#include <cstdlib>
#include <string>

#include "serverlens/common.hpp"
#include "serverlens/simd.hpp"

namespace serverlens::simd {
namespace {

const KernelTable& select() noexcept {
    if (const char* forced = std::getenv("SERVERLENS_SIMD")) {
        if (std::string_view(forced) == "scalar") {
            return scalar_kernels();
        }
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (isa_supported(Isa::Avx2)) {
        return avx2_kernels();
    }
#endif
    return scalar_kernels();
}

}  // namespace

bool isa_supported(Isa isa) noexcept {
    switch (isa) {
        case Isa::Scalar:
            return true;
        case Isa::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
    }
    return false;
}

const KernelTable& kernels_for(Isa isa) {
    if (!isa_supported(isa)) {
        throw ArgumentError("SIMD target not supported on this CPU: " + std::string(isa_name(isa)));
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (isa == Isa::Avx2) {
        return avx2_kernels();
    }
#endif
    return scalar_kernels();
}

const KernelTable& active() noexcept {
    static const KernelTable& table = select();
    return table;
}

std::string_view isa_name(Isa isa) noexcept {
    switch (isa) {
        case Isa::Scalar: return "scalar";
        case Isa::Avx2: return "avx2";
    }
    return "unknown";
}

}  // namespace serverlens::simd

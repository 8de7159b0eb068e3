#include "slq/kernels.hpp"

#include "kernels_impl.hpp"

#include <cstdlib>
#include <string>

namespace slq::simd {

const KernelTable& scalar_table() {
    static const KernelTable table{Isa::Scalar,   scalar::forward_combine, scalar::one_plus_mul,
                                   scalar::axpby, scalar::lincomb3,        scalar::axpy,
                                   scalar::scale, scalar::add_constant,    scalar::dot,
                                   scalar::sum};
    return table;
}

const KernelTable* avx2_table() {
#if defined(SLQ_HAVE_AVX2)
    static const bool supported = __builtin_cpu_supports("avx2");
    static const KernelTable table{Isa::Avx2,   avx2::forward_combine, avx2::one_plus_mul,
                                   avx2::axpby, avx2::lincomb3,        avx2::axpy,
                                   avx2::scale, avx2::add_constant,    avx2::dot,
                                   avx2::sum};
    return supported ? &table : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable& active() {
    static const KernelTable& chosen = [] () -> const KernelTable& {
        const char* env = std::getenv("SLQ_SIMD");
        if (env != nullptr && std::string(env) == "scalar") return scalar_table();
        if (const KernelTable* t = avx2_table()) return *t;
        return scalar_table();
    }();
    return chosen;
}

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::Scalar: return "scalar";
        case Isa::Avx2: return "avx2";
    }
    return "unknown";
}

}  // namespace slq::simd

#include <cstdlib>
#include <cstring>

#include "rastg/error.hpp"
#include "rastg/kernels.hpp"

namespace rastg::kernels {

#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops(); // kernels_avx2.cpp
#endif
#if defined(__aarch64__)
const Ops& neon_ops(); // kernels_neon.cpp
#endif

namespace {

bool cpu_has_avx2_fma() {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Ops* select() {
    const char* env = std::getenv("RASTG_KERNELS");
    if (env != nullptr && std::strcmp(env, "scalar") == 0) return &scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
    if (env != nullptr && std::strcmp(env, "avx2") == 0) {
        if (!cpu_has_avx2_fma()) throw ConfigError("RASTG_KERNELS=avx2 but CPU lacks AVX2/FMA");
        return &avx2_ops();
    }
#endif
#if defined(__aarch64__)
    if (env != nullptr && std::strcmp(env, "neon") == 0) return &neon_ops();
#endif
    if (env != nullptr && std::strcmp(env, "auto") != 0) {
        throw ConfigError(std::string("unknown RASTG_KERNELS value: ") + env);
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (cpu_has_avx2_fma()) return &avx2_ops();
#endif
#if defined(__aarch64__)
    return &neon_ops();
#endif
    return &scalar_ops();
}

} // namespace

std::vector<const Ops*> available_backends() {
    std::vector<const Ops*> out{&scalar_ops()};
#if defined(__x86_64__) || defined(_M_X64)
    if (cpu_has_avx2_fma()) out.push_back(&avx2_ops());
#endif
#if defined(__aarch64__)
    out.push_back(&neon_ops());
#endif
    return out;
}

const Ops& active() {
    static const Ops* chosen = select();
    return *chosen;
}

std::string active_backend_name() {
    return active().name;
}

} // namespace rastg::kernels

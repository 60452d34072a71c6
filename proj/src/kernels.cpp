// Backend selection and dispatch for the data-parallel kernels.

#include "pf/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

#include "pf/error.hpp"

namespace pf::kern {

namespace {

bool cpu_has_avx2() {
#if defined(PF_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend detect_backend() {
    const char* env = std::getenv("PF_KERNEL_BACKEND");
    if (env != nullptr && std::strlen(env) > 0) {
        const std::string v(env);
        if (v == "scalar") return Backend::scalar;
        if (v == "avx2") {
            if (!cpu_has_avx2())
                throw ConfigError("PF_KERNEL_BACKEND=avx2 but this CPU/build lacks AVX2+FMA");
            return Backend::avx2;
        }
        if (v != "auto") throw ConfigError("unknown PF_KERNEL_BACKEND value: " + v);
    }
    return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend& backend_slot() {
    static Backend b = detect_backend();
    return b;
}

}  // namespace

Backend active_backend() { return backend_slot(); }

bool backend_supported(Backend b) {
    if (b == Backend::scalar) return true;
    return cpu_has_avx2();
}

void set_backend(Backend b) {
    if (!backend_supported(b))
        throw ConfigError(std::string("kernel backend not supported on this machine: ") +
                          backend_name(b));
    backend_slot() = b;
}

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "?";
}

#if defined(PF_HAVE_AVX2)
#define PF_DISPATCH(fn, ...) \
    return backend_slot() == Backend::avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__)
#else
#define PF_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c, bool acc) {
    PF_DISPATCH(gemm_nn, m, n, k, a, b, c, acc);
}
void gemm_nt(int m, int n, int k, const float* a, const float* b, float* c, bool acc) {
    PF_DISPATCH(gemm_nt, m, n, k, a, b, c, acc);
}
void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool acc) {
    PF_DISPATCH(gemm_tn, m, n, k, a, b, c, acc);
}
void add(std::size_t n, const float* x, const float* y, float* out) {
    PF_DISPATCH(add, n, x, y, out);
}
void sub(std::size_t n, const float* x, const float* y, float* out) {
    PF_DISPATCH(sub, n, x, y, out);
}
void mul(std::size_t n, const float* x, const float* y, float* out) {
    PF_DISPATCH(mul, n, x, y, out);
}
void scale(std::size_t n, float a, const float* x, float* out) {
    PF_DISPATCH(scale, n, a, x, out);
}
void axpy(std::size_t n, float a, const float* x, float* y) {
    PF_DISPATCH(axpy, n, a, x, y);
}
void silu(std::size_t n, const float* x, float* out) {
    PF_DISPATCH(silu, n, x, out);
}
void silu_backward(std::size_t n, const float* x, const float* dy, float* dx) {
    PF_DISPATCH(silu_backward, n, x, dy, dx);
}
float dot(std::size_t n, const float* x, const float* y) {
    PF_DISPATCH(dot, n, x, y);
}
float sum(std::size_t n, const float* x) {
    PF_DISPATCH(sum, n, x);
}
float sq_diff_sum(std::size_t n, const float* a, const float* b) {
    PF_DISPATCH(sq_diff_sum, n, a, b);
}
bool all_finite(std::size_t n, const float* x) {
    PF_DISPATCH(all_finite, n, x);
}

#undef PF_DISPATCH

}  // namespace pf::kern

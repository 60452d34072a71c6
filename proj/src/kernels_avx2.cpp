// AVX2+FMA kernel variants. Compiled with -mavx2 -mfma in a separate object;
// only reached when CPUID reports both features (see kernels.cpp dispatch).

#if defined(PF_HAVE_AVX2)

#include <immintrin.h>

#include <cmath>
#include <cstdint>
#include <limits>

#include "pf/kernels.hpp"

namespace pf::kern::avx2 {

namespace {

inline float hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehl_ps(lo, lo);
    lo = _mm_add_ps(lo, sh);
    sh = _mm_shuffle_ps(lo, lo, 0x1);
    lo = _mm_add_ss(lo, sh);
    return _mm_cvtss_f32(lo);
}

// Cephes-style expf, ~2 ulp. Enough for the 1e-5 cross-backend tolerance.
inline __m256 exp256(__m256 x) {
    const __m256 hi = _mm256_set1_ps(88.3762626647949f);
    const __m256 lo = _mm256_set1_ps(-88.3762626647949f);
    const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
    const __m256 c1 = _mm256_set1_ps(0.693359375f);
    const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
    const __m256 one = _mm256_set1_ps(1.0f);

    x = _mm256_min_ps(x, hi);
    x = _mm256_max_ps(x, lo);

    __m256 fx = _mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f));
    fx = _mm256_floor_ps(fx);

    x = _mm256_fnmadd_ps(fx, c1, x);
    x = _mm256_fnmadd_ps(fx, c2, x);

    __m256 z = _mm256_mul_ps(x, x);
    __m256 y = _mm256_set1_ps(1.9875691500e-4f);
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
    y = _mm256_fmadd_ps(y, z, x);
    y = _mm256_add_ps(y, one);

    __m256i n = _mm256_cvttps_epi32(fx);
    n = _mm256_add_epi32(n, _mm256_set1_epi32(0x7f));
    n = _mm256_slli_epi32(n, 23);
    return _mm256_mul_ps(y, _mm256_castsi256_ps(n));
}

}  // namespace

void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<std::size_t>(i) * n;
        if (!accumulate) {
            int j = 0;
            const __m256 zero = _mm256_setzero_ps();
            for (; j + 8 <= n; j += 8) _mm256_storeu_ps(crow + j, zero);
            for (; j < n; ++j) crow[j] = 0.0f;
        }
        for (int p = 0; p < k; ++p) {
            const __m256 aip = _mm256_set1_ps(a[static_cast<std::size_t>(i) * k + p]);
            const float* brow = b + static_cast<std::size_t>(p) * n;
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 cj = _mm256_loadu_ps(crow + j);
                cj = _mm256_fmadd_ps(aip, _mm256_loadu_ps(brow + j), cj);
                _mm256_storeu_ps(crow + j, cj);
            }
            const float as = a[static_cast<std::size_t>(i) * k + p];
            for (; j < n; ++j) crow[j] += as * brow[j];
        }
    }
}

void gemm_nt(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const float* brow = b + static_cast<std::size_t>(j) * k;
            __m256 acc = _mm256_setzero_ps();
            int p = 0;
            for (; p + 8 <= k; p += 8)
                acc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p), acc);
            float s = hsum8(acc);
            for (; p < k; ++p) s += arow[p] * brow[p];
            float& cij = c[static_cast<std::size_t>(i) * n + j];
            cij = accumulate ? cij + s : s;
        }
    }
}

void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
    if (!accumulate) {
        const __m256 zero = _mm256_setzero_ps();
        std::size_t total = static_cast<std::size_t>(m) * n;
        std::size_t i = 0;
        for (; i + 8 <= total; i += 8) _mm256_storeu_ps(c + i, zero);
        for (; i < total; ++i) c[i] = 0.0f;
    }
    for (int p = 0; p < k; ++p) {
        const float* arow = a + static_cast<std::size_t>(p) * m;
        const float* brow = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const __m256 api = _mm256_set1_ps(arow[i]);
            float* crow = c + static_cast<std::size_t>(i) * n;
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 cj = _mm256_loadu_ps(crow + j);
                cj = _mm256_fmadd_ps(api, _mm256_loadu_ps(brow + j), cj);
                _mm256_storeu_ps(crow + j, cj);
            }
            for (; j < n; ++j) crow[j] += arow[i] * brow[j];
        }
    }
}

void add(std::size_t n, const float* x, const float* y, float* out) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub(std::size_t n, const float* x, const float* y, float* out) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul(std::size_t n, const float* x, const float* y, float* out) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale(std::size_t n, float a, const float* x, float* out) {
    const __m256 av = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = a * x[i];
}

void axpy(std::size_t n, float a, const float* x, float* y) {
    const __m256 av = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 yi = _mm256_loadu_ps(y + i);
        yi = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), yi);
        _mm256_storeu_ps(y + i, yi);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void silu(std::size_t n, const float* x, float* out) {
    const __m256 one = _mm256_set1_ps(1.0f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 xi = _mm256_loadu_ps(x + i);
        const __m256 e = exp256(_mm256_sub_ps(_mm256_setzero_ps(), xi));
        const __m256 s = _mm256_div_ps(one, _mm256_add_ps(one, e));
        _mm256_storeu_ps(out + i, _mm256_mul_ps(xi, s));
    }
    for (; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-x[i]));
        out[i] = x[i] * s;
    }
}

void silu_backward(std::size_t n, const float* x, const float* dy, float* dx) {
    const __m256 one = _mm256_set1_ps(1.0f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 xi = _mm256_loadu_ps(x + i);
        const __m256 e = exp256(_mm256_sub_ps(_mm256_setzero_ps(), xi));
        const __m256 s = _mm256_div_ps(one, _mm256_add_ps(one, e));
        // silu'(x) = s * (1 + x * (1 - s))
        const __m256 g = _mm256_mul_ps(s, _mm256_fmadd_ps(xi, _mm256_sub_ps(one, s), one));
        __m256 d = _mm256_loadu_ps(dx + i);
        d = _mm256_fmadd_ps(_mm256_loadu_ps(dy + i), g, d);
        _mm256_storeu_ps(dx + i, d);
    }
    for (; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-x[i]));
        dx[i] += dy[i] * (s * (1.0f + x[i] * (1.0f - s)));
    }
}

float dot(std::size_t n, const float* x, const float* y) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
    float s = hsum8(acc);
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

float sum(std::size_t n, const float* x) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum8(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

float sq_diff_sum(std::size_t n, const float* a, const float* b) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
        acc = _mm256_fmadd_ps(d, d, acc);
    }
    float s = hsum8(acc);
    for (; i < n; ++i) {
        const float d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

bool all_finite(std::size_t n, const float* x) {
    const __m256 inf = _mm256_set1_ps(std::numeric_limits<float>::infinity());
    const __m256 absmask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7FFFFFFF));
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 ax = _mm256_and_ps(_mm256_loadu_ps(x + i), absmask);
        // NaN compares false under LT_OQ, so NaN lanes drop out of the mask too
        const __m256 ok = _mm256_cmp_ps(ax, inf, _CMP_LT_OQ);
        if (_mm256_movemask_ps(ok) != 0xFF) return false;
    }
    for (; i < n; ++i) {
        if (!std::isfinite(x[i])) return false;
    }
    return true;
}

}  // namespace pf::kern::avx2

#endif  // PF_HAVE_AVX2

#pragma once

#include <cstddef>

// Data-parallel inner loops behind the tensor ops. Every kernel has a scalar
// reference implementation and (on x86-64) an AVX2+FMA variant; the backend
// is picked once at startup from CPUID and can be overridden with
// set_backend() or the PF_KERNEL_BACKEND environment variable
// (scalar | avx2 | auto).
//
// The two backends are equivalence-tested against each other, not
// bit-identical: FMA contraction and 8-lane reduction reorder float rounding.
// Determinism guarantees elsewhere in the library hold per backend.

namespace pf::kern {

enum class Backend { scalar, avx2 };

Backend active_backend();
void set_backend(Backend b);  // throws ConfigError if unsupported on this CPU
bool backend_supported(Backend b);
const char* backend_name(Backend b);

// All matrices are contiguous row-major. accumulate=false overwrites C.
// C[m x n] = A[m x k] * B[k x n]
void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
// C[m x n] = A[m x k] * B[n x k]^T
void gemm_nt(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
// C[m x n] = A[k x m]^T * B[k x n]
void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);

void add(std::size_t n, const float* x, const float* y, float* out);
void sub(std::size_t n, const float* x, const float* y, float* out);
void mul(std::size_t n, const float* x, const float* y, float* out);
void scale(std::size_t n, float a, const float* x, float* out);
void axpy(std::size_t n, float a, const float* x, float* y);  // y += a*x

void silu(std::size_t n, const float* x, float* out);
// dx += dy * silu'(x)
void silu_backward(std::size_t n, const float* x, const float* dy, float* dx);

float dot(std::size_t n, const float* x, const float* y);
float sum(std::size_t n, const float* x);
float sq_diff_sum(std::size_t n, const float* a, const float* b);
bool all_finite(std::size_t n, const float* x);

namespace scalar {
void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void gemm_nt(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void add(std::size_t n, const float* x, const float* y, float* out);
void sub(std::size_t n, const float* x, const float* y, float* out);
void mul(std::size_t n, const float* x, const float* y, float* out);
void scale(std::size_t n, float a, const float* x, float* out);
void axpy(std::size_t n, float a, const float* x, float* y);
void silu(std::size_t n, const float* x, float* out);
void silu_backward(std::size_t n, const float* x, const float* dy, float* dx);
float dot(std::size_t n, const float* x, const float* y);
float sum(std::size_t n, const float* x);
float sq_diff_sum(std::size_t n, const float* a, const float* b);
bool all_finite(std::size_t n, const float* x);
}  // namespace scalar

#if defined(PF_HAVE_AVX2)
namespace avx2 {
void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void gemm_nt(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void add(std::size_t n, const float* x, const float* y, float* out);
void sub(std::size_t n, const float* x, const float* y, float* out);
void mul(std::size_t n, const float* x, const float* y, float* out);
void scale(std::size_t n, float a, const float* x, float* out);
void axpy(std::size_t n, float a, const float* x, float* y);
void silu(std::size_t n, const float* x, float* out);
void silu_backward(std::size_t n, const float* x, const float* dy, float* dx);
float dot(std::size_t n, const float* x, const float* y);
float sum(std::size_t n, const float* x);
float sq_diff_sum(std::size_t n, const float* a, const float* b);
bool all_finite(std::size_t n, const float* x);
}  // namespace avx2
#endif

}  // namespace pf::kern

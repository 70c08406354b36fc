#pragma once

#include <cstddef>

// Data-parallel inner loops used by the network and the attack steps.
// A scalar reference implementation always exists; an AVX2 variant is
// selected at startup when the CPU supports it. The two are equivalence
// tested; within one process the selection is fixed, so runs are
// reproducible.

namespace advshield::kern {

enum class Impl { Scalar, Avx2 };

Impl active();
void force(Impl impl);   // tests only; Avx2 throws if unsupported
bool avx2_supported();

// sum_i a[i]*b[i]
float dot(const float* a, const float* b, std::size_t n);

// y[i] += alpha * x[i]
void axpy(float alpha, const float* x, float* y, std::size_t n);

// y[i] = max(x[i], 0)
void relu(const float* x, float* y, std::size_t n);

// dx[i] = (y[i] > 0) ? dy[i] : 0, with y the post-activation values
void relu_backward(const float* y, const float* dy, float* dx, std::size_t n);

// out[i] = clamp(x[i] + eps*sgn(g[i]), 0, 1), sgn(0) = 0
void sign_step_clip(const float* x, const float* g, float eps, float* out, std::size_t n);

// x[i] = clamp(clamp(x[i], x0[i]-eps, x0[i]+eps), 0, 1)
void box_project(const float* x0, float eps, float* x, std::size_t n);

namespace scalar {
float dot(const float* a, const float* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void relu(const float* x, float* y, std::size_t n);
void relu_backward(const float* y, const float* dy, float* dx, std::size_t n);
void sign_step_clip(const float* x, const float* g, float eps, float* out, std::size_t n);
void box_project(const float* x0, float eps, float* x, std::size_t n);
} // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define ADVSHIELD_HAVE_AVX2_BUILD 1
namespace avx2 {
float dot(const float* a, const float* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void relu(const float* x, float* y, std::size_t n);
void relu_backward(const float* y, const float* dy, float* dx, std::size_t n);
void sign_step_clip(const float* x, const float* g, float eps, float* out, std::size_t n);
void box_project(const float* x0, float eps, float* x, std::size_t n);
} // namespace avx2
#else
#define ADVSHIELD_HAVE_AVX2_BUILD 0
#endif

} // namespace advshield::kern

#include "advshield/kernels.hpp"
#include "advshield/errors.hpp"

#include <cstdlib>
#include <cstring>

namespace advshield::kern {

bool avx2_supported() {
#if ADVSHIELD_HAVE_AVX2_BUILD
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

Impl pick_initial() {
    if (const char* env = std::getenv("ADVSHIELD_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Impl::Scalar;
        if (std::strcmp(env, "avx2") == 0 && avx2_supported()) return Impl::Avx2;
    }
    return avx2_supported() ? Impl::Avx2 : Impl::Scalar;
}

Impl g_impl = pick_initial();

} // namespace

Impl active() { return g_impl; }

void force(Impl impl) {
    if (impl == Impl::Avx2 && !avx2_supported())
        throw ConfigError("kernels: AVX2 not supported on this CPU");
    g_impl = impl;
}

float dot(const float* a, const float* b, std::size_t n) {
#if ADVSHIELD_HAVE_AVX2_BUILD
    if (g_impl == Impl::Avx2) return avx2::dot(a, b, n);
#endif
    return scalar::dot(a, b, n);
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
#if ADVSHIELD_HAVE_AVX2_BUILD
    if (g_impl == Impl::Avx2) { avx2::axpy(alpha, x, y, n); return; }
#endif
    scalar::axpy(alpha, x, y, n);
}

void relu(const float* x, float* y, std::size_t n) {
#if ADVSHIELD_HAVE_AVX2_BUILD
    if (g_impl == Impl::Avx2) { avx2::relu(x, y, n); return; }
#endif
    scalar::relu(x, y, n);
}

void relu_backward(const float* y, const float* dy, float* dx, std::size_t n) {
#if ADVSHIELD_HAVE_AVX2_BUILD
    if (g_impl == Impl::Avx2) { avx2::relu_backward(y, dy, dx, n); return; }
#endif
    scalar::relu_backward(y, dy, dx, n);
}

void sign_step_clip(const float* x, const float* g, float eps, float* out, std::size_t n) {
#if ADVSHIELD_HAVE_AVX2_BUILD
    if (g_impl == Impl::Avx2) { avx2::sign_step_clip(x, g, eps, out, n); return; }
#endif
    scalar::sign_step_clip(x, g, eps, out, n);
}

void box_project(const float* x0, float eps, float* x, std::size_t n) {
#if ADVSHIELD_HAVE_AVX2_BUILD
    if (g_impl == Impl::Avx2) { avx2::box_project(x0, eps, x, n); return; }
#endif
    scalar::box_project(x0, eps, x, n);
}

} // namespace advshield::kern

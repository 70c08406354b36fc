#include "advshield/kernels.hpp"

#if ADVSHIELD_HAVE_AVX2_BUILD

#include <immintrin.h>
#include <algorithm>
#include <cmath>

namespace advshield::kern::avx2 {

float dot(const float* a, const float* b, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    }
    __m128 lo = _mm256_castps256_ps128(acc);
    __m128 hi = _mm256_extractf128_ps(acc, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_hadd_ps(s, s);
    s = _mm_hadd_ps(s, s);
    float out = _mm_cvtss_f32(s);
    for (; i < n; ++i) out += a[i] * b[i];
    return out;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void relu(const float* x, float* y, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* y, const float* dy, float* dx, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(y + i), zero, _CMP_GT_OQ);
        _mm256_storeu_ps(dx + i, _mm256_and_ps(_mm256_loadu_ps(dy + i), mask));
    }
    for (; i < n; ++i) dx[i] = y[i] > 0.0f ? dy[i] : 0.0f;
}

void sign_step_clip(const float* x, const float* g, float eps, float* out, std::size_t n) {
    // Mirrors the scalar kernel bit-for-bit: double-precision step, float
    // rounding corrected back inside the eps ball with an integer nudge
    // (valid because every candidate is a nonnegative float).
    const __m256d zero = _mm256_setzero_pd();
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d e = _mm256_set1_pd(static_cast<double>(eps));
    const __m256i lane_lo = _mm256_setr_epi32(0, 2, 4, 6, 0, 0, 0, 0);
    const __m128i one32 = _mm_set1_epi32(1);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xd = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
        __m256d gd = _mm256_cvtps_pd(_mm_loadu_ps(g + i));
        __m256d pos = _mm256_and_pd(_mm256_cmp_pd(gd, zero, _CMP_GT_OQ), one);
        __m256d neg = _mm256_and_pd(_mm256_cmp_pd(gd, zero, _CMP_LT_OQ), one);
        __m256d t = _mm256_add_pd(xd, _mm256_mul_pd(e, _mm256_sub_pd(pos, neg)));
        t = _mm256_min_pd(_mm256_max_pd(t, zero), one);
        __m128 c = _mm256_cvtpd_ps(t);
        __m256d cd = _mm256_cvtps_pd(c);
        __m256d over = _mm256_cmp_pd(cd, _mm256_add_pd(xd, e), _CMP_GT_OQ);
        __m256d under = _mm256_cmp_pd(cd, _mm256_sub_pd(xd, e), _CMP_LT_OQ);
        __m128i over32 = _mm256_castsi256_si128(
            _mm256_permutevar8x32_epi32(_mm256_castpd_si256(over), lane_lo));
        __m128i under32 = _mm256_castsi256_si128(
            _mm256_permutevar8x32_epi32(_mm256_castpd_si256(under), lane_lo));
        __m128i ci = _mm_castps_si128(c);
        ci = _mm_sub_epi32(ci, _mm_and_si128(over32, one32));
        ci = _mm_add_epi32(ci, _mm_and_si128(under32, one32));
        _mm_storeu_ps(out + i, _mm_castsi128_ps(ci));
    }
    const double es = static_cast<double>(eps);
    for (; i < n; ++i) {
        double s = (g[i] > 0.0f) ? 1.0 : (g[i] < 0.0f ? -1.0 : 0.0);
        double xd = static_cast<double>(x[i]);
        double t = std::clamp(xd + es * s, 0.0, 1.0);
        float c = static_cast<float>(t);
        if (static_cast<double>(c) > xd + es || static_cast<double>(c) < xd - es)
            c = std::nextafterf(c, x[i]);
        out[i] = c;
    }
}

void box_project(const float* x0, float eps, float* x, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    const __m256 one = _mm256_set1_ps(1.0f);
    const __m256 veps = _mm256_set1_ps(eps);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v0 = _mm256_loadu_ps(x0 + i);
        __m256 v = _mm256_loadu_ps(x + i);
        v = _mm256_min_ps(_mm256_max_ps(v, _mm256_sub_ps(v0, veps)), _mm256_add_ps(v0, veps));
        v = _mm256_min_ps(_mm256_max_ps(v, zero), one);
        _mm256_storeu_ps(x + i, v);
    }
    for (; i < n; ++i) {
        float v = std::clamp(x[i], x0[i] - eps, x0[i] + eps);
        x[i] = std::clamp(v, 0.0f, 1.0f);
    }
}

} // namespace advshield::kern::avx2

#endif // ADVSHIELD_HAVE_AVX2_BUILD

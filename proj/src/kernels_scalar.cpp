#include "advshield/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace advshield::kern::scalar {

float dot(const float* a, const float* b, std::size_t n) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void relu(const float* x, float* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* y, const float* dy, float* dx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = y[i] > 0.0f ? dy[i] : 0.0f;
}

void sign_step_clip(const float* x, const float* g, float eps, float* out, std::size_t n) {
    // The step is taken in double and the float rounding is pushed back toward
    // the clean pixel, so |out - x| <= eps holds exactly, not just to an ulp.
    const double e = static_cast<double>(eps);
    for (std::size_t i = 0; i < n; ++i) {
        double s = (g[i] > 0.0f) ? 1.0 : (g[i] < 0.0f ? -1.0 : 0.0);
        double xd = static_cast<double>(x[i]);
        double t = std::clamp(xd + e * s, 0.0, 1.0);
        float c = static_cast<float>(t);
        if (static_cast<double>(c) > xd + e || static_cast<double>(c) < xd - e)
            c = std::nextafterf(c, x[i]);
        out[i] = c;
    }
}

void box_project(const float* x0, float eps, float* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        float v = std::clamp(x[i], x0[i] - eps, x0[i] + eps);
        x[i] = std::clamp(v, 0.0f, 1.0f);
    }
}

} // namespace advshield::kern::scalar

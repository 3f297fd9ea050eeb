#pragma once

#include "stylesplat/error.hpp"
#include "stylesplat/image.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace stylesplat {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::array<double, kSsimWindow> ssim_window_1d() {
    std::array<double, kSsimWindow> w{};
    double sum = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        w[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

/// Single-channel plane in double, row-major.
struct Plane {
    int width = 0, height = 0;
    std::vector<double> v;
    Plane() = default;
    Plane(int w, int h) : width(w), height(h), v(static_cast<std::size_t>(w) * h, 0.0) {}
    double& at(int x, int y) { return v[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
};

/// Rec. 601 luma.
template <typename T>
Plane luminance(const Image<T>& img) {
    Plane p(img.width, img.height);
    for (std::size_t i = 0; i < p.v.size(); ++i)
        p.v[i] = 0.299 * double(img.data[i * 3]) + 0.587 * double(img.data[i * 3 + 1]) + 0.114 * double(img.data[i * 3 + 2]);
    return p;
}

template <typename T>
Plane channel_plane(const Image<T>& img, int c) {
    Plane p(img.width, img.height);
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = double(img.data[i * 3 + c]);
    return p;
}

namespace detail {

/// Separable Gaussian filter without padding: output is (W-10) x (H-10).
inline Plane filter_valid(const Plane& in) {
    static const auto w = ssim_window_1d();
    const int ow = in.width - kSsimWindow + 1, oh = in.height - kSsimWindow + 1;
    Plane tmp(ow, in.height), out(ow, oh);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int k = 0; k < kSsimWindow; ++k) s += w[k] * in.at(x + k, y);
            tmp.at(x, y) = s;
        }
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int k = 0; k < kSsimWindow; ++k) s += w[k] * tmp.at(x, y + k);
            out.at(x, y) = s;
        }
    return out;
}

/// Adjoint of filter_valid back to a width x height plane.
inline Plane filter_valid_adjoint(const Plane& g, int width, int height) {
    static const auto w = ssim_window_1d();
    Plane tmp(g.width, height), out(width, height);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            for (int k = 0; k < kSsimWindow; ++k) tmp.at(x, y + k) += w[k] * g.at(x, y);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < g.width; ++x)
            for (int k = 0; k < kSsimWindow; ++k) out.at(x + k, y) += w[k] * tmp.at(x, y);
    return out;
}

inline Plane product(const Plane& a, const Plane& b) {
    Plane p(a.width, a.height);
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = a.v[i] * b.v[i];
    return p;
}

inline void check_ssim_shapes(int wa, int ha, int wb, int hb) {
    if (wa != wb || ha != hb)
        throw DimensionError("ssim: image sizes differ (" + std::to_string(wa) + "x" + std::to_string(ha) + " vs " +
                             std::to_string(wb) + "x" + std::to_string(hb) + ")");
    if (wa < kSsimWindow || ha < kSsimWindow) throw DimensionError("ssim: images must be at least 11x11");
}

}  // namespace detail

/// Mean SSIM between two planes over every full 11x11 window position.
/// With `grad_a`, also writes d(mean SSIM)/d(a).
inline double ssim_plane(const Plane& a, const Plane& b, Plane* grad_a = nullptr) {
    detail::check_ssim_shapes(a.width, a.height, b.width, b.height);
    const Plane mu_a = detail::filter_valid(a), mu_b = detail::filter_valid(b);
    const Plane e_aa = detail::filter_valid(detail::product(a, a));
    const Plane e_bb = detail::filter_valid(detail::product(b, b));
    const Plane e_ab = detail::filter_valid(detail::product(a, b));

    const std::size_t n = mu_a.v.size();
    Plane d_mu(mu_a.width, mu_a.height), d_aa = d_mu, d_ab = d_mu;
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double ma = mu_a.v[i], mb = mu_b.v[i];
        const double va = e_aa.v[i] - ma * ma, vb = e_bb.v[i] - mb * mb, cov = e_ab.v[i] - ma * mb;
        const double a1 = 2 * ma * mb + kSsimC1, a2 = 2 * cov + kSsimC2;
        const double b1 = ma * ma + mb * mb + kSsimC1, b2 = va + vb + kSsimC2;
        const double s = (a1 * a2) / (b1 * b2);
        total += s;
        if (grad_a) {
            const double inv = 1.0 / (b1 * b2);
            d_mu.v[i] = (2 * mb * a2 - 2 * mb * a1) * inv - s * (2 * ma / b1 - 2 * ma / b2);
            d_aa.v[i] = -s / b2;
            d_ab.v[i] = 2 * a1 * inv;
        }
    }
    if (grad_a) {
        const double scale = 1.0 / double(n);
        for (std::size_t i = 0; i < n; ++i) d_mu.v[i] *= scale, d_aa.v[i] *= scale, d_ab.v[i] *= scale;
        const Plane g_mu = detail::filter_valid_adjoint(d_mu, a.width, a.height);
        const Plane g_aa = detail::filter_valid_adjoint(d_aa, a.width, a.height);
        const Plane g_ab = detail::filter_valid_adjoint(d_ab, a.width, a.height);
        *grad_a = Plane(a.width, a.height);
        for (std::size_t i = 0; i < a.v.size(); ++i) grad_a->v[i] = g_mu.v[i] + 2 * a.v[i] * g_aa.v[i] + b.v[i] * g_ab.v[i];
    }
    return total / double(n);
}

/// Luminance SSIM, 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2.
template <typename T, typename U>
double ssim(const Image<T>& a, const Image<U>& b) {
    detail::check_ssim_shapes(a.width, a.height, b.width, b.height);
    return ssim_plane(luminance(a), luminance(b));
}

/// Mean of per-channel SSIM, used by the reconstruction loss. With `grad_a`,
/// writes d/d(a) into an interleaved image of a's shape.
template <typename T, typename U>
double ssim_rgb(const Image<T>& a, const Image<U>& b, Image<double>* grad_a = nullptr) {
    detail::check_ssim_shapes(a.width, a.height, b.width, b.height);
    double total = 0;
    if (grad_a) *grad_a = Image<double>(a.width, a.height);
    for (int c = 0; c < 3; ++c) {
        Plane g;
        total += ssim_plane(channel_plane(a, c), channel_plane(b, c), grad_a ? &g : nullptr);
        if (grad_a)
            for (std::size_t i = 0; i < g.v.size(); ++i) grad_a->data[i * 3 + c] = g.v[i] / 3.0;
    }
    return total / 3.0;
}

}  // namespace stylesplat

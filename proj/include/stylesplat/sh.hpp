#pragma once

#include "stylesplat/scene.hpp"

#include <array>
#include <span>

namespace stylesplat {

namespace sh_const {
inline constexpr double C0 = 0.28209479177387814;
inline constexpr double C1 = 0.4886025119029199;
inline constexpr double C2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                                 0.5462742152960396};
inline constexpr double C3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                                 -0.4570457994644658, 1.445305721320277, -0.5900435899266435};
}  // namespace sh_const

/// The 16 real SH basis functions (degrees 0..3) at direction d, evaluated as
/// polynomials in d's components. Callers pass a unit vector.
template <typename T>
std::array<T, kShBasisCount> sh_basis(const Vec3<T>& d) {
    using namespace sh_const;
    const T x = d[0], y = d[1], z = d[2];
    const T xx = x * x, yy = y * y, zz = z * z;
    return {T(C0),
            T(-C1) * y,
            T(C1) * z,
            T(-C1) * x,
            T(C2[0]) * x * y,
            T(C2[1]) * y * z,
            T(C2[2]) * (T(2) * zz - xx - yy),
            T(C2[3]) * x * z,
            T(C2[4]) * (xx - yy),
            T(C3[0]) * y * (T(3) * xx - yy),
            T(C3[1]) * x * y * z,
            T(C3[2]) * y * (T(4) * zz - xx - yy),
            T(C3[3]) * z * (T(2) * zz - T(3) * xx - T(3) * yy),
            T(C3[4]) * x * (T(4) * zz - xx - yy),
            T(C3[5]) * z * (xx - yy),
            T(C3[6]) * x * (xx - T(3) * yy)};
}

/// Partial derivatives of each basis polynomial with respect to (x, y, z).
template <typename T>
std::array<Vec3<T>, kShBasisCount> sh_basis_gradient(const Vec3<T>& d) {
    using namespace sh_const;
    const T x = d[0], y = d[1], z = d[2];
    const T xx = x * x, yy = y * y, zz = z * z;
    std::array<Vec3<T>, kShBasisCount> g;
    g[0] = Vec3<T>::Zero();
    g[1] = Vec3<T>(0, T(-C1), 0);
    g[2] = Vec3<T>(0, 0, T(C1));
    g[3] = Vec3<T>(T(-C1), 0, 0);
    g[4] = T(C2[0]) * Vec3<T>(y, x, 0);
    g[5] = T(C2[1]) * Vec3<T>(0, z, y);
    g[6] = T(C2[2]) * Vec3<T>(T(-2) * x, T(-2) * y, T(4) * z);
    g[7] = T(C2[3]) * Vec3<T>(z, 0, x);
    g[8] = T(C2[4]) * Vec3<T>(T(2) * x, T(-2) * y, 0);
    g[9] = T(C3[0]) * Vec3<T>(T(6) * x * y, T(3) * xx - T(3) * yy, 0);
    g[10] = T(C3[1]) * Vec3<T>(y * z, x * z, x * y);
    g[11] = T(C3[2]) * Vec3<T>(T(-2) * x * y, T(4) * zz - xx - T(3) * yy, T(8) * y * z);
    g[12] = T(C3[3]) * Vec3<T>(T(-6) * x * z, T(-6) * y * z, T(6) * zz - T(3) * xx - T(3) * yy);
    g[13] = T(C3[4]) * Vec3<T>(T(4) * zz - T(3) * xx - yy, T(-2) * x * y, T(8) * x * z);
    g[14] = T(C3[5]) * Vec3<T>(T(2) * x * z, T(-2) * y * z, xx - yy);
    g[15] = T(C3[6]) * Vec3<T>(T(3) * xx - T(3) * yy, T(-6) * x * y, 0);
    return g;
}

/// View-dependent color: SH expansion per channel, +0.5, clamped below at 0.
template <typename T>
Vec3<T> evaluate_sh(std::span<const T, kShCoeffCount> coeffs, const Vec3<T>& view_dir) {
    const auto basis = sh_basis(view_dir);
    Vec3<T> rgb = Vec3<T>::Zero();
    for (int k = 0; k < kShBasisCount; ++k)
        for (int c = 0; c < 3; ++c) rgb[c] += basis[k] * coeffs[k * 3 + c];
    for (int c = 0; c < 3; ++c) rgb[c] = std::max(rgb[c] + T(0.5), T(0));
    return rgb;
}

template <typename T>
Vec3<T> evaluate_sh(const std::array<T, kShCoeffCount>& coeffs, const Vec3<T>& view_dir) {
    return evaluate_sh(std::span<const T, kShCoeffCount>(coeffs), view_dir);
}

/// Adjoint of evaluate_sh. Accumulates into grad_coeffs and returns dL/d(view_dir)
/// for the polynomial basis (caller projects through the normalisation).
template <typename T>
Vec3<T> evaluate_sh_backward(std::span<const T, kShCoeffCount> coeffs, const Vec3<T>& view_dir,
                             const Vec3<T>& color, const Vec3<T>& grad_color,
                             std::span<T, kShCoeffCount> grad_coeffs) {
    Vec3<T> g = grad_color;
    for (int c = 0; c < 3; ++c)
        if (!(color[c] > T(0))) g[c] = T(0);
    const auto basis = sh_basis(view_dir);
    const auto dbasis = sh_basis_gradient(view_dir);
    Vec3<T> grad_dir = Vec3<T>::Zero();
    for (int k = 0; k < kShBasisCount; ++k) {
        T dot = T(0);
        for (int c = 0; c < 3; ++c) {
            grad_coeffs[k * 3 + c] += basis[k] * g[c];
            dot += coeffs[k * 3 + c] * g[c];
        }
        grad_dir += dot * dbasis[k];
    }
    return grad_dir;
}

}  // namespace stylesplat

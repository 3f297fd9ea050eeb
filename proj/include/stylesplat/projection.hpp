#pragma once

#include "stylesplat/scene.hpp"
#include "stylesplat/sh.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>

namespace stylesplat {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kLowPassFilter = 0.3;

/// Sigma = R diag(exp(log_scale))^2 R^T.
template <typename T>
Mat3<T> compute_cov3d(const Vec3<T>& log_scale, const Vec4<T>& rotation) {
    const Mat3<T> r = quat_to_matrix<T>(rotation / rotation.norm());
    const Mat3<T> m = r * log_scale.array().exp().matrix().asDiagonal();
    return m * m.transpose();
}

/// Inclusive pixel rectangle.
struct PixelRect {
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
    bool empty() const { return x1 < x0 || y1 < y0; }
    bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

/// Screen-space footprint of one Gaussian for one camera.
template <typename T>
struct Splat2D {
    Vec2<T> mean2d;
    Mat2<T> cov2d;   // includes the +0.3 I low-pass term
    Mat2<T> conic;   // cov2d^-1
    T depth;         // camera-space z
    Vec3<T> color;   // SH evaluated along the view ray
    Vec3<T> view_dir;
    T alpha_base;    // activated opacity
    int radius;      // ceil(3 sqrt(lambda_max)) in pixels
    PixelRect rect;  // pixels whose centers lie within mean2d +- radius, clipped to the image
};

/// Pixel-center rectangle of a footprint, clipped to the image.
template <typename T>
PixelRect footprint_rect(const Vec2<T>& mean, int radius, int width, int height) {
    PixelRect r;
    r.x0 = std::max(0, static_cast<int>(std::ceil(double(mean[0]) - radius - 0.5)));
    r.x1 = std::min(width - 1, static_cast<int>(std::floor(double(mean[0]) + radius - 0.5)));
    r.y0 = std::max(0, static_cast<int>(std::ceil(double(mean[1]) - radius - 0.5)));
    r.y1 = std::min(height - 1, static_cast<int>(std::floor(double(mean[1]) + radius - 0.5)));
    return r;
}

/// EWA projection: cov2d = J W Sigma W^T J^T + 0.3 I. Returns nullopt when the
/// mean is at or behind the near plane or the 3-sigma footprint misses the image.
template <typename T>
std::optional<Splat2D<T>> project(const Gaussian3D<T>& g, const Camera<T>& cam) {
    const Vec3<T> t = cam.to_camera(g.position);
    if (!(t[2] > T(kNearPlane))) return std::nullopt;

    const T inv_z = T(1) / t[2];
    Eigen::Matrix<T, 2, 3> jac;
    jac << cam.fx * inv_z, T(0), -cam.fx * t[0] * inv_z * inv_z,
        T(0), cam.fy * inv_z, -cam.fy * t[1] * inv_z * inv_z;
    const Mat3<T> sigma = compute_cov3d<T>(g.log_scale, g.rotation);
    const Eigen::Matrix<T, 2, 3> jw = jac * cam.rotation;

    Splat2D<T> s;
    s.cov2d = jw * sigma * jw.transpose();
    s.cov2d(0, 1) = s.cov2d(1, 0) = T(0.5) * (s.cov2d(0, 1) + s.cov2d(1, 0));
    s.cov2d(0, 0) += T(kLowPassFilter);
    s.cov2d(1, 1) += T(kLowPassFilter);
    const T det = s.cov2d.determinant();
    if (!(det > T(0))) return std::nullopt;
    s.conic << s.cov2d(1, 1) / det, -s.cov2d(0, 1) / det, -s.cov2d(0, 1) / det, s.cov2d(0, 0) / det;

    s.mean2d = Vec2<T>(cam.fx * t[0] * inv_z + cam.cx, cam.fy * t[1] * inv_z + cam.cy);
    s.depth = t[2];

    const T mid = T(0.5) * (s.cov2d(0, 0) + s.cov2d(1, 1));
    const T lambda_max = mid + std::sqrt(std::max(mid * mid - det, T(0)));
    s.radius = static_cast<int>(std::ceil(3.0 * std::sqrt(double(lambda_max))));
    s.rect = footprint_rect(s.mean2d, s.radius, cam.width, cam.height);
    if (s.rect.empty()) return std::nullopt;

    s.view_dir = (g.position - cam.center()).normalized();
    s.color = evaluate_sh(std::span<const T, kShCoeffCount>(g.sh_coeffs), s.view_dir);
    s.alpha_base = g.opacity();
    return s;
}

/// Upstream gradients with respect to one splat's screen-space quantities.
template <typename T>
struct Splat2DGrad {
    Vec2<T> mean2d = Vec2<T>::Zero();
    Mat2<T> conic = Mat2<T>::Zero();  // gradient w.r.t. the full symmetric matrix
    Vec3<T> color = Vec3<T>::Zero();
    T alpha_base = T(0);
};

template <typename T>
struct GaussianGrad {
    Vec3<T> position = Vec3<T>::Zero();
    Vec3<T> log_scale = Vec3<T>::Zero();
    Vec4<T> rotation = Vec4<T>::Zero();
    T opacity_logit = T(0);
    std::array<T, kShCoeffCount> sh_coeffs{};
};

namespace detail {

template <typename T>
Vec4<T> quat_matrix_adjoint(const Vec4<T>& qn, const Mat3<T>& gr) {
    const T w = qn[0], x = qn[1], y = qn[2], z = qn[3];
    Vec4<T> out;
    out[0] = T(2) * (-z * gr(0, 1) + y * gr(0, 2) + z * gr(1, 0) - x * gr(1, 2) - y * gr(2, 0) + x * gr(2, 1));
    out[1] = T(2) * (y * gr(0, 1) + z * gr(0, 2) + y * gr(1, 0) - T(2) * x * gr(1, 1) - w * gr(1, 2) + z * gr(2, 0) +
                     w * gr(2, 1) - T(2) * x * gr(2, 2));
    out[2] = T(2) * (-T(2) * y * gr(0, 0) + x * gr(0, 1) + w * gr(0, 2) + x * gr(1, 0) + z * gr(1, 2) - w * gr(2, 0) +
                     z * gr(2, 1) - T(2) * y * gr(2, 2));
    out[3] = T(2) * (-T(2) * z * gr(0, 0) - w * gr(0, 1) + x * gr(0, 2) + w * gr(1, 0) - T(2) * z * gr(1, 1) +
                     y * gr(1, 2) + x * gr(2, 0) + y * gr(2, 1));
    return out;
}

}  // namespace detail

/// Chain rule from screen-space gradients back to the Gaussian's stored parameters.
/// Adds into `out`.
template <typename T>
void project_backward(const Gaussian3D<T>& g, const Camera<T>& cam, const Splat2D<T>& s, const Splat2DGrad<T>& up,
                      GaussianGrad<T>& out) {
    // Color -> SH coefficients and view direction.
    const Vec3<T> cam_center = cam.center();
    const Vec3<T> ray = g.position - cam_center;
    const T ray_len = ray.norm();
    const Vec3<T> grad_dir = evaluate_sh_backward(std::span<const T, kShCoeffCount>(g.sh_coeffs), s.view_dir, s.color,
                                                  up.color, std::span<T, kShCoeffCount>(out.sh_coeffs));
    out.position += (grad_dir - s.view_dir * s.view_dir.dot(grad_dir)) / ray_len;

    // Opacity.
    const T a = s.alpha_base;
    out.opacity_logit += up.alpha_base * a * (T(1) - a);

    // conic = cov2d^-1  =>  dL/dcov2d = -conic dL/dconic conic.
    const Mat2<T> grad_cov2d = -s.conic * up.conic * s.conic;

    const Vec3<T> t = cam.to_camera(g.position);
    const T inv_z = T(1) / t[2];
    const T inv_z2 = inv_z * inv_z;
    Eigen::Matrix<T, 2, 3> jac;
    jac << cam.fx * inv_z, T(0), -cam.fx * t[0] * inv_z2, T(0), cam.fy * inv_z, -cam.fy * t[1] * inv_z2;

    const Mat3<T>& w = cam.rotation;
    const Vec4<T> qn = g.rotation / g.rotation.norm();
    const Mat3<T> rot = quat_to_matrix<T>(qn);
    const Vec3<T> scale = g.scale();
    const Mat3<T> m = rot * scale.asDiagonal();
    const Mat3<T> sigma = m * m.transpose();
    const Mat3<T> sigma_cam = w * sigma * w.transpose();

    // cov2d = J Sigma_cam J^T (+ const).
    const Mat3<T> grad_sigma_cam = jac.transpose() * grad_cov2d * jac;
    const Eigen::Matrix<T, 2, 3> grad_jac = T(2) * grad_cov2d * jac * sigma_cam;
    const Mat3<T> grad_sigma = w.transpose() * grad_sigma_cam * w;

    // Sigma = M M^T, M = R S.
    const Mat3<T> grad_m = T(2) * grad_sigma * m;
    const Mat3<T> grad_rot = grad_m * scale.asDiagonal();
    for (int j = 0; j < 3; ++j) out.log_scale[j] += rot.col(j).dot(grad_m.col(j)) * scale[j];

    const Vec4<T> grad_qn = detail::quat_matrix_adjoint(qn, grad_rot);
    out.rotation += (grad_qn - qn * qn.dot(grad_qn)) / g.rotation.norm();

    // Camera-space point: via mean2d (whose Jacobian is J) and via J's dependence on t.
    Vec3<T> grad_t = jac.transpose() * up.mean2d;
    grad_t[0] += grad_jac(0, 2) * (-cam.fx * inv_z2);
    grad_t[1] += grad_jac(1, 2) * (-cam.fy * inv_z2);
    grad_t[2] += grad_jac(0, 0) * (-cam.fx * inv_z2) + grad_jac(0, 2) * (T(2) * cam.fx * t[0] * inv_z2 * inv_z) +
                 grad_jac(1, 1) * (-cam.fy * inv_z2) + grad_jac(1, 2) * (T(2) * cam.fy * t[1] * inv_z2 * inv_z);
    out.position += w.transpose() * grad_t;
}

}  // namespace stylesplat

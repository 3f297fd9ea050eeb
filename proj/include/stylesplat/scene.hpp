#pragma once

#include "stylesplat/error.hpp"
#include "stylesplat/image.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

namespace stylesplat {

template <typename T>
using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T>
using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;

inline constexpr int kShDegree = 3;
inline constexpr int kShBasisCount = 16;
inline constexpr int kShCoeffCount = kShBasisCount * 3;
/// Degree-0 real SH basis value, 1 / (2 sqrt(pi)).
inline constexpr double kShC0 = 0.28209479177387814;

// ---------------------------------------------------------------------------
// Activations. Parameters are stored unconstrained and mapped on use.

template <typename T>
T sigmoid(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
T logit(T p) {
    return std::log(p) - std::log1p(-p);
}

/// Color in [0,1] to the degree-0 SH coefficient that reproduces it.
template <typename T>
T rgb_to_sh0(T rgb) {
    return (rgb - T(0.5)) / T(kShC0);
}

template <typename T>
struct Gaussian3D {
    Vec3<T> position = Vec3<T>::Zero();
    Vec3<T> log_scale = Vec3<T>::Zero();
    /// (w, x, y, z), not necessarily unit length.
    Vec4<T> rotation{T(1), T(0), T(0), T(0)};
    T opacity_logit = T(0);
    /// Coefficient k of channel c lives at [k * 3 + c].
    std::array<T, kShCoeffCount> sh_coeffs{};

    Vec3<T> scale() const { return log_scale.array().exp().matrix(); }
    T opacity() const { return sigmoid(opacity_logit); }
    Vec4<T> unit_rotation() const { return rotation / rotation.norm(); }

    template <typename U>
    Gaussian3D<U> cast() const {
        Gaussian3D<U> g;
        g.position = position.template cast<U>();
        g.log_scale = log_scale.template cast<U>();
        g.rotation = rotation.template cast<U>();
        g.opacity_logit = static_cast<U>(opacity_logit);
        for (int i = 0; i < kShCoeffCount; ++i) g.sh_coeffs[i] = static_cast<U>(sh_coeffs[i]);
        return g;
    }

    friend bool operator==(const Gaussian3D& a, const Gaussian3D& b) {
        return a.position == b.position && a.log_scale == b.log_scale && a.rotation == b.rotation &&
               a.opacity_logit == b.opacity_logit && a.sh_coeffs == b.sh_coeffs;
    }
};

/// Rotation matrix of a unit quaternion (w, x, y, z).
template <typename T>
Mat3<T> quat_to_matrix(const Vec4<T>& q) {
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<T> r;
    r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return r;
}

/// Unit quaternion (w, x, y, z) of a rotation matrix.
template <typename T>
Vec4<T> matrix_to_quat(const Mat3<T>& r) {
    Eigen::Quaternion<T> q(r);
    q.normalize();
    if (q.w() < T(0)) q.coeffs() *= T(-1);
    return {q.w(), q.x(), q.y(), q.z()};
}

/// Pinhole camera. World-to-camera: x_cam = rotation * x_world + translation;
/// +z looks forward, +y points down, pixel (i, j) has its center at (i + 0.5, j + 0.5).
template <typename T>
struct Camera {
    T fx = T(1), fy = T(1), cx = T(0), cy = T(0);
    int width = 1, height = 1;
    Mat3<T> rotation = Mat3<T>::Identity();
    Vec3<T> translation = Vec3<T>::Zero();

    Vec3<T> center() const { return -rotation.transpose() * translation; }
    Vec3<T> to_camera(const Vec3<T>& world) const { return rotation * world + translation; }

    void validate() const {
        if (width < 1 || height < 1) throw InvariantError("camera size must be at least 1x1");
        if (!(fx > T(0)) || !(fy > T(0))) throw InvariantError("camera focal lengths must be positive");
        const Mat3<T> err = rotation.transpose() * rotation - Mat3<T>::Identity();
        if (err.cwiseAbs().maxCoeff() > T(1e-5)) throw InvariantError("camera rotation is not orthonormal");
    }

    template <typename U>
    Camera<U> cast() const {
        Camera<U> c;
        c.fx = static_cast<U>(fx);
        c.fy = static_cast<U>(fy);
        c.cx = static_cast<U>(cx);
        c.cy = static_cast<U>(cy);
        c.width = width;
        c.height = height;
        c.rotation = rotation.template cast<U>();
        c.translation = translation.template cast<U>();
        return c;
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up.
    static Camera look_at(const Vec3<T>& eye, const Vec3<T>& target, const Vec3<T>& up, T focal, int w, int h) {
        Camera c;
        c.fx = c.fy = focal;
        c.cx = T(w) / T(2);
        c.cy = T(h) / T(2);
        c.width = w;
        c.height = h;
        const Vec3<T> forward = (target - eye).normalized();
        const Vec3<T> right = forward.cross(up).normalized();
        const Vec3<T> down = forward.cross(right);
        c.rotation.row(0) = right.transpose();
        c.rotation.row(1) = down.transpose();
        c.rotation.row(2) = forward.transpose();
        c.translation = -c.rotation * eye;
        return c;
    }
};

template <typename T>
struct Aabb {
    Vec3<T> min = Vec3<T>::Constant(std::numeric_limits<T>::infinity());
    Vec3<T> max = Vec3<T>::Constant(-std::numeric_limits<T>::infinity());

    void expand(const Vec3<T>& p) {
        min = min.cwiseMin(p);
        max = max.cwiseMax(p);
    }
    bool contains(const Vec3<T>& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    Vec3<T> center() const { return (min + max) / T(2); }
    T diagonal() const { return (max - min).norm(); }
    bool empty() const { return (min.array() > max.array()).any(); }
};

struct SceneMetadata {
    std::string created_by = "stylesplat";
    int sh_degree = kShDegree;
};

template <typename T>
struct SceneModel {
    std::vector<Gaussian3D<T>> gaussians;
    Aabb<T> bounds;
    SceneMetadata metadata;

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }

    void recompute_bounds() {
        bounds = Aabb<T>{};
        for (const auto& g : gaussians) bounds.expand(g.position);
    }

    void validate() const {
        if (gaussians.empty()) throw InvariantError("scene has no Gaussians");
        for (const auto& g : gaussians)
            if (!bounds.contains(g.position)) throw InvariantError("scene bounds do not contain every position");
    }

    template <typename U>
    SceneModel<U> cast() const {
        SceneModel<U> s;
        s.gaussians.reserve(gaussians.size());
        for (const auto& g : gaussians) s.gaussians.push_back(g.template cast<U>());
        s.bounds.min = bounds.min.template cast<U>();
        s.bounds.max = bounds.max.template cast<U>();
        s.metadata = metadata;
        return s;
    }
};

using Scene = SceneModel<float>;
using CameraF = Camera<float>;

struct TrainingView {
    std::string name;
    CameraF camera;
    ImageF image;
};

struct SfmPoint {
    Vec3<float> position;
    Vec3<float> color;  // [0,1]
};

struct TrainingDataset {
    std::vector<TrainingView> views;
    std::vector<SfmPoint> sfm_points;

    void validate() const {
        if (views.empty()) throw InvariantError("dataset has no views");
        for (const auto& v : views) {
            v.camera.validate();
            if (v.image.width != v.camera.width || v.image.height != v.camera.height)
                throw InvariantError("image " + v.name + " does not match its camera size");
        }
    }
};

inline constexpr float kInitialOpacity = 0.1f;
inline constexpr int kInitNeighbors = 3;

/// One Gaussian per SfM point: isotropic scale from the mean distance to the
/// three nearest neighbours, opacity 0.1, identity rotation, DC color only.
/// With fewer than four points the scale falls back to 1% of the bounds
/// diagonal (1% of a unit length when the bounds are degenerate).
inline Scene init_scene(const TrainingDataset& dataset) {
    const auto& pts = dataset.sfm_points;
    if (pts.empty()) throw InvariantError("init_scene needs at least one SfM point");
    const std::size_t n = pts.size();

    Aabb<float> bounds;
    for (const auto& p : pts) bounds.expand(p.position);

    std::vector<double> scales(n);
    if (n < kInitNeighbors + 1) {
        double diag = bounds.diagonal();
        if (!(diag > 0.0)) diag = 1.0;
        std::fill(scales.begin(), scales.end(), diag * 0.01);
    } else {
        std::vector<double> dist(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j)
                dist[j] = j == i ? std::numeric_limits<double>::infinity()
                                 : (pts[i].position.cast<double>() - pts[j].position.cast<double>()).norm();
            std::partial_sort(dist.begin(), dist.begin() + kInitNeighbors, dist.end());
            double mean = (dist[0] + dist[1] + dist[2]) / kInitNeighbors;
            scales[i] = std::max(mean, 1e-7);
        }
    }

    Scene scene;
    scene.gaussians.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& g = scene.gaussians[i];
        g.position = pts[i].position;
        g.log_scale = Vec3<float>::Constant(static_cast<float>(std::log(scales[i])));
        g.rotation = Vec4<float>(1, 0, 0, 0);
        g.opacity_logit = logit(kInitialOpacity);
        g.sh_coeffs.fill(0.0f);
        for (int c = 0; c < 3; ++c) g.sh_coeffs[c] = rgb_to_sh0(pts[i].color[c]);
    }
    scene.bounds = bounds;
    scene.metadata.sh_degree = kShDegree;
    return scene;
}

}  // namespace stylesplat

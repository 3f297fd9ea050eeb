#pragma once

// Brute-force reference renderer for tests. No tiles: every pixel walks a
// single globally depth-sorted splat list. Written against the math directly,
// not against stylesplat/projection.hpp.

#include "stylesplat/scene.hpp"
#include "stylesplat/sh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

namespace oracle {

using stylesplat::Camera;
using stylesplat::Gaussian3D;
using stylesplat::SceneModel;

struct Splat {
    std::size_t index;
    double depth;
    double mx, my;
    double ia, ib, ic;  // inverse covariance entries
    int radius;
    double r, g, b;
    double opacity;
};

/// One composited term of one pixel: which Gaussian, and whether its alpha was clamped.
struct Term {
    std::size_t index;
    bool clamped;
};

/// Discrete decisions of a render, replayed verbatim by a frozen evaluation.
using Decisions = std::vector<std::vector<Term>>;

struct Result {
    std::vector<double> image;          // H*W*3
    std::vector<double> transmittance;  // H*W
    std::vector<double> weight_sum;     // sum_i T_i a_i per pixel
    Decisions decisions;
};

template <typename T>
inline std::optional<Splat> project_naive(const Gaussian3D<T>& gt, const Camera<T>& ct, std::size_t index) {
    const Gaussian3D<double> g = gt.template cast<double>();
    const Camera<double> c = ct.template cast<double>();
    const Eigen::Vector3d t = c.rotation * g.position + c.translation;
    if (t.z() <= 0.01) return std::nullopt;

    Eigen::Vector4d q = g.rotation / g.rotation.norm();
    const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    const Eigen::Matrix3d rot = quat.toRotationMatrix();
    Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
    for (int i = 0; i < 3; ++i) s(i, i) = std::exp(g.log_scale[i]);
    const Eigen::Matrix3d sigma = rot * s * s.transpose() * rot.transpose();

    Eigen::Matrix<double, 2, 3> j;
    j << c.fx / t.z(), 0, -c.fx * t.x() / (t.z() * t.z()), 0, c.fy / t.z(), -c.fy * t.y() / (t.z() * t.z());
    Eigen::Matrix2d cov = j * c.rotation * sigma * c.rotation.transpose() * j.transpose();
    cov(0, 0) += 0.3;
    cov(1, 1) += 0.3;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    if (det <= 0) return std::nullopt;

    Splat sp;
    sp.index = index;
    sp.depth = t.z();
    sp.mx = c.fx * t.x() / t.z() + c.cx;
    sp.my = c.fy * t.y() / t.z() + c.cy;
    const double off = 0.5 * (cov(0, 1) + cov(1, 0));
    sp.ia = cov(1, 1) / det;
    sp.ib = -off / det;
    sp.ic = cov(0, 0) / det;
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(Eigen::Matrix2d{{cov(0, 0), off}, {off, cov(1, 1)}});
    sp.radius = static_cast<int>(std::ceil(3.0 * std::sqrt(es.eigenvalues().maxCoeff())));

    const Eigen::Vector3d eye = -c.rotation.transpose() * c.translation;
    const Eigen::Vector3d dir = (g.position - eye).normalized();
    const auto col = stylesplat::evaluate_sh(g.sh_coeffs, dir);
    sp.r = col[0];
    sp.g = col[1];
    sp.b = col[2];
    sp.opacity = 1.0 / (1.0 + std::exp(-g.opacity_logit));
    return sp;
}

template <typename T>
std::vector<Splat> sorted_splats(const SceneModel<T>& scene, const Camera<T>& cam) {
    std::vector<Splat> splats;
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i)
        if (auto s = project_naive(scene.gaussians[i], cam, i)) splats.push_back(*s);
    std::sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
    });
    return splats;
}

inline bool inside_footprint(const Splat& s, int x, int y) {
    const double px = x + 0.5, py = y + 0.5;
    return std::abs(px - s.mx) <= s.radius && std::abs(py - s.my) <= s.radius;
}

inline double falloff(const Splat& s, int x, int y) {
    const double dx = x + 0.5 - s.mx, dy = y + 0.5 - s.my;
    return std::exp(-0.5 * (s.ia * dx * dx + 2 * s.ib * dx * dy + s.ic * dy * dy));
}

/// Renders every pixel independently. With `frozen`, the contributing terms,
/// their order and clamp states are taken from a previous render instead of
/// being re-decided (used for finite differences on the smooth piece).
template <typename T>
Result render(const SceneModel<T>& scene, const Camera<T>& cam, const Eigen::Vector3d& bg,
              const Decisions* frozen = nullptr) {
    const auto splats = sorted_splats(scene, cam);
    std::vector<const Splat*> by_index(scene.gaussians.size(), nullptr);
    for (const auto& s : splats) by_index[s.index] = &s;

    Result res;
    const int w = cam.width, h = cam.height;
    res.image.assign(static_cast<std::size_t>(w) * h * 3, 0.0);
    res.transmittance.assign(static_cast<std::size_t>(w) * h, 1.0);
    res.weight_sum.assign(static_cast<std::size_t>(w) * h, 0.0);
    res.decisions.resize(static_cast<std::size_t>(w) * h);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            double trans = 1.0, cr = 0, cg = 0, cb = 0, wsum = 0;
            auto composite = [&](const Splat& s, double a) {
                cr += trans * a * s.r;
                cg += trans * a * s.g;
                cb += trans * a * s.b;
                wsum += trans * a;
                trans *= 1.0 - a;
            };
            if (frozen) {
                for (const auto& term : (*frozen)[p]) {
                    const Splat* s = by_index[term.index];
                    if (!s) continue;  // perturbation culled it; treat as absent
                    composite(*s, term.clamped ? 0.99 : s->opacity * falloff(*s, x, y));
                }
            } else {
                for (const auto& s : splats) {
                    if (!inside_footprint(s, x, y)) continue;
                    const double a = s.opacity * falloff(s, x, y);
                    if (a < 1.0 / 255.0) continue;
                    const bool clamped = a > 0.99;
                    composite(s, clamped ? 0.99 : a);
                    res.decisions[p].push_back({s.index, clamped});
                    if (trans < 1e-4) break;
                }
            }
            res.image[p * 3] = cr + trans * bg[0];
            res.image[p * 3 + 1] = cg + trans * bg[1];
            res.image[p * 3 + 2] = cb + trans * bg[2];
            res.transmittance[p] = trans;
            res.weight_sum[p] = wsum;
        }
    }
    return res;
}

}  // namespace oracle

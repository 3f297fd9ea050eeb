#pragma once

#include "stylesplat/error.hpp"
#include "stylesplat/image.hpp"
#include "stylesplat/parallel.hpp"
#include "stylesplat/projection.hpp"
#include "stylesplat/scene.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <type_traits>
#include <vector>

namespace stylesplat {

inline constexpr int kTileSize = 16;
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kTransmittanceCutoff = 1e-4;

struct RasterSettings {
    std::size_t workers = 0;  // 0 = hardware concurrency
};

/// Order-sensitive 64-bit FNV-1a over every stored Gaussian field.
template <typename T>
std::uint64_t scene_fingerprint(const SceneModel<T>& scene) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
    };
    for (const auto& g : scene.gaussians) {
        mix(g.position.data(), sizeof(T) * 3);
        mix(g.log_scale.data(), sizeof(T) * 3);
        mix(g.rotation.data(), sizeof(T) * 4);
        mix(&g.opacity_logit, sizeof(T));
        mix(g.sh_coeffs.data(), sizeof(T) * kShCoeffCount);
    }
    return h;
}

template <typename T>
struct RenderOutput {
    Image<T> image;
    std::vector<T> final_transmittance;  // H*W, row-major
    Vec3<T> background = Vec3<T>::Zero();

    // Binning index reused by the backward pass: splats visible to the camera,
    // and per-tile CSR lists of splat indices sorted front to back.
    std::vector<Splat2D<T>> splats;
    std::vector<std::uint32_t> splat_gaussian;
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::uint32_t> tile_offsets;
    std::vector<std::uint32_t> tile_splats;
    /// Per pixel: one past the tile-list position of the last composited splat.
    std::vector<std::uint32_t> last_contributor;

    std::size_t scene_size = 0;
    std::uint64_t fingerprint = 0;
    Camera<T> camera;

    T transmittance(int x, int y) const { return final_transmittance[static_cast<std::size_t>(y) * image.width + x]; }
};

template <typename T>
using SceneGradients = std::vector<GaussianGrad<T>>;

namespace detail {

/// Per-pixel evaluation of one splat: alpha after clamping, or 0 when the splat
/// does not touch this pixel. Shared by forward and backward so both see the
/// same discrete decisions.
template <typename T>
struct SplatSample {
    T alpha;
    T gaussian;  // exp(power)
    bool clamped;
    Vec2<T> offset;  // pixel center - mean
};

template <typename T>
inline bool sample_splat(const Splat2D<T>& s, int x, int y, SplatSample<T>& out) {
    if (!s.rect.contains(x, y)) return false;
    const T dx = T(x) + T(0.5) - s.mean2d[0];
    const T dy = T(y) + T(0.5) - s.mean2d[1];
    const T power = T(-0.5) * (s.conic(0, 0) * dx * dx + s.conic(1, 1) * dy * dy) - s.conic(0, 1) * dx * dy;
    const T gauss = std::exp(power);
    const T raw = s.alpha_base * gauss;
    if (raw < T(kMinAlpha)) return false;
    out.clamped = raw > T(kMaxAlpha);
    out.alpha = out.clamped ? T(kMaxAlpha) : raw;
    out.gaussian = gauss;
    out.offset = Vec2<T>(dx, dy);
    return true;
}

}  // namespace detail

/// Projects, bins into 16x16 tiles, and alpha-composites front to back:
/// C = sum_i T_i a_i c_i + T_final * background, T_i = prod_{j<i} (1 - a_j).
template <typename T>
RenderOutput<T> rasterize(const SceneModel<T>& scene, const Camera<T>& camera,
                          const std::type_identity_t<Vec3<T>>& background,
                          const RasterSettings& settings = {}) {
    camera.validate();
    RenderOutput<T> out;
    const int w = camera.width, h = camera.height;
    out.image = Image<T>(w, h);
    out.final_transmittance.assign(static_cast<std::size_t>(w) * h, T(1));
    out.last_contributor.assign(static_cast<std::size_t>(w) * h, 0);
    out.background = background;
    out.scene_size = scene.gaussians.size();
    out.fingerprint = scene_fingerprint(scene);
    out.camera = camera;
    out.tiles_x = (w + kTileSize - 1) / kTileSize;
    out.tiles_y = (h + kTileSize - 1) / kTileSize;
    const std::size_t tile_count = static_cast<std::size_t>(out.tiles_x) * out.tiles_y;

    // Project every Gaussian into a slot, then compact in index order.
    std::vector<std::optional<Splat2D<T>>> projected(scene.gaussians.size());
    parallel_for(
        scene.gaussians.size(), [&](std::size_t i) { projected[i] = project(scene.gaussians[i], camera); },
        settings.workers);
    for (std::size_t i = 0; i < projected.size(); ++i) {
        if (!projected[i]) continue;
        out.splats.push_back(*projected[i]);
        out.splat_gaussian.push_back(static_cast<std::uint32_t>(i));
    }

    // Depth order, ties by Gaussian index.
    std::vector<std::uint32_t> order(out.splats.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (out.splats[a].depth != out.splats[b].depth) return out.splats[a].depth < out.splats[b].depth;
        return out.splat_gaussian[a] < out.splat_gaussian[b];
    });

    auto tile_span = [&](const PixelRect& r) {
        return std::array<int, 4>{r.x0 / kTileSize, r.y0 / kTileSize, r.x1 / kTileSize, r.y1 / kTileSize};
    };
    std::vector<std::uint32_t> counts(tile_count + 1, 0);
    for (auto s : order) {
        const auto t = tile_span(out.splats[s].rect);
        for (int ty = t[1]; ty <= t[3]; ++ty)
            for (int tx = t[0]; tx <= t[2]; ++tx) ++counts[static_cast<std::size_t>(ty) * out.tiles_x + tx + 1];
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    out.tile_offsets = counts;
    out.tile_splats.resize(counts.back());
    std::vector<std::uint32_t> cursor(counts.begin(), counts.end() - 1);
    for (auto s : order) {
        const auto t = tile_span(out.splats[s].rect);
        for (int ty = t[1]; ty <= t[3]; ++ty)
            for (int tx = t[0]; tx <= t[2]; ++tx)
                out.tile_splats[cursor[static_cast<std::size_t>(ty) * out.tiles_x + tx]++] = s;
    }

    parallel_for(
        tile_count,
        [&](std::size_t tile) {
            const int tx = static_cast<int>(tile % out.tiles_x), ty = static_cast<int>(tile / out.tiles_x);
            const std::uint32_t begin = out.tile_offsets[tile], end = out.tile_offsets[tile + 1];
            for (int y = ty * kTileSize; y < std::min(h, (ty + 1) * kTileSize); ++y) {
                for (int x = tx * kTileSize; x < std::min(w, (tx + 1) * kTileSize); ++x) {
                    T trans = T(1);
                    Vec3<T> color = Vec3<T>::Zero();
                    std::uint32_t last = 0;
                    detail::SplatSample<T> smp;
                    for (std::uint32_t k = begin; k < end; ++k) {
                        const auto& s = out.splats[out.tile_splats[k]];
                        if (!detail::sample_splat(s, x, y, smp)) continue;
                        color += (trans * smp.alpha) * s.color;
                        trans *= T(1) - smp.alpha;
                        last = k - begin + 1;
                        if (trans < T(kTransmittanceCutoff)) break;
                    }
                    const std::size_t p = static_cast<std::size_t>(y) * w + x;
                    color += trans * background;
                    for (int c = 0; c < 3; ++c) out.image.data[p * 3 + c] = color[c];
                    out.final_transmittance[p] = trans;
                    out.last_contributor[p] = last;
                }
            }
        },
        settings.workers);
    return out;
}

/// Adjoint of rasterize: replays each pixel back to front from its stored final
/// transmittance and returns dL/d(parameter) for every Gaussian in the scene.
template <typename T>
SceneGradients<T> rasterize_backward(const SceneModel<T>& scene, const Camera<T>& camera, const RenderOutput<T>& render,
                                     const Image<T>& grad_image, const RasterSettings& settings = {}) {
    if (render.scene_size != scene.gaussians.size() || render.fingerprint != scene_fingerprint(scene))
        throw ContractViolation("rasterize_backward: render was produced from a different scene");
    if (render.camera.width != camera.width || render.camera.height != camera.height ||
        render.camera.rotation != camera.rotation || render.camera.translation != camera.translation ||
        render.camera.fx != camera.fx || render.camera.fy != camera.fy || render.camera.cx != camera.cx ||
        render.camera.cy != camera.cy)
        throw ContractViolation("rasterize_backward: render was produced with a different camera");
    if (!grad_image.same_shape(render.image))
        throw DimensionError("rasterize_backward: gradient image does not match the render size");

    const int w = camera.width, h = camera.height;
    const std::size_t tile_count = static_cast<std::size_t>(render.tiles_x) * render.tiles_y;
    // One slot per (tile, list entry); reduced in tile order below.
    std::vector<Splat2DGrad<T>> entry_grads(render.tile_splats.size());

    parallel_for(
        tile_count,
        [&](std::size_t tile) {
            const int tx = static_cast<int>(tile % render.tiles_x), ty = static_cast<int>(tile / render.tiles_x);
            const std::uint32_t begin = render.tile_offsets[tile];
            detail::SplatSample<T> smp;
            for (int y = ty * kTileSize; y < std::min(h, (ty + 1) * kTileSize); ++y) {
                for (int x = tx * kTileSize; x < std::min(w, (tx + 1) * kTileSize); ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * w + x;
                    const Vec3<T> g(grad_image.data[p * 3], grad_image.data[p * 3 + 1], grad_image.data[p * 3 + 2]);
                    if (g == Vec3<T>::Zero()) continue;
                    T trans = render.final_transmittance[p];
                    Vec3<T> behind = trans * render.background;
                    for (std::uint32_t k = render.last_contributor[p]; k-- > 0;) {
                        const std::uint32_t entry = begin + k;
                        const auto& s = render.splats[render.tile_splats[entry]];
                        if (!detail::sample_splat(s, x, y, smp)) continue;
                        const T one_minus = T(1) - smp.alpha;
                        const T t_i = trans / one_minus;
                        auto& eg = entry_grads[entry];
                        const T weight = t_i * smp.alpha;
                        eg.color += weight * g;
                        const T grad_alpha = g.dot(t_i * s.color - behind / one_minus);
                        behind += weight * s.color;
                        trans = t_i;
                        if (smp.clamped) continue;
                        eg.alpha_base += grad_alpha * smp.gaussian;
                        const T grad_power = grad_alpha * smp.alpha;
                        const Vec2<T>& d = smp.offset;
                        eg.mean2d += grad_power * (s.conic * d);
                        eg.conic += (T(-0.5) * grad_power) * (d * d.transpose());
                    }
                }
            }
        },
        settings.workers);

    std::vector<Splat2DGrad<T>> splat_grads(render.splats.size());
    for (std::size_t e = 0; e < render.tile_splats.size(); ++e) {
        auto& dst = splat_grads[render.tile_splats[e]];
        const auto& src = entry_grads[e];
        dst.mean2d += src.mean2d;
        dst.conic += src.conic;
        dst.color += src.color;
        dst.alpha_base += src.alpha_base;
    }

    SceneGradients<T> grads(scene.gaussians.size());
    parallel_for(
        render.splats.size(),
        [&](std::size_t s) {
            const auto gi = render.splat_gaussian[s];
            project_backward(scene.gaussians[gi], camera, render.splats[s], splat_grads[s], grads[gi]);
        },
        settings.workers);
    return grads;
}

}  // namespace stylesplat

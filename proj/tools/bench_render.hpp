#pragma once

// Render throughput harness: seeded random scenes, forward rasterization only.

#include "stylesplat/rasterizer.hpp"
#include "stylesplat/scene.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <random>
#include <thread>
#include <vector>

namespace stylesplat::bench {

/// `n` Gaussians filling the view frustum of `front_camera` between depth 2 and 6,
/// small random anisotropic scales, random rotations, opacities and colors.
inline Scene random_scene(std::size_t n, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    Scene s;
    s.gaussians.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Gaussian3D<float> g;
        const float z = 2.0f + 4.0f * u(rng);
        g.position = Vec3<float>((2.0f * u(rng) - 1.0f) * 0.5f * z, (2.0f * u(rng) - 1.0f) * 0.5f * z, z);
        for (int k = 0; k < 3; ++k) g.log_scale[k] = std::log(0.004f + 0.02f * u(rng));
        g.rotation = Vec4<float>(gauss(rng), gauss(rng), gauss(rng), gauss(rng)).normalized();
        g.opacity_logit = logit(0.2f + 0.75f * u(rng));
        for (int c = 0; c < 3; ++c) g.sh_coeffs[c] = rgb_to_sh0(u(rng));
        for (int k = 3; k < kShCoeffCount; ++k) g.sh_coeffs[k] = 0.05f * gauss(rng);
        s.gaussians.push_back(g);
    }
    s.recompute_bounds();
    return s;
}

/// Pinhole at the origin looking down +z with a 90 degree vertical field of view.
inline CameraF front_camera(int width, int height) {
    CameraF c;
    c.width = width;
    c.height = height;
    c.fy = height / 2.0f;
    c.fx = c.fy;
    c.cx = width / 2.0f;
    c.cy = height / 2.0f;
    return c;
}

struct Result {
    std::size_t gaussians = 0;
    int frames = 0;
    double ms_per_frame = 0;
    double fps = 0;
};

/// One warm-up render, then renders until `min_frames` are done and at least
/// `min_seconds` have passed.
inline Result measure(std::size_t n, int side, int min_frames, double min_seconds, std::size_t workers, std::uint32_t seed = 1) {
    const Scene scene = random_scene(n, seed);
    const CameraF cam = front_camera(side, side);
    const RasterSettings settings{.workers = workers};
    rasterize(scene, cam, Vec3<float>::Zero(), settings);
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    int frames = 0;
    double elapsed = 0;
    while (frames < min_frames || elapsed < min_seconds) {
        rasterize(scene, cam, Vec3<float>::Zero(), settings);
        ++frames;
        elapsed = std::chrono::duration<double>(clock::now() - t0).count();
    }
    return {n, frames, 1000.0 * elapsed / frames, frames / elapsed};
}

inline nlohmann::json to_json(const std::vector<Result>& results, int side, std::size_t workers) {
    nlohmann::json j;
    j["resolution"] = {side, side};
    j["workers"] = workers;
    j["hardware_concurrency"] = std::thread::hardware_concurrency();
    j["results"] = nlohmann::json::array();
    for (const auto& r : results)
        j["results"].push_back({{"gaussians", r.gaussians}, {"frames", r.frames}, {"ms_per_frame", r.ms_per_frame}, {"fps", r.fps}});
    return j;
}

/// Per scene size, fps relative to the baseline and whether it is within `tolerance`.
inline nlohmann::json compare(const nlohmann::json& current, const nlohmann::json& baseline, double tolerance = 0.2) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : current.at("results"))
        for (const auto& b : baseline.at("results"))
            if (b.at("gaussians") == r.at("gaussians")) {
                const double ratio = r.at("fps").get<double>() / b.at("fps").get<double>();
                out.push_back({{"gaussians", r.at("gaussians")}, {"ratio", ratio}, {"within_tolerance", std::abs(ratio - 1.0) <= tolerance}});
            }
    return out;
}

}  // namespace stylesplat::bench

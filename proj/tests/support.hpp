#pragma once

#include "stylesplat/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

namespace test_support {

using namespace stylesplat;

/// Camera at the origin looking down +z.
template <typename T>
Camera<T> front_camera(int w, int h, T focal) {
    Camera<T> c;
    c.fx = c.fy = focal;
    c.cx = T(w) / T(2);
    c.cy = T(h) / T(2);
    c.width = w;
    c.height = h;
    return c;
}

struct SceneRecipe {
    int count = 50;
    double xy_extent = 1.0;
    double z_min = 2.0, z_max = 5.0;
    double log_scale_min = std::log(0.03), log_scale_max = std::log(0.2);
    double logit_min = -2.0, logit_max = 2.0;
    double dc_min = -0.5, dc_max = 1.0;
    double higher_sh = 0.1;
};

template <typename T>
SceneModel<T> random_scene(std::uint32_t seed, const SceneRecipe& r = {}) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto lerp = [&](double a, double b) { return a + (b - a) * u(rng); };
    std::normal_distribution<double> n(0.0, 1.0);
    SceneModel<T> s;
    for (int i = 0; i < r.count; ++i) {
        Gaussian3D<T> g;
        g.position = Vec3<T>(T(lerp(-r.xy_extent, r.xy_extent)), T(lerp(-r.xy_extent, r.xy_extent)),
                             T(lerp(r.z_min, r.z_max)));
        for (int k = 0; k < 3; ++k) g.log_scale[k] = T(lerp(r.log_scale_min, r.log_scale_max));
        g.rotation = Vec4<T>(T(n(rng)), T(n(rng)), T(n(rng)), T(n(rng)));
        if (g.rotation.norm() < 0.1) g.rotation = Vec4<T>(1, 0, 0, 0);
        g.opacity_logit = T(lerp(r.logit_min, r.logit_max));
        for (int c = 0; c < 3; ++c) g.sh_coeffs[c] = T(lerp(r.dc_min, r.dc_max));
        for (int k = 3; k < kShCoeffCount; ++k) g.sh_coeffs[k] = T(r.higher_sh * lerp(-1.0, 1.0));
        s.gaussians.push_back(g);
    }
    s.recompute_bounds();
    return s;
}

/// Flat index over the 59 stored scalars of a Gaussian, in file field order.
template <typename T>
T& param(Gaussian3D<T>& g, int slot) {
    if (slot < 3) return g.position[slot];
    if (slot < 6) return g.log_scale[slot - 3];
    if (slot < 10) return g.rotation[slot - 6];
    if (slot == 10) return g.opacity_logit;
    return g.sh_coeffs[slot - 11];
}

inline constexpr int kParamSlots = 59;

inline const char* slot_field(int slot) {
    if (slot < 3) return "position";
    if (slot < 6) return "log_scale";
    if (slot < 10) return "rotation";
    if (slot == 10) return "opacity_logit";
    return "sh_coeffs";
}

inline std::filesystem::path fixture_dir() { return std::filesystem::path(STYLESPLAT_FIXTURE_DIR); }

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("stylesplat_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace test_support

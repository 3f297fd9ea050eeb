#pragma once

#include "stylesplat/metrics/ssim.hpp"
#include "stylesplat/nn/network.hpp"
#include "stylesplat/rasterizer.hpp"
#include "stylesplat/scene.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <type_traits>
#include <vector>

namespace stylesplat {

namespace detail {

/// Channel vector at spatial position p, scaled to unit length.
template <typename T>
void unit_feature(const nn::Tensor3<T>& t, std::size_t p, std::vector<double>& out) {
    double norm = 0;
    for (int c = 0; c < t.channels; ++c) {
        out[c] = double(t.channel(c)[p]);
        norm += out[c] * out[c];
    }
    const double inv = 1.0 / (std::sqrt(norm) + 1e-10);
    for (int c = 0; c < t.channels; ++c) out[c] *= inv;
}

}  // namespace detail

/// Mean over taps of the per-position squared distance between channel-unit-normalized
/// features. Stands in for LPIPS without its calibration weights.
template <typename T, typename U>
double feature_distance(const Image<T>& a, const Image<U>& b, const nn::NetworkSpec& net) {
    if (a.width != b.width || a.height != b.height)
        throw DimensionError("feature_distance: image sizes differ");
    const auto fa = nn::forward<float>(net, a.template cast<float>());
    const auto fb = nn::forward<float>(net, b.template cast<float>());
    double total = 0;
    for (const auto& [name, ta] : fa) {
        const auto& tb = fb.at(name);
        const std::size_t plane = ta.plane();
        double tap = 0;
        std::vector<double> ua(ta.channels), ub(ta.channels);
        for (std::size_t p = 0; p < plane; ++p) {
            detail::unit_feature(ta, p, ua);
            detail::unit_feature(tb, p, ub);
            for (int c = 0; c < ta.channels; ++c) tap += (ua[c] - ub[c]) * (ua[c] - ub[c]);
        }
        total += tap / double(plane);
    }
    return total / double(fa.size());
}

struct MetricSummary {
    double mean = 0, std = 0;
};

struct MetricReport {
    std::vector<std::string> views;
    std::vector<double> ssim;
    std::vector<double> feature_distance;

    static MetricSummary summarize(const std::vector<double>& v) {
        MetricSummary s;
        if (v.empty()) return s;
        for (double x : v) s.mean += x;
        s.mean /= double(v.size());
        for (double x : v) s.std += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(s.std / double(v.size()));
        return s;
    }
    MetricSummary ssim_summary() const { return summarize(ssim); }
    MetricSummary feature_distance_summary() const { return summarize(feature_distance); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["views"] = nlohmann::json::array();
        for (std::size_t i = 0; i < views.size(); ++i)
            j["views"].push_back({{"name", views[i]}, {"ssim", ssim[i]}, {"feature_distance", feature_distance[i]}});
        const auto s = ssim_summary(), f = feature_distance_summary();
        j["aggregate"] = {{"ssim", {{"mean", s.mean}, {"std", s.std}}},
                          {"feature_distance", {{"mean", f.mean}, {"std", f.std}}}};
        return j;
    }

    /// SSIM is higher-better, the feature distance lower-better.
    std::string to_table() const {
        std::size_t name_w = 6;
        for (const auto& v : views) name_w = std::max(name_w, v.size());
        auto row = [&](const std::string& name, const std::string& a, const std::string& b) {
            std::string s = name;
            s.resize(name_w + 2, ' ');
            char buf[64];
            std::snprintf(buf, sizeof buf, "%10s  %10s\n", a.c_str(), b.c_str());
            return s + buf;
        };
        auto num = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.4f", v);
            return std::string(buf);
        };
        std::string out = row("view", "SSIM (hi)", "LPIPS~ (lo)");
        for (std::size_t i = 0; i < views.size(); ++i) out += row(views[i], num(ssim[i]), num(feature_distance[i]));
        const auto s = ssim_summary(), f = feature_distance_summary();
        out += row("mean", num(s.mean), num(f.mean));
        out += row("std", num(s.std), num(f.std));
        return out;
    }
};

/// Renders each listed view and scores it against the view's reference image.
template <typename T>
MetricReport evaluate(const SceneModel<T>& scene, const TrainingDataset& dataset, const nn::NetworkSpec& net,
                      const std::vector<std::size_t>& views,
                      const std::type_identity_t<Vec3<T>>& background = Vec3<T>::Zero(),
                      RasterSettings settings = {}) {
    if (views.empty()) throw InvariantError("evaluate: no held-out views");
    MetricReport r;
    for (std::size_t idx : views) {
        if (idx >= dataset.views.size()) throw InvariantError("evaluate: view index out of range");
        const auto& v = dataset.views[idx];
        const auto out = rasterize(scene, v.camera.template cast<T>(), background, settings);
        r.views.push_back(v.name);
        r.ssim.push_back(ssim(out.image, v.image));
        r.feature_distance.push_back(feature_distance(out.image, v.image, net));
    }
    return r;
}

}  // namespace stylesplat

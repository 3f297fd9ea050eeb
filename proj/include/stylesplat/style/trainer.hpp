#pragma once

#include "stylesplat/dataset.hpp"
#include "stylesplat/metrics/ssim.hpp"
#include "stylesplat/nn/network.hpp"
#include "stylesplat/rasterizer.hpp"
#include "stylesplat/scene_io.hpp"
#include "stylesplat/style/adam.hpp"
#include "stylesplat/style/losses.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

namespace stylesplat::style {

struct LearningRates {
    double position = 1.6e-4;  // scaled by the scene-bounds diagonal
    double log_scale = 5e-3;
    double rotation = 1e-3;
    double opacity = 5e-2;
    double sh_dc = 2.5e-3;
    double sh_rest = 1.25e-4;
    double style_sh = 1e-2;  // phase 2, every SH coefficient
};

struct TrainConfig {
    int phase1_iterations = 3000;
    int phase2_iterations = 500;
    LearningRates lr;
    LossWeights weights;
    double prune_opacity = 0.005;
    int prune_every = 500;
    bool split = true;
    double split_fraction = 0.05;  // split when the largest axis exceeds this share of the bounds diagonal
    int snapshot_every = 0;        // 0 disables snapshots
    std::string snapshot_dir = "snapshots";
    std::uint32_t seed = 0;
    int holdout_every = 8;  // every n-th view is held out; 0 trains on all views
    bool adain_targets = true;
    std::vector<std::string> content_taps{"relu4_1"};
    std::array<float, 3> background{0.0f, 0.0f, 0.0f};
    int style_max_side = 256;
    std::size_t workers = 0;

    void validate() const {
        if (phase1_iterations < 0 || phase2_iterations < 0) throw InvariantError("iteration counts must be >= 0");
        const double rates[] = {lr.position, lr.log_scale, lr.rotation, lr.opacity, lr.sh_dc, lr.sh_rest, lr.style_sh};
        for (double r : rates)
            if (!(r > 0.0)) throw InvariantError("learning rates must be > 0");
        weights.validate();
        if (prune_every < 0 || snapshot_every < 0 || holdout_every < 0)
            throw InvariantError("cadences must be >= 0");
        if (style_max_side < 16) throw InvariantError("style_max_side must be >= 16");
    }
};

struct LossReport {
    int phase = 1;
    int iteration = 0;
    double l_content = 0;
    double l_style = 0;
    double l_total = 0;
    double l_photometric = 0;
    double wall_ms = 0;
    std::size_t gaussians = 0;

    nlohmann::json to_json() const {
        return {{"phase", phase},         {"iteration", iteration},         {"l_content", l_content},
                {"l_style", l_style},     {"l_total", l_total},             {"l_photometric", l_photometric},
                {"wall_ms", wall_ms},     {"gaussians", gaussians}};
    }
    bool operator==(const LossReport& o) const {
        return phase == o.phase && iteration == o.iteration && l_content == o.l_content && l_style == o.l_style &&
               l_total == o.l_total && l_photometric == o.l_photometric && gaussians == o.gaussians;
    }
};

/// Training stopped on a non-recoverable condition. `snapshot()` names the
/// diagnostic scene written before the abort, if any.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, std::string snapshot)
        : std::runtime_error(what + (snapshot.empty() ? "" : " (snapshot: " + snapshot + ")")), snapshot_(std::move(snapshot)) {}
    const std::string& snapshot() const noexcept { return snapshot_; }

private:
    std::string snapshot_;
};

enum class Phase { reconstruction = 1, stylization = 2, done = 3 };

/// Photometric loss 0.8 L1 + 0.2 (1 - SSIM) and its gradient w.r.t. `render`.
template <typename T>
double photometric_loss(const Image<T>& render, const ImageF& target, Image<T>* grad = nullptr) {
    const double n = double(render.data.size());
    double l1 = 0;
    for (std::size_t i = 0; i < render.data.size(); ++i) l1 += std::abs(double(render.data[i]) - double(target.data[i]));
    l1 /= n;
    Image<double> dssim;
    const double s = ssim_rgb(render, target, grad ? &dssim : nullptr);
    if (grad) {
        *grad = Image<T>(render.width, render.height);
        for (std::size_t i = 0; i < render.data.size(); ++i) {
            const double d = double(render.data[i]) - double(target.data[i]);
            const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            grad->data[i] = T(0.8 * sign / n - 0.2 * dssim.data[i]);
        }
    }
    return 0.8 * l1 + 0.2 * (1.0 - s);
}

/// Two-phase optimizer over one scene. Phase 1 fits every parameter to the
/// training photos; phase 2 fits only SH coefficients to the style objective.
/// Single-threaded owner of the scene; callers interleave commands between step() calls.
class Trainer {
public:
    Trainer(TrainingDataset dataset, Scene scene, nn::NetworkSpec net, TrainConfig config)
        : data_(std::move(dataset)), scene_(std::move(scene)), net_(std::move(net)), cfg_(std::move(config)), rng_(cfg_.seed) {
        cfg_.validate();
        data_.validate();
        net_.validate();
        if (scene_.empty()) throw InvariantError("trainer needs a non-empty scene");
        scene_.recompute_bounds();
        for (const auto& tap : cfg_.content_taps)
            if (!net_.layer_index(tap)) throw InvariantError("content tap '" + tap + "' is not in the network");
        std::tie(train_views_, holdout_views_) = split_views(data_.views.size(), cfg_.holdout_every);
        if (train_views_.empty()) train_views_ = holdout_views_;
        extent_ = std::max(1e-6, double((scene_.bounds.max - scene_.bounds.min).norm()));
        phase_ = cfg_.phase1_iterations > 0 ? Phase::reconstruction : Phase::stylization;
        if (phase_ == Phase::stylization && cfg_.phase2_iterations == 0) phase_ = Phase::done;
        set_phase1_rates();
    }

    const Scene& scene() const { return scene_; }
    const TrainConfig& config() const { return cfg_; }
    const TrainingDataset& dataset() const { return data_; }
    const nn::NetworkSpec& network() const { return net_; }
    Phase phase() const { return phase_; }
    int iteration() const { return iteration_; }
    bool finished() const { return phase_ == Phase::done; }
    bool has_style() const { return !style_targets_.empty(); }
    const std::vector<std::size_t>& train_views() const { return train_views_; }
    const std::vector<std::size_t>& holdout_views() const { return holdout_views_; }
    const LossWeights& weights() const { return cfg_.weights; }
    Vec3<float> background() const { return {cfg_.background[0], cfg_.background[1], cfg_.background[2]}; }
    RasterSettings raster_settings() const { return {.workers = cfg_.workers}; }

    void set_weights(const LossWeights& w) {
        w.validate();
        cfg_.weights = w;
    }

    /// Computes StyleTargets from the image (downscaled to style_max_side). If
    /// phase 2 is already running, the per-view content targets follow.
    void set_style_image(const ImageF& style) {
        if (style.width < 64 || style.height < 64) throw DimensionError("style image must be at least 64x64");
        ImageF img = style;
        const int side = std::max(style.width, style.height);
        if (side > cfg_.style_max_side) {
            const double s = double(cfg_.style_max_side) / side;
            img = resize_area(style, std::max(16, int(std::lround(style.width * s))), std::max(16, int(std::lround(style.height * s))));
        }
        style_targets_ = make_style_targets(nn::forward<float>(net_, img));
        if (phase2_ready_) rebuild_content_targets();
    }

    /// Captures the current renders as the phase-2 reference. Called on the
    /// first phase-2 step; callable earlier to inspect the initial objective.
    void begin_phase2() {
        if (phase2_ready_) return;
        if (!has_style()) throw InvariantError("phase 2 needs a style image");
        original_features_.assign(data_.views.size(), {});
        for (std::size_t v : train_views_) {
            const auto out = render_view(v);
            auto f = nn::forward<float>(net_, out.image);
            for (const auto& tap : cfg_.content_taps) original_features_[v][tap] = std::move(f.at(tap));
        }
        rebuild_content_targets();
        adam_.reset();
        adam_.lr.fill(0.0);
        adam_.lr[int(ParamGroup::sh_dc)] = cfg_.lr.style_sh;
        adam_.lr[int(ParamGroup::sh_rest)] = cfg_.lr.style_sh;
        phase2_ready_ = true;
    }

    /// Mean phase-2 objective over the training views for the current scene, without updating it.
    LossReport phase2_objective() {
        begin_phase2();
        LossReport r;
        r.phase = 2;
        r.iteration = iteration_;
        for (std::size_t v : train_views_) {
            const auto e = evaluate_style(v, nullptr);
            r.l_content += e.l_content;
            r.l_style += e.l_style;
        }
        r.l_content /= double(train_views_.size());
        r.l_style /= double(train_views_.size());
        r.l_total = total_loss(r.l_content, r.l_style, cfg_.weights);
        r.gaussians = scene_.size();
        return r;
    }

    /// One optimizer iteration of the current phase.
    LossReport step() {
        if (phase_ == Phase::done) throw InvariantError("training already finished");
        const auto t0 = std::chrono::steady_clock::now();
        LossReport r = phase_ == Phase::reconstruction ? step_reconstruction() : step_stylization();
        r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        r.gaussians = scene_.size();
        if (cfg_.snapshot_every > 0 && iteration_ % cfg_.snapshot_every == 0) save_snapshot(snapshot_path("snapshot"));
        advance_phase();
        return r;
    }

    /// Runs to completion, handing every report to `on_report`.
    void run(const std::function<void(const LossReport&)>& on_report = {}) {
        while (!finished()) {
            const auto r = step();
            if (on_report) on_report(r);
        }
    }

    std::filesystem::path save_snapshot(const std::filesystem::path& path) const {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        Scene copy = scene_;
        copy.recompute_bounds();
        save_scene(copy, path);
        return path;
    }

    RenderOutput<float> render_view(std::size_t v) const {
        return rasterize(scene_, data_.views[v].camera, background(), raster_settings());
    }

private:
    struct StyleEval {
        double l_content = 0, l_style = 0;
    };

    void set_phase1_rates() {
        adam_.lr[int(ParamGroup::position)] = cfg_.lr.position * extent_;
        adam_.lr[int(ParamGroup::log_scale)] = cfg_.lr.log_scale;
        adam_.lr[int(ParamGroup::rotation)] = cfg_.lr.rotation;
        adam_.lr[int(ParamGroup::opacity)] = cfg_.lr.opacity;
        adam_.lr[int(ParamGroup::sh_dc)] = cfg_.lr.sh_dc;
        adam_.lr[int(ParamGroup::sh_rest)] = cfg_.lr.sh_rest;
    }

    std::size_t next_view() {
        if (order_pos_ >= order_.size()) {
            order_ = train_views_;
            std::shuffle(order_.begin(), order_.end(), rng_);
            order_pos_ = 0;
        }
        return order_[order_pos_++];
    }

    std::filesystem::path snapshot_path(const char* stem) const {
        char name[64];
        std::snprintf(name, sizeof name, "%s_p%d_%06d.eastsplat", stem, int(phase_), iteration_);
        return std::filesystem::path(cfg_.snapshot_dir) / name;
    }

    [[noreturn]] void abort_with_snapshot(const std::string& why) {
        std::string snap;
        try {
            if (!scene_.empty()) snap = save_snapshot(snapshot_path("abort")).string();
        } catch (const std::exception&) {
            // The scene itself may be what is broken; report without a snapshot.
        }
        throw TrainingAborted(why, snap);
    }

    void advance_phase() {
        if (phase_ == Phase::reconstruction && iteration_ >= cfg_.phase1_iterations) {
            phase_ = cfg_.phase2_iterations > 0 ? Phase::stylization : Phase::done;
            iteration_ = 0;
            order_pos_ = order_.size();
        } else if (phase_ == Phase::stylization && iteration_ >= cfg_.phase2_iterations) {
            phase_ = Phase::done;
        }
    }

    LossReport step_reconstruction() {
        ++iteration_;
        const std::size_t v = next_view();
        const auto out = render_view(v);
        ImageF grad;
        const double loss = photometric_loss(out.image, data_.views[v].image, &grad);
        if (!std::isfinite(loss)) abort_with_snapshot("non-finite photometric loss at iteration " + std::to_string(iteration_));
        const auto grads = rasterize_backward(scene_, data_.views[v].camera, out, grad, raster_settings());
        adam_.step(scene_, grads);

        if (cfg_.prune_every > 0 && iteration_ % cfg_.prune_every == 0 && iteration_ < cfg_.phase1_iterations) {
            prune();
            if (scene_.empty()) abort_with_snapshot("every Gaussian was pruned at iteration " + std::to_string(iteration_));
            if (cfg_.split) split_oversized();
        }
        scene_.recompute_bounds();

        LossReport r;
        r.phase = 1;
        r.iteration = iteration_;
        r.l_photometric = r.l_total = loss;
        return r;
    }

    StyleEval evaluate_style(std::size_t v, Image<float>* image_grad) {
        const auto out = render_view(v);
        nn::ForwardTrace<float> trace;
        const auto feats = nn::forward<float>(net_, out.image, image_grad ? &trace : nullptr);
        nn::FeatureMaps<float> gc, gs;
        StyleEval e;
        e.l_content = content_loss(feats, content_targets_[v], cfg_.content_taps, image_grad ? &gc : nullptr);
        e.l_style = style_loss(feats, style_targets_, image_grad ? &gs : nullptr);
        if (image_grad) {
            nn::FeatureMaps<float> g;
            auto add = [&](const nn::FeatureMaps<float>& src, double w) {
                if (w == 0.0) return;
                for (const auto& [tap, t] : src) {
                    auto& dst = g[tap];
                    if (dst.empty()) dst = nn::Tensor3<float>(t.channels, t.height, t.width);
                    for (std::size_t i = 0; i < t.size(); ++i) dst.data[i] += float(w) * t.data[i];
                }
            };
            add(gc, cfg_.weights.w_c);
            add(gs, cfg_.weights.w_s);
            *image_grad = nn::backward(net_, trace, g);
            last_render_ = out;
        }
        return e;
    }

    LossReport step_stylization() {
        begin_phase2();
        ++iteration_;
        const std::size_t v = next_view();
        ImageF grad;
        const auto e = evaluate_style(v, &grad);
        LossReport r;
        r.phase = 2;
        r.iteration = iteration_;
        r.l_content = e.l_content;
        r.l_style = e.l_style;
        r.l_total = total_loss(e.l_content, e.l_style, cfg_.weights);
        if (!std::isfinite(r.l_total)) abort_with_snapshot("non-finite style loss at iteration " + std::to_string(iteration_));
        const auto grads = rasterize_backward(scene_, data_.views[v].camera, *last_render_, grad, raster_settings());
        adam_.step(scene_, grads);
        last_render_.reset();
        return r;
    }

    void rebuild_content_targets() {
        content_targets_.assign(data_.views.size(), {});
        for (std::size_t v : train_views_) {
            for (const auto& [tap, f] : original_features_[v]) {
                if (cfg_.adain_targets) {
                    const auto& st = style_targets_.at(tap);
                    content_targets_[v][tap] = adain(f, st.mean, st.std);
                } else {
                    content_targets_[v][tap] = f;
                }
            }
        }
    }

    void prune() {
        std::vector<bool> keep(scene_.size());
        std::vector<Gaussian3D<float>> kept;
        for (std::size_t i = 0; i < scene_.size(); ++i) {
            keep[i] = scene_.gaussians[i].opacity() >= float(cfg_.prune_opacity);
            if (keep[i]) kept.push_back(scene_.gaussians[i]);
        }
        scene_.gaussians = std::move(kept);
        adam_.compact(keep);
    }

    /// Replaces each oversized Gaussian by two children drawn from its own
    /// distribution, each 1/1.6 the size. Children go to the end of the list.
    void split_oversized() {
        const float limit = float(cfg_.split_fraction * extent_);
        std::vector<bool> keep(scene_.size(), true);
        std::vector<Gaussian3D<float>> kept, children;
        std::normal_distribution<float> n(0.0f, 1.0f);
        for (std::size_t i = 0; i < scene_.size(); ++i) {
            const auto& g = scene_.gaussians[i];
            if (g.scale().maxCoeff() <= limit) {
                kept.push_back(g);
                continue;
            }
            keep[i] = false;
            const Mat3<float> rot = quat_to_matrix<float>(g.unit_rotation());
            for (int k = 0; k < 2; ++k) {
                Gaussian3D<float> c = g;
                const Vec3<float> z(n(rng_), n(rng_), n(rng_));
                c.position = g.position + rot * (g.scale().cwiseProduct(z));
                c.log_scale = g.log_scale.array() - std::log(1.6f);
                children.push_back(c);
            }
        }
        if (children.empty()) return;
        adam_.compact(keep);
        adam_.append(children.size());
        kept.insert(kept.end(), children.begin(), children.end());
        scene_.gaussians = std::move(kept);
    }

    TrainingDataset data_;
    Scene scene_;
    nn::NetworkSpec net_;
    TrainConfig cfg_;
    std::mt19937 rng_;
    std::vector<std::size_t> train_views_, holdout_views_;
    std::vector<std::size_t> order_;
    std::size_t order_pos_ = 0;
    double extent_ = 1.0;
    Phase phase_ = Phase::reconstruction;
    int iteration_ = 0;
    SceneAdam<float> adam_;
    StyleTargets<float> style_targets_;
    bool phase2_ready_ = false;
    std::vector<nn::FeatureMaps<float>> original_features_;
    std::vector<nn::FeatureMaps<float>> content_targets_;
    std::optional<RenderOutput<float>> last_render_;
};

}  // namespace stylesplat::style

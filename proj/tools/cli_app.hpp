#pragma once

// The stylesplat command line: train, render, eval, serve, convert-weights.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include "stylesplat/camera_path.hpp"
#include "stylesplat/dataset.hpp"
#include "stylesplat/metrics/evaluate.hpp"
#include "stylesplat/nn/weights_io.hpp"
#include "stylesplat/scene_io.hpp"
#include "stylesplat/server/tcp_server.hpp"
#include "stylesplat/style/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace stylesplat::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Bad flag combinations found after CLI11 accepted the command line.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Lets an embedding (the tests) stop `serve` and learn its port.
struct Hooks {
    const std::atomic<bool>* stop = nullptr;
    std::function<void(std::uint16_t)> on_listening;
};

namespace detail {

inline std::atomic<bool> g_signal_stop{false};
inline void on_signal(int) { g_signal_stop = true; }

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline std::string format_report(const style::LossReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "phase %d it %d  l_total %.6g  l_content %.6g  l_style %.6g  gaussians %zu  %.1f ms",
                  r.phase, r.iteration, r.l_total, r.l_content, r.l_style, r.gaussians, r.wall_ms);
    return buf;
}

}  // namespace detail

class Cli {
public:
    Cli() : app_("Stylized 3D Gaussian Splatting: reconstruct, stylize, render, evaluate and serve scenes.", "stylesplat") {
        app_.set_version_flag("--version", "stylesplat 1.0.0");
        app_.require_subcommand(1);
        app_.failure_message(CLI::FailureMessage::help);
        app_.fallthrough();
        app_.set_config("--config", "", "TOML file: one [train], [render], [eval] or [serve] table per subcommand, keys are the long flag names");
        app_.add_flag("-v,--verbose", verbose_, "More log output (repeat for debug)")->configurable(false);
        app_.add_flag("-q,--quiet", quiet_, "Only log errors")->configurable(false);
        build_train();
        build_render();
        build_eval();
        build_serve();
        build_convert();
    }

    CLI::App& app() { return app_; }

    int run(int argc, const char* const* argv, const Hooks& hooks = {}) {
        try {
            app_.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            return app_.exit(e) == 0 ? kOk : kUsage;
        }
        setup_logging();
        try {
            if (train_->parsed()) return do_train();
            if (render_->parsed()) return do_render();
            if (eval_->parsed()) return do_eval();
            if (serve_->parsed()) return do_serve(hooks);
            if (convert_->parsed()) return do_convert();
        } catch (const UsageError& e) {
            app_.exit(CLI::ValidationError(e.what()));
            return kUsage;
        } catch (const std::exception& e) {
            spdlog::error("{}", e.what());
            return kRuntime;
        }
        return kUsage;
    }

private:
    // ---------------------------------------------------------------------
    // Flags

    /// One flag per TrainConfig field.
    static void add_train_options(CLI::App* sub, style::TrainConfig& c, std::vector<float>& background) {
        const char* g = "Training";
        sub->add_option("--phase1-iterations", c.phase1_iterations, "Reconstruction iterations")
            ->capture_default_str()->check(CLI::NonNegativeNumber)->group(g);
        sub->add_option("--phase2-iterations", c.phase2_iterations, "Stylization iterations")
            ->capture_default_str()->check(CLI::NonNegativeNumber)->group(g);
        sub->add_option("--lr-position", c.lr.position, "Position learning rate, times the bounds diagonal")->capture_default_str()->group(g);
        sub->add_option("--lr-log-scale", c.lr.log_scale, "Log-scale learning rate")->capture_default_str()->group(g);
        sub->add_option("--lr-rotation", c.lr.rotation, "Rotation learning rate")->capture_default_str()->group(g);
        sub->add_option("--lr-opacity", c.lr.opacity, "Opacity learning rate")->capture_default_str()->group(g);
        sub->add_option("--lr-sh-dc", c.lr.sh_dc, "SH DC learning rate (phase 1)")->capture_default_str()->group(g);
        sub->add_option("--lr-sh-rest", c.lr.sh_rest, "Higher-order SH learning rate (phase 1)")->capture_default_str()->group(g);
        sub->add_option("--lr-style-sh", c.lr.style_sh, "SH learning rate in phase 2")->capture_default_str()->group(g);
        sub->add_option("--w-c", c.weights.w_c, "Content loss weight")->capture_default_str()->check(CLI::NonNegativeNumber)->group(g);
        sub->add_option("--w-s", c.weights.w_s, "Style loss weight")->capture_default_str()->check(CLI::NonNegativeNumber)->group(g);
        sub->add_option("--prune-opacity", c.prune_opacity, "Prune Gaussians below this opacity")->capture_default_str()->group(g);
        sub->add_option("--prune-every", c.prune_every, "Prune cadence in phase 1 (0 disables)")
            ->capture_default_str()->check(CLI::NonNegativeNumber)->group(g);
        sub->add_flag("--split,!--no-split", c.split, "Split oversized Gaussians during pruning (default on)")->group(g);
        sub->add_option("--split-fraction", c.split_fraction, "Split above this share of the bounds diagonal")->capture_default_str()->group(g);
        sub->add_option("--snapshot-every", c.snapshot_every, "Write a scene snapshot every N iterations (0 disables)")
            ->capture_default_str()->check(CLI::NonNegativeNumber)->group(g);
        sub->add_option("--snapshot-dir", c.snapshot_dir, "Snapshot directory")->capture_default_str()->group(g);
        sub->add_option("--seed", c.seed, "Random seed")->capture_default_str()->group(g);
        sub->add_option("--holdout-every", c.holdout_every, "Hold out every N-th view for evaluation (0: none)")
            ->capture_default_str()->check(CLI::NonNegativeNumber)->group(g);
        sub->add_flag("--adain-targets,!--no-adain-targets", c.adain_targets,
                      "Content targets are AdaIN-modulated render features, else raw render features (default on)")
            ->group(g);
        sub->add_option("--content-taps", c.content_taps, "Network taps used for the content loss")
            ->delimiter(',')->capture_default_str()->group(g);
        sub->add_option("--background", background, "Background color r g b in [0,1]")
            ->expected(3)->delimiter(',')->capture_default_str()->group(g);
        sub->add_option("--style-max-side", c.style_max_side, "Downscale the style image to this longer side")
            ->capture_default_str()->group(g);
        sub->add_option("--workers", c.workers, "Render threads (0: hardware concurrency)")->capture_default_str()->group(g);
    }

    static void apply_background(const std::vector<float>& bg, style::TrainConfig& c) {
        if (bg.size() != 3) throw UsageError("--background needs three values");
        for (int i = 0; i < 3; ++i) c.background[i] = bg[i];
    }

    void build_train() {
        train_ = app_.add_subcommand("train", "Reconstruct a scene from photos, then stylize it");
        train_->add_option("--data", train_data_, "COLMAP dataset directory (images/ + sparse/)")->required()->check(CLI::ExistingDirectory);
        train_->add_option("--style", train_style_, "Style image (PNG or JPEG)")->required()->check(CLI::ExistingFile);
        train_->add_option("--out", train_out_, "Output directory")->required();
        train_->add_option("--weights", train_weights_, "Feature network (EASTNET file)")->required()->check(CLI::ExistingFile);
        train_->add_option("--init-scene", train_init_, "Start from this scene instead of the SfM points")->check(CLI::ExistingFile);
        train_->add_option("--log-every", train_log_every_, "Log a loss line every N iterations")->capture_default_str();
        add_train_options(train_, train_cfg_, train_bg_);
    }

    void build_render() {
        render_ = app_.add_subcommand("render", "Render a scene along a camera path, one PNG per pose");
        render_->add_option("--scene", render_scene_, "Scene file")->required()->check(CLI::ExistingFile);
        render_->add_option("--camera-path", render_path_, "Camera path JSON")->required()->check(CLI::ExistingFile);
        render_->add_option("--out-dir", render_out_, "Output directory")->required();
        render_->add_option("--width", render_width_, "Override the path's width")->check(CLI::Range(1, 16384));
        render_->add_option("--height", render_height_, "Override the path's height")->check(CLI::Range(1, 16384));
        render_->add_option("--background", render_bg_, "Background color r g b in [0,1]")
            ->expected(3)->delimiter(',')->capture_default_str();
        render_->add_option("--prefix", render_prefix_, "File name prefix")->capture_default_str();
        render_->add_option("--workers", render_workers_, "Render threads (0: hardware concurrency)")->capture_default_str();
    }

    void build_eval() {
        eval_ = app_.add_subcommand("eval", "Score a scene with SSIM and the feature distance, as JSON");
        eval_->add_option("--scene", eval_scene_, "Scene file")->required()->check(CLI::ExistingFile);
        eval_->add_option("--weights", eval_weights_, "Feature network (EASTNET file)")->required()->check(CLI::ExistingFile);
        auto* data = eval_->add_option("--data", eval_data_, "Compare against this dataset's photos")->check(CLI::ExistingDirectory);
        eval_->add_option("--views", eval_views_, "Dataset views to score")
            ->check(CLI::IsMember({"holdout", "train", "all"}))->capture_default_str()->needs(data);
        eval_->add_option("--holdout-every", eval_holdout_, "Held-out view cadence for --views")->capture_default_str()->needs(data);
        auto* ref = eval_->add_option("--reference-scene", eval_reference_, "Compare against renders of this scene")
                        ->check(CLI::ExistingFile)->excludes(data);
        eval_->add_option("--camera-path", eval_path_, "Poses for --reference-scene")->check(CLI::ExistingFile)->needs(ref);
        eval_->add_option("--background", eval_bg_, "Background color r g b in [0,1]")->expected(3)->delimiter(',')->capture_default_str();
        eval_->add_option("--out", eval_out_, "Write the JSON report here instead of stdout");
    }

    void build_serve() {
        serve_ = app_.add_subcommand("serve", "Run the WebSocket control server");
        auto* scene = serve_->add_option("--scene", serve_scene_, "View-only: serve this scene")->check(CLI::ExistingFile);
        auto* data = serve_->add_option("--data", serve_data_, "Training session on this dataset")
                         ->check(CLI::ExistingDirectory)->excludes(scene);
        serve_->add_option("--weights", serve_weights_, "Feature network (EASTNET file), with --data")->check(CLI::ExistingFile)->needs(data);
        serve_->add_option("--style", serve_style_, "Initial style image, with --data")->check(CLI::ExistingFile)->needs(data);
        serve_->add_option("--init-scene", serve_init_, "Start from this scene instead of the SfM points")->check(CLI::ExistingFile)->needs(data);
        serve_->add_option("--host", serve_host_, "Listen address")->capture_default_str();
        serve_->add_option("--port", serve_port_, "Listen port (default: $STYLESPLAT_PORT, else 8765; 0 picks a free port)");
        serve_->add_option("--port-file", serve_port_file_, "Write the bound port to this file");
        serve_->add_flag("--autostart", serve_autostart_, "Start training without waiting for a client");
        serve_->add_option("--status-every", serve_opts_.status_every, "Status event cadence in iterations")->capture_default_str();
        serve_->add_option("--max-preview-side", serve_opts_.max_preview_side, "Cap on the longer side of previews")->capture_default_str();
        add_train_options(serve_, serve_cfg_, serve_bg_);
    }

    void build_convert() {
        convert_ = app_.add_subcommand("convert-weights", "Write a feature network file");
        auto* in = convert_->add_option("--input", convert_in_, "EASTNET file to validate and rewrite")->check(CLI::ExistingFile);
        auto* rnd = convert_->add_flag("--random-init", convert_random_, "Seeded He-normal VGG-16 layers through relu4_1")->excludes(in);
        convert_->add_option("--seed", convert_seed_, "Seed for --random-init")->capture_default_str()->needs(rnd);
        convert_->add_option("--width-divisor", convert_divisor_, "Divide every conv width by this, for --random-init")
            ->capture_default_str()->check(CLI::PositiveNumber)->needs(rnd);
        convert_->add_option("--out", convert_out_, "Output file")->required();
    }

    void setup_logging() {
        auto logger = std::make_shared<spdlog::logger>("stylesplat", std::make_shared<spdlog::sinks::stderr_sink_mt>());
        logger->set_pattern("[%H:%M:%S] %l: %v");
        spdlog::set_default_logger(logger);
        if (quiet_) spdlog::set_level(spdlog::level::err);
        else if (verbose_ > 1) spdlog::set_level(spdlog::level::trace);
        else if (verbose_ == 1) spdlog::set_level(spdlog::level::debug);
        else spdlog::set_level(spdlog::level::info);
    }

    // ---------------------------------------------------------------------
    // Commands

    int do_train() {
        apply_background(train_bg_, train_cfg_);
        if (train_->count("--snapshot-dir") == 0) train_cfg_.snapshot_dir = (train_out_ / "snapshots").string();
        train_cfg_.validate();
        fs::create_directories(train_out_);
        {
            std::ofstream cfg(train_out_ / "train_config.toml");
            cfg << app_.config_to_str(false, false);
        }

        auto dataset = load_dataset(train_data_);
        spdlog::info("dataset {}: {} views, {} SfM points", train_data_.string(), dataset.views.size(), dataset.sfm_points.size());
        Scene scene = train_init_ ? load_scene(*train_init_) : init_scene(dataset);
        auto net = nn::load_weights(train_weights_);
        const ImageF style_image = read_image(train_style_);

        style::Trainer trainer(std::move(dataset), std::move(scene), std::move(net), train_cfg_);
        trainer.set_style_image(style_image);
        const auto holdout = trainer.holdout_views();
        auto evaluate_now = [&] {
            return evaluate(trainer.scene(), trainer.dataset(), trainer.network(), holdout, trainer.background(),
                            trainer.raster_settings());
        };

        std::ofstream losses(train_out_ / "losses.jsonl");
        std::optional<MetricReport> reconstruction;
        std::optional<style::LossReport> first[2], last[2];
        auto finish_phase1 = [&] {
            save_scene(trainer.scene(), train_out_ / "reconstruction.eastsplat");
            reconstruction = evaluate_now();
            spdlog::info("reconstruction: held-out SSIM {:.4f}", reconstruction->ssim_summary().mean);
        };
        if (trainer.phase() != style::Phase::reconstruction) finish_phase1();
        while (!trainer.finished()) {
            const auto before = trainer.phase();
            const auto r = trainer.step();
            losses << r.to_json().dump() << '\n';
            const int k = r.phase - 1;
            if (!first[k]) first[k] = r;
            last[k] = r;
            if (train_log_every_ > 0 && r.iteration % train_log_every_ == 0) spdlog::info("{}", detail::format_report(r));
            else spdlog::debug("{}", detail::format_report(r));
            if (before == style::Phase::reconstruction && trainer.phase() != before) finish_phase1();
        }

        save_scene(trainer.scene(), train_out_ / "scene.eastsplat");
        const MetricReport stylized = evaluate_now();
        nlohmann::json report;
        report["reconstruction"] = reconstruction->to_json();
        report["stylized"] = stylized.to_json();
        for (int k = 0; k < 2; ++k)
            if (first[k])
                report["losses"]["phase" + std::to_string(k + 1)] = {{"first", first[k]->to_json()}, {"last", last[k]->to_json()}};
        detail::write_json(train_out_ / "metrics.json", report);
        if (!quiet_) std::cerr << stylized.to_table();
        spdlog::info("wrote {}", (train_out_ / "scene.eastsplat").string());
        return kOk;
    }

    int do_render() {
        if (render_bg_.size() != 3) throw UsageError("--background needs three values");
        const Scene scene = load_scene(render_scene_);
        CameraPath path = CameraPath::load(render_path_);
        if (render_width_) path.width = *render_width_;
        if (render_height_) path.height = *render_height_;
        fs::create_directories(render_out_);
        const Vec3<float> bg(render_bg_[0], render_bg_[1], render_bg_[2]);
        const auto cams = path.cameras();
        for (std::size_t i = 0; i < cams.size(); ++i) {
            const auto out = rasterize(scene, cams[i], bg, RasterSettings{.workers = render_workers_});
            char name[64];
            std::snprintf(name, sizeof name, "%04zu.png", i);
            write_png(render_out_ / (render_prefix_ + name), out.image);
        }
        spdlog::info("wrote {} frames to {}", cams.size(), render_out_.string());
        return kOk;
    }

    int do_eval() {
        if (eval_bg_.size() != 3) throw UsageError("--background needs three values");
        if (!eval_data_ && !eval_reference_) throw UsageError("eval needs --data or --reference-scene");
        if (eval_reference_ && !eval_path_) throw UsageError("--reference-scene needs --camera-path");
        const Vec3<float> bg(eval_bg_[0], eval_bg_[1], eval_bg_[2]);
        const Scene scene = load_scene(eval_scene_);
        const auto net = nn::load_weights(eval_weights_);

        TrainingDataset ds;
        std::vector<std::size_t> views;
        if (eval_data_) {
            ds = load_dataset(*eval_data_);
            const auto [train, test] = split_views(ds.views.size(), eval_holdout_);
            if (eval_views_ == "holdout") views = test;
            else if (eval_views_ == "train") views = train;
            else
                for (std::size_t i = 0; i < ds.views.size(); ++i) views.push_back(i);
        } else {
            const Scene reference = load_scene(*eval_reference_);
            const auto cams = CameraPath::load(*eval_path_).cameras();
            for (std::size_t i = 0; i < cams.size(); ++i) {
                char name[32];
                std::snprintf(name, sizeof name, "pose_%04zu", i);
                ds.views.push_back({name, cams[i], rasterize(reference, cams[i], bg).image});
                views.push_back(i);
            }
        }
        const MetricReport report = evaluate(scene, ds, net, views, bg);
        if (eval_out_) detail::write_json(*eval_out_, report.to_json());
        else std::cout << report.to_json().dump(2) << std::endl;
        if (!quiet_) std::cerr << report.to_table();
        return kOk;
    }

    int do_serve(const Hooks& hooks) {
        if (!serve_scene_ && !serve_data_) throw UsageError("serve needs --scene or --data");
        if (serve_data_ && !serve_weights_) throw UsageError("--data needs --weights");
        apply_background(serve_bg_, serve_cfg_);
        serve_opts_.snapshot_dir = serve_cfg_.snapshot_dir;
        const std::uint16_t port = serve_port_ ? *serve_port_ : server::default_port();

        std::unique_ptr<server::SessionCore> core;
        if (serve_scene_) {
            core = std::make_unique<server::SessionCore>(load_scene(*serve_scene_), serve_opts_);
        } else {
            serve_cfg_.validate();
            auto dataset = load_dataset(*serve_data_);
            Scene scene = serve_init_ ? load_scene(*serve_init_) : init_scene(dataset);
            style::Trainer trainer(std::move(dataset), std::move(scene), nn::load_weights(*serve_weights_), serve_cfg_);
            if (serve_style_) trainer.set_style_image(read_image(*serve_style_));
            core = std::make_unique<server::SessionCore>(std::move(trainer), serve_opts_);
            if (serve_autostart_) core->start();
        }

        server::TcpServer tcp(*core, serve_host_, port);
        tcp.start();
        spdlog::info("listening on ws://{}:{} ({})", serve_host_, tcp.port(), server::state_name(core->state()));
        if (serve_port_file_) {
            std::ofstream f(*serve_port_file_);
            f << tcp.port() << '\n';
        }
        if (hooks.on_listening) hooks.on_listening(tcp.port());

        const std::atomic<bool>* stop = hooks.stop;
        if (!stop) {
            detail::g_signal_stop = false;
            std::signal(SIGINT, detail::on_signal);
            std::signal(SIGTERM, detail::on_signal);
            stop = &detail::g_signal_stop;
        }
        server::run_session(*core, *stop);
        tcp.stop();
        spdlog::info("server stopped");
        return kOk;
    }

    int do_convert() {
        if (!convert_random_ && !convert_in_) throw UsageError("convert-weights needs --input or --random-init");
        const nn::NetworkSpec net = convert_random_ ? nn::make_vgg16_to_relu4_1(convert_seed_, convert_divisor_)
                                                    : nn::load_weights(*convert_in_);
        nn::save_weights(net, convert_out_);
        std::size_t params = 0, convs = 0;
        for (const auto& l : net.layers) {
            params += l.weights.size() + l.bias.size();
            convs += l.kind == nn::LayerKind::conv;
        }
        spdlog::info("wrote {}: {} conv layers, {} parameters", convert_out_.string(), convs, params);
        return kOk;
    }

    CLI::App app_;
    int verbose_ = 0;
    bool quiet_ = false;
    CLI::App *train_ = nullptr, *render_ = nullptr, *eval_ = nullptr, *serve_ = nullptr, *convert_ = nullptr;

    fs::path train_data_, train_style_, train_out_, train_weights_;
    std::optional<fs::path> train_init_;
    int train_log_every_ = 100;
    style::TrainConfig train_cfg_;
    std::vector<float> train_bg_{0.0f, 0.0f, 0.0f};

    fs::path render_scene_, render_path_, render_out_;
    std::optional<int> render_width_, render_height_;
    std::vector<float> render_bg_{0.0f, 0.0f, 0.0f};
    std::string render_prefix_ = "frame_";
    std::size_t render_workers_ = 0;

    fs::path eval_scene_, eval_weights_;
    std::optional<fs::path> eval_data_, eval_reference_, eval_path_, eval_out_;
    std::string eval_views_ = "holdout";
    int eval_holdout_ = 8;
    std::vector<float> eval_bg_{0.0f, 0.0f, 0.0f};

    std::optional<fs::path> serve_scene_, serve_data_, serve_weights_, serve_style_, serve_init_, serve_port_file_;
    std::string serve_host_ = "127.0.0.1";
    std::optional<std::uint16_t> serve_port_;
    bool serve_autostart_ = false;
    server::SessionOptions serve_opts_;
    style::TrainConfig serve_cfg_;
    std::vector<float> serve_bg_{0.0f, 0.0f, 0.0f};

    std::optional<fs::path> convert_in_;
    bool convert_random_ = false;
    std::uint32_t convert_seed_ = 0;
    int convert_divisor_ = 1;
    fs::path convert_out_;
};

inline int run(int argc, const char* const* argv, const Hooks& hooks = {}) {
    Cli cli;
    return cli.run(argc, argv, hooks);
}

}  // namespace stylesplat::cli

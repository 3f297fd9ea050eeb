#include "cli_app.hpp"
#include "socket_client.hpp"
#include "support.hpp"
#include "toy_scene.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <thread>

using namespace stylesplat;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

/// Runs the CLI in-process with stdout and stderr captured.
Result run(std::vector<std::string> args, const cli::Hooks& hooks = {}) {
    args.insert(args.begin(), "stylesplat");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    testing::internal::CaptureStdout();
    testing::internal::CaptureStderr();
    const int code = cli::run(int(argv.size()), argv.data(), hooks);
    Result r{code, testing::internal::GetCapturedStdout(), testing::internal::GetCapturedStderr()};
    return r;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

fs::path small_net() { return test_support::fixture_dir() / "vgg_small" / "vgg_small.eastnet"; }
fs::path style_png() { return test_support::fixture_dir() / "style" / "cel_swirl.png"; }

/// Toy scene, its two-view dataset and a four-pose orbit, on disk.
struct ToyFiles {
    fs::path dir, scene, data, path;

    explicit ToyFiles(const std::string& name) : dir(test_support::temp_dir(name)) {
        const Scene s = test_support::toy_scene();
        scene = dir / "toy.eastsplat";
        save_scene(s, scene);
        auto ds = test_support::toy_dataset(s);
        for (auto& v : ds.views) v.name += ".png";
        data = dir / "data";
        save_dataset(ds, data);
        path = dir / "orbit.json";
        std::ofstream(path) << orbit_path({0.0, 0.0, 3.0}, 3.0, 4, 48, 40).to_json().dump(2);
    }
};

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
    std::vector<nlohmann::json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    return out;
}

}  // namespace

TEST(Cli, HelpOnEverySubcommandListsEveryFlag) {
    cli::Cli probe;
    const auto subs = probe.app().get_subcommands([](const CLI::App*) { return true; });
    ASSERT_EQ(subs.size(), 5u);
    for (const auto* sub : subs) {
        const auto r = run({sub->get_name(), "--help"});
        EXPECT_EQ(r.code, 0) << sub->get_name();
        for (const auto* opt : sub->get_options())
            for (const auto& name : opt->get_lnames())
                EXPECT_NE(r.out.find("--" + name), std::string::npos) << sub->get_name() << " --" << name;
    }
    const auto root = run({"--help"});
    EXPECT_EQ(root.code, 0);
    EXPECT_NE(root.out.find("--config"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"frobnicate"}).code, 1);
    EXPECT_EQ(run({"render"}).code, 1);
    const auto dir = test_support::temp_dir("cli_usage");
    EXPECT_EQ(run({"convert-weights", "--random-init", "--out", (dir / "n").string(), "--bogus"}).code, 1);
    EXPECT_EQ(run({"convert-weights", "--out", (dir / "n").string()}).code, 1);
    const auto r = run({"serve"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--scene or --data"), std::string::npos);
    EXPECT_EQ(run({"render", "--scene", "/nonexistent.eastsplat", "--camera-path", "x", "--out-dir", "y"}).code, 1);
}

TEST(Cli, RuntimeFailuresExitTwo) {
    const auto dir = test_support::temp_dir("cli_runtime");
    std::ofstream(dir / "bad.eastsplat") << "not a scene";
    std::ofstream(dir / "path.json") << R"([{"position":[0,0,0],"quaternion":[1,0,0,0]}])";
    const auto r = run({"render", "--scene", (dir / "bad.eastsplat").string(), "--camera-path", (dir / "path.json").string(),
                        "--out-dir", (dir / "out").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST(Cli, ConvertWeightsRandomInitIsSeededAndLoadable) {
    const auto dir = test_support::temp_dir("cli_convert");
    const auto a = dir / "a.eastnet", b = dir / "b.eastnet", c = dir / "c.eastnet";
    ASSERT_EQ(run({"convert-weights", "--random-init", "--seed", "5", "--width-divisor", "16", "--out", a.string()}).code, 0);
    ASSERT_EQ(run({"convert-weights", "--random-init", "--seed", "5", "--width-divisor", "16", "--out", b.string()}).code, 0);
    EXPECT_EQ(file_bytes(a), file_bytes(b));
    const auto net = nn::load_weights(a);
    EXPECT_EQ(nn::serialize_weights(net), nn::serialize_weights(nn::make_vgg16_to_relu4_1(5, 16)));
    ASSERT_EQ(run({"convert-weights", "--input", a.string(), "--out", c.string()}).code, 0);
    EXPECT_EQ(file_bytes(a), file_bytes(c));
}

TEST(Cli, RenderOrbitWritesOnePngPerPoseDeterministically) {
    ToyFiles toy("cli_render");
    for (const char* out : {"r1", "r2"})
        ASSERT_EQ(run({"render", "--scene", toy.scene.string(), "--camera-path", toy.path.string(), "--out-dir",
                       (toy.dir / out).string()})
                      .code,
                  0);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(toy.dir / "r1")) files.push_back(e.path());
    ASSERT_EQ(files.size(), 4u);

    const auto cams = CameraPath::load(toy.path).cameras();
    const Scene scene = test_support::toy_scene();
    for (std::size_t i = 0; i < 4; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.png", i);
        const auto bytes = file_bytes(toy.dir / "r1" / name);
        EXPECT_EQ(bytes, file_bytes(toy.dir / "r2" / name)) << name;
        const ImageF got = decode_png(bytes);
        const auto direct = rasterize(scene, cams[i], Vec3<float>::Zero()).image;
        ASSERT_EQ(got.width, 48);
        ASSERT_EQ(got.height, 40);
        for (std::size_t k = 0; k < direct.data.size(); ++k)
            ASSERT_EQ(to_u8(got.data[k]), to_u8(direct.data[k])) << name << " value " << k;
    }
}

TEST(Cli, EvalOfSceneAgainstItselfIsPerfect) {
    ToyFiles toy("cli_eval");
    const auto r = run({"eval", "--scene", toy.scene.string(), "--reference-scene", toy.scene.string(), "--camera-path",
                        toy.path.string(), "--weights", small_net().string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    ASSERT_EQ(j["views"].size(), 4u);
    for (const auto& v : j["views"]) {
        EXPECT_NEAR(v["ssim"].get<double>(), 1.0, 1e-12);
        EXPECT_NEAR(v["feature_distance"].get<double>(), 0.0, 1e-12);
    }
    EXPECT_NEAR(j["aggregate"]["ssim"]["mean"].get<double>(), 1.0, 1e-12);

    const auto out = toy.dir / "report.json";
    ASSERT_EQ(run({"eval", "--scene", toy.scene.string(), "--data", toy.data.string(), "--views", "all", "--weights",
                   small_net().string(), "--out", out.string()})
                  .code,
              0);
    std::ifstream in(out);
    const auto photos = nlohmann::json::parse(in);
    ASSERT_EQ(photos["views"].size(), 2u);
    // Reference photos went through 8-bit PNG, so only quantization separates them.
    EXPECT_GT(photos["aggregate"]["ssim"]["mean"].get<double>(), 0.999);
}

TEST(Cli, TrainSmokeRunLowersTheLossInBothPhases) {
    ToyFiles toy("cli_train");
    const auto out = toy.dir / "run";
    const auto r = run({"train", "--data", toy.data.string(), "--style", style_png().string(), "--weights",
                        small_net().string(), "--out", out.string(), "--phase1-iterations", "150", "--phase2-iterations",
                        "50", "--holdout-every", "0", "--workers", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"scene.eastsplat", "reconstruction.eastsplat", "metrics.json", "losses.jsonl", "train_config.toml"})
        EXPECT_TRUE(fs::exists(out / f)) << f;

    const auto losses = read_jsonl(out / "losses.jsonl");
    ASSERT_EQ(losses.size(), 200u);
    for (int phase : {1, 2}) {
        std::vector<double> l;
        for (const auto& j : losses)
            if (j["phase"] == phase) l.push_back(j["l_total"]);
        ASSERT_FALSE(l.empty());
        EXPECT_LT(l.back(), l.front()) << "phase " << phase;
    }

    // Geometry is frozen in phase 2.
    const Scene before = load_scene(out / "reconstruction.eastsplat"), after = load_scene(out / "scene.eastsplat");
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        EXPECT_EQ(before.gaussians[i].position, after.gaussians[i].position);
        EXPECT_EQ(before.gaussians[i].log_scale, after.gaussians[i].log_scale);
        EXPECT_EQ(before.gaussians[i].rotation, after.gaussians[i].rotation);
        EXPECT_EQ(before.gaussians[i].opacity_logit, after.gaussians[i].opacity_logit);
    }
    std::ifstream in(out / "metrics.json");
    const auto metrics = nlohmann::json::parse(in);
    EXPECT_TRUE(metrics.contains("reconstruction"));
    EXPECT_TRUE(metrics.contains("stylized"));
}

TEST(Cli, SavedConfigReplaysToIdenticalArtifacts) {
    ToyFiles toy("cli_config");
    const auto a = toy.dir / "a", b = toy.dir / "b";
    ASSERT_EQ(run({"train", "--data", toy.data.string(), "--style", style_png().string(), "--weights", small_net().string(),
                   "--out", a.string(), "--phase1-iterations", "12", "--phase2-iterations", "6", "--seed", "3",
                   "--background", "0.2,0.3,0.4", "--no-split", "--workers", "1"})
                  .code,
              0);
    const auto r = run({"train", "--config", (a / "train_config.toml").string(), "--out", b.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(file_bytes(a / "scene.eastsplat"), file_bytes(b / "scene.eastsplat"));
    EXPECT_EQ(read_jsonl(a / "losses.jsonl").size(), 18u);

    // Flags given on the command line win over the file.
    const auto c = toy.dir / "c";
    ASSERT_EQ(run({"train", "--config", (a / "train_config.toml").string(), "--out", c.string(), "--phase2-iterations", "2"}).code, 0);
    EXPECT_EQ(read_jsonl(c / "losses.jsonl").size(), 14u);
}

TEST(Cli, ServeAnswersClientsAndStopsCleanly) {
    ToyFiles toy("cli_serve");
    std::atomic<bool> stop{false};
    std::atomic<int> port{0};
    cli::Hooks hooks;
    hooks.stop = &stop;
    hooks.on_listening = [&](std::uint16_t p) { port = p; };
    const auto port_file = toy.dir / "port";
    int code = -1;
    std::thread server([&] {
        const char* argv[] = {"stylesplat", "-q", "serve", "--scene", toy.scene.c_str(), "--port", "0", "--port-file", port_file.c_str()};
        code = cli::run(9, argv, hooks);
    });
    for (int i = 0; i < 500 && port == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    ASSERT_GT(port, 0);
    int written = 0;
    std::ifstream(port_file) >> written;
    EXPECT_EQ(written, port);

    test_support::SocketClient client(std::uint16_t(port.load()));
    client.send(test_support::cmd(server::Hello{}, 1));
    const auto ack = std::get<server::Ack>(*client.next_event());
    EXPECT_EQ(ack.detail["gaussians"], 9);
    EXPECT_EQ(ack.detail["state"], "view_only");
    stop = true;
    server.join();
    EXPECT_EQ(code, 0);
}

TEST(Cli, ServeBindFailureExitsTwo) {
    ToyFiles toy("cli_bind");
    server::SessionCore core(test_support::toy_scene());
    server::TcpServer taken(core, "127.0.0.1", 0);
    const std::string port = std::to_string(taken.port());
    std::atomic<bool> stop{true};
    cli::Hooks hooks;
    hooks.stop = &stop;
    const auto r = run({"serve", "--scene", toy.scene.string(), "--port", port}, hooks);
    EXPECT_EQ(r.code, 2);
}

#pragma once

// Golden transcripts: scripted client byte streams and the exact server bytes
// they must produce. Files live in fixtures/protocol as
//   > hex of bytes the client sends
//   < hex of bytes the server answers after one drain (may be empty)

#include "net_support.hpp"
#include "stylesplat/server/session.hpp"
#include "support.hpp"
#include "toy_scene.hpp"
#include "ws_client.hpp"

#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace golden {

using namespace stylesplat;
using namespace stylesplat::server;
using Bytes = std::vector<std::uint8_t>;

struct Scenario {
    std::string name;
    bool training = false;
    std::vector<Bytes> inputs;
};

inline Bytes text_frame(const std::string& s) { return test_support::client_frame(WireMessage::from_text(s)); }
inline Bytes frame(const ControlMessage& m) { return test_support::client_frame(m); }

inline std::vector<Scenario> scenarios() {
    using test_support::cmd;
    const Bytes upgrade = test_support::bytes_of(test_support::upgrade_request());
    std::vector<Scenario> out;
    out.push_back({"handshake_hello", false, {upgrade, frame(cmd(Hello{1, "golden"}, 1)), frame(cmd(Hello{2, ""}, 2))}});
    out.push_back({"errors_three_strikes",
                   false,
                   {upgrade, frame(cmd(Hello{}, 1)), text_frame(R"({"type":"foo","id":2})"), text_frame(R"({"type":"hello",)"),
                    text_frame(R"({"type":"camera_update","id":3,"pose":{"position":[0,0,0],"quaternion":[0,0,0,0],"fov_y":60}})"),
                    frame(cmd(Hello{}, 4))}});
    out.push_back({"render_raw",
                   false,
                   {upgrade, frame(cmd(Hello{}, 1)),
                    frame(cmd(CameraUpdate{CameraPose{{0.1, 0.0, -0.5}, {1, 0, 0, 0}, 70.0}}, 2)),
                    frame(cmd(RenderRequest{16, 12, FrameEncoding::raw_rgb8}, 3)),
                    frame(cmd(RenderRequest{4000, 10, FrameEncoding::raw_rgb8}, 4))}});
    out.push_back({"train_control",
                   true,
                   {upgrade, frame(cmd(TrainControl{TrainAction::start}, 1)), frame(cmd(Hello{}, 2)),
                    frame(cmd(SetWeights{1.0, 0.0}, 3)), frame(cmd(TrainControl{TrainAction::resume}, 4)),
                    frame(cmd(TrainControl{TrainAction::start}, 5)), frame(cmd(TrainControl{TrainAction::pause}, 6)),
                    frame(cmd(TrainControl{TrainAction::resume}, 7)),
                    ws::encode_frame(ws::Opcode::ping, Bytes{'h', 'i'}, true, std::array<std::uint8_t, 4>{5, 6, 7, 8}),
                    ws::encode_frame(ws::Opcode::close, Bytes{0x03, 0xE8}, true, std::array<std::uint8_t, 4>{5, 6, 7, 8})}});
    return out;
}

inline std::unique_ptr<SessionCore> make_core(bool training) {
    const auto scene = test_support::toy_scene();
    if (!training) return std::make_unique<SessionCore>(scene);
    auto cfg = test_support::phase2_only(10);
    return std::make_unique<SessionCore>(
        style::Trainer(test_support::toy_dataset(scene), scene, nn::make_vgg16_to_relu4_1(1, 8), cfg));
}

/// Server bytes for each input of a scenario.
inline std::vector<Bytes> run(const Scenario& s) {
    auto core = make_core(s.training);
    Connection conn(*core);
    std::vector<Bytes> out;
    for (const auto& in : s.inputs) {
        conn.feed(in);
        core->drain();
        out.push_back(conn.take_output());
    }
    return out;
}

inline std::string to_hex(const Bytes& b) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(b.size() * 2);
    for (auto v : b) {
        s += digits[v >> 4];
        s += digits[v & 15];
    }
    return s;
}

inline Bytes from_hex(const std::string& s) {
    if (s.size() % 2) throw std::runtime_error("odd hex length");
    Bytes b(s.size() / 2);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::uint8_t(std::stoi(s.substr(2 * i, 2), nullptr, 16));
    return b;
}

inline std::filesystem::path path_of(const std::string& name) {
    return test_support::fixture_dir() / "protocol" / (name + ".transcript");
}

inline void write(const Scenario& s) {
    const auto outs = run(s);
    std::filesystem::create_directories(path_of(s.name).parent_path());
    std::ofstream f(path_of(s.name));
    f << "# " << s.name << ": client bytes (>) and the server bytes (<) after one drain\n";
    for (std::size_t i = 0; i < s.inputs.size(); ++i) f << "> " << to_hex(s.inputs[i]) << "\n< " << to_hex(outs[i]) << "\n";
}

struct Transcript {
    std::vector<Bytes> client, server;
};

inline Transcript read(const std::string& name) {
    std::ifstream f(path_of(name));
    if (!f) throw std::runtime_error("missing transcript " + path_of(name).string());
    Transcript t;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        const std::string hex = line.size() > 2 ? line.substr(2) : "";
        if (line[0] == '>') t.client.push_back(from_hex(hex));
        else if (line[0] == '<') t.server.push_back(from_hex(hex));
        else throw std::runtime_error("bad transcript line in " + name);
    }
    if (t.client.size() != t.server.size()) throw std::runtime_error("unpaired transcript lines in " + name);
    return t;
}

/// Replays the recorded client bytes and compares. Returns an empty string on
/// a byte-identical match, otherwise where it diverged.
inline std::string replay(const Scenario& s) {
    const Transcript t = read(s.name);
    auto core = make_core(s.training);
    Connection conn(*core);
    for (std::size_t i = 0; i < t.client.size(); ++i) {
        conn.feed(t.client[i]);
        core->drain();
        const Bytes got = conn.take_output();
        if (got != t.server[i]) {
            std::size_t k = 0;
            while (k < got.size() && k < t.server[i].size() && got[k] == t.server[i][k]) ++k;
            return s.name + ": exchange " + std::to_string(i) + " differs at byte " + std::to_string(k) + " (got " +
                   std::to_string(got.size()) + " bytes, expected " + std::to_string(t.server[i].size()) + ")";
        }
    }
    return {};
}

}  // namespace golden

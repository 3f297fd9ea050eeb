#include "net_support.hpp"
#include "socket_client.hpp"
#include "stylesplat/server/tcp_server.hpp"
#include "support.hpp"
#include "toy_scene.hpp"
#include "ws_client.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace stylesplat;
using namespace stylesplat::server;
using test_support::client_frame;
using test_support::cmd;
using test_support::server_events;
using test_support::SocketClient;

namespace {

/// In-process client: the connection plus a helper that sends, drains and decodes.
struct Harness {
    SessionCore& core;
    Connection conn{core};

    explicit Harness(SessionCore& c) : core(c) {
        conn.feed(test_support::bytes_of(test_support::upgrade_request()));
        const auto out = conn.take_output();
        const std::string head(out.begin(), out.end());
        EXPECT_EQ(head.rfind("HTTP/1.1 101", 0), 0u);
        EXPECT_NE(head.find("s3pPLMBiTxaQ9kYGzzhZRbK+xOo="), std::string::npos);
    }

    std::vector<std::uint8_t> raw(const std::vector<std::uint8_t>& bytes) {
        conn.feed(bytes);
        core.drain();
        return conn.take_output();
    }
    std::vector<ServerEvent> send(const ControlMessage& m) { return server_events(raw(client_frame(m))); }
    std::vector<ServerEvent> send_text(const std::string& text) {
        return server_events(raw(client_frame(WireMessage::from_text(text))));
    }
    Ack hello() {
        const auto ev = send(cmd(Hello{}, 0));
        EXPECT_EQ(ev.size(), 1u);
        return std::get<Ack>(ev.at(0));
    }
};

style::Trainer toy_trainer(int phase1, int phase2) {
    const auto scene = test_support::toy_scene();
    auto cfg = test_support::phase2_only(phase2);
    cfg.phase1_iterations = phase1;
    cfg.prune_every = 0;
    cfg.split = false;
    return style::Trainer(test_support::toy_dataset(scene), scene, nn::make_vgg16_to_relu4_1(1, 8), cfg);
}

ImageF style_image() { return test_support::random_image<float>(64, 64, 11); }

std::vector<std::uint8_t> png_of(const ImageF& img) { return encode_png(img); }

}  // namespace

TEST(Session, HelloAckCarriesVersionAndSceneSummary) {
    SessionCore core(test_support::toy_scene());
    Harness h(core);
    const auto a = h.hello();
    EXPECT_EQ(a.command, "hello");
    EXPECT_EQ(a.id, 0u);
    EXPECT_EQ(a.detail["protocol"], 1);
    EXPECT_EQ(a.detail["gaussians"], 9);
    EXPECT_EQ(a.detail["state"], "view_only");
    EXPECT_DOUBLE_EQ(a.detail["bounds"]["min"][0].get<double>(), -1.0);
    EXPECT_DOUBLE_EQ(a.detail["bounds"]["max"][2].get<double>(), 3.0);
}

TEST(Session, VersionMismatchAndCommandsBeforeHello) {
    SessionCore core(test_support::toy_scene());
    Harness h(core);
    auto ev = h.send(cmd(RenderRequest{16, 16}, 1));
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(std::get<ErrorEvent>(ev[0]).code, ErrorCode::bad_state);
    ev = h.send(cmd(Hello{2, ""}, 2));
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(std::get<ErrorEvent>(ev[0]).code, ErrorCode::unsupported_version);
    EXPECT_EQ(std::get<ErrorEvent>(ev[0]).id, 2u);
    h.hello();
}

TEST(Session, RenderedFrameEqualsDirectRasterize) {
    const auto scene = test_support::toy_scene();
    SessionCore core(scene);
    Harness h(core);
    h.hello();
    const CameraPose pose{{0.2, -0.1, -1.0}, {0.995, 0.05, -0.08, 0.0}, 55.0};
    auto ev = h.send(cmd(CameraUpdate{pose}, 3));
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(std::get<Ack>(ev[0]).command, "camera_update");

    const auto direct = rasterize(scene, camera_from_pose(pose, 256, 256), Vec3<float>::Zero()).image;
    for (auto enc : {FrameEncoding::raw_rgb8, FrameEncoding::png}) {
        ev = h.send(cmd(RenderRequest{256, 256, enc}, 4));
        ASSERT_EQ(ev.size(), 2u);
        const auto& ack = std::get<Ack>(ev[0]);
        const auto& frame = std::get<FrameEvent>(ev[1]);
        EXPECT_EQ(ack.detail["seq"], frame.seq);
        ASSERT_EQ(frame.width, 256);
        ASSERT_EQ(frame.height, 256);
        std::vector<std::uint8_t> got = frame.payload;
        if (enc == FrameEncoding::png) {
            const auto img = decode_png(frame.payload);
            got.resize(img.data.size());
            for (std::size_t i = 0; i < img.data.size(); ++i) got[i] = to_u8(img.data[i]);
        }
        ASSERT_EQ(got.size(), direct.data.size());
        for (std::size_t i = 0; i < got.size(); ++i) ASSERT_EQ(got[i], to_u8(direct.data[i])) << i;
    }
}

TEST(Session, PreviewIsCappedAndSequenceIncreases) {
    SessionCore core(test_support::toy_scene());
    Harness h(core);
    h.hello();
    std::uint32_t last = 0;
    for (int k = 0; k < 3; ++k) {
        const auto ev = h.send(cmd(RenderRequest{2048, 1000, FrameEncoding::raw_rgb8}));
        const auto& f = std::get<FrameEvent>(ev.at(1));
        EXPECT_EQ(f.width, 1024);
        EXPECT_EQ(f.height, 500);
        EXPECT_GT(f.seq, last);
        last = f.seq;
    }
}

TEST(Session, ThreeStrikesDisconnect) {
    SessionCore core(test_support::toy_scene());
    Harness h(core);
    h.hello();
    auto ev = h.send_text(R"({"type":"foo"})");
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(std::get<ErrorEvent>(ev[0]).code, ErrorCode::unknown_type);
    ev = h.send_text("{not json");
    EXPECT_EQ(std::get<ErrorEvent>(ev.at(0)).code, ErrorCode::bad_json);
    // A valid command between strikes does not reset the count.
    EXPECT_EQ(h.send(cmd(TrainControl{TrainAction::start})).size(), 1u);
    const auto out = h.raw(client_frame(WireMessage::from_text(R"({"type":"render_request","width":0,"height":1})")));
    ev = server_events(out);
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(std::get<ErrorEvent>(ev[0]).field, "width");
    std::uint16_t code = 0;
    EXPECT_TRUE(test_support::has_close(out, &code));
    EXPECT_EQ(code, ws::kClosePolicy);
    EXPECT_TRUE(h.conn.closed());
    EXPECT_TRUE(h.raw(client_frame(cmd(Hello{}))).empty());
}

TEST(Session, FramingViolationClosesWithOffset) {
    SessionCore core(test_support::toy_scene());
    Harness h(core);
    const auto ok = client_frame(cmd(Hello{}));
    const auto bad = ws::encode_frame(ws::Opcode::text, std::vector<std::uint8_t>{'x'});  // unmasked
    std::vector<std::uint8_t> both = ok;
    both.insert(both.end(), bad.begin(), bad.end());
    const auto out = h.raw(both);
    // The hello was queued but the client is gone before it is applied.
    const auto ev = server_events(out);
    ASSERT_EQ(ev.size(), 1u);
    const auto& err = std::get<ErrorEvent>(ev[0]);
    EXPECT_EQ(err.code, ErrorCode::framing);
    EXPECT_EQ(err.offset, ok.size() + 1);
    EXPECT_TRUE(test_support::has_close(out));
}

TEST(Session, PingGetsPongAndCloseIsEchoed) {
    SessionCore core(test_support::toy_scene());
    Harness h(core);
    auto out = h.raw(ws::encode_frame(ws::Opcode::ping, std::vector<std::uint8_t>{'p'}, true, std::array<std::uint8_t, 4>{9, 9, 9, 9}));
    auto frames = test_support::server_frames(out);
    ASSERT_EQ(frames.size(), 1u);
    EXPECT_EQ(frames[0].opcode, ws::Opcode::pong);
    EXPECT_EQ(frames[0].payload, std::vector<std::uint8_t>{'p'});
    // Commands queued before the close are dropped with the client.
    h.conn.feed(client_frame(cmd(Hello{})));
    out = h.raw(ws::encode_frame(ws::Opcode::close, std::vector<std::uint8_t>{0x03, 0xE8}, true, std::array<std::uint8_t, 4>{1, 1, 1, 1}));
    frames = test_support::server_frames(out);
    ASSERT_EQ(frames.size(), 1u);
    EXPECT_EQ(frames[0].opcode, ws::Opcode::close);
    EXPECT_EQ(core.client_count(), 0u);
}

TEST(Session, BadHandshakeGets400) {
    SessionCore core(test_support::toy_scene());
    Connection conn(core);
    conn.feed(test_support::bytes_of("GET / HTTP/1.1\r\nHost: x\r\n\r\n"));
    const auto out = conn.take_output();
    EXPECT_EQ(std::string(out.begin(), out.end()).rfind("HTTP/1.1 400", 0), 0u);
    EXPECT_TRUE(conn.closed());
    EXPECT_EQ(core.client_count(), 0u);
}

TEST(Session, TrainControlStateMachine) {
    SessionCore core(toy_trainer(0, 20));
    Harness h(core);
    h.hello();
    auto state_after = [&](TrainAction a) -> std::string {
        const auto ev = h.send(cmd(TrainControl{a}));
        if (ev.size() != 1) return "?";
        if (const auto* e = std::get_if<ErrorEvent>(&ev[0])) return std::string("error:") + error_code_name(e->code);
        return std::get<Ack>(ev[0]).detail["state"];
    };
    EXPECT_EQ(state_after(TrainAction::pause), "error:BAD_STATE");
    EXPECT_EQ(state_after(TrainAction::resume), "error:BAD_STATE");
    EXPECT_EQ(state_after(TrainAction::start), "running");
    EXPECT_EQ(state_after(TrainAction::start), "error:BAD_STATE");
    // No style yet: the first step parks the session.
    EXPECT_FALSE(core.step());
    EXPECT_EQ(core.state(), RunState::waiting_for_style);
    const auto parked = server_events(h.conn.take_output());
    ASSERT_EQ(parked.size(), 1u);
    EXPECT_EQ(std::get<Status>(parked[0]).state, "waiting_for_style");
    EXPECT_EQ(state_after(TrainAction::pause), "paused");
    EXPECT_EQ(state_after(TrainAction::resume), "running");

    const auto ev = h.send(cmd(SetStyle{png_of(style_image())}, 9));
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(std::get<Ack>(ev[0]).detail["width"], 64);
    EXPECT_TRUE(core.step());

    const auto bad = h.send(cmd(SetStyle{{1, 2, 3}}, 10));
    EXPECT_EQ(std::get<ErrorEvent>(bad.at(0)).code, ErrorCode::bad_field);
    const auto tiny = h.send(cmd(SetStyle{png_of(ImageF(32, 32, 0.5f))}, 11));
    EXPECT_EQ(std::get<ErrorEvent>(tiny.at(0)).field, "image");
}

TEST(Session, StatusCadenceAndWeightIdentityOverTheWire) {
    SessionCore core(toy_trainer(0, 40));
    core.trainer()->set_style_image(style_image());
    Harness h(core);
    h.hello();
    h.send(cmd(TrainControl{TrainAction::start}));
    std::vector<Status> statuses;
    auto pump = [&](int steps) {
        for (int i = 0; i < steps; ++i) {
            core.step();
            for (auto& e : server_events(h.conn.take_output()))
                if (auto* s = std::get_if<Status>(&e)) statuses.push_back(*s);
        }
    };
    pump(15);
    ASSERT_EQ(statuses.size(), 1u);
    EXPECT_EQ(statuses[0].report.iteration, 10);
    EXPECT_NEAR(statuses[0].report.l_total, statuses[0].report.l_content + 10 * statuses[0].report.l_style, 1e-9);

    const auto ack = h.send(cmd(SetWeights{1.0, 0.0}, 21));
    ASSERT_EQ(ack.size(), 1u);
    EXPECT_EQ(std::get<Ack>(ack[0]).command, "set_weights");
    pump(5);
    ASSERT_EQ(statuses.size(), 2u);
    const auto& r = statuses[1].report;
    EXPECT_EQ(r.iteration, 20);
    EXPECT_GT(r.l_style, 0.0);
    EXPECT_NEAR(r.l_total, 1.0 * r.l_content, 1e-6);

    pump(30);
    EXPECT_EQ(statuses.back().state, "finished");
    EXPECT_EQ(statuses.back().report.iteration, 40);
    EXPECT_EQ(statuses.size(), 4u);
}

TEST(Session, EveryCommandGetsExactlyOneReply) {
    SessionCore core(toy_trainer(0, 5));
    Harness h(core);
    std::vector<std::uint8_t> batch;
    std::vector<ControlMessage> cmds{
        cmd(Hello{}, 1),
        cmd(CameraUpdate{}, 2),
        cmd(SetWeights{1, 2}, 3),
        cmd(TrainControl{TrainAction::resume}, 4),
        cmd(RenderRequest{20, 20}, 5),
        cmd(SetStyle{{0}}, 6),
        cmd(TrainControl{TrainAction::start}, 7),
    };
    for (const auto& m : cmds) {
        const auto f = client_frame(m);
        batch.insert(batch.end(), f.begin(), f.end());
    }
    const auto ev = server_events(h.raw(batch));
    std::vector<std::uint32_t> replied;
    for (const auto& e : ev) {
        if (const auto* a = std::get_if<Ack>(&e)) replied.push_back(*a->id);
        if (const auto* er = std::get_if<ErrorEvent>(&e)) replied.push_back(*er->id);
    }
    EXPECT_EQ(replied, (std::vector<std::uint32_t>{1, 2, 3, 4, 5, 6, 7}));
}

TEST(Session, RenderSeesSceneBetweenSteps) {
    SessionCore core(toy_trainer(0, 6));
    core.trainer()->set_style_image(style_image());
    core.start();
    Harness h(core);
    h.hello();
    for (int i = 0; i < 3; ++i) {
        core.step();
        h.conn.take_output();
        const auto ev = h.send(cmd(RenderRequest{64, 64, FrameEncoding::raw_rgb8}));
        const auto& f = std::get<FrameEvent>(ev.at(1));
        const auto direct = rasterize(core.scene(), camera_from_pose(core.default_pose(), 64, 64), core.background()).image;
        for (std::size_t k = 0; k < f.payload.size(); ++k) ASSERT_EQ(f.payload[k], to_u8(direct.data[k]));
    }
}

TEST(Session, ViewOnlyRejectsTrainingCommands) {
    SessionCore core(test_support::toy_scene());
    Harness h(core);
    h.hello();
    for (const auto& c : {cmd(SetWeights{1, 1}), cmd(TrainControl{TrainAction::start}), cmd(SetStyle{{1}})}) {
        const auto ev = h.send(c);
        EXPECT_EQ(std::get<ErrorEvent>(ev.at(0)).code, ErrorCode::bad_state);
    }
    const auto dir = test_support::temp_dir("session_snap");
    SessionOptions opts;
    opts.snapshot_dir = dir;
    SessionCore core2(test_support::toy_scene(), opts);
    Harness h2(core2);
    h2.hello();
    const auto ev = h2.send(cmd(TrainControl{TrainAction::snapshot}));
    const std::string path = std::get<Ack>(ev.at(0)).detail["path"];
    EXPECT_EQ(load_scene(path).size(), 9u);
}

TEST(TcpServer, ServesConcurrentClientsAndShutsDownGracefully) {
    const auto scene = test_support::toy_scene();
    SessionCore core(scene);
    TcpServer server(core, "127.0.0.1", 0);
    ASSERT_GT(server.port(), 0);
    server.start();
    std::atomic<bool> stop{false};
    std::thread loop([&] { run_session(core, stop); });

    SocketClient a(server.port()), b(server.port());
    a.send(cmd(Hello{}, 1));
    b.send(cmd(Hello{}, 1));
    EXPECT_EQ(std::get<Ack>(*a.next_event()).detail["gaussians"], 9);
    EXPECT_EQ(std::get<Ack>(*b.next_event()).detail["gaussians"], 9);

    a.send(cmd(RenderRequest{64, 48, FrameEncoding::raw_rgb8}, 2));
    EXPECT_EQ(std::get<Ack>(*a.next_event()).id, 2u);
    const auto frame = std::get<FrameEvent>(*a.next_event());
    const auto direct = rasterize(scene, camera_from_pose(core.default_pose(), 64, 48), Vec3<float>::Zero()).image;
    ASSERT_EQ(frame.payload.size(), direct.data.size());
    for (std::size_t i = 0; i < frame.payload.size(); ++i) ASSERT_EQ(frame.payload[i], to_u8(direct.data[i]));

    // A render queued right before shutdown is still answered, then the close arrives.
    b.send(cmd(RenderRequest{16, 16, FrameEncoding::raw_rgb8}, 3));
    EXPECT_EQ(std::get<Ack>(*b.next_event()).id, 3u);
    stop = true;
    loop.join();
    server.stop();
    std::optional<ws::Frame> f;
    bool closed = false;
    while ((f = b.next(2000)))
        if (f->opcode == ws::Opcode::close) closed = true;
    EXPECT_TRUE(closed);
}

TEST(TcpServer, BindFailureIsReported) {
    SessionCore core(test_support::toy_scene());
    TcpServer first(core, "127.0.0.1", 0);
    EXPECT_THROW(TcpServer(core, "127.0.0.1", first.port()), std::system_error);
}

TEST(TcpServer, PortFromEnvironment) {
    ::setenv(kPortEnv, "9123", 1);
    EXPECT_EQ(default_port(), 9123);
    ::setenv(kPortEnv, "nope", 1);
    EXPECT_THROW(default_port(), InvariantError);
    ::unsetenv(kPortEnv);
    EXPECT_EQ(default_port(), kDefaultPort);
}

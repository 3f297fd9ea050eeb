#pragma once

#include "stylesplat/image.hpp"
#include "stylesplat/rasterizer.hpp"
#include "stylesplat/scene_io.hpp"
#include "stylesplat/server/protocol.hpp"
#include "stylesplat/server/websocket.hpp"
#include "stylesplat/style/trainer.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace stylesplat::server {

enum class RunState { view_only, idle, running, paused, waiting_for_style, finished, failed };

inline const char* state_name(RunState s) {
    static constexpr const char* names[] = {"view_only", "idle", "running", "paused", "waiting_for_style", "finished", "failed"};
    return names[int(s)];
}

struct SessionOptions {
    int status_every = 10;
    int max_preview_side = 1024;
    int max_strikes = 3;
    std::filesystem::path snapshot_dir = "snapshots";
};

using ClientId = std::uint64_t;

/// How the session reaches one client. Both callbacks may be invoked from the
/// training thread and must not call back into the session.
struct ClientHooks {
    std::function<void(const WireMessage&)> send;
    std::function<void(std::uint16_t code, const std::string& reason)> close;
};

/// Owns the trainer (or a fixed scene) and applies client commands strictly
/// between optimizer steps. submit/attach/detach are thread-safe; drain, step
/// and shutdown belong to the single training thread.
class SessionCore {
public:
    SessionCore(style::Trainer trainer, SessionOptions opts = {}) : trainer_(std::move(trainer)), opts_(std::move(opts)) {
        state_ = RunState::idle;
        const auto& views = trainer_->dataset().views;
        const auto& train = trainer_->train_views();
        default_pose_ = pose_from_camera(views[train.empty() ? 0 : train.front()].camera);
    }

    SessionCore(Scene scene, SessionOptions opts = {}, std::optional<CameraPose> default_pose = std::nullopt)
        : view_scene_(std::move(scene)), opts_(std::move(opts)) {
        if (view_scene_.empty()) throw InvariantError("session needs a non-empty scene");
        view_scene_.recompute_bounds();
        state_ = RunState::view_only;
        default_pose_ = default_pose ? *default_pose : overview_pose(view_scene_);
    }

    /// Looks along +z at the bounds center from 1.5 diagonals away.
    static CameraPose overview_pose(const Scene& s) {
        const Vec3<double> c = ((s.bounds.min + s.bounds.max) / 2.0f).cast<double>();
        const double d = std::max(1e-3, double((s.bounds.max - s.bounds.min).norm()));
        CameraPose p;
        p.position = {c.x(), c.y(), c.z() - 1.5 * d};
        return p;
    }

    ClientId attach(ClientHooks hooks) {
        std::lock_guard lock(mu_);
        const ClientId id = next_client_++;
        auto c = std::make_shared<Client>();
        c->hooks = std::move(hooks);
        clients_[id] = std::move(c);
        return id;
    }

    void detach(ClientId id) {
        std::lock_guard lock(mu_);
        if (const auto it = clients_.find(id); it != clients_.end()) {
            it->second->gone = true;
            clients_.erase(it);
        }
    }

    void submit(ClientId id, WireMessage msg) {
        {
            std::lock_guard lock(mu_);
            queue_.push_back({id, std::move(msg)});
        }
        cv_.notify_all();
    }

    /// Blocks until a command is queued, shutdown is requested, or the timeout passes.
    bool wait_for_commands(std::chrono::milliseconds timeout) {
        std::unique_lock lock(mu_);
        return cv_.wait_for(lock, timeout, [&] { return !queue_.empty(); });
    }

    void wake() { cv_.notify_all(); }

    /// Applies every queued command in arrival order. Returns how many ran.
    std::size_t drain() {
        std::deque<Pending> batch;
        {
            std::lock_guard lock(mu_);
            batch.swap(queue_);
        }
        for (auto& p : batch) {
            std::shared_ptr<Client> c;
            {
                std::lock_guard lock(mu_);
                const auto it = clients_.find(p.client);
                if (it != clients_.end()) c = it->second;
            }
            if (!c || c->closed) continue;
            handle(*c, p.msg);
        }
        return batch.size();
    }

    bool should_step() const { return state_ == RunState::running && trainer_ && !trainer_->finished(); }

    /// One optimizer step plus status fan-out. No-op unless running.
    std::optional<style::LossReport> step() {
        if (!should_step()) return std::nullopt;
        if (trainer_->phase() == style::Phase::stylization && !trainer_->has_style()) {
            state_ = RunState::waiting_for_style;
            broadcast(Status{state_name(state_), last_report_});
            return std::nullopt;
        }
        const int phase_before = int(trainer_->phase());
        style::LossReport r;
        try {
            r = trainer_->step();
        } catch (const std::exception& e) {
            state_ = RunState::failed;
            broadcast(ErrorEvent{std::nullopt, ErrorCode::internal, std::string("training stopped: ") + e.what(), {}, {}});
            broadcast(Status{state_name(state_), last_report_});
            return std::nullopt;
        }
        last_report_ = r;
        if (trainer_->finished()) state_ = RunState::finished;
        const bool cadence = opts_.status_every > 0 && r.iteration % opts_.status_every == 0;
        if (cadence || trainer_->finished() || int(trainer_->phase()) != phase_before)
            broadcast(Status{state_name(state_), r});
        return r;
    }

    /// Puts an idle session into the running state without a client command.
    void start() {
        if (state_ == RunState::idle) state_ = RunState::running;
    }

    /// Closes every client with "going away". Call after a final drain.
    void shutdown() {
        std::vector<std::shared_ptr<Client>> all;
        {
            std::lock_guard lock(mu_);
            for (auto& [id, c] : clients_) all.push_back(c);
        }
        for (auto& c : all) close(*c, ws::kCloseGoingAway, "server shutting down");
    }

    RunState state() const { return state_; }
    const Scene& scene() const { return trainer_ ? trainer_->scene() : view_scene_; }
    style::Trainer* trainer() { return trainer_ ? &*trainer_ : nullptr; }
    const SessionOptions& options() const { return opts_; }
    const CameraPose& default_pose() const { return default_pose_; }
    Vec3<float> background() const { return trainer_ ? trainer_->background() : Vec3<float>::Zero(); }

    std::size_t client_count() const {
        std::lock_guard lock(mu_);
        return clients_.size();
    }

private:
    struct Client {
        ClientHooks hooks;
        bool hello = false;
        bool closed = false;
        bool gone = false;
        int strikes = 0;
        std::uint32_t frame_seq = 0;
        std::optional<CameraPose> pose;
    };
    struct Pending {
        ClientId client;
        WireMessage msg;
    };

    void send(Client& c, const ServerEvent& e) {
        if (c.closed) return;
        c.hooks.send(encode_event(e));
    }

    void close(Client& c, std::uint16_t code, const std::string& reason) {
        if (c.closed) return;
        c.closed = true;
        if (c.hooks.close) c.hooks.close(code, reason);
    }

    void broadcast(const ServerEvent& e) {
        std::vector<std::shared_ptr<Client>> all;
        {
            std::lock_guard lock(mu_);
            for (auto& [id, c] : clients_)
                if (c->hello) all.push_back(c);
        }
        const WireMessage w = encode_event(e);
        for (auto& c : all)
            if (!c->closed) c->hooks.send(w);
    }

    void reply_error(Client& c, std::optional<std::uint32_t> id, ErrorCode code, const std::string& message,
                     std::string field = {}, std::optional<std::size_t> offset = std::nullopt) {
        send(c, ErrorEvent{id, code, message, std::move(field), offset});
    }

    void strike(Client& c) {
        if (++c.strikes >= opts_.max_strikes) close(c, ws::kClosePolicy, "too many protocol errors");
    }

    nlohmann::json summary() const {
        const auto& s = scene();
        const auto& b = s.bounds;
        return {{"protocol", kProtocolVersion},
                {"state", state_name(state_)},
                {"gaussians", s.size()},
                {"bounds",
                 {{"min", {double(b.min.x()), double(b.min.y()), double(b.min.z())}},
                  {"max", {double(b.max.x()), double(b.max.y()), double(b.max.z())}}}}};
    }

    void handle(Client& c, const WireMessage& w) {
        ControlMessage m;
        try {
            m = decode_message(w);
        } catch (const ProtocolError& e) {
            reply_error(c, e.id(), e.code(), e.what(), e.field(), e.offset());
            strike(c);
            return;
        }
        if (!c.hello && !std::holds_alternative<Hello>(m.body)) {
            reply_error(c, m.id, ErrorCode::bad_state, "send hello before other commands");
            return;
        }
        try {
            std::visit([&](const auto& cmd) { apply(c, m.id, cmd); }, m.body);
        } catch (const std::exception& e) {
            reply_error(c, m.id, ErrorCode::internal, e.what());
        }
    }

    void ack(Client& c, std::optional<std::uint32_t> id, const char* command, nlohmann::json detail = nlohmann::json::object()) {
        send(c, Ack{id, command, std::move(detail)});
    }

    void apply(Client& c, std::optional<std::uint32_t> id, const Hello& h) {
        if (h.version != kProtocolVersion) {
            reply_error(c, id, ErrorCode::unsupported_version,
                        "server speaks protocol version " + std::to_string(kProtocolVersion) + ", client asked for " +
                            std::to_string(h.version),
                        "version");
            return;
        }
        c.hello = true;
        ack(c, id, "hello", summary());
    }

    void apply(Client& c, std::optional<std::uint32_t> id, const CameraUpdate& u) {
        c.pose = u.pose;
        ack(c, id, "camera_update");
    }

    void apply(Client& c, std::optional<std::uint32_t> id, const SetWeights& w) {
        if (!trainer_) return reply_error(c, id, ErrorCode::bad_state, "no training session");
        trainer_->set_weights({w.w_c, w.w_s});
        ack(c, id, "set_weights", {{"w_c", w.w_c}, {"w_s", w.w_s}});
    }

    void apply(Client& c, std::optional<std::uint32_t> id, const SetStyle& s) {
        if (!trainer_) return reply_error(c, id, ErrorCode::bad_state, "no training session");
        ImageF img;
        try {
            img = decode_image(s.image);
            trainer_->set_style_image(img);
        } catch (const std::exception& e) {
            return reply_error(c, id, ErrorCode::bad_field, std::string("image: ") + e.what(), "image");
        }
        if (state_ == RunState::waiting_for_style) state_ = RunState::running;
        ack(c, id, "set_style", {{"width", img.width}, {"height", img.height}});
    }

    void apply(Client& c, std::optional<std::uint32_t> id, const TrainControl& t) {
        if (t.action == TrainAction::snapshot) {
            char name[48];
            std::snprintf(name, sizeof name, "client_snapshot_%04d.eastsplat", ++snapshots_);
            const auto path = opts_.snapshot_dir / name;
            if (trainer_) trainer_->save_snapshot(path);
            else {
                std::filesystem::create_directories(opts_.snapshot_dir);
                save_scene(view_scene_, path);
            }
            return ack(c, id, "train_control", {{"action", "snapshot"}, {"path", path.string()}});
        }
        if (!trainer_) return reply_error(c, id, ErrorCode::bad_state, "no training session");
        const RunState before = state_;
        switch (t.action) {
            case TrainAction::start:
                if (state_ != RunState::idle) break;
                state_ = RunState::running;
                break;
            case TrainAction::pause:
                if (state_ != RunState::running && state_ != RunState::waiting_for_style) break;
                state_ = RunState::paused;
                break;
            case TrainAction::resume:
                if (state_ != RunState::paused) break;
                state_ = RunState::running;
                break;
            case TrainAction::snapshot: break;
        }
        if (state_ == before)
            return reply_error(c, id, ErrorCode::bad_state,
                               std::string("cannot ") + action_name(t.action) + " while " + state_name(state_));
        ack(c, id, "train_control", {{"action", action_name(t.action)}, {"state", state_name(state_)}});
    }

    void apply(Client& c, std::optional<std::uint32_t> id, const RenderRequest& r) {
        int w = r.width, h = r.height;
        const int side = std::max(w, h);
        if (side > opts_.max_preview_side) {
            const double s = double(opts_.max_preview_side) / side;
            w = std::max(1, int(std::lround(w * s)));
            h = std::max(1, int(std::lround(h * s)));
        }
        const CameraF cam = camera_from_pose(c.pose ? *c.pose : default_pose_, w, h);
        const auto img = rasterize(scene(), cam, background()).image;
        FrameEvent f;
        f.seq = ++c.frame_seq;
        f.width = std::uint16_t(w);
        f.height = std::uint16_t(h);
        f.encoding = r.encoding;
        if (r.encoding == FrameEncoding::png) {
            f.payload = encode_png(img);
        } else {
            f.payload.resize(img.data.size());
            for (std::size_t i = 0; i < img.data.size(); ++i) f.payload[i] = stylesplat::to_u8(img.data[i]);
        }
        ack(c, id, "render_request", {{"seq", f.seq}, {"width", w}, {"height", h}, {"encoding", encoding_name(r.encoding)}});
        send(c, f);
    }

    std::optional<style::Trainer> trainer_;
    Scene view_scene_;
    SessionOptions opts_;
    RunState state_ = RunState::idle;
    CameraPose default_pose_;
    style::LossReport last_report_;
    int snapshots_ = 0;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<ClientId, std::shared_ptr<Client>> clients_;
    std::deque<Pending> queue_;
    ClientId next_client_ = 1;
};

/// One WebSocket peer over any byte transport: feed() the bytes read, send
/// whatever take_output() returns. Handles the upgrade, ping/pong and close,
/// and forwards data messages to the session.
class Connection {
public:
    explicit Connection(SessionCore& core) : core_(core), out_(std::make_shared<Outbox>()) {}
    ~Connection() { detach(); }
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;

    void feed(std::span<const std::uint8_t> bytes) {
        if (out_->is_closed()) return;
        if (!open_) {
            handshake_.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
            std::optional<std::pair<ws::HandshakeRequest, std::size_t>> req;
            try {
                req = ws::parse_handshake(handshake_);
            } catch (const ws::FramingError& e) {
                out_->write_close_raw(ws::bad_request_response(e.what()));
                return;
            }
            if (!req) return;
            out_->write_raw(ws::handshake_response(*req->first.header("sec-websocket-key")));
            open_ = true;
            auto box = out_;
            id_ = core_.attach({[box](const WireMessage& m) { box->write_message(m); },
                                [box](std::uint16_t code, const std::string& reason) { box->write_close(code, reason); }});
            const std::string rest = handshake_.substr(req->second);
            handshake_.clear();
            if (rest.empty()) return;
            decoder_.feed({reinterpret_cast<const std::uint8_t*>(rest.data()), rest.size()});
        } else {
            decoder_.feed(bytes);
        }
        try {
            while (!out_->is_closed()) {
                const std::size_t at = decoder_.consumed();
                auto f = decoder_.next();
                if (!f) break;
                switch (f->opcode) {
                    case ws::Opcode::ping: out_->write_raw_bytes(ws::encode_frame(ws::Opcode::pong, f->payload)); break;
                    case ws::Opcode::pong: break;
                    case ws::Opcode::close: {
                        std::uint16_t code = ws::kCloseNormal;
                        if (f->payload.size() >= 2) code = std::uint16_t(f->payload[0] << 8 | f->payload[1]);
                        out_->write_close(code, {});
                        detach();
                        break;
                    }
                    default:
                        if (auto m = assembler_.push(std::move(*f), at)) core_.submit(*id_, WireMessage{m->binary, std::move(m->payload)});
                }
            }
        } catch (const ws::FramingError& e) {
            out_->write_message(encode_event(ErrorEvent{std::nullopt, ErrorCode::framing, e.what(), {}, e.offset()}));
            out_->write_close(e.close_code(), "framing error");
            detach();
        }
    }

    std::vector<std::uint8_t> take_output() { return out_->take(); }

    /// A close frame (or a rejected handshake) has been queued; nothing more will be sent.
    bool closed() const { return out_->is_closed(); }

    /// Queues a close frame, e.g. on server shutdown.
    void close(std::uint16_t code, const std::string& reason) {
        out_->write_close(code, reason);
        detach();
    }

    std::optional<ClientId> client_id() const { return id_; }

private:
    class Outbox {
    public:
        void write_message(const WireMessage& m) {
            std::lock_guard lock(mu_);
            if (closed_) return;
            const auto f = ws::encode_frame(m.binary ? ws::Opcode::binary : ws::Opcode::text, m.bytes);
            bytes_.insert(bytes_.end(), f.begin(), f.end());
        }
        void write_close(std::uint16_t code, const std::string& reason) {
            std::lock_guard lock(mu_);
            if (closed_) return;
            const auto f = ws::encode_close(code, reason);
            bytes_.insert(bytes_.end(), f.begin(), f.end());
            closed_ = true;
        }
        void write_raw(const std::string& s) {
            std::lock_guard lock(mu_);
            if (!closed_) bytes_.insert(bytes_.end(), s.begin(), s.end());
        }
        void write_raw_bytes(const std::vector<std::uint8_t>& b) {
            std::lock_guard lock(mu_);
            if (!closed_) bytes_.insert(bytes_.end(), b.begin(), b.end());
        }
        void write_close_raw(const std::string& s) {
            write_raw(s);
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        std::vector<std::uint8_t> take() {
            std::lock_guard lock(mu_);
            return std::exchange(bytes_, {});
        }
        bool is_closed() const {
            std::lock_guard lock(mu_);
            return closed_;
        }

    private:
        mutable std::mutex mu_;
        std::vector<std::uint8_t> bytes_;
        bool closed_ = false;
    };

    void detach() {
        if (id_) core_.detach(*id_);
    }

    SessionCore& core_;
    std::shared_ptr<Outbox> out_;
    std::string handshake_;
    bool open_ = false;
    std::optional<ClientId> id_;
    ws::FrameDecoder decoder_;
    ws::MessageAssembler assembler_;
};

}  // namespace stylesplat::server

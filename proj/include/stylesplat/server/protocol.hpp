#pragma once

// Control protocol version 1. Commands and events travel as JSON text
// messages, except set_style (client binary) and frame (server binary).

#include "stylesplat/style/trainer.hpp"

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace stylesplat::server {

inline constexpr int kProtocolVersion = 1;
inline constexpr int kMaxRequestSide = 8192;

enum class ErrorCode { unknown_type, bad_field, bad_json, framing, bad_state, internal, unsupported_version };

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::unknown_type: return "UNKNOWN_TYPE";
        case ErrorCode::bad_field: return "BAD_FIELD";
        case ErrorCode::bad_json: return "BAD_JSON";
        case ErrorCode::framing: return "FRAMING";
        case ErrorCode::bad_state: return "BAD_STATE";
        case ErrorCode::internal: return "INTERNAL";
        case ErrorCode::unsupported_version: return "UNSUPPORTED_VERSION";
    }
    return "INTERNAL";
}

inline std::optional<ErrorCode> parse_error_code(std::string_view s) {
    for (auto c : {ErrorCode::unknown_type, ErrorCode::bad_field, ErrorCode::bad_json, ErrorCode::framing,
                   ErrorCode::bad_state, ErrorCode::internal, ErrorCode::unsupported_version})
        if (s == error_code_name(c)) return c;
    return std::nullopt;
}

/// A message that cannot be decoded. `field` names the offending JSON field
/// (dotted path) and `offset` the byte where binary data ran out or went bad.
class ProtocolError : public std::runtime_error {
public:
    ProtocolError(ErrorCode code, const std::string& what, std::string field = {},
                  std::optional<std::size_t> offset = std::nullopt, std::optional<std::uint32_t> id = std::nullopt)
        : std::runtime_error(what), code_(code), field_(std::move(field)), offset_(offset), id_(id) {}
    ErrorCode code() const noexcept { return code_; }
    const std::string& field() const noexcept { return field_; }
    std::optional<std::size_t> offset() const noexcept { return offset_; }
    /// Command id, when it could be read before the failure.
    std::optional<std::uint32_t> id() const noexcept { return id_; }

private:
    ErrorCode code_;
    std::string field_;
    std::optional<std::size_t> offset_;
    std::optional<std::uint32_t> id_;
};

enum class FrameEncoding : std::uint8_t { raw_rgb8 = 0, png = 1 };

inline const char* encoding_name(FrameEncoding e) { return e == FrameEncoding::png ? "png" : "raw"; }

/// Camera center in world space, camera-to-world rotation (w, x, y, z) in the
/// COLMAP convention (x right, y down, z forward), vertical field of view in degrees.
struct CameraPose {
    std::array<double, 3> position{0, 0, 0};
    std::array<double, 4> quaternion{1, 0, 0, 0};
    double fov_y_deg = 60.0;
    bool operator==(const CameraPose&) const = default;
};

/// Pinhole camera of size w x h for a pose, principal point at the center.
inline CameraF camera_from_pose(const CameraPose& pose, int width, int height) {
    const auto& q = pose.quaternion;
    const Vec4<double> qn = Vec4<double>(q[0], q[1], q[2], q[3]).normalized();
    const Mat3<double> cam_to_world = quat_to_matrix<double>(qn);
    Camera<double> c;
    c.width = width;
    c.height = height;
    c.fy = (height / 2.0) / std::tan(pose.fov_y_deg * std::numbers::pi / 360.0);
    c.fx = c.fy;
    c.cx = width / 2.0;
    c.cy = height / 2.0;
    c.rotation = cam_to_world.transpose();
    c.translation = -c.rotation * Vec3<double>(pose.position[0], pose.position[1], pose.position[2]);
    return c.cast<float>();
}

/// Inverse of camera_from_pose for cameras with square pixels.
inline CameraPose pose_from_camera(const CameraF& cam) {
    const Camera<double> c = cam.cast<double>();
    const Eigen::Quaterniond q(Mat3<double>(c.rotation.transpose()));
    const Vec3<double> center = c.center();
    CameraPose p;
    p.position = {center.x(), center.y(), center.z()};
    p.quaternion = {q.w(), q.x(), q.y(), q.z()};
    p.fov_y_deg = 2.0 * std::atan((c.height / 2.0) / c.fy) * 180.0 / std::numbers::pi;
    return p;
}

struct Hello {
    int version = kProtocolVersion;
    std::string client;
    bool operator==(const Hello&) const = default;
};
struct CameraUpdate {
    CameraPose pose;
    bool operator==(const CameraUpdate&) const = default;
};
struct SetWeights {
    double w_c = 1.0, w_s = 10.0;
    bool operator==(const SetWeights&) const = default;
};
struct SetStyle {
    std::vector<std::uint8_t> image;  // PNG or JPEG file bytes
    bool operator==(const SetStyle&) const = default;
};
enum class TrainAction { start, pause, resume, snapshot };
struct TrainControl {
    TrainAction action = TrainAction::start;
    bool operator==(const TrainControl&) const = default;
};
struct RenderRequest {
    int width = 256, height = 256;
    FrameEncoding encoding = FrameEncoding::png;
    bool operator==(const RenderRequest&) const = default;
};

using Command = std::variant<Hello, CameraUpdate, SetWeights, SetStyle, TrainControl, RenderRequest>;

struct ControlMessage {
    std::optional<std::uint32_t> id;
    Command body;
    bool operator==(const ControlMessage&) const = default;
};

inline const char* command_name(const Command& c) {
    static constexpr const char* names[] = {"hello", "camera_update", "set_weights", "set_style", "train_control", "render_request"};
    return names[c.index()];
}

inline const char* action_name(TrainAction a) {
    static constexpr const char* names[] = {"start", "pause", "resume", "snapshot"};
    return names[int(a)];
}

struct Ack {
    std::optional<std::uint32_t> id;
    std::string command;
    nlohmann::json detail = nlohmann::json::object();
    bool operator==(const Ack&) const = default;
};
struct ErrorEvent {
    std::optional<std::uint32_t> id;
    ErrorCode code = ErrorCode::internal;
    std::string message;
    std::string field;
    std::optional<std::size_t> offset;
    bool operator==(const ErrorEvent&) const = default;
};
struct Status {
    std::string state;
    style::LossReport report;
    bool operator==(const Status&) const = default;
};
struct FrameEvent {
    std::uint32_t seq = 0;
    std::uint16_t width = 0, height = 0;
    FrameEncoding encoding = FrameEncoding::png;
    std::vector<std::uint8_t> payload;
    bool operator==(const FrameEvent&) const = default;
};

using ServerEvent = std::variant<Ack, ErrorEvent, Status, FrameEvent>;

/// One WebSocket data message.
struct WireMessage {
    bool binary = false;
    std::vector<std::uint8_t> bytes;

    std::string_view text() const { return {reinterpret_cast<const char*>(bytes.data()), bytes.size()}; }
    static WireMessage from_text(std::string_view s) { return {false, {s.begin(), s.end()}}; }
    bool operator==(const WireMessage&) const = default;
};

inline constexpr std::array<char, 4> kFrameMagic{'E', 'S', 'F', '1'};
inline constexpr std::array<char, 4> kUploadMagic{'E', 'S', 'U', '1'};
inline constexpr std::size_t kFrameHeaderBytes = 16;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(std::uint8_t(v));
    out.push_back(std::uint8_t(v >> 8));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t get_u16(const std::uint8_t* p) { return std::uint16_t(p[0] | p[1] << 8); }

/// Strict reader over a JSON object: every field must be consumed.
class Fields {
public:
    Fields(const nlohmann::json& obj, std::string prefix, std::optional<std::uint32_t> id)
        : obj_(obj), prefix_(std::move(prefix)), id_(id) {}

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ProtocolError(ErrorCode::bad_field, path(key) + ": " + what, path(key), std::nullopt, id_);
    }

    const nlohmann::json* find(const std::string& key) {
        const auto it = obj_.find(key);
        if (it == obj_.end()) return nullptr;
        used_.insert(key);
        return &*it;
    }
    const nlohmann::json& need(const std::string& key) {
        const auto* v = find(key);
        if (!v) fail(key, "required field missing");
        return *v;
    }

    double number(const std::string& key) {
        const auto& v = need(key);
        if (!v.is_number()) fail(key, "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) fail(key, "expected a finite number");
        return d;
    }
    long long integer(const std::string& key, long long lo, long long hi) {
        const auto& v = need(key);
        if (!v.is_number_integer()) fail(key, "expected an integer");
        if (v.is_number_unsigned() && v.get<std::uint64_t>() > std::uint64_t(std::numeric_limits<long long>::max()))
            fail(key, "out of range");
        const long long n = v.get<long long>();
        if (n < lo || n > hi) fail(key, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return n;
    }
    std::string string(const std::string& key) {
        const auto& v = need(key);
        if (!v.is_string()) fail(key, "expected a string");
        return v.get<std::string>();
    }
    template <std::size_t N>
    std::array<double, N> numbers(const std::string& key) {
        const auto& v = need(key);
        if (!v.is_array() || v.size() != N) fail(key, "expected an array of " + std::to_string(N) + " numbers");
        std::array<double, N> out{};
        for (std::size_t i = 0; i < N; ++i) {
            if (!v[i].is_number()) fail(key, "expected an array of " + std::to_string(N) + " numbers");
            out[i] = v[i].get<double>();
            if (!std::isfinite(out[i])) fail(key, "entries must be finite");
        }
        return out;
    }
    Fields object(const std::string& key) {
        const auto& v = need(key);
        if (!v.is_object()) fail(key, "expected an object");
        return Fields(v, path(key), id_);
    }
    void done() const {
        for (const auto& [k, v] : obj_.items())
            if (!used_.count(k)) fail(k, "unknown field");
    }

private:
    std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

    const nlohmann::json& obj_;
    std::string prefix_;
    std::optional<std::uint32_t> id_;
    std::set<std::string> used_;
};

inline nlohmann::json parse_object(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const std::size_t at = e.byte > 0 ? e.byte - 1 : 0;
        throw ProtocolError(ErrorCode::bad_json, "invalid JSON at byte " + std::to_string(at), {}, at);
    }
    if (!j.is_object()) throw ProtocolError(ErrorCode::bad_json, "message must be a JSON object");
    return j;
}

inline std::optional<std::uint32_t> read_id(Fields& f) {
    if (!f.find("id")) return std::nullopt;
    return std::uint32_t(f.integer("id", 0, std::numeric_limits<std::uint32_t>::max()));
}

inline nlohmann::json pose_json(const CameraPose& p) {
    return {{"position", p.position}, {"quaternion", p.quaternion}, {"fov_y", p.fov_y_deg}};
}

inline CameraPose read_pose(Fields f) {
    CameraPose p;
    p.position = f.numbers<3>("position");
    p.quaternion = f.numbers<4>("quaternion");
    const double n2 = p.quaternion[0] * p.quaternion[0] + p.quaternion[1] * p.quaternion[1] +
                      p.quaternion[2] * p.quaternion[2] + p.quaternion[3] * p.quaternion[3];
    if (!(n2 > 1e-12)) f.fail("quaternion", "must have non-zero norm");
    p.fov_y_deg = f.number("fov_y");
    if (!(p.fov_y_deg > 0.0 && p.fov_y_deg < 180.0)) f.fail("fov_y", "must be in (0, 180) degrees");
    f.done();
    return p;
}

inline Command read_command(const std::string& type, Fields& f, std::optional<std::uint32_t> id) {
    if (type == "hello") {
        Hello h;
        h.version = int(f.integer("version", 0, std::numeric_limits<int>::max()));
        if (f.find("client")) h.client = f.string("client");
        return h;
    }
    if (type == "camera_update") return CameraUpdate{read_pose(f.object("pose"))};
    if (type == "set_weights") {
        SetWeights w;
        w.w_c = f.number("w_c");
        w.w_s = f.number("w_s");
        if (w.w_c < 0) f.fail("w_c", "must be >= 0");
        if (w.w_s < 0) f.fail("w_s", "must be >= 0");
        if (w.w_c == 0 && w.w_s == 0) f.fail("w_s", "w_c and w_s cannot both be zero");
        return w;
    }
    if (type == "train_control") {
        const std::string a = f.string("action");
        for (auto act : {TrainAction::start, TrainAction::pause, TrainAction::resume, TrainAction::snapshot})
            if (a == action_name(act)) return TrainControl{act};
        f.fail("action", "must be one of start, pause, resume, snapshot");
    }
    if (type == "render_request") {
        RenderRequest r;
        r.width = int(f.integer("width", 1, kMaxRequestSide));
        r.height = int(f.integer("height", 1, kMaxRequestSide));
        if (f.find("encoding")) {
            const std::string e = f.string("encoding");
            if (e == "png") r.encoding = FrameEncoding::png;
            else if (e == "raw") r.encoding = FrameEncoding::raw_rgb8;
            else f.fail("encoding", "must be png or raw");
        }
        return r;
    }
    if (type == "set_style") f.fail("type", "set_style must be sent as a binary message");
    throw ProtocolError(ErrorCode::unknown_type, "unknown message type '" + type + "'", "type", std::nullopt, id);
}

inline std::string read_type(Fields& f) {
    const auto* t = f.find("type");
    if (!t) throw ProtocolError(ErrorCode::bad_field, "type: required field missing", "type");
    if (!t->is_string()) throw ProtocolError(ErrorCode::bad_field, "type: expected a string", "type");
    return t->get<std::string>();
}

}  // namespace detail

/// Encodes a client command. set_style becomes a binary message: magic
/// "ESU1", u32 LE header length, JSON header, image bytes.
inline WireMessage encode_message(const ControlMessage& m) {
    nlohmann::json j{{"type", command_name(m.body)}};
    if (m.id) j["id"] = *m.id;
    std::visit(
        [&](const auto& c) {
            using C = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<C, Hello>) {
                j["version"] = c.version;
                if (!c.client.empty()) j["client"] = c.client;
            } else if constexpr (std::is_same_v<C, CameraUpdate>) {
                j["pose"] = detail::pose_json(c.pose);
            } else if constexpr (std::is_same_v<C, SetWeights>) {
                j["w_c"] = c.w_c;
                j["w_s"] = c.w_s;
            } else if constexpr (std::is_same_v<C, TrainControl>) {
                j["action"] = action_name(c.action);
            } else if constexpr (std::is_same_v<C, RenderRequest>) {
                j["width"] = c.width;
                j["height"] = c.height;
                j["encoding"] = encoding_name(c.encoding);
            }
        },
        m.body);
    if (const auto* s = std::get_if<SetStyle>(&m.body)) {
        const std::string header = j.dump();
        WireMessage w{true, {kUploadMagic.begin(), kUploadMagic.end()}};
        detail::put_u32(w.bytes, std::uint32_t(header.size()));
        w.bytes.insert(w.bytes.end(), header.begin(), header.end());
        w.bytes.insert(w.bytes.end(), s->image.begin(), s->image.end());
        return w;
    }
    return WireMessage::from_text(j.dump());
}

inline ControlMessage decode_message(bool binary, std::span<const std::uint8_t> bytes) {
    if (binary) {
        if (bytes.size() < 8) throw ProtocolError(ErrorCode::framing, "binary message shorter than its 8-byte prefix", {}, bytes.size());
        if (std::memcmp(bytes.data(), kUploadMagic.data(), 4) != 0)
            throw ProtocolError(ErrorCode::framing, "binary message does not start with ESU1", {}, 0);
        const std::uint32_t hlen = detail::get_u32(bytes.data() + 4);
        if (std::size_t(hlen) > bytes.size() - 8)
            throw ProtocolError(ErrorCode::framing, "upload header runs past the end of the message", {}, bytes.size());
        const auto j = detail::parse_object({reinterpret_cast<const char*>(bytes.data() + 8), hlen});
        detail::Fields f(j, {}, std::nullopt);
        const std::string type = detail::read_type(f);
        const auto id = detail::read_id(f);
        if (type != "set_style")
            throw ProtocolError(ErrorCode::unknown_type, "binary messages carry set_style only, got '" + type + "'", "type", std::nullopt, id);
        f.done();
        SetStyle s;
        s.image.assign(bytes.begin() + 8 + hlen, bytes.end());
        if (s.image.empty()) throw ProtocolError(ErrorCode::bad_field, "image: upload has no image bytes", "image", 8 + std::size_t(hlen), id);
        return {id, std::move(s)};
    }
    const auto j = detail::parse_object({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
    detail::Fields head(j, {}, std::nullopt);
    const std::string type = detail::read_type(head);
    const auto id = detail::read_id(head);
    detail::Fields body(j, {}, id);
    body.find("type");
    body.find("id");
    Command c = detail::read_command(type, body, id);
    body.done();
    return {id, std::move(c)};
}

inline ControlMessage decode_message(const WireMessage& w) { return decode_message(w.binary, w.bytes); }

/// Encodes a server event. frame becomes a binary message with the 16-byte
/// header (magic "ESF1", u32 seq, u16 width, u16 height, u8 encoding, 3 zero bytes).
inline WireMessage encode_event(const ServerEvent& e) {
    if (const auto* f = std::get_if<FrameEvent>(&e)) {
        WireMessage w{true, {kFrameMagic.begin(), kFrameMagic.end()}};
        w.bytes.reserve(kFrameHeaderBytes + f->payload.size());
        detail::put_u32(w.bytes, f->seq);
        detail::put_u16(w.bytes, f->width);
        detail::put_u16(w.bytes, f->height);
        w.bytes.push_back(static_cast<std::uint8_t>(f->encoding));
        w.bytes.insert(w.bytes.end(), 3, 0);
        w.bytes.insert(w.bytes.end(), f->payload.begin(), f->payload.end());
        return w;
    }
    nlohmann::json j;
    if (const auto* a = std::get_if<Ack>(&e)) {
        j = {{"type", "ack"}, {"command", a->command}, {"detail", a->detail}};
        if (a->id) j["id"] = *a->id;
    } else if (const auto* er = std::get_if<ErrorEvent>(&e)) {
        j = {{"type", "error"}, {"code", error_code_name(er->code)}, {"message", er->message}};
        if (er->id) j["id"] = *er->id;
        if (!er->field.empty()) j["field"] = er->field;
        if (er->offset) j["offset"] = *er->offset;
    } else {
        const auto& s = std::get<Status>(e);
        j = {{"type", "status"}, {"state", s.state}, {"report", s.report.to_json()}};
    }
    return WireMessage::from_text(j.dump());
}

inline ServerEvent decode_event(bool binary, std::span<const std::uint8_t> bytes) {
    if (binary) {
        if (bytes.size() < kFrameHeaderBytes)
            throw ProtocolError(ErrorCode::framing, "frame shorter than its 16-byte header", {}, bytes.size());
        if (std::memcmp(bytes.data(), kFrameMagic.data(), 4) != 0)
            throw ProtocolError(ErrorCode::framing, "frame does not start with ESF1", {}, 0);
        FrameEvent f;
        f.seq = detail::get_u32(bytes.data() + 4);
        f.width = detail::get_u16(bytes.data() + 8);
        f.height = detail::get_u16(bytes.data() + 10);
        if (bytes[12] > 1) throw ProtocolError(ErrorCode::framing, "unknown frame encoding", {}, 12);
        f.encoding = static_cast<FrameEncoding>(bytes[12]);
        for (std::size_t i = 13; i < 16; ++i)
            if (bytes[i] != 0) throw ProtocolError(ErrorCode::framing, "reserved header bytes must be zero", {}, i);
        f.payload.assign(bytes.begin() + kFrameHeaderBytes, bytes.end());
        if (f.encoding == FrameEncoding::raw_rgb8 && f.payload.size() != std::size_t(f.width) * f.height * 3)
            throw ProtocolError(ErrorCode::framing, "raw frame payload does not match width x height x 3", {},
                                std::min(bytes.size(), kFrameHeaderBytes + std::size_t(f.width) * f.height * 3));
        return f;
    }
    const auto j = detail::parse_object({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
    detail::Fields f(j, {}, std::nullopt);
    const std::string type = detail::read_type(f);
    std::optional<std::uint32_t> id;
    if (type == "ack" || type == "error") id = detail::read_id(f);
    if (type == "ack") {
        Ack a;
        a.id = id;
        a.command = f.string("command");
        a.detail = f.need("detail");
        if (!a.detail.is_object()) f.fail("detail", "expected an object");
        f.done();
        return a;
    }
    if (type == "error") {
        ErrorEvent e;
        e.id = id;
        const auto code = parse_error_code(f.string("code"));
        if (!code) f.fail("code", "unknown error code");
        e.code = *code;
        e.message = f.string("message");
        if (f.find("field")) e.field = f.string("field");
        if (f.find("offset")) e.offset = std::size_t(f.integer("offset", 0, std::numeric_limits<long long>::max()));
        f.done();
        return e;
    }
    if (type == "status") {
        Status s;
        s.state = f.string("state");
        auto r = f.object("report");
        s.report.phase = int(r.integer("phase", 1, 3));
        s.report.iteration = int(r.integer("iteration", 0, std::numeric_limits<int>::max()));
        s.report.l_content = r.number("l_content");
        s.report.l_style = r.number("l_style");
        s.report.l_total = r.number("l_total");
        s.report.l_photometric = r.number("l_photometric");
        s.report.wall_ms = r.number("wall_ms");
        s.report.gaussians = std::size_t(r.integer("gaussians", 0, std::numeric_limits<long long>::max()));
        r.done();
        f.done();
        return s;
    }
    throw ProtocolError(ErrorCode::unknown_type, "unknown event type '" + type + "'", "type");
}

inline ServerEvent decode_event(const WireMessage& w) { return decode_event(w.binary, w.bytes); }

}  // namespace stylesplat::server

#pragma once

// Minimal RFC 6455 server side: upgrade handshake, frame encoding, and an
// incremental frame decoder. No extensions, no subprotocols.

#include "stylesplat/error.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stylesplat::server::ws {

enum class Opcode : std::uint8_t { continuation = 0x0, text = 0x1, binary = 0x2, close = 0x8, ping = 0x9, pong = 0xA };

inline bool is_control(Opcode op) { return (static_cast<std::uint8_t>(op) & 0x8) != 0; }

inline constexpr std::uint16_t kCloseNormal = 1000;
inline constexpr std::uint16_t kCloseGoingAway = 1001;
inline constexpr std::uint16_t kCloseProtocolError = 1002;
inline constexpr std::uint16_t kClosePolicy = 1008;
inline constexpr std::uint16_t kCloseTooBig = 1009;

/// Frame or handshake bytes that break the protocol. offset() counts from the
/// first byte the decoder was fed.
class FramingError : public ParseError {
public:
    FramingError(const std::string& what, std::size_t offset, std::uint16_t close_code = kCloseProtocolError)
        : ParseError(what, offset), close_code_(close_code) {}
    std::uint16_t close_code() const noexcept { return close_code_; }

private:
    std::uint16_t close_code_;
};

inline std::string base64(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), int(bytes.size()));
    out.resize(std::size_t(n));
    return out;
}

/// Sec-WebSocket-Accept for a client key.
inline std::string accept_key(std::string_view client_key) {
    static constexpr std::string_view guid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
    std::string s(client_key);
    s += guid;
    std::array<std::uint8_t, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(s.data(), s.size(), md.data(), &len, EVP_sha1(), nullptr) != 1)
        throw std::runtime_error("SHA-1 digest failed");
    return base64(std::span<const std::uint8_t>(md.data(), len));
}

struct HandshakeRequest {
    std::string method, path;
    std::map<std::string, std::string> headers;  // lower-case names

    const std::string* header(const std::string& name) const {
        const auto it = headers.find(name);
        return it == headers.end() ? nullptr : &it->second;
    }
};

namespace detail {

inline std::string lower(std::string s) {
    for (char& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return std::string(s);
}

inline bool has_token(const std::string& value, std::string_view token) {
    std::size_t start = 0;
    const std::string v = lower(value);
    while (start <= v.size()) {
        const std::size_t end = std::min(v.find(',', start), v.size());
        if (trim(std::string_view(v).substr(start, end - start)) == token) return true;
        start = end + 1;
    }
    return false;
}

}  // namespace detail

inline constexpr std::size_t kMaxHandshakeBytes = 16 * 1024;

/// Parses an HTTP upgrade request from the front of `bytes`. Returns the
/// request and the number of bytes it used, or nothing if the header block is
/// still incomplete.
inline std::optional<std::pair<HandshakeRequest, std::size_t>> parse_handshake(std::string_view bytes) {
    const std::size_t end = bytes.find("\r\n\r\n");
    if (end == std::string_view::npos) {
        if (bytes.size() > kMaxHandshakeBytes) throw FramingError("handshake header too large", kMaxHandshakeBytes);
        return std::nullopt;
    }
    HandshakeRequest req;
    std::size_t pos = 0;
    bool first = true;
    while (pos < end) {
        const std::size_t eol = std::min(bytes.find("\r\n", pos), end);
        const std::string_view line = bytes.substr(pos, eol - pos);
        if (first) {
            const std::size_t a = line.find(' '), b = line.rfind(' ');
            if (a == std::string_view::npos || b == a || line.substr(b + 1).substr(0, 5) != "HTTP/")
                throw FramingError("malformed request line", pos);
            req.method = std::string(line.substr(0, a));
            req.path = std::string(line.substr(a + 1, b - a - 1));
            first = false;
        } else {
            const std::size_t colon = line.find(':');
            if (colon == std::string_view::npos || colon == 0) throw FramingError("malformed header line", pos);
            req.headers[detail::lower(detail::trim(line.substr(0, colon)))] = detail::trim(line.substr(colon + 1));
        }
        pos = eol + 2;
    }
    if (req.method != "GET") throw FramingError("upgrade must use GET", 0);
    const auto* upgrade = req.header("upgrade");
    const auto* connection = req.header("connection");
    const auto* key = req.header("sec-websocket-key");
    const auto* version = req.header("sec-websocket-version");
    if (!upgrade || detail::lower(*upgrade) != "websocket") throw FramingError("missing Upgrade: websocket", 0);
    if (!connection || !detail::has_token(*connection, "upgrade")) throw FramingError("missing Connection: Upgrade", 0);
    if (!key || key->size() != 24) throw FramingError("missing or malformed Sec-WebSocket-Key", 0);
    if (!version || *version != "13") throw FramingError("unsupported Sec-WebSocket-Version", 0);
    return std::make_pair(std::move(req), end + 4);
}

inline std::string handshake_response(std::string_view client_key) {
    return "HTTP/1.1 101 Switching Protocols\r\n"
           "Upgrade: websocket\r\n"
           "Connection: Upgrade\r\n"
           "Sec-WebSocket-Accept: " +
           accept_key(client_key) + "\r\n\r\n";
}

inline std::string bad_request_response(std::string_view reason) {
    const std::string body(reason);
    return "HTTP/1.1 400 Bad Request\r\nContent-Type: text/plain\r\nContent-Length: " + std::to_string(body.size()) +
           "\r\nConnection: close\r\n\r\n" + body;
}

/// One frame on the wire. Servers send unmasked; clients must mask.
inline std::vector<std::uint8_t> encode_frame(Opcode op, std::span<const std::uint8_t> payload, bool fin = true,
                                              std::optional<std::array<std::uint8_t, 4>> mask = std::nullopt) {
    std::vector<std::uint8_t> out;
    out.reserve(payload.size() + 14);
    out.push_back(std::uint8_t((fin ? 0x80 : 0) | static_cast<std::uint8_t>(op)));
    const std::uint8_t mbit = mask ? 0x80 : 0;
    const std::size_t n = payload.size();
    if (n < 126) {
        out.push_back(std::uint8_t(mbit | n));
    } else if (n <= 0xFFFF) {
        out.push_back(std::uint8_t(mbit | 126));
        out.push_back(std::uint8_t(n >> 8));
        out.push_back(std::uint8_t(n));
    } else {
        out.push_back(std::uint8_t(mbit | 127));
        for (int s = 56; s >= 0; s -= 8) out.push_back(std::uint8_t(std::uint64_t(n) >> s));
    }
    if (mask) out.insert(out.end(), mask->begin(), mask->end());
    const std::size_t at = out.size();
    out.insert(out.end(), payload.begin(), payload.end());
    if (mask)
        for (std::size_t i = 0; i < n; ++i) out[at + i] ^= (*mask)[i % 4];
    return out;
}

inline std::vector<std::uint8_t> encode_close(std::uint16_t code, std::string_view reason = {}) {
    std::vector<std::uint8_t> p{std::uint8_t(code >> 8), std::uint8_t(code)};
    p.insert(p.end(), reason.begin(), reason.begin() + std::min<std::size_t>(reason.size(), 123));
    return encode_frame(Opcode::close, p);
}

struct Frame {
    bool fin = true;
    Opcode opcode = Opcode::text;
    std::vector<std::uint8_t> payload;
};

/// A complete data message after reassembly of fragments.
struct Message {
    bool binary = false;
    std::vector<std::uint8_t> payload;
};

/// Incremental decoder for client-to-server frames. Feed arbitrary chunks and
/// pull frames out; throws FramingError on anything RFC 6455 forbids.
class FrameDecoder {
public:
    explicit FrameDecoder(std::size_t max_payload = 32u << 20, bool require_mask = true)
        : max_payload_(max_payload), require_mask_(require_mask) {}

    void feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

    std::optional<Frame> next() {
        const std::size_t avail = buf_.size() - pos_;
        if (avail < 2) return std::nullopt;
        const std::uint8_t* p = buf_.data() + pos_;
        const std::size_t base = consumed_;
        if (p[0] & 0x70) throw FramingError("reserved bits set", base);
        const auto op = static_cast<Opcode>(p[0] & 0x0F);
        switch (op) {
            case Opcode::continuation:
            case Opcode::text:
            case Opcode::binary:
            case Opcode::close:
            case Opcode::ping:
            case Opcode::pong: break;
            default: throw FramingError("unknown opcode", base);
        }
        const bool fin = p[0] & 0x80;
        const bool masked = p[1] & 0x80;
        if (require_mask_ && !masked) throw FramingError("client frame is not masked", base + 1);
        std::uint64_t len = p[1] & 0x7F;
        std::size_t header = 2;
        if (is_control(op) && (len > 125 || !fin)) throw FramingError("invalid control frame", base + 1);
        if (len == 126) {
            if (avail < 4) return std::nullopt;
            len = (std::uint64_t(p[2]) << 8) | p[3];
            header = 4;
        } else if (len == 127) {
            if (avail < 10) return std::nullopt;
            len = 0;
            for (int i = 0; i < 8; ++i) len = (len << 8) | p[2 + i];
            if (len >> 63) throw FramingError("payload length has its top bit set", base + 2);
            header = 10;
        }
        if (len > max_payload_) throw FramingError("frame payload too large", base + 2, kCloseTooBig);
        const std::size_t mask_at = header;
        if (masked) header += 4;
        if (avail < header + len) return std::nullopt;

        Frame f;
        f.fin = fin;
        f.opcode = op;
        f.payload.assign(p + header, p + header + len);
        if (masked)
            for (std::size_t i = 0; i < f.payload.size(); ++i) f.payload[i] ^= p[mask_at + i % 4];
        pos_ += header + len;
        consumed_ += header + len;
        if (pos_ > 4096 && pos_ * 2 > buf_.size()) {
            buf_.erase(buf_.begin(), buf_.begin() + std::ptrdiff_t(pos_));
            pos_ = 0;
        }
        return f;
    }

    /// Bytes taken out as complete frames so far.
    std::size_t consumed() const { return consumed_; }

private:
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0, consumed_ = 0;
    std::size_t max_payload_;
    bool require_mask_;
};

/// Joins fragmented data frames. push() returns a message once the final
/// fragment arrives; control frames must be handled by the caller.
class MessageAssembler {
public:
    explicit MessageAssembler(std::size_t max_message = 32u << 20) : max_message_(max_message) {}

    std::optional<Message> push(Frame&& f, std::size_t offset) {
        if (f.opcode == Opcode::continuation) {
            if (!active_) throw FramingError("continuation without a started message", offset);
        } else {
            if (active_) throw FramingError("new data frame inside a fragmented message", offset);
            active_ = true;
            msg_ = Message{f.opcode == Opcode::binary, {}};
        }
        if (msg_.payload.size() + f.payload.size() > max_message_)
            throw FramingError("message too large", offset, kCloseTooBig);
        msg_.payload.insert(msg_.payload.end(), f.payload.begin(), f.payload.end());
        if (!f.fin) return std::nullopt;
        active_ = false;
        return std::move(msg_);
    }

private:
    bool active_ = false;
    Message msg_;
    std::size_t max_message_;
};

}  // namespace stylesplat::server::ws

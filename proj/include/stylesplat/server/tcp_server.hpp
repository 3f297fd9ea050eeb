#pragma once

// POSIX TCP transport for SessionCore: one accept thread, one thread per client.

#include "stylesplat/server/session.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstdlib>
#include <list>
#include <mutex>
#include <string>
#include <system_error>
#include <thread>

namespace stylesplat::server {

inline constexpr std::uint16_t kDefaultPort = 8765;
inline constexpr const char* kPortEnv = "STYLESPLAT_PORT";

/// Port from the environment, or the default when unset. Throws on garbage.
inline std::uint16_t default_port() {
    const char* env = std::getenv(kPortEnv);
    if (!env || !*env) return kDefaultPort;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 0 || v > 65535) throw InvariantError(std::string(kPortEnv) + " is not a port number: " + env);
    return std::uint16_t(v);
}

class TcpServer {
public:
    /// Binds and listens immediately; port 0 picks a free port. Throws std::system_error if the address is not bindable.
    TcpServer(SessionCore& core, const std::string& host, std::uint16_t port) : core_(core) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        hints.ai_flags = AI_PASSIVE;
        addrinfo* res = nullptr;
        const std::string service = std::to_string(port);
        if (const int rc = getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res); rc != 0)
            throw std::system_error(std::make_error_code(std::errc::invalid_argument), "resolve " + host + ": " + gai_strerror(rc));
        int err = 0;
        for (addrinfo* a = res; a; a = a->ai_next) {
            const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
            if (fd < 0) {
                err = errno;
                continue;
            }
            const int one = 1;
            ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
            if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
                listen_fd_ = fd;
                break;
            }
            err = errno;
            ::close(fd);
        }
        freeaddrinfo(res);
        if (listen_fd_ < 0) throw std::system_error(err, std::generic_category(), "bind " + host + ":" + service);
        sockaddr_storage addr{};
        socklen_t len = sizeof addr;
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                                  : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    }

    ~TcpServer() { stop(); }
    TcpServer(const TcpServer&) = delete;
    TcpServer& operator=(const TcpServer&) = delete;

    std::uint16_t port() const { return port_; }

    void start() {
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    /// Stops accepting, sends "going away" to every client, flushes and joins.
    void stop() {
        if (stopping_.exchange(true)) return;
        if (accept_thread_.joinable()) accept_thread_.join();
        if (listen_fd_ >= 0) ::close(listen_fd_);
        listen_fd_ = -1;
        std::lock_guard lock(peers_mu_);
        for (auto& p : peers_)
            if (p.thread.joinable()) p.thread.join();
        peers_.clear();
    }

private:
    struct Peer {
        std::thread thread;
        std::atomic<bool> done{false};
    };

    void accept_loop() {
        while (!stopping_) {
            pollfd pfd{listen_fd_, POLLIN, 0};
            if (::poll(&pfd, 1, 50) <= 0) {
                reap();
                continue;
            }
            const int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) continue;
            std::lock_guard lock(peers_mu_);
            auto& p = peers_.emplace_back();
            p.thread = std::thread([this, fd, &p] {
                serve_peer(fd);
                p.done = true;
            });
        }
    }

    void reap() {
        std::lock_guard lock(peers_mu_);
        for (auto it = peers_.begin(); it != peers_.end();) {
            if (it->done) {
                it->thread.join();
                it = peers_.erase(it);
            } else {
                ++it;
            }
        }
    }

    static bool send_all(int fd, const std::vector<std::uint8_t>& bytes) {
        std::size_t off = 0;
        while (off < bytes.size()) {
            const ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN) {
                    pollfd pfd{fd, POLLOUT, 0};
                    ::poll(&pfd, 1, 100);
                    continue;
                }
                return false;
            }
            off += std::size_t(n);
        }
        return true;
    }

    void serve_peer(int fd) {
        Connection conn(core_);
        std::vector<std::uint8_t> buf(64 * 1024);
        bool alive = true;
        while (alive) {
            if (stopping_ && !conn.closed()) conn.close(ws::kCloseGoingAway, "server shutting down");
            pollfd pfd{fd, POLLIN, 0};
            const int ready = ::poll(&pfd, 1, 10);
            if (ready > 0 && (pfd.revents & (POLLIN | POLLHUP | POLLERR))) {
                const ssize_t n = ::recv(fd, buf.data(), buf.size(), 0);
                if (n <= 0) alive = false;
                else conn.feed({buf.data(), std::size_t(n)});
            }
            const auto out = conn.take_output();
            if (!out.empty() && !send_all(fd, out)) alive = false;
            if (conn.closed()) {
                const auto rest = conn.take_output();
                if (!rest.empty()) send_all(fd, rest);
                alive = false;
            }
        }
        ::shutdown(fd, SHUT_RDWR);
        ::close(fd);
    }

    SessionCore& core_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::mutex peers_mu_;
    std::list<Peer> peers_;
};

/// Drives a session on the calling thread until `stop` turns true: drains
/// commands, steps the trainer while running, idles otherwise. A final drain
/// answers commands that arrived before the stop.
inline void run_session(SessionCore& core, const std::atomic<bool>& stop) {
    using namespace std::chrono_literals;
    while (!stop) {
        core.drain();
        if (core.should_step()) core.step();
        else core.wait_for_commands(20ms);
    }
    core.drain();
    core.shutdown();
}

}  // namespace stylesplat::server

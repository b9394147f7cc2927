#include "ppaml/net.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <thread>
#include <unistd.h>

namespace ppaml::net {

namespace {

[[noreturn]] void transport(const std::string& what) { fail(Errc::TransportError, what + ": " + std::strerror(errno)); }

bool wait_readable(int fd, std::chrono::milliseconds timeout) {
    pollfd p{fd, POLLIN, 0};
    for (;;) {
        const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
        if (r >= 0) return r > 0;
        if (errno != EINTR) transport("poll");
    }
}

sockaddr_in resolve(const Endpoint& ep) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || !res) {
        fail(Errc::TransportError, "cannot resolve " + ep.host);
    }
    sockaddr_in addr{};
    std::memcpy(&addr, res->ai_addr, sizeof(addr));
    ::freeaddrinfo(res);
    addr.sin_port = htons(ep.port);
    return addr;
}

} // namespace

Endpoint parse_endpoint(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon == 0) fail(Errc::InvalidConfig, "expected host:port, got '" + std::string(text) + "'");
    Endpoint ep;
    ep.host = std::string(text.substr(0, colon));
    const auto port = text.substr(colon + 1);
    unsigned value = 0;
    const auto [end, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
    if (ec != std::errc{} || end != port.data() + port.size() || value > 65535) {
        fail(Errc::InvalidConfig, "invalid port in '" + std::string(text) + "'");
    }
    ep.port = static_cast<std::uint16_t>(value);
    return ep;
}

Connection::Connection(int fd) : fd_(fd) {
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

Connection::~Connection() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Connection> Connection::open(const Endpoint& ep, int retries, std::chrono::milliseconds delay,
                                             int* retries_used) {
    const auto addr = resolve(ep);
    for (int attempt = 0;; ++attempt) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) transport("socket");
        if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) {
            if (retries_used) *retries_used = attempt;
            return std::make_unique<Connection>(fd);
        }
        const int err = errno;
        ::close(fd);
        if (attempt >= retries) {
            errno = err;
            transport("connect to " + ep.to_string() + " failed after " + std::to_string(attempt) + " retries");
        }
        std::this_thread::sleep_for(delay);
    }
}

void Connection::send_frame(std::span<const std::uint8_t> frame) {
    std::lock_guard lock(write_mutex_);
    std::size_t sent = 0;
    while (sent < frame.size()) {
        const auto n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            transport("send");
        }
        sent += static_cast<std::size_t>(n);
    }
}

void Connection::send(const wire::Message& m) { send_frame(wire::encode(m)); }

void Connection::read_exact(std::uint8_t* out, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        const auto r = ::recv(fd_, out + got, n - got, 0);
        if (r == 0) fail(Errc::TransportError, "connection closed by peer");
        if (r < 0) {
            if (errno == EINTR) continue;
            transport("recv");
        }
        got += static_cast<std::size_t>(r);
    }
}

std::optional<wire::Message> Connection::receive(std::chrono::milliseconds timeout) {
    if (!wait_readable(fd_, timeout)) return std::nullopt;
    std::uint8_t head[4];
    read_exact(head, 4);
    const std::size_t len = (std::size_t{head[0]} << 24) | (std::size_t{head[1]} << 16) | (std::size_t{head[2]} << 8) | head[3];
    if (len > wire::kMaxFrameBytes) fail(Errc::TransportError, "frame of " + std::to_string(len) + " bytes exceeds the limit");
    std::vector<std::uint8_t> body(len);
    read_exact(body.data(), len);
    return wire::decode_body(body);
}

void Connection::shutdown() noexcept { ::shutdown(fd_, SHUT_RDWR); }

Listener::Listener(const Endpoint& ep) {
    const auto addr = resolve(ep);
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) transport("socket");
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
        const int err = errno;
        ::close(fd_);
        errno = err;
        transport("bind " + ep.to_string());
    }
    if (::listen(fd_, 64) != 0) transport("listen");
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
}

Listener::~Listener() { close(); }

std::unique_ptr<Connection> Listener::accept(std::chrono::milliseconds timeout) {
    if (fd_ < 0 || !wait_readable(fd_, timeout)) return nullptr;
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) return nullptr;
    return std::make_unique<Connection>(fd);
}

void Listener::close() noexcept {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

} // namespace ppaml::net

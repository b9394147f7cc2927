#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "ppaml/wire.hpp"

// Blocking TCP transport for wire frames.
namespace ppaml::net {

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    std::string to_string() const { return host + ":" + std::to_string(port); }
};

/// "host:port"; throws InvalidConfig.
Endpoint parse_endpoint(std::string_view text);

class Connection {
public:
    explicit Connection(int fd);
    ~Connection();
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;

    /// Retries refused connections; the number of failed attempts is stored
    /// in *retries_used. Throws TransportError when all attempts fail.
    static std::unique_ptr<Connection> open(const Endpoint& ep, int retries = 20,
                                            std::chrono::milliseconds delay = std::chrono::milliseconds(100),
                                            int* retries_used = nullptr);

    /// Safe to call from several threads.
    void send(const wire::Message& m);
    void send_frame(std::span<const std::uint8_t> frame);
    /// Next message, or nullopt if none starts within `timeout`. Throws
    /// TransportError when the peer closes; a malformed frame is consumed
    /// whole before its decode error is thrown.
    std::optional<wire::Message> receive(std::chrono::milliseconds timeout);
    /// Wakes any blocked receive.
    void shutdown() noexcept;

private:
    void read_exact(std::uint8_t* out, std::size_t n);
    int fd_;
    std::mutex write_mutex_;
};

class Listener {
public:
    explicit Listener(const Endpoint& ep);
    ~Listener();
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;

    std::uint16_t port() const noexcept { return port_; }
    std::unique_ptr<Connection> accept(std::chrono::milliseconds timeout);
    void close() noexcept;

private:
    int fd_;
    std::uint16_t port_ = 0;
};

} // namespace ppaml::net

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "wavespace/service/oscillator.hpp"

namespace wavespace::service {

struct ServeConfig {
    std::string bind = "127.0.0.1:8765";
    double max_exec_hz = 30.0;
    double sample_rate = 48000.0;
    std::size_t block_size = 256;
    /// Runs the render loop at real-time pace and writes its output here on stop.
    std::optional<std::filesystem::path> record_wav;
};

/// WebSocket endpoint for the control protocol: JSON text frames in both
/// directions, waveform frames broadcast to every connected client.
class Server {
public:
    Server(std::shared_ptr<const model::Model<float>> model, ServeConfig config);
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and starts the network and render threads. Throws Error when the
    /// address is malformed or the port is busy.
    void start();
    /// Blocks until stop() is called from another thread or a signal handler.
    void wait();
    void stop();

    std::uint16_t port() const;
    Oscillator& oscillator();
    std::size_t client_count() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace wavespace::service

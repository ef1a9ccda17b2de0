#include "wavespace/service/server.hpp"

#include <atomic>
#include <chrono>
#include <deque>
#include <condition_variable>
#include <future>
#include <mutex>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "wavespace/dsp/wav_io.hpp"
#include "wavespace/errors.hpp"

namespace wavespace::service {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

std::pair<std::string, std::uint16_t> split_address(const std::string& bind)
{
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw ConfigError("bind address must be host:port, got '" + bind + "'");
    const std::string host = bind.substr(0, colon);
    const std::string port = bind.substr(colon + 1);
    try {
        std::size_t used = 0;
        const unsigned long p = std::stoul(port, &used);
        if (used != port.size() || p > 65535) throw std::out_of_range("port");
        return {host.empty() ? "0.0.0.0" : host, static_cast<std::uint16_t>(p)};
    } catch (const std::logic_error&) {
        throw ConfigError("bad port in bind address '" + bind + "'");
    }
}

class Session;

struct Hub {
    std::set<std::shared_ptr<Session>> sessions;
};

class Session : public std::enable_shared_from_this<Session> {
public:
    Session(tcp::socket socket, Hub& hub, Oscillator& osc)
        : ws_(std::move(socket)), hub_(hub), osc_(osc)
    {
    }

    void start()
    {
        ws_.text(true);
        ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
            if (ec) return;
            self->hub_.sessions.insert(self);
            nlohmann::json status = {{"type", "status"}, {"params", self->osc_.params_json()},
                                     {"styles", self->osc_.model().styles()}};
            self->send(std::make_shared<const std::string>(status.dump()));
            self->read();
        });
    }

    void send(std::shared_ptr<const std::string> text)
    {
        queue_.push_back(std::move(text));
        if (queue_.size() == 1) write_next();
    }

    void close()
    {
        beast::error_code ec;
        ws_.next_layer().shutdown(tcp::socket::shutdown_both, ec);
        ws_.next_layer().close(ec);
    }

private:
    void read()
    {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) {
                self->hub_.sessions.erase(self);
                return;
            }
            const std::string text = beast::buffers_to_string(self->buffer_.data());
            self->buffer_.consume(self->buffer_.size());
            self->handle(text);
            self->read();
        });
    }

    void handle(const std::string& text)
    {
        try {
            const auto msg = parse_message(text);
            const auto r = osc_.apply(msg);
            if (!r.ok) {
                send(std::make_shared<const std::string>(error_frame(r.error).dump()));
            } else if (!r.scheduled) {
                nlohmann::json ack = {{"type", "status"}, {"params", osc_.params_json()}};
                send(std::make_shared<const std::string>(ack.dump()));
            }
        } catch (const Error& e) {
            send(std::make_shared<const std::string>(error_frame(e.what()).dump()));
        }
    }

    void write_next()
    {
        ws_.async_write(asio::buffer(*queue_.front()),
                        [self = shared_from_this()](beast::error_code ec, std::size_t) {
                            if (ec) {
                                self->queue_.clear();
                                self->hub_.sessions.erase(self);
                                return;
                            }
                            self->queue_.pop_front();
                            if (!self->queue_.empty()) self->write_next();
                        });
    }

    websocket::stream<tcp::socket> ws_;
    beast::flat_buffer buffer_;
    std::deque<std::shared_ptr<const std::string>> queue_;
    Hub& hub_;
    Oscillator& osc_;
};

} // namespace

struct Server::Impl {
    std::shared_ptr<const model::Model<float>> model;
    ServeConfig config;
    Oscillator osc;
    asio::io_context io;
    tcp::acceptor acceptor{io};
    Hub hub;
    std::thread net_thread;
    std::thread render_thread;
    std::atomic<bool> running{false};
    std::atomic<std::size_t> clients{0};
    std::vector<double> recording;
    std::mutex stop_mutex;
    std::condition_variable stopped;
    bool stop_requested = false;

    Impl(std::shared_ptr<const model::Model<float>> m, ServeConfig c)
        : model(m), config(std::move(c)), osc(m, OscillatorConfig{config.max_exec_hz, config.sample_rate})
    {
    }

    void accept()
    {
        acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
            if (ec) return;
            std::make_shared<Session>(std::move(socket), hub, osc)->start();
            accept();
        });
    }

    void render_loop()
    {
        std::vector<double> block(config.block_size);
        const auto period = std::chrono::duration<double>(static_cast<double>(config.block_size) / config.sample_rate);
        auto next = std::chrono::steady_clock::now();
        while (running.load()) {
            osc.render_block(block);
            recording.insert(recording.end(), block.begin(), block.end());
            next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
            std::this_thread::sleep_until(next);
        }
    }
};

Server::Server(std::shared_ptr<const model::Model<float>> model, ServeConfig config)
    : impl_(std::make_unique<Impl>(std::move(model), std::move(config)))
{
}

Server::~Server()
{
    stop();
}

void Server::start()
{
    auto& im = *impl_;
    const auto [host, port] = split_address(im.config.bind);
    beast::error_code ec;
    const auto address = asio::ip::make_address(host, ec);
    if (ec) throw ConfigError("bad bind host '" + host + "': " + ec.message());
    const tcp::endpoint endpoint(address, port);
    im.acceptor.open(endpoint.protocol(), ec);
    if (!ec) im.acceptor.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) im.acceptor.bind(endpoint, ec);
    if (!ec) im.acceptor.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) throw Error("cannot listen on " + im.config.bind + ": " + ec.message());

    im.osc.set_frame_callback([&im](const Frame& f) {
        auto text = std::make_shared<const std::string>(to_json_frame(f, im.model->styles()).dump());
        asio::post(im.io, [&im, text] {
            for (const auto& s : im.hub.sessions) s->send(text);
        });
    });
    im.accept();
    im.running = true;
    im.net_thread = std::thread([&im] { im.io.run(); });
    if (im.config.record_wav) im.render_thread = std::thread([&im] { im.render_loop(); });
}

void Server::wait()
{
    std::unique_lock lk(impl_->stop_mutex);
    impl_->stopped.wait(lk, [this] { return impl_->stop_requested; });
}

void Server::stop()
{
    auto& im = *impl_;
    {
        std::lock_guard lk(im.stop_mutex);
        if (im.stop_requested) return;
        im.stop_requested = true;
    }
    im.stopped.notify_all();
    im.osc.set_frame_callback(nullptr);
    im.running = false;
    if (im.render_thread.joinable()) im.render_thread.join();
    asio::post(im.io, [&im] {
        beast::error_code ec;
        im.acceptor.close(ec);
        for (const auto& s : im.hub.sessions) s->close();
        im.hub.sessions.clear();
    });
    if (im.net_thread.joinable()) {
        im.io.stop();
        im.net_thread.join();
    }
    if (im.config.record_wav && !im.recording.empty()) {
        dsp::write_wav(*im.config.record_wav, im.recording, static_cast<std::uint32_t>(im.config.sample_rate));
    }
}

std::uint16_t Server::port() const
{
    beast::error_code ec;
    const auto ep = impl_->acceptor.local_endpoint(ec);
    return ec ? 0 : ep.port();
}

Oscillator& Server::oscillator()
{
    return impl_->osc;
}

std::size_t Server::client_count() const
{
    auto& im = *impl_;
    std::promise<std::size_t> p;
    auto f = p.get_future();
    asio::post(im.io, [&im, &p] { p.set_value(im.hub.sessions.size()); });
    return f.get();
}

} // namespace wavespace::service

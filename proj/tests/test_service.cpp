#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <numbers>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "wavespace/dsp/waveform.hpp"
#include "wavespace/errors.hpp"
#include "wavespace/service/messages.hpp"
#include "wavespace/service/oscillator.hpp"
#include "wavespace/service/server.hpp"
#include "wavespace/service/snapshot.hpp"

using namespace wavespace;
using namespace wavespace::service;
using model::ParamPoint;

namespace {

std::shared_ptr<const model::Model<float>> tiny_model(std::size_t styles = 4)
{
    std::vector<std::string> names;
    for (std::size_t s = 0; s < styles; ++s) names.push_back("style" + std::to_string(s));
    return std::make_shared<const model::Model<float>>(model::ArchitectureConfig::ws_s(styles), names, 3);
}

ParamPoint point(double brightness)
{
    ParamPoint p;
    p.style.assign(8, 0.0);
    p.descriptors = {brightness, 0.3, 0.3, 0.1, 0.0};
    return p;
}

std::vector<double> cosine_cycle(std::size_t n, double phase)
{
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::cos(2 * std::numbers::pi * i / n + phase);
    const auto w = dsp::postprocess(x);
    return {w.samples().begin(), w.samples().end()};
}

struct FloodResult {
    std::uint64_t starts = 0;
    std::optional<ParamPoint> last_decoded;
    double max_in_window = 0;
};

// Fixed-rate message stream against the policy with an idealised decoder
// that takes decode_seconds per execution.
FloodResult flood(DecodePolicy& policy, std::size_t messages, double duration, double decode_seconds)
{
    FloodResult r;
    std::vector<double> start_times;
    double busy_until = -1;
    const double dt = duration / static_cast<double>(messages);
    auto step = [&](double now) {
        if (policy.in_flight() && now >= busy_until) policy.complete();
        if (auto p = policy.poll(now)) {
            r.last_decoded = *p;
            start_times.push_back(now);
            busy_until = now + decode_seconds;
        }
    };
    for (std::size_t i = 0; i < messages; ++i) {
        const double now = static_cast<double>(i) * dt;
        step(now);
        policy.submit(point(0.001 * static_cast<double>(i % 1000)));
        step(now);
    }
    for (double now = duration; policy.has_pending() || policy.in_flight(); now += 0.001) step(now);
    r.starts = policy.started();
    for (std::size_t i = 0; i < start_times.size(); ++i) {
        std::size_t k = i;
        while (k < start_times.size() && start_times[k] < start_times[i] + 1.0) ++k;
        r.max_in_window = std::max(r.max_in_window, static_cast<double>(k - i));
    }
    return r;
}

ServeConfig serve_at(std::string bind)
{
    ServeConfig c;
    c.bind = std::move(bind);
    return c;
}

} // namespace

TEST_CASE("policy suppresses unchanged points")
{
    DecodePolicy policy(30);
    CHECK(policy.submit(point(0.4)));
    CHECK_FALSE(policy.submit(point(0.4)));
    REQUIRE(policy.poll(0.0));
    policy.complete();
    CHECK_FALSE(policy.submit(point(0.4)));
    CHECK_FALSE(policy.poll(10.0));
    CHECK(policy.started() == 1);
}

TEST_CASE("policy coalesces to the newest point and honours the rate cap")
{
    DecodePolicy policy(30);
    policy.submit(point(0.1));
    REQUIRE(policy.poll(0.0));
    policy.submit(point(0.2));
    policy.submit(point(0.3));
    CHECK_FALSE(policy.poll(0.01)); // still in flight
    policy.complete();
    CHECK_FALSE(policy.poll(0.02)); // rate cap
    const auto p = policy.poll(1.0 / 30.0);
    REQUIRE(p);
    CHECK(p->descriptors[0] == 0.3);
    CHECK(policy.started() == 2);
}

TEST_CASE("policy forgets a pending point that returns to the started one")
{
    DecodePolicy policy(30);
    policy.submit(point(0.1));
    REQUIRE(policy.poll(0.0));
    policy.submit(point(0.2));
    policy.submit(point(0.1));
    CHECK_FALSE(policy.has_pending());
}

TEST_CASE("100 messages in 1 s at 30 Hz give at most 31 decodes")
{
    DecodePolicy policy(30);
    const auto r = flood(policy, 100, 1.0, 0.002);
    CHECK(r.starts <= 31);
    REQUIRE(r.last_decoded);
    CHECK(r.last_decoded->descriptors[0] == doctest::Approx(0.099));
}

TEST_CASE("flood of 1000 messages in 10 s stays within the cap")
{
    for (double decode : {0.0005, 0.01, 0.05}) {
        DecodePolicy policy(30);
        const auto r = flood(policy, 1000, 10.0, decode);
        CHECK(r.starts <= 301);
        CHECK(r.max_in_window <= 31);
        REQUIRE(r.last_decoded);
        CHECK(same_point(*r.last_decoded, point(0.999)));
    }
}

TEST_CASE("policy rejects a non-positive rate")
{
    CHECK_THROWS_AS(DecodePolicy(0.0), ConfigError);
}

TEST_CASE("snapshot exchange returns the latest value")
{
    SnapshotExchange<int> x(0);
    x.back() = 1;
    x.publish();
    x.back() = 2;
    x.publish();
    CHECK(x.has_fresh());
    CHECK(x.consume() == 2);
    CHECK_FALSE(x.has_fresh());
    CHECK(x.consume() == 2);
    x.back() = 3;
    x.publish();
    CHECK(x.consume() == 3);
}

TEST_CASE("snapshot stress shows no torn reads")
{
    constexpr std::size_t width = 64;
    constexpr std::uint64_t publishes = 1'000'000;
    struct Snap {
        std::uint64_t seq = 0;
        std::array<std::uint64_t, width> payload{};
        std::uint64_t checksum = 0;
    };
    SnapshotExchange<Snap> x(Snap{});
    std::atomic<bool> done{false};
    std::uint64_t torn = 0, reads = 0, regressions = 0, last = 0;

    std::thread consumer([&] {
        while (!done.load(std::memory_order_acquire) || x.has_fresh()) {
            const Snap& s = x.consume();
            std::uint64_t sum = s.seq;
            bool ok = true;
            for (std::size_t k = 0; k < width; ++k) {
                ok = ok && s.payload[k] == s.seq * 31 + k;
                sum += s.payload[k];
            }
            if (s.seq != 0 && (!ok || sum != s.checksum)) ++torn;
            if (s.seq < last) ++regressions;
            last = s.seq;
            ++reads;
        }
    });
    for (std::uint64_t i = 1; i <= publishes; ++i) {
        Snap& b = x.back();
        b.seq = i;
        std::uint64_t sum = i;
        for (std::size_t k = 0; k < width; ++k) {
            b.payload[k] = i * 31 + k;
            sum += b.payload[k];
        }
        b.checksum = sum;
        x.publish();
        if (i % 4096 == 0) std::this_thread::yield();
    }
    done.store(true, std::memory_order_release);
    consumer.join();
    CHECK(torn == 0);
    CHECK(regressions == 0);
    CHECK(last == publishes);
    CHECK(reads > 0);
}

TEST_CASE("adsr zero attack starts at full level")
{
    Adsr env;
    env.set({0.0, 0.0, 0.8, 0.2});
    env.gate(true, 48000);
    CHECK(env.next(48000) == 1.0);
    CHECK(env.next(48000) == doctest::Approx(0.8));
}

TEST_CASE("adsr linear attack and decay")
{
    Adsr env;
    env.set({0.001, 0.001, 0.5, 0.0});
    env.gate(true, 10000); // 10 samples each
    for (int i = 1; i <= 10; ++i) CHECK(env.next(10000) == doctest::Approx(0.1 * i));
    for (int i = 1; i <= 10; ++i) CHECK(env.next(10000) == doctest::Approx(1.0 - 0.05 * i));
    CHECK(env.stage() == Adsr::Stage::sustain);
}

TEST_CASE("adsr release ramps to silence")
{
    Adsr env;
    env.set({0.0, 0.0, 0.5, 0.001});
    env.gate(true, 10000);
    env.next(10000);
    env.next(10000);
    env.gate(false, 10000);
    for (int i = 1; i <= 10; ++i) CHECK(env.next(10000) == doctest::Approx(0.5 - 0.05 * i));
    CHECK(env.stage() == Adsr::Stage::idle);
}

TEST_CASE("voice sustain plateau sets the amplitude ratio")
{
    const std::size_t n = 1024;
    Voice v(n, 48000);
    WaveSnapshot table{1, cosine_cycle(n, 0.0)};
    VoiceControls c;
    c.f0 = 48000.0 / n;
    c.gate = true;
    c.gate_serial = 1;
    c.envelope = {0.0, 0.01, 0.5, 0.1};
    std::vector<double> out(n);
    for (int b = 0; b < 4; ++b) v.render(out, table, c);
    double sum = 0;
    for (double s : out) sum += s * s;
    CHECK(std::sqrt(sum / n) == doctest::Approx(0.5 * 0.25).epsilon(1e-9));
    CHECK(v.output_scale() == doctest::Approx(0.25 * 32.0));
}

TEST_CASE("voice reads one table pass per table length at f0 = fs / N")
{
    const std::size_t n = 1024;
    Voice v(n, 48000);
    WaveSnapshot table{1, cosine_cycle(n, 0.3)};
    VoiceControls c;
    c.f0 = 48000.0 / n;
    c.gate = true;
    c.gate_serial = 1;
    c.envelope = {0.0, 0.0, 1.0, 0.0};
    std::vector<double> a(n), b(n);
    v.render(a, table, c);
    v.render(b, table, c);
    for (std::size_t i = 0; i < n; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    CHECK(a[0] == doctest::Approx(v.output_scale() * table.samples[0]).epsilon(1e-12));
}

TEST_CASE("voice zero release silences the next block")
{
    Voice v(1024, 48000);
    WaveSnapshot table{1, cosine_cycle(1024, 0.0)};
    VoiceControls c;
    c.f0 = 440;
    c.gate = true;
    c.gate_serial = 1;
    c.envelope = {0.0, 0.0, 1.0, 0.0};
    std::vector<double> out(256);
    v.render(out, table, c);
    c.gate = false;
    c.gate_serial = 2;
    v.render(out, table, c);
    for (double s : out) CHECK(s == 0.0);
}

TEST_CASE("voice crossfades snapshot swaps without clicks")
{
    const std::size_t n = 1024;
    Voice v(n, 48000);
    WaveSnapshot a{1, cosine_cycle(n, 0.0)};
    WaveSnapshot b{2, cosine_cycle(n, std::numbers::pi)};
    VoiceControls c;
    c.f0 = 110;
    c.gate = true;
    c.gate_serial = 1;
    c.envelope = {0.0, 0.0, 1.0, 0.0};
    std::vector<double> out(256), all;
    for (int i = 0; i < 3; ++i) {
        v.render(out, a, c);
        all.insert(all.end(), out.begin(), out.end());
    }
    for (int i = 0; i < 3; ++i) {
        v.render(out, b, c);
        all.insert(all.end(), out.begin(), out.end());
    }
    double worst = 0;
    for (std::size_t i = 1; i < all.size(); ++i) worst = std::max(worst, std::abs(all[i] - all[i - 1]));
    CHECK(worst < 0.05);

    // The raw tables differ by far more than the threshold at the swap.
    double raw = 0;
    for (std::size_t i = 0; i < n; ++i) raw = std::max(raw, std::abs(a.samples[i] - b.samples[i]));
    CHECK(raw * v.output_scale() * c.gain > 0.5);
}

TEST_CASE("voice with no valid snapshot is silent")
{
    Voice v(1024, 48000);
    WaveSnapshot empty;
    VoiceControls c;
    c.gate = true;
    c.gate_serial = 1;
    std::vector<double> out(128, 1.0);
    v.render(out, empty, c);
    for (double s : out) CHECK(s == 0.0);
}

TEST_CASE("messages parse and round trip")
{
    const auto m = parse_message(std::string(R"({"type":"set_descriptor","name":"brightness","value":0.7})"));
    REQUIRE(std::holds_alternative<SetDescriptor>(m));
    CHECK(std::get<SetDescriptor>(m).value == 0.7);
    CHECK(to_json(m).dump() == R"({"name":"brightness","type":"set_descriptor","value":0.7})");
    const auto e = parse_message(nlohmann::json{{"type", "envelope"}, {"attack", 0.0}, {"decay", 0.1},
                                                {"sustain", 0.5}, {"release", 1.0}});
    CHECK(std::get<EnvelopeSettings>(e) == EnvelopeSettings{0.0, 0.1, 0.5, 1.0});
    CHECK(std::get<SetStyle>(parse_message(to_json(SetStyle{2, 1.5, -0.5}))).subspace == 2);
}

TEST_CASE("malformed and out-of-range messages are rejected")
{
    CHECK_THROWS_AS(parse_message(std::string("{not json")), FormatError);
    CHECK_THROWS_AS(parse_message(std::string(R"({"type":"teleport"})")), FormatError);
    CHECK_THROWS_AS(parse_message(std::string(R"({"type":"gain"})")), FormatError);
    CHECK_THROWS_AS(parse_message(std::string(R"({"type":"set_descriptor","name":"brightness","value":1.5})")),
                    RangeError);
    CHECK_THROWS_AS(parse_message(std::string(R"({"type":"set_descriptor","name":"loudness","value":0.5})")),
                    RangeError);
    CHECK_THROWS_AS(parse_message(std::string(R"({"type":"set_descriptor","name":"symmetry","value":4})")),
                    RangeError);
    CHECK_NOTHROW(parse_message(std::string(R"({"type":"set_descriptor","name":"symmetry","value":-3})")));
    CHECK_THROWS_AS(parse_message(std::string(R"({"type":"envelope","attack":0,"decay":0,"sustain":2,"release":0})")),
                    RangeError);
    CHECK_THROWS_AS(parse_message(std::string(R"({"type":"set_style","subspace":-1,"x":0,"y":0})")), FormatError);
    CHECK_THROWS_AS(parse_message(std::string(R"({"type":"note","f0":440,"gate":1})")), FormatError);
    CHECK(error_frame("bad").at("type") == "error");
}

TEST_CASE("oscillator starts with a decoded snapshot")
{
    Oscillator osc(tiny_model(), {});
    CHECK(osc.decode_count() == 1);
    const auto f = osc.latest_frame();
    REQUIRE(f);
    CHECK(f->samples.size() == 1024);
    double energy = 0, mean = 0;
    for (double s : f->samples) {
        energy += s * s;
        mean += s;
    }
    CHECK(energy == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(mean) < 1e-9);
}

TEST_CASE("two identical set_descriptor messages decode once")
{
    Oscillator osc(tiny_model(), {});
    const auto before = osc.decode_count();
    const SetDescriptor m{Descriptor::brightness, 0.7};
    CHECK(osc.apply(m).scheduled);
    osc.wait_idle();
    CHECK_FALSE(osc.apply(m).scheduled);
    osc.wait_idle();
    CHECK(osc.decode_count() == before + 1);
}

TEST_CASE("set_style changes only the addressed subspace")
{
    Oscillator osc(tiny_model(4), {});
    osc.apply(SetStyle{1, 0.5, 0.5});
    const auto before = osc.current();
    const auto r = osc.apply(SetStyle{2, 4.0, -3.0});
    CHECK(r.ok);
    const auto after = osc.current();
    for (std::size_t k = 0; k < 8; ++k) {
        if (k == 4) CHECK(after.style[k] == 4.0);
        else if (k == 5) CHECK(after.style[k] == -3.0);
        else CHECK(after.style[k] == before.style[k]);
    }
    CHECK(after.descriptors == before.descriptors);
    CHECK(osc.active_subspace() == 2);
}

TEST_CASE("oscillator rejects invalid messages without changing state")
{
    Oscillator osc(tiny_model(2), {});
    const auto before = osc.current();
    auto r = osc.apply(SetStyle{2, 1.0, 1.0});
    CHECK_FALSE(r.ok);
    CHECK(r.error.find("subspace") != std::string::npos);
    r = osc.apply(EncodeInit{std::vector<double>(100, 0.1)});
    CHECK_FALSE(r.ok);
    r = osc.apply(EncodeInit{std::vector<double>(1024, 0.25)});
    CHECK_FALSE(r.ok);
    CHECK(r.error.find("encode_init") != std::string::npos);
    r = osc.apply(Note{30000.0, true});
    CHECK_FALSE(r.ok);
    r = osc.apply(EnvelopeSettings{0.0, 0.0, 1.5, 0.0});
    CHECK_FALSE(r.ok);
    CHECK(same_point(osc.current(), before));
}

TEST_CASE("encode_init sets style to the encoder mean and descriptors to the extracted values")
{
    const auto m = tiny_model(4);
    Oscillator osc(m, {});
    std::vector<double> x(1024);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 3.0 * std::sin(2 * std::numbers::pi * 3 * i / 1024.0) + 0.5;
    const auto before = osc.decode_count();
    const auto r = osc.apply(EncodeInit{x});
    REQUIRE(r.ok);
    CHECK(r.scheduled);
    const auto w = dsp::postprocess(x);
    const auto post = m->encode(w);
    const auto cur = osc.current();
    CHECK(cur.style == post.mu);
    CHECK(cur.descriptors == descriptors::extract(w.samples()));
    osc.wait_idle();
    CHECK(osc.decode_count() == before + 1);
}

TEST_CASE("real-time burst of 100 messages in 1 s stays within the cap")
{
    Oscillator osc(tiny_model(), {30.0, 48000.0});
    const auto before = osc.decode_count();
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 100; ++i) {
        osc.apply(SetDescriptor{Descriptor::brightness, 0.005 * (i + 1)});
        std::this_thread::sleep_until(t0 + std::chrono::milliseconds(10 * (i + 1)));
    }
    osc.wait_idle();
    CHECK(osc.decode_count() - before <= 31);
    const auto f = osc.latest_frame();
    REQUIRE(f);
    CHECK(f->params.descriptors[0] == doctest::Approx(0.5));
    CHECK(same_point(f->params, osc.current()));
}

TEST_CASE("render_block produces sound after a note")
{
    Oscillator osc(tiny_model(), {});
    std::vector<double> out(256);
    osc.render_block(out);
    for (double s : out) CHECK(s == 0.0);
    osc.apply(EnvelopeSettings{0.0, 0.0, 1.0, 0.0});
    osc.apply(Note{440.0, true});
    osc.render_block(out);
    double peak = 0;
    for (double s : out) peak = std::max(peak, std::abs(s));
    CHECK(peak > 0.0);
    osc.apply(Gain{0.0});
    osc.render_block(out);
    for (double s : out) CHECK(s == 0.0);
}

TEST_CASE("waveform frame json carries samples and parameters")
{
    Frame f{7, std::vector<double>(4, 0.5), point(0.2), {0.1, 0.2, 0.3, 0.4, 0.5}};
    const auto j = to_json_frame(f, {"a", "b"});
    CHECK(j.at("type") == "waveform");
    CHECK(j.at("serial") == 7);
    CHECK(j.at("samples").size() == 4);
    CHECK(j.at("params").at("descriptors").at("brightness") == 0.2);
    CHECK(j.at("descriptors").at("symmetry") == 0.5);
}

namespace {

namespace asio = boost::asio;
namespace websocket = boost::beast::websocket;
using tcp = asio::ip::tcp;

struct Client {
    asio::io_context io;
    websocket::stream<tcp::socket> ws{io};

    explicit Client(std::uint16_t port)
    {
        tcp::resolver resolver(io);
        asio::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
        ws.handshake("127.0.0.1", "/");
        ws.text(true);
    }

    void send(const std::string& s) { ws.write(asio::buffer(s)); }

    nlohmann::json read()
    {
        boost::beast::flat_buffer b;
        ws.read(b);
        return nlohmann::json::parse(boost::beast::buffers_to_string(b.data()));
    }

    nlohmann::json read_type(const std::string& type)
    {
        for (;;) {
            auto j = read();
            if (j.at("type") == type) return j;
        }
    }
};

} // namespace

TEST_CASE("serve answers set_descriptor with one waveform frame")
{
    Server server(tiny_model(), serve_at("127.0.0.1:0"));
    server.start();
    Client c(server.port());
    const auto status = c.read();
    CHECK(status.at("type") == "status");
    CHECK(status.at("styles").size() == 4);
    c.send(R"({"type":"set_descriptor","name":"brightness","value":0.7})");
    const auto frame = c.read();
    REQUIRE(frame.at("type") == "waveform");
    CHECK(frame.at("samples").size() == 1024);
    CHECK(frame.at("params").at("descriptors").at("brightness") == 0.7);
    CHECK(frame.at("descriptors").contains("fullness"));
    // Non-decoding change is acknowledged with a status frame, not a waveform.
    c.send(R"({"type":"gain","linear":0.5})");
    const auto ack = c.read();
    CHECK(ack.at("type") == "status");
    CHECK(ack.at("params").at("gain") == 0.5);
    server.stop();
}

TEST_CASE("serve keeps the connection open after malformed input")
{
    Server server(tiny_model(), serve_at("127.0.0.1:0"));
    server.start();
    Client c(server.port());
    c.read();
    c.send("{this is not json");
    auto e = c.read();
    CHECK(e.at("type") == "error");
    CHECK(e.at("message").get<std::string>().find("JSON") != std::string::npos);
    c.send(R"({"type":"set_descriptor","name":"richness","value":3})");
    e = c.read();
    CHECK(e.at("type") == "error");
    c.send(R"({"type":"set_descriptor","name":"richness","value":0.9})");
    const auto frame = c.read();
    CHECK(frame.at("type") == "waveform");
    CHECK(frame.at("params").at("descriptors").at("richness") == 0.9);
    server.stop();
}

TEST_CASE("serve broadcasts waveform frames to every client")
{
    Server server(tiny_model(), serve_at("127.0.0.1:0"));
    server.start();
    Client a(server.port());
    Client b(server.port());
    a.read();
    b.read();
    for (int i = 0; i < 50 && server.client_count() < 2; ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    REQUIRE(server.client_count() == 2);
    a.send(R"({"type":"set_style","subspace":1,"x":2.5,"y":-1})");
    const auto fa = a.read_type("waveform");
    const auto fb = b.read_type("waveform");
    CHECK(fa.at("serial") == fb.at("serial"));
    CHECK(fa.at("params").at("style")[2] == 2.5);
    CHECK(fb.at("samples") == fa.at("samples"));
    server.stop();
}

TEST_CASE("serve reports a busy port and a malformed address")
{
    Server first(tiny_model(), serve_at("127.0.0.1:0"));
    first.start();
    Server second(tiny_model(), serve_at("127.0.0.1:" + std::to_string(first.port())));
    CHECK_THROWS_AS(second.start(), Error);
    Server bad(tiny_model(), serve_at("localhost-no-port"));
    CHECK_THROWS_AS(bad.start(), ConfigError);
    first.stop();
}

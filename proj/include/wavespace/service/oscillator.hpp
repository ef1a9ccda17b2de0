#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wavespace/dsp/wavetable.hpp"
#include "wavespace/model/model.hpp"
#include "wavespace/service/messages.hpp"
#include "wavespace/service/snapshot.hpp"

namespace wavespace::service {

bool same_point(const model::ParamPoint& a, const model::ParamPoint& b);

/// Decode scheduling with injected time (seconds): suppresses unchanged
/// points, coalesces bursts to the newest point and spaces decode starts at
/// least 1 / max_exec_hz apart with at most one decode in flight.
class DecodePolicy {
public:
    explicit DecodePolicy(double max_exec_hz = 30.0);

    /// Returns true when the point became (or replaced) the pending decode.
    bool submit(const model::ParamPoint& p);
    /// Point to decode now, if one is pending and the rate cap allows it.
    std::optional<model::ParamPoint> poll(double now);
    void complete();

    bool in_flight() const noexcept { return in_flight_; }
    bool has_pending() const noexcept { return pending_.has_value(); }
    /// Earliest time a pending point may start.
    double next_start() const noexcept;
    std::uint64_t started() const noexcept { return started_; }
    double max_exec_hz() const noexcept { return max_exec_hz_; }

private:
    double max_exec_hz_;
    std::optional<model::ParamPoint> pending_;
    std::optional<model::ParamPoint> last_started_;
    bool in_flight_ = false;
    std::optional<double> last_start_time_;
    std::uint64_t started_ = 0;
};

/// Linear ADSR advanced per sample; settings apply from the next block.
class Adsr {
public:
    enum class Stage { idle, attack, decay, sustain, release };

    void set(const EnvelopeSettings& s) noexcept { settings_ = s; }
    void gate(bool on, double sample_rate) noexcept;
    double next(double sample_rate) noexcept;
    Stage stage() const noexcept { return stage_; }
    double level() const noexcept { return level_; }

private:
    EnvelopeSettings settings_;
    Stage stage_ = Stage::idle;
    double level_ = 0.0;
    double release_step_ = 0.0;
};

/// Render-thread control values, published by the protocol side.
struct VoiceControls {
    double f0 = 440.0;
    bool gate = false;
    std::uint64_t gate_serial = 0; ///< increments on every note message
    EnvelopeSettings envelope;
    double gain = 1.0;
};

struct WaveSnapshot {
    std::uint64_t serial = 0;
    std::vector<double> samples;
};

/// Single-row wavetable voice with ADSR, gain and one-block crossfade
/// between snapshots. render() never allocates or blocks.
class Voice {
public:
    Voice(std::size_t length, double sample_rate);

    void render(std::span<double> out, const WaveSnapshot& table, const VoiceControls& controls) noexcept;

    /// Output scale mapping a unit-energy cycle to RMS 0.25.
    double output_scale() const noexcept { return scale_; }
    const Adsr& envelope() const noexcept { return adsr_; }

private:
    dsp::PhaseState phase_;
    Adsr adsr_;
    std::vector<double> previous_;
    std::uint64_t previous_serial_ = 0;
    bool has_table_ = false;
    std::uint64_t gate_serial_ = 0;
    double scale_;
};

struct OscillatorConfig {
    double max_exec_hz = 30.0;
    double sample_rate = 48000.0;
};

struct ApplyResult {
    bool ok = true;
    bool scheduled = false;
    std::string error;
};

struct Frame {
    std::uint64_t serial = 0;
    std::vector<double> samples;
    model::ParamPoint params;
    DescriptorVector measured;
};

nlohmann::json to_json_frame(const Frame& f, const std::vector<std::string>& styles);

/// Parameter state, decode worker and render path of the oscillator.
class Oscillator {
public:
    Oscillator(std::shared_ptr<const model::Model<float>> model, OscillatorConfig config);
    ~Oscillator();

    Oscillator(const Oscillator&) = delete;
    Oscillator& operator=(const Oscillator&) = delete;

    /// Thread-safe; invalid messages leave the state unchanged.
    ApplyResult apply(const ControlMessage& m);

    model::ParamPoint current() const;
    std::size_t active_subspace() const;
    nlohmann::json params_json() const;
    const model::Model<float>& model() const noexcept { return *model_; }

    /// Called on the decode worker after every completed decode.
    void set_frame_callback(std::function<void(const Frame&)> cb);

    /// Render-thread entry point; wait-free with respect to the decoder.
    void render_block(std::span<double> out) noexcept;

    std::uint64_t decode_count() const noexcept { return decodes_.load(); }
    /// Blocks until no decode is pending or running.
    void wait_idle();
    std::optional<Frame> latest_frame() const;

private:
    void worker();

    std::shared_ptr<const model::Model<float>> model_;
    OscillatorConfig config_;

    mutable std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable idle_;
    model::ParamPoint current_;
    std::size_t active_subspace_ = 0;
    DecodePolicy policy_;
    VoiceControls controls_;
    std::function<void(const Frame&)> on_frame_;
    std::optional<Frame> latest_;
    bool stop_ = false;

    SnapshotExchange<WaveSnapshot> tables_;
    SnapshotExchange<VoiceControls> controls_exchange_;
    Voice voice_;
    std::atomic<std::uint64_t> decodes_{0};
    std::thread thread_;
};

} // namespace wavespace::service

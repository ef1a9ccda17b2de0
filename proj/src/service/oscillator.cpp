#include "wavespace/service/oscillator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "wavespace/errors.hpp"

namespace wavespace::service {

bool same_point(const model::ParamPoint& a, const model::ParamPoint& b)
{
    return a.style == b.style && a.descriptors == b.descriptors;
}

DecodePolicy::DecodePolicy(double max_exec_hz) : max_exec_hz_(max_exec_hz)
{
    if (!(max_exec_hz > 0.0)) throw ConfigError("max_exec_hz must be positive");
}

bool DecodePolicy::submit(const model::ParamPoint& p)
{
    if (pending_ && same_point(p, *pending_)) return false;
    if (last_started_ && same_point(p, *last_started_)) {
        // Back to what is already decoded or decoding: drop the stale pending point.
        pending_.reset();
        return false;
    }
    pending_ = p;
    return true;
}

double DecodePolicy::next_start() const noexcept
{
    if (!last_start_time_) return -std::numeric_limits<double>::infinity();
    return *last_start_time_ + 1.0 / max_exec_hz_;
}

std::optional<model::ParamPoint> DecodePolicy::poll(double now)
{
    if (!pending_ || in_flight_ || now < next_start()) return std::nullopt;
    in_flight_ = true;
    last_start_time_ = now;
    last_started_ = std::move(pending_);
    pending_.reset();
    ++started_;
    return last_started_;
}

void DecodePolicy::complete()
{
    in_flight_ = false;
}

constexpr double level_tolerance = 1e-9;

void Adsr::gate(bool on, double sample_rate) noexcept
{
    if (on) {
        stage_ = Stage::attack;
        return;
    }
    if (stage_ == Stage::idle) return;
    stage_ = Stage::release;
    const double samples = settings_.release * sample_rate;
    release_step_ = samples >= 1.0 ? level_ / samples : level_;
}

double Adsr::next(double sample_rate) noexcept
{
    switch (stage_) {
    case Stage::attack: {
        const double samples = settings_.attack * sample_rate;
        level_ = samples >= 1.0 ? level_ + 1.0 / samples : 1.0;
        if (level_ >= 1.0 - level_tolerance) {
            level_ = 1.0;
            stage_ = Stage::decay;
        }
        break;
    }
    case Stage::decay: {
        const double samples = settings_.decay * sample_rate;
        level_ = samples >= 1.0 ? level_ - (1.0 - settings_.sustain) / samples : settings_.sustain;
        if (level_ <= settings_.sustain + level_tolerance) {
            level_ = settings_.sustain;
            stage_ = Stage::sustain;
        }
        break;
    }
    case Stage::sustain:
        level_ = settings_.sustain;
        break;
    case Stage::release:
        level_ -= release_step_;
        if (level_ <= level_tolerance) {
            level_ = 0.0;
            stage_ = Stage::idle;
        }
        break;
    case Stage::idle:
        level_ = 0.0;
        break;
    }
    return level_;
}

Voice::Voice(std::size_t length, double sample_rate)
    : phase_{0.0, sample_rate, length}, previous_(length, 0.0),
      scale_(0.25 * std::sqrt(static_cast<double>(length)))
{
}

void Voice::render(std::span<double> out, const WaveSnapshot& table, const VoiceControls& controls) noexcept
{
    adsr_.set(controls.envelope);
    if (controls.gate_serial != gate_serial_) {
        gate_serial_ = controls.gate_serial;
        adsr_.gate(controls.gate, phase_.sample_rate);
    }
    const bool valid = table.samples.size() == phase_.length;
    const bool fade = valid && has_table_ && table.serial != previous_serial_;
    const double n = static_cast<double>(out.size());
    const double amp = scale_ * controls.gain;
    // Both cycles are read on every block so the cost does not depend on swaps.
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double col = dsp::advance_phase(phase_, controls.f0);
        const double current = valid ? dsp::read_row(table.samples, col) : 0.0;
        const double before = dsp::read_row(previous_, col);
        const double t = fade ? static_cast<double>(i + 1) / n : 1.0;
        out[i] = amp * adsr_.next(phase_.sample_rate) * ((1.0 - t) * before + t * current);
    }
    if (valid && (!has_table_ || table.serial != previous_serial_)) {
        std::copy(table.samples.begin(), table.samples.end(), previous_.begin());
        previous_serial_ = table.serial;
        has_table_ = true;
    }
}

namespace {

nlohmann::json descriptor_json(const DescriptorVector& d)
{
    nlohmann::json j;
    for (std::size_t k = 0; k < DescriptorVector::size; ++k) j[std::string(descriptor_names[k])] = d[k];
    return j;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const auto clock_origin = std::chrono::steady_clock::now();

} // namespace

nlohmann::json to_json_frame(const Frame& f, const std::vector<std::string>& styles)
{
    return {{"type", "waveform"},
            {"serial", f.serial},
            {"samples", f.samples},
            {"params", {{"style", f.params.style}, {"descriptors", descriptor_json(f.params.descriptors)}}},
            {"descriptors", descriptor_json(f.measured)},
            {"styles", styles}};
}

Oscillator::Oscillator(std::shared_ptr<const model::Model<float>> model, OscillatorConfig config)
    : model_(std::move(model)), config_(config), policy_(config.max_exec_hz),
      tables_(WaveSnapshot{0, std::vector<double>(model_->config().input_length, 0.0)}),
      controls_exchange_(VoiceControls{}), voice_(model_->config().input_length, config.sample_rate)
{
    current_.style.assign(model_->config().style_dim(), 0.0);
    current_.descriptors = {0.3, 0.3, 0.3, 0.1, 0.0};
    policy_.submit(current_);
    const auto first = policy_.poll(seconds_since(clock_origin));
    const auto w = model_->decode(*first);
    auto& slot = tables_.back();
    slot.serial = 1;
    std::copy(w.samples().begin(), w.samples().end(), slot.samples.begin());
    tables_.publish();
    latest_ = Frame{1, std::vector<double>(w.samples().begin(), w.samples().end()), *first,
                    descriptors::extract(w.samples())};
    policy_.complete();
    decodes_ = 1;
    thread_ = std::thread([this] { worker(); });
}

Oscillator::~Oscillator()
{
    {
        std::lock_guard lk(mutex_);
        stop_ = true;
    }
    wake_.notify_all();
    if (thread_.joinable()) thread_.join();
}

void Oscillator::set_frame_callback(std::function<void(const Frame&)> cb)
{
    std::lock_guard lk(mutex_);
    on_frame_ = std::move(cb);
}

void Oscillator::worker()
{
    std::unique_lock lk(mutex_);
    std::uint64_t serial = 1;
    while (!stop_) {
        const auto point = policy_.poll(seconds_since(clock_origin));
        if (!point) {
            if (policy_.has_pending() && !policy_.in_flight()) {
                const auto wait = std::chrono::duration<double>(policy_.next_start() - seconds_since(clock_origin));
                wake_.wait_for(lk, std::max(wait, std::chrono::duration<double>(0.0)));
            } else {
                wake_.wait(lk);
            }
            continue;
        }
        auto callback = on_frame_;
        lk.unlock();
        std::optional<Frame> frame;
        try {
            const auto w = model_->decode(*point);
            frame = Frame{++serial, std::vector<double>(w.samples().begin(), w.samples().end()), *point,
                          descriptors::extract(w.samples())};
            auto& slot = tables_.back();
            slot.serial = frame->serial;
            std::copy(frame->samples.begin(), frame->samples.end(), slot.samples.begin());
            tables_.publish();
            ++decodes_;
            if (callback) callback(*frame);
        } catch (const Error&) {
            // Degenerate decoder output: keep the previous snapshot.
        }
        lk.lock();
        if (frame) latest_ = std::move(frame);
        policy_.complete();
        idle_.notify_all();
    }
}

ApplyResult Oscillator::apply(const ControlMessage& m)
{
    ApplyResult r;
    auto fail = [&r](std::string msg) {
        r.ok = false;
        r.error = std::move(msg);
        return r;
    };
    auto schedule = [this, &r] {
        policy_.submit(current_);
        r.scheduled = policy_.has_pending();
        if (r.scheduled) wake_.notify_one();
    };
    auto publish_controls = [this] {
        controls_exchange_.back() = controls_;
        controls_exchange_.publish();
    };

    if (const auto* s = std::get_if<SetStyle>(&m)) {
        if (s->subspace >= model_->config().num_styles) {
            return fail("subspace " + std::to_string(s->subspace) + " outside [0, " +
                        std::to_string(model_->config().num_styles) + ")");
        }
        std::lock_guard lk(mutex_);
        current_.style[2 * s->subspace] = s->x;
        current_.style[2 * s->subspace + 1] = s->y;
        active_subspace_ = s->subspace;
        schedule();
    } else if (const auto* d = std::get_if<SetDescriptor>(&m)) {
        std::lock_guard lk(mutex_);
        current_.descriptors[static_cast<std::size_t>(d->which)] = d->value;
        schedule();
    } else if (const auto* e = std::get_if<EncodeInit>(&m)) {
        if (e->samples.size() != model_->config().input_length) {
            return fail("encode_init expects " + std::to_string(model_->config().input_length) +
                        " samples, got " + std::to_string(e->samples.size()));
        }
        model::ParamPoint p;
        try {
            const auto w = dsp::postprocess(e->samples);
            p.style = model_->encode(w).mu;
            p.descriptors = descriptors::extract(w.samples());
        } catch (const Error& err) {
            return fail(std::string("encode_init rejected: ") + err.what());
        }
        std::lock_guard lk(mutex_);
        current_ = std::move(p);
        schedule();
    } else if (const auto* n = std::get_if<Note>(&m)) {
        if (!(n->f0 >= 0.0 && n->f0 < config_.sample_rate / 2.0)) {
            return fail("f0 must lie in [0, " + std::to_string(config_.sample_rate / 2.0) + ")");
        }
        std::lock_guard lk(mutex_);
        controls_.f0 = n->f0;
        controls_.gate = n->gate;
        ++controls_.gate_serial;
        publish_controls();
    } else if (const auto* env = std::get_if<EnvelopeSettings>(&m)) {
        if (!(env->attack >= 0.0 && env->decay >= 0.0 && env->release >= 0.0 && env->sustain >= 0.0 &&
              env->sustain <= 1.0)) {
            return fail("envelope times must be >= 0 and sustain within [0, 1]");
        }
        std::lock_guard lk(mutex_);
        controls_.envelope = *env;
        publish_controls();
    } else if (const auto* g = std::get_if<Gain>(&m)) {
        if (!(g->linear >= 0.0)) return fail("gain must be non-negative");
        std::lock_guard lk(mutex_);
        controls_.gain = g->linear;
        publish_controls();
    }
    return r;
}

model::ParamPoint Oscillator::current() const
{
    std::lock_guard lk(mutex_);
    return current_;
}

std::size_t Oscillator::active_subspace() const
{
    std::lock_guard lk(mutex_);
    return active_subspace_;
}

nlohmann::json Oscillator::params_json() const
{
    std::lock_guard lk(mutex_);
    return {{"style", current_.style},
            {"descriptors", descriptor_json(current_.descriptors)},
            {"active_subspace", active_subspace_},
            {"f0", controls_.f0},
            {"gate", controls_.gate},
            {"gain", controls_.gain},
            {"envelope",
             {{"attack", controls_.envelope.attack},
              {"decay", controls_.envelope.decay},
              {"sustain", controls_.envelope.sustain},
              {"release", controls_.envelope.release}}},
            {"max_exec_hz", config_.max_exec_hz}};
}

void Oscillator::render_block(std::span<double> out) noexcept
{
    const auto& table = tables_.consume();
    const auto& controls = controls_exchange_.consume();
    voice_.render(out, table, controls);
}

void Oscillator::wait_idle()
{
    std::unique_lock lk(mutex_);
    idle_.wait(lk, [this] { return !policy_.has_pending() && !policy_.in_flight(); });
}

std::optional<Frame> Oscillator::latest_frame() const
{
    std::lock_guard lk(mutex_);
    return latest_;
}

} // namespace wavespace::service

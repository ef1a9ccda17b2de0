#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <numbers>

#include "wavespace/data/dataset.hpp"
#include "wavespace/dsp/fft.hpp"
#include "wavespace/errors.hpp"

namespace wavespace::data {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

// Portable draws: the standard distributions are not specified bit-for-bit.
double uniform(std::mt19937_64& rng, double lo, double hi)
{
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

std::size_t integer(std::mt19937_64& rng, std::size_t lo, std::size_t hi)
{
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

double log_uniform(std::mt19937_64& rng, double lo, double hi)
{
    return std::exp(uniform(rng, std::log(lo), std::log(hi)));
}

/// Harmonic series sum_k amp[k] cos(2 pi k t / n + phase[k]) with a circular shift.
std::vector<double> additive(std::size_t n, const std::vector<double>& amp,
                             const std::vector<double>& phase, double shift)
{
    std::vector<std::complex<double>> spec(n);
    const std::size_t top = std::min(amp.size(), n / 2);
    for (std::size_t k = 1; k < top; ++k) {
        const double ph = phase[k] - two_pi * static_cast<double>(k) * shift;
        spec[k] = std::polar(0.5 * static_cast<double>(n) * amp[k], ph);
        spec[n - k] = std::conj(spec[k]);
    }
    return dsp::idft_real<double>(spec);
}

struct Harmonics {
    std::vector<double> amp;
    std::vector<double> phase;

    explicit Harmonics(std::size_t count) : amp(count + 1, 0.0), phase(count + 1, 0.0) {}
};

/// Sine-phase series, optionally odd harmonics only, amplitudes k^-p.
Harmonics power_series(std::size_t top, double p, bool odd_only, double sign_flip)
{
    Harmonics h(top);
    for (std::size_t k = 1; k <= top; ++k) {
        if (odd_only && k % 2 == 0) continue;
        double a = std::pow(static_cast<double>(k), -p);
        if (sign_flip != 0.0 && ((k - 1) / 2) % 2 == 1) a = -a;
        h.amp[k] = a;
        h.phase[k] = -0.5 * std::numbers::pi;
    }
    return h;
}

std::size_t harmonic_limit(std::size_t n, std::size_t want)
{
    return std::min(want, n / 2 - 1);
}

// saw: every harmonic, amplitude k^-p, p in [0.85, 1.3], K in [48, 256].
std::vector<double> saw(std::size_t n, std::mt19937_64& rng)
{
    const auto top = harmonic_limit(n, integer(rng, 48, 256));
    const auto h = power_series(top, uniform(rng, 0.85, 1.3), false, 0.0);
    return additive(n, h.amp, h.phase, uniform(rng, 0.0, 1.0));
}

// square: odd harmonics, amplitude k^-p, p in [0.8, 1.3], K in [48, 256].
std::vector<double> square(std::size_t n, std::mt19937_64& rng)
{
    const auto top = harmonic_limit(n, integer(rng, 48, 256));
    const auto h = power_series(top, uniform(rng, 0.8, 1.3), true, 0.0);
    return additive(n, h.amp, h.phase, uniform(rng, 0.0, 1.0));
}

// triangle: odd harmonics, alternating sign, amplitude k^-p, p in [1.8, 2.2].
std::vector<double> triangle(std::size_t n, std::mt19937_64& rng)
{
    const auto top = harmonic_limit(n, integer(rng, 32, 128));
    const auto h = power_series(top, uniform(rng, 1.8, 2.2), true, 1.0);
    return additive(n, h.amp, h.phase, uniform(rng, 0.0, 1.0));
}

// pulse: duty cycle d in [0.05, 0.12], amplitude sin(pi k d) / k^q, q in [0.8, 1.2].
std::vector<double> pulse(std::size_t n, std::mt19937_64& rng)
{
    const auto top = harmonic_limit(n, integer(rng, 64, 256));
    const double duty = uniform(rng, 0.05, 0.12);
    const double q = uniform(rng, 0.8, 1.2);
    Harmonics h(top);
    for (std::size_t k = 1; k <= top; ++k) {
        const double kk = static_cast<double>(k);
        h.amp[k] = std::sin(std::numbers::pi * kk * duty) / std::pow(kk, q);
    }
    return additive(n, h.amp, h.phase, uniform(rng, 0.0, 1.0));
}

// harmonic-stack: organ drawbars on octave partials 1, 2, 4, .. 2^(H-1), H in [3, 6],
// amplitudes U[0.5, 1] / sqrt(k), random phases.
std::vector<double> harmonic_stack(std::size_t n, std::mt19937_64& rng)
{
    const std::size_t bars = integer(rng, 3, 6);
    const auto top = harmonic_limit(n, std::size_t{1} << (bars - 1));
    Harmonics h(top);
    for (std::size_t k = 1; k <= top; k *= 2) {
        h.amp[k] = uniform(rng, 0.5, 1.0) / std::sqrt(static_cast<double>(k));
        h.phase[k] = uniform(rng, 0.0, two_pi);
    }
    return additive(n, h.amp, h.phase, 0.0);
}

// fm-bell: sin(2 pi t + I sin(6 pi t + psi)), index I in [1.2, 2.4]. The 1:3 ratio
// leaves every third harmonic empty.
std::vector<double> fm_bell(std::size_t n, std::mt19937_64& rng)
{
    const double ratio = 3.0;
    const double index = uniform(rng, 1.2, 2.4);
    const double psi = uniform(rng, 0.0, two_pi);
    const double shift = uniform(rng, 0.0, 1.0);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n) + shift;
        x[i] = std::sin(two_pi * t + index * std::sin(two_pi * ratio * t + psi));
    }
    return x;
}

// formant: 192 harmonics under two log-frequency Gaussian peaks, centers in
// [3, 6] and [12, 32] harmonics, widths in [0.15, 0.35] (natural log units).
std::vector<double> formant(std::size_t n, std::mt19937_64& rng)
{
    const auto top = harmonic_limit(n, 192);
    const double c1 = log_uniform(rng, 3.0, 6.0), c2 = log_uniform(rng, 12.0, 32.0);
    const double w1 = uniform(rng, 0.15, 0.35), w2 = uniform(rng, 0.15, 0.35);
    const double g2 = uniform(rng, 0.3, 1.0);
    Harmonics h(top);
    for (std::size_t k = 1; k <= top; ++k) {
        const double lk = std::log(static_cast<double>(k));
        const double e1 = std::exp(-0.5 * std::pow((lk - std::log(c1)) / w1, 2));
        const double e2 = std::exp(-0.5 * std::pow((lk - std::log(c2)) / w2, 2));
        h.amp[k] = e1 + g2 * e2 + 1e-3 / static_cast<double>(k);
    }
    return additive(n, h.amp, h.phase, uniform(rng, 0.0, 1.0));
}

// soft-noise: random amplitudes U[0.5, 1] and phases under 1 / (1 + (k / kc)^4), kc in [32, 128].
std::vector<double> soft_noise(std::size_t n, std::mt19937_64& rng)
{
    const auto top = harmonic_limit(n, 256);
    const double kc = log_uniform(rng, 32.0, 128.0);
    Harmonics h(top);
    for (std::size_t k = 1; k <= top; ++k) {
        const double r = static_cast<double>(k) / kc;
        h.amp[k] = uniform(rng, 0.5, 1.0) / (1.0 + r * r * r * r);
        h.phase[k] = uniform(rng, 0.0, two_pi);
    }
    return additive(n, h.amp, h.phase, 0.0);
}

std::uint32_t fnv1a(const std::string& s)
{
    std::uint32_t h = 2166136261u;
    for (unsigned char c : s) h = (h ^ c) * 16777619u;
    return h;
}

using Recipe = std::function<std::vector<double>(std::size_t, std::mt19937_64&)>;

const std::map<std::string, Recipe>& recipes()
{
    static const std::map<std::string, Recipe> table{
        {"saw", saw},           {"square", square},   {"triangle", triangle},
        {"pulse", pulse},       {"harmonic-stack", harmonic_stack},
        {"fm-bell", fm_bell},   {"formant", formant}, {"soft-noise", soft_noise},
    };
    return table;
}

} // namespace

const std::vector<std::string>& synthetic_families()
{
    static const std::vector<std::string> names{"saw",     "square",  "triangle", "pulse",
                                                "harmonic-stack", "fm-bell", "formant", "soft-noise"};
    return names;
}

std::vector<double> synthesize(const std::string& family, std::size_t length, std::mt19937_64& rng)
{
    const auto it = recipes().find(family);
    if (it == recipes().end()) {
        throw ConfigError("unknown waveform family '" + family + "'");
    }
    if (length < 8 || length % 2 != 0) {
        throw ConfigError("synthetic waveforms need an even length of at least 8");
    }
    return it->second(length, rng);
}

Dataset generate_synthetic(const DatasetSpec& spec)
{
    if (spec.styles.empty()) throw ConfigError("dataset needs at least one style");
    for (const auto& s : spec.styles) {
        if (!recipes().contains(s)) throw ConfigError("unknown waveform family '" + s + "'");
    }
    Dataset d;
    d.styles = spec.styles;
    d.manifest = {{"spec", spec}};
    d.items.reserve(spec.styles.size() * spec.waveforms_per_style);
    for (std::size_t label = 0; label < spec.styles.size(); ++label) {
        // One stream per style keeps a style's samples independent of the style list order.
        std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                          fnv1a(spec.styles[label])};
        std::mt19937_64 rng(seq);
        for (std::size_t i = 0; i < spec.waveforms_per_style; ++i) {
            auto raw = synthesize(spec.styles[label], spec.length, rng);
            d.items.push_back(make_labeled(dsp::preprocess(raw, spec.length), label,
                                           spec.styles[label] + "/" + std::to_string(i)));
        }
    }
    return d;
}

} // namespace wavespace::data

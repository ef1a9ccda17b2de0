#include "wavespace/dsp/waveform.hpp"

#include <cmath>
#include <complex>
#include <numeric>

#include "wavespace/dsp/fft.hpp"
#include "wavespace/errors.hpp"

namespace wavespace::dsp {

namespace {

std::vector<double> normalize(std::vector<double> x)
{
    const double raw_energy = std::inner_product(x.begin(), x.end(), x.begin(), 0.0);
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    for (double& v : x) {
        v -= mean;
    }
    const double energy = std::inner_product(x.begin(), x.end(), x.begin(), 0.0);
    // Relative floor: a constant input leaves only rounding residue after centering.
    if (!std::isfinite(energy) || !(energy > 1e-20 * raw_energy)) {
        throw DegenerateInputError("waveform has no energy after DC removal");
    }
    const double scale = 1.0 / std::sqrt(energy);
    for (double& v : x) {
        v *= scale;
    }
    return x;
}

} // namespace

Waveform Waveform::from_normalized(std::vector<double> samples)
{
    if (samples.empty() || !satisfies_waveform_invariants(samples)) {
        throw RangeError("samples violate the zero-DC / unit-energy waveform invariants");
    }
    return Waveform(std::move(samples));
}

bool satisfies_waveform_invariants(std::span<const double> samples, double tolerance)
{
    double sum = 0.0;
    double energy = 0.0;
    for (double v : samples) {
        if (!std::isfinite(v)) {
            return false;
        }
        sum += v;
        energy += v * v;
    }
    return std::abs(sum) <= tolerance && std::abs(energy - 1.0) <= tolerance;
}

std::vector<double> resample_periodic(std::span<const double> raw, std::size_t target_length)
{
    const std::size_t in_len = raw.size();
    const std::size_t out_len = target_length;
    if (in_len < 2 || out_len < 2) {
        throw ShapeError("resample needs at least 2 input and output samples, got " +
                         std::to_string(in_len) + " -> " + std::to_string(out_len));
    }
    if (in_len == out_len) {
        return {raw.begin(), raw.end()};
    }
    const auto spectrum = dft(raw);
    std::vector<std::complex<double>> target(out_len);
    const double scale = static_cast<double>(out_len) / static_cast<double>(in_len);

    // Bins strictly below both Nyquist limits carry over as conjugate pairs.
    const std::size_t shared = std::min((in_len - 1) / 2, (out_len - 1) / 2);
    target[0] = spectrum[0] * scale;
    for (std::size_t k = 1; k <= shared; ++k) {
        target[k] = spectrum[k] * scale;
        target[out_len - k] = spectrum[in_len - k] * scale;
    }
    if (out_len < in_len && out_len % 2 == 0) {
        // Fold the pair at the new Nyquist bin into one real coefficient.
        const std::size_t k = out_len / 2;
        target[k] = (spectrum[k] + spectrum[in_len - k]) * scale;
    } else if (out_len > in_len && in_len % 2 == 0) {
        // Split the old Nyquist coefficient across the new conjugate pair.
        const std::size_t k = in_len / 2;
        target[k] = spectrum[k] * (scale * 0.5);
        target[out_len - k] = spectrum[k] * (scale * 0.5);
    }
    return idft_real<double>(target);
}

Waveform preprocess(std::span<const double> raw, std::size_t target_length)
{
    if (raw.size() < 2) {
        throw ShapeError("preprocess needs at least 2 samples, got " + std::to_string(raw.size()));
    }
    for (double v : raw) {
        if (!std::isfinite(v)) {
            throw DegenerateInputError("waveform contains non-finite samples");
        }
    }
    return Waveform::from_normalized(normalize(resample_periodic(raw, target_length)));
}

Waveform postprocess(std::span<const double> decoded)
{
    if (decoded.empty()) {
        throw DegenerateInputError("empty waveform");
    }
    return Waveform::from_normalized(normalize({decoded.begin(), decoded.end()}));
}

} // namespace wavespace::dsp

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace wavespace::dsp {

/// Tolerance on the zero-DC and unit-energy invariants.
inline constexpr double waveform_tolerance = 1e-6;

/// One single-cycle waveform with zero mean and unit energy.
class Waveform {
public:
    /// Wraps samples that already satisfy the invariants; throws RangeError otherwise.
    static Waveform from_normalized(std::vector<double> samples);

    std::span<const double> samples() const noexcept { return samples_; }
    std::size_t size() const noexcept { return samples_.size(); }
    double operator[](std::size_t i) const noexcept { return samples_[i]; }

    bool operator==(const Waveform&) const = default;

private:
    explicit Waveform(std::vector<double> samples) : samples_(std::move(samples)) {}

    std::vector<double> samples_;
};

/// True when the samples have zero sum and unit energy within `tolerance`.
bool satisfies_waveform_invariants(std::span<const double> samples,
                                   double tolerance = waveform_tolerance);

/// Band-limited resample to `target_length` via DFT bin truncation or
/// zero-padding, then DC removal, then unit-energy normalization.
Waveform preprocess(std::span<const double> raw, std::size_t target_length);

/// Subtract mean and scale to unit energy.
Waveform postprocess(std::span<const double> decoded);

/// Fourier-domain resampling of one periodic cycle (no normalization).
std::vector<double> resample_periodic(std::span<const double> raw, std::size_t target_length);

} // namespace wavespace::dsp

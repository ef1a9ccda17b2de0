#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>

#include "wavespace/dsp/waveform.hpp"

namespace wavespace {

/// Brightness, richness, fullness, undulation in [0, 1]; symmetry in (-pi, pi].
struct DescriptorVector {
    double brightness = 0.0;
    double richness = 0.0;
    double fullness = 0.0;
    double undulation = 0.0;
    double symmetry = 0.0;

    static constexpr std::size_t size = 5;

    std::array<double, size> to_array() const
    {
        return {brightness, richness, fullness, undulation, symmetry};
    }
    static DescriptorVector from_array(std::span<const double> v)
    {
        return {v[0], v[1], v[2], v[3], v[4]};
    }
    double& operator[](std::size_t i);
    double operator[](std::size_t i) const;

    bool operator==(const DescriptorVector&) const = default;
};

enum class Descriptor { brightness = 0, richness, fullness, undulation, symmetry };

inline constexpr std::array<std::string_view, DescriptorVector::size> descriptor_names{
    "brightness", "richness", "fullness", "undulation", "symmetry"};

/// Throws ConfigError on unknown names.
Descriptor parse_descriptor(std::string_view name);

namespace descriptors {

inline constexpr double default_compression = 5.5;

enum class Mode {
    normalized, ///< power-normalized sums, well-defined compression domain
    literal,    ///< raw sums clamped to [0, 1] before compression
};

/// log(d (e^k - 1) + 1) / k. Throws RangeError when d is outside [0, 1] or k <= 0.
double compress(double d, double k = default_compression);

/// Derivative of `compress` with respect to d.
double compress_derivative(double d, double k = default_compression);

DescriptorVector extract(std::span<const double> x, Mode mode = Mode::normalized,
                         double k = default_compression);

inline DescriptorVector extract(const dsp::Waveform& x, Mode mode = Mode::normalized,
                                double k = default_compression)
{
    return extract(x.samples(), mode, k);
}

/// Smaller angle between a and b, in [0, pi].
double symmetry_error(double a, double b);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

} // namespace descriptors
} // namespace wavespace

#include "wavespace/descriptors.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "wavespace/dsp/fft.hpp"
#include "wavespace/errors.hpp"

namespace wavespace {

double& DescriptorVector::operator[](std::size_t i)
{
    switch (i) {
    case 0: return brightness;
    case 1: return richness;
    case 2: return fullness;
    case 3: return undulation;
    case 4: return symmetry;
    default: throw RangeError("descriptor index " + std::to_string(i) + " out of range");
    }
}

double DescriptorVector::operator[](std::size_t i) const
{
    return const_cast<DescriptorVector&>(*this)[i];
}

Descriptor parse_descriptor(std::string_view name)
{
    for (std::size_t i = 0; i < descriptor_names.size(); ++i) {
        if (descriptor_names[i] == name) {
            return static_cast<Descriptor>(i);
        }
    }
    throw ConfigError("unknown descriptor '" + std::string(name) + "'");
}

namespace descriptors {

double compress(double d, double k)
{
    if (!(d >= 0.0 && d <= 1.0)) {
        throw RangeError("compression input " + std::to_string(d) + " outside [0, 1]");
    }
    if (!(k > 0.0)) {
        throw RangeError("compression strength must be positive");
    }
    return std::log1p(d * std::expm1(k)) / k;
}

double compress_derivative(double d, double k)
{
    const double g = std::expm1(k);
    return g / (k * (d * g + 1.0));
}

double wrap_angle(double a)
{
    constexpr double pi = std::numbers::pi;
    double w = std::remainder(a, 2.0 * pi); // [-pi, pi]
    if (w <= -pi) {
        w += 2.0 * pi;
    }
    return w;
}

double symmetry_error(double a, double b)
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double m = std::fmod(a - b, two_pi);
    if (m < 0.0) {
        m += two_pi;
    }
    return -std::abs(m - std::numbers::pi) + std::numbers::pi;
}

DescriptorVector extract(std::span<const double> x, Mode mode, double k)
{
    const std::size_t n = x.size();
    if (n < 4) {
        throw ShapeError("descriptor extraction needs at least 4 samples");
    }
    const auto spectrum = dsp::dft(x);
    const std::size_t half = n / 2;

    double total = 0.0;
    double weighted = 0.0;
    double odd = 0.0;
    std::complex<double> phasor_sum{0.0, 0.0};
    for (std::size_t b = 0; b <= half; ++b) {
        const double p = std::norm(spectrum[b]);
        total += p;
        weighted += static_cast<double>(b) * p;
        if (b % 2 == 1) {
            odd += p;
        }
        phasor_sum += spectrum[b];
    }

    double abs_steps = 0.0;
    double peak = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        abs_steps += std::abs(x[i + 1] - x[i]);
    }
    for (double v : x) {
        peak = std::max(peak, std::abs(v));
    }

    DescriptorVector out;
    out.fullness = total > 0.0 ? 1.0 - odd / total : 0.0;
    out.symmetry = wrap_angle(std::arg(phasor_sum));
    const double nyquist = static_cast<double>(half);

    if (mode == Mode::normalized) {
        const double centroid = total > 0.0 ? weighted / total : 0.0;
        double spread = 0.0;
        for (std::size_t b = 0; b <= half; ++b) {
            const double dk = static_cast<double>(b) - centroid;
            spread += dk * dk * std::norm(spectrum[b]);
        }
        spread = total > 0.0 ? spread / total : 0.0;
        out.brightness = compress(std::clamp(centroid / nyquist, 0.0, 1.0), k);
        out.richness = compress(std::clamp(std::sqrt(spread) / nyquist, 0.0, 1.0), k);
        const double mean_step = abs_steps / static_cast<double>(n - 1);
        const double zigzag = peak > 0.0 ? std::min(1.0, mean_step / (2.0 * peak)) : 0.0;
        out.undulation = compress(zigzag, k);
    } else {
        const double centroid = weighted; // un-normalized, as written
        double spread = 0.0;
        for (std::size_t b = 0; b <= half; ++b) {
            const double dk = static_cast<double>(b) - centroid;
            spread += dk * dk * std::norm(spectrum[b]);
        }
        out.brightness = compress(std::clamp(weighted, 0.0, 1.0), k);
        out.richness = compress(std::clamp(spread, 0.0, 1.0), k);
        out.undulation = compress(std::clamp(abs_steps, 0.0, 1.0), k) / static_cast<double>(n - 1);
    }
    return out;
}

} // namespace descriptors
} // namespace wavespace

#pragma once
// Independent reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "wavespace/descriptors.hpp"

namespace oracle {

inline std::vector<std::complex<double>> brute_dft(std::span<const double> x)
{
    const std::size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc{};
        for (std::size_t i = 0; i < n; ++i) {
            const double a = -2.0 * std::numbers::pi * static_cast<double>((k * i) % n) /
                             static_cast<double>(n);
            acc += x[i] * std::complex<double>(std::cos(a), std::sin(a));
        }
        out[k] = acc;
    }
    return out;
}

inline double sigma(double d, double k = 5.5)
{
    return std::log(d * (std::exp(k) - 1.0) + 1.0) / k;
}

/// Normalized-mode descriptors by direct summation over a brute-force DFT.
inline wavespace::DescriptorVector brute_descriptors(std::span<const double> x, double k = 5.5)
{
    const std::size_t n = x.size();
    const auto X = brute_dft(x);
    const std::size_t h = n / 2;
    double total = 0, cen = 0, odd = 0;
    std::complex<double> z{};
    for (std::size_t b = 0; b <= h; ++b) {
        const double p = std::norm(X[b]);
        total += p;
        cen += b * p;
        if (b % 2 == 1) odd += p;
        z += X[b];
    }
    cen /= total;
    double spread = 0;
    for (std::size_t b = 0; b <= h; ++b) {
        spread += (b - cen) * (b - cen) * std::norm(X[b]);
    }
    spread /= total;
    double steps = 0, peak = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) steps += std::abs(x[i + 1] - x[i]);
    for (double v : x) peak = std::max(peak, std::abs(v));
    wavespace::DescriptorVector d;
    d.brightness = sigma(cen / h, k);
    d.richness = sigma(std::sqrt(spread) / h, k);
    d.fullness = 1.0 - odd / total;
    d.undulation = sigma(std::min(1.0, steps / (n - 1) / (2.0 * peak)), k);
    d.symmetry = std::atan2(z.imag(), z.real());
    if (d.symmetry <= -std::numbers::pi) d.symmetry += 2.0 * std::numbers::pi;
    return d;
}

/// Zero-mean, unit-energy Gaussian noise waveform.
inline std::vector<double> random_waveform(std::size_t n, std::mt19937_64& rng)
{
    std::normal_distribution<double> nd;
    std::vector<double> x(n);
    double mean = 0;
    for (double& v : x) {
        v = nd(rng);
        mean += v;
    }
    mean /= n;
    double e = 0;
    for (double& v : x) {
        v -= mean;
        e += v * v;
    }
    for (double& v : x) v /= std::sqrt(e);
    return x;
}

} // namespace oracle

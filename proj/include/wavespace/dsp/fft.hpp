#pragma once

#include <complex>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace wavespace::dsp {

namespace detail {

template <class T>
Eigen::FFT<T>& fft_engine()
{
    // Plans are cached per engine; one engine per thread keeps the cache unshared.
    thread_local Eigen::FFT<T> engine;
    return engine;
}

} // namespace detail

/// Unnormalized forward DFT of a real sequence, all n bins.
template <class T>
std::vector<std::complex<T>> dft(std::span<const T> x)
{
    std::vector<T> in(x.begin(), x.end());
    std::vector<std::complex<T>> out;
    auto& engine = detail::fft_engine<T>();
    engine.ClearFlag(Eigen::FFT<T>::HalfSpectrum);
    engine.fwd(out, in);
    return out;
}

/// Unnormalized forward DFT of a complex sequence.
template <class T>
std::vector<std::complex<T>> dft(std::span<const std::complex<T>> x)
{
    std::vector<std::complex<T>> in(x.begin(), x.end());
    std::vector<std::complex<T>> out;
    detail::fft_engine<T>().fwd(out, in);
    return out;
}

/// Inverse DFT (1/n scaled) of a full-length spectrum, real part only.
template <class T>
std::vector<T> idft_real(std::span<const std::complex<T>> spectrum)
{
    std::vector<std::complex<T>> in(spectrum.begin(), spectrum.end());
    std::vector<std::complex<T>> out;
    detail::fft_engine<T>().inv(out, in);
    std::vector<T> result(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        result[i] = out[i].real();
    }
    return result;
}

} // namespace wavespace::dsp

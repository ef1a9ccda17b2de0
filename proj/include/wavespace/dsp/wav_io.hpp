#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace wavespace::dsp {

enum class SampleEncoding { pcm16, float32 };

struct WavData {
    std::uint32_t sample_rate = 48000;
    SampleEncoding encoding = SampleEncoding::float32;
    std::vector<double> samples; // mono; multi-channel input is averaged
};

/// Reads PCM16 or IEEE float32 RIFF/WAVE files. Throws FormatError.
WavData read_wav(const std::filesystem::path& path);

void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               std::uint32_t sample_rate, SampleEncoding encoding = SampleEncoding::float32);

} // namespace wavespace::dsp

#include "wavespace/dsp/wav_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "wavespace/errors.hpp"

namespace wavespace::dsp {

namespace {

constexpr std::uint16_t format_pcm = 1;
constexpr std::uint16_t format_float = 3;
constexpr std::uint16_t format_extensible = 0xFFFE;

std::uint32_t u32_at(const std::vector<unsigned char>& b, std::size_t at)
{
    return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
           static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

std::uint16_t u16_at(const std::vector<unsigned char>& b, std::size_t at)
{
    return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}

void put_u32(std::vector<unsigned char>& b, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) {
        b.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
}

void put_u16(std::vector<unsigned char>& b, std::uint16_t v)
{
    b.push_back(static_cast<unsigned char>(v));
    b.push_back(static_cast<unsigned char>(v >> 8));
}

void put_tag(std::vector<unsigned char>& b, const char* tag)
{
    b.insert(b.end(), tag, tag + 4);
}

} // namespace

WavData read_wav(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                           std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw FormatError(path.string() + ": not a RIFF/WAVE file");
    }

    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint16_t bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_size = 0;

    std::size_t at = 12;
    while (at + 8 <= bytes.size()) {
        const std::uint32_t size = u32_at(bytes, at + 4);
        const std::size_t body = at + 8;
        if (body + size > bytes.size()) {
            throw FormatError(path.string() + ": truncated chunk");
        }
        if (std::memcmp(bytes.data() + at, "fmt ", 4) == 0) {
            if (size < 16) {
                throw FormatError(path.string() + ": short fmt chunk");
            }
            format = u16_at(bytes, body);
            channels = u16_at(bytes, body + 2);
            rate = u32_at(bytes, body + 4);
            bits = u16_at(bytes, body + 14);
            if (format == format_extensible && size >= 26) {
                format = u16_at(bytes, body + 24);
            }
        } else if (std::memcmp(bytes.data() + at, "data", 4) == 0) {
            data = bytes.data() + body;
            data_size = size;
        }
        at = body + size + (size & 1U);
    }
    if (channels == 0 || data == nullptr) {
        throw FormatError(path.string() + ": missing fmt or data chunk");
    }

    WavData out;
    out.sample_rate = rate;
    std::size_t sample_bytes = 0;
    if (format == format_pcm && bits == 16) {
        out.encoding = SampleEncoding::pcm16;
        sample_bytes = 2;
    } else if (format == format_float && bits == 32) {
        out.encoding = SampleEncoding::float32;
        sample_bytes = 4;
    } else {
        throw FormatError(path.string() + ": unsupported encoding (format " +
                          std::to_string(format) + ", " + std::to_string(bits) + " bits)");
    }

    const std::size_t frames = data_size / (sample_bytes * channels);
    out.samples.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            const unsigned char* p = data + (f * channels + c) * sample_bytes;
            if (sample_bytes == 2) {
                const auto v = static_cast<std::int16_t>(p[0] | p[1] << 8);
                acc += static_cast<double>(v) / 32768.0;
            } else {
                float v;
                std::memcpy(&v, p, 4);
                acc += static_cast<double>(v);
            }
        }
        out.samples[f] = acc / channels;
    }
    return out;
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               std::uint32_t sample_rate, SampleEncoding encoding)
{
    const std::uint16_t bits = encoding == SampleEncoding::pcm16 ? 16 : 32;
    const std::uint32_t bytes_per_sample = bits / 8;
    const auto data_size = static_cast<std::uint32_t>(samples.size() * bytes_per_sample);

    std::vector<unsigned char> b;
    b.reserve(44 + data_size);
    put_tag(b, "RIFF");
    put_u32(b, 36 + data_size);
    put_tag(b, "WAVE");
    put_tag(b, "fmt ");
    put_u32(b, 16);
    put_u16(b, encoding == SampleEncoding::pcm16 ? format_pcm : format_float);
    put_u16(b, 1);
    put_u32(b, sample_rate);
    put_u32(b, sample_rate * bytes_per_sample);
    put_u16(b, static_cast<std::uint16_t>(bytes_per_sample));
    put_u16(b, bits);
    put_tag(b, "data");
    put_u32(b, data_size);
    for (double s : samples) {
        if (encoding == SampleEncoding::pcm16) {
            const double clamped = std::clamp(s, -1.0, 32767.0 / 32768.0);
            put_u16(b, static_cast<std::uint16_t>(
                           static_cast<std::int16_t>(std::lround(clamped * 32768.0))));
        } else {
            const auto v = static_cast<float>(s);
            std::uint32_t bitsv;
            std::memcpy(&bitsv, &v, 4);
            put_u32(b, bitsv);
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

} // namespace wavespace::dsp

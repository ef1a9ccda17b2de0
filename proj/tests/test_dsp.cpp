#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "wavespace/dsp/wav_io.hpp"
#include "wavespace/dsp/waveform.hpp"
#include "wavespace/dsp/wavetable.hpp"
#include "wavespace/errors.hpp"

using namespace wavespace;
using namespace wavespace::dsp;

namespace {

constexpr double pi = std::numbers::pi;

std::vector<double> cosine(std::size_t n, double bin, double phase = 0.0)
{
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::cos(2.0 * pi * bin * static_cast<double>(i) / static_cast<double>(n) + phase);
    }
    return x;
}

struct Harmonic {
    int k;
    double amp;
    double phase;
};

std::vector<double> synth(std::size_t n, const std::vector<Harmonic>& hs)
{
    std::vector<double> x(n, 0.0);
    for (const auto& h : hs) {
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += h.amp * std::cos(2.0 * pi * h.k * static_cast<double>(i) / n + h.phase);
        }
    }
    return x;
}

Wavetable small_table()
{
    return Wavetable({0.0, 1.0, 2.0, 3.0}, 2, 2);
}

} // namespace

TEST_CASE("read: integer indices and bilinear midpoints")
{
    const auto t = small_table();
    CHECK(read(t, 0.0, 0.0) == 0.0);
    CHECK(read(t, 0.5, 0.5) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(read(t, 1.0, 1.5) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK_THROWS_AS(read(t, 1.5, 0.0), RangeError);
    CHECK_THROWS_AS(read(t, -0.1, 0.0), RangeError);
}

TEST_CASE("read is exact at every integer lattice point of random tables")
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng() % 6, n = 2 + rng() % 9;
        std::vector<double> data(m * n);
        for (double& v : data) v = u(rng);
        const Wavetable t(data, m, n);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                REQUIRE(read(t, static_cast<double>(i), static_cast<double>(j)) ==
                        data[i * n + j]);
            }
        }
    }
}

TEST_CASE("read is monotone between lattice points when corners are monotone")
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        // corners increasing along both axes
        const double a = u(rng), b = a + u(rng), c = a + u(rng);
        const double d = std::max(b, c) + u(rng);
        const Wavetable t({a, b, c, d}, 2, 2);
        double prev_row = -1e9;
        for (int s = 0; s <= 20; ++s) {
            const double r = s / 20.0;
            double prev_col = -1e9;
            for (int q = 0; q <= 20; ++q) {
                const double col = q / 20.0; // stay within [0, 1]: no wrap
                const double v = read(t, r, col);
                CHECK(v >= prev_col - 1e-12);
                prev_col = v;
            }
            CHECK(read(t, r, 0.3) >= prev_row - 1e-12);
            prev_row = read(t, r, 0.3);
        }
    }
}

TEST_CASE("advance_phase examples")
{
    PhaseState st{0.0, 8.0, 4};
    std::vector<double> idx;
    for (int i = 0; i < 6; ++i) idx.push_back(advance_phase(st, 2.0));
    CHECK(idx == std::vector<double>{0, 1, 2, 3, 0, 1});

    PhaseState frozen{0.0, 8.0, 4};
    for (int i = 0; i < 5; ++i) CHECK(advance_phase(frozen, 0.0) == 0.0);

    PhaseState a4{0.0, 48000.0, 1024};
    advance_phase(a4, 440.0);
    CHECK(a4.accumulator == doctest::Approx(1024.0 * 440.0 / 48000.0).epsilon(1e-12));
    CHECK(a4.accumulator == doctest::Approx(9.3867).epsilon(1e-4));

    PhaseState neg{0.0, 8.0, 4};
    advance_phase(neg, -3.0);
    CHECK(neg.accumulator == 0.0);
}

TEST_CASE("advance_phase matches the closed form over 1e6 samples")
{
    for (double f0 : {440.0, 1234.567, 55.0, 23999.0}) {
        PhaseState st{0.0, 48000.0, 1024};
        const std::size_t count = 1000000;
        for (std::size_t i = 0; i < count; ++i) advance_phase(st, f0);
        const double closed = std::fmod(static_cast<double>(count) * 1024.0 * f0 / 48000.0, 1024.0);
        double diff = std::abs(st.accumulator - closed);
        diff = std::min(diff, 1024.0 - diff);
        CHECK(diff < 1e-6);
    }
}

TEST_CASE("render examples")
{
    const std::size_t n = 16;
    const auto cos_row = cosine(n, 1.0);
    const Wavetable single(cos_row, 1, n);
    const double fs = 1600.0;
    const std::vector<double> rows(3 * n, 0.0), f0(3 * n, fs / n);
    const auto out = render(single, rows, f0, fs, 3 * n);
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i] == doctest::Approx(cos_row[i % n]).epsilon(1e-12));
    }

    std::vector<double> two = cos_row;
    const auto other = cosine(n, 2.0);
    two.insert(two.end(), other.begin(), other.end());
    const Wavetable morph(two, 2, n);
    std::vector<double> ramp(n);
    for (std::size_t i = 0; i < n; ++i) ramp[i] = static_cast<double>(i) / (n - 1);
    const std::vector<double> f(n, fs / n);
    const auto m = render(morph, ramp, f, fs, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double expect = (1.0 - ramp[i]) * cos_row[i] + ramp[i] * other[i];
        CHECK(m[i] == doctest::Approx(expect).epsilon(1e-12));
    }

    CHECK(render(single, {}, {}, fs, 0).empty());
}

TEST_CASE("preprocess: cosine survives downsampling")
{
    const auto w = preprocess(cosine(2048, 1.0), 1024);
    REQUIRE(w.size() == 1024);
    CHECK(satisfies_waveform_invariants(w.samples()));
    const double amp = std::sqrt(2.0 / 1024.0);
    const auto expect = cosine(1024, 1.0);
    for (std::size_t i = 0; i < 1024; ++i) {
        CHECK(w[i] == doctest::Approx(amp * expect[i]).epsilon(1e-9));
    }
}

TEST_CASE("preprocess: errors and frame sizes")
{
    CHECK_THROWS_AS(preprocess(std::vector<double>(300, 0.7), 1024), DegenerateInputError);
    CHECK_THROWS_AS(preprocess(std::vector<double>(300, 0.0), 1024), DegenerateInputError);
    CHECK_THROWS_AS(preprocess(std::vector<double>(1, 1.0), 1024), ShapeError);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    std::vector<double> frame(256);
    for (double& v : frame) v = nd(rng);
    const auto w = preprocess(frame, 1024);
    CHECK(w.size() == 1024);
    CHECK(satisfies_waveform_invariants(w.samples()));
}

TEST_CASE("preprocess is idempotent")
{
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd;
    for (std::size_t len : {256u, 600u, 1024u, 2048u, 777u}) {
        std::vector<double> raw(len);
        for (double& v : raw) v = nd(rng) + 0.3;
        const auto once = preprocess(raw, 1024);
        const auto twice = preprocess(once.samples(), 1024);
        for (std::size_t i = 0; i < 1024; ++i) {
            CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("preprocess preserves harmonics below the target Nyquist")
{
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t in_len : {2048u, 256u, 600u}) {
        std::vector<Harmonic> hs;
        const int top = static_cast<int>(std::min<std::size_t>(in_len, 1024) / 2) - 1;
        for (int k = 1; k <= top; k += 1 + static_cast<int>(rng() % 7)) {
            hs.push_back({k, u(rng), 2.0 * pi * u(rng)});
        }
        const auto got = preprocess(synth(in_len, hs), 1024);
        const auto expect = postprocess(synth(1024, hs));
        for (std::size_t i = 0; i < 1024; ++i) {
            REQUIRE(std::abs(got[i] - expect[i]) < 1e-6);
        }
    }
}

TEST_CASE("postprocess examples")
{
    CHECK_THROWS_AS(postprocess(std::vector<double>{1, 1, 1, 1}), DegenerateInputError);
    const auto w = postprocess(std::vector<double>{2, 0, -2, 0});
    const double c = std::sqrt(0.5);
    CHECK(w[0] == doctest::Approx(c));
    CHECK(w[1] == doctest::Approx(0.0));
    CHECK(w[2] == doctest::Approx(-c));
    std::vector<double> shifted{0.3 + 1.0, 0.3 - 0.5, 0.3 + 0.25, 0.3 - 0.75};
    const auto s = postprocess(shifted);
    const double mean = std::accumulate(s.samples().begin(), s.samples().end(), 0.0) / 4.0;
    CHECK(std::abs(mean) < 1e-9);
}

TEST_CASE("Waveform::from_normalized rejects invariant violations")
{
    CHECK_THROWS_AS(Waveform::from_normalized({1.0, 0.0}), RangeError);
    CHECK_NOTHROW(Waveform::from_normalized({std::sqrt(0.5), -std::sqrt(0.5)}));
}

TEST_CASE("wavetable construction errors")
{
    CHECK_THROWS_AS(Wavetable(std::vector<double>(5), 2, 3), ShapeError);
    std::vector<Waveform> rows;
    CHECK_THROWS_AS(Wavetable(std::span<const Waveform>(rows)), ShapeError);
}

TEST_CASE("WAV float and PCM16 encodings agree within quantization")
{
    const auto dir = std::filesystem::temp_directory_path();
    std::vector<double> signal(4 * 256);
    for (std::size_t i = 0; i < signal.size(); ++i) {
        signal[i] = 0.5 * std::sin(2.0 * pi * i / 256.0) + 0.2 * std::cos(6.0 * pi * i / 256.0);
    }
    write_wav(dir / "ws_f32.wav", signal, 44100, SampleEncoding::float32);
    write_wav(dir / "ws_i16.wav", signal, 44100, SampleEncoding::pcm16);
    const auto f = read_wav(dir / "ws_f32.wav");
    const auto p = read_wav(dir / "ws_i16.wav");
    CHECK(f.sample_rate == 44100);
    CHECK(f.encoding == SampleEncoding::float32);
    CHECK(p.encoding == SampleEncoding::pcm16);
    REQUIRE(f.samples.size() == signal.size());
    REQUIRE(p.samples.size() == signal.size());
    for (std::size_t i = 0; i < signal.size(); ++i) {
        CHECK(std::abs(f.samples[i] - signal[i]) < 1e-7);
        CHECK(std::abs(p.samples[i] - signal[i]) < 1.0 / 32768.0);
    }
    std::ofstream(dir / "ws_bad.wav") << "not a wav";
    CHECK_THROWS_AS(read_wav(dir / "ws_bad.wav"), FormatError);
}

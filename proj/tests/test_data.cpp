#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <numeric>
#include <set>

#include "wavespace/data/dataset.hpp"
#include "wavespace/dsp/fft.hpp"
#include "wavespace/dsp/wav_io.hpp"
#include "wavespace/errors.hpp"

using namespace wavespace;
using namespace wavespace::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / "wavespace_test_data" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

DatasetSpec small_spec(std::vector<std::string> styles, std::size_t per_style)
{
    DatasetSpec s;
    s.styles = std::move(styles);
    s.waveforms_per_style = per_style;
    return s;
}

std::vector<double> magnitude(std::span<const double> x)
{
    const auto bins = dsp::dft<double>(x);
    std::vector<double> m(x.size() / 2 + 1);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = std::abs(bins[k]);
    return m;
}

double nearest_centroid_accuracy(const Dataset& d)
{
    const std::size_t styles = d.styles.size();
    std::vector<std::vector<double>> spectra;
    for (const auto& it : d.items) spectra.push_back(magnitude(it.waveform.samples()));
    const std::size_t bins = spectra.front().size();
    std::vector<std::vector<double>> centroid(styles, std::vector<double>(bins, 0.0));
    const auto counts = d.style_counts();
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t k = 0; k < bins; ++k) centroid[d.items[i].style_label][k] += spectra[i][k] / counts[d.items[i].style_label];
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::size_t best = 0;
        double best_dist = INFINITY;
        for (std::size_t s = 0; s < styles; ++s) {
            double dist = 0;
            for (std::size_t k = 0; k < bins; ++k) dist += (spectra[i][k] - centroid[s][k]) * (spectra[i][k] - centroid[s][k]);
            if (dist < best_dist) {
                best_dist = dist;
                best = s;
            }
        }
        correct += best == d.items[i].style_label;
    }
    return static_cast<double>(correct) / d.size();
}

void check_waveform_invariants(const dsp::Waveform& w)
{
    double sum = 0, energy = 0;
    for (double v : w.samples()) {
        REQUIRE(std::isfinite(v));
        sum += v;
        energy += v * v;
    }
    CHECK(std::abs(sum) < 1e-9);
    CHECK(energy == doctest::Approx(1.0).epsilon(1e-9));
}

std::vector<double> wavetable_content(std::size_t frames, std::size_t frame_length, double seed)
{
    std::vector<double> x(frames * frame_length);
    for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t i = 0; i < frame_length; ++i) {
            const double t = static_cast<double>(i) / frame_length;
            x[f * frame_length + i] =
                0.6 * std::sin(2 * std::numbers::pi * t) + 0.3 * std::sin(2 * std::numbers::pi * (f % 7 + 2) * t + seed);
        }
    }
    return x;
}

} // namespace

TEST_CASE("synthetic generation is deterministic")
{
    const DatasetSpec spec;
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    CHECK(a.size() == 512);
    CHECK(a.items == b.items);
    CHECK(a.style_counts() == std::vector<std::size_t>{128, 128, 128, 128});
    auto other = spec;
    other.seed = 8;
    CHECK_FALSE(generate_synthetic(other).items == a.items);
}

TEST_CASE("every synthetic item satisfies the waveform invariants and carries its descriptors")
{
    const auto d = generate_synthetic(small_spec(synthetic_families(), 16));
    CHECK(d.size() == 16 * 8);
    std::set<std::string> ids;
    for (const auto& it : d.items) {
        check_waveform_invariants(it.waveform);
        CHECK(it.waveform.size() == 1024);
        const auto extracted = descriptors::extract(it.waveform.samples());
        for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(extracted[k] - it.descriptors[k]) < 1e-9);
        ids.insert(it.source_id);
    }
    CHECK(ids.size() == d.size());
}

TEST_CASE("square family has almost no even harmonics, saw about a fifth")
{
    const auto d = generate_synthetic(small_spec({"square", "saw"}, 128));
    for (const auto& it : d.items) {
        if (it.style_label == 0) CHECK(it.descriptors.fullness <= 0.05);
        else {
            CHECK(it.descriptors.fullness >= 0.15);
            CHECK(it.descriptors.fullness <= 0.35);
        }
    }
}

TEST_CASE("nearest centroid separates the default styles")
{
    CHECK(nearest_centroid_accuracy(generate_synthetic(DatasetSpec{})) >= 0.99);
}

TEST_CASE("nearest centroid separates all families")
{
    CHECK(nearest_centroid_accuracy(generate_synthetic(small_spec(synthetic_families(), 64))) >= 0.99);
}

TEST_CASE("unknown families are rejected")
{
    CHECK_THROWS_AS(generate_synthetic(small_spec({"saw", "theremin"}, 4)), ConfigError);
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(synthesize("theremin", 1024, rng), ConfigError);
}

TEST_CASE("kfold is stratified and partitions the dataset")
{
    const auto d = generate_synthetic(small_spec({"saw", "square", "triangle"}, 100));
    std::vector<std::size_t> all_test;
    for (std::size_t f = 0; f < 5; ++f) {
        const auto s = kfold(d, 5, f, 3);
        CHECK(s.train.size() == 240);
        CHECK(s.test.size() == 60);
        std::vector<std::size_t> per_style(3, 0);
        for (auto i : s.test) ++per_style[d.items[i].style_label];
        CHECK(per_style == std::vector<std::size_t>{20, 20, 20});
        std::vector<std::size_t> both;
        std::set_intersection(s.train.begin(), s.train.end(), s.test.begin(), s.test.end(), std::back_inserter(both));
        CHECK(both.empty());
        CHECK(s.train.size() + s.test.size() == d.size());
        all_test.insert(all_test.end(), s.test.begin(), s.test.end());
    }
    std::sort(all_test.begin(), all_test.end());
    std::vector<std::size_t> every(d.size());
    std::iota(every.begin(), every.end(), 0);
    CHECK(all_test == every);
    CHECK(kfold(d, 5, 2, 3).test == kfold(d, 5, 2, 3).test);
    CHECK_FALSE(kfold(d, 5, 2, 3).test == kfold(d, 5, 2, 4).test);
}

TEST_CASE("kfold errors")
{
    const auto d = generate_synthetic(small_spec({"saw", "square"}, 4));
    CHECK_THROWS_AS(kfold(d, 5, 0, 0), ConfigError);
    CHECK_THROWS_AS(kfold(d, 2, 2, 0), ConfigError);
}

TEST_CASE("waveedit ingestion splits frames")
{
    const auto dir = temp_dir("frames");
    dsp::write_wav(dir / "a.wav", wavetable_content(64, 256, 0.0), 44100);
    const auto r = ingest_waveedit({dir / "a.wav"}, IngestOptions{});
    CHECK(r.dataset.size() == 64);
    CHECK(r.dropped_silent == 0);
    CHECK(r.dataset.styles.size() == 2);
    for (const auto& it : r.dataset.items) {
        CHECK(it.waveform.size() == 1024);
        check_waveform_invariants(it.waveform);
    }
}

TEST_CASE("pcm16 and float encodings ingest to the same waveforms")
{
    const auto dir = temp_dir("encodings");
    const auto content = wavetable_content(8, 256, 0.5);
    dsp::write_wav(dir / "f.wav", content, 44100, dsp::SampleEncoding::float32);
    dsp::write_wav(dir / "i.wav", content, 44100, dsp::SampleEncoding::pcm16);
    const auto a = ingest_waveedit({dir / "f.wav"}, IngestOptions{});
    const auto b = ingest_waveedit({dir / "i.wav"}, IngestOptions{});
    REQUIRE(a.dataset.size() == b.dataset.size());
    double worst = 0;
    for (std::size_t i = 0; i < a.dataset.size(); ++i)
        for (std::size_t k = 0; k < 1024; ++k)
            worst = std::max(worst, std::abs(a.dataset.items[i].waveform.samples()[k] -
                                             b.dataset.items[i].waveform.samples()[k]));
    CHECK(worst < 1e-4);
}

TEST_CASE("non-divisible wav length names the file")
{
    const auto dir = temp_dir("bad");
    dsp::write_wav(dir / "odd_length.wav", std::vector<double>(300, 0.1), 44100);
    try {
        ingest_waveedit({dir / "odd_length.wav"}, IngestOptions{});
        FAIL("expected an ingestion error");
    } catch (const IngestionError& e) {
        CHECK(std::string(e.what()).find("odd_length.wav") != std::string::npos);
    }
}

TEST_CASE("silent frames are dropped and counted")
{
    const auto dir = temp_dir("silent");
    auto content = wavetable_content(4, 256, 0.0);
    std::fill(content.begin() + 256, content.begin() + 512, 0.0);
    std::fill(content.begin() + 768, content.end(), 0.25); // constant: zero after DC removal
    dsp::write_wav(dir / "s.wav", content, 44100);
    const auto r = ingest_waveedit({dir / "s.wav"}, IngestOptions{});
    CHECK(r.dataset.size() == 2);
    CHECK(r.dropped_silent == 2);
}

TEST_CASE("random style split is reproducible and per-directory follows folders")
{
    const auto dir = temp_dir("split");
    fs::create_directories(dir / "bright");
    fs::create_directories(dir / "dark");
    dsp::write_wav(dir / "bright" / "x.wav", wavetable_content(16, 256, 0.1), 44100);
    dsp::write_wav(dir / "dark" / "y.wav", wavetable_content(8, 256, 0.2), 44100);
    const std::vector<fs::path> paths{dir / "dark" / "y.wav", dir / "bright" / "x.wav"};
    IngestOptions opts;
    opts.seed = 5;
    const auto a = ingest_waveedit(paths, opts);
    const auto b = ingest_waveedit(paths, opts);
    CHECK(a.dataset.items == b.dataset.items);
    const auto counts = a.dataset.style_counts();
    CHECK(counts[0] + counts[1] == 24);
    CHECK(counts[0] > 0);
    CHECK(counts[1] > 0);

    opts.rule = StyleRule::per_directory;
    const auto c = ingest_waveedit(paths, opts);
    CHECK(c.dataset.styles == std::vector<std::string>{"bright", "dark"});
    CHECK(c.dataset.style_counts() == std::vector<std::size_t>{16, 8});
}

TEST_CASE("dataset cache round trip")
{
    const auto dir = temp_dir("cache");
    const auto d = generate_synthetic(small_spec({"pulse", "formant"}, 10));
    save_dataset(dir / "d.wsds", d);
    const auto e = load_dataset(dir / "d.wsds");
    CHECK(e.styles == d.styles);
    REQUIRE(e.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(e.items[i].style_label == d.items[i].style_label);
        CHECK(e.items[i].source_id == d.items[i].source_id);
        check_waveform_invariants(e.items[i].waveform);
        for (std::size_t k = 0; k < 1024; ++k)
            CHECK(std::abs(e.items[i].waveform.samples()[k] - d.items[i].waveform.samples()[k]) < 1e-6);
        for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(e.items[i].descriptors[k] - d.items[i].descriptors[k]) < 1e-4);
    }
    CHECK(e.manifest.at("spec") == d.manifest.at("spec"));

    std::ofstream(dir / "junk.wsds") << "not a dataset";
    CHECK_THROWS_AS(load_dataset(dir / "junk.wsds"), FormatError);
    CHECK_THROWS_AS(load_dataset(dir / "absent.wsds"), Error);
}

TEST_CASE("dataset spec json")
{
    DatasetSpec s;
    s.styles = {"fm-bell"};
    s.seed = 99;
    nlohmann::json j = s;
    const auto t = j.get<DatasetSpec>();
    CHECK(t.styles == s.styles);
    CHECK(t.seed == 99);
    CHECK(t.fold_count == 5);
}

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavespace/descriptors.hpp"
#include "wavespace/dsp/waveform.hpp"

namespace wavespace::data {

struct LabeledWaveform {
    dsp::Waveform waveform;
    std::size_t style_label = 0;
    DescriptorVector descriptors;
    std::string source_id;

    bool operator==(const LabeledWaveform&) const = default;
};

/// Builds an item and fills its descriptors by extraction.
LabeledWaveform make_labeled(dsp::Waveform w, std::size_t label, std::string source_id);

struct Dataset {
    std::vector<std::string> styles;
    std::vector<LabeledWaveform> items;
    nlohmann::json manifest;

    std::size_t size() const noexcept { return items.size(); }
    std::size_t waveform_length() const { return items.empty() ? 0 : items.front().waveform.size(); }
    std::vector<std::size_t> style_counts() const;
};

enum class Source { synthetic, waveedit };

struct DatasetSpec {
    Source source = Source::synthetic;
    std::vector<std::string> styles{"saw", "square", "pulse", "formant"};
    std::size_t waveforms_per_style = 128;
    std::uint64_t seed = 7;
    std::size_t fold_count = 5;
    std::size_t fold_index = 0;
    std::size_t length = 1024;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

/// saw, square, triangle, pulse, harmonic-stack, fm-bell, formant, soft-noise.
const std::vector<std::string>& synthetic_families();

/// One raw, un-normalized cycle of `family` with per-call jitter drawn from rng.
/// Throws ConfigError for unknown families.
std::vector<double> synthesize(const std::string& family, std::size_t length, std::mt19937_64& rng);

/// Deterministic in spec.seed; every item passes preprocess.
Dataset generate_synthetic(const DatasetSpec& spec);

enum class StyleRule {
    random_split, ///< seeded random assignment of frames to `random_styles` groups
    per_directory ///< one style per parent directory, sorted by name
};

struct IngestOptions {
    std::size_t frame_length = 256;
    std::size_t length = 1024;
    StyleRule rule = StyleRule::random_split;
    std::size_t random_styles = 2;
    std::uint64_t seed = 0;
};

struct IngestResult {
    Dataset dataset;
    std::size_t dropped_silent = 0;
};

/// Splits WaveEdit-style wavetable WAVs into frames and preprocesses each one.
/// Throws IngestionError naming the file when its length is not a multiple
/// of the frame length.
IngestResult ingest_waveedit(const std::vector<std::filesystem::path>& paths,
                             const IngestOptions& options);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Stratified fold split by style; item order within a style is shuffled by seed.
/// Throws ConfigError when fold_index >= fold_count or a style has fewer
/// samples than folds.
Split kfold(const Dataset& dataset, std::size_t fold_count, std::size_t fold_index,
            std::uint64_t seed);

/// Cache file: "WSDS", u32 version, u64 manifest size, JSON manifest, then per
/// item N f32 samples and 5 f32 descriptors.
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

} // namespace wavespace::data

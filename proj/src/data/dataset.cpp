#include "wavespace/data/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "wavespace/dsp/wav_io.hpp"
#include "wavespace/errors.hpp"

namespace wavespace::data {

LabeledWaveform make_labeled(dsp::Waveform w, std::size_t label, std::string source_id)
{
    LabeledWaveform item{std::move(w), label, {}, std::move(source_id)};
    item.descriptors = descriptors::extract(item.waveform.samples());
    return item;
}

std::vector<std::size_t> Dataset::style_counts() const
{
    std::vector<std::size_t> counts(styles.size(), 0);
    for (const auto& it : items) ++counts.at(it.style_label);
    return counts;
}

void to_json(nlohmann::json& j, const DatasetSpec& s)
{
    j = {{"source", s.source == Source::synthetic ? "synthetic" : "waveedit"},
         {"styles", s.styles},
         {"waveforms_per_style", s.waveforms_per_style},
         {"seed", s.seed},
         {"fold_count", s.fold_count},
         {"fold_index", s.fold_index},
         {"length", s.length}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s)
{
    const auto source = j.at("source").get<std::string>();
    if (source != "synthetic" && source != "waveedit") throw ConfigError("unknown dataset source " + source);
    s.source = source == "synthetic" ? Source::synthetic : Source::waveedit;
    j.at("styles").get_to(s.styles);
    j.at("waveforms_per_style").get_to(s.waveforms_per_style);
    j.at("seed").get_to(s.seed);
    j.at("fold_count").get_to(s.fold_count);
    j.at("fold_index").get_to(s.fold_index);
    j.at("length").get_to(s.length);
}

IngestResult ingest_waveedit(const std::vector<std::filesystem::path>& paths,
                             const IngestOptions& options)
{
    if (options.frame_length < 2) throw ConfigError("frame length must be at least 2");
    struct Frame {
        dsp::Waveform waveform;
        std::string source;
        std::string group;
    };
    std::vector<Frame> frames;
    IngestResult result;
    for (const auto& path : paths) {
        dsp::WavData wav;
        try {
            wav = dsp::read_wav(path);
        } catch (const FormatError& e) {
            throw IngestionError(path.string() + ": " + e.what());
        }
        if (wav.samples.empty() || wav.samples.size() % options.frame_length != 0) {
            throw IngestionError(path.string() + ": " + std::to_string(wav.samples.size()) +
                                 " samples is not a multiple of the frame length " +
                                 std::to_string(options.frame_length));
        }
        const std::size_t count = wav.samples.size() / options.frame_length;
        for (std::size_t f = 0; f < count; ++f) {
            const std::span<const double> raw(wav.samples.data() + f * options.frame_length,
                                              options.frame_length);
            if (!std::all_of(raw.begin(), raw.end(), [](double v) { return std::isfinite(v); })) {
                ++result.dropped_silent;
                continue;
            }
            try {
                frames.push_back({dsp::preprocess(raw, options.length),
                                  path.filename().string() + "#" + std::to_string(f),
                                  path.parent_path().filename().string()});
            } catch (const DegenerateInputError&) {
                ++result.dropped_silent;
            }
        }
    }

    Dataset& d = result.dataset;
    std::vector<std::size_t> labels(frames.size(), 0);
    if (options.rule == StyleRule::random_split) {
        if (options.random_styles == 0) throw ConfigError("random split needs at least one style");
        for (std::size_t s = 0; s < options.random_styles; ++s) d.styles.push_back("split-" + std::to_string(s));
        std::vector<std::size_t> order(frames.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(options.seed);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        for (std::size_t pos = 0; pos < order.size(); ++pos) labels[order[pos]] = pos % options.random_styles;
    } else {
        std::map<std::string, std::size_t> groups;
        for (const auto& f : frames) groups.emplace(f.group, 0);
        for (auto& [name, index] : groups) {
            index = d.styles.size();
            d.styles.push_back(name);
        }
        for (std::size_t i = 0; i < frames.size(); ++i) labels[i] = groups.at(frames[i].group);
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
        d.items.push_back(make_labeled(std::move(frames[i].waveform), labels[i], frames[i].source));
    }
    std::vector<std::string> files;
    for (const auto& p : paths) files.push_back(p.string());
    d.manifest = {{"spec",
                   {{"source", "waveedit"},
                    {"files", files},
                    {"frame_length", options.frame_length},
                    {"length", options.length},
                    {"rule", options.rule == StyleRule::random_split ? "random" : "directory"},
                    {"seed", options.seed}}},
                  {"dropped_silent", result.dropped_silent}};
    return result;
}

Split kfold(const Dataset& dataset, std::size_t fold_count, std::size_t fold_index, std::uint64_t seed)
{
    if (fold_count == 0 || fold_index >= fold_count) {
        throw ConfigError("fold index " + std::to_string(fold_index) + " outside [0, " +
                          std::to_string(fold_count) + ")");
    }
    std::vector<std::vector<std::size_t>> by_style(dataset.styles.size());
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
        by_style.at(dataset.items[i].style_label).push_back(i);
    }
    Split split;
    std::mt19937_64 rng(seed);
    for (std::size_t s = 0; s < by_style.size(); ++s) {
        auto& idx = by_style[s];
        if (idx.size() < fold_count) {
            throw ConfigError("style '" + dataset.styles[s] + "' has " + std::to_string(idx.size()) +
                              " samples, fewer than " + std::to_string(fold_count) + " folds");
        }
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
        const std::size_t n = idx.size();
        const std::size_t begin = fold_index * n / fold_count;
        const std::size_t end = (fold_index + 1) * n / fold_count;
        for (std::size_t i = 0; i < n; ++i) {
            (i >= begin && i < end ? split.test : split.train).push_back(idx[i]);
        }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

namespace {

constexpr char dataset_magic[4] = {'W', 'S', 'D', 'S'};
constexpr std::uint32_t dataset_version = 1;
static_assert(std::endian::native == std::endian::little);

template <class V>
void put(std::ofstream& out, const V& v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::ifstream& in, const std::filesystem::path& path)
{
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw FormatError(path.string() + ": truncated dataset file");
    return v;
}

} // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& dataset)
{
    nlohmann::json manifest = dataset.manifest;
    manifest["styles"] = dataset.styles;
    manifest["count"] = dataset.size();
    manifest["length"] = dataset.waveform_length();
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : dataset.items) items.push_back({it.style_label, it.source_id});
    manifest["items"] = items;
    const std::string text = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write dataset " + path.string());
    out.write(dataset_magic, 4);
    put<std::uint32_t>(out, dataset_version);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& it : dataset.items) {
        for (double v : it.waveform.samples()) put<float>(out, static_cast<float>(v));
        for (double v : it.descriptors.to_array()) put<float>(out, static_cast<float>(v));
    }
    if (!out) throw FormatError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open dataset " + path.string());
    char m[4];
    in.read(m, 4);
    if (!in || std::memcmp(m, dataset_magic, 4) != 0) {
        throw FormatError(path.string() + " is not a wavespace dataset");
    }
    if (get<std::uint32_t>(in, path) != dataset_version) {
        throw FormatError(path.string() + ": unsupported dataset version");
    }
    const auto size = get<std::uint64_t>(in, path);
    if (size > (std::uint64_t{1} << 32)) throw FormatError(path.string() + ": bad manifest size");
    std::string text(size, '\0');
    in.read(text.data(), static_cast<std::streamsize>(size));
    if (!in) throw FormatError(path.string() + ": truncated manifest");

    Dataset d;
    try {
        d.manifest = nlohmann::json::parse(text);
        d.styles = d.manifest.at("styles").get<std::vector<std::string>>();
        const auto count = d.manifest.at("count").get<std::size_t>();
        const auto length = d.manifest.at("length").get<std::size_t>();
        const auto& items = d.manifest.at("items");
        if (items.size() != count) throw FormatError(path.string() + ": item list size mismatch");
        std::vector<double> samples(length);
        for (std::size_t i = 0; i < count; ++i) {
            for (auto& v : samples) v = static_cast<double>(get<float>(in, path));
            for (int k = 0; k < 5; ++k) (void)get<float>(in, path);
            const auto label = items[i].at(0).get<std::size_t>();
            if (label >= d.styles.size()) throw FormatError(path.string() + ": style label out of range");
            // Re-normalize in double precision: the f32 round trip perturbs the invariants slightly.
            d.items.push_back(make_labeled(dsp::postprocess(samples), label, items[i].at(1).get<std::string>()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad manifest: " + e.what());
    }
    d.manifest.erase("items");
    d.manifest.erase("count");
    d.manifest.erase("length");
    d.manifest.erase("styles");
    return d;
}

} // namespace wavespace::data

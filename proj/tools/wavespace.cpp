#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wavespace/data/dataset.hpp"
#include "wavespace/descriptors.hpp"
#include "wavespace/dsp/wav_io.hpp"
#include "wavespace/dsp/wavetable.hpp"
#include "wavespace/errors.hpp"
#include "wavespace/eval/evaluation.hpp"
#include "wavespace/model/checkpoint.hpp"
#include "wavespace/service/server.hpp"
#include "wavespace/train/trainer.hpp"

using namespace wavespace;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct DataOptions {
    std::string cache;
    std::vector<std::string> styles{"saw", "square", "pulse", "formant"};
    std::size_t per_style = 128;
    std::uint64_t seed = 7;
    std::size_t folds = 5;
    std::size_t fold = 0;
    std::string split = "test";

    void add(CLI::App* app, bool with_split)
    {
        app->add_option("--dataset", cache, "Dataset cache file (default: generate synthetic)");
        app->add_option("--styles", styles, "Synthetic style families")->delimiter(',');
        app->add_option("--per-style", per_style, "Synthetic waveforms per style");
        app->add_option("--data-seed", seed, "Synthetic generator and fold seed");
        app->add_option("--folds", folds, "Cross-validation fold count");
        app->add_option("--fold", fold, "Fold index");
        if (with_split) {
            app->add_option("--split", split, "Evaluated part of the fold")
                ->check(CLI::IsMember({"test", "train", "all"}));
        }
    }

    data::Dataset load() const
    {
        if (!cache.empty()) return data::load_dataset(cache);
        data::DatasetSpec spec;
        spec.styles = styles;
        spec.waveforms_per_style = per_style;
        spec.seed = seed;
        spec.fold_count = folds;
        spec.fold_index = fold;
        return data::generate_synthetic(spec);
    }

    std::vector<std::size_t> indices(const data::Dataset& d, const std::string& part) const
    {
        if (part == "all") {
            std::vector<std::size_t> all(d.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            return all;
        }
        auto s = data::kfold(d, folds, fold, seed);
        return part == "train" ? s.train : s.test;
    }
};

std::string fmt9(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string descriptor_line(const DescriptorVector& d)
{
    std::string s = "{";
    for (std::size_t k = 0; k < DescriptorVector::size; ++k) {
        if (k) s += ",";
        s += "\"" + std::string(descriptor_names[k]) + "\":" + fmt9(d[k]);
    }
    return s + "}";
}

json descriptor_json(const DescriptorVector& d)
{
    json j;
    for (std::size_t k = 0; k < DescriptorVector::size; ++k) j[std::string(descriptor_names[k])] = d[k];
    return j;
}

DescriptorVector parse_descriptors(const std::string& text, DescriptorVector base = {0.3, 0.3, 0.3, 0.1, 0.0})
{
    if (text.empty()) return base;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("descriptors must be a JSON object or array: " + std::string(e.what()));
    }
    if (j.is_array()) return DescriptorVector::from_array(j.get<std::vector<double>>());
    if (!j.is_object()) throw ConfigError("descriptors must be a JSON object or array");
    for (const auto& [name, value] : j.items()) base[static_cast<std::size_t>(parse_descriptor(name))] = value.get<double>();
    return base;
}

/// "prior:i" (the mu1 pattern of style i), a JSON array of coordinates, or a
/// full {"style": [...], "descriptors": {...}} object.
model::ParamPoint parse_point(const std::string& text, const model::Model<float>& m, const DescriptorVector& base)
{
    model::ParamPoint p;
    p.descriptors = base;
    if (text.rfind("prior:", 0) == 0) {
        std::size_t i = 0;
        try {
            i = std::stoul(text.substr(6));
        } catch (const std::logic_error&) {
            throw ConfigError("bad prior index in '" + text + "'");
        }
        p.style = model::select_prior(m.priors(), i).mean;
        return p;
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("point must be prior:i or JSON: " + std::string(e.what()));
    }
    if (j.is_array()) {
        p.style = j.get<std::vector<double>>();
    } else if (j.is_object() && j.contains("style")) {
        p.style = j.at("style").get<std::vector<double>>();
        if (j.contains("descriptors")) p.descriptors = parse_descriptors(j.at("descriptors").dump(), base);
    } else {
        throw ConfigError("point must be prior:i, a coordinate array or an object with 'style'");
    }
    if (p.style.size() != m.config().style_dim()) {
        throw ShapeError("point has " + std::to_string(p.style.size()) + " style coordinates, model expects " +
                         std::to_string(m.config().style_dim()));
    }
    return p;
}

void write_table(const fs::path& out, const dsp::Wavetable& t)
{
    dsp::write_wav(out, t.data(), 48000, dsp::SampleEncoding::float32);
}

void print(const json& j)
{
    std::cout << j.dump(2) << '\n';
}

int run_dataset_build(const DataOptions& o, const std::string& out, const std::vector<std::string>& waveedit,
                      std::size_t frame_length, const std::string& rule, std::size_t random_styles)
{
    data::Dataset d;
    std::size_t dropped = 0;
    if (!waveedit.empty()) {
        data::IngestOptions opt;
        opt.frame_length = frame_length;
        opt.rule = rule == "directory" ? data::StyleRule::per_directory : data::StyleRule::random_split;
        opt.random_styles = random_styles;
        opt.seed = o.seed;
        std::vector<fs::path> paths(waveedit.begin(), waveedit.end());
        auto r = data::ingest_waveedit(paths, opt);
        d = std::move(r.dataset);
        dropped = r.dropped_silent;
        if (dropped > 0) std::cerr << "warning: dropped " << dropped << " silent frames\n";
    } else {
        d = o.load();
    }
    data::save_dataset(out, d);
    print({{"path", out}, {"count", d.size()}, {"styles", d.styles}, {"style_counts", d.style_counts()},
           {"dropped_silent", dropped}});
    return 0;
}

int run_dataset_inspect(const std::string& path)
{
    const auto d = data::load_dataset(path);
    json styles = json::array();
    for (std::size_t s = 0; s < d.styles.size(); ++s) {
        std::array<double, 5> lo, hi;
        lo.fill(INFINITY);
        hi.fill(-INFINITY);
        std::size_t n = 0;
        for (const auto& it : d.items) {
            if (it.style_label != s) continue;
            ++n;
            for (std::size_t k = 0; k < 5; ++k) {
                lo[k] = std::min(lo[k], it.descriptors[k]);
                hi[k] = std::max(hi[k], it.descriptors[k]);
            }
        }
        json ranges;
        for (std::size_t k = 0; k < 5; ++k) ranges[std::string(descriptor_names[k])] = {lo[k], hi[k]};
        styles.push_back({{"style", d.styles[s]}, {"count", n}, {"descriptor_ranges", ranges}});
    }
    print({{"count", d.size()}, {"length", d.waveform_length()}, {"manifest", d.manifest}, {"styles", styles}});
    return 0;
}

int run_train(const DataOptions& o, train::TrainConfig cfg, const std::string& variant, std::uint64_t init_seed,
              const std::string& resume_from)
{
    const auto d = o.load();
    const auto split = data::kfold(d, o.folds, o.fold, o.seed);
    const auto arch = model::ArchitectureConfig::for_variant(model::parse_variant(variant), d.styles.size());
    train::TrainHooks hooks;
    hooks.on_epoch = [](const train::EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << " loss " << r.total << " (spectral " << r.spectral << ", waveform "
                  << r.waveform << ", kl " << r.kl << ") " << r.seconds << "s\n";
    };
    if (!cfg.output_dir.empty()) {
        fs::create_directories(cfg.output_dir);
        json run = {{"variant", variant},
                    {"init_seed", init_seed},
                    {"folds", o.folds},
                    {"fold", o.fold},
                    {"data_seed", o.seed},
                    {"styles", d.styles},
                    {"train", cfg}};
        if (o.cache.empty()) run["per_style"] = o.per_style;
        else run["dataset"] = o.cache;
        std::ofstream(cfg.output_dir / "run.json") << run.dump(2) << '\n';
    }
    const auto result = resume_from.empty()
                            ? train::train(cfg, d, split.train, model::Model<float>(arch, d.styles, init_seed),
                                           nullptr, hooks)
                            : train::resume(resume_from, cfg, arch, d, split.train, hooks);
    const auto report = eval::evaluate(result.model, d, split.test);
    json out = {{"epochs", cfg.epochs}, {"final", result.log.empty() ? json() : json(result.log.back())},
                {"test", report}};
    if (!cfg.output_dir.empty()) {
        std::ofstream(cfg.output_dir / "eval.json") << json(report).dump(2) << '\n';
        out["checkpoint"] = (cfg.output_dir / "final.wspc").string();
    }
    print(out);
    return 0;
}

int run_eval(const DataOptions& o, const std::string& checkpoint)
{
    const auto c = model::load_checkpoint(checkpoint);
    const auto d = o.load();
    if (d.styles != c.model.styles()) {
        throw ConfigError("dataset styles do not match the checkpoint's styles");
    }
    print(eval::evaluate(c.model, d, o.indices(d, o.split)));
    return 0;
}

std::shared_ptr<const model::Model<float>> model_for(const std::string& checkpoint, const std::string& variant,
                                                     std::size_t styles)
{
    if (!checkpoint.empty()) return std::make_shared<model::Model<float>>(model::load_checkpoint(checkpoint).model);
    std::vector<std::string> names;
    for (std::size_t s = 0; s < styles; ++s) names.push_back("style" + std::to_string(s));
    return std::make_shared<model::Model<float>>(
        model::ArchitectureConfig::for_variant(model::parse_variant(variant), styles), names, 0);
}

int run_bench(const std::string& checkpoint, const std::string& variant, std::size_t styles, std::size_t buffer,
              double sample_rate, std::size_t iterations)
{
    const auto m = model_for(checkpoint, variant, styles);
    print(eval::bench_rtf(*m, buffer, sample_rate, iterations));
    return 0;
}

int run_descriptors(const std::vector<std::string>& files, std::size_t frame_length)
{
    for (const auto& f : files) {
        const auto wav = dsp::read_wav(f);
        const std::size_t n = frame_length == 0 ? wav.samples.size() : frame_length;
        if (n == 0 || wav.samples.size() % n != 0) {
            throw IngestionError(f + ": " + std::to_string(wav.samples.size()) +
                                 " samples is not a multiple of the frame length " + std::to_string(n));
        }
        for (std::size_t at = 0; at < wav.samples.size(); at += n) {
            const std::span<const double> frame(wav.samples.data() + at, n);
            std::cout << descriptor_line(descriptors::extract(dsp::preprocess(frame, n).samples())) << '\n';
        }
    }
    return 0;
}

int run_interpolate(const std::string& checkpoint, const std::string& from, const std::string& to,
                    const std::string& desc, std::size_t rows, const std::string& out)
{
    const auto c = model::load_checkpoint(checkpoint);
    const auto base = parse_descriptors(desc);
    const auto a = parse_point(from, c.model, base), b = parse_point(to, c.model, base);
    const auto table = eval::interpolate_wavetable(c.model, a, b, rows);
    write_table(out, table);
    json adjacent = json::array();
    for (std::size_t r = 1; r < table.rows(); ++r) {
        double mae = 0;
        for (std::size_t k = 0; k < table.columns(); ++k) mae += std::abs(table.row(r)[k] - table.row(r - 1)[k]);
        adjacent.push_back(mae / static_cast<double>(table.columns()));
    }
    print({{"path", out}, {"rows", table.rows()}, {"columns", table.columns()}, {"adjacent_mae", adjacent}});
    return 0;
}

int run_sweep(const std::string& checkpoint, const std::string& style, const std::string& which,
              double lo, double hi, std::size_t steps, const std::string& desc, const DataOptions* median_from,
              const std::string& out)
{
    const auto c = model::load_checkpoint(checkpoint);
    DescriptorVector base = parse_descriptors(desc);
    if (median_from != nullptr) base = parse_descriptors(desc, eval::median_descriptors(median_from->load()));
    const auto point = parse_point(style, c.model, base);
    const Descriptor d = parse_descriptor(which);
    const auto table = eval::descriptor_sweep(c.model, point.style, d, lo, hi, steps, point.descriptors);
    if (!out.empty()) write_table(out, table);
    const auto values = eval::sweep_values(lo, hi, steps);
    json rows = json::array();
    for (std::size_t r = 0; r < table.rows(); ++r) {
        rows.push_back({{"value", values[r]},
                        {"centroid", eval::spectral_centroid(table.row(r))},
                        {"measured", descriptor_json(descriptors::extract(table.row(r)))}});
    }
    print({{"descriptor", which}, {"base", descriptor_json(point.descriptors)}, {"rows", rows}});
    return 0;
}

int run_export(const std::string& checkpoint, const std::string& point_text, const std::string& desc,
               const std::string& out, double seconds, double f0, double sample_rate)
{
    const auto c = model::load_checkpoint(checkpoint);
    const auto p = parse_point(point_text, c.model, parse_descriptors(desc));
    const auto w = c.model.decode(p);
    if (seconds <= 0.0) {
        dsp::write_wav(out, w.samples(), static_cast<std::uint32_t>(sample_rate));
    } else {
        const dsp::Wavetable table(std::span<const dsp::Waveform>(&w, 1));
        const auto n = static_cast<std::size_t>(seconds * sample_rate);
        std::vector<double> rows(n, 0.0), f0s(n, f0);
        auto audio = dsp::render(table, rows, f0s, sample_rate, n);
        const double scale = 0.25 * std::sqrt(static_cast<double>(w.size()));
        for (double& s : audio) s *= scale;
        dsp::write_wav(out, audio, static_cast<std::uint32_t>(sample_rate));
    }
    print({{"path", out}, {"descriptors", descriptor_json(descriptors::extract(w.samples()))}});
    return 0;
}

int run_serve(const std::string& checkpoint, const std::string& bind, double max_exec_hz,
              const std::string& record)
{
    auto m = std::make_shared<const model::Model<float>>(model::load_checkpoint(checkpoint).model);
    service::ServeConfig cfg;
    cfg.bind = bind;
    cfg.max_exec_hz = max_exec_hz;
    if (!record.empty()) cfg.record_wav = record;

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    service::Server server(m, cfg);
    server.start();
    std::cerr << "serving " << m->styles().size() << " styles on port " << server.port() << "\n";
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Wavespace: conditional VAE wavetable oscillator"};
    app.require_subcommand(1);

    // dataset
    auto* dataset = app.add_subcommand("dataset", "Build or inspect dataset caches");
    dataset->require_subcommand(1);
    DataOptions build_opts;
    std::string build_out;
    std::vector<std::string> waveedit;
    std::size_t frame_length = 256, random_styles = 2;
    std::string rule = "random";
    auto* build = dataset->add_subcommand("build", "Generate or ingest a dataset and write its cache");
    build_opts.add(build, false);
    build->add_option("--out", build_out, "Cache file")->required();
    build->add_option("--waveedit", waveedit, "WaveEdit WAV files to ingest instead of synthesizing");
    build->add_option("--frame-length", frame_length, "WaveEdit frame length");
    build->add_option("--rule", rule, "WaveEdit style assignment")->check(CLI::IsMember({"random", "directory"}));
    build->add_option("--random-styles", random_styles, "Style count for the random rule");
    std::string inspect_path;
    auto* inspect = dataset->add_subcommand("inspect", "Summarize a dataset cache");
    inspect->add_option("path", inspect_path)->required();

    // train
    auto* trn = app.add_subcommand("train", "Train a model on one fold");
    DataOptions train_opts;
    train_opts.add(trn, false);
    train::TrainConfig cfg;
    std::string variant = "ws-s", resume_from, out_dir;
    std::uint64_t init_seed = 0;
    bool seed_init_from_seed = true;
    trn->add_option("--variant", variant, "ws or ws-s");
    trn->add_option("--epochs", cfg.epochs);
    trn->add_option("--batch-size", cfg.batch_size);
    trn->add_option("--lr", cfg.learning_rate, "Base learning rate");
    trn->add_option("--lr-start", cfg.lr_start);
    trn->add_option("--lr-end", cfg.lr_end);
    trn->add_option("--lr-ramp-epochs", cfg.lr_ramp_epochs);
    trn->add_option("--beta1", cfg.adam.beta1);
    trn->add_option("--beta2", cfg.adam.beta2);
    trn->add_option("--adam-epsilon", cfg.adam.epsilon);
    trn->add_option("--spectral-weight", cfg.weights.spectral);
    trn->add_option("--kl-weight", cfg.weights.kl);
    trn->add_option("--waveform-weight", cfg.weights.waveform);
    trn->add_option("--waveform-rate", cfg.weights.waveform_rate);
    trn->add_flag("--descriptor-loss", cfg.weights.descriptor_loss, "Add the descriptor L1 term");
    trn->add_option("--seed", cfg.seed, "Shuffle and noise seed");
    auto* init_opt = trn->add_option("--init-seed", init_seed, "Weight initialization seed (default: --seed)");
    trn->add_option("--checkpoint-every", cfg.checkpoint_every);
    trn->add_option("--out", out_dir, "Output directory");
    trn->add_option("--resume", resume_from, "Checkpoint to continue from");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a fold");
    DataOptions eval_opts;
    eval_opts.add(ev, true);
    std::string eval_ckpt;
    ev->add_option("--checkpoint", eval_ckpt)->required();

    // bench
    auto* bench = app.add_subcommand("bench", "Decode latency and real-time factor");
    std::string bench_ckpt, bench_variant = "ws-s";
    std::size_t bench_styles = 4, buffer = 1024, iterations = 100;
    double sample_rate = 48000;
    bench->add_option("--checkpoint", bench_ckpt, "Checkpoint (default: untrained model)");
    bench->add_option("--variant", bench_variant);
    bench->add_option("--num-styles", bench_styles);
    bench->add_option("--buffer", buffer);
    bench->add_option("--sample-rate", sample_rate);
    bench->add_option("--iterations", iterations);

    // descriptors
    auto* desc = app.add_subcommand("descriptors", "Descriptor vectors of WAV frames, one JSON object per line");
    std::vector<std::string> desc_files;
    std::size_t desc_frame = 0;
    desc->add_option("files", desc_files)->required();
    desc->add_option("--frame-length", desc_frame, "Frame length (default: whole file)");

    // interpolate
    auto* interp = app.add_subcommand("interpolate", "Decode a wavetable along a segment between two points");
    std::string i_ckpt, i_from, i_to, i_desc, i_out;
    std::size_t i_rows = 64;
    interp->add_option("--checkpoint", i_ckpt)->required();
    interp->add_option("--from", i_from, "prior:i, coordinate array or point object")->required();
    interp->add_option("--to", i_to)->required();
    interp->add_option("--descriptors", i_desc, "Descriptors shared by both ends unless given per point");
    interp->add_option("--rows", i_rows);
    interp->add_option("--out", i_out, "Wavetable WAV")->required();

    // sweep
    auto* sw = app.add_subcommand("sweep", "Decode a descriptor sweep at fixed style coordinates");
    std::string s_ckpt, s_style = "prior:0", s_which = "brightness", s_desc, s_out;
    double s_lo = 0.2, s_hi = 1.0;
    std::size_t s_steps = 5;
    bool s_median = false;
    DataOptions sweep_opts;
    sw->add_option("--checkpoint", s_ckpt)->required();
    sw->add_option("--style", s_style, "prior:i or coordinate array");
    sw->add_option("--descriptor", s_which);
    sw->add_option("--lo", s_lo);
    sw->add_option("--hi", s_hi);
    sw->add_option("--steps", s_steps);
    sw->add_option("--descriptors", s_desc, "Fixed descriptors (overrides the median)");
    sw->add_flag("--median", s_median, "Hold the other descriptors at the dataset median");
    sweep_opts.add(sw, false);
    sw->add_option("--out", s_out, "Wavetable WAV");

    // export-wav
    auto* ex = app.add_subcommand("export-wav", "Decode one point and write it as a cycle or rendered audio");
    std::string e_ckpt, e_point = "prior:0", e_desc, e_out;
    double e_seconds = 0, e_f0 = 220, e_rate = 48000;
    ex->add_option("--checkpoint", e_ckpt)->required();
    ex->add_option("--point", e_point);
    ex->add_option("--descriptors", e_desc);
    ex->add_option("--out", e_out)->required();
    ex->add_option("--seconds", e_seconds, "Render this long at --f0 instead of writing one cycle");
    ex->add_option("--f0", e_f0);
    ex->add_option("--sample-rate", e_rate);

    // serve
    auto* sv = app.add_subcommand("serve", "WebSocket control endpoint");
    std::string v_ckpt, v_bind = "127.0.0.1:8765", v_record;
    double v_hz = 30;
    sv->add_option("--checkpoint", v_ckpt)->required();
    sv->add_option("--bind", v_bind, "host:port");
    sv->add_option("--max-exec-hz", v_hz);
    sv->add_option("--record", v_record, "Render in real time and write the output here on exit");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*build) return run_dataset_build(build_opts, build_out, waveedit, frame_length, rule, random_styles);
        if (*inspect) return run_dataset_inspect(inspect_path);
        if (*trn) {
            if (init_opt->count() > 0) seed_init_from_seed = false;
            cfg.output_dir = out_dir;
            return run_train(train_opts, cfg, variant, seed_init_from_seed ? cfg.seed : init_seed, resume_from);
        }
        if (*ev) return run_eval(eval_opts, eval_ckpt);
        if (*bench) return run_bench(bench_ckpt, bench_variant, bench_styles, buffer, sample_rate, iterations);
        if (*desc) return run_descriptors(desc_files, desc_frame);
        if (*interp) return run_interpolate(i_ckpt, i_from, i_to, i_desc, i_rows, i_out);
        if (*sw) return run_sweep(s_ckpt, s_style, s_which, s_lo, s_hi, s_steps, s_desc, s_median ? &sweep_opts : nullptr, s_out);
        if (*ex) return run_export(e_ckpt, e_point, e_desc, e_out, e_seconds, e_f0, e_rate);
        if (*sv) return run_serve(v_ckpt, v_bind, v_hz, v_record);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

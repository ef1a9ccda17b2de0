#include "wavespace/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

#include "wavespace/errors.hpp"

namespace wavespace::train {

double lr_multiplier(double epoch, double start, double end, double ramp_epochs)
{
    if (epoch <= 0.0) return start;
    if (epoch >= ramp_epochs) return end;
    return start + (end - start) * epoch / ramp_epochs;
}

Adam::Adam(AdamConfig config, const std::vector<ad::Parameter<float>>& params) : config_(config)
{
    for (const auto& p : params) {
        m_.emplace_back(p.value.shape);
        v_.emplace_back(p.value.shape);
    }
}

void Adam::step(std::vector<ad::Parameter<float>>& params, double lr)
{
    if (params.size() != m_.size()) throw ShapeError("optimizer state does not match parameters");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const float b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
    const float step = static_cast<float>(lr / c1);
    const float root_c2 = static_cast<float>(std::sqrt(c2));
    const float eps = static_cast<float>(config_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& value = params[i].value.data;
        const auto& grad = params[i].grad.data;
        auto& m = m_[i].data;
        auto& v = v_[i].data;
        for (std::size_t k = 0; k < value.size(); ++k) {
            const float g = grad[k];
            m[k] = b1 * m[k] + (1.0f - b1) * g;
            v[k] = b2 * v[k] + (1.0f - b2) * g * g;
            value[k] -= step * m[k] / (std::sqrt(v[k]) / root_c2 + eps);
        }
    }
}

void Adam::restore(std::uint64_t steps, std::vector<ad::Tensor<float>> m, std::vector<ad::Tensor<float>> v)
{
    if (m.size() != m_.size() || v.size() != v_.size()) {
        throw ShapeError("restored optimizer state does not match parameters");
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i].shape != m_[i].shape || v[i].shape != v_[i].shape) {
            throw ShapeError("restored optimizer moment shape mismatch");
        }
    }
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

void TrainConfig::validate() const
{
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (batch_size < 2) throw ConfigError("batch size must be at least 2");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(weights.spectral > 0.0) || !(weights.kl > 0.0) || !(weights.waveform > 0.0)) {
        throw ConfigError("loss weights must be positive");
    }
    for (double w : weights.descriptor) {
        if (!(w > 0.0)) throw ConfigError("descriptor loss weights must be positive");
    }
    if (!(lr_ramp_epochs > 0.0) || !(lr_end > 0.0) || !(lr_start > 0.0)) {
        throw ConfigError("learning-rate schedule must be positive");
    }
}

void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"lr_start", c.lr_start},
         {"lr_end", c.lr_end},
         {"lr_ramp_epochs", c.lr_ramp_epochs},
         {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
         {"weights", c.weights},
         {"seed", c.seed},
         {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
    j.at("epochs").get_to(c.epochs);
    j.at("batch_size").get_to(c.batch_size);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("lr_start").get_to(c.lr_start);
    j.at("lr_end").get_to(c.lr_end);
    j.at("lr_ramp_epochs").get_to(c.lr_ramp_epochs);
    j.at("adam").at("beta1").get_to(c.adam.beta1);
    j.at("adam").at("beta2").get_to(c.adam.beta2);
    j.at("adam").at("epsilon").get_to(c.adam.epsilon);
    j.at("weights").get_to(c.weights);
    j.at("seed").get_to(c.seed);
    j.at("checkpoint_every").get_to(c.checkpoint_every);
}

bool EpochRecord::same_values(const EpochRecord& o) const
{
    return epoch == o.epoch && total == o.total && spectral == o.spectral && waveform == o.waveform &&
           kl == o.kl && descriptor == o.descriptor && lr == o.lr && beta3 == o.beta3;
}

void to_json(nlohmann::json& j, const EpochRecord& r)
{
    j = {{"epoch", r.epoch},       {"total", r.total}, {"spectral", r.spectral},
         {"waveform", r.waveform}, {"kl", r.kl},       {"descriptor", r.descriptor},
         {"lr", r.lr},             {"beta3", r.beta3}, {"seconds", r.seconds}};
}

std::vector<float> normal_noise(std::size_t count, std::mt19937_64& rng)
{
    std::vector<float> out(count);
    auto unit = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
    for (std::size_t i = 0; i < count; i += 2) {
        const double r = std::sqrt(-2.0 * std::log(unit()));
        const double a = 2.0 * std::numbers::pi * unit();
        out[i] = static_cast<float>(r * std::cos(a));
        if (i + 1 < count) out[i + 1] = static_cast<float>(r * std::sin(a));
    }
    return out;
}

model::Batch<float> make_batch(const data::Dataset& dataset, std::span<const std::size_t> indices)
{
    const std::size_t n = dataset.waveform_length();
    model::Batch<float> b;
    b.waveforms = ad::Tensor<float>({indices.size(), 1, n});
    b.descriptors = ad::Tensor<float>({indices.size(), 5});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& item = dataset.items.at(indices[i]);
        const auto w = item.waveform.samples();
        for (std::size_t k = 0; k < n; ++k) b.waveforms.data[i * n + k] = static_cast<float>(w[k]);
        const auto d = item.descriptors.to_array();
        for (std::size_t k = 0; k < 5; ++k) b.descriptors.data[i * 5 + k] = static_cast<float>(d[k]);
        b.labels.push_back(item.style_label);
    }
    return b;
}

namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
                      0x5753u};
    return std::mt19937_64(seq);
}

/// Batch boundaries; a trailing single sample joins the previous batch.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t size)
{
    std::vector<std::pair<std::size_t, std::size_t>> r;
    for (std::size_t begin = 0; begin < n; begin += size) r.emplace_back(begin, std::min(n, begin + size));
    if (r.size() > 1 && r.back().second - r.back().first < 2) {
        r[r.size() - 2].second = r.back().second;
        r.pop_back();
    }
    return r;
}

void write_nan_snapshot(const TrainConfig& config, const data::Dataset& dataset,
                        std::span<const std::size_t> batch, std::size_t epoch,
                        const model::LossParts& parts)
{
    nlohmann::json ids = nlohmann::json::array();
    for (std::size_t i : batch) ids.push_back({{"index", i}, {"source", dataset.items[i].source_id}});
    const nlohmann::json snapshot = {
        {"epoch", epoch},
        {"batch", ids},
        {"parts",
         {{"spectral", parts.spectral}, {"waveform", parts.waveform}, {"kl", parts.kl},
          {"descriptor", parts.descriptor}, {"beta3", parts.beta3}}}};
    if (!config.output_dir.empty()) {
        std::ofstream(config.output_dir / "nan_snapshot.json") << snapshot.dump(2) << '\n';
    }
}

model::TrainerState snapshot_state(const TrainConfig& config, std::size_t epoch, const Adam& adam)
{
    model::TrainerState s;
    s.epoch = epoch;
    s.step = adam.steps();
    s.config = config;
    s.adam_m = adam.first_moments();
    s.adam_v = adam.second_moments();
    return s;
}

} // namespace

TrainResult train(const TrainConfig& config, const data::Dataset& dataset,
                  std::span<const std::size_t> train_indices, model::Model<float> model,
                  const model::TrainerState* resume_state, const TrainHooks& hooks)
{
    config.validate();
    if (train_indices.empty()) throw ConfigError("training set is empty");
    if (dataset.waveform_length() != model.config().input_length ||
        dataset.styles.size() != model.config().num_styles) {
        throw ConfigError("dataset (length " + std::to_string(dataset.waveform_length()) + ", " +
                          std::to_string(dataset.styles.size()) +
                          " styles) does not match the model configuration");
    }
    for (std::size_t i : train_indices) {
        if (i >= dataset.size()) throw RangeError("training index out of range");
    }

    Adam adam(config.adam, model.parameters());
    std::size_t start_epoch = 0;
    if (resume_state != nullptr) {
        adam.restore(resume_state->step, resume_state->adam_m, resume_state->adam_v);
        start_epoch = resume_state->epoch;
    }
    if (!config.output_dir.empty()) std::filesystem::create_directories(config.output_dir);
    std::ofstream log_file;
    if (!config.output_dir.empty()) {
        log_file.open(config.output_dir / "train_log.jsonl",
                      start_epoch > 0 ? std::ios::app : std::ios::trunc);
    }

    TrainResult result;
    std::vector<std::size_t> order(train_indices.begin(), train_indices.end());
    const std::size_t style_dim = model.config().style_dim();
    for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto rng = epoch_rng(config.seed, epoch);
        std::sort(order.begin(), order.end());
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

        const double lr = config.learning_rate *
                          lr_multiplier(static_cast<double>(epoch), config.lr_start, config.lr_end,
                                        config.lr_ramp_epochs);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.beta3 = model::beta3_schedule(static_cast<double>(epoch), config.weights.waveform,
                                          config.weights.waveform_rate);
        std::size_t seen = 0;
        for (const auto& [begin, end] : batch_ranges(order.size(), config.batch_size)) {
            const std::span<const std::size_t> idx(order.data() + begin, end - begin);
            if (hooks.on_batch) hooks.on_batch(idx);
            const auto batch = make_batch(dataset, idx);
            const ad::Tensor<float> noise({idx.size(), style_dim}, normal_noise(idx.size() * style_dim, rng));
            for (auto& p : model.parameters()) p.zero_grad();
            model::LossResult loss;
            {
                ad::Graph<float> g;
                loss = model.loss(g, batch, noise, config.weights, static_cast<double>(epoch), true);
                if (!std::isfinite(loss.parts.total)) {
                    write_nan_snapshot(config, dataset, idx, epoch, loss.parts);
                    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                                        " (spectral " + std::to_string(loss.parts.spectral) +
                                        ", waveform " + std::to_string(loss.parts.waveform) +
                                        ", kl " + std::to_string(loss.parts.kl) + ")");
                }
                g.backward(loss.total);
            }
            adam.step(model.parameters(), lr);
            const double w = static_cast<double>(idx.size());
            rec.total += w * loss.parts.total;
            rec.spectral += w * loss.parts.spectral;
            rec.waveform += w * loss.parts.waveform;
            rec.kl += w * loss.parts.kl;
            rec.descriptor += w * loss.parts.descriptor;
            seen += idx.size();
        }
        const double inv = 1.0 / static_cast<double>(seen);
        rec.total *= inv;
        rec.spectral *= inv;
        rec.waveform *= inv;
        rec.kl *= inv;
        rec.descriptor *= inv;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(rec);
        if (log_file.is_open()) log_file << nlohmann::json(rec).dump() << '\n' << std::flush;
        if (hooks.on_epoch) hooks.on_epoch(rec);

        const std::size_t done = epoch + 1;
        if (!config.output_dir.empty() && config.checkpoint_every > 0 && done % config.checkpoint_every == 0 &&
            done < config.epochs) {
            const auto state = snapshot_state(config, done, adam);
            model::save_checkpoint(config.output_dir / ("epoch_" + std::to_string(done) + ".wspc"), model, &state);
        }
    }
    result.state = snapshot_state(config, config.epochs, adam);
    if (!config.output_dir.empty()) {
        model::save_checkpoint(config.output_dir / "final.wspc", model, &result.state);
    }
    result.model = std::move(model);
    return result;
}

TrainResult resume(const std::filesystem::path& checkpoint, const TrainConfig& config,
                   const model::ArchitectureConfig& expected, const data::Dataset& dataset,
                   std::span<const std::size_t> train_indices, const TrainHooks& hooks)
{
    auto c = model::load_checkpoint(checkpoint);
    if (!(c.model.config() == expected)) {
        throw ResumeError("checkpoint architecture " + model::variant_name(c.model.config().variant) +
                          " does not match the requested " + model::variant_name(expected.variant) +
                          " configuration");
    }
    if (!c.trainer) throw ResumeError(checkpoint.string() + " holds no optimizer state");
    TrainConfig stored;
    try {
        stored = c.trainer->config.get<TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ResumeError(std::string("stored training configuration unreadable: ") + e.what());
    }
    auto core = [](const TrainConfig& t) {
        nlohmann::json j = t;
        j.erase("epochs");
        j.erase("checkpoint_every");
        j.erase("output_dir");
        return j;
    };
    if (core(stored) != core(config)) {
        throw ResumeError("training configuration differs from the one stored in " + checkpoint.string());
    }
    if (c.trainer->epoch >= config.epochs) {
        throw ResumeError("checkpoint is at epoch " + std::to_string(c.trainer->epoch) +
                          ", nothing left to train for " + std::to_string(config.epochs) + " epochs");
    }
    return train(config, dataset, train_indices, std::move(c.model), &*c.trainer, hooks);
}

} // namespace wavespace::train

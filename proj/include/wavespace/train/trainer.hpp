#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "wavespace/data/dataset.hpp"
#include "wavespace/model/checkpoint.hpp"
#include "wavespace/model/model.hpp"

namespace wavespace::train {

/// Linear ramp from `start` at epoch 0 to `end` at `ramp_epochs`, constant after.
double lr_multiplier(double epoch, double start = 1.0, double end = 0.5, double ramp_epochs = 1500.0);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

class Adam {
public:
    Adam() = default;
    Adam(AdamConfig config, const std::vector<ad::Parameter<float>>& params);

    /// One update from the accumulated gradients.
    void step(std::vector<ad::Parameter<float>>& params, double lr);

    std::uint64_t steps() const noexcept { return t_; }
    const std::vector<ad::Tensor<float>>& first_moments() const noexcept { return m_; }
    const std::vector<ad::Tensor<float>>& second_moments() const noexcept { return v_; }
    void restore(std::uint64_t steps, std::vector<ad::Tensor<float>> m, std::vector<ad::Tensor<float>> v);

private:
    AdamConfig config_;
    std::uint64_t t_ = 0;
    std::vector<ad::Tensor<float>> m_;
    std::vector<ad::Tensor<float>> v_;
};

struct TrainConfig {
    std::size_t epochs = 5000;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double lr_start = 1.0;
    double lr_end = 0.5;
    double lr_ramp_epochs = 1500.0;
    AdamConfig adam;
    model::LossWeights weights;
    std::uint64_t seed = 0;
    /// Write a checkpoint every this many epochs (0: final only).
    std::size_t checkpoint_every = 0;
    /// Directory for train_log.jsonl and checkpoints; empty keeps everything in memory.
    std::filesystem::path output_dir;

    /// Throws ConfigError on non-positive weights, zero epochs or zero batch size.
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
    std::size_t epoch = 0;
    double total = 0.0;
    double spectral = 0.0;
    double waveform = 0.0;
    double kl = 0.0;
    double descriptor = 0.0;
    double lr = 0.0;
    double beta3 = 0.0;
    double seconds = 0.0;

    /// Equality ignoring wall time.
    bool same_values(const EpochRecord& o) const;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainResult {
    model::Model<float> model;
    std::vector<EpochRecord> log;
    model::TrainerState state;
};

struct TrainHooks {
    /// Called with the dataset indices of every minibatch.
    std::function<void(std::span<const std::size_t>)> on_batch;
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains from the model's current weights over dataset[train_indices].
/// `resume_state`, when given, continues schedules and optimizer moments
/// from its epoch. Throws TrainingError on a non-finite loss.
TrainResult train(const TrainConfig& config, const data::Dataset& dataset,
                  std::span<const std::size_t> train_indices, model::Model<float> model,
                  const model::TrainerState* resume_state = nullptr, const TrainHooks& hooks = {});

/// Loads a checkpoint written by `train` and continues to config.epochs.
/// Throws ResumeError when the architecture or training settings other than
/// epochs, checkpoint cadence and output directory differ, or the stored
/// epoch is not below config.epochs.
TrainResult resume(const std::filesystem::path& checkpoint, const TrainConfig& config,
                   const model::ArchitectureConfig& expected, const data::Dataset& dataset,
                   std::span<const std::size_t> train_indices, const TrainHooks& hooks = {});

/// Stacks dataset items into a model batch.
model::Batch<float> make_batch(const data::Dataset& dataset, std::span<const std::size_t> indices);

/// Standard normal draws from a portable generator.
std::vector<float> normal_noise(std::size_t count, std::mt19937_64& rng);

} // namespace wavespace::train

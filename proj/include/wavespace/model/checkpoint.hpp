#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "wavespace/model/model.hpp"

namespace wavespace::model {

inline constexpr std::uint32_t checkpoint_version = 1;

/// Optimizer progress stored alongside the weights for resuming.
struct TrainerState {
    std::size_t epoch = 0;      ///< completed epochs
    std::uint64_t step = 0;     ///< Adam step count
    nlohmann::json config;      ///< training configuration that produced the state
    std::vector<Tensor<float>> adam_m;
    std::vector<Tensor<float>> adam_v;

    bool operator==(const TrainerState&) const = default;
};

struct Checkpoint {
    Model<float> model;
    std::optional<TrainerState> trainer;
    nlohmann::json header;
};

/// Layout: "WSPC", u32 version, u64 header size, JSON header, then for every
/// tensor u64 name size, name, u64 value count, little-endian f32 values.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const TrainerState* trainer = nullptr);

/// Throws CheckpointError with kind format, version, truncated, name_mismatch or io.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Reads and validates only the JSON header.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

} // namespace wavespace::model

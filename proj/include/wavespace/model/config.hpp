#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace wavespace::model {

enum class Variant { ws, ws_s };

std::string variant_name(Variant v);
/// Accepts "WS" and "WS-S" (case-insensitive); throws ConfigError otherwise.
Variant parse_variant(const std::string& name);

struct ConvSpec {
    std::size_t channels = 0;
    std::size_t kernel = 5;
    std::size_t stride = 2;
    std::size_t padding = 2;

    bool operator==(const ConvSpec&) const = default;
};

/// Transposed conv (x2 upsample) followed by a residual stack of conv1d layers.
struct DecoderBlockSpec {
    std::size_t channels = 0;
    std::size_t up_kernel = 4;
    std::size_t up_stride = 2;
    std::size_t up_padding = 1;
    std::size_t residual_convs = 3;
    std::size_t residual_kernel = 3;

    bool operator==(const DecoderBlockSpec&) const = default;
};

struct ArchitectureConfig {
    Variant variant = Variant::ws_s;
    std::size_t input_length = 1024;
    std::size_t num_styles = 4;
    std::size_t subspace_dim = 2;
    std::size_t descriptor_dim = 5;
    std::vector<ConvSpec> encoder;
    std::size_t seed_channels = 0;
    std::size_t seed_length = 16;
    std::vector<DecoderBlockSpec> decoder;
    double leaky_slope = 0.2;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;

    static ArchitectureConfig ws(std::size_t num_styles);
    static ArchitectureConfig ws_s(std::size_t num_styles);
    static ArchitectureConfig for_variant(Variant v, std::size_t num_styles);

    std::size_t style_dim() const noexcept { return num_styles * subspace_dim; }
    /// Decoder condition width: four bounded descriptors plus cos/sin of symmetry.
    std::size_t condition_dim() const noexcept { return descriptor_dim + 1; }
    std::size_t encoder_output_length() const;
    std::size_t decoder_output_length() const;

    /// Throws ConfigError on inconsistent lengths or empty stacks.
    void validate() const;

    bool operator==(const ArchitectureConfig&) const = default;
};

void to_json(nlohmann::json& j, const ArchitectureConfig& c);
void from_json(const nlohmann::json& j, ArchitectureConfig& c);

struct SubspacePrior {
    std::array<double, 2> mu0{0.0, 0.0};
    std::array<double, 2> mu1{5.0, 5.0};
    double sigma0 = 1.0;
    double sigma1 = 1.0;

    bool operator==(const SubspacePrior&) const = default;
};

struct SubspacePriorTable {
    std::vector<SubspacePrior> subspaces;

    static SubspacePriorTable defaults(std::size_t num_styles);
    std::size_t size() const noexcept { return subspaces.size(); }

    bool operator==(const SubspacePriorTable&) const = default;
};

void to_json(nlohmann::json& j, const SubspacePriorTable& t);
void from_json(const nlohmann::json& j, SubspacePriorTable& t);

struct PriorMoments {
    std::vector<double> mean;
    std::vector<double> variance;
};

/// Subspace `target` gets (mu1, sigma1^2), every other subspace (mu0, sigma0^2).
/// Throws RangeError when target >= table.size().
PriorMoments select_prior(const SubspacePriorTable& table, std::size_t target);

inline constexpr double default_beta3 = 4.170;
inline constexpr double default_beta3_rate = 0.144;

double beta3_schedule(double epoch, double beta3 = default_beta3, double rate = default_beta3_rate);

struct LossWeights {
    double spectral = 0.354;
    double kl = 2.231;
    double waveform = default_beta3;
    double waveform_rate = default_beta3_rate;
    bool descriptor_loss = false;
    std::array<double, 5> descriptor{4.17, 4.17, 4.17, 10.0, 40.0};

    bool operator==(const LossWeights&) const = default;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

} // namespace wavespace::model

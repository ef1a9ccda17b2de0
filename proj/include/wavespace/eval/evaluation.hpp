#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "wavespace/data/dataset.hpp"
#include "wavespace/dsp/wavetable.hpp"
#include "wavespace/model/model.hpp"

namespace wavespace::eval {

struct StyleMetrics {
    std::string style;
    std::size_t count = 0;
    double waveform_mae = 0.0;
    double spectral_mse = 0.0;
};

struct ReconstructionMetrics {
    double waveform_mae = 0.0;
    double spectral_mse = 0.0;
    std::array<double, 5> descriptor_mae{};
    std::vector<StyleMetrics> per_style;
};

/// Pairwise metrics over (x, xhat). Throws ConfigError on an empty set and
/// ShapeError on mismatched lengths.
ReconstructionMetrics reconstruction_metrics(std::span<const dsp::Waveform> x,
                                             std::span<const dsp::Waveform> xhat,
                                             std::span<const std::size_t> labels = {},
                                             const std::vector<std::string>& styles = {});

/// Posterior-mean reconstructions of dataset[indices] conditioned on their own descriptors.
std::vector<dsp::Waveform> reconstruct(const model::Model<float>& model, const data::Dataset& dataset,
                                       std::span<const std::size_t> indices);

ReconstructionMetrics reconstruction_metrics(const model::Model<float>& model,
                                             const data::Dataset& dataset,
                                             std::span<const std::size_t> indices);

struct LatentStats {
    double kl = 0.0;
    double assignment_accuracy = 0.0;
    std::vector<double> per_style_kl;
};

/// For each style i, fits a diagonal Gaussian to the subspace-i slice of the
/// style-i latents and averages KL(fit || N(mu1_i, sigma1_i^2 I)). Accuracy
/// counts samples whose nearest prior pattern is their own label. Throws
/// ConfigError when any style has fewer than 2 samples.
LatentStats latent_statistics(std::span<const std::vector<double>> latents,
                              std::span<const std::size_t> labels,
                              const model::SubspacePriorTable& priors);

struct Disentanglement {
    double latent_kl = 0.0;
    double feedback_latent_kl = 0.0;
    double prior_assignment_accuracy = 0.0;
    double feedback_assignment_accuracy = 0.0;
    std::vector<double> per_style_latent_kl;
    std::vector<double> per_style_feedback_kl;
};

/// Latents are posterior means; feedback latents re-encode the reconstructions.
Disentanglement latent_disentanglement(const model::Model<float>& model, const data::Dataset& dataset,
                                       std::span<const std::size_t> indices);

struct EvalReport {
    ReconstructionMetrics reconstruction;
    Disentanglement disentanglement;
};

void to_json(nlohmann::json& j, const ReconstructionMetrics& m);
void to_json(nlohmann::json& j, const Disentanglement& d);
void to_json(nlohmann::json& j, const EvalReport& r);

EvalReport evaluate(const model::Model<float>& model, const data::Dataset& dataset,
                    std::span<const std::size_t> indices);

/// M evenly spaced points from a to b inclusive; symmetry follows the shorter arc.
std::vector<model::ParamPoint> interpolate_points(const model::ParamPoint& a, const model::ParamPoint& b,
                                                  std::size_t m);

using PointDecoder = std::function<std::vector<double>(const model::ParamPoint&)>;

/// Throws RangeError when m < 2 and ShapeError when the style dimensions differ.
dsp::Wavetable interpolate_wavetable(const PointDecoder& decode, const model::ParamPoint& a,
                                     const model::ParamPoint& b, std::size_t m);
dsp::Wavetable interpolate_wavetable(const model::Model<float>& model, const model::ParamPoint& a,
                                     const model::ParamPoint& b, std::size_t m);

/// Per-descriptor median over the dataset (symmetry: circular median by angle).
DescriptorVector median_descriptors(const data::Dataset& dataset);

/// Evenly spaced values from lo to hi inclusive.
std::vector<double> sweep_values(double lo, double hi, std::size_t steps);

/// Decodes `steps` rows varying `which` from lo to hi with the other
/// descriptors fixed at `base`. Throws RangeError when lo >= hi or steps < 2.
dsp::Wavetable descriptor_sweep(const model::Model<float>& model, std::span<const double> style,
                                Descriptor which, double lo, double hi, std::size_t steps,
                                const DescriptorVector& base);

/// Normalized spectral centroid in bins.
double spectral_centroid(std::span<const double> x);

namespace layers {

struct Conv {
    std::size_t in_channels, out_channels, kernel, stride, padding, in_length;
    bool bias = true;
};
struct TransposedConv {
    std::size_t in_channels, out_channels, kernel, stride, padding, in_length;
    bool bias = true;
};
struct Linear {
    std::size_t in_features, out_features;
    bool bias = true;
};
struct Activation {
    std::size_t channels, length;
};
struct Residual {
    std::size_t channels, length;
};
struct BatchNorm {
    std::size_t channels, length;
};

} // namespace layers

using Layer = std::variant<layers::Conv, layers::TransposedConv, layers::Linear, layers::Activation,
                           layers::Residual, layers::BatchNorm>;

struct FlopReport {
    std::uint64_t macs = 0;
    std::uint64_t mac_flops = 0;       ///< 2 per multiply-accumulate
    std::uint64_t bias_flops = 0;      ///< 1 per biased output
    std::uint64_t elementwise_flops = 0; ///< 1 per activation or residual-add element
    std::uint64_t norm_flops = 0;      ///< 2 per normalized element
    std::uint64_t total = 0;
};

void to_json(nlohmann::json& j, const FlopReport& f);

/// Analytic count for one forward pass of batch 1.
FlopReport count_flops(std::span<const Layer> layers);

/// The decoder forward pass as a layer list (matches Model::decode_raw).
std::vector<Layer> decoder_layers(const model::ArchitectureConfig& config);
FlopReport count_flops(const model::ArchitectureConfig& config);

/// Runs the layers with random weights through the differentiation ops and
/// returns the runtime counters (batch 1, inference mode).
ad::OpCounters run_instrumented(std::span<const Layer> layers, std::uint64_t seed = 0);

struct BenchReport {
    std::string variant;
    std::size_t parameter_count = 0;
    std::size_t decoder_parameter_count = 0;
    FlopReport flops;
    std::size_t buffer_length = 1024;
    double sample_rate = 48000.0;
    double buffer_ms = 0.0;
    std::size_t iterations = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p99_ms = 0.0;
    double rtf = 0.0;
};

void to_json(nlohmann::json& j, const BenchReport& b);

inline double buffer_duration_ms(std::size_t buffer_length, double sample_rate)
{
    return 1000.0 * static_cast<double>(buffer_length) / sample_rate;
}

/// Times single decodes (including postprocess) after `warmup` discarded runs.
BenchReport bench_rtf(const model::Model<float>& model, std::size_t buffer_length = 1024,
                      double sample_rate = 48000.0, std::size_t iterations = 100,
                      std::size_t warmup = 10);

/// Nearest-index percentile of unsorted samples, p in [0, 100].
double percentile(std::vector<double> samples, double p);

} // namespace wavespace::eval

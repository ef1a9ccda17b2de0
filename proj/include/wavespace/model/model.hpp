#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "wavespace/ad/graph.hpp"
#include "wavespace/descriptors.hpp"
#include "wavespace/dsp/waveform.hpp"
#include "wavespace/model/config.hpp"

namespace wavespace::model {

using ad::Graph;
using ad::Tensor;
using ad::Var;

/// Decoder condition: brightness, richness, fullness, undulation, cos(symmetry), sin(symmetry).
std::array<double, 6> condition_features(const DescriptorVector& d);

/// Style coordinates plus descriptors; one decoder input.
struct ParamPoint {
    std::vector<double> style;
    DescriptorVector descriptors;
};

struct Posterior {
    std::vector<double> mu;
    std::vector<double> logvar;
};

/// One minibatch: waveforms (B, 1, N), labels, descriptor targets (B, 5).
template <class T>
struct Batch {
    Tensor<T> waveforms;
    std::vector<std::size_t> labels;
    Tensor<T> descriptors;

    std::size_t size() const noexcept { return labels.size(); }
};

struct LossParts {
    double total = 0.0;
    double spectral = 0.0;
    double waveform = 0.0;
    double kl = 0.0;
    double descriptor = 0.0;
    double beta3 = 0.0;
};

struct LossResult {
    Var total;
    LossParts parts;
};

/// Per-sample prior moments stacked to (B, D).
template <class T>
std::pair<Tensor<T>, Tensor<T>> batch_prior(const SubspacePriorTable& table,
                                            std::span<const std::size_t> labels);

/// total = b1 L_s + b2 KL + b3(epoch) L_w [+ sum b4_i |d_i(xhat) - d_i(x)|].
/// x and xhat are (B, N) unit-energy waveforms.
template <class T>
LossResult assemble_loss(Graph<T>& g, Var x, Var xhat, Var mu, Var logvar,
                         const SubspacePriorTable& priors, std::span<const std::size_t> labels,
                         const Tensor<T>& descriptor_targets, const LossWeights& weights,
                         double epoch);

/// Encoder, decoder, prior table and style list. Model<float> is the trained
/// artifact; Model<double> serves gradient checks.
template <class T>
class Model {
public:
    struct Encoded {
        Var mu;
        Var logvar;
    };

    Model() = default;
    Model(ArchitectureConfig config, std::vector<std::string> styles, std::uint64_t init_seed);

    const ArchitectureConfig& config() const noexcept { return config_; }
    const std::vector<std::string>& styles() const noexcept { return styles_; }
    const SubspacePriorTable& priors() const noexcept { return priors_; }
    SubspacePriorTable& priors() noexcept { return priors_; }

    std::vector<ad::Parameter<T>>& parameters() noexcept { return params_; }
    const std::vector<ad::Parameter<T>>& parameters() const noexcept { return params_; }
    std::vector<ad::BatchNormState<T>>& batchnorm_states() noexcept { return bn_; }
    const std::vector<ad::BatchNormState<T>>& batchnorm_states() const noexcept { return bn_; }

    std::size_t parameter_count() const;
    std::size_t encoder_parameter_count() const;
    std::size_t decoder_parameter_count() const;

    /// x: (B, 1, N). Training mode uses batch statistics and updates them.
    Encoded encode(Graph<T>& g, Var x, bool training);
    /// style: (B, |S| 2), condition: (B, 6). Returns the raw (B, 1, N) output.
    Var decode_raw(Graph<T>& g, Var style, Var condition);
    /// decode_raw followed by per-row normalization, (B, N).
    Var decode(Graph<T>& g, Var style, Var condition);

    /// Full training objective for one batch; noise has shape (B, |S| 2).
    LossResult loss(Graph<T>& g, const Batch<T>& batch, const Tensor<T>& noise,
                    const LossWeights& weights, double epoch, bool training);

    /// Eval-mode posterior of one waveform.
    Posterior encode(const dsp::Waveform& x) const;
    std::vector<Posterior> encode(std::span<const dsp::Waveform> xs) const;
    /// Eval-mode decode through postprocess.
    dsp::Waveform decode(std::span<const double> style, const DescriptorVector& d) const;
    dsp::Waveform decode(const ParamPoint& p) const { return decode(p.style, p.descriptors); }
    std::vector<dsp::Waveform> decode(std::span<const ParamPoint> points) const;

    template <class U>
    Model<U> cast() const;

    bool operator==(const Model&) const;

private:
    template <class U>
    friend class Model;

    std::size_t add_param(std::string name, ad::Shape shape, std::size_t fan_in,
                          std::mt19937_64& rng);
    Var bind(Graph<T>& g, std::size_t index);

    ArchitectureConfig config_;
    std::vector<std::string> styles_;
    SubspacePriorTable priors_;
    std::vector<ad::Parameter<T>> params_;
    std::vector<ad::BatchNormState<T>> bn_;
    std::size_t encoder_param_end_ = 0;
};

} // namespace wavespace::model

#include "wavespace/model/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "wavespace/errors.hpp"

namespace wavespace::model {

std::string variant_name(Variant v)
{
    return v == Variant::ws ? "WS" : "WS-S";
}

Variant parse_variant(const std::string& name)
{
    std::string upper = name;
    std::transform(upper.begin(), upper.end(), upper.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (upper == "WS") return Variant::ws;
    if (upper == "WS-S" || upper == "WS_S" || upper == "WSS") return Variant::ws_s;
    throw ConfigError("unknown model variant '" + name + "' (expected WS or WS-S)");
}

namespace {

ArchitectureConfig build(Variant v, std::size_t num_styles, const std::vector<std::size_t>& enc,
                         std::size_t seed_channels, const std::vector<std::size_t>& dec)
{
    ArchitectureConfig c;
    c.variant = v;
    c.num_styles = num_styles;
    for (std::size_t ch : enc) c.encoder.push_back(ConvSpec{ch});
    c.seed_channels = seed_channels;
    for (std::size_t ch : dec) c.decoder.push_back(DecoderBlockSpec{ch});
    c.validate();
    return c;
}

} // namespace

ArchitectureConfig ArchitectureConfig::ws(std::size_t num_styles)
{
    return build(Variant::ws, num_styles, {32, 64, 128, 256, 256, 512}, 256,
                 {64, 32, 32, 16, 16, 8});
}

ArchitectureConfig ArchitectureConfig::ws_s(std::size_t num_styles)
{
    return build(Variant::ws_s, num_styles, {8, 16, 32, 32, 64, 64}, 96, {8, 8, 4, 4, 2, 2});
}

ArchitectureConfig ArchitectureConfig::for_variant(Variant v, std::size_t num_styles)
{
    return v == Variant::ws ? ws(num_styles) : ws_s(num_styles);
}

std::size_t ArchitectureConfig::encoder_output_length() const
{
    std::size_t len = input_length;
    for (const auto& c : encoder) {
        if (c.stride == 0 || len + 2 * c.padding < c.kernel) {
            throw ConfigError("encoder stack collapses the input length to zero");
        }
        len = (len + 2 * c.padding - c.kernel) / c.stride + 1;
    }
    return len;
}

std::size_t ArchitectureConfig::decoder_output_length() const
{
    std::size_t len = seed_length;
    for (const auto& b : decoder) {
        const std::size_t grown = (len - 1) * b.up_stride + b.up_kernel;
        if (grown < 2 * b.up_padding + 1) {
            throw ConfigError("decoder block shrinks the signal to zero");
        }
        len = grown - 2 * b.up_padding;
    }
    return len;
}

void ArchitectureConfig::validate() const
{
    if (num_styles == 0) throw ConfigError("num_styles must be positive");
    if (subspace_dim != 2) throw ConfigError("subspace_dim must be 2");
    if (descriptor_dim != 5) throw ConfigError("descriptor_dim must be 5");
    if (input_length < 4 || input_length % 2 != 0) {
        throw ConfigError("input_length must be even and at least 4");
    }
    if (encoder.empty() || decoder.empty()) throw ConfigError("encoder and decoder need blocks");
    if (seed_channels == 0 || seed_length == 0) throw ConfigError("decoder seed must be nonempty");
    for (const auto& c : encoder) {
        if (c.channels == 0) throw ConfigError("encoder channel count must be positive");
    }
    for (const auto& b : decoder) {
        if (b.channels == 0 || b.residual_kernel % 2 == 0) {
            throw ConfigError("decoder blocks need positive channels and odd residual kernels");
        }
    }
    (void)encoder_output_length();
    if (decoder_output_length() != input_length) {
        throw ConfigError("decoder produces length " + std::to_string(decoder_output_length()) +
                          ", expected " + std::to_string(input_length));
    }
}

void to_json(nlohmann::json& j, const ArchitectureConfig& c)
{
    nlohmann::json enc = nlohmann::json::array();
    for (const auto& e : c.encoder) {
        enc.push_back({{"channels", e.channels}, {"kernel", e.kernel}, {"stride", e.stride},
                       {"padding", e.padding}});
    }
    nlohmann::json dec = nlohmann::json::array();
    for (const auto& d : c.decoder) {
        dec.push_back({{"channels", d.channels},
                       {"up_kernel", d.up_kernel},
                       {"up_stride", d.up_stride},
                       {"up_padding", d.up_padding},
                       {"residual_convs", d.residual_convs},
                       {"residual_kernel", d.residual_kernel}});
    }
    j = {{"variant", variant_name(c.variant)},
         {"input_length", c.input_length},
         {"num_styles", c.num_styles},
         {"subspace_dim", c.subspace_dim},
         {"descriptor_dim", c.descriptor_dim},
         {"encoder", enc},
         {"seed_channels", c.seed_channels},
         {"seed_length", c.seed_length},
         {"decoder", dec},
         {"leaky_slope", c.leaky_slope},
         {"bn_momentum", c.bn_momentum},
         {"bn_epsilon", c.bn_epsilon}};
}

void from_json(const nlohmann::json& j, ArchitectureConfig& c)
{
    c = ArchitectureConfig{};
    c.variant = parse_variant(j.at("variant").get<std::string>());
    j.at("input_length").get_to(c.input_length);
    j.at("num_styles").get_to(c.num_styles);
    j.at("subspace_dim").get_to(c.subspace_dim);
    j.at("descriptor_dim").get_to(c.descriptor_dim);
    for (const auto& e : j.at("encoder")) {
        c.encoder.push_back({e.at("channels"), e.at("kernel"), e.at("stride"), e.at("padding")});
    }
    j.at("seed_channels").get_to(c.seed_channels);
    j.at("seed_length").get_to(c.seed_length);
    for (const auto& d : j.at("decoder")) {
        c.decoder.push_back({d.at("channels"), d.at("up_kernel"), d.at("up_stride"),
                             d.at("up_padding"), d.at("residual_convs"), d.at("residual_kernel")});
    }
    j.at("leaky_slope").get_to(c.leaky_slope);
    j.at("bn_momentum").get_to(c.bn_momentum);
    j.at("bn_epsilon").get_to(c.bn_epsilon);
    c.validate();
}

SubspacePriorTable SubspacePriorTable::defaults(std::size_t num_styles)
{
    return SubspacePriorTable{std::vector<SubspacePrior>(num_styles)};
}

void to_json(nlohmann::json& j, const SubspacePriorTable& t)
{
    j = nlohmann::json::array();
    for (const auto& s : t.subspaces) {
        j.push_back({{"mu0", s.mu0}, {"mu1", s.mu1}, {"sigma0", s.sigma0}, {"sigma1", s.sigma1}});
    }
}

void from_json(const nlohmann::json& j, SubspacePriorTable& t)
{
    t.subspaces.clear();
    for (const auto& s : j) {
        SubspacePrior p;
        s.at("mu0").get_to(p.mu0);
        s.at("mu1").get_to(p.mu1);
        s.at("sigma0").get_to(p.sigma0);
        s.at("sigma1").get_to(p.sigma1);
        if (!(p.sigma0 > 0.0) || !(p.sigma1 > 0.0)) throw ConfigError("prior sigmas must be positive");
        t.subspaces.push_back(p);
    }
}

PriorMoments select_prior(const SubspacePriorTable& table, std::size_t target)
{
    if (target >= table.size()) {
        throw RangeError("style index " + std::to_string(target) + " outside [0, " +
                         std::to_string(table.size()) + ")");
    }
    PriorMoments m;
    for (std::size_t j = 0; j < table.size(); ++j) {
        const auto& s = table.subspaces[j];
        const bool on = j == target;
        const auto& mu = on ? s.mu1 : s.mu0;
        const double sigma = on ? s.sigma1 : s.sigma0;
        for (double v : mu) {
            m.mean.push_back(v);
            m.variance.push_back(sigma * sigma);
        }
    }
    return m;
}

double beta3_schedule(double epoch, double beta3, double rate)
{
    return beta3 * (20.0 * std::exp(-rate * epoch) + 1.0);
}

void to_json(nlohmann::json& j, const LossWeights& w)
{
    j = {{"spectral", w.spectral},      {"kl", w.kl},
         {"waveform", w.waveform},      {"waveform_rate", w.waveform_rate},
         {"descriptor_loss", w.descriptor_loss}, {"descriptor", w.descriptor}};
}

void from_json(const nlohmann::json& j, LossWeights& w)
{
    j.at("spectral").get_to(w.spectral);
    j.at("kl").get_to(w.kl);
    j.at("waveform").get_to(w.waveform);
    j.at("waveform_rate").get_to(w.waveform_rate);
    j.at("descriptor_loss").get_to(w.descriptor_loss);
    j.at("descriptor").get_to(w.descriptor);
}

} // namespace wavespace::model

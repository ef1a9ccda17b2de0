#include "wavespace/eval/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include "wavespace/ad/ops.hpp"
#include "wavespace/dsp/fft.hpp"
#include "wavespace/errors.hpp"

namespace wavespace::eval {

using ad::Var;

namespace {

std::vector<double> magnitudes(std::span<const double> x)
{
    const auto spec = dsp::dft(x);
    std::vector<double> m(x.size() / 2 + 1);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = std::abs(spec[k]);
    return m;
}

} // namespace

ReconstructionMetrics reconstruction_metrics(std::span<const dsp::Waveform> x,
                                             std::span<const dsp::Waveform> xhat,
                                             std::span<const std::size_t> labels,
                                             const std::vector<std::string>& styles)
{
    if (x.empty()) throw ConfigError("evaluation set is empty");
    if (x.size() != xhat.size() || (!labels.empty() && labels.size() != x.size())) {
        throw ShapeError("evaluation inputs have different sizes");
    }
    ReconstructionMetrics m;
    std::size_t num_styles = styles.size();
    for (std::size_t l : labels) num_styles = std::max(num_styles, l + 1);
    m.per_style.resize(labels.empty() ? 0 : num_styles);
    for (std::size_t s = 0; s < m.per_style.size(); ++s) {
        m.per_style[s].style = s < styles.size() ? styles[s] : std::to_string(s);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto a = x[i].samples();
        const auto b = xhat[i].samples();
        if (a.size() != b.size()) throw ShapeError("waveform lengths differ in evaluation");
        double mae = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) mae += std::abs(b[k] - a[k]);
        mae /= static_cast<double>(a.size());
        const auto ma = magnitudes(a), mb = magnitudes(b);
        double mse = 0.0;
        for (std::size_t k = 0; k < ma.size(); ++k) mse += (mb[k] - ma[k]) * (mb[k] - ma[k]);
        mse /= static_cast<double>(ma.size());
        m.waveform_mae += mae;
        m.spectral_mse += mse;
        const auto da = descriptors::extract(a).to_array();
        const auto db = descriptors::extract(b).to_array();
        for (std::size_t k = 0; k < 4; ++k) m.descriptor_mae[k] += std::abs(db[k] - da[k]);
        m.descriptor_mae[4] += descriptors::symmetry_error(db[4], da[4]);
        if (!labels.empty()) {
            auto& s = m.per_style[labels[i]];
            ++s.count;
            s.waveform_mae += mae;
            s.spectral_mse += mse;
        }
    }
    const double inv = 1.0 / static_cast<double>(x.size());
    m.waveform_mae *= inv;
    m.spectral_mse *= inv;
    for (double& d : m.descriptor_mae) d *= inv;
    for (auto& s : m.per_style) {
        if (s.count > 0) {
            s.waveform_mae /= static_cast<double>(s.count);
            s.spectral_mse /= static_cast<double>(s.count);
        }
    }
    return m;
}

std::vector<dsp::Waveform> reconstruct(const model::Model<float>& model, const data::Dataset& dataset,
                                       std::span<const std::size_t> indices)
{
    std::vector<dsp::Waveform> xs;
    for (std::size_t i : indices) xs.push_back(dataset.items.at(i).waveform);
    const auto posteriors = model.encode(xs);
    std::vector<model::ParamPoint> points;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        points.push_back({posteriors[k].mu, dataset.items[indices[k]].descriptors});
    }
    return model.decode(points);
}

ReconstructionMetrics reconstruction_metrics(const model::Model<float>& model,
                                             const data::Dataset& dataset,
                                             std::span<const std::size_t> indices)
{
    if (indices.empty()) throw ConfigError("evaluation set is empty");
    std::vector<dsp::Waveform> xs;
    std::vector<std::size_t> labels;
    for (std::size_t i : indices) {
        xs.push_back(dataset.items.at(i).waveform);
        labels.push_back(dataset.items[i].style_label);
    }
    const auto xhat = reconstruct(model, dataset, indices);
    return reconstruction_metrics(xs, xhat, labels, dataset.styles);
}

LatentStats latent_statistics(std::span<const std::vector<double>> latents,
                              std::span<const std::size_t> labels,
                              const model::SubspacePriorTable& priors)
{
    if (latents.size() != labels.size()) throw ShapeError("latent and label counts differ");
    const std::size_t styles = priors.size();
    std::vector<std::vector<std::size_t>> members(styles);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= styles) throw RangeError("style label outside the prior table");
        if (latents[i].size() != 2 * styles) throw ShapeError("latent dimension does not match the prior table");
        members[labels[i]].push_back(i);
    }
    LatentStats out;
    for (std::size_t s = 0; s < styles; ++s) {
        const auto& idx = members[s];
        if (idx.size() < 2) {
            throw ConfigError("style " + std::to_string(s) + " has fewer than 2 evaluation samples");
        }
        const auto& p = priors.subspaces[s];
        const double vp = p.sigma1 * p.sigma1;
        double kl = 0.0;
        for (std::size_t d = 0; d < 2; ++d) {
            double mean = 0.0;
            for (std::size_t i : idx) mean += latents[i][2 * s + d];
            mean /= static_cast<double>(idx.size());
            double var = 0.0;
            for (std::size_t i : idx) var += std::pow(latents[i][2 * s + d] - mean, 2);
            var /= static_cast<double>(idx.size() - 1);
            var = std::max(var, 1e-12);
            const double diff = mean - p.mu1[d];
            kl += 0.5 * (std::log(vp / var) + (var + diff * diff) / vp - 1.0);
        }
        out.per_style_kl.push_back(kl);
        out.kl += kl / static_cast<double>(styles);
    }
    std::vector<model::PriorMoments> patterns;
    for (std::size_t s = 0; s < styles; ++s) patterns.push_back(model::select_prior(priors, s));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < latents.size(); ++i) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < styles; ++s) {
            double d = 0.0;
            for (std::size_t k = 0; k < latents[i].size(); ++k) {
                d += std::pow(latents[i][k] - patterns[s].mean[k], 2) / patterns[s].variance[k];
            }
            if (d < best_d) {
                best_d = d;
                best = s;
            }
        }
        correct += best == labels[i];
    }
    out.assignment_accuracy = static_cast<double>(correct) / static_cast<double>(latents.size());
    return out;
}

Disentanglement latent_disentanglement(const model::Model<float>& model, const data::Dataset& dataset,
                                       std::span<const std::size_t> indices)
{
    std::vector<dsp::Waveform> xs;
    std::vector<std::size_t> labels;
    for (std::size_t i : indices) {
        xs.push_back(dataset.items.at(i).waveform);
        labels.push_back(dataset.items[i].style_label);
    }
    const auto posteriors = model.encode(xs);
    std::vector<std::vector<double>> latents;
    std::vector<model::ParamPoint> points;
    for (std::size_t k = 0; k < posteriors.size(); ++k) {
        latents.push_back(posteriors[k].mu);
        points.push_back({posteriors[k].mu, dataset.items[indices[k]].descriptors});
    }
    const auto reconstructions = model.decode(points);
    std::vector<std::vector<double>> feedback;
    for (const auto& p : model.encode(reconstructions)) feedback.push_back(p.mu);

    const auto direct = latent_statistics(latents, labels, model.priors());
    const auto fed = latent_statistics(feedback, labels, model.priors());
    return {direct.kl, fed.kl, direct.assignment_accuracy, fed.assignment_accuracy,
            direct.per_style_kl, fed.per_style_kl};
}

EvalReport evaluate(const model::Model<float>& model, const data::Dataset& dataset,
                    std::span<const std::size_t> indices)
{
    return {reconstruction_metrics(model, dataset, indices), latent_disentanglement(model, dataset, indices)};
}

void to_json(nlohmann::json& j, const ReconstructionMetrics& m)
{
    nlohmann::json desc;
    for (std::size_t k = 0; k < 5; ++k) desc[std::string(descriptor_names[k])] = m.descriptor_mae[k];
    nlohmann::json styles = nlohmann::json::array();
    for (const auto& s : m.per_style) {
        styles.push_back({{"style", s.style}, {"count", s.count}, {"waveform_mae", s.waveform_mae},
                          {"spectral_mse", s.spectral_mse}});
    }
    j = {{"waveform_mae", m.waveform_mae}, {"spectral_mse", m.spectral_mse}, {"descriptor_mae", desc},
         {"per_style", styles}};
}

void to_json(nlohmann::json& j, const Disentanglement& d)
{
    j = {{"latent_kl", d.latent_kl},
         {"feedback_latent_kl", d.feedback_latent_kl},
         {"prior_assignment_accuracy", d.prior_assignment_accuracy},
         {"feedback_assignment_accuracy", d.feedback_assignment_accuracy},
         {"per_style_latent_kl", d.per_style_latent_kl},
         {"per_style_feedback_kl", d.per_style_feedback_kl}};
}

void to_json(nlohmann::json& j, const EvalReport& r)
{
    j = nlohmann::json(r.reconstruction);
    j.update(nlohmann::json(r.disentanglement));
}

std::vector<model::ParamPoint> interpolate_points(const model::ParamPoint& a, const model::ParamPoint& b,
                                                  std::size_t m)
{
    if (m < 2) throw RangeError("interpolation needs at least 2 rows");
    if (a.style.size() != b.style.size()) {
        throw ShapeError("style coordinates differ in size: " + std::to_string(a.style.size()) + " vs " +
                         std::to_string(b.style.size()));
    }
    const auto da = a.descriptors.to_array(), db = b.descriptors.to_array();
    const double arc = descriptors::wrap_angle(db[4] - da[4]);
    std::vector<model::ParamPoint> out;
    for (std::size_t r = 0; r < m; ++r) {
        if (r == 0) {
            out.push_back(a);
            continue;
        }
        if (r + 1 == m) {
            out.push_back(b);
            continue;
        }
        const double t = static_cast<double>(r) / static_cast<double>(m - 1);
        model::ParamPoint p;
        for (std::size_t k = 0; k < a.style.size(); ++k) p.style.push_back((1.0 - t) * a.style[k] + t * b.style[k]);
        std::array<double, 5> d{};
        for (std::size_t k = 0; k < 4; ++k) d[k] = (1.0 - t) * da[k] + t * db[k];
        d[4] = descriptors::wrap_angle(da[4] + t * arc);
        p.descriptors = DescriptorVector::from_array(d);
        out.push_back(std::move(p));
    }
    return out;
}

dsp::Wavetable interpolate_wavetable(const PointDecoder& decode, const model::ParamPoint& a,
                                     const model::ParamPoint& b, std::size_t m)
{
    const auto points = interpolate_points(a, b, m);
    std::vector<double> data;
    std::size_t columns = 0;
    for (const auto& p : points) {
        const auto row = decode(p);
        if (columns == 0) columns = row.size();
        if (row.size() != columns) throw ShapeError("decoder returned rows of different lengths");
        data.insert(data.end(), row.begin(), row.end());
    }
    return dsp::Wavetable(std::move(data), m, columns);
}

dsp::Wavetable interpolate_wavetable(const model::Model<float>& model, const model::ParamPoint& a,
                                     const model::ParamPoint& b, std::size_t m)
{
    if (a.style.size() != model.config().style_dim() || b.style.size() != model.config().style_dim()) {
        throw ShapeError("style coordinates must have " + std::to_string(model.config().style_dim()) +
                         " entries");
    }
    // Row by row so every row equals a standalone decode of its point.
    return interpolate_wavetable(
        [&model](const model::ParamPoint& p) {
            const auto w = model.decode(p);
            return std::vector<double>(w.samples().begin(), w.samples().end());
        },
        a, b, m);
}

DescriptorVector median_descriptors(const data::Dataset& dataset)
{
    if (dataset.items.empty()) throw ConfigError("dataset is empty");
    std::array<double, 5> out{};
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<double> v;
        for (const auto& it : dataset.items) v.push_back(it.descriptors[k]);
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        out[k] = v[v.size() / 2];
    }
    // Circular median: the sample angle minimizing total angular distance.
    double best = 0.0, best_cost = std::numeric_limits<double>::infinity();
    for (const auto& cand : dataset.items) {
        double cost = 0.0;
        for (const auto& it : dataset.items) {
            cost += descriptors::symmetry_error(cand.descriptors.symmetry, it.descriptors.symmetry);
        }
        if (cost < best_cost) {
            best_cost = cost;
            best = cand.descriptors.symmetry;
        }
    }
    out[4] = best;
    return DescriptorVector::from_array(out);
}

std::vector<double> sweep_values(double lo, double hi, std::size_t steps)
{
    if (steps < 2) throw RangeError("a sweep needs at least 2 steps");
    if (!(lo < hi)) throw RangeError("sweep bounds must satisfy lo < hi");
    std::vector<double> v;
    for (std::size_t i = 0; i < steps; ++i) {
        v.push_back(i + 1 == steps ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1));
    }
    return v;
}

dsp::Wavetable descriptor_sweep(const model::Model<float>& model, std::span<const double> style,
                                Descriptor which, double lo, double hi, std::size_t steps,
                                const DescriptorVector& base)
{
    std::vector<model::ParamPoint> points;
    for (double v : sweep_values(lo, hi, steps)) {
        model::ParamPoint p{std::vector<double>(style.begin(), style.end()), base};
        p.descriptors[static_cast<std::size_t>(which)] = v;
        points.push_back(std::move(p));
    }
    std::vector<dsp::Waveform> rows;
    for (const auto& p : points) rows.push_back(model.decode(p));
    return dsp::Wavetable(rows);
}

double spectral_centroid(std::span<const double> x)
{
    const auto spec = dsp::dft(x);
    double total = 0.0, weighted = 0.0;
    for (std::size_t k = 0; k <= x.size() / 2; ++k) {
        const double p = std::norm(spec[k]);
        total += p;
        weighted += static_cast<double>(k) * p;
    }
    return total > 0.0 ? weighted / total : 0.0;
}

void to_json(nlohmann::json& j, const FlopReport& f)
{
    j = {{"macs", f.macs},           {"mac_flops", f.mac_flops},
         {"bias_flops", f.bias_flops}, {"elementwise_flops", f.elementwise_flops},
         {"norm_flops", f.norm_flops}, {"total", f.total}};
}

namespace {

std::size_t conv_out(const layers::Conv& c)
{
    if (c.stride == 0 || c.in_length + 2 * c.padding < c.kernel) throw ConfigError("conv layer has no output");
    return (c.in_length + 2 * c.padding - c.kernel) / c.stride + 1;
}

std::size_t tconv_out(const layers::TransposedConv& c)
{
    return (c.in_length - 1) * c.stride + c.kernel - 2 * c.padding;
}

} // namespace

FlopReport count_flops(std::span<const Layer> list)
{
    FlopReport f;
    for (const auto& layer : list) {
        std::visit(
            [&f](const auto& l) {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, layers::Conv>) {
                    const std::size_t out = conv_out(l);
                    f.macs += l.out_channels * l.in_channels * l.kernel * out;
                    if (l.bias) f.bias_flops += l.out_channels * out;
                } else if constexpr (std::is_same_v<L, layers::TransposedConv>) {
                    f.macs += l.in_channels * l.out_channels * l.kernel * l.in_length;
                    if (l.bias) f.bias_flops += l.out_channels * tconv_out(l);
                } else if constexpr (std::is_same_v<L, layers::Linear>) {
                    f.macs += l.in_features * l.out_features;
                    if (l.bias) f.bias_flops += l.out_features;
                } else if constexpr (std::is_same_v<L, layers::BatchNorm>) {
                    f.norm_flops += 2 * l.channels * l.length;
                } else {
                    f.elementwise_flops += l.channels * l.length;
                }
            },
            layer);
    }
    f.mac_flops = 2 * f.macs;
    f.total = f.mac_flops + f.bias_flops + f.elementwise_flops + f.norm_flops;
    return f;
}

std::vector<Layer> decoder_layers(const model::ArchitectureConfig& config)
{
    config.validate();
    std::vector<Layer> out;
    const std::size_t seed = config.seed_channels * config.seed_length;
    out.push_back(layers::Linear{config.style_dim() + config.condition_dim(), seed});
    out.push_back(layers::Activation{config.seed_channels, config.seed_length});
    std::size_t cin = config.seed_channels, len = config.seed_length;
    for (const auto& b : config.decoder) {
        const layers::TransposedConv up{cin, b.channels, b.up_kernel, b.up_stride, b.up_padding, len};
        out.push_back(up);
        len = tconv_out(up);
        out.push_back(layers::Activation{b.channels, len});
        for (std::size_t k = 0; k < b.residual_convs; ++k) {
            out.push_back(layers::Conv{b.channels, b.channels, b.residual_kernel, 1, b.residual_kernel / 2, len});
            if (k + 1 < b.residual_convs) out.push_back(layers::Activation{b.channels, len});
        }
        out.push_back(layers::Residual{b.channels, len});
        out.push_back(layers::Activation{b.channels, len});
        cin = b.channels;
    }
    out.push_back(layers::Conv{cin, 1, 1, 1, 0, len});
    return out;
}

FlopReport count_flops(const model::ArchitectureConfig& config)
{
    const auto l = decoder_layers(config);
    return count_flops(l);
}

ad::OpCounters run_instrumented(std::span<const Layer> list, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    auto random = [&](ad::Shape s) {
        ad::Tensor<float> t(std::move(s));
        for (float& v : t.data) v = u(rng);
        return t;
    };
    ad::Graph<float> g(ad::GradMode::disabled);
    auto bias = [&](bool on, std::size_t n) -> std::optional<Var> {
        if (!on) return std::nullopt;
        return g.constant(random({n}));
    };
    const auto before = ad::op_counters();
    ad::op_counters().reset();
    for (const auto& layer : list) {
        std::visit(
            [&](const auto& l) {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, layers::Conv>) {
                    const Var x = g.constant(random({1, l.in_channels, l.in_length}));
                    const Var w = g.constant(random({l.out_channels, l.in_channels, l.kernel}));
                    ad::conv1d(g, x, w, bias(l.bias, l.out_channels), l.stride, l.padding);
                } else if constexpr (std::is_same_v<L, layers::TransposedConv>) {
                    const Var x = g.constant(random({1, l.in_channels, l.in_length}));
                    const Var w = g.constant(random({l.in_channels, l.out_channels, l.kernel}));
                    ad::conv1d_transposed(g, x, w, bias(l.bias, l.out_channels), l.stride, l.padding);
                } else if constexpr (std::is_same_v<L, layers::Linear>) {
                    const Var x = g.constant(random({1, l.in_features}));
                    const Var w = g.constant(random({l.out_features, l.in_features}));
                    ad::linear(g, x, w, bias(l.bias, l.out_features));
                } else if constexpr (std::is_same_v<L, layers::Activation>) {
                    ad::leaky_relu(g, g.constant(random({1, l.channels, l.length})));
                } else if constexpr (std::is_same_v<L, layers::Residual>) {
                    ad::add(g, g.constant(random({1, l.channels, l.length})),
                            g.constant(random({1, l.channels, l.length})));
                } else {
                    ad::BatchNormState<float> state("bn", l.channels);
                    ad::batchnorm1d(g, g.constant(random({1, l.channels, l.length})),
                                    g.constant(random({l.channels})), g.constant(random({l.channels})), state,
                                    false);
                }
            },
            layer);
    }
    const auto measured = ad::op_counters();
    ad::op_counters() = before;
    return measured;
}

double percentile(std::vector<double> samples, double p)
{
    if (samples.empty()) return 0.0;
    std::sort(samples.begin(), samples.end());
    const double rank = std::ceil(p / 100.0 * static_cast<double>(samples.size()));
    const std::size_t idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(samples.size()))) - 1;
    return samples[idx];
}

void to_json(nlohmann::json& j, const BenchReport& b)
{
    j = {{"variant", b.variant},
         {"parameter_count", b.parameter_count},
         {"decoder_parameter_count", b.decoder_parameter_count},
         {"flops", b.flops},
         {"buffer_length", b.buffer_length},
         {"sample_rate", b.sample_rate},
         {"buffer_ms", b.buffer_ms},
         {"iterations", b.iterations},
         {"mean_ms", b.mean_ms},
         {"p50_ms", b.p50_ms},
         {"p99_ms", b.p99_ms},
         {"rtf", b.rtf}};
}

BenchReport bench_rtf(const model::Model<float>& model, std::size_t buffer_length, double sample_rate,
                      std::size_t iterations, std::size_t warmup)
{
    if (iterations == 0) throw ConfigError("benchmark needs at least one iteration");
    BenchReport r;
    r.variant = model::variant_name(model.config().variant);
    r.parameter_count = model.parameter_count();
    r.decoder_parameter_count = model.decoder_parameter_count();
    r.flops = count_flops(model.config());
    r.buffer_length = buffer_length;
    r.sample_rate = sample_rate;
    r.buffer_ms = buffer_duration_ms(buffer_length, sample_rate);
    r.iterations = iterations;

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const std::size_t dim = model.config().style_dim();
    auto point = [&] {
        model::ParamPoint p;
        for (std::size_t k = 0; k < dim; ++k) p.style.push_back(u(rng));
        p.descriptors = {0.3 + 0.1 * u(rng), 0.3, 0.25, 0.1, u(rng)};
        return p;
    };
    for (std::size_t i = 0; i < warmup; ++i) (void)model.decode(point());
    std::vector<double> times;
    double checksum = 0.0;
    for (std::size_t i = 0; i < iterations; ++i) {
        const auto p = point();
        const auto t0 = std::chrono::steady_clock::now();
        const auto w = model.decode(p);
        const auto t1 = std::chrono::steady_clock::now();
        checksum += w[0];
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    (void)checksum;
    double sum = 0.0;
    for (double t : times) sum += t;
    r.mean_ms = sum / static_cast<double>(times.size());
    r.p50_ms = percentile(times, 50.0);
    r.p99_ms = percentile(times, 99.0);
    r.rtf = r.buffer_ms / r.mean_ms;
    return r;
}

} // namespace wavespace::eval

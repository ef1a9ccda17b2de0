#include "wavespace/model/model.hpp"

#include <cmath>

#include "wavespace/ad/ops.hpp"
#include "wavespace/errors.hpp"

namespace wavespace::model {

using ad::shape_string;

std::array<double, 6> condition_features(const DescriptorVector& d)
{
    return {d.brightness, d.richness, d.fullness, d.undulation, std::cos(d.symmetry),
            std::sin(d.symmetry)};
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> batch_prior(const SubspacePriorTable& table,
                                            std::span<const std::size_t> labels)
{
    const std::size_t dim = 2 * table.size();
    Tensor<T> mean({labels.size(), dim}), var({labels.size(), dim});
    for (std::size_t b = 0; b < labels.size(); ++b) {
        const PriorMoments m = select_prior(table, labels[b]);
        for (std::size_t i = 0; i < dim; ++i) {
            mean.data[b * dim + i] = static_cast<T>(m.mean[i]);
            var.data[b * dim + i] = static_cast<T>(m.variance[i]);
        }
    }
    return {std::move(mean), std::move(var)};
}

template <class T>
LossResult assemble_loss(Graph<T>& g, Var x, Var xhat, Var mu, Var logvar,
                         const SubspacePriorTable& priors, std::span<const std::size_t> labels,
                         const Tensor<T>& descriptor_targets, const LossWeights& weights,
                         double epoch)
{
    if (labels.size() != g.shape(mu)[0]) {
        throw ShapeError("label count " + std::to_string(labels.size()) + " does not match batch " +
                         shape_string(g.shape(mu)));
    }
    const auto [prior_mean, prior_var] = batch_prior<T>(priors, labels);
    const Var spectral =
        ad::mse_loss(g, ad::magnitude_spectrum(g, xhat), ad::magnitude_spectrum(g, x));
    const Var waveform = ad::l1_loss(g, xhat, x);
    const Var kl = ad::kl_diag_gaussian(g, mu, logvar, prior_mean, prior_var);
    const double beta3 = beta3_schedule(epoch, weights.waveform, weights.waveform_rate);

    std::vector<Var> terms{spectral, kl, waveform};
    std::vector<double> coeffs{weights.spectral, weights.kl, beta3};
    std::optional<Var> desc;
    if (weights.descriptor_loss) {
        const Var features = ad::descriptor_features(g, xhat, descriptors::default_compression);
        desc = ad::descriptor_l1(g, features, descriptor_targets, weights.descriptor);
        terms.push_back(*desc);
        coeffs.push_back(1.0);
    }
    LossResult r;
    r.total = ad::weighted_sum(g, terms, coeffs);
    r.parts.total = static_cast<double>(g.value(r.total).data[0]);
    r.parts.spectral = static_cast<double>(g.value(spectral).data[0]);
    r.parts.waveform = static_cast<double>(g.value(waveform).data[0]);
    r.parts.kl = static_cast<double>(g.value(kl).data[0]);
    r.parts.descriptor = desc ? static_cast<double>(g.value(*desc).data[0]) : 0.0;
    r.parts.beta3 = beta3;
    return r;
}

template <class T>
Model<T>::Model(ArchitectureConfig config, std::vector<std::string> styles, std::uint64_t init_seed)
    : config_(std::move(config)), styles_(std::move(styles))
{
    config_.validate();
    if (styles_.size() != config_.num_styles) {
        throw ConfigError("style list has " + std::to_string(styles_.size()) +
                          " names, config expects " + std::to_string(config_.num_styles));
    }
    priors_ = SubspacePriorTable::defaults(config_.num_styles);
    std::mt19937_64 rng(init_seed);

    std::size_t cin = 1;
    for (std::size_t i = 0; i < config_.encoder.size(); ++i) {
        const auto& c = config_.encoder[i];
        const std::string p = "encoder." + std::to_string(i);
        add_param(p + ".conv.weight", {c.channels, cin, c.kernel}, cin * c.kernel, rng);
        add_param(p + ".conv.bias", {c.channels}, cin * c.kernel, rng);
        params_.emplace_back(p + ".bn.gamma", Tensor<T>({c.channels}, T{1}));
        params_.emplace_back(p + ".bn.beta", Tensor<T>({c.channels}, T{0}));
        bn_.emplace_back(p + ".bn", c.channels);
        bn_.back().momentum = config_.bn_momentum;
        bn_.back().epsilon = config_.bn_epsilon;
        cin = c.channels;
    }
    const std::size_t flat = cin * config_.encoder_output_length();
    add_param("encoder.head.weight", {2 * config_.style_dim(), flat}, flat, rng);
    add_param("encoder.head.bias", {2 * config_.style_dim()}, flat, rng);
    encoder_param_end_ = params_.size();

    const std::size_t zin = config_.style_dim() + config_.condition_dim();
    const std::size_t seed = config_.seed_channels * config_.seed_length;
    add_param("decoder.seed.weight", {seed, zin}, zin, rng);
    add_param("decoder.seed.bias", {seed}, zin, rng);
    cin = config_.seed_channels;
    for (std::size_t i = 0; i < config_.decoder.size(); ++i) {
        const auto& b = config_.decoder[i];
        const std::string p = "decoder." + std::to_string(i);
        add_param(p + ".up.weight", {cin, b.channels, b.up_kernel}, cin * b.up_kernel, rng);
        add_param(p + ".up.bias", {b.channels}, cin * b.up_kernel, rng);
        for (std::size_t k = 0; k < b.residual_convs; ++k) {
            const std::string r = p + ".res." + std::to_string(k);
            const std::size_t fan = b.channels * b.residual_kernel;
            add_param(r + ".weight", {b.channels, b.channels, b.residual_kernel}, fan, rng);
            add_param(r + ".bias", {b.channels}, fan, rng);
        }
        cin = b.channels;
    }
    add_param("decoder.out.weight", {1, cin, 1}, cin, rng);
    add_param("decoder.out.bias", {1}, cin, rng);
}

template <class T>
std::size_t Model<T>::add_param(std::string name, ad::Shape shape, std::size_t fan_in,
                                std::mt19937_64& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> value(std::move(shape));
    for (T& v : value.data) v = static_cast<T>(u(rng));
    params_.emplace_back(std::move(name), std::move(value));
    return params_.size() - 1;
}

template <class T>
Var Model<T>::bind(Graph<T>& g, std::size_t index)
{
    if (g.grad_enabled()) return g.parameter(params_.at(index));
    return g.parameter(std::as_const(params_.at(index)));
}

template <class T>
std::size_t Model<T>::parameter_count() const
{
    return encoder_parameter_count() + decoder_parameter_count();
}

template <class T>
std::size_t Model<T>::encoder_parameter_count() const
{
    std::size_t n = 0;
    for (std::size_t i = 0; i < encoder_param_end_; ++i) n += params_[i].value.size();
    return n;
}

template <class T>
std::size_t Model<T>::decoder_parameter_count() const
{
    std::size_t n = 0;
    for (std::size_t i = encoder_param_end_; i < params_.size(); ++i) n += params_[i].value.size();
    return n;
}

template <class T>
typename Model<T>::Encoded Model<T>::encode(Graph<T>& g, Var x, bool training)
{
    const auto& xs = g.shape(x);
    if (xs.size() != 3 || xs[1] != 1 || xs[2] != config_.input_length) {
        throw ShapeError("encoder expects (B, 1, " + std::to_string(config_.input_length) +
                         "), got " + shape_string(xs));
    }
    const std::size_t batch = xs[0];
    std::size_t pi = 0;
    Var h = x;
    for (std::size_t i = 0; i < config_.encoder.size(); ++i) {
        const auto& c = config_.encoder[i];
        const Var w = bind(g, pi++);
        const Var b = bind(g, pi++);
        h = ad::conv1d(g, h, w, b, c.stride, c.padding);
        const Var gamma = bind(g, pi++);
        const Var beta = bind(g, pi++);
        h = ad::batchnorm1d(g, h, gamma, beta, bn_[i], training);
        h = ad::leaky_relu(g, h, config_.leaky_slope);
    }
    const std::size_t flat = g.shape(h)[1] * g.shape(h)[2];
    h = ad::reshape(g, h, {batch, flat});
    const Var hw = bind(g, pi++);
    const Var hb = bind(g, pi++);
    const Var head = ad::linear(g, h, hw, hb);
    const std::size_t d = config_.style_dim();
    return {ad::slice_columns(g, head, 0, d), ad::slice_columns(g, head, d, d)};
}

template <class T>
Var Model<T>::decode_raw(Graph<T>& g, Var style, Var condition)
{
    const auto& ss = g.shape(style);
    const auto& cs = g.shape(condition);
    if (ss.size() != 2 || ss[1] != config_.style_dim() || cs.size() != 2 ||
        cs[1] != config_.condition_dim() || cs[0] != ss[0]) {
        throw ShapeError("decoder expects style (B, " + std::to_string(config_.style_dim()) +
                         ") and condition (B, " + std::to_string(config_.condition_dim()) +
                         "), got " + shape_string(ss) + " and " + shape_string(cs));
    }
    const std::size_t batch = ss[0];
    std::size_t pi = encoder_param_end_;
    const Var z = ad::concat_columns(g, style, condition);
    const Var sw = bind(g, pi++);
    const Var sb = bind(g, pi++);
    Var h = ad::linear(g, z, sw, sb);
    h = ad::reshape(g, h, {batch, config_.seed_channels, config_.seed_length});
    h = ad::leaky_relu(g, h, config_.leaky_slope);
    for (const auto& b : config_.decoder) {
        const Var uw = bind(g, pi++);
        const Var ub = bind(g, pi++);
        h = ad::conv1d_transposed(g, h, uw, ub, b.up_stride, b.up_padding);
        h = ad::leaky_relu(g, h, config_.leaky_slope);
        Var r = h;
        for (std::size_t k = 0; k < b.residual_convs; ++k) {
            const Var rw = bind(g, pi++);
            const Var rb = bind(g, pi++);
            r = ad::conv1d(g, r, rw, rb, 1, b.residual_kernel / 2);
            if (k + 1 < b.residual_convs) r = ad::leaky_relu(g, r, config_.leaky_slope);
        }
        h = ad::leaky_relu(g, ad::add(g, h, r), config_.leaky_slope);
    }
    const Var ow = bind(g, pi++);
    const Var ob = bind(g, pi++);
    return ad::conv1d(g, h, ow, ob, 1, 0);
}

template <class T>
Var Model<T>::decode(Graph<T>& g, Var style, Var condition)
{
    return ad::normalize_waveform(g, decode_raw(g, style, condition));
}

template <class T>
LossResult Model<T>::loss(Graph<T>& g, const Batch<T>& batch, const Tensor<T>& noise,
                          const LossWeights& weights, double epoch, bool training)
{
    const std::size_t b = batch.size();
    const std::size_t n = config_.input_length;
    if (batch.waveforms.shape != ad::Shape{b, 1, n} || batch.descriptors.shape != ad::Shape{b, 5}) {
        throw ShapeError("batch tensors " + shape_string(batch.waveforms.shape) + " and " +
                         shape_string(batch.descriptors.shape) + " do not match " +
                         std::to_string(b) + " labels");
    }
    Tensor<T> cond({b, config_.condition_dim()});
    for (std::size_t i = 0; i < b; ++i) {
        const auto f = condition_features(DescriptorVector::from_array(std::vector<double>(
            batch.descriptors.data.begin() + i * 5, batch.descriptors.data.begin() + i * 5 + 5)));
        for (std::size_t k = 0; k < f.size(); ++k) cond.data[i * f.size() + k] = static_cast<T>(f[k]);
    }
    const Var x = g.constant(batch.waveforms);
    const Encoded e = encode(g, x, training);
    const Var z = ad::reparameterize(g, e.mu, e.logvar, noise);
    const Var xhat = decode(g, z, g.constant(std::move(cond)));
    return assemble_loss(g, ad::reshape(g, x, {b, n}), xhat, e.mu, e.logvar, priors_,
                         batch.labels, batch.descriptors, weights, epoch);
}

template <class T>
std::vector<Posterior> Model<T>::encode(std::span<const dsp::Waveform> xs) const
{
    const std::size_t n = config_.input_length;
    Tensor<T> x({xs.size(), 1, n});
    for (std::size_t b = 0; b < xs.size(); ++b) {
        if (xs[b].size() != n) {
            throw ShapeError("waveform length " + std::to_string(xs[b].size()) + " != " +
                             std::to_string(n));
        }
        for (std::size_t i = 0; i < n; ++i) x.data[b * n + i] = static_cast<T>(xs[b][i]);
    }
    Graph<T> g(ad::GradMode::disabled);
    // Eval-mode forward reads parameters and running statistics only.
    const Encoded e = const_cast<Model*>(this)->encode(g, g.constant(std::move(x)), false);
    const std::size_t d = config_.style_dim();
    std::vector<Posterior> out(xs.size());
    for (std::size_t b = 0; b < xs.size(); ++b) {
        for (std::size_t i = 0; i < d; ++i) {
            out[b].mu.push_back(static_cast<double>(g.value(e.mu).data[b * d + i]));
            out[b].logvar.push_back(static_cast<double>(g.value(e.logvar).data[b * d + i]));
        }
    }
    return out;
}

template <class T>
Posterior Model<T>::encode(const dsp::Waveform& x) const
{
    return encode(std::span<const dsp::Waveform>(&x, 1)).front();
}

template <class T>
std::vector<dsp::Waveform> Model<T>::decode(std::span<const ParamPoint> points) const
{
    const std::size_t d = config_.style_dim();
    const std::size_t c = config_.condition_dim();
    Tensor<T> style({points.size(), d}), cond({points.size(), c});
    for (std::size_t b = 0; b < points.size(); ++b) {
        if (points[b].style.size() != d) {
            throw ShapeError("style coordinates have " + std::to_string(points[b].style.size()) +
                             " entries, expected " + std::to_string(d));
        }
        for (std::size_t i = 0; i < d; ++i) style.data[b * d + i] = static_cast<T>(points[b].style[i]);
        const auto f = condition_features(points[b].descriptors);
        for (std::size_t i = 0; i < c; ++i) cond.data[b * c + i] = static_cast<T>(f[i]);
    }
    Graph<T> g(ad::GradMode::disabled);
    const Var raw = const_cast<Model*>(this)->decode_raw(g, g.constant(std::move(style)),
                                                         g.constant(std::move(cond)));
    const std::size_t n = config_.input_length;
    std::vector<dsp::Waveform> out;
    out.reserve(points.size());
    std::vector<double> row(n);
    for (std::size_t b = 0; b < points.size(); ++b) {
        for (std::size_t i = 0; i < n; ++i) row[i] = static_cast<double>(g.value(raw).data[b * n + i]);
        out.push_back(dsp::postprocess(row));
    }
    return out;
}

template <class T>
dsp::Waveform Model<T>::decode(std::span<const double> style, const DescriptorVector& d) const
{
    const ParamPoint p{std::vector<double>(style.begin(), style.end()), d};
    return decode(std::span<const ParamPoint>(&p, 1)).front();
}

template <class T>
template <class U>
Model<U> Model<T>::cast() const
{
    auto convert = [](const Tensor<T>& t) {
        Tensor<U> out(t.shape);
        for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = static_cast<U>(t.data[i]);
        return out;
    };
    Model<U> m;
    m.config_ = config_;
    m.styles_ = styles_;
    m.priors_ = priors_;
    m.encoder_param_end_ = encoder_param_end_;
    for (const auto& p : params_) m.params_.emplace_back(p.name, convert(p.value));
    for (const auto& s : bn_) {
        ad::BatchNormState<U> b(s.name, s.running_mean.size());
        b.running_mean = convert(s.running_mean);
        b.running_var = convert(s.running_var);
        b.momentum = s.momentum;
        b.epsilon = s.epsilon;
        m.bn_.push_back(std::move(b));
    }
    return m;
}

template <class T>
bool Model<T>::operator==(const Model& o) const
{
    if (config_ != o.config_ || styles_ != o.styles_ || priors_ != o.priors_ ||
        params_.size() != o.params_.size() || bn_.size() != o.bn_.size() ||
        encoder_param_end_ != o.encoder_param_end_) {
        return false;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name != o.params_[i].name || params_[i].value != o.params_[i].value) return false;
    }
    for (std::size_t i = 0; i < bn_.size(); ++i) {
        const auto& a = bn_[i];
        const auto& b = o.bn_[i];
        if (a.name != b.name || a.running_mean != b.running_mean || a.running_var != b.running_var ||
            a.momentum != b.momentum || a.epsilon != b.epsilon) {
            return false;
        }
    }
    return true;
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;

#define WAVESPACE_INSTANTIATE_LOSS(T)                                                              \
    template std::pair<Tensor<T>, Tensor<T>> batch_prior<T>(const SubspacePriorTable&,          \
                                                            std::span<const std::size_t>);      \
    template LossResult assemble_loss<T>(Graph<T>&, Var, Var, Var, Var, const SubspacePriorTable&, \
                                         std::span<const std::size_t>, const Tensor<T>&,        \
                                         const LossWeights&, double);

WAVESPACE_INSTANTIATE_LOSS(float)
WAVESPACE_INSTANTIATE_LOSS(double)

} // namespace wavespace::model

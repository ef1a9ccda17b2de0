#include "wavespace/ad/ops.hpp"

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>

#include <Eigen/Core>

#include "wavespace/dsp/fft.hpp"
#include "wavespace/errors.hpp"

namespace wavespace::ad {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b)
{
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                     shape_string(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank)
{
    if (s.size() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(s));
    }
}

/// Treats (B, N) and (B, 1, N) alike; returns {B, N}.
std::pair<std::size_t, std::size_t> rows_and_length(const char* op, const Shape& s)
{
    if (s.size() == 2) {
        return {s[0], s[1]};
    }
    if (s.size() == 3 && s[1] == 1) {
        return {s[0], s[2]};
    }
    throw ShapeError(std::string(op) + ": expected (B, N) or (B, 1, N), got " + shape_string(s));
}

template <class T>
void check_bias(const char* op, Graph<T>& g, std::optional<Var> bias, std::size_t channels)
{
    if (bias && (g.shape(*bias).size() != 1 || g.shape(*bias)[0] != channels)) {
        throw ShapeError(std::string(op) + ": bias shape " + shape_string(g.shape(*bias)) +
                         " does not match " + std::to_string(channels) + " output channels");
    }
}

template <class T>
bool any_requires(Graph<T>& g, std::initializer_list<std::optional<Var>> vars)
{
    for (const auto& v : vars) {
        if (v && g.requires_grad(*v)) {
            return true;
        }
    }
    return false;
}

template <class T>
T sigma(T d, T k)
{
    return std::log1p(d * std::expm1(k)) / k;
}

template <class T>
T sigma_prime(T d, T k)
{
    const T e = std::expm1(k);
    return e / (k * (d * e + T{1}));
}

} // namespace

// ---------------------------------------------------------------------------
// Convolutions

template <class T>
Var conv1d(Graph<T>& g, Var xv, Var wv, std::optional<Var> bv, std::size_t stride,
           std::size_t padding)
{
    const Tensor<T>& x = g.value(xv);
    const Tensor<T>& w = g.value(wv);
    require_rank("conv1d", x.shape, 3);
    require_rank("conv1d", w.shape, 3);
    if (x.shape[1] != w.shape[1]) {
        shape_mismatch("conv1d", x.shape, w.shape);
    }
    const std::size_t batch = x.shape[0], channels = x.shape[1], length = x.shape[2];
    const std::size_t out_ch = w.shape[0], kernel = w.shape[2];
    check_bias("conv1d", g, bv, out_ch);
    if (stride == 0 || length + 2 * padding < kernel) {
        shape_mismatch("conv1d", x.shape, w.shape);
    }
    const std::size_t out_len = (length + 2 * padding - kernel) / stride + 1;
    const std::size_t ck = channels * kernel;
    const std::size_t cols = batch * out_len;

    auto col = std::make_shared<std::vector<T>>(ck * cols, T{0});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
            const T* src = x.data.data() + (b * channels + c) * length;
            for (std::size_t k = 0; k < kernel; ++k) {
                T* dst = col->data() + (c * kernel + k) * cols + b * out_len;
                for (std::size_t t = 0; t < out_len; ++t) {
                    const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(t * stride + k) -
                                               static_cast<std::ptrdiff_t>(padding);
                    if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(length)) {
                        dst[t] = src[idx];
                    }
                }
            }
        }
    }

    MatR<T> out_all(out_ch, cols);
    out_all.noalias() = CMapR<T>(w.data.data(), out_ch, ck) * CMapR<T>(col->data(), ck, cols);

    Tensor<T> y({batch, out_ch, out_len});
    const T* bias = bv ? g.value(*bv).data.data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < out_ch; ++o) {
            T* dst = y.data.data() + (b * out_ch + o) * out_len;
            const T* src = out_all.data() + o * cols + b * out_len;
            const T add = bias != nullptr ? bias[o] : T{0};
            for (std::size_t t = 0; t < out_len; ++t) {
                dst[t] = src[t] + add;
            }
        }
    }

    auto& counters = op_counters();
    counters.macs += batch * out_ch * channels * kernel * out_len;
    if (bv) {
        counters.bias_adds += batch * out_ch * out_len;
    }

    const bool needs = any_requires(g, {xv, wv, bv});
    return g.record(std::move(y), needs, [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        MatR<T> dy_all(out_ch, cols);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t o = 0; o < out_ch; ++o) {
                const T* src = dy.data.data() + (b * out_ch + o) * out_len;
                T* dst = dy_all.data() + o * cols + b * out_len;
                std::copy(src, src + out_len, dst);
            }
        }
        if (gr.requires_grad(wv)) {
            MapR<T>(gr.grad(wv).data.data(), out_ch, ck).noalias() +=
                dy_all * CMapR<T>(col->data(), ck, cols).transpose();
        }
        if (bv && gr.requires_grad(*bv)) {
            T* db = gr.grad(*bv).data.data();
            for (std::size_t o = 0; o < out_ch; ++o) {
                db[o] += dy_all.row(o).sum();
            }
        }
        if (gr.requires_grad(xv)) {
            MatR<T> dcol(ck, cols);
            dcol.noalias() =
                CMapR<T>(gr.value(wv).data.data(), out_ch, ck).transpose() * dy_all;
            T* dx = gr.grad(xv).data.data();
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < channels; ++c) {
                    T* dst = dx + (b * channels + c) * length;
                    for (std::size_t k = 0; k < kernel; ++k) {
                        const T* src = dcol.data() + (c * kernel + k) * cols + b * out_len;
                        for (std::size_t t = 0; t < out_len; ++t) {
                            const std::ptrdiff_t idx =
                                static_cast<std::ptrdiff_t>(t * stride + k) -
                                static_cast<std::ptrdiff_t>(padding);
                            if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(length)) {
                                dst[idx] += src[t];
                            }
                        }
                    }
                }
            }
        }
    });
}

template <class T>
Var conv1d_transposed(Graph<T>& g, Var xv, Var wv, std::optional<Var> bv, std::size_t stride,
                      std::size_t padding)
{
    const Tensor<T>& x = g.value(xv);
    const Tensor<T>& w = g.value(wv);
    require_rank("conv1d_transposed", x.shape, 3);
    require_rank("conv1d_transposed", w.shape, 3);
    if (x.shape[1] != w.shape[0]) {
        shape_mismatch("conv1d_transposed", x.shape, w.shape);
    }
    const std::size_t batch = x.shape[0], in_ch = x.shape[1], in_len = x.shape[2];
    const std::size_t out_ch = w.shape[1], kernel = w.shape[2];
    check_bias("conv1d_transposed", g, bv, out_ch);
    if (stride == 0 || in_len == 0 || (in_len - 1) * stride + kernel <= 2 * padding) {
        shape_mismatch("conv1d_transposed", x.shape, w.shape);
    }
    const std::size_t out_len = (in_len - 1) * stride + kernel - 2 * padding;
    const std::size_t ok = out_ch * kernel;
    const std::size_t cols = batch * in_len;

    auto x_all = std::make_shared<MatR<T>>(in_ch, cols);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < in_ch; ++c) {
            const T* src = x.data.data() + (b * in_ch + c) * in_len;
            std::copy(src, src + in_len, x_all->data() + c * cols + b * in_len);
        }
    }
    MatR<T> col(ok, cols);
    col.noalias() = CMapR<T>(w.data.data(), in_ch, ok).transpose() * (*x_all);

    Tensor<T> y({batch, out_ch, out_len});
    const T* bias = bv ? g.value(*bv).data.data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < out_ch; ++o) {
            T* dst = y.data.data() + (b * out_ch + o) * out_len;
            if (bias != nullptr) {
                std::fill(dst, dst + out_len, bias[o]);
            }
            for (std::size_t k = 0; k < kernel; ++k) {
                const T* src = col.data() + (o * kernel + k) * cols + b * in_len;
                for (std::size_t i = 0; i < in_len; ++i) {
                    const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(i * stride + k) -
                                             static_cast<std::ptrdiff_t>(padding);
                    if (t >= 0 && t < static_cast<std::ptrdiff_t>(out_len)) {
                        dst[t] += src[i];
                    }
                }
            }
        }
    }

    auto& counters = op_counters();
    counters.macs += batch * in_ch * out_ch * kernel * in_len;
    if (bv) {
        counters.bias_adds += batch * out_ch * out_len;
    }

    const bool needs = any_requires(g, {xv, wv, bv});
    return g.record(std::move(y), needs, [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        MatR<T> dcol = MatR<T>::Zero(ok, cols);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t o = 0; o < out_ch; ++o) {
                const T* src = dy.data.data() + (b * out_ch + o) * out_len;
                for (std::size_t k = 0; k < kernel; ++k) {
                    T* dst = dcol.data() + (o * kernel + k) * cols + b * in_len;
                    for (std::size_t i = 0; i < in_len; ++i) {
                        const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(i * stride + k) -
                                                 static_cast<std::ptrdiff_t>(padding);
                        if (t >= 0 && t < static_cast<std::ptrdiff_t>(out_len)) {
                            dst[i] = src[t];
                        }
                    }
                }
            }
        }
        if (gr.requires_grad(wv)) {
            MapR<T>(gr.grad(wv).data.data(), in_ch, ok).noalias() += (*x_all) * dcol.transpose();
        }
        if (bv && gr.requires_grad(*bv)) {
            T* db = gr.grad(*bv).data.data();
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t o = 0; o < out_ch; ++o) {
                    const T* src = dy.data.data() + (b * out_ch + o) * out_len;
                    T acc{0};
                    for (std::size_t t = 0; t < out_len; ++t) {
                        acc += src[t];
                    }
                    db[o] += acc;
                }
            }
        }
        if (gr.requires_grad(xv)) {
            MatR<T> dx_all(in_ch, cols);
            dx_all.noalias() = CMapR<T>(gr.value(wv).data.data(), in_ch, ok) * dcol;
            T* dx = gr.grad(xv).data.data();
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < in_ch; ++c) {
                    T* dst = dx + (b * in_ch + c) * in_len;
                    const T* src = dx_all.data() + c * cols + b * in_len;
                    for (std::size_t i = 0; i < in_len; ++i) {
                        dst[i] += src[i];
                    }
                }
            }
        }
    });
}

template <class T>
Var linear(Graph<T>& g, Var xv, Var wv, std::optional<Var> bv)
{
    const Tensor<T>& x = g.value(xv);
    const Tensor<T>& w = g.value(wv);
    require_rank("linear", x.shape, 2);
    require_rank("linear", w.shape, 2);
    if (x.shape[1] != w.shape[1]) {
        shape_mismatch("linear", x.shape, w.shape);
    }
    const std::size_t batch = x.shape[0], in_f = x.shape[1], out_f = w.shape[0];
    check_bias("linear", g, bv, out_f);

    Tensor<T> y({batch, out_f});
    MapR<T> ym(y.data.data(), batch, out_f);
    ym.noalias() = CMapR<T>(x.data.data(), batch, in_f) *
                   CMapR<T>(w.data.data(), out_f, in_f).transpose();
    if (bv) {
        const T* bias = g.value(*bv).data.data();
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t o = 0; o < out_f; ++o) {
                ym(b, o) += bias[o];
            }
        }
    }
    auto& counters = op_counters();
    counters.macs += batch * in_f * out_f;
    if (bv) {
        counters.bias_adds += batch * out_f;
    }

    const bool needs = any_requires(g, {xv, wv, bv});
    return g.record(std::move(y), needs, [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        CMapR<T> dym(dy.data.data(), batch, out_f);
        if (gr.requires_grad(wv)) {
            MapR<T>(gr.grad(wv).data.data(), out_f, in_f).noalias() +=
                dym.transpose() * CMapR<T>(gr.value(xv).data.data(), batch, in_f);
        }
        if (bv && gr.requires_grad(*bv)) {
            T* db = gr.grad(*bv).data.data();
            for (std::size_t o = 0; o < out_f; ++o) {
                db[o] += dym.col(o).sum();
            }
        }
        if (gr.requires_grad(xv)) {
            MapR<T>(gr.grad(xv).data.data(), batch, in_f).noalias() +=
                dym * CMapR<T>(gr.value(wv).data.data(), out_f, in_f);
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise and normalization

template <class T>
Var leaky_relu(Graph<T>& g, Var xv, double slope)
{
    const Tensor<T>& x = g.value(xv);
    Tensor<T> y(x.shape);
    const T s = static_cast<T>(slope);
    for (std::size_t i = 0; i < x.size(); ++i) {
        y.data[i] = x.data[i] > T{0} ? x.data[i] : s * x.data[i];
    }
    op_counters().elementwise += x.size();
    return g.record(std::move(y), g.requires_grad(xv), [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        const Tensor<T>& xin = gr.value(xv);
        Tensor<T>& dx = gr.grad(xv);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            dx.data[i] += xin.data[i] > T{0} ? dy.data[i] : s * dy.data[i];
        }
    });
}

template <class T>
Var batchnorm1d(Graph<T>& g, Var xv, Var gv, Var bv, BatchNormState<T>& state, bool training)
{
    const Tensor<T>& x = g.value(xv);
    require_rank("batchnorm1d", x.shape, 3);
    const std::size_t batch = x.shape[0], channels = x.shape[1], length = x.shape[2];
    if (g.value(gv).size() != channels || g.value(bv).size() != channels ||
        state.running_mean.size() != channels || state.running_var.size() != channels) {
        shape_mismatch("batchnorm1d", x.shape, g.shape(gv));
    }
    const std::size_t count = batch * length;
    const T eps = static_cast<T>(state.epsilon);
    const T momentum = static_cast<T>(state.momentum);

    auto inv_std = std::make_shared<std::vector<T>>(channels);
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    const T* gamma = g.value(gv).data.data();
    const T* beta = g.value(bv).data.data();
    Tensor<T> y(x.shape);

    for (std::size_t c = 0; c < channels; ++c) {
        T mean, var;
        if (training) {
            double sum = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const T* src = x.data.data() + (b * channels + c) * length;
                for (std::size_t t = 0; t < length; ++t) {
                    sum += src[t];
                }
            }
            mean = static_cast<T>(sum / static_cast<double>(count));
            double sq = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const T* src = x.data.data() + (b * channels + c) * length;
                for (std::size_t t = 0; t < length; ++t) {
                    const double d = static_cast<double>(src[t]) - mean;
                    sq += d * d;
                }
            }
            var = static_cast<T>(sq / static_cast<double>(count));
            const T unbiased =
                count > 1 ? static_cast<T>(sq / static_cast<double>(count - 1)) : var;
            state.running_mean.data[c] =
                (T{1} - momentum) * state.running_mean.data[c] + momentum * mean;
            state.running_var.data[c] =
                (T{1} - momentum) * state.running_var.data[c] + momentum * unbiased;
        } else {
            mean = state.running_mean.data[c];
            var = state.running_var.data[c];
        }
        const T istd = T{1} / std::sqrt(var + eps);
        (*inv_std)[c] = istd;
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * length;
            for (std::size_t t = 0; t < length; ++t) {
                const T h = (x.data[off + t] - mean) * istd;
                (*xhat)[off + t] = h;
                y.data[off + t] = gamma[c] * h + beta[c];
            }
        }
    }
    op_counters().norm_elements += x.size();

    const bool needs = any_requires(g, {xv, gv, bv});
    return g.record(std::move(y), needs, [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        const T* gam = gr.value(gv).data.data();
        std::vector<T> sum_dy(channels, T{0});
        std::vector<T> sum_dy_xhat(channels, T{0});
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t off = (b * channels + c) * length;
                T s1{0}, s2{0};
                for (std::size_t t = 0; t < length; ++t) {
                    s1 += dy.data[off + t];
                    s2 += dy.data[off + t] * (*xhat)[off + t];
                }
                sum_dy[c] += s1;
                sum_dy_xhat[c] += s2;
            }
        }
        if (gr.requires_grad(gv)) {
            T* dg = gr.grad(gv).data.data();
            for (std::size_t c = 0; c < channels; ++c) {
                dg[c] += sum_dy_xhat[c];
            }
        }
        if (gr.requires_grad(bv)) {
            T* db = gr.grad(bv).data.data();
            for (std::size_t c = 0; c < channels; ++c) {
                db[c] += sum_dy[c];
            }
        }
        if (gr.requires_grad(xv)) {
            T* dx = gr.grad(xv).data.data();
            const T n = static_cast<T>(count);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < channels; ++c) {
                    const std::size_t off = (b * channels + c) * length;
                    const T scale = gam[c] * (*inv_std)[c];
                    for (std::size_t t = 0; t < length; ++t) {
                        if (training) {
                            dx[off + t] += scale * (dy.data[off + t] - sum_dy[c] / n -
                                                    (*xhat)[off + t] * sum_dy_xhat[c] / n);
                        } else {
                            dx[off + t] += scale * dy.data[off + t];
                        }
                    }
                }
            }
        }
    });
}

template <class T>
Var add(Graph<T>& g, Var av, Var bv)
{
    const Tensor<T>& a = g.value(av);
    const Tensor<T>& b = g.value(bv);
    if (a.shape != b.shape) {
        shape_mismatch("add", a.shape, b.shape);
    }
    Tensor<T> y(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) {
        y.data[i] = a.data[i] + b.data[i];
    }
    op_counters().elementwise += a.size();
    const bool needs = any_requires(g, {av, bv});
    return g.record(std::move(y), needs, [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        for (Var v : {av, bv}) {
            if (gr.requires_grad(v)) {
                Tensor<T>& d = gr.grad(v);
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    d.data[i] += dy.data[i];
                }
            }
        }
    });
}

template <class T>
Var reparameterize(Graph<T>& g, Var mv, Var lv, const Tensor<T>& noise)
{
    const Tensor<T>& mu = g.value(mv);
    const Tensor<T>& logvar = g.value(lv);
    if (mu.shape != logvar.shape) {
        shape_mismatch("reparameterize", mu.shape, logvar.shape);
    }
    if (mu.shape != noise.shape) {
        shape_mismatch("reparameterize", mu.shape, noise.shape);
    }
    Tensor<T> y(mu.shape);
    auto eps = std::make_shared<std::vector<T>>(noise.data);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        y.data[i] = mu.data[i] + std::exp(logvar.data[i] / T{2}) * noise.data[i];
    }
    const bool needs = any_requires(g, {mv, lv});
    return g.record(std::move(y), needs, [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        if (gr.requires_grad(mv)) {
            Tensor<T>& d = gr.grad(mv);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                d.data[i] += dy.data[i];
            }
        }
        if (gr.requires_grad(lv)) {
            const Tensor<T>& lvv = gr.value(lv);
            Tensor<T>& d = gr.grad(lv);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                d.data[i] += dy.data[i] * (*eps)[i] * T{0.5} * std::exp(lvv.data[i] / T{2});
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Losses

template <class T>
Var l1_loss(Graph<T>& g, Var av, Var bv)
{
    const Tensor<T>& a = g.value(av);
    const Tensor<T>& b = g.value(bv);
    if (a.size() != b.size() || a.size() == 0) {
        shape_mismatch("l1_loss", a.shape, b.shape);
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
    }
    const std::size_t n = a.size();
    Tensor<T> y({1}, static_cast<T>(acc / static_cast<double>(n)));
    const bool needs = any_requires(g, {av, bv});
    return g.record(std::move(y), needs, [=](Graph<T>& gr, std::size_t self) {
        const T scale = gr.grad(self).data[0] / static_cast<T>(n);
        const Tensor<T>& aa = gr.value(av);
        const Tensor<T>& bb = gr.value(bv);
        const bool ga = gr.requires_grad(av), gb = gr.requires_grad(bv);
        T* da = ga ? gr.grad(av).data.data() : nullptr;
        T* db = gb ? gr.grad(bv).data.data() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const T diff = aa.data[i] - bb.data[i];
            const T s = diff > T{0} ? scale : (diff < T{0} ? -scale : T{0});
            if (ga) da[i] += s;
            if (gb) db[i] -= s;
        }
    });
}

template <class T>
Var mse_loss(Graph<T>& g, Var av, Var bv)
{
    const Tensor<T>& a = g.value(av);
    const Tensor<T>& b = g.value(bv);
    if (a.size() != b.size() || a.size() == 0) {
        shape_mismatch("mse_loss", a.shape, b.shape);
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    const std::size_t n = a.size();
    Tensor<T> y({1}, static_cast<T>(acc / static_cast<double>(n)));
    const bool needs = any_requires(g, {av, bv});
    return g.record(std::move(y), needs, [=](Graph<T>& gr, std::size_t self) {
        const T scale = T{2} * gr.grad(self).data[0] / static_cast<T>(n);
        const Tensor<T>& aa = gr.value(av);
        const Tensor<T>& bb = gr.value(bv);
        const bool ga = gr.requires_grad(av), gb = gr.requires_grad(bv);
        T* da = ga ? gr.grad(av).data.data() : nullptr;
        T* db = gb ? gr.grad(bv).data.data() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const T s = scale * (aa.data[i] - bb.data[i]);
            if (ga) da[i] += s;
            if (gb) db[i] -= s;
        }
    });
}

template <class T>
Var kl_diag_gaussian(Graph<T>& g, Var mv, Var lv, const Tensor<T>& mu_p, const Tensor<T>& var_p)
{
    const Tensor<T>& mu = g.value(mv);
    const Tensor<T>& logvar = g.value(lv);
    require_rank("kl_diag_gaussian", mu.shape, 2);
    if (mu.shape != logvar.shape || mu.shape != mu_p.shape || mu.shape != var_p.shape) {
        shape_mismatch("kl_diag_gaussian", mu.shape, mu_p.shape);
    }
    const std::size_t batch = mu.shape[0];
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double vq = std::exp(static_cast<double>(logvar.data[i]));
        const double vp = var_p.data[i];
        const double dm = static_cast<double>(mu.data[i]) - mu_p.data[i];
        acc += 0.5 * (std::log(vp) - logvar.data[i] + (vq + dm * dm) / vp - 1.0);
    }
    Tensor<T> y({1}, static_cast<T>(acc / static_cast<double>(batch)));
    auto prior_mu = std::make_shared<Tensor<T>>(mu_p);
    auto prior_var = std::make_shared<Tensor<T>>(var_p);
    const bool needs = any_requires(g, {mv, lv});
    return g.record(std::move(y), needs, [=](Graph<T>& gr, std::size_t self) {
        const T scale = gr.grad(self).data[0] / static_cast<T>(batch);
        const Tensor<T>& m = gr.value(mv);
        const Tensor<T>& l = gr.value(lv);
        if (gr.requires_grad(mv)) {
            T* d = gr.grad(mv).data.data();
            for (std::size_t i = 0; i < m.size(); ++i) {
                d[i] += scale * (m.data[i] - prior_mu->data[i]) / prior_var->data[i];
            }
        }
        if (gr.requires_grad(lv)) {
            T* d = gr.grad(lv).data.data();
            for (std::size_t i = 0; i < l.size(); ++i) {
                d[i] += scale * T{0.5} * (std::exp(l.data[i]) / prior_var->data[i] - T{1});
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Spectral and waveform ops

template <class T>
Var magnitude_spectrum(Graph<T>& g, Var xv)
{
    const Tensor<T>& x = g.value(xv);
    const auto [rows, n] = rows_and_length("magnitude_spectrum", x.shape);
    if (n < 2 || n % 2 != 0) {
        throw ShapeError("magnitude_spectrum needs an even length, got " + std::to_string(n));
    }
    const std::size_t bins = n / 2 + 1;
    auto spectra = std::make_shared<std::vector<std::complex<T>>>(rows * bins);
    Tensor<T> y({rows, bins});
    for (std::size_t r = 0; r < rows; ++r) {
        const auto X = dsp::dft<T>(std::span<const T>(x.data.data() + r * n, n));
        for (std::size_t k = 0; k < bins; ++k) {
            (*spectra)[r * bins + k] = X[k];
            y.data[r * bins + k] = std::abs(X[k]);
        }
    }
    return g.record(std::move(y), g.requires_grad(xv), [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        T* dx = gr.grad(xv).data.data();
        std::vector<std::complex<T>> G(n);
        for (std::size_t r = 0; r < rows; ++r) {
            std::fill(G.begin(), G.end(), std::complex<T>{});
            for (std::size_t k = 0; k < bins; ++k) {
                const std::complex<T> X = (*spectra)[r * bins + k];
                const T mag = std::abs(X);
                if (mag > T{0}) {
                    G[k] = dy.data[r * bins + k] * std::conj(X) / mag;
                }
            }
            const auto back = dsp::dft<T>(std::span<const std::complex<T>>(G));
            for (std::size_t i = 0; i < n; ++i) {
                dx[r * n + i] += back[i].real();
            }
        }
    });
}

template <class T>
Var normalize_waveform(Graph<T>& g, Var xv)
{
    const Tensor<T>& x = g.value(xv);
    const auto [rows, n] = rows_and_length("normalize_waveform", x.shape);
    Tensor<T> y({rows, n});
    auto inv_norm = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = x.data.data() + r * n;
        T* dst = y.data.data() + r * n;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean += src[i];
        }
        mean /= static_cast<double>(n);
        double energy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double c = src[i] - mean;
            energy += c * c;
        }
        const double s = 1.0 / std::sqrt(std::max(energy, 1e-30));
        (*inv_norm)[r] = static_cast<T>(s);
        for (std::size_t i = 0; i < n; ++i) {
            dst[i] = static_cast<T>((src[i] - mean) * s);
        }
    }
    return g.record(std::move(y), g.requires_grad(xv), [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        const Tensor<T>& yv = gr.value(Var{self});
        T* dx = gr.grad(xv).data.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* gy = dy.data.data() + r * n;
            const T* yy = yv.data.data() + r * n;
            T dot{0};
            for (std::size_t i = 0; i < n; ++i) {
                dot += gy[i] * yy[i];
            }
            // d/dc of c/|c| is (I - y y^T)/|c|; centering projects out the mean.
            T mean{0};
            std::vector<T> dc(n);
            for (std::size_t i = 0; i < n; ++i) {
                dc[i] = (*inv_norm)[r] * (gy[i] - yy[i] * dot);
                mean += dc[i];
            }
            mean /= static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) {
                dx[r * n + i] += dc[i] - mean;
            }
        }
    });
}

template <class T>
Var reshape(Graph<T>& g, Var xv, Shape shape)
{
    const Tensor<T>& x = g.value(xv);
    if (shape_size(shape) != x.size()) {
        shape_mismatch("reshape", x.shape, shape);
    }
    Tensor<T> y(std::move(shape), x.data);
    return g.record(std::move(y), g.requires_grad(xv), [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        Tensor<T>& dx = gr.grad(xv);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            dx.data[i] += dy.data[i];
        }
    });
}

template <class T>
Var slice_columns(Graph<T>& g, Var xv, std::size_t begin, std::size_t count)
{
    const Tensor<T>& x = g.value(xv);
    require_rank("slice_columns", x.shape, 2);
    const std::size_t rows = x.shape[0], width = x.shape[1];
    if (begin + count > width) {
        throw ShapeError("slice_columns: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(x.shape));
    }
    Tensor<T> y({rows, count});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.data.data() + r * width + begin, count, y.data.data() + r * count);
    }
    return g.record(std::move(y), g.requires_grad(xv), [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        T* dx = gr.grad(xv).data.data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < count; ++c) {
                dx[r * width + begin + c] += dy.data[r * count + c];
            }
        }
    });
}

template <class T>
Var concat_columns(Graph<T>& g, Var av, Var bv)
{
    const Tensor<T>& a = g.value(av);
    const Tensor<T>& b = g.value(bv);
    require_rank("concat_columns", a.shape, 2);
    require_rank("concat_columns", b.shape, 2);
    if (a.shape[0] != b.shape[0]) {
        shape_mismatch("concat_columns", a.shape, b.shape);
    }
    const std::size_t rows = a.shape[0], wa = a.shape[1], wb = b.shape[1];
    Tensor<T> y({rows, wa + wb});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.data.data() + r * wa, wa, y.data.data() + r * (wa + wb));
        std::copy_n(b.data.data() + r * wb, wb, y.data.data() + r * (wa + wb) + wa);
    }
    const bool needs = any_requires(g, {av, bv});
    return g.record(std::move(y), needs, [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        if (gr.requires_grad(av)) {
            T* d = gr.grad(av).data.data();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < wa; ++c) {
                    d[r * wa + c] += dy.data[r * (wa + wb) + c];
                }
            }
        }
        if (gr.requires_grad(bv)) {
            T* d = gr.grad(bv).data.data();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < wb; ++c) {
                    d[r * wb + c] += dy.data[r * (wa + wb) + wa + c];
                }
            }
        }
    });
}

template <class T>
Var weighted_sum(Graph<T>& g, const std::vector<Var>& scalars, const std::vector<double>& weights)
{
    if (scalars.size() != weights.size()) {
        throw ShapeError("weighted_sum: " + std::to_string(scalars.size()) + " terms, " +
                         std::to_string(weights.size()) + " weights");
    }
    T acc{0};
    bool needs = false;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (g.value(scalars[i]).size() != 1) {
            throw ShapeError("weighted_sum terms must be scalars");
        }
        acc += static_cast<T>(weights[i]) * g.value(scalars[i]).data[0];
        needs = needs || g.requires_grad(scalars[i]);
    }
    return g.record(Tensor<T>({1}, acc), needs,
                    [scalars, weights](Graph<T>& gr, std::size_t self) {
                        const T dy = gr.grad(self).data[0];
                        for (std::size_t i = 0; i < scalars.size(); ++i) {
                            if (gr.requires_grad(scalars[i])) {
                                gr.grad(scalars[i]).data[0] += static_cast<T>(weights[i]) * dy;
                            }
                        }
                    });
}

// ---------------------------------------------------------------------------
// Descriptors

namespace {

template <class T>
struct DescriptorTerms {
    std::vector<std::complex<T>> spectrum; // bins 0..N/2
    T total{0}, odd{0}, centroid{0}, spread{0};
    T brightness_in{0}, richness_in{0}, undulation_in{0};
    bool undulation_clamped = false;
    T steps{0}, peak{0};
    std::size_t peak_index = 0;
    std::complex<T> phasor_sum{};
};

template <class T>
DescriptorTerms<T> descriptor_terms(std::span<const T> x)
{
    const std::size_t n = x.size();
    const std::size_t half = n / 2;
    DescriptorTerms<T> d;
    const auto X = dsp::dft<T>(x);
    d.spectrum.assign(X.begin(), X.begin() + static_cast<std::ptrdiff_t>(half + 1));
    T weighted{0};
    for (std::size_t k = 0; k <= half; ++k) {
        const T p = std::norm(X[k]);
        d.total += p;
        weighted += static_cast<T>(k) * p;
        if (k % 2 == 1) {
            d.odd += p;
        }
        d.phasor_sum += X[k];
    }
    if (d.total > T{0}) {
        d.centroid = weighted / d.total;
        for (std::size_t k = 0; k <= half; ++k) {
            const T dk = static_cast<T>(k) - d.centroid;
            d.spread += dk * dk * std::norm(X[k]);
        }
        d.spread /= d.total;
    }
    const T nyq = static_cast<T>(half);
    d.brightness_in = std::clamp(d.centroid / nyq, T{0}, T{1});
    d.richness_in = std::clamp(std::sqrt(d.spread) / nyq, T{0}, T{1});
    for (std::size_t i = 0; i + 1 < n; ++i) {
        d.steps += std::abs(x[i + 1] - x[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(x[i]) > d.peak) {
            d.peak = std::abs(x[i]);
            d.peak_index = i;
        }
    }
    if (d.peak > T{0}) {
        const T raw = d.steps / static_cast<T>(n - 1) / (T{2} * d.peak);
        d.undulation_clamped = raw >= T{1};
        d.undulation_in = std::min(T{1}, raw);
    }
    return d;
}

} // namespace

template <class T>
Var descriptor_features(Graph<T>& g, Var xv, double compression)
{
    const Tensor<T>& x = g.value(xv);
    const auto [rows, n] = rows_and_length("descriptor_features", x.shape);
    if (n < 4 || n % 2 != 0) {
        throw ShapeError("descriptor_features needs an even length >= 4");
    }
    const T k = static_cast<T>(compression);
    Tensor<T> y({rows, 5});
    for (std::size_t r = 0; r < rows; ++r) {
        const auto d = descriptor_terms<T>(std::span<const T>(x.data.data() + r * n, n));
        T* out = y.data.data() + r * 5;
        out[0] = sigma(d.brightness_in, k);
        out[1] = sigma(d.richness_in, k);
        out[2] = d.total > T{0} ? T{1} - d.odd / d.total : T{0};
        out[3] = sigma(d.undulation_in, k);
        T angle = std::arg(d.phasor_sum);
        if (angle <= -std::numbers::pi_v<T>) {
            angle += T{2} * std::numbers::pi_v<T>;
        }
        out[4] = angle;
    }
    return g.record(std::move(y), g.requires_grad(xv), [=](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& dy = gr.grad(self);
        const Tensor<T>& xin = gr.value(xv);
        T* dx = gr.grad(xv).data.data();
        const std::size_t half = n / 2;
        const T nyq = static_cast<T>(half);
        std::vector<std::complex<T>> G(n);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::span<const T> row(xin.data.data() + r * n, n);
            const auto d = descriptor_terms<T>(row);
            const T* gout = dy.data.data() + r * 5;
            std::fill(G.begin(), G.end(), std::complex<T>{});
            if (d.total > T{0}) {
                const T raw_b = d.centroid / nyq;
                const T gb = (raw_b > T{0} && raw_b < T{1})
                                 ? gout[0] * sigma_prime(d.brightness_in, k) / nyq
                                 : T{0};
                const T std_dev = std::sqrt(d.spread);
                const T raw_r = std_dev / nyq;
                const T gr_ = (d.spread > T{0} && raw_r < T{1})
                                  ? gout[1] * sigma_prime(d.richness_in, k) / nyq /
                                        (T{2} * std_dev)
                                  : T{0};
                for (std::size_t b = 0; b <= half; ++b) {
                    const T dk = static_cast<T>(b) - d.centroid;
                    const T odd = b % 2 == 1 ? T{1} : T{0};
                    const T g_power = gb * dk / d.total +
                                      gr_ * (dk * dk - d.spread) / d.total +
                                      gout[2] * (-odd / d.total + d.odd / (d.total * d.total));
                    G[b] = T{2} * g_power * std::conj(d.spectrum[b]);
                }
            }
            const T z2 = std::norm(d.phasor_sum);
            if (z2 > T{0}) {
                const std::complex<T> term =
                    gout[4] * std::complex<T>(T{0}, T{-1}) * std::conj(d.phasor_sum) / z2;
                for (std::size_t b = 0; b <= half; ++b) {
                    G[b] += term;
                }
            }
            const auto back = dsp::dft<T>(std::span<const std::complex<T>>(G));
            T* dst = dx + r * n;
            for (std::size_t i = 0; i < n; ++i) {
                dst[i] += back[i].real();
            }
            if (d.peak > T{0} && !d.undulation_clamped) {
                const T gu = gout[3] * sigma_prime(d.undulation_in, k);
                const T du_dsteps = T{1} / (static_cast<T>(n - 1) * T{2} * d.peak);
                for (std::size_t i = 0; i + 1 < n; ++i) {
                    const T diff = row[i + 1] - row[i];
                    const T s = diff > T{0} ? T{1} : (diff < T{0} ? T{-1} : T{0});
                    dst[i + 1] += gu * du_dsteps * s;
                    dst[i] -= gu * du_dsteps * s;
                }
                const T du_dpeak = -d.undulation_in / d.peak;
                const T sgn = row[d.peak_index] > T{0} ? T{1} : T{-1};
                dst[d.peak_index] += gu * du_dpeak * sgn;
            }
        }
    });
}

template <class T>
Var descriptor_l1(Graph<T>& g, Var pv, const Tensor<T>& target, const std::array<double, 5>& weights)
{
    const Tensor<T>& pred = g.value(pv);
    require_rank("descriptor_l1", pred.shape, 2);
    if (pred.shape != target.shape || pred.shape[1] != 5) {
        shape_mismatch("descriptor_l1", pred.shape, target.shape);
    }
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const std::size_t rows = pred.shape[0];
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < 5; ++i) {
            const double p = pred.data[r * 5 + i];
            const double t = target.data[r * 5 + i];
            double e;
            if (i == 4) {
                double m = std::fmod(p - t, two_pi);
                if (m < 0.0) m += two_pi;
                e = -std::abs(m - std::numbers::pi) + std::numbers::pi;
            } else {
                e = std::abs(p - t);
            }
            acc += weights[i] * e;
        }
    }
    auto tgt = std::make_shared<Tensor<T>>(target);
    Tensor<T> y({1}, static_cast<T>(acc / static_cast<double>(rows)));
    return g.record(std::move(y), g.requires_grad(pv), [=](Graph<T>& gr, std::size_t self) {
        const T scale = gr.grad(self).data[0] / static_cast<T>(rows);
        const Tensor<T>& pr = gr.value(pv);
        T* d = gr.grad(pv).data.data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < 5; ++i) {
                const double p = pr.data[r * 5 + i];
                const double t = tgt->data[r * 5 + i];
                double s;
                if (i == 4) {
                    double m = std::fmod(p - t, two_pi);
                    if (m < 0.0) m += two_pi;
                    s = m < std::numbers::pi ? 1.0 : (m > std::numbers::pi ? -1.0 : 0.0);
                } else {
                    s = p > t ? 1.0 : (p < t ? -1.0 : 0.0);
                }
                d[r * 5 + i] += scale * static_cast<T>(weights[i] * s);
            }
        }
    });
}

#define WAVESPACE_INSTANTIATE_OPS(T)                                                            \
    template Var conv1d<T>(Graph<T>&, Var, Var, std::optional<Var>, std::size_t, std::size_t); \
    template Var conv1d_transposed<T>(Graph<T>&, Var, Var, std::optional<Var>, std::size_t,    \
                                      std::size_t);                                            \
    template Var linear<T>(Graph<T>&, Var, Var, std::optional<Var>);                           \
    template Var leaky_relu<T>(Graph<T>&, Var, double);                                        \
    template Var batchnorm1d<T>(Graph<T>&, Var, Var, Var, BatchNormState<T>&, bool);           \
    template Var add<T>(Graph<T>&, Var, Var);                                                  \
    template Var reparameterize<T>(Graph<T>&, Var, Var, const Tensor<T>&);                     \
    template Var l1_loss<T>(Graph<T>&, Var, Var);                                              \
    template Var mse_loss<T>(Graph<T>&, Var, Var);                                             \
    template Var kl_diag_gaussian<T>(Graph<T>&, Var, Var, const Tensor<T>&, const Tensor<T>&); \
    template Var magnitude_spectrum<T>(Graph<T>&, Var);                                        \
    template Var normalize_waveform<T>(Graph<T>&, Var);                                        \
    template Var reshape<T>(Graph<T>&, Var, Shape);                                            \
    template Var slice_columns<T>(Graph<T>&, Var, std::size_t, std::size_t);                   \
    template Var concat_columns<T>(Graph<T>&, Var, Var);                                       \
    template Var weighted_sum<T>(Graph<T>&, const std::vector<Var>&, const std::vector<double>&); \
    template Var descriptor_features<T>(Graph<T>&, Var, double);                               \
    template Var descriptor_l1<T>(Graph<T>&, Var, const Tensor<T>&, const std::array<double, 5>&);

WAVESPACE_INSTANTIATE_OPS(float)
WAVESPACE_INSTANTIATE_OPS(double)

} // namespace wavespace::ad

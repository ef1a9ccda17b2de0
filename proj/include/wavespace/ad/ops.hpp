#pragma once

#include <array>
#include <optional>
#include <vector>

#include "wavespace/ad/graph.hpp"

namespace wavespace::ad {

inline constexpr double default_leaky_slope = 0.2;

/// Cross-correlation. x: (B, C, L), weight: (O, C, K), bias: (O).
/// Output length floor((L + 2p - K) / s) + 1.
template <class T>
Var conv1d(Graph<T>& g, Var x, Var weight, std::optional<Var> bias, std::size_t stride,
           std::size_t padding);

/// Adjoint of conv1d. x: (B, Cin, L), weight: (Cin, Cout, K), bias: (Cout).
/// Output length (L - 1) s - 2p + K.
template <class T>
Var conv1d_transposed(Graph<T>& g, Var x, Var weight, std::optional<Var> bias,
                      std::size_t stride, std::size_t padding);

/// x: (B, F), weight: (O, F), bias: (O).
template <class T>
Var linear(Graph<T>& g, Var x, Var weight, std::optional<Var> bias);

template <class T>
Var leaky_relu(Graph<T>& g, Var x, double slope = default_leaky_slope);

/// Per-channel normalization of (B, C, L). Training mode uses batch
/// statistics and updates `state`; eval mode uses the running statistics.
template <class T>
Var batchnorm1d(Graph<T>& g, Var x, Var gamma, Var beta, BatchNormState<T>& state,
                bool training);

template <class T>
Var add(Graph<T>& g, Var a, Var b);

/// mu + exp(logvar / 2) * noise. The noise tensor is a constant.
template <class T>
Var reparameterize(Graph<T>& g, Var mu, Var logvar, const Tensor<T>& noise);

/// Mean absolute difference (scalar).
template <class T>
Var l1_loss(Graph<T>& g, Var a, Var b);

/// Mean squared difference (scalar).
template <class T>
Var mse_loss(Graph<T>& g, Var a, Var b);

/// KL(N(mu_q, exp(logvar_q)) || N(mu_p, var_p)) summed over the feature
/// axis and averaged over the batch. mu_p/var_p are constants of shape (B, D).
template <class T>
Var kl_diag_gaussian(Graph<T>& g, Var mu_q, Var logvar_q, const Tensor<T>& mu_p,
                     const Tensor<T>& var_p);

/// |DFT(x)| over bins 0..N/2 for every row. x: (B, N) or (B, 1, N).
template <class T>
Var magnitude_spectrum(Graph<T>& g, Var x);

/// Per-row mean removal and unit-energy scaling; output is (B, N).
template <class T>
Var normalize_waveform(Graph<T>& g, Var x);

template <class T>
Var reshape(Graph<T>& g, Var x, Shape shape);

/// Columns [begin, begin + count) of a (B, F) tensor.
template <class T>
Var slice_columns(Graph<T>& g, Var x, std::size_t begin, std::size_t count);

/// (B, F1) ++ (B, F2) -> (B, F1 + F2).
template <class T>
Var concat_columns(Graph<T>& g, Var a, Var b);

/// Sum of weights[i] * scalars[i].
template <class T>
Var weighted_sum(Graph<T>& g, const std::vector<Var>& scalars, const std::vector<double>& weights);

/// Differentiable descriptor extraction (normalized mode) for each row of
/// (B, N): columns brightness, richness, fullness, undulation, symmetry.
template <class T>
Var descriptor_features(Graph<T>& g, Var x, double compression);

/// Batch mean of sum_i weights[i] * err_i, where err is |pred - target| for
/// the first four columns and the wrapped angular error for symmetry.
template <class T>
Var descriptor_l1(Graph<T>& g, Var pred, const Tensor<T>& target,
                  const std::array<double, 5>& weights);

} // namespace wavespace::ad

#pragma once
// Randomized gradient checks for every differentiable op, shared by the unit
// and acceptance suites.

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "wavespace/ad/ops.hpp"

namespace ad_suite {

using namespace wavespace::ad;
using gradcheck::random_tensor;

struct NamedCheck {
    std::string name;
    std::function<gradcheck::Result(std::mt19937_64&)> run;
};

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi)
{
    return lo + rng() % (hi - lo + 1);
}

/// Keeps values away from the origin so leaky-relu kinks never sit inside a
/// finite-difference stencil.
inline Tensor<double> away_from_zero(Tensor<double> t)
{
    for (double& v : t.data) {
        if (std::abs(v) < 1e-2) v = v < 0 ? -0.05 : 0.05;
    }
    return t;
}

inline std::vector<NamedCheck> all_checks()
{
    std::vector<NamedCheck> checks;
    checks.push_back({"conv1d", [](std::mt19937_64& rng) {
        const std::size_t b = pick(rng, 1, 3), c = pick(rng, 1, 3), o = pick(rng, 1, 4);
        const std::size_t k = pick(rng, 1, 5), s = pick(rng, 1, 3), p = pick(rng, 0, 2);
        const std::size_t l = k + pick(rng, 0, 9);
        return gradcheck::check(
            [s, p](Graph<double>& g, const std::vector<Var>& v) {
                return conv1d<double>(g, v[0], v[1], v[2], s, p);
            },
            {random_tensor({b, c, l}, rng), random_tensor({o, c, k}, rng), random_tensor({o}, rng)},
            rng);
    }});
    checks.push_back({"conv1d_transposed", [](std::mt19937_64& rng) {
        const std::size_t b = pick(rng, 1, 3), c = pick(rng, 1, 3), o = pick(rng, 1, 4);
        const std::size_t k = pick(rng, 2, 5), s = pick(rng, 1, 3), p = pick(rng, 0, 1);
        const std::size_t l = pick(rng, 1, 8);
        return gradcheck::check(
            [s, p](Graph<double>& g, const std::vector<Var>& v) {
                return conv1d_transposed<double>(g, v[0], v[1], v[2], s, p);
            },
            {random_tensor({b, c, l}, rng), random_tensor({c, o, k}, rng), random_tensor({o}, rng)},
            rng);
    }});
    checks.push_back({"linear", [](std::mt19937_64& rng) {
        const std::size_t b = pick(rng, 1, 4), f = pick(rng, 1, 7), o = pick(rng, 1, 5);
        return gradcheck::check(
            [](Graph<double>& g, const std::vector<Var>& v) {
                return linear<double>(g, v[0], v[1], v[2]);
            },
            {random_tensor({b, f}, rng), random_tensor({o, f}, rng), random_tensor({o}, rng)}, rng);
    }});
    checks.push_back({"leaky_relu", [](std::mt19937_64& rng) {
        return gradcheck::check(
            [](Graph<double>& g, const std::vector<Var>& v) { return leaky_relu<double>(g, v[0]); },
            {away_from_zero(random_tensor({3, 2, 7}, rng))}, rng);
    }});
    checks.push_back({"batchnorm1d_train", [](std::mt19937_64& rng) {
        const std::size_t b = pick(rng, 2, 4), c = pick(rng, 1, 3), l = pick(rng, 2, 6);
        auto state = std::make_shared<BatchNormState<double>>("bn", c);
        return gradcheck::check(
            [state](Graph<double>& g, const std::vector<Var>& v) {
                return batchnorm1d<double>(g, v[0], v[1], v[2], *state, true);
            },
            {random_tensor({b, c, l}, rng), random_tensor({c}, rng, 0.5, 1.5),
             random_tensor({c}, rng)},
            rng);
    }});
    checks.push_back({"batchnorm1d_eval", [](std::mt19937_64& rng) {
        auto state = std::make_shared<BatchNormState<double>>("bn", 2);
        state->running_mean = random_tensor({2}, rng);
        state->running_var = random_tensor({2}, rng, 0.5, 2.0);
        return gradcheck::check(
            [state](Graph<double>& g, const std::vector<Var>& v) {
                return batchnorm1d<double>(g, v[0], v[1], v[2], *state, false);
            },
            {random_tensor({3, 2, 5}, rng), random_tensor({2}, rng), random_tensor({2}, rng)}, rng);
    }});
    checks.push_back({"add", [](std::mt19937_64& rng) {
        return gradcheck::check(
            [](Graph<double>& g, const std::vector<Var>& v) { return add<double>(g, v[0], v[1]); },
            {random_tensor({2, 3, 4}, rng), random_tensor({2, 3, 4}, rng)}, rng);
    }});
    checks.push_back({"reparameterize", [](std::mt19937_64& rng) {
        auto noise = std::make_shared<Tensor<double>>(random_tensor({3, 4}, rng, -2, 2));
        return gradcheck::check(
            [noise](Graph<double>& g, const std::vector<Var>& v) {
                return reparameterize<double>(g, v[0], v[1], *noise);
            },
            {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, rng);
    }});
    checks.push_back({"l1_loss", [](std::mt19937_64& rng) {
        return gradcheck::check(
            [](Graph<double>& g, const std::vector<Var>& v) { return l1_loss<double>(g, v[0], v[1]); },
            {random_tensor({2, 9}, rng), random_tensor({2, 9}, rng)}, rng);
    }});
    checks.push_back({"mse_loss", [](std::mt19937_64& rng) {
        return gradcheck::check(
            [](Graph<double>& g, const std::vector<Var>& v) { return mse_loss<double>(g, v[0], v[1]); },
            {random_tensor({2, 9}, rng), random_tensor({2, 9}, rng)}, rng);
    }});
    checks.push_back({"kl_diag_gaussian", [](std::mt19937_64& rng) {
        auto mp = std::make_shared<Tensor<double>>(random_tensor({3, 4}, rng, -5, 5));
        auto vp = std::make_shared<Tensor<double>>(random_tensor({3, 4}, rng, 0.5, 2.0));
        return gradcheck::check(
            [mp, vp](Graph<double>& g, const std::vector<Var>& v) {
                return kl_diag_gaussian<double>(g, v[0], v[1], *mp, *vp);
            },
            {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, rng);
    }});
    checks.push_back({"magnitude_spectrum", [](std::mt19937_64& rng) {
        const std::size_t n = 2 * pick(rng, 2, 16);
        return gradcheck::check(
            [](Graph<double>& g, const std::vector<Var>& v) { return magnitude_spectrum<double>(g, v[0]); },
            {random_tensor({2, 1, n}, rng)}, rng);
    }});
    checks.push_back({"normalize_waveform", [](std::mt19937_64& rng) {
        return gradcheck::check(
            [](Graph<double>& g, const std::vector<Var>& v) { return normalize_waveform<double>(g, v[0]); },
            {random_tensor({3, 1, 12}, rng)}, rng);
    }});
    checks.push_back({"reshape_slice_concat", [](std::mt19937_64& rng) {
        return gradcheck::check(
            [](Graph<double>& g, const std::vector<Var>& v) {
                const Var flat = reshape<double>(g, v[0], {2, 6});
                const Var left = slice_columns<double>(g, flat, 1, 3);
                return concat_columns<double>(g, left, v[1]);
            },
            {random_tensor({2, 2, 3}, rng), random_tensor({2, 4}, rng)}, rng);
    }});
    checks.push_back({"weighted_sum", [](std::mt19937_64& rng) {
        return gradcheck::check(
            [](Graph<double>& g, const std::vector<Var>& v) {
                const Var a = mse_loss<double>(g, v[0], v[1]);
                const Var b = l1_loss<double>(g, v[0], v[1]);
                return weighted_sum<double>(g, {a, b}, {0.354, 4.17});
            },
            {random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)}, rng);
    }});
    checks.push_back({"descriptor_features", [](std::mt19937_64& rng) {
        const std::size_t n = 8 * pick(rng, 2, 8);
        return gradcheck::check(
            [](Graph<double>& g, const std::vector<Var>& v) {
                return descriptor_features<double>(g, normalize_waveform<double>(g, v[0]), 5.5);
            },
            {random_tensor({2, n}, rng)}, rng);
    }});
    checks.push_back({"descriptor_l1", [](std::mt19937_64& rng) {
        auto target = std::make_shared<Tensor<double>>(random_tensor({3, 5}, rng, -3, 3));
        return gradcheck::check(
            [target](Graph<double>& g, const std::vector<Var>& v) {
                return descriptor_l1<double>(g, v[0], *target, {4.17, 4.17, 4.17, 10, 40});
            },
            {random_tensor({3, 5}, rng, -3, 3)}, rng);
    }});
    return checks;
}

} // namespace ad_suite

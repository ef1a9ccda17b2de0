#pragma once
// Central finite-difference gradient checking for the differentiation layer.

#include <cmath>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "wavespace/ad/graph.hpp"
#include "wavespace/ad/ops.hpp"

namespace gradcheck {

using wavespace::ad::Graph;
using wavespace::ad::Parameter;
using wavespace::ad::Shape;
using wavespace::ad::Tensor;
using wavespace::ad::Var;

/// Builds the op output from leaf vars (one per input).
using Builder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(shape);
    for (double& v : t.data) v = u(rng);
    return t;
}

struct Result {
    double worst_relative_error = 0.0;
    std::size_t checked_inputs = 0;
};

/// Reduces the op output with a fixed random projection and compares the
/// reverse-mode gradient of every input against central differences.
inline Result check(const Builder& build, std::vector<Tensor<double>> inputs,
                    std::mt19937_64& rng, double step = 1e-5)
{
    std::vector<Parameter<double>> params;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        params.emplace_back("in" + std::to_string(i), inputs[i]);
    }
    Tensor<double> projection;

    // Analytic pass: scalar = sum(projection * y) built with graph ops.
    auto scalar_graph = [&](Graph<double>& g, const std::vector<Var>& leaves) {
        const Var out = build(g, leaves);
        const std::size_t n = g.value(out).size();
        if (projection.size() != n) projection = random_tensor({n}, rng);
        const Var flat = wavespace::ad::reshape<double>(g, out, {1, n});
        const Var proj = g.constant(Tensor<double>({1, n}, projection.data));
        // <flat, projection> as a 1x1 linear map
        return wavespace::ad::linear<double>(g, flat, proj, std::nullopt);
    };

    for (auto& p : params) p.zero_grad();
    {
        Graph<double> g;
        std::vector<Var> leaves;
        for (auto& p : params) leaves.push_back(g.parameter(p));
        const Var s = scalar_graph(g, leaves);
        g.backward(s);
    }

    auto value_at = [&]() {
        Graph<double> g(wavespace::ad::GradMode::disabled);
        std::vector<Var> leaves;
        for (auto& p : params) leaves.push_back(g.parameter(std::as_const(p)));
        return g.value(scalar_graph(g, leaves)).data[0];
    };

    Result r;
    for (auto& p : params) {
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value.data[i];
            p.value.data[i] = orig + step;
            const double up = value_at();
            p.value.data[i] = orig - step;
            const double down = value_at();
            p.value.data[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = p.grad.data[i];
            diff2 += (numeric - analytic) * (numeric - analytic);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
        }
        const double denom = std::max(std::sqrt(std::max(a2, n2)), 1e-12);
        r.worst_relative_error = std::max(r.worst_relative_error, std::sqrt(diff2) / denom);
        ++r.checked_inputs;
    }
    return r;
}

} // namespace gradcheck

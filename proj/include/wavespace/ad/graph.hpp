#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "wavespace/ad/tensor.hpp"

namespace wavespace::ad {

/// Handle to a value recorded in a Graph.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

enum class GradMode { enabled, disabled };

/// Tape of operation records for one forward pass. Value references stay
/// valid while further ops are recorded. Backward walks the
/// records in exact reverse creation order, which is a topological order.
template <class T>
class Graph {
public:
    using Backward = std::function<void(Graph&, std::size_t self)>;

    explicit Graph(GradMode mode = GradMode::enabled) : mode_(mode) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor<T> value);
    /// Leaf bound to `p`; backward accumulates into p.grad.
    Var parameter(Parameter<T>& p);
    /// Read-only leaf; no gradient is tracked.
    Var parameter(const Parameter<T>& p);

    const Tensor<T>& value(Var v) const;
    const Shape& shape(Var v) const { return value(v).shape; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    bool grad_enabled() const noexcept { return mode_ == GradMode::enabled; }

    /// Gradient buffer of `v`, zero-allocated on first access.
    Tensor<T>& grad(Var v) { return grad(v.id); }
    Tensor<T>& grad(std::size_t id);
    bool has_grad(Var v) const { return nodes_.at(v.id).grad_touched; }

    /// Records an op output. `backward` runs only when a gradient reached it.
    Var record(Tensor<T> value, bool requires_grad, Backward backward);

    /// Seeds d(root)/d(root) = 1 and propagates. `root` must hold one element.
    void backward(Var root);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* external = nullptr;
        Tensor<T> grad;
        Tensor<T>* external_grad = nullptr;
        bool requires_grad = false;
        bool grad_touched = false;
        Backward backward;
    };

    GradMode mode_;
    std::deque<Node> nodes_; // stable references across record()
};

/// Analytic work counters incremented by op forward passes on this thread.
struct OpCounters {
    std::uint64_t macs = 0;         ///< multiply-accumulates in conv/linear
    std::uint64_t bias_adds = 0;    ///< per-output bias additions
    std::uint64_t elementwise = 0;  ///< activation and residual-add elements
    std::uint64_t norm_elements = 0;///< normalized elements (batchnorm)

    void reset() { *this = OpCounters{}; }
};

OpCounters& op_counters() noexcept;

} // namespace wavespace::ad

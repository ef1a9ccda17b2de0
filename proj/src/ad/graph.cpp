#include "wavespace/ad/graph.hpp"

#include <algorithm>
#include <numeric>

#include "wavespace/errors.hpp"

namespace wavespace::ad {

std::size_t shape_size(const Shape& shape) noexcept
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += std::to_string(shape[i]);
        if (i + 1 < shape.size()) {
            s += ", ";
        }
    }
    return s + ")";
}

template <class T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values))
{
    if (shape_size(shape) != data.size()) {
        throw ShapeError("tensor of shape " + shape_string(shape) + " given " +
                         std::to_string(data.size()) + " values");
    }
}

template <class T>
void Parameter<T>::zero_grad()
{
    if (grad.shape != value.shape) {
        grad = Tensor<T>(value.shape);
    } else {
        std::fill(grad.data.begin(), grad.data.end(), T{0});
    }
}

template <class T>
Var Graph<T>::constant(Tensor<T> value)
{
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

template <class T>
Var Graph<T>::parameter(Parameter<T>& p)
{
    if (!grad_enabled()) {
        return parameter(static_cast<const Parameter<T>&>(p));
    }
    if (p.grad.shape != p.value.shape) {
        p.grad = Tensor<T>(p.value.shape);
    }
    Node n;
    n.external = &p.value;
    n.external_grad = &p.grad;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

template <class T>
Var Graph<T>::parameter(const Parameter<T>& p)
{
    Node n;
    n.external = &p.value;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

template <class T>
const Tensor<T>& Graph<T>::value(Var v) const
{
    const Node& n = nodes_.at(v.id);
    return n.external != nullptr ? *n.external : n.value;
}

template <class T>
Tensor<T>& Graph<T>::grad(std::size_t id)
{
    Node& n = nodes_.at(id);
    n.grad_touched = true;
    if (n.external_grad != nullptr) {
        return *n.external_grad;
    }
    const Shape& shape = n.external != nullptr ? n.external->shape : n.value.shape;
    if (n.grad.shape != shape) {
        n.grad = Tensor<T>(shape);
    }
    return n.grad;
}

template <class T>
Var Graph<T>::record(Tensor<T> value, bool requires_grad, Backward backward)
{
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled();
    if (n.requires_grad) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

template <class T>
void Graph<T>::backward(Var root)
{
    if (value(root).size() != 1) {
        throw ShapeError("backward root must be a scalar, got shape " +
                         shape_string(value(root).shape));
    }
    if (!nodes_.at(root.id).requires_grad) {
        return;
    }
    grad(root).data[0] += T{1};
    for (std::size_t id = root.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.requires_grad && n.grad_touched && n.backward) {
            n.backward(*this, id);
        }
    }
}

OpCounters& op_counters() noexcept
{
    thread_local OpCounters counters;
    return counters;
}

template struct Tensor<float>;
template struct Tensor<double>;
template struct Parameter<float>;
template struct Parameter<double>;
template class Graph<float>;
template class Graph<double>;

} // namespace wavespace::ad

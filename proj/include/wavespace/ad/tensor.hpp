#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace wavespace::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense row-major array: (batch, channels, length) or (batch, features).
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T{0}) : shape(std::move(s)), data(shape_size(shape), fill) {}
    /// Throws ShapeError when the value count does not match the shape.
    Tensor(Shape s, std::vector<T> values);

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    std::span<T> values() noexcept { return data; }
    std::span<const T> values() const noexcept { return data; }

    bool operator==(const Tensor&) const = default;
};

/// Trainable tensor with its gradient accumulator.
template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

    void zero_grad();
};

/// Batchnorm running statistics (not trainable, updated in training forward passes).
template <class T>
struct BatchNormState {
    std::string name;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    BatchNormState() = default;
    BatchNormState(std::string n, std::size_t channels)
        : name(std::move(n)), running_mean({channels}, T{0}), running_var({channels}, T{1})
    {
    }
};

} // namespace wavespace::ad

#pragma once

// Rank-3 tensors (batch x frames x channels) with reverse-mode differentiation.
// Data is row-major with batch outermost and channels innermost. Every operation
// that consumes tensors is a pure function: inputs are never mutated, identical
// inputs give bitwise-identical outputs. Graph recording happens implicitly
// whenever an input is tracked (requires_grad or downstream of a tracked leaf)
// and is confined to a single thread per forward/backward pass.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "waveunet/errors.hpp"

namespace waveunet {

struct Shape {
    std::int64_t batch = 1;
    std::int64_t frames = 1;
    std::int64_t channels = 1;

    std::int64_t elements() const { return batch * frames * channels; }

    bool operator==(const Shape& o) const {
        return batch == o.batch && frames == o.frames && channels == o.channels;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        return "(" + std::to_string(batch) + ", " + std::to_string(frames) + ", " +
               std::to_string(channels) + ")";
    }
};

template <typename T>
class Tensor;

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

/// A tensor value plus the autodiff wiring the ops fill in. `grad` stays empty
/// until backward() visits the node. Calling backward twice on the same root
/// is forbidden and throws UsageError (the graph is consumed by the first call).
template <typename T>
class Tensor {
public:
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;

    // Set by the recording ops; empty for leaves and untracked results.
    std::vector<TensorPtr<T>> parents;
    std::function<void(Tensor<T>&)> backward_fn;
    bool backward_done = false;

    Tensor() = default;
    Tensor(Shape s, std::vector<T> values, bool req_grad)
        : shape(s), data(std::move(values)), requires_grad(req_grad) {}

    static TensorPtr<T> zeros(Shape s, bool requires_grad = false) {
        check_shape(s);
        return std::make_shared<Tensor<T>>(s, std::vector<T>(s.elements(), T(0)), requires_grad);
    }

    static TensorPtr<T> from(Shape s, std::vector<T> values, bool requires_grad = false) {
        check_shape(s);
        if (static_cast<std::int64_t>(values.size()) != s.elements())
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + s.str());
        return std::make_shared<Tensor<T>>(s, std::move(values), requires_grad);
    }

    /// Convenience for a single-batch, single-channel frame sequence.
    static TensorPtr<T> from_frames(std::vector<T> values, bool requires_grad = false) {
        Shape s{1, static_cast<std::int64_t>(values.size()), 1};
        return from(s, std::move(values), requires_grad);
    }

    static TensorPtr<T> scalar(T value, bool requires_grad = false) {
        return from(Shape{1, 1, 1}, {value}, requires_grad);
    }

    std::int64_t index(std::int64_t b, std::int64_t t, std::int64_t c) const {
        return (b * shape.frames + t) * shape.channels + c;
    }
    T& at(std::int64_t b, std::int64_t t, std::int64_t c) { return data[index(b, t, c)]; }
    const T& at(std::int64_t b, std::int64_t t, std::int64_t c) const { return data[index(b, t, c)]; }

    /// True when this node participates in gradient recording.
    bool tracked() const { return requires_grad || !parents.empty(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

private:
    static void check_shape(Shape s) {
        if (s.batch < 1 || s.frames < 1 || s.channels < 1)
            throw ShapeError("all tensor dimensions must be >= 1, got " + s.str());
    }
};

/// Copies the value of a tensor into a fresh leaf (drops any recorded graph).
template <typename T>
TensorPtr<T> detach(const TensorPtr<T>& x) {
    return Tensor<T>::from(x->shape, x->data, false);
}

/// Converts values between the 32-bit production and 64-bit checking precisions.
template <typename To, typename From>
TensorPtr<To> cast(const TensorPtr<From>& x, bool requires_grad = false) {
    std::vector<To> out(x->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(x->data[i]);
    return Tensor<To>::from(x->shape, std::move(out), requires_grad);
}

} // namespace waveunet

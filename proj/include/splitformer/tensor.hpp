// Copyright 2026 The Splitformer C++ Authors
// Dense tensors with a reverse-mode autodiff tape.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "splitformer/errors.hpp"

namespace splitformer {

// Numeric mode of a computation graph. The scalar template parameter of
// Tensor<S> is the compile-time realization: float for standard runs,
// double for verification (oracle and gradient tests). Mixing modes in one
// graph is impossible by construction.
enum class Precision { standard, verification };

template <Precision P>
struct precision_scalar;
template <>
struct precision_scalar<Precision::standard> { using type = float; };
template <>
struct precision_scalar<Precision::verification> { using type = double; };

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Thread-local switch that disables tape recording (inference passes).
bool grad_mode_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename S>
struct TensorImpl {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // empty until first accumulation
    bool requires_grad = false;

    // Tape record: parents this node was computed from, plus the adjoint.
    // Leaves have neither.
    std::vector<std::shared_ptr<TensorImpl<S>>> parents;
    std::function<void(const TensorImpl<S>&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), S(0));
    }
};

// Value-semantics handle to a node. Copies share storage.
template <typename S>
class Tensor {
public:
    using scalar_type = S;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, S value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false);
    static Tensor scalar(S value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
    int64_t dim(int64_t i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return impl_->numel(); }
    bool requires_grad() const { return impl_->requires_grad; }

    std::span<const S> data() const { return {impl_->data.data(), impl_->data.size()}; }
    // In-place mutation is for leaves outside any tape (optimizer updates,
    // parameter loading); mutating a recorded intermediate invalidates grads.
    std::span<S> data_mut() { return {impl_->data.data(), impl_->data.size()}; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const S> grad() const { return {impl_->grad.data(), impl_->grad.size()}; }
    void zero_grad() { impl_->grad.assign(impl_->data.size(), S(0)); }

    S item() const {
        if (numel() != 1) {
            throw ShapeError(strformat("item: tensor has %lld elements, expected 1",
                                       static_cast<long long>(numel())));
        }
        return impl_->data[0];
    }

    // Drops tape linkage, keeping the value (constant view of the same buffer).
    Tensor detach() const;

    std::shared_ptr<TensorImpl<S>> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl<S>> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl<S>> impl_;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively;
// repeated calls without zero_grad keep summing.
template <typename S>
void backward(const Tensor<S>& loss);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace splitformer

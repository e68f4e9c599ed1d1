// Copyright 2026 The Splitformer C++ Authors
// Tensor storage and the reverse-mode sweep.
//
// Licensed under the Apache License, Version 2.0

#include "splitformer/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace splitformer {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {
thread_local bool g_grad_mode = true;
}

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : prev_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = prev_; }

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
    return from_data(std::move(shape), {}, requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S value, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<S>(static_cast<size_t>(n), value),
                     requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::from_data(Shape shape, std::vector<S> data, bool requires_grad) {
    for (int64_t d : shape) {
        if (d <= 0) {
            throw ShapeError(strformat("tensor: non-positive extent in shape %s",
                                       shape_str(shape).c_str()));
        }
    }
    int64_t n = shape_numel(shape);
    auto impl = std::make_shared<TensorImpl<S>>();
    impl->shape = std::move(shape);
    if (data.empty()) {
        impl->data.assign(static_cast<size_t>(n), S(0));
    } else {
        if (static_cast<int64_t>(data.size()) != n) {
            throw ShapeError(strformat("tensor: %zu values for shape %s (%lld expected)",
                                       data.size(), shape_str(impl->shape).c_str(),
                                       static_cast<long long>(n)));
        }
        impl->data = std::move(data);
    }
    impl->requires_grad = requires_grad;
    return Tensor<S>(std::move(impl));
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S value, bool requires_grad) {
    return from_data(Shape{}, std::vector<S>{value}, requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::detach() const {
    auto impl = std::make_shared<TensorImpl<S>>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = false;
    return Tensor<S>(std::move(impl));
}

template <typename S>
void backward(const Tensor<S>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward: loss must be a defined scalar tensor");
    }
    auto root = loss.impl();
    if (!root->requires_grad) return;

    // Iterative post-order DFS; the node order is a function of graph
    // structure only, so the sweep is deterministic.
    std::vector<TensorImpl<S>*> order;
    std::unordered_set<TensorImpl<S>*> visited;
    struct Frame {
        TensorImpl<S>* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorImpl<S>* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<S>* node = *it;
        if (node->backward_fn) {
            node->backward_fn(*node);
        }
    }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace splitformer

// Copyright 2026 The Splitformer C++ Authors
// Differentiable primitives: every op defines its forward value and adjoint.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <functional>
#include <random>
#include <vector>

#include "splitformer/tensor.hpp"

namespace splitformer {

// Low-level hook for custom differentiable ops (e.g. the CTC loss): builds a
// tape node over `parents` when grad mode is on and any parent requires grad.
// `backward_fn` receives the finished node and must accumulate into the
// parents' grad buffers.
template <typename S>
Tensor<S> make_op_node(Shape shape, std::vector<S> data,
                       const std::vector<Tensor<S>>& parents,
                       std::function<void(const TensorImpl<S>&)> backward_fn);

// --- linear algebra ---
// 2-D x 2-D, or 3-D x 3-D with equal leading (batch) extents.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);

// --- elementwise with right-aligned broadcasting ---
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> subtract(const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> multiply(const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> scalar_mul(const Tensor<S>& x, S c);

// --- shape ---
template <typename S>
Tensor<S> transpose(const Tensor<S>& x, std::vector<int64_t> perm = {});
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape);
template <typename S>
Tensor<S> concatenate(const std::vector<Tensor<S>>& xs, int64_t axis);
template <typename S>
Tensor<S> slice(const Tensor<S>& x, int64_t axis, int64_t start, int64_t end);
template <typename S>
Tensor<S> pad(const Tensor<S>& x, int64_t axis, int64_t before, int64_t after);

// --- last-axis row ops ---
template <typename S>
Tensor<S> softmax(const Tensor<S>& x);
template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x);
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = S(1e-5));

// --- activations ---
template <typename S>
Tensor<S> relu(const Tensor<S>& x);
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x);
template <typename S>
Tensor<S> swish(const Tensor<S>& x);
// Splits the last axis in half, gates the first half with the second.
template <typename S>
Tensor<S> glu(const Tensor<S>& x);

// --- convolutions over the time axis ---
// x: [T x C_in], w: [C_out x C_in x K], b: [C_out].
template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 int64_t stride, int64_t padding);
// x: [T x C], w: [C x K], b: [C]; stride 1, zero padding.
template <typename S>
Tensor<S> depthwise_conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                           int64_t padding);

// Inference-style normalization: running stats are treated as constants.
template <typename S>
Tensor<S> batch_norm_1d(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                        const Tensor<S>& running_mean, const Tensor<S>& running_var,
                        S eps = S(1e-5));

// Parameter-free sinusoidal table [T x d], d even; never on the tape.
template <typename S>
Tensor<S> sinusoidal_table(int64_t T, int64_t d);

// Train-mode Bernoulli mask scaled by 1/(1-p); identity when !train or p == 0.
// The mask is drawn row-major from `rng`.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, std::mt19937_64& rng, bool train);

// --- reductions to scalar ---
template <typename S>
Tensor<S> reduce_sum(const Tensor<S>& x);
template <typename S>
Tensor<S> reduce_mean(const Tensor<S>& x);

// --- temporal resampling ---
// Non-overlapping mean over groups of k frames; a final partial group is
// completed by repeating the last frame. x: [T x d] -> [ceil(T/k) x d].
template <typename S>
Tensor<S> downsample_mean(const Tensor<S>& x, int64_t k);
// Each frame repeated k times then truncated; requires ceil(target_T/k) == T'.
template <typename S>
Tensor<S> upsample_repeat(const Tensor<S>& x, int64_t k, int64_t target_T);

// Uniform draw in [0,1) with exactly 53 random bits; portable across stdlibs.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace splitformer

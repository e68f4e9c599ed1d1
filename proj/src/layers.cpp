// Copyright 2026 The Splitformer C++ Authors
//
// Licensed under the Apache License, Version 2.0

#include "splitformer/layers.hpp"

#include <cmath>
#include <functional>

namespace splitformer {

template <typename S>
Tensor<S> ConvFrontend<S>::forward(const Tensor<S>& features) const {
    if (features.rank() != 2 || features.dim(1) != kInputDim) {
        throw ShapeError(strformat("frontend: expected [Tx%lld] features, got %s",
                                   static_cast<long long>(kInputDim),
                                   shape_str(features.shape()).c_str()));
    }
    return swish(conv1d(features, weight, bias, /*stride=*/2, /*padding=*/1));
}

template <typename S>
Tensor<S> MultiHeadAttention<S>::forward(const Tensor<S>& x, const ForwardCtx& ctx) const {
    int64_t T = x.dim(0);
    int64_t d = x.dim(1);
    int64_t dh = d / n_heads;
    Tensor<S> h = ln.forward(x);
    auto split_heads = [&](const Tensor<S>& t) {
        return transpose(reshape(t, {T, n_heads, dh}), {1, 0, 2});  // [h x T x dh]
    };
    Tensor<S> qh = split_heads(q.forward(h));
    Tensor<S> kh = split_heads(k.forward(h));
    Tensor<S> vh = split_heads(v.forward(h));
    Tensor<S> scores = matmul(qh, transpose(kh, {0, 2, 1}));  // [h x T x T]
    scores = scalar_mul(scores, static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
    Tensor<S> attn = softmax(scores);
    Tensor<S> context = matmul(attn, vh);                      // [h x T x dh]
    context = reshape(transpose(context, {1, 0, 2}), {T, d});
    return apply_dropout(o.forward(context), ctx);
}

template <typename S>
Tensor<S> ConvModule<S>::forward(const Tensor<S>& x, const ForwardCtx& ctx) {
    if (kernel % 2 == 0) {
        throw ShapeError("conv module: depthwise kernel must be odd");
    }
    Tensor<S> h = ln.forward(x);
    h = glu(pointwise1.forward(h));
    h = depthwise_conv1d(h, dw_weight, dw_bias, (kernel - 1) / 2);
    if (batch_norm) {
        if (ctx.train) {
            // Running stats follow the activations but are applied
            // inference-style (constants on the tape).
            int64_t T = h.dim(0), c = h.dim(1);
            const S momentum = S(0.1);
            auto data = h.data();
            auto mean = bn_mean.data_mut();
            auto var = bn_var.data_mut();
            for (int64_t j = 0; j < c; ++j) {
                S m = S(0);
                for (int64_t t = 0; t < T; ++t) m += data[t * c + j];
                m /= static_cast<S>(T);
                S v = S(0);
                for (int64_t t = 0; t < T; ++t) {
                    S cdev = data[t * c + j] - m;
                    v += cdev * cdev;
                }
                v /= static_cast<S>(T);
                mean[j] = (S(1) - momentum) * mean[j] + momentum * m;
                var[j] = (S(1) - momentum) * var[j] + momentum * v;
            }
        }
        h = batch_norm_1d(h, norm.gain, norm.bias, bn_mean, bn_var);
    } else {
        h = norm.forward(h);
    }
    h = swish(h);
    h = pointwise2.forward(h);
    return apply_dropout(h, ctx);
}

template <typename S>
Tensor<S> ConformerLayer<S>::forward(const Tensor<S>& x, const ForwardCtx& ctx) {
    Tensor<S> h = add(x, scalar_mul(ffn1.forward(x, ctx), S(0.5)));
    h = add(h, mhsa.forward(h, ctx));
    h = add(h, conv.forward(h, ctx));
    h = add(h, scalar_mul(ffn2.forward(h, ctx), S(0.5)));
    return final_ln.forward(h);
}

int64_t conformer_layer_param_count(const ConformerLayerParams& p) {
    int64_t d = p.d_model, dff = p.d_ff, k = p.conv_kernel;
    int64_t ffn = 2 * d + (d * dff + dff) + (dff * d + d);
    int64_t mhsa = 2 * d + 4 * (d * d + d);
    int64_t conv = 2 * d + (d * 2 * d + 2 * d) + (d * k + d) + 2 * d + (d * d + d);
    int64_t final_ln = 2 * d;
    return 2 * ffn + mhsa + conv + final_ln;
}

namespace {

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

template <typename S>
void init_params(ParamList<S>& params, uint64_t seed) {
    for (auto& p : params) {
        auto data = p.tensor.data_mut();
        switch (p.kind) {
            case ParamKind::weight: {
                std::mt19937_64 rng(seed ^ fnv1a64(p.name));
                double a = std::sqrt(1.0 / static_cast<double>(p.fan_in));
                for (auto& v : data) v = static_cast<S>((2.0 * uniform01(rng) - 1.0) * a);
                break;
            }
            case ParamKind::bias:
            case ParamKind::norm_bias:
                for (auto& v : data) v = S(0);
                break;
            case ParamKind::norm_gain:
                for (auto& v : data) v = S(1);
                break;
            case ParamKind::buffer:
                // running_var starts at 1, running_mean at 0
                for (auto& v : data) {
                    v = p.name.ends_with("running_var") ? S(1) : S(0);
                }
                break;
        }
    }
}

template <typename S>
int64_t count_params(const ParamList<S>& params) {
    int64_t n = 0;
    for (const auto& p : params) {
        if (p.kind != ParamKind::buffer) n += p.tensor.numel();
    }
    return n;
}

#define SPLITFORMER_INSTANTIATE_LAYERS(S)                      \
    template struct ConvFrontend<S>;                           \
    template struct MultiHeadAttention<S>;                     \
    template struct ConvModule<S>;                             \
    template struct ConformerLayer<S>;                         \
    template void init_params<S>(ParamList<S>&, uint64_t);     \
    template int64_t count_params<S>(const ParamList<S>&);

SPLITFORMER_INSTANTIATE_LAYERS(float)
SPLITFORMER_INSTANTIATE_LAYERS(double)

#undef SPLITFORMER_INSTANTIATE_LAYERS

}  // namespace splitformer

// Copyright 2026 The Splitformer C++ Authors
// Conformer building blocks: frontend, positional encoding, macaron layer,
// temporal resampling, exit decoders.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "splitformer/ops.hpp"
#include "splitformer/tensor.hpp"

namespace splitformer {

enum class ParamKind { weight, bias, norm_gain, norm_bias, buffer };

// One named entry of a module's state. `fan_in` drives weight init; buffers
// (e.g. batch-norm running stats) are checkpointed but never trained or
// counted as parameters.
template <typename S>
struct ParamRef {
    std::string name;
    Tensor<S> tensor;
    ParamKind kind = ParamKind::weight;
    int64_t fan_in = 0;
};

template <typename S>
using ParamList = std::vector<ParamRef<S>>;

// Per-pass context: dropout probability, mode, and the run's generator.
struct ForwardCtx {
    bool train = false;
    double dropout_p = 0.0;
    std::mt19937_64* rng = nullptr;
};

template <typename S>
Tensor<S> apply_dropout(const Tensor<S>& x, const ForwardCtx& ctx) {
    if (!ctx.train || ctx.dropout_p <= 0.0) return x;
    return dropout(x, ctx.dropout_p, *ctx.rng, true);
}

template <typename S>
struct Linear {
    Tensor<S> weight;  // [in x out]
    Tensor<S> bias;    // [out]

    Linear() = default;
    Linear(int64_t in, int64_t out)
        : weight(Tensor<S>::zeros({in, out})), bias(Tensor<S>::zeros({out})) {}

    Tensor<S> forward(const Tensor<S>& x) const { return add(matmul(x, weight), bias); }

    void collect(const std::string& prefix, ParamList<S>& out) {
        out.push_back({prefix + ".weight", weight, ParamKind::weight, weight.dim(0)});
        out.push_back({prefix + ".bias", bias, ParamKind::bias, 0});
    }
};

template <typename S>
struct LayerNormParams {
    Tensor<S> gain, bias;

    LayerNormParams() = default;
    explicit LayerNormParams(int64_t d)
        : gain(Tensor<S>::zeros({d})), bias(Tensor<S>::zeros({d})) {}

    Tensor<S> forward(const Tensor<S>& x) const { return layer_norm(x, gain, bias); }

    void collect(const std::string& prefix, ParamList<S>& out) {
        out.push_back({prefix + ".gain", gain, ParamKind::norm_gain, 0});
        out.push_back({prefix + ".bias", bias, ParamKind::norm_bias, 0});
    }
};

// Stride-2 kernel-3 convolution (80 -> d_model) plus swish; halves the frame
// rate with ceil(T/2) output frames.
template <typename S>
struct ConvFrontend {
    static constexpr int64_t kInputDim = 80;
    Tensor<S> weight;  // [d_model x 80 x 3]
    Tensor<S> bias;    // [d_model]

    ConvFrontend() = default;
    explicit ConvFrontend(int64_t d_model)
        : weight(Tensor<S>::zeros({d_model, kInputDim, 3})),
          bias(Tensor<S>::zeros({d_model})) {}

    Tensor<S> forward(const Tensor<S>& features) const;

    void collect(const std::string& prefix, ParamList<S>& out) {
        out.push_back({prefix + ".weight", weight, ParamKind::weight, kInputDim * 3});
        out.push_back({prefix + ".bias", bias, ParamKind::bias, 0});
    }
};

// Sinusoidal table [T x d]; row t interleaves sin/cos of t * 10000^(-2i/d).
template <typename S>
Tensor<S> positional_encoding(int64_t T, int64_t d) {
    return sinusoidal_table<S>(T, d);
}

struct ConformerLayerParams {
    int64_t d_model = 256;
    int64_t n_heads = 8;
    int64_t d_ff = 2048;
    int64_t conv_kernel = 31;   // odd, depthwise
    bool conv_batch_norm = false;  // layer_norm by default
    double dropout_p = 0.1;
};

template <typename S>
struct FeedForwardModule {
    LayerNormParams<S> ln;
    Linear<S> lin1, lin2;

    FeedForwardModule() = default;
    FeedForwardModule(int64_t d, int64_t d_ff) : ln(d), lin1(d, d_ff), lin2(d_ff, d) {}

    Tensor<S> forward(const Tensor<S>& x, const ForwardCtx& ctx) const {
        Tensor<S> h = ln.forward(x);
        h = swish(lin1.forward(h));
        h = lin2.forward(h);
        return apply_dropout(h, ctx);
    }

    void collect(const std::string& prefix, ParamList<S>& out) {
        ln.collect(prefix + ".ln", out);
        lin1.collect(prefix + ".lin1", out);
        lin2.collect(prefix + ".lin2", out);
    }
};

template <typename S>
struct MultiHeadAttention {
    int64_t n_heads = 1;
    LayerNormParams<S> ln;
    Linear<S> q, k, v, o;

    MultiHeadAttention() = default;
    MultiHeadAttention(int64_t d, int64_t heads)
        : n_heads(heads), ln(d), q(d, d), k(d, d), v(d, d), o(d, d) {}

    Tensor<S> forward(const Tensor<S>& x, const ForwardCtx& ctx) const;

    void collect(const std::string& prefix, ParamList<S>& out) {
        ln.collect(prefix + ".ln", out);
        q.collect(prefix + ".q", out);
        k.collect(prefix + ".k", out);
        v.collect(prefix + ".v", out);
        o.collect(prefix + ".o", out);
    }
};

template <typename S>
struct ConvModule {
    int64_t kernel = 31;
    bool batch_norm = false;
    LayerNormParams<S> ln;
    Linear<S> pointwise1;     // d -> 2d, gated by glu
    Tensor<S> dw_weight;      // [d x K]
    Tensor<S> dw_bias;        // [d]
    LayerNormParams<S> norm;  // post-depthwise norm (layer_norm default)
    Tensor<S> bn_mean, bn_var;  // running stats, used when batch_norm is on
    Linear<S> pointwise2;     // d -> d

    ConvModule() = default;
    ConvModule(int64_t d, int64_t k, bool use_batch_norm)
        : kernel(k),
          batch_norm(use_batch_norm),
          ln(d),
          pointwise1(d, 2 * d),
          dw_weight(Tensor<S>::zeros({d, k})),
          dw_bias(Tensor<S>::zeros({d})),
          norm(d),
          bn_mean(Tensor<S>::zeros({d})),
          bn_var(Tensor<S>::zeros({d})),
          pointwise2(d, d) {}

    Tensor<S> forward(const Tensor<S>& x, const ForwardCtx& ctx);

    void collect(const std::string& prefix, ParamList<S>& out) {
        ln.collect(prefix + ".ln", out);
        pointwise1.collect(prefix + ".pw1", out);
        out.push_back({prefix + ".dw.weight", dw_weight, ParamKind::weight, kernel});
        out.push_back({prefix + ".dw.bias", dw_bias, ParamKind::bias, 0});
        norm.collect(prefix + ".norm", out);
        if (batch_norm) {
            out.push_back({prefix + ".norm.running_mean", bn_mean, ParamKind::buffer, 0});
            out.push_back({prefix + ".norm.running_var", bn_var, ParamKind::buffer, 0});
        }
        pointwise2.collect(prefix + ".pw2", out);
    }
};

// Macaron block: half-weighted feed-forwards sandwiching attention and the
// convolution module, residual throughout, final layer norm. Length-preserving.
template <typename S>
struct ConformerLayer {
    FeedForwardModule<S> ffn1;
    MultiHeadAttention<S> mhsa;
    ConvModule<S> conv;
    FeedForwardModule<S> ffn2;
    LayerNormParams<S> final_ln;

    ConformerLayer() = default;
    explicit ConformerLayer(const ConformerLayerParams& p)
        : ffn1(p.d_model, p.d_ff),
          mhsa(p.d_model, p.n_heads),
          conv(p.d_model, p.conv_kernel, p.conv_batch_norm),
          ffn2(p.d_model, p.d_ff),
          final_ln(p.d_model) {}

    Tensor<S> forward(const Tensor<S>& x, const ForwardCtx& ctx);

    void collect(const std::string& prefix, ParamList<S>& out) {
        ffn1.collect(prefix + ".ffn1", out);
        mhsa.collect(prefix + ".mhsa", out);
        conv.collect(prefix + ".conv", out);
        ffn2.collect(prefix + ".ffn2", out);
        final_ln.collect(prefix + ".final_ln", out);
    }
};

// Linear map to V+1 classes followed by per-frame log_softmax; index 0 is the
// blank token.
template <typename S>
struct ExitDecoder {
    Linear<S> proj;

    ExitDecoder() = default;
    ExitDecoder(int64_t d, int64_t vocab_with_blank) : proj(d, vocab_with_blank) {}

    Tensor<S> forward(const Tensor<S>& h) const { return log_softmax(proj.forward(h)); }

    void collect(const std::string& prefix, ParamList<S>& out) {
        proj.collect(prefix + ".proj", out);
    }
};

// Exact number of learned parameters in one conformer layer, as a function
// of its dimensions alone.
int64_t conformer_layer_param_count(const ConformerLayerParams& p);

// Seeded initialization over a collected list: weights uniform(-a, a) with
// a = sqrt(1/fan_in), biases zero, norm gains one. Each tensor draws from a
// generator seeded by (seed, name), so shared names across model variants
// receive bit-identical values.
template <typename S>
void init_params(ParamList<S>& params, uint64_t seed);

template <typename S>
int64_t count_params(const ParamList<S>& params);

}  // namespace splitformer

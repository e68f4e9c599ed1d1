// Copyright 2026 The Splitformer C++ Authors
// The four encoder variants and their per-exit forward passes.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "splitformer/layers.hpp"

namespace splitformer {

enum class Variant { conformer_baseline, unet_modified, ee_baseline, splitformer };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
    Variant variant = Variant::ee_baseline;
    int64_t n_layers = 12;     // conformer layers in the main trunk
    int64_t exit_every = 2;    // layers per exit block (EE variants)
    int64_t n_exits = 6;       // M; 1 for the single-exit variants
    int64_t vocab_size = 257;  // V+1 including the blank
    int64_t d_model = 256;
    int64_t n_heads = 8;
    int64_t d_ff = 2048;
    int64_t conv_kernel = 31;
    double dropout_p = 0.1;
    bool conv_batch_norm = false;
    // unet_modified only: layers per inner block and per-block rate divisors.
    int64_t unet_block_layers = 2;
    std::vector<int64_t> unet_factors = {1, 2, 4, 8, 2};
    // splitformer only: exits (1-based) carrying a parallel half-rate layer.
    std::vector<int64_t> split_exit_indices = {1, 6};

    bool is_early_exit() const {
        return variant == Variant::ee_baseline || variant == Variant::splitformer;
    }
    ConformerLayerParams layer_params() const {
        return {d_model, n_heads, d_ff, conv_kernel, conv_batch_norm, dropout_p};
    }
    // Throws ConfigError naming the violated invariant.
    void validate() const;

    static ModelConfig defaults(Variant v);
};

// Per-exit log-probability lattices of one utterance at the halved frame rate.
template <typename S>
struct ExitOutputs {
    std::vector<Tensor<S>> lattices;  // M entries, each [T' x (V+1)]
    int64_t frames = 0;               // T' = ceil(T/2), valid for every exit
};

// Frame counts seen by each encoder block (resampled variants run inner
// blocks at lower rates).
struct ForwardTrace {
    std::vector<int64_t> block_frames;
};

template <typename S>
class Model {
public:
    Model() = default;
    explicit Model(ModelConfig config);

    const ModelConfig& config() const { return cfg_; }

    // EE variants: all (or the first `up_to_exit`) lattices of one utterance.
    ExitOutputs<S> forward_ee(const Tensor<S>& features, const ForwardCtx& ctx,
                              int64_t up_to_exit = -1, ForwardTrace* trace = nullptr);
    // Single-exit variants: the one decoder lattice.
    Tensor<S> forward_single(const Tensor<S>& features, const ForwardCtx& ctx,
                             ForwardTrace* trace = nullptr);

    // Splitformer only: skip the parallel branches entirely (the zeroed-branch
    // equivalence harness; a zeroed branch still applies its final norm).
    void set_bypass_parallel(bool bypass) { bypass_parallel_ = bypass; }
    bool bypass_parallel() const { return bypass_parallel_; }

    // Named parameters in registration order. Stage m means the entry first
    // appears in the per-exit subset of exit m (1-based).
    ParamList<S>& params() { return params_; }
    const ParamList<S>& params() const { return params_; }
    const std::vector<int64_t>& param_stages() const { return param_stages_; }

    // |subset of exit m| including the m decoders at or below it.
    int64_t param_count(int64_t exit_index) const;
    int64_t param_count_total() const;

private:
    struct EncoderBlock {
        std::vector<ConformerLayer<S>> layers;
        std::optional<ConformerLayer<S>> parallel;  // half-rate branch
        int64_t sample_factor = 1;                  // unet blocks run resampled
        bool residual_wrap = false;                 // unet residual around the block
    };

    Tensor<S> embed(const Tensor<S>& features) const;
    void collect_params();

    ModelConfig cfg_;
    ConvFrontend<S> frontend_;
    std::vector<EncoderBlock> blocks_;
    std::vector<ExitDecoder<S>> exits_;
    bool bypass_parallel_ = false;
    ParamList<S> params_;
    std::vector<int64_t> param_stages_;
};

// Validates, constructs, and seeds the parameter set. Equal seeds give
// bit-identical parameters; equal names across variants share values.
template <typename S>
Model<S> build_model(const ModelConfig& config, uint64_t seed);

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace splitformer

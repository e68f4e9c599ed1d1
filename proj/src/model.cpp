// Copyright 2026 The Splitformer C++ Authors
//
// Licensed under the Apache License, Version 2.0

#include "splitformer/model.hpp"

#include <algorithm>
#include <cmath>

namespace splitformer {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::conformer_baseline: return "conformer_baseline";
        case Variant::unet_modified: return "unet_modified";
        case Variant::ee_baseline: return "ee_baseline";
        case Variant::splitformer: return "splitformer";
    }
    return "unknown";
}

Variant variant_from_name(const std::string& name) {
    if (name == "conformer_baseline") return Variant::conformer_baseline;
    if (name == "unet_modified") return Variant::unet_modified;
    if (name == "ee_baseline") return Variant::ee_baseline;
    if (name == "splitformer") return Variant::splitformer;
    throw ConfigError(strformat("unknown variant '%s'", name.c_str()));
}

void ModelConfig::validate() const {
    if (d_model < 2 || d_model % 2 != 0) {
        throw ConfigError("model: d_model must be even and >= 2 (sinusoidal positions)");
    }
    if (n_heads < 1 || d_model % n_heads != 0) {
        throw ConfigError(strformat("model: d_model=%lld not divisible by n_heads=%lld",
                                    static_cast<long long>(d_model),
                                    static_cast<long long>(n_heads)));
    }
    if (d_ff < 1) throw ConfigError("model: d_ff must be >= 1");
    if (conv_kernel < 1 || conv_kernel % 2 == 0) {
        throw ConfigError("model: conv_kernel must be odd and >= 1");
    }
    if (vocab_size < 2) throw ConfigError("model: vocab_size must count blank plus >= 1 token");
    if (n_layers < 1) throw ConfigError("model: n_layers must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("model: dropout_p outside [0,1)");
    if (is_early_exit()) {
        if (n_exits < 1 || exit_every < 1 || n_layers != exit_every * n_exits) {
            throw ConfigError(strformat(
                    "model: early-exit variants need n_layers == exit_every * n_exits "
                    "(got %lld != %lld * %lld)",
                    static_cast<long long>(n_layers), static_cast<long long>(exit_every),
                    static_cast<long long>(n_exits)));
        }
    } else if (n_exits != 1) {
        throw ConfigError("model: single-exit variants must have n_exits == 1");
    }
    if (variant == Variant::unet_modified) {
        if (unet_block_layers < 1 || unet_factors.empty()) {
            throw ConfigError("model: unet_modified needs block layers >= 1 and factors");
        }
        for (int64_t f : unet_factors) {
            if (f < 1) throw ConfigError("model: unet factors must be >= 1");
        }
        int64_t expected = 2 + unet_block_layers * static_cast<int64_t>(unet_factors.size());
        if (n_layers != expected) {
            throw ConfigError(strformat(
                    "model: unet_modified n_layers must equal 2 + block_layers * n_blocks "
                    "(got %lld, expected %lld)",
                    static_cast<long long>(n_layers), static_cast<long long>(expected)));
        }
    }
    if (variant == Variant::splitformer) {
        if (split_exit_indices.empty()) {
            throw ConfigError("model: splitformer needs at least one parallel-branch exit");
        }
        for (int64_t e : split_exit_indices) {
            if (e < 1 || e > n_exits) {
                throw ConfigError(strformat("model: split exit %lld outside 1..%lld",
                                            static_cast<long long>(e),
                                            static_cast<long long>(n_exits)));
            }
        }
    }
}

ModelConfig ModelConfig::defaults(Variant v) {
    ModelConfig cfg;
    cfg.variant = v;
    if (!cfg.is_early_exit()) cfg.n_exits = 1;
    if (v == Variant::splitformer) cfg.split_exit_indices = {1, cfg.n_exits};
    return cfg;
}

template <typename S>
Model<S>::Model(ModelConfig config) : cfg_(std::move(config)) {
    cfg_.validate();
    frontend_ = ConvFrontend<S>(cfg_.d_model);
    auto lp = cfg_.layer_params();
    switch (cfg_.variant) {
        case Variant::conformer_baseline: {
            EncoderBlock block;
            for (int64_t i = 0; i < cfg_.n_layers; ++i) block.layers.emplace_back(lp);
            blocks_.push_back(std::move(block));
            break;
        }
        case Variant::unet_modified: {
            EncoderBlock entry;
            entry.layers.emplace_back(lp);
            entry.layers.emplace_back(lp);
            blocks_.push_back(std::move(entry));
            for (int64_t f : cfg_.unet_factors) {
                EncoderBlock block;
                for (int64_t i = 0; i < cfg_.unet_block_layers; ++i) block.layers.emplace_back(lp);
                block.sample_factor = f;
                block.residual_wrap = true;
                blocks_.push_back(std::move(block));
            }
            break;
        }
        case Variant::ee_baseline:
        case Variant::splitformer: {
            for (int64_t m = 0; m < cfg_.n_exits; ++m) {
                EncoderBlock block;
                for (int64_t i = 0; i < cfg_.exit_every; ++i) block.layers.emplace_back(lp);
                if (cfg_.variant == Variant::splitformer) {
                    bool has_branch = std::find(cfg_.split_exit_indices.begin(),
                                                cfg_.split_exit_indices.end(),
                                                m + 1) != cfg_.split_exit_indices.end();
                    if (has_branch) block.parallel.emplace(lp);
                }
                blocks_.push_back(std::move(block));
            }
            break;
        }
    }
    for (int64_t m = 0; m < cfg_.n_exits; ++m) {
        exits_.emplace_back(cfg_.d_model, cfg_.vocab_size);
    }
    collect_params();
}

template <typename S>
void Model<S>::collect_params() {
    params_.clear();
    param_stages_.clear();
    auto add_group = [&](int64_t stage, auto&& fn) {
        size_t before = params_.size();
        fn();
        param_stages_.resize(params_.size(), stage);
        (void)before;
    };
    add_group(1, [&] { frontend_.collect("frontend", params_); });
    if (cfg_.is_early_exit()) {
        for (size_t m = 0; m < blocks_.size(); ++m) {
            int64_t stage = static_cast<int64_t>(m) + 1;
            add_group(stage, [&] {
                std::string prefix = strformat("blocks.%zu", m);
                for (size_t i = 0; i < blocks_[m].layers.size(); ++i) {
                    blocks_[m].layers[i].collect(strformat("%s.layers.%zu", prefix.c_str(), i),
                                                 params_);
                }
                if (blocks_[m].parallel) {
                    blocks_[m].parallel->collect(prefix + ".parallel", params_);
                }
            });
            add_group(stage, [&] { exits_[m].collect(strformat("exits.%zu", m), params_); });
        }
    } else {
        add_group(1, [&] {
            for (size_t b = 0; b < blocks_.size(); ++b) {
                for (size_t i = 0; i < blocks_[b].layers.size(); ++i) {
                    blocks_[b].layers[i].collect(strformat("blocks.%zu.layers.%zu", b, i),
                                                 params_);
                }
            }
            exits_[0].collect("exits.0", params_);
        });
    }
}

template <typename S>
Tensor<S> Model<S>::embed(const Tensor<S>& features) const {
    Tensor<S> x = frontend_.forward(features);
    int64_t frames = x.dim(0);
    x = scalar_mul(x, static_cast<S>(std::sqrt(static_cast<double>(cfg_.d_model))));
    return add(x, positional_encoding<S>(frames, cfg_.d_model));
}

template <typename S>
ExitOutputs<S> Model<S>::forward_ee(const Tensor<S>& features, const ForwardCtx& ctx,
                                    int64_t up_to_exit, ForwardTrace* trace) {
    if (!cfg_.is_early_exit()) {
        throw ConfigError(strformat("forward_ee: variant %s has no early exits",
                                    variant_name(cfg_.variant).c_str()));
    }
    int64_t limit = up_to_exit < 0 ? cfg_.n_exits : std::min<int64_t>(up_to_exit, cfg_.n_exits);
    Tensor<S> x = embed(features);
    int64_t frames = x.dim(0);
    ExitOutputs<S> out;
    out.frames = frames;
    for (int64_t m = 0; m < limit; ++m) {
        EncoderBlock& block = blocks_[static_cast<size_t>(m)];
        Tensor<S> block_in = x;
        Tensor<S> trunk = x;
        for (auto& layer : block.layers) trunk = layer.forward(trunk, ctx);
        if (trace) trace->block_frames.push_back(frames);
        if (block.parallel && !bypass_parallel_) {
            Tensor<S> branch = downsample_mean(block_in, 2);
            if (trace) trace->block_frames.push_back(branch.dim(0));
            branch = block.parallel->forward(branch, ctx);
            branch = upsample_repeat(branch, 2, frames);
            trunk = add(trunk, branch);
        }
        x = trunk;  // the summed activation feeds the next block
        out.lattices.push_back(exits_[static_cast<size_t>(m)].forward(x));
    }
    return out;
}

template <typename S>
Tensor<S> Model<S>::forward_single(const Tensor<S>& features, const ForwardCtx& ctx,
                                   ForwardTrace* trace) {
    if (cfg_.is_early_exit()) {
        throw ConfigError(strformat("forward_single: variant %s is an early-exit model",
                                    variant_name(cfg_.variant).c_str()));
    }
    Tensor<S> x = embed(features);
    int64_t frames = x.dim(0);
    for (auto& block : blocks_) {
        if (!block.residual_wrap) {
            for (auto& layer : block.layers) x = layer.forward(x, ctx);
            if (trace) trace->block_frames.push_back(frames);
            continue;
        }
        Tensor<S> inner = downsample_mean(x, block.sample_factor);
        if (trace) trace->block_frames.push_back(inner.dim(0));
        for (auto& layer : block.layers) inner = layer.forward(inner, ctx);
        inner = upsample_repeat(inner, block.sample_factor, frames);
        x = add(x, inner);
    }
    return exits_[0].forward(x);
}

template <typename S>
int64_t Model<S>::param_count(int64_t exit_index) const {
    if (exit_index < 1 || exit_index > cfg_.n_exits) {
        throw ConfigError(strformat("param_count: exit %lld outside 1..%lld",
                                    static_cast<long long>(exit_index),
                                    static_cast<long long>(cfg_.n_exits)));
    }
    int64_t n = 0;
    for (size_t i = 0; i < params_.size(); ++i) {
        if (param_stages_[i] <= exit_index && params_[i].kind != ParamKind::buffer) {
            n += params_[i].tensor.numel();
        }
    }
    return n;
}

template <typename S>
int64_t Model<S>::param_count_total() const {
    return param_count(cfg_.n_exits);
}

template <typename S>
Model<S> build_model(const ModelConfig& config, uint64_t seed) {
    Model<S> model(config);
    init_params(model.params(), seed);
    return model;
}

template class Model<float>;
template class Model<double>;
template Model<float> build_model<float>(const ModelConfig&, uint64_t);
template Model<double> build_model<double>(const ModelConfig&, uint64_t);

}  // namespace splitformer

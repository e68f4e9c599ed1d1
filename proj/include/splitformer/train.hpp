// Copyright 2026 The Splitformer C++ Authors
// Joint early-exit CTC training: Adam with the warmup schedule, corpus
// filtering, per-epoch checkpoints, and checkpoint averaging.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "splitformer/checkpoint.hpp"
#include "splitformer/config.hpp"
#include "splitformer/data.hpp"
#include "splitformer/model.hpp"

namespace splitformer {

// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5); step counts from 1.
double noam_lr(int64_t step, int64_t warmup, int64_t d_model);

// Standard bias-corrected Adam over a model's parameter list (buffers and
// never-touched gradients are skipped / treated as zero).
class Adam {
public:
    Adam(const ParamList<float>& params, double beta1, double beta2, double eps);

    void step(ParamList<float>& params, double lr);
    int64_t step_count() const { return step_; }

    OptimizerSnapshot snapshot(const ParamList<float>& params) const;
    void restore(const OptimizerSnapshot& snap, const ParamList<float>& params);

private:
    double beta1_, beta2_, eps_;
    int64_t step_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

// Joint objective: unweighted sum of the per-exit CTC losses.
template <typename S>
struct EeLossResult {
    Tensor<S> total;              // scalar on the tape; +inf constant if infeasible
    std::vector<double> per_exit; // loss value of each exit
    bool feasible = true;
};

template <typename S>
EeLossResult<S> ee_loss(const ExitOutputs<S>& outputs, const TokenSequence& target);

struct FilterResult {
    Manifest kept;
    int64_t dropped = 0;
};

// Drops utterances whose transcript is strictly longer than `max_chars`.
FilterResult filter_corpus(const Manifest& manifest, int64_t max_chars);

struct TrainResult {
    int64_t steps_run = 0;
    int64_t utterances_skipped = 0;  // infeasible targets
    std::vector<double> epoch_mean_joint_loss;
    std::filesystem::path averaged_checkpoint;
    std::filesystem::path last_checkpoint;
};

// Runs the full recipe; writes per-epoch checkpoints, metrics.csv (one row
// per step: step,epoch,lr,joint_loss,per_exit_loss_1..M), validation.csv
// (per-epoch dev losses) and the averaged model under `out_dir`.
// Deterministic for a fixed seed; `resume` continues from the newest epoch
// checkpoint with the optimizer state and schedule intact.
TrainResult train(Model<float>& model, const std::vector<LoadedUtterance>& train_corpus,
                  const std::vector<LoadedUtterance>& dev_corpus, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir, bool resume = false,
                  std::ostream* progress = nullptr);

}  // namespace splitformer

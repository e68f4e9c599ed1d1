// Copyright 2026 The Splitformer C++ Authors
// Canonical key = value config text: diffable, sectioned per module.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "splitformer/model.hpp"

namespace splitformer {

struct TrainConfig {
    int64_t batch_size = 16;
    int64_t epochs = 70;
    int64_t warmup_steps = 0;  // 0: one epoch's worth of batches
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-9;
    double dropout_p = 0.1;
    int64_t max_transcript_chars = 600;
    int64_t average_last_k = 20;
    double grad_clip = 0.0;  // global-norm clip, 0 disables
    uint64_t seed = 0;

    void validate() const;
};

struct FullConfig {
    ModelConfig model;
    TrainConfig train;
};

std::string model_config_to_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

std::string full_config_to_text(const FullConfig& cfg);
FullConfig full_config_from_text(const std::string& text);

FullConfig load_config_file(const std::filesystem::path& path);
// Every run drops the resolved config next to its outputs.
void write_resolved_config(const std::filesystem::path& path, const FullConfig& cfg);

}  // namespace splitformer

// Copyright 2026 The Splitformer C++ Authors
// Versioned binary container for named parameter tensors: a canonical
// model-config text header plus raw 32-bit little-endian values.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "splitformer/model.hpp"

namespace splitformer {

// Adam moments keyed by parameter name, plus the step counter. Saved into
// training checkpoints so resumed runs continue the schedule exactly.
struct OptimizerSnapshot {
    int64_t step = 0;
    std::vector<std::pair<std::string, std::vector<float>>> first_moment;
    std::vector<std::pair<std::string, std::vector<float>>> second_moment;
};

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const OptimizerSnapshot* optimizer = nullptr);

struct LoadedCheckpoint {
    Model<float> model;
    std::optional<OptimizerSnapshot> optimizer;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Arithmetic mean of every named parameter across checkpoints with identical
// configs. Accumulation runs in double so averaging k identical checkpoints
// reproduces them bit-exactly.
Model<float> average_checkpoints(const std::vector<std::filesystem::path>& paths);

}  // namespace splitformer

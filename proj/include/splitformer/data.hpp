// Copyright 2026 The Splitformer C++ Authors
// Feature/transcript ingestion, tokenization, batching, and the synthetic
// corpus generator.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "splitformer/ctc.hpp"
#include "splitformer/tensor.hpp"

namespace splitformer {

// [T x 80] acoustic features at 100 Hz.
struct FeatureSequence {
    std::string utterance_id;
    int64_t frames = 0;
    std::vector<float> values;  // frames x kFeatureDim, row-major

    static constexpr int64_t kFeatureDim = 80;
    static constexpr int64_t kFrameRateHz = 100;
};

// Binary container: magic "SPFC", u16 version, u32 T, u32 D=80, then T*D
// 32-bit little-endian values row-major. Round trips are bit-exact.
FeatureSequence read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const FeatureSequence& features);

struct ManifestRecord {
    std::string utterance_id;
    std::filesystem::path feature_path;  // resolved against the manifest dir
    std::string transcript;
};

struct Manifest {
    std::filesystem::path dir;
    std::vector<ManifestRecord> records;
};

// UTF-8 TSV `id<TAB>path<TAB>transcript`, paths relative to the manifest
// file. Ids must be unique and every referenced file must exist.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Greedy longest-match segmentation over the token list. Throws DataError
// naming the byte position of unencodable text.
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab);
std::string detokenize(const TokenSequence& ids, const Vocabulary& vocab);

// A manifest with features loaded and transcripts tokenized.
struct LoadedUtterance {
    std::string utterance_id;
    FeatureSequence features;
    TokenSequence target;
    std::string transcript;
};

std::vector<LoadedUtterance> load_corpus(const Manifest& manifest, const Vocabulary& vocab);

struct Batch {
    std::vector<std::string> utterance_ids;
    std::vector<float> features;  // [B x T_max x 80], zero padded
    std::vector<int64_t> feature_lengths;
    std::vector<int> targets;  // [B x L_max], zero padded
    std::vector<int64_t> target_lengths;
    int64_t size = 0;
    int64_t t_max = 0;
    int64_t l_max = 0;

    // The valid (unpadded) slice of one utterance as a standard-precision
    // tensor ready for the frontend.
    Tensor<float> utterance_features(int64_t b) const;
    TokenSequence utterance_target(int64_t b) const;
};

// Length-bucketed batches whose order is shuffled per (seed, epoch). Every
// utterance appears exactly once; T_max of a batch is its longest utterance.
std::vector<Batch> make_batches(const std::vector<LoadedUtterance>& corpus, int64_t batch_size,
                                uint64_t seed, int64_t epoch);

// Deterministic per-token unit-norm acoustic prototypes for the synthetic
// task, a pure function of (vocab, seed).
std::vector<std::vector<float>> synthetic_prototypes(const Vocabulary& vocab, uint64_t seed);

struct SyntheticSpec {
    int64_t n_utterances = 1000;
    int64_t min_frames = 40;   // target utterance length range at 100 Hz
    int64_t max_frames = 120;
    double noise_sigma = 0.1;
    uint64_t seed = 0;
};

// Renders token strings as prototype tilings (6-12 frames per token) plus
// Gaussian noise; writes features under dir/feats and a manifest at
// dir/all.tsv. Returns the manifest.
Manifest gen_synthetic_corpus(const std::filesystem::path& dir, const Vocabulary& vocab,
                              const SyntheticSpec& spec);

// Deterministic contiguous split by the given fractions (they must sum to 1).
std::vector<Manifest> split_manifest(const Manifest& manifest,
                                     const std::vector<double>& fractions);

}  // namespace splitformer

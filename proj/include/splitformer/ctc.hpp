// Copyright 2026 The Splitformer C++ Authors
// CTC loss via the log-space forward-backward recursion, a literal
// enumeration oracle, and greedy / blank-pruning prefix beam decoders.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "splitformer/tensor.hpp"

namespace splitformer {

// Output units. Token ids are dense 1..V; id 0 is the blank and never appears
// in targets or in the token list.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> tokens);

    // One token per line; line i holds the token with id i+1.
    static Vocabulary load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;

    // Single-character tokens, one per char of `alphabet`.
    static Vocabulary character(const std::string& alphabet);

    int size() const { return static_cast<int>(tokens_.size()); }          // V
    int size_with_blank() const { return size() + 1; }                     // V+1
    const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id - 1)); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
};

// Targets never contain the blank (id 0).
using TokenSequence = std::vector<int>;

// Fewest frames any alignment of `target` needs (repeats force a blank).
int64_t ctc_min_frames(const TokenSequence& target);

// -log P[target | lattice] summed over all alignments that collapse to the
// target. `lattice` rows are per-frame log-probabilities over V+1 classes
// with blank at index 0. Infeasible targets give +infinity off the tape.
// The gradient w.r.t. the lattice flows through the tape.
template <typename S>
Tensor<S> ctc_loss(const Tensor<S>& lattice, const TokenSequence& target);

// Literal enumeration over all (V+1)^T alignment strings; collapse each and
// sum the probabilities of those matching the target. Refuses instances with
// more than `max_alignments` strings. Independent of the DP above.
template <typename S>
double ctc_enumeration_oracle(const Tensor<S>& lattice, const TokenSequence& target,
                              int64_t max_alignments = 10'000'000);

// Per-frame argmax, collapse repeats, drop blanks. Ties break to the lowest id.
template <typename S>
TokenSequence greedy_decode(const Tensor<S>& lattice);

struct Hypothesis {
    TokenSequence tokens;
    double score = 0.0;  // total log-probability of the collapsed sequence
};

struct BeamResult {
    std::vector<Hypothesis> nbest;
    int64_t pruned_frames = 0;    // frames where p(blank) > threshold
    int64_t expanded_frames = 0;  // frames with full hypothesis expansion
};

// Prefix beam search over collapsed sequences, merging duplicate prefixes by
// log-sum-exp. At frames whose blank probability exceeds
// `blank_prune_threshold`, hypotheses advance with the blank only and the
// frame is counted pruned.
template <typename S>
BeamResult beam_decode(const Tensor<S>& lattice, int beam_width,
                       double blank_prune_threshold = 0.95, int n_best = 1);

// Fraction of frames whose argmax class is the blank.
template <typename S>
double blank_fraction(const Tensor<S>& lattice);

}  // namespace splitformer

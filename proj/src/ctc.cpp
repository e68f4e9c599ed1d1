// Copyright 2026 The Splitformer C++ Authors
//
// Licensed under the Apache License, Version 2.0

#include "splitformer/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <unordered_map>

#include "splitformer/ops.hpp"

namespace splitformer {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp2(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double logsumexp3(double a, double b, double c) { return logsumexp2(logsumexp2(a, b), c); }

template <typename S>
void check_lattice(const char* op, const Tensor<S>& lattice) {
    if (lattice.rank() != 2 || lattice.dim(1) < 2) {
        throw ShapeError(strformat("%s: lattice must be [T x (V+1)] with V >= 1, got %s", op,
                                   shape_str(lattice.shape()).c_str()));
    }
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (const auto& t : tokens_) {
        if (t.empty()) throw DataError("vocabulary: empty token");
    }
}

Vocabulary Vocabulary::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError(strformat("vocabulary: cannot open %s", file.string().c_str()));
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        tokens.push_back(line);
    }
    if (tokens.empty()) throw DataError(strformat("vocabulary: %s has no tokens", file.string().c_str()));
    return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& file) const {
    std::ofstream out(file);
    if (!out) throw DataError(strformat("vocabulary: cannot write %s", file.string().c_str()));
    for (const auto& t : tokens_) out << t << "\n";
}

Vocabulary Vocabulary::character(const std::string& alphabet) {
    std::vector<std::string> tokens;
    tokens.reserve(alphabet.size());
    for (char c : alphabet) tokens.push_back(std::string(1, c));
    return Vocabulary(std::move(tokens));
}

int64_t ctc_min_frames(const TokenSequence& target) {
    int64_t frames = static_cast<int64_t>(target.size());
    for (size_t i = 1; i < target.size(); ++i) {
        if (target[i] == target[i - 1]) ++frames;  // blank required between repeats
    }
    return frames;
}

template <typename S>
Tensor<S> ctc_loss(const Tensor<S>& lattice, const TokenSequence& target) {
    check_lattice("ctc_loss", lattice);
    int64_t T = lattice.dim(0);
    int64_t classes = lattice.dim(1);
    for (int id : target) {
        if (id < 1 || id >= classes) {
            throw ShapeError(strformat("ctc_loss: target token %d outside 1..%lld", id,
                                       static_cast<long long>(classes - 1)));
        }
    }
    if (ctc_min_frames(target) > T) {
        // Too long to align: probability zero. Reported as +inf, off the tape.
        return Tensor<S>::scalar(std::numeric_limits<S>::infinity());
    }

    int64_t L = static_cast<int64_t>(target.size());
    int64_t states = 2 * L + 1;  // blank-interleaved label sequence
    auto label_at = [&](int64_t s) -> int { return s % 2 == 0 ? 0 : target[static_cast<size_t>(s / 2)]; };

    const S* lp = lattice.data().data();
    auto lprob = [&](int64_t t, int s_label) -> double {
        return static_cast<double>(lp[t * classes + s_label]);
    };

    // alpha_t(s): log mass of prefixes ending in state s, emissions 1..t.
    std::vector<double> alpha(static_cast<size_t>(T * states), kNegInf);
    alpha[0] = lprob(0, label_at(0));
    if (states > 1) alpha[1] = lprob(0, label_at(1));
    for (int64_t t = 1; t < T; ++t) {
        const double* prev = alpha.data() + (t - 1) * states;
        double* cur = alpha.data() + t * states;
        for (int64_t s = 0; s < states; ++s) {
            double acc = prev[s];
            if (s >= 1) acc = logsumexp2(acc, prev[s - 1]);
            int lab = label_at(s);
            if (s >= 2 && lab != 0 && lab != label_at(s - 2)) acc = logsumexp2(acc, prev[s - 2]);
            cur[s] = acc == kNegInf ? kNegInf : acc + lprob(t, lab);
        }
    }
    double log_p = alpha[(T - 1) * states + (states - 1)];
    if (states > 1) log_p = logsumexp2(log_p, alpha[(T - 1) * states + (states - 2)]);
    if (log_p == kNegInf) {
        return Tensor<S>::scalar(std::numeric_limits<S>::infinity());
    }

    // beta_t(s): log mass of suffixes from state s, emissions t..T.
    std::vector<double> beta(static_cast<size_t>(T * states), kNegInf);
    beta[(T - 1) * states + (states - 1)] = lprob(T - 1, label_at(states - 1));
    if (states > 1) beta[(T - 1) * states + (states - 2)] = lprob(T - 1, label_at(states - 2));
    for (int64_t t = T - 2; t >= 0; --t) {
        const double* next = beta.data() + (t + 1) * states;
        double* cur = beta.data() + t * states;
        for (int64_t s = states - 1; s >= 0; --s) {
            double acc = next[s];
            if (s + 1 < states) acc = logsumexp2(acc, next[s + 1]);
            int lab = label_at(s);
            if (s + 2 < states && label_at(s + 2) != 0 && label_at(s + 2) != lab) {
                acc = logsumexp2(acc, next[s + 2]);
            }
            cur[s] = acc == kNegInf ? kNegInf : acc + lprob(t, lab);
        }
    }

    // dL/dlattice[t,k] = -exp(logsum_{s: label(s)=k} gamma_t(s) - logP),
    // gamma_t(s) = alpha_t(s) + beta_t(s) - logp_t(label(s)) (emission at t
    // counted once).
    std::vector<S> grad_lattice(static_cast<size_t>(T * classes), S(0));
    for (int64_t t = 0; t < T; ++t) {
        std::vector<double> per_class(static_cast<size_t>(classes), kNegInf);
        for (int64_t s = 0; s < states; ++s) {
            double a = alpha[t * states + s];
            double b = beta[t * states + s];
            if (a == kNegInf || b == kNegInf) continue;
            int lab = label_at(s);
            double gamma = a + b - lprob(t, lab);
            per_class[static_cast<size_t>(lab)] = logsumexp2(per_class[static_cast<size_t>(lab)], gamma);
        }
        for (int64_t k = 0; k < classes; ++k) {
            double g = per_class[static_cast<size_t>(k)];
            if (g != kNegInf) {
                grad_lattice[static_cast<size_t>(t * classes + k)] = static_cast<S>(-std::exp(g - log_p));
            }
        }
    }

    auto li = lattice.impl();
    return make_op_node<S>(Shape{}, std::vector<S>{static_cast<S>(-log_p)}, {lattice},
                           [li, grad_lattice = std::move(grad_lattice)](const TensorImpl<S>& o) {
        li->ensure_grad();
        S g = o.grad[0];
        for (size_t i = 0; i < grad_lattice.size(); ++i) li->grad[i] += g * grad_lattice[i];
    });
}

template <typename S>
double ctc_enumeration_oracle(const Tensor<S>& lattice, const TokenSequence& target,
                              int64_t max_alignments) {
    check_lattice("ctc_enumeration_oracle", lattice);
    int64_t T = lattice.dim(0);
    int64_t classes = lattice.dim(1);
    double total_alignments = std::pow(static_cast<double>(classes), static_cast<double>(T));
    if (total_alignments > static_cast<double>(max_alignments)) {
        throw ShapeError(strformat("ctc_enumeration_oracle: %lld^%lld alignments exceed limit %lld",
                                   static_cast<long long>(classes), static_cast<long long>(T),
                                   static_cast<long long>(max_alignments)));
    }
    const S* lp = lattice.data().data();
    std::vector<int> alignment(static_cast<size_t>(T), 0);
    TokenSequence collapsed;
    collapsed.reserve(static_cast<size_t>(T));
    double acc = kNegInf;
    while (true) {
        collapsed.clear();
        for (int64_t t = 0; t < T; ++t) {
            int a = alignment[static_cast<size_t>(t)];
            if (a != 0 && (t == 0 || a != alignment[static_cast<size_t>(t - 1)])) {
                collapsed.push_back(a);
            }
        }
        if (collapsed == target) {
            double logp = 0.0;
            for (int64_t t = 0; t < T; ++t) {
                logp += static_cast<double>(lp[t * classes + alignment[static_cast<size_t>(t)]]);
            }
            acc = logsumexp2(acc, logp);
        }
        int64_t pos = T - 1;
        while (pos >= 0 && alignment[static_cast<size_t>(pos)] == classes - 1) {
            alignment[static_cast<size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
        ++alignment[static_cast<size_t>(pos)];
    }
    return acc == kNegInf ? std::numeric_limits<double>::infinity() : -acc;
}

template <typename S>
TokenSequence greedy_decode(const Tensor<S>& lattice) {
    check_lattice("greedy_decode", lattice);
    int64_t T = lattice.dim(0);
    int64_t classes = lattice.dim(1);
    const S* lp = lattice.data().data();
    TokenSequence out;
    int prev = 0;
    for (int64_t t = 0; t < T; ++t) {
        const S* row = lp + t * classes;
        int best = 0;
        for (int64_t k = 1; k < classes; ++k) {
            if (row[k] > row[best]) best = static_cast<int>(k);
        }
        if (best != 0 && best != prev) out.push_back(best);
        prev = best;
    }
    return out;
}

namespace {

// Scores of one collapsed prefix: mass ending in blank vs. in its last token.
struct PrefixScore {
    double pb = kNegInf;
    double pnb = kNegInf;
    double total() const { return logsumexp2(pb, pnb); }
};

}  // namespace

template <typename S>
BeamResult beam_decode(const Tensor<S>& lattice, int beam_width,
                       double blank_prune_threshold, int n_best) {
    check_lattice("beam_decode", lattice);
    if (beam_width < 1) throw ShapeError("beam_decode: beam width must be >= 1");
    if (blank_prune_threshold <= 0.0 || blank_prune_threshold > 1.0) {
        throw ShapeError("beam_decode: blank prune threshold must lie in (0,1]");
    }
    int64_t T = lattice.dim(0);
    int64_t classes = lattice.dim(1);
    const S* lp = lattice.data().data();

    BeamResult result;
    std::map<TokenSequence, PrefixScore> beam;
    beam[{}] = PrefixScore{0.0, kNegInf};

    for (int64_t t = 0; t < T; ++t) {
        const S* row = lp + t * classes;
        double lblank = static_cast<double>(row[0]);
        if (std::exp(lblank) > blank_prune_threshold) {
            // Blank dominates: advance every prefix with the blank only.
            ++result.pruned_frames;
            for (auto& [prefix, score] : beam) {
                double total = score.total();
                score.pb = total + lblank;
                score.pnb = kNegInf;
            }
            continue;
        }
        ++result.expanded_frames;
        std::map<TokenSequence, PrefixScore> next;
        for (const auto& [prefix, score] : beam) {
            // Blank transition keeps the prefix.
            PrefixScore& same = next[prefix];
            same.pb = logsumexp2(same.pb, score.total() + lblank);
            // Re-emitting the last token keeps the prefix too.
            if (!prefix.empty()) {
                double llast = static_cast<double>(row[prefix.back()]);
                same.pnb = logsumexp2(same.pnb, score.pnb + llast);
            }
            for (int k = 1; k < classes; ++k) {
                double lk = static_cast<double>(row[k]);
                TokenSequence extended = prefix;
                extended.push_back(k);
                PrefixScore& ext = next[extended];
                if (!prefix.empty() && k == prefix.back()) {
                    // Same token again only via a blank-separated path.
                    ext.pnb = logsumexp2(ext.pnb, score.pb + lk);
                } else {
                    ext.pnb = logsumexp2(ext.pnb, score.total() + lk);
                }
            }
        }
        if (static_cast<int>(next.size()) > beam_width) {
            std::vector<std::pair<double, const TokenSequence*>> ranked;
            ranked.reserve(next.size());
            for (const auto& [prefix, score] : next) ranked.emplace_back(score.total(), &prefix);
            std::partial_sort(ranked.begin(), ranked.begin() + beam_width, ranked.end(),
                              [](const auto& a, const auto& b) { return a.first > b.first; });
            std::map<TokenSequence, PrefixScore> pruned;
            for (int i = 0; i < beam_width; ++i) pruned[*ranked[static_cast<size_t>(i)].second] = next[*ranked[static_cast<size_t>(i)].second];
            next = std::move(pruned);
        }
        beam = std::move(next);
    }

    std::vector<Hypothesis> ranked;
    ranked.reserve(beam.size());
    for (const auto& [prefix, score] : beam) ranked.push_back({prefix, score.total()});
    std::sort(ranked.begin(), ranked.end(), [](const Hypothesis& a, const Hypothesis& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.tokens < b.tokens;
    });
    if (static_cast<int>(ranked.size()) > n_best) ranked.resize(static_cast<size_t>(n_best));
    result.nbest = std::move(ranked);
    return result;
}

template <typename S>
double blank_fraction(const Tensor<S>& lattice) {
    check_lattice("blank_fraction", lattice);
    int64_t T = lattice.dim(0);
    int64_t classes = lattice.dim(1);
    const S* lp = lattice.data().data();
    int64_t blanks = 0;
    for (int64_t t = 0; t < T; ++t) {
        const S* row = lp + t * classes;
        bool blank_best = true;
        for (int64_t k = 1; k < classes; ++k) {
            if (row[k] > row[0]) {
                blank_best = false;
                break;
            }
        }
        if (blank_best) ++blanks;
    }
    return static_cast<double>(blanks) / static_cast<double>(T);
}

#define SPLITFORMER_INSTANTIATE_CTC(S)                                                  \
    template Tensor<S> ctc_loss<S>(const Tensor<S>&, const TokenSequence&);            \
    template double ctc_enumeration_oracle<S>(const Tensor<S>&, const TokenSequence&,  \
                                              int64_t);                                \
    template TokenSequence greedy_decode<S>(const Tensor<S>&);                         \
    template BeamResult beam_decode<S>(const Tensor<S>&, int, double, int);            \
    template double blank_fraction<S>(const Tensor<S>&);

SPLITFORMER_INSTANTIATE_CTC(float)
SPLITFORMER_INSTANTIATE_CTC(double)

#undef SPLITFORMER_INSTANTIATE_CTC

}  // namespace splitformer

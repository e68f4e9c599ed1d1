// Copyright 2026 The Splitformer C++ Authors
//
// Licensed under the Apache License, Version 2.0

#include "splitformer/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include "splitformer/ops.hpp"

static_assert(std::endian::native == std::endian::little,
              "feature format is little-endian; big-endian hosts are unsupported");

namespace splitformer {

namespace {

constexpr char kFeatureMagic[4] = {'S', 'P', 'F', 'C'};
constexpr uint16_t kFeatureVersion = 1;

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t mix64(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

// Box-Muller from the portable uniform; one value per call.
double gaussian(std::mt19937_64& rng) {
    double u1 = uniform01(rng);
    double u2 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace

FeatureSequence read_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(strformat("features: cannot open %s", path.string().c_str()));
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0) {
        throw DataError(strformat("features: bad magic in %s", path.string().c_str()));
    }
    uint16_t version = 0;
    uint32_t frames = 0, dim = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&frames), sizeof frames);
    in.read(reinterpret_cast<char*>(&dim), sizeof dim);
    if (!in) throw DataError(strformat("features: truncated header in %s", path.string().c_str()));
    if (version != kFeatureVersion) {
        throw DataError(strformat("features: unsupported version %u in %s (foreign-endian file?)",
                                  version, path.string().c_str()));
    }
    if (dim != FeatureSequence::kFeatureDim) {
        throw DataError(strformat("features: dim %u != %lld in %s", dim,
                                  static_cast<long long>(FeatureSequence::kFeatureDim),
                                  path.string().c_str()));
    }
    if (frames == 0) {
        throw DataError(strformat("features: empty utterance in %s", path.string().c_str()));
    }
    FeatureSequence fs;
    fs.utterance_id = path.stem().string();
    fs.frames = frames;
    fs.values.resize(static_cast<size_t>(frames) * FeatureSequence::kFeatureDim);
    in.read(reinterpret_cast<char*>(fs.values.data()),
            static_cast<std::streamsize>(fs.values.size() * sizeof(float)));
    if (!in) throw DataError(strformat("features: truncated data in %s", path.string().c_str()));
    return fs;
}

void write_features(const std::filesystem::path& path, const FeatureSequence& features) {
    if (features.frames < 1 ||
        features.values.size() !=
                static_cast<size_t>(features.frames) * FeatureSequence::kFeatureDim) {
        throw DataError(strformat("features: inconsistent frame count for %s",
                                  path.string().c_str()));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(strformat("features: cannot write %s", path.string().c_str()));
    out.write(kFeatureMagic, 4);
    uint16_t version = kFeatureVersion;
    uint32_t frames = static_cast<uint32_t>(features.frames);
    uint32_t dim = static_cast<uint32_t>(FeatureSequence::kFeatureDim);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&frames), sizeof frames);
    out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    out.write(reinterpret_cast<const char*>(features.values.data()),
              static_cast<std::streamsize>(features.values.size() * sizeof(float)));
    if (!out) throw DataError(strformat("features: write failed for %s", path.string().c_str()));
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(strformat("manifest: cannot open %s", path.string().c_str()));
    Manifest manifest;
    manifest.dir = path.parent_path();
    std::unordered_set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t tab1 = line.find('\t');
        size_t tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) {
            throw DataError(strformat("manifest %s line %d: expected id<TAB>path<TAB>transcript",
                                      path.string().c_str(), lineno));
        }
        ManifestRecord rec;
        rec.utterance_id = line.substr(0, tab1);
        rec.feature_path = manifest.dir / line.substr(tab1 + 1, tab2 - tab1 - 1);
        rec.transcript = line.substr(tab2 + 1);
        if (!seen.insert(rec.utterance_id).second) {
            throw DataError(strformat("manifest %s line %d: duplicate id '%s'",
                                      path.string().c_str(), lineno, rec.utterance_id.c_str()));
        }
        if (!std::filesystem::exists(rec.feature_path)) {
            throw DataError(strformat("manifest %s line %d: missing feature file %s",
                                      path.string().c_str(), lineno,
                                      rec.feature_path.string().c_str()));
        }
        manifest.records.push_back(std::move(rec));
    }
    return manifest;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path);
    if (!out) throw DataError(strformat("manifest: cannot write %s", path.string().c_str()));
    std::filesystem::path base = path.parent_path();
    for (const auto& rec : manifest.records) {
        std::filesystem::path rel = std::filesystem::relative(rec.feature_path, base);
        out << rec.utterance_id << "\t" << rel.generic_string() << "\t" << rec.transcript << "\n";
    }
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
    // Longest match first at each position.
    std::vector<int> order(static_cast<size_t>(vocab.size()));
    std::iota(order.begin(), order.end(), 1);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return vocab.token(a).size() > vocab.token(b).size();
    });
    TokenSequence out;
    size_t pos = 0;
    while (pos < text.size()) {
        int matched = 0;
        for (int id : order) {
            const std::string& tok = vocab.token(id);
            if (text.compare(pos, tok.size(), tok) == 0) {
                matched = id;
                break;
            }
        }
        if (matched == 0) {
            throw DataError(strformat("tokenize: unencodable text at byte %zu of \"%s\"", pos,
                                      text.c_str()));
        }
        out.push_back(matched);
        pos += vocab.token(matched).size();
    }
    return out;
}

std::string detokenize(const TokenSequence& ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) out += vocab.token(id);
    return out;
}

std::vector<LoadedUtterance> load_corpus(const Manifest& manifest, const Vocabulary& vocab) {
    std::vector<LoadedUtterance> corpus;
    corpus.reserve(manifest.records.size());
    for (const auto& rec : manifest.records) {
        LoadedUtterance utt;
        utt.utterance_id = rec.utterance_id;
        utt.features = read_features(rec.feature_path);
        utt.features.utterance_id = rec.utterance_id;
        utt.target = tokenize(rec.transcript, vocab);
        utt.transcript = rec.transcript;
        corpus.push_back(std::move(utt));
    }
    return corpus;
}

Tensor<float> Batch::utterance_features(int64_t b) const {
    int64_t T = feature_lengths[static_cast<size_t>(b)];
    const float* src = features.data() + b * t_max * FeatureSequence::kFeatureDim;
    std::vector<float> values(src, src + T * FeatureSequence::kFeatureDim);
    return Tensor<float>::from_data({T, FeatureSequence::kFeatureDim}, std::move(values));
}

TokenSequence Batch::utterance_target(int64_t b) const {
    int64_t L = target_lengths[static_cast<size_t>(b)];
    const int* src = targets.data() + b * l_max;
    return TokenSequence(src, src + L);
}

std::vector<Batch> make_batches(const std::vector<LoadedUtterance>& corpus, int64_t batch_size,
                                uint64_t seed, int64_t epoch) {
    if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    // Length buckets limit pad waste; ties break by id for determinism.
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (corpus[a].features.frames != corpus[b].features.frames) {
            return corpus[a].features.frames < corpus[b].features.frames;
        }
        return corpus[a].utterance_id < corpus[b].utterance_id;
    });
    size_t n_batches = (corpus.size() + static_cast<size_t>(batch_size) - 1) /
                       static_cast<size_t>(batch_size);
    std::vector<size_t> batch_order(n_batches);
    std::iota(batch_order.begin(), batch_order.end(), 0);
    std::mt19937_64 rng(mix64(seed, static_cast<uint64_t>(epoch)));
    for (size_t i = batch_order.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(uniform01(rng) * static_cast<double>(i));
        if (j >= i) j = i - 1;
        std::swap(batch_order[i - 1], batch_order[j]);
    }

    std::vector<Batch> batches;
    batches.reserve(n_batches);
    for (size_t bi : batch_order) {
        size_t begin = bi * static_cast<size_t>(batch_size);
        size_t end = std::min(corpus.size(), begin + static_cast<size_t>(batch_size));
        Batch batch;
        batch.size = static_cast<int64_t>(end - begin);
        for (size_t i = begin; i < end; ++i) {
            const auto& utt = corpus[order[i]];
            batch.t_max = std::max(batch.t_max, utt.features.frames);
            batch.l_max = std::max<int64_t>(batch.l_max, static_cast<int64_t>(utt.target.size()));
        }
        batch.l_max = std::max<int64_t>(batch.l_max, 1);
        batch.features.assign(static_cast<size_t>(batch.size * batch.t_max *
                                                  FeatureSequence::kFeatureDim), 0.0f);
        batch.targets.assign(static_cast<size_t>(batch.size * batch.l_max), 0);
        for (size_t i = begin; i < end; ++i) {
            const auto& utt = corpus[order[i]];
            int64_t b = static_cast<int64_t>(i - begin);
            batch.utterance_ids.push_back(utt.utterance_id);
            batch.feature_lengths.push_back(utt.features.frames);
            batch.target_lengths.push_back(static_cast<int64_t>(utt.target.size()));
            std::copy(utt.features.values.begin(), utt.features.values.end(),
                      batch.features.begin() +
                              b * batch.t_max * FeatureSequence::kFeatureDim);
            std::copy(utt.target.begin(), utt.target.end(),
                      batch.targets.begin() + b * batch.l_max);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

std::vector<std::vector<float>> synthetic_prototypes(const Vocabulary& vocab, uint64_t seed) {
    std::vector<std::vector<float>> protos;
    protos.reserve(static_cast<size_t>(vocab.size()));
    for (int id = 1; id <= vocab.size(); ++id) {
        std::mt19937_64 rng(mix64(seed, fnv1a64("prototype:" + vocab.token(id))));
        std::vector<float> p(FeatureSequence::kFeatureDim);
        double norm = 0.0;
        for (auto& v : p) {
            double g = gaussian(rng);
            v = static_cast<float>(g);
            norm += g * g;
        }
        norm = std::sqrt(norm);
        for (auto& v : p) v = static_cast<float>(v / norm);
        protos.push_back(std::move(p));
    }
    return protos;
}

Manifest gen_synthetic_corpus(const std::filesystem::path& dir, const Vocabulary& vocab,
                              const SyntheticSpec& spec) {
    if (spec.n_utterances < 1) throw ConfigError("gen_synthetic_corpus: need >= 1 utterance");
    if (spec.min_frames < 6 || spec.max_frames < spec.min_frames) {
        throw ConfigError("gen_synthetic_corpus: bad frame range");
    }
    if (spec.noise_sigma < 0.0) throw ConfigError("gen_synthetic_corpus: negative noise");
    std::filesystem::create_directories(dir / "feats");
    auto protos = synthetic_prototypes(vocab, spec.seed);

    // Word-shaped text when the vocabulary has a space token; otherwise a
    // plain token stream.
    int space_id = 0;
    for (int id = 1; id <= vocab.size(); ++id) {
        if (vocab.token(id) == " ") space_id = id;
    }

    Manifest manifest;
    manifest.dir = dir;
    for (int64_t u = 0; u < spec.n_utterances; ++u) {
        std::mt19937_64 rng(mix64(spec.seed, 0x5eed0000ull + static_cast<uint64_t>(u)));
        auto rand_int = [&](int64_t lo, int64_t hi) {  // inclusive
            return lo + static_cast<int64_t>(uniform01(rng) * static_cast<double>(hi - lo + 1));
        };
        int64_t target_frames = rand_int(spec.min_frames, spec.max_frames);

        TokenSequence tokens;
        int64_t total_frames = 0;
        std::vector<int64_t> durations;
        int64_t word_left = rand_int(2, 6);
        while (total_frames < target_frames) {
            int id;
            if (space_id != 0 && word_left == 0 && !tokens.empty()) {
                id = space_id;
                word_left = rand_int(2, 6);
            } else {
                do {
                    id = static_cast<int>(rand_int(1, vocab.size()));
                } while (id == space_id);
                if (word_left > 0) --word_left;
            }
            int64_t dur = rand_int(6, 12);
            tokens.push_back(id);
            durations.push_back(dur);
            total_frames += dur;
        }
        // No trailing space in the transcript.
        while (!tokens.empty() && tokens.back() == space_id && space_id != 0) {
            total_frames -= durations.back();
            tokens.pop_back();
            durations.pop_back();
        }

        FeatureSequence fs;
        fs.utterance_id = strformat("utt%06lld", static_cast<long long>(u));
        fs.frames = total_frames;
        fs.values.resize(static_cast<size_t>(total_frames) * FeatureSequence::kFeatureDim);
        size_t off = 0;
        for (size_t i = 0; i < tokens.size(); ++i) {
            const auto& proto = protos[static_cast<size_t>(tokens[i] - 1)];
            for (int64_t f = 0; f < durations[i]; ++f) {
                for (int64_t c = 0; c < FeatureSequence::kFeatureDim; ++c) {
                    double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * gaussian(rng) : 0.0;
                    fs.values[off++] = static_cast<float>(proto[static_cast<size_t>(c)] + noise);
                }
            }
        }

        ManifestRecord rec;
        rec.utterance_id = fs.utterance_id;
        rec.feature_path = dir / "feats" / (fs.utterance_id + ".spfc");
        rec.transcript = detokenize(tokens, vocab);
        write_features(rec.feature_path, fs);
        manifest.records.push_back(std::move(rec));
    }
    save_manifest(dir / "all.tsv", manifest);
    return manifest;
}

std::vector<Manifest> split_manifest(const Manifest& manifest,
                                     const std::vector<double>& fractions) {
    double sum = 0.0;
    for (double f : fractions) sum += f;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("split_manifest: fractions must sum to 1");
    }
    std::vector<Manifest> out(fractions.size());
    size_t n = manifest.records.size();
    size_t begin = 0;
    for (size_t i = 0; i < fractions.size(); ++i) {
        out[i].dir = manifest.dir;
        size_t end = i + 1 == fractions.size()
                             ? n
                             : begin + static_cast<size_t>(std::llround(fractions[i] *
                                                                        static_cast<double>(n)));
        end = std::min(end, n);
        for (size_t j = begin; j < end; ++j) out[i].records.push_back(manifest.records[j]);
        begin = end;
    }
    return out;
}

}  // namespace splitformer

// Copyright 2026 The Splitformer C++ Authors
//
// Licensed under the Apache License, Version 2.0

#include "splitformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "splitformer/config.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

namespace splitformer {

namespace {

constexpr char kMagic[4] = {'E', 'E', 'C', 'P'};
constexpr uint16_t kVersion = 1;
constexpr uint8_t kFlagOptimizer = 0x1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError(strformat("checkpoint: truncated file %s", path.string().c_str()));
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const std::filesystem::path& path) {
    uint32_t len = read_pod<uint32_t>(in, path);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw DataError(strformat("checkpoint: truncated file %s", path.string().c_str()));
    return s;
}

void write_floats(std::ofstream& out, const std::vector<float>& v) {
    write_pod<uint64_t>(out, static_cast<uint64_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> read_floats(std::ifstream& in, const std::filesystem::path& path) {
    uint64_t n = read_pod<uint64_t>(in, path);
    std::vector<float> v(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!in) throw DataError(strformat("checkpoint: truncated file %s", path.string().c_str()));
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const OptimizerSnapshot* optimizer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(strformat("checkpoint: cannot write %s", path.string().c_str()));
    out.write(kMagic, 4);
    write_pod<uint16_t>(out, kVersion);
    write_pod<uint8_t>(out, optimizer ? kFlagOptimizer : 0);
    write_pod<uint64_t>(out, optimizer ? static_cast<uint64_t>(optimizer->step) : 0);
    write_string(out, model_config_to_text(model.config()));

    const auto& params = model.params();
    write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
        write_string(out, p.name);
        const Shape& shape = p.tensor.shape();
        write_pod<uint32_t>(out, static_cast<uint32_t>(shape.size()));
        for (int64_t d : shape) write_pod<uint32_t>(out, static_cast<uint32_t>(d));
        auto data = p.tensor.data();
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(float)));
    }
    if (optimizer) {
        write_pod<uint32_t>(out, static_cast<uint32_t>(optimizer->first_moment.size()));
        for (size_t i = 0; i < optimizer->first_moment.size(); ++i) {
            write_string(out, optimizer->first_moment[i].first);
            write_floats(out, optimizer->first_moment[i].second);
            write_floats(out, optimizer->second_moment[i].second);
        }
    }
    if (!out) throw DataError(strformat("checkpoint: write failed for %s", path.string().c_str()));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(strformat("checkpoint: cannot open %s", path.string().c_str()));
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError(strformat("checkpoint: bad magic in %s", path.string().c_str()));
    }
    uint16_t version = read_pod<uint16_t>(in, path);
    if (version != kVersion) {
        throw DataError(strformat("checkpoint: unsupported version %u in %s", version,
                                  path.string().c_str()));
    }
    uint8_t flags = read_pod<uint8_t>(in, path);
    uint64_t step = read_pod<uint64_t>(in, path);
    ModelConfig cfg = model_config_from_text(read_string(in, path));
    Model<float> model(cfg);

    std::unordered_map<std::string, Tensor<float>> by_name;
    for (auto& p : model.params()) by_name.emplace(p.name, p.tensor);

    uint32_t n_tensors = read_pod<uint32_t>(in, path);
    size_t filled = 0;
    for (uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = read_string(in, path);
        uint32_t rank = read_pod<uint32_t>(in, path);
        Shape shape(rank);
        for (uint32_t r = 0; r < rank; ++r) shape[r] = read_pod<uint32_t>(in, path);
        int64_t numel = shape_numel(shape);
        std::vector<float> data(static_cast<size_t>(numel));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(float)));
        if (!in) throw DataError(strformat("checkpoint: truncated file %s", path.string().c_str()));
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw DataError(strformat("checkpoint: unknown tensor '%s' in %s", name.c_str(),
                                      path.string().c_str()));
        }
        if (it->second.shape() != shape) {
            throw DataError(strformat("checkpoint: tensor '%s' has shape %s, model expects %s",
                                      name.c_str(), shape_str(shape).c_str(),
                                      shape_str(it->second.shape()).c_str()));
        }
        std::copy(data.begin(), data.end(), it->second.data_mut().begin());
        ++filled;
    }
    if (filled != by_name.size()) {
        throw DataError(strformat("checkpoint: %zu of %zu model tensors present in %s", filled,
                                  by_name.size(), path.string().c_str()));
    }

    LoadedCheckpoint loaded{std::move(model), std::nullopt};
    if (flags & kFlagOptimizer) {
        OptimizerSnapshot opt;
        opt.step = static_cast<int64_t>(step);
        uint32_t n = read_pod<uint32_t>(in, path);
        for (uint32_t i = 0; i < n; ++i) {
            std::string name = read_string(in, path);
            auto m = read_floats(in, path);
            auto v = read_floats(in, path);
            opt.first_moment.emplace_back(name, std::move(m));
            opt.second_moment.emplace_back(std::move(name), std::move(v));
        }
        loaded.optimizer = std::move(opt);
    }
    return loaded;
}

Model<float> average_checkpoints(const std::vector<std::filesystem::path>& paths) {
    if (paths.empty()) throw DataError("average_checkpoints: no checkpoints given");
    LoadedCheckpoint first = load_checkpoint(paths[0]);
    std::string cfg_text = model_config_to_text(first.model.config());

    std::vector<std::vector<double>> sums;
    sums.reserve(first.model.params().size());
    for (const auto& p : first.model.params()) {
        auto data = p.tensor.data();
        sums.emplace_back(data.begin(), data.end());
    }
    for (size_t i = 1; i < paths.size(); ++i) {
        LoadedCheckpoint next = load_checkpoint(paths[i]);
        if (model_config_to_text(next.model.config()) != cfg_text) {
            throw DataError(strformat("average_checkpoints: config mismatch between %s and %s",
                                      paths[0].string().c_str(), paths[i].string().c_str()));
        }
        const auto& params = next.model.params();
        for (size_t j = 0; j < params.size(); ++j) {
            auto data = params[j].tensor.data();
            for (size_t k = 0; k < data.size(); ++k) sums[j][k] += static_cast<double>(data[k]);
        }
    }
    double count = static_cast<double>(paths.size());
    auto& params = first.model.params();
    for (size_t j = 0; j < params.size(); ++j) {
        auto dst = params[j].tensor.data_mut();
        for (size_t k = 0; k < dst.size(); ++k) {
            // True division: averaging k identical values reproduces them
            // bit-exactly, which a reciprocal multiply would not.
            dst[k] = static_cast<float>(sums[j][k] / count);
        }
    }
    return std::move(first.model);
}

}  // namespace splitformer

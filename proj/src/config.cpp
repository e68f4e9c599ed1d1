// Copyright 2026 The Splitformer C++ Authors
//
// Licensed under the Apache License, Version 2.0

#include "splitformer/config.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace splitformer {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

using Sections = std::map<std::string, std::map<std::string, std::string>>;

Sections parse_sections(const std::string& text) {
    Sections out;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            out[section];
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(strformat("config line %d: expected 'key = value', got '%s'",
                                        lineno, t.c_str()));
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError(strformat("config line %d: empty key", lineno));
        out[section][key] = value;
    }
    return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t n = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError(strformat("config: '%s' is not an integer for key %s", v.c_str(),
                                    key.c_str()));
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(strformat("config: '%s' is not a number for key %s", v.c_str(),
                                    key.c_str()));
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(strformat("config: '%s' is not a bool for key %s", v.c_str(), key.c_str()));
}

std::vector<int64_t> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int64_t> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_int(key, item));
    }
    return out;
}

std::string int_list_to_text(const std::vector<int64_t>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string double_to_text(double d) {
    std::ostringstream os;
    os.precision(17);
    os << d;
    return os.str();
}

template <typename T>
void take(std::map<std::string, std::string>& kv, const std::string& key, T& dst);

template <>
void take<int64_t>(std::map<std::string, std::string>& kv, const std::string& key, int64_t& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    dst = parse_int(key, it->second);
    kv.erase(it);
}

template <>
void take<uint64_t>(std::map<std::string, std::string>& kv, const std::string& key, uint64_t& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    dst = static_cast<uint64_t>(parse_int(key, it->second));
    kv.erase(it);
}

template <>
void take<double>(std::map<std::string, std::string>& kv, const std::string& key, double& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    dst = parse_double(key, it->second);
    kv.erase(it);
}

template <>
void take<bool>(std::map<std::string, std::string>& kv, const std::string& key, bool& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    dst = parse_bool(key, it->second);
    kv.erase(it);
}

template <>
void take<std::vector<int64_t>>(std::map<std::string, std::string>& kv, const std::string& key,
                                std::vector<int64_t>& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    dst = parse_int_list(key, it->second);
    kv.erase(it);
}

void reject_unknown(const char* section, const std::map<std::string, std::string>& kv) {
    if (!kv.empty()) {
        throw ConfigError(strformat("config: unknown key '%s' in [%s]",
                                    kv.begin()->first.c_str(), section));
    }
}

ModelConfig model_from_sections(Sections& sections) {
    auto it = sections.find("model");
    if (it == sections.end()) throw ConfigError("config: missing [model] section");
    auto kv = it->second;
    Variant var = Variant::ee_baseline;
    if (auto v = kv.find("variant"); v != kv.end()) {
        var = variant_from_name(v->second);
        kv.erase(v);
    }
    ModelConfig cfg = ModelConfig::defaults(var);
    bool explicit_split = kv.count("split_exit_indices") > 0;
    take(kv, "n_layers", cfg.n_layers);
    take(kv, "exit_every", cfg.exit_every);
    take(kv, "n_exits", cfg.n_exits);
    take(kv, "vocab_size", cfg.vocab_size);
    take(kv, "d_model", cfg.d_model);
    take(kv, "n_heads", cfg.n_heads);
    take(kv, "d_ff", cfg.d_ff);
    take(kv, "conv_kernel", cfg.conv_kernel);
    take(kv, "dropout_p", cfg.dropout_p);
    take(kv, "conv_batch_norm", cfg.conv_batch_norm);
    take(kv, "unet_block_layers", cfg.unet_block_layers);
    take(kv, "unet_factors", cfg.unet_factors);
    take(kv, "split_exit_indices", cfg.split_exit_indices);
    if (!explicit_split && cfg.variant == Variant::splitformer) {
        cfg.split_exit_indices = {1, cfg.n_exits};
    }
    reject_unknown("model", kv);
    cfg.validate();
    return cfg;
}

TrainConfig train_from_sections(Sections& sections) {
    TrainConfig cfg;
    auto it = sections.find("train");
    if (it == sections.end()) return cfg;
    auto kv = it->second;
    take(kv, "batch_size", cfg.batch_size);
    take(kv, "epochs", cfg.epochs);
    take(kv, "warmup_steps", cfg.warmup_steps);
    take(kv, "beta1", cfg.beta1);
    take(kv, "beta2", cfg.beta2);
    take(kv, "adam_eps", cfg.adam_eps);
    take(kv, "dropout_p", cfg.dropout_p);
    take(kv, "max_transcript_chars", cfg.max_transcript_chars);
    take(kv, "average_last_k", cfg.average_last_k);
    take(kv, "grad_clip", cfg.grad_clip);
    take(kv, "seed", cfg.seed);
    reject_unknown("train", kv);
    cfg.validate();
    return cfg;
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
    if (average_last_k < 1) throw ConfigError("train: average_last_k must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("train: dropout_p outside [0,1)");
    if (grad_clip < 0.0) throw ConfigError("train: grad_clip must be >= 0");
}

std::string model_config_to_text(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "[model]\n";
    os << "variant = " << variant_name(cfg.variant) << "\n";
    os << "n_layers = " << cfg.n_layers << "\n";
    os << "exit_every = " << cfg.exit_every << "\n";
    os << "n_exits = " << cfg.n_exits << "\n";
    os << "vocab_size = " << cfg.vocab_size << "\n";
    os << "d_model = " << cfg.d_model << "\n";
    os << "n_heads = " << cfg.n_heads << "\n";
    os << "d_ff = " << cfg.d_ff << "\n";
    os << "conv_kernel = " << cfg.conv_kernel << "\n";
    os << "dropout_p = " << double_to_text(cfg.dropout_p) << "\n";
    os << "conv_batch_norm = " << (cfg.conv_batch_norm ? "true" : "false") << "\n";
    os << "unet_block_layers = " << cfg.unet_block_layers << "\n";
    os << "unet_factors = " << int_list_to_text(cfg.unet_factors) << "\n";
    os << "split_exit_indices = " << int_list_to_text(cfg.split_exit_indices) << "\n";
    return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
    Sections sections = parse_sections(text);
    return model_from_sections(sections);
}

std::string full_config_to_text(const FullConfig& cfg) {
    std::ostringstream os;
    os << model_config_to_text(cfg.model);
    os << "\n[train]\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "epochs = " << cfg.train.epochs << "\n";
    os << "warmup_steps = " << cfg.train.warmup_steps << "\n";
    os << "beta1 = " << double_to_text(cfg.train.beta1) << "\n";
    os << "beta2 = " << double_to_text(cfg.train.beta2) << "\n";
    os << "adam_eps = " << double_to_text(cfg.train.adam_eps) << "\n";
    os << "dropout_p = " << double_to_text(cfg.train.dropout_p) << "\n";
    os << "max_transcript_chars = " << cfg.train.max_transcript_chars << "\n";
    os << "average_last_k = " << cfg.train.average_last_k << "\n";
    os << "grad_clip = " << double_to_text(cfg.train.grad_clip) << "\n";
    os << "seed = " << cfg.train.seed << "\n";
    return os.str();
}

FullConfig full_config_from_text(const std::string& text) {
    Sections sections = parse_sections(text);
    FullConfig cfg;
    cfg.model = model_from_sections(sections);
    cfg.train = train_from_sections(sections);
    return cfg;
}

FullConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(strformat("config: cannot open %s", path.string().c_str()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return full_config_from_text(buf.str());
}

void write_resolved_config(const std::filesystem::path& path, const FullConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw DataError(strformat("config: cannot write %s", path.string().c_str()));
    out << full_config_to_text(cfg);
}

}  // namespace splitformer

#pragma once

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "image.hpp"
#include "losses.hpp"
#include "trainer.hpp"

namespace opendas {

/// Flat `key = value` file. '#' starts a comment, `[section]` headers are
/// accepted for readability and ignored, quotes around values are stripped.
class KeyValues {
  public:
    static KeyValues parse(const std::string& text, const std::string& origin = "<config>") {
        KeyValues kv;
        std::istringstream in(text);
        std::string line;
        for (int lineno = 1; std::getline(in, line); ++lineno) {
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty() || (line.front() == '[' && line.back() == ']')) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ParseError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
            if (key.empty()) throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
            kv.values_[key] = value;
        }
        return kv;
    }

    static KeyValues load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path);
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const std::map<std::string, std::string>& values() const { return values_; }

    template <typename V>
    void read(const std::string& key, V& out) {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        used_.push_back(key);
        out = convert<V>(key, it->second);
    }

    /// Keys present in the file that no read() consumed.
    std::vector<std::string> unused() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (std::find(used_.begin(), used_.end(), k) == used_.end()) out.push_back(k);
        return out;
    }

  private:
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    template <typename V>
    static V convert(const std::string& key, const std::string& s) {
        if constexpr (std::is_same_v<V, std::string>) {
            return s;
        } else if constexpr (std::is_same_v<V, double>) {
            char* end = nullptr;
            double v = std::strtod(s.c_str(), &end);
            if (s.empty() || *end != '\0') throw ParseError("config key '" + key + "': not a number: " + s);
            return v;
        } else if constexpr (std::is_integral_v<V>) {
            V v{};
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || p != s.data() + s.size())
                throw ParseError("config key '" + key + "': not an integer: " + s);
            return v;
        } else if constexpr (std::is_same_v<V, Rgb>) {
            Rgb c{};
            std::string t = s;
            std::replace(t.begin(), t.end(), ',', ' ');
            std::istringstream in(t);
            if (!(in >> c[0] >> c[1] >> c[2])) throw ParseError("config key '" + key + "': expected 'r, g, b'");
            return c;
        } else if constexpr (std::is_same_v<V, StageMode>) {
            return parse_stage_mode(s);
        } else if constexpr (std::is_same_v<V, TextPromptInit>) {
            if (s == "phrase") return TextPromptInit::phrase;
            if (s == "random") return TextPromptInit::random;
            throw ParseError("config key '" + key + "': text_init must be 'phrase' or 'random'");
        }
    }

    std::map<std::string, std::string> values_;
    std::vector<std::string> used_;
};

inline void read_model_config(KeyValues& kv, ModelConfig& m) {
    kv.read("d_v", m.vision.width);
    kv.read("d_t", m.text.width);
    kv.read("layers_v", m.vision.depth);
    kv.read("layers_t", m.text.depth);
    kv.read("heads_v", m.vision.heads);
    kv.read("heads_t", m.text.heads);
    kv.read("patch_size", m.vision.patch_size);
    kv.read("image_size", m.vision.image_size);
    kv.read("context_length", m.text.context_length);
    kv.read("vocab_size", m.text.vocab_size);
    kv.read("depth_v", m.prompts.depth_v);
    kv.read("depth_t", m.prompts.depth_t);
    kv.read("width_v", m.prompts.width_v);
    kv.read("width_t", m.prompts.width_t);
    kv.read("text_init", m.prompts.text_init);
    kv.read("embed_dim", m.embed_dim);
    kv.read("logit_scale", m.logit_scale);
    kv.read("init_seed", m.init_seed);
}

/// Shortest text that parses back to the same value.
inline std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

inline std::string format_float(float v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

inline std::vector<std::pair<std::string, std::string>> model_config_items(const ModelConfig& m) {
    return {{"d_v", std::to_string(m.vision.width)},
            {"d_t", std::to_string(m.text.width)},
            {"layers_v", std::to_string(m.vision.depth)},
            {"layers_t", std::to_string(m.text.depth)},
            {"heads_v", std::to_string(m.vision.heads)},
            {"heads_t", std::to_string(m.text.heads)},
            {"patch_size", std::to_string(m.vision.patch_size)},
            {"image_size", std::to_string(m.vision.image_size)},
            {"context_length", std::to_string(m.text.context_length)},
            {"vocab_size", std::to_string(m.text.vocab_size)},
            {"depth_v", std::to_string(m.prompts.depth_v)},
            {"depth_t", std::to_string(m.prompts.depth_t)},
            {"width_v", std::to_string(m.prompts.width_v)},
            {"width_t", std::to_string(m.prompts.width_t)},
            {"text_init", m.prompts.text_init == TextPromptInit::phrase ? "phrase" : "random"},
            {"embed_dim", std::to_string(m.embed_dim)},
            {"logit_scale", format_double(m.logit_scale)},
            {"init_seed", std::to_string(m.init_seed)}};
}

struct DataConfig {
    std::string train_manifest;
    std::string test_manifest;
    std::string negative_bank;
    Rgb fill_color = kPixelMean;
};

struct EvalConfig {
    std::string test_queries; // optional file, one query per line; defaults to test manifest labels
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    LossConfig loss;
    DataConfig data;
    EvalConfig eval;
};

/// Applies `kv` on top of the defaults. OPENDAS_SEED, when set, overrides
/// the training seed.
inline RunConfig parse_run_config(KeyValues kv) {
    RunConfig c;
    read_model_config(kv, c.model);
    kv.read("epochs_stage1", c.train.epochs_stage1);
    kv.read("epochs_stage2", c.train.epochs_stage2);
    kv.read("batch_size", c.train.batch_size);
    kv.read("base_lr", c.train.base_lr);
    kv.read("warmup_lr", c.train.warmup_lr);
    kv.read("warmup_epochs", c.train.warmup_epochs);
    kv.read("momentum", c.train.momentum);
    kv.read("weight_decay", c.train.weight_decay);
    kv.read("stage_mode", c.train.stage_mode);
    kv.read("seed", c.train.seed);
    kv.read("margin_mu", c.loss.margin);
    kv.read("lambda_min", c.loss.lambda_min);
    kv.read("lambda_max", c.loss.lambda_max);
    kv.read("train_manifest", c.data.train_manifest);
    kv.read("test_manifest", c.data.test_manifest);
    kv.read("negative_bank", c.data.negative_bank);
    kv.read("fill_color", c.data.fill_color);
    kv.read("test_queries", c.eval.test_queries);
    if (auto unused = kv.unused(); !unused.empty()) throw ValidationError("unknown config key '" + unused.front() + "'");
    if (const char* env = std::getenv("OPENDAS_SEED"); env && *env) {
        KeyValues e;
        e.set("OPENDAS_SEED", env);
        e.read("OPENDAS_SEED", c.train.seed);
    }
    validate(c.model);
    validate(c.train);
    validate(c.loss);
    return c;
}

inline std::string dump_run_config(const RunConfig& c) {
    std::ostringstream o;
    o << "[model]\n";
    for (const auto& [k, v] : model_config_items(c.model)) o << k << " = " << (k == "text_init" ? "\"" + v + "\"" : v) << "\n";
    o << "\n[train]\n"
      << "epochs_stage1 = " << c.train.epochs_stage1 << "\n"
      << "epochs_stage2 = " << c.train.epochs_stage2 << "\n"
      << "batch_size = " << c.train.batch_size << "\n"
      << "base_lr = " << format_double(c.train.base_lr) << "\n"
      << "warmup_lr = " << format_double(c.train.warmup_lr) << "\n"
      << "warmup_epochs = " << c.train.warmup_epochs << "\n"
      << "momentum = " << format_double(c.train.momentum) << "\n"
      << "weight_decay = " << format_double(c.train.weight_decay) << "\n"
      << "stage_mode = \"" << to_string(c.train.stage_mode) << "\"\n"
      << "seed = " << c.train.seed << "\n"
      << "\n[loss]\n"
      << "margin_mu = " << format_double(c.loss.margin) << "\n"
      << "lambda_min = " << format_double(c.loss.lambda_min) << "\n"
      << "lambda_max = " << format_double(c.loss.lambda_max) << "\n"
      << "\n[data]\n"
      << "train_manifest = \"" << c.data.train_manifest << "\"\n"
      << "test_manifest = \"" << c.data.test_manifest << "\"\n"
      << "negative_bank = \"" << c.data.negative_bank << "\"\n"
      << "fill_color = " << format_float(c.data.fill_color[0]) << ", " << format_float(c.data.fill_color[1]) << ", "
      << format_float(c.data.fill_color[2]) << "\n"
      << "\n[eval]\n"
      << "test_queries = \"" << c.eval.test_queries << "\"\n";
    return o.str();
}

} // namespace opendas

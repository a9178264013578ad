#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "model.hpp"
#include "run_config.hpp"

namespace opendas {

// Checkpoint = raw little-endian float32 tensors in `path` plus a text
// manifest in `path`.manifest:
//
//   opendas-checkpoint 1
//   config <key> <value>          one per model config key
//   vocab <word>                  one per id, in id order
//   tensor <name> <rows>x<cols> <trainable 0|1> <byte offset>

namespace detail {

inline void put_f32(std::ostream& out, float v) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    unsigned char le[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                           static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(le), 4);
}

inline float get_f32(const unsigned char* p) {
    std::uint32_t bits = std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
                         std::uint32_t{p[3]} << 24;
    return std::bit_cast<float>(bits);
}

template <typename T, typename F>
void visit_all(ModelState<T>& m, F&& f) {
    m.visit_backbone([&](const std::string& name, auto& t) { f(name, t, false); });
    m.visit_prompts([&](const std::string& name, auto& t) { f(name, t, true); });
}

} // namespace detail

template <typename T>
void save_checkpoint(const ModelState<T>& model, const std::string& path) {
    auto& m = const_cast<ModelState<T>&>(model);
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw IoError("cannot write checkpoint " + path);
    std::ostringstream manifest;
    manifest << "opendas-checkpoint 1\n";
    for (const auto& [k, v] : model_config_items(m.config)) manifest << "config " << k << ' ' << v << '\n';
    for (const auto& w : m.vocab.words()) manifest << "vocab " << w << '\n';
    std::uint64_t offset = 0;
    detail::visit_all(m, [&](const std::string& name, const auto& t, bool trainable) {
        manifest << "tensor " << name << ' ' << t.rows() << 'x' << t.cols() << ' ' << (trainable ? 1 : 0) << ' '
                 << offset << '\n';
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) detail::put_f32(bin, static_cast<float>(t(r, c)));
        offset += static_cast<std::uint64_t>(t.size()) * 4;
    });
    if (!bin) throw IoError("failed writing checkpoint " + path);
    std::ofstream man(path + ".manifest");
    man << manifest.str();
    if (!man) throw IoError("failed writing checkpoint manifest " + path + ".manifest");
}

template <typename T>
ModelState<T> load_checkpoint(const std::string& path) {
    std::ifstream man(path + ".manifest");
    if (!man) throw IoError("cannot open checkpoint manifest " + path + ".manifest");
    std::string line;
    if (!std::getline(man, line) || line != "opendas-checkpoint 1")
        throw ParseError(path + ".manifest: missing 'opendas-checkpoint 1' header");

    KeyValues cfg_kv;
    std::vector<std::string> words;
    struct Entry {
        std::string shape;
        bool trainable;
        std::uint64_t offset;
    };
    std::map<std::string, Entry> tensors;
    for (int lineno = 2; std::getline(man, line); ++lineno) {
        std::istringstream in(line);
        std::string kind;
        in >> kind;
        if (kind == "config") {
            std::string k, v;
            in >> k >> v;
            cfg_kv.set(k, v);
        } else if (kind == "vocab") {
            std::string w;
            in >> w;
            words.push_back(w);
        } else if (kind == "tensor") {
            std::string name;
            Entry e{};
            int tr = 0;
            if (!(in >> name >> e.shape >> tr >> e.offset))
                throw ParseError(path + ".manifest:" + std::to_string(lineno) + ": malformed tensor line");
            e.trainable = tr != 0;
            tensors[name] = e;
        } else if (!kind.empty()) {
            throw ParseError(path + ".manifest:" + std::to_string(lineno) + ": unknown record '" + kind + "'");
        }
    }

    ModelConfig cfg;
    read_model_config(cfg_kv, cfg);
    if (words.size() < 3) throw ParseError(path + ".manifest: vocabulary missing reserved tokens");
    Vocabulary vocab = Vocabulary::from_words(std::vector<std::string>(words.begin() + 3, words.end()));
    if (vocab.words() != words) throw ParseError(path + ".manifest: vocabulary is not in canonical order");

    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw IoError("cannot open checkpoint " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    ModelState<T> m = init_model<T>(cfg, vocab);
    std::size_t seen = 0;
    detail::visit_all(m, [&](const std::string& name, auto& t, bool trainable) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ParseError("checkpoint lacks tensor " + name);
        if (it->second.shape != shape_str(t.rows(), t.cols()))
            throw ShapeError("checkpoint tensor " + name + " has shape " + it->second.shape + ", expected " +
                             shape_str(t.rows(), t.cols()));
        if (it->second.trainable != trainable) throw ParseError("checkpoint tensor " + name + " has wrong trainable flag");
        const auto need = it->second.offset + static_cast<std::uint64_t>(t.size()) * 4;
        if (need > bytes.size()) throw ParseError("checkpoint data truncated at tensor " + name);
        const unsigned char* p = bytes.data() + it->second.offset;
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c, p += 4) t(r, c) = static_cast<T>(detail::get_f32(p));
        ++seen;
    });
    if (seen != tensors.size()) throw ParseError("checkpoint holds tensors the model does not know");
    return m;
}

} // namespace opendas

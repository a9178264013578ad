#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "encoder.hpp"
#include "tokenizer.hpp"

namespace opendas {

/// Learnable prompt matrices: visual[j] is K_v x d_v, textual[j] is K_t x d_t.
template <typename T>
struct PromptBank {
    std::vector<Matrix<T>> visual;
    std::vector<Matrix<T>> textual;

    static PromptBank zeros_like(const PromptBank& o) {
        PromptBank z;
        for (const auto& m : o.visual) z.visual.push_back(Matrix<T>::Zero(m.rows(), m.cols()));
        for (const auto& m : o.textual) z.textual.push_back(Matrix<T>::Zero(m.rows(), m.cols()));
        return z;
    }

    std::uint64_t visual_checksum() const {
        std::uint64_t h = 14695981039346656037ULL;
        for (const auto& m : visual) h = checksum(m, h);
        return h;
    }
    std::uint64_t textual_checksum() const {
        std::uint64_t h = 14695981039346656037ULL;
        for (const auto& m : textual) h = checksum(m, h);
        return h;
    }

    bool all_finite() const {
        for (const auto& m : visual)
            if (!m.allFinite()) return false;
        for (const auto& m : textual)
            if (!m.allFinite()) return false;
        return true;
    }
};

/// Frozen dual-encoder backbone plus the trainable prompt bank.
template <typename T>
struct ModelState {
    ModelConfig config;
    Vocabulary vocab;
    VisionBackbone<T> vision;
    TextBackbone<T> text;
    PromptBank<T> prompts;
    T logit_scale = T(100);

    /// Visits backbone tensors only. None of them is ever trainable.
    template <typename F>
    void visit_backbone(F&& f) {
        vision.visit(f);
        text.visit(f);
    }

    template <typename F>
    void visit_prompts(F&& f) {
        for (std::size_t j = 0; j < prompts.visual.size(); ++j)
            f("prompts.visual." + std::to_string(j), prompts.visual[j]);
        for (std::size_t j = 0; j < prompts.textual.size(); ++j)
            f("prompts.textual." + std::to_string(j), prompts.textual[j]);
    }

    std::uint64_t backbone_checksum() const {
        std::uint64_t h = 14695981039346656037ULL;
        const_cast<ModelState*>(this)->visit_backbone([&](const std::string&, const auto& t) { h = checksum(t, h); });
        return h;
    }

    /// Same model with every tensor cast to another scalar type.
    template <typename U>
    ModelState<U> cast() const {
        ModelState<U> out;
        out.config = config;
        out.vocab = vocab;
        // shapes only; every value is overwritten below
        std::mt19937_64 shape_rng(0);
        out.vision = VisionBackbone<U>::random(config.vision, config.embed_dim, shape_rng);
        out.text = TextBackbone<U>::random(config.text, config.embed_dim, shape_rng);
        auto self = const_cast<ModelState*>(this);
        std::vector<Matrix<T>*> src_m;
        std::vector<RowVector<T>*> src_v;
        self->visit_backbone([&](const std::string&, auto& t) {
            if constexpr (std::is_same_v<std::decay_t<decltype(t)>, Matrix<T>>) src_m.push_back(&t);
            else src_v.push_back(&t);
        });
        std::size_t im = 0, iv = 0;
        out.visit_backbone([&](const std::string&, auto& t) {
            if constexpr (std::is_same_v<std::decay_t<decltype(t)>, Matrix<U>>) t = src_m[im++]->template cast<U>();
            else t = src_v[iv++]->template cast<U>();
        });
        for (const auto& m : prompts.visual) out.prompts.visual.push_back(m.template cast<U>());
        for (const auto& m : prompts.textual) out.prompts.textual.push_back(m.template cast<U>());
        out.logit_scale = static_cast<U>(logit_scale);
        return out;
    }
};

/// Builds a model with a randomly initialized frozen backbone.
///
/// Visual prompts and deep textual prompts start from N(0, 0.02^2). The
/// input-layer textual prompts start from the token embeddings of
/// "A photo of a" (padded with random rows or truncated to K_t) when
/// text_init is `phrase`.
template <typename T>
ModelState<T> init_model(const ModelConfig& cfg, Vocabulary vocab) {
    validate(cfg);
    if (vocab.size() > cfg.text.vocab_size)
        throw ValidationError("vocabulary holds " + std::to_string(vocab.size()) + " words but vocab_size is " +
                              std::to_string(cfg.text.vocab_size));
    std::mt19937_64 rng(cfg.init_seed);
    ModelState<T> m;
    m.config = cfg;
    m.vocab = std::move(vocab);
    m.logit_scale = static_cast<T>(cfg.logit_scale);
    m.vision = VisionBackbone<T>::random(cfg.vision, cfg.embed_dim, rng);
    m.text = TextBackbone<T>::random(cfg.text, cfg.embed_dim, rng);

    const auto& pc = cfg.prompts;
    for (int j = 0; j < pc.depth_v; ++j) {
        Matrix<T> p(pc.width_v, cfg.vision.width);
        fill_normal(p, rng, 0.02);
        m.prompts.visual.push_back(std::move(p));
    }
    for (int j = 0; j < pc.depth_t; ++j) {
        Matrix<T> p(pc.width_t, cfg.text.width);
        fill_normal(p, rng, 0.02);
        m.prompts.textual.push_back(std::move(p));
    }
    if (pc.text_init == TextPromptInit::phrase) {
        auto words = Vocabulary::split_words(kTextInitPhrase);
        for (int k = 0; k < pc.width_t && k < static_cast<int>(words.size()); ++k)
            m.prompts.textual[0].row(k) = m.text.token_embedding.row(m.vocab.id(words[static_cast<std::size_t>(k)]));
    }
    return m;
}

template <typename T>
RowVector<T> forward_text(const TokenIds& tokens, const ModelState<T>& m, TowerCache<T>* cache = nullptr) {
    auto seq = embed_tokens(tokens, m.text);
    return m.text.tower.forward(assemble_input(seq, m.text.positional), m.prompts.textual, cache);
}

template <typename T>
RowVector<T> forward_text(const std::string& query, const ModelState<T>& m, TowerCache<T>* cache = nullptr) {
    return forward_text(tokenize_text(query, m.vocab, m.config.text.context_length), m, cache);
}

template <typename T>
RowVector<T> forward_image(const Image& crop, const ModelState<T>& m, TowerCache<T>* cache = nullptr) {
    auto seq = embed_patches(crop, m.vision);
    return m.vision.tower.forward(assemble_input(seq, m.vision.positional), m.prompts.visual, cache);
}

template <typename T>
struct Prediction {
    std::size_t index = 0;
    std::vector<T> scores; // cosine similarities, before any temperature
};

/// Cosine-similarity argmax; ties resolve to the lowest index.
template <typename T>
Prediction<T> predict(const RowVector<T>& v, const std::vector<RowVector<T>>& labels) {
    if (labels.empty()) throw ValidationError("predict: empty label list");
    const T vn = v.norm();
    if (!(vn > T(0))) throw ValidationError("predict: zero query embedding");
    Prediction<T> p;
    p.scores.reserve(labels.size());
    for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n].size() != v.size()) throw ShapeError("predict: embedding dimension mismatch");
        const T tn = labels[n].norm();
        if (!(tn > T(0))) throw ValidationError("predict: zero label embedding");
        T s = v.dot(labels[n]) / (vn * tn);
        p.scores.push_back(s);
        if (s > p.scores[p.index]) p.index = n;
    }
    return p;
}

} // namespace opendas

#pragma once

#include <random>
#include <string>
#include <vector>

#include "config.hpp"
#include "image.hpp"
#include "layers.hpp"
#include "tokenizer.hpp"

namespace opendas {

/// Input of a tower before any prompt is attached: the special token
/// ([CLS] for vision, [EOS] for text) followed by L content embeddings.
template <typename T>
struct TokenSequence {
    EncoderKind kind = EncoderKind::text;
    RowVector<T> special;
    Matrix<T> content; // L x d
    std::vector<int> positions;

    Eigen::Index length() const { return content.rows(); }
};

/// Attaches or replaces the prompt rows of a layer input.
///
/// layer == 0: `x` is [special; content]; returns [special; content; prompts].
/// 0 < layer < depth: the trailing K rows of `x` are overwritten by `prompts`.
/// layer >= depth: `x` is returned untouched and the trailing rows keep
/// whatever the previous layer produced.
template <typename T>
Matrix<T> inject_prompts(const Matrix<T>& x, const Matrix<T>& prompts, int layer, int depth) {
    if (layer >= depth) return x;
    if (prompts.cols() != x.cols())
        throw ShapeError("prompt width " + std::to_string(prompts.cols()) + " does not match activation width " +
                         std::to_string(x.cols()));
    if (layer == 0) {
        Matrix<T> out(x.rows() + prompts.rows(), x.cols());
        out.topRows(x.rows()) = x;
        out.bottomRows(prompts.rows()) = prompts;
        return out;
    }
    if (prompts.rows() >= x.rows())
        throw ShapeError("prompt count " + std::to_string(prompts.rows()) + " does not fit activation of length " +
                         std::to_string(x.rows()));
    Matrix<T> out = x;
    out.bottomRows(prompts.rows()) = prompts;
    return out;
}

template <typename T>
struct TowerCache {
    std::vector<Matrix<T>> layer_inputs; // input of each block, after injection
    std::vector<bool> replaced;          // whether fresh prompts entered at that block
    std::vector<BlockCache<T>> blocks;
    LayerNormCache<T> ln_post;
    RowVector<T> projected; // before L2 normalization
    T norm = T(0);
};

/// Transformer stack plus pooling head shared by both towers. Reads the
/// special token at position 0, applies ln_post and the projection.
template <typename T>
struct Tower {
    int heads = 1;
    std::vector<BlockWeights<T>> blocks;
    RowVector<T> ln_post_gamma, ln_post_beta;
    Matrix<T> proj; // d x embed_dim

    static Tower random(const EncoderConfig& cfg, int embed_dim, std::mt19937_64& rng) {
        Tower t;
        t.heads = cfg.heads;
        for (int i = 0; i < cfg.depth; ++i) t.blocks.push_back(BlockWeights<T>::random(cfg.width, rng));
        t.ln_post_gamma = RowVector<T>::Ones(cfg.width);
        t.ln_post_beta = RowVector<T>::Zero(cfg.width);
        t.proj.resize(cfg.width, embed_dim);
        fill_normal(t.proj, rng, 1.0 / std::sqrt(static_cast<double>(cfg.width)));
        return t;
    }

    int depth() const { return static_cast<int>(blocks.size()); }

    /// `x0` is [special; content] with positional embeddings already added.
    /// `prompts[j]` feeds layer j for j < prompts.size(). Returns the unit-norm
    /// embedding.
    RowVector<T> forward(const Matrix<T>& x0, const std::vector<Matrix<T>>& prompts, TowerCache<T>* cache) const {
        const int prompt_depth = static_cast<int>(prompts.size());
        if (prompt_depth < 1 || prompt_depth > depth())
            throw ShapeError("prompt depth " + std::to_string(prompt_depth) + " outside [1, " +
                             std::to_string(depth()) + "]");
        TowerCache<T> local;
        TowerCache<T>& c = cache ? *cache : local;
        c.layer_inputs.assign(blocks.size(), Matrix<T>());
        c.replaced.assign(blocks.size(), false);
        c.blocks.assign(blocks.size(), BlockCache<T>());

        Matrix<T> x = x0;
        for (int j = 0; j < depth(); ++j) {
            const auto& p = prompts[static_cast<std::size_t>(std::min(j, prompt_depth - 1))];
            if (j > 0 && j < prompt_depth && p.rows() != prompts.front().rows())
                throw ShapeError("every prompt layer of a tower must hold the same number of prompts");
            x = inject_prompts(x, p, j, prompt_depth);
            c.replaced[static_cast<std::size_t>(j)] = j < prompt_depth;
            c.layer_inputs[static_cast<std::size_t>(j)] = x;
            x = block_forward(x, blocks[static_cast<std::size_t>(j)], heads, &c.blocks[static_cast<std::size_t>(j)]);
        }
        Matrix<T> pooled = x.topRows(1);
        Matrix<T> pooled_ln = layer_norm(pooled, ln_post_gamma, ln_post_beta, &c.ln_post);
        c.projected = pooled_ln * proj;
        c.norm = c.projected.norm();
        if (!(c.norm > T(0))) throw Error("tower produced a zero embedding");
        return c.projected / c.norm;
    }

    /// Gradient of a scalar loss with respect to every prompt layer, given
    /// dL/d(embedding). Only prompts receive gradients.
    std::vector<Matrix<T>> backward(const RowVector<T>& d_embedding, const TowerCache<T>& c, int prompt_depth,
                                    Eigen::Index prompt_rows) const {
        RowVector<T> y = c.projected / c.norm;
        RowVector<T> d_proj = (d_embedding - y * y.dot(d_embedding)) / c.norm;
        Matrix<T> d_pooled_ln = d_proj * proj.transpose();
        Matrix<T> d_pooled = layer_norm_backward<T>(d_pooled_ln, ln_post_gamma, c.ln_post);

        const auto seq = c.layer_inputs.back().rows();
        Matrix<T> dx = Matrix<T>::Zero(seq, d_pooled.cols());
        dx.row(0) = d_pooled.row(0);

        std::vector<Matrix<T>> grads(static_cast<std::size_t>(prompt_depth));
        for (int j = depth() - 1; j >= 0; --j) {
            dx = block_backward<T>(dx, blocks[static_cast<std::size_t>(j)], heads, c.blocks[static_cast<std::size_t>(j)]);
            if (j < prompt_depth) {
                grads[static_cast<std::size_t>(j)] = dx.bottomRows(prompt_rows);
                // replaced rows never reach the previous layer
                dx.bottomRows(prompt_rows).setZero();
            }
        }
        return grads;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            std::string p = prefix + "blocks." + std::to_string(i) + ".";
            blocks[i].visit([&](const char* n, auto& t) { f(p + n, t); });
        }
        f(prefix + "ln_post.gamma", ln_post_gamma);
        f(prefix + "ln_post.beta", ln_post_beta);
        f(prefix + "proj", proj);
    }
};

template <typename T>
struct VisionBackbone {
    EncoderConfig config;
    Matrix<T> patch_proj; // (patch*patch*3) x d
    RowVector<T> class_embedding;
    Matrix<T> positional; // (1 + num_patches) x d
    Tower<T> tower;

    static VisionBackbone random(const EncoderConfig& cfg, int embed_dim, std::mt19937_64& rng) {
        VisionBackbone v;
        v.config = cfg;
        const int patch_dim = cfg.patch_size * cfg.patch_size * 3;
        const double s = 1.0 / std::sqrt(static_cast<double>(cfg.width));
        v.patch_proj.resize(patch_dim, cfg.width);
        fill_normal(v.patch_proj, rng, 1.0 / std::sqrt(static_cast<double>(patch_dim)));
        v.class_embedding.resize(cfg.width);
        fill_normal(v.class_embedding, rng, s);
        v.positional.resize(1 + cfg.num_patches(), cfg.width);
        fill_normal(v.positional, rng, 0.5 * s);
        v.tower = Tower<T>::random(cfg, embed_dim, rng);
        return v;
    }

    template <typename F>
    void visit(F&& f) {
        f(std::string("vision.patch_proj"), patch_proj);
        f(std::string("vision.class_embedding"), class_embedding);
        f(std::string("vision.positional"), positional);
        tower.visit("vision.", f);
    }
};

template <typename T>
struct TextBackbone {
    EncoderConfig config;
    Matrix<T> token_embedding; // vocab_size x d
    Matrix<T> positional;      // context_length x d
    Tower<T> tower;

    static TextBackbone random(const EncoderConfig& cfg, int embed_dim, std::mt19937_64& rng) {
        TextBackbone t;
        t.config = cfg;
        const double s = 1.0 / std::sqrt(static_cast<double>(cfg.width));
        t.token_embedding.resize(cfg.vocab_size, cfg.width);
        fill_normal(t.token_embedding, rng, s);
        t.positional.resize(cfg.context_length, cfg.width);
        fill_normal(t.positional, rng, 0.5 * s);
        t.tower = Tower<T>::random(cfg, embed_dim, rng);
        return t;
    }

    template <typename F>
    void visit(F&& f) {
        f(std::string("text.token_embedding"), token_embedding);
        f(std::string("text.positional"), positional);
        tower.visit("text.", f);
    }
};

/// Splits `image` into non-overlapping patches, normalizes pixels with the
/// standard channel statistics and projects each patch. The [CLS] embedding
/// is the special token.
template <typename T>
TokenSequence<T> embed_patches(const Image& image, const VisionBackbone<T>& vb) {
    const int p = vb.config.patch_size;
    if (image.height < 1 || image.width < 1 || image.height % p != 0 || image.width % p != 0)
        throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " is not divisible by patch size " + std::to_string(p));
    const int gh = image.height / p;
    const int gw = image.width / p;
    Matrix<T> patches(gh * gw, p * p * 3);
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            Eigen::Index col = 0;
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x)
                    for (int c = 0; c < 3; ++c) {
                        float v = (image.at(py * p + y, px * p + x, c) - kPixelMean[static_cast<std::size_t>(c)]) /
                                  kPixelStd[static_cast<std::size_t>(c)];
                        patches(py * gw + px, col++) = static_cast<T>(v);
                    }
        }
    TokenSequence<T> seq;
    seq.kind = EncoderKind::vision;
    seq.special = vb.class_embedding;
    seq.content = patches * vb.patch_proj;
    seq.positions.resize(static_cast<std::size_t>(gh * gw));
    for (int i = 0; i < gh * gw; ++i) seq.positions[static_cast<std::size_t>(i)] = i + 1;
    return seq;
}

/// Looks up token embeddings. The trailing [EOS] id becomes the special token.
template <typename T>
TokenSequence<T> embed_tokens(const TokenIds& tokens, const TextBackbone<T>& tb) {
    if (tokens.ids.size() < 2 || tokens.ids.back() != Vocabulary::kEos)
        throw ValidationError("token sequence must hold at least one token followed by [EOS]");
    if (static_cast<int>(tokens.ids.size()) > tb.config.context_length)
        throw ValidationError("token sequence longer than context_length");
    const auto n = static_cast<Eigen::Index>(tokens.ids.size() - 1);
    TokenSequence<T> seq;
    seq.kind = EncoderKind::text;
    seq.special = tb.token_embedding.row(Vocabulary::kEos);
    seq.content.resize(n, tb.token_embedding.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        int id = tokens.ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= tb.token_embedding.rows()) throw ValidationError("token id out of vocabulary range");
        seq.content.row(i) = tb.token_embedding.row(id);
        seq.positions.push_back(static_cast<int>(i) + 1);
    }
    return seq;
}

/// [special; content] plus positional embeddings (special at position 0).
template <typename T>
Matrix<T> assemble_input(const TokenSequence<T>& seq, const Matrix<T>& positional) {
    Matrix<T> x(1 + seq.length(), seq.special.cols());
    x.row(0) = seq.special + positional.row(0);
    for (Eigen::Index i = 0; i < seq.length(); ++i) {
        int pos = seq.positions[static_cast<std::size_t>(i)];
        if (pos < 0 || pos >= positional.rows()) throw ShapeError("position index out of range");
        x.row(1 + i) = seq.content.row(i) + positional.row(pos);
    }
    return x;
}

} // namespace opendas

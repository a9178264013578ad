#pragma once

#include <cstdint>
#include <string>

#include "error.hpp"

namespace opendas {

enum class EncoderKind { vision, text };

/// Shape of one transformer tower. Vision-only and text-only fields are
/// ignored by the other tower.
struct EncoderConfig {
    int depth = 2;           // transformer layers
    int width = 32;          // embedding dimension d
    int heads = 4;
    int patch_size = 8;      // vision
    int image_size = 32;     // vision, square input resolution
    int context_length = 16; // text, including the [EOS] slot
    int vocab_size = 256;    // text

    int num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
};

inline void validate(const EncoderConfig& c, EncoderKind kind) {
    const char* name = kind == EncoderKind::vision ? "vision" : "text";
    if (c.depth < 1) throw ValidationError(std::string(name) + " encoder depth must be >= 1");
    if (c.width < 1 || c.heads < 1) throw ValidationError(std::string(name) + " encoder width/heads must be >= 1");
    if (c.width % c.heads != 0)
        throw ValidationError(std::string(name) + " encoder width " + std::to_string(c.width) +
                              " not divisible by heads " + std::to_string(c.heads));
    if (kind == EncoderKind::vision) {
        if (c.patch_size < 1 || c.image_size < 1 || c.image_size % c.patch_size != 0)
            throw ValidationError("vision image_size must be a positive multiple of patch_size");
    } else {
        if (c.context_length < 2) throw ValidationError("text context_length must be >= 2");
        if (c.vocab_size < 4) throw ValidationError("text vocab_size must be >= 4");
    }
}

enum class TextPromptInit { phrase, random };

inline constexpr const char* kTextInitPhrase = "A photo of a";

/// Prompt depth J and width K for each tower.
struct PromptConfig {
    int depth_v = 2;
    int depth_t = 2;
    int width_v = 8;
    int width_t = 4;
    TextPromptInit text_init = TextPromptInit::phrase;
};

inline void validate(const PromptConfig& p, const EncoderConfig& vision, const EncoderConfig& text) {
    if (p.depth_v < 1 || p.depth_v > vision.depth)
        throw ValidationError("depth_v must lie in [1, " + std::to_string(vision.depth) + "], got " +
                              std::to_string(p.depth_v));
    if (p.depth_t < 1 || p.depth_t > text.depth)
        throw ValidationError("depth_t must lie in [1, " + std::to_string(text.depth) + "], got " +
                              std::to_string(p.depth_t));
    if (p.width_v < 0 || p.width_t < 0) throw ValidationError("prompt widths must be >= 0");
}

struct ModelConfig {
    EncoderConfig vision{};
    EncoderConfig text{.depth = 2, .width = 32, .heads = 4};
    PromptConfig prompts{};
    int embed_dim = 32; // shared output space of both projection heads
    double logit_scale = 100.0;
    std::uint64_t init_seed = 0;
};

inline void validate(const ModelConfig& m) {
    validate(m.vision, EncoderKind::vision);
    validate(m.text, EncoderKind::text);
    validate(m.prompts, m.vision, m.text);
    if (m.embed_dim < 1) throw ValidationError("embed_dim must be >= 1");
    if (!(m.logit_scale > 0.0)) throw ValidationError("logit_scale must be > 0");
}

/// Extra trainable parameters added by the prompts: J_v*K_v*d_v + J_t*K_t*d_t.
inline std::int64_t count_prompt_params(const EncoderConfig& vision, const EncoderConfig& text,
                                        const PromptConfig& p) {
    return std::int64_t{p.depth_v} * p.width_v * vision.width + std::int64_t{p.depth_t} * p.width_t * text.width;
}

} // namespace opendas

#pragma once

#include <opendas/opendas.hpp>

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

namespace opendas::testing {

// 2+2 layers, d=16: small enough for exhaustive finite differences.
inline ModelConfig tiny_config() {
    ModelConfig c;
    c.vision = {.depth = 2, .width = 16, .heads = 2, .patch_size = 8, .image_size = 16};
    c.text = {.depth = 2, .width = 16, .heads = 2, .context_length = 8, .vocab_size = 64};
    c.prompts = {.depth_v = 2, .depth_t = 2, .width_v = 3, .width_t = 2};
    c.embed_dim = 16;
    c.init_seed = 7;
    return c;
}

inline Vocabulary tiny_vocab() {
    return Vocabulary::from_phrases({"a photo of a", "wall", "ceiling", "floor", "door", "window", "room divider",
                                     "partition", "chandelier", "skylight"});
}

inline Image random_image(int h, int w, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img(h, w);
    for (auto& p : img.pixels) p = u(rng);
    return img;
}

// Fresh scratch directory, private to this process (ctest runs tests in parallel).
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("opendas_test_" + std::to_string(::getpid()) + "_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace opendas::testing

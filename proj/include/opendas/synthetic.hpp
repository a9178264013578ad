#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "data.hpp"
#include "image_io.hpp"
#include "mining.hpp"

namespace opendas {

struct SyntheticConfig {
    int num_classes = 8;
    int per_class = 100;
    int image_size = 64;
    double novel_fraction = 0.25;
    double test_fraction = 0.2; // of each base class; novel classes are test-only
    std::uint64_t seed = 0;
};

struct SyntheticClass {
    std::string name;
    int color = 0;
    int shape = 0;
    bool novel = false;
};

/// In-memory dataset; `records[i]` describes `images[i]` / `masks[i]`.
/// Record paths are relative to wherever write_synthetic() puts them.
struct SyntheticDataset {
    std::vector<SyntheticClass> classes;
    std::vector<SegmentRecord> records;
    std::vector<Image> images;
    std::vector<Mask> masks;
    NegativeBank bank;

    std::vector<std::string> base_queries() const {
        std::vector<std::string> out;
        for (const auto& c : classes)
            if (!c.novel) out.push_back(c.name);
        return out;
    }
    std::vector<std::string> all_queries() const {
        std::vector<std::string> out;
        for (const auto& c : classes) out.push_back(c.name);
        return out;
    }
};

namespace synth {

struct ColorDef {
    const char* name;
    Rgb rgb;
    std::array<const char*, 3> synonyms;
};

struct ShapeDef {
    const char* name;
    std::array<const char*, 3> synonyms;
};

inline const std::array<ColorDef, 8>& colors() {
    static const std::array<ColorDef, 8> c{{
        {"red", {0.85f, 0.15f, 0.15f}, {"crimson", "scarlet", "maroon"}},
        {"green", {0.15f, 0.70f, 0.20f}, {"olive", "lime", "emerald"}},
        {"blue", {0.15f, 0.30f, 0.85f}, {"navy", "azure", "cobalt"}},
        {"yellow", {0.92f, 0.85f, 0.15f}, {"gold", "amber", "lemon"}},
        {"purple", {0.55f, 0.20f, 0.70f}, {"violet", "lavender", "plum"}},
        {"orange", {0.95f, 0.55f, 0.10f}, {"tangerine", "apricot", "peach"}},
        {"cyan", {0.10f, 0.80f, 0.85f}, {"teal", "turquoise", "aqua"}},
        {"pink", {0.95f, 0.45f, 0.70f}, {"magenta", "rose", "salmon"}},
    }};
    return c;
}

inline const std::array<ShapeDef, 6>& shapes() {
    static const std::array<ShapeDef, 6> s{{
        {"square", {"rectangle", "box", "tile"}},
        {"circle", {"disc", "ellipse", "dot"}},
        {"triangle", {"wedge", "pyramid", "arrowhead"}},
        {"cross", {"plus", "star", "asterisk"}},
        {"ring", {"hoop", "donut", "loop"}},
        {"diamond", {"rhombus", "kite", "lozenge"}},
    }};
    return s;
}

// (u, v) relative to the shape center, r = half extent
inline bool inside_shape(int shape, double u, double v, double r) {
    const double au = std::abs(u), av = std::abs(v);
    switch (shape) {
    case 0: return au <= r && av <= r;
    case 1: return u * u + v * v <= r * r;
    case 2: return v >= -r && v <= r && au <= (v + r) / 2;
    case 3: return (au <= r / 3 && av <= r) || (av <= r / 3 && au <= r);
    case 4: {
        const double d = std::sqrt(u * u + v * v);
        return d <= r && d >= r / 2;
    }
    case 5: return au + av <= r;
    }
    return false;
}

inline std::vector<SyntheticClass> make_classes(int n) {
    const int nc = static_cast<int>(colors().size());
    const int ns = static_cast<int>(shapes().size());
    if (n < 2 || n > nc * ns)
        throw ValidationError("synthetic num_classes must lie in [2, " + std::to_string(nc * ns) + "]");
    std::vector<SyntheticClass> out;
    std::set<std::pair<int, int>> used;
    for (int i = 0; static_cast<int>(out.size()) < n; ++i) {
        int c = i % nc;
        int s = (i + i / nc) % ns;
        while (used.count({c, s})) s = (s + 1) % ns;
        used.insert({c, s});
        out.push_back({std::string(colors()[static_cast<std::size_t>(c)].name) + " " +
                           shapes()[static_cast<std::size_t>(s)].name,
                       c, s, false});
    }
    return out;
}

} // namespace synth

/// Five near-miss phrases per class: swapped color synonyms, swapped shape
/// synonyms and one with both swapped.
inline std::vector<std::string> synthetic_negatives(const SyntheticClass& c) {
    const auto& col = synth::colors()[static_cast<std::size_t>(c.color)];
    const auto& shp = synth::shapes()[static_cast<std::size_t>(c.shape)];
    const std::string cn = col.name, sn = shp.name;
    return {std::string(col.synonyms[0]) + " " + sn, cn + " " + shp.synonyms[0], std::string(col.synonyms[1]) + " " + sn,
            cn + " " + shp.synonyms[1], std::string(col.synonyms[2]) + " " + shp.synonyms[2]};
}

/// Colored shapes on noisy striped backgrounds, one segment per image.
/// Class = (color, shape). The last `novel_fraction` of a seeded class
/// permutation is withheld from training.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.per_class < 1 || cfg.image_size < 8) throw ValidationError("synthetic per_class >= 1 and image_size >= 8 required");
    if (cfg.novel_fraction < 0 || cfg.novel_fraction >= 1) throw ValidationError("novel_fraction must lie in [0, 1)");
    SyntheticDataset ds;
    ds.classes = synth::make_classes(cfg.num_classes);
    std::mt19937_64 rng(cfg.seed);

    const int n_novel = static_cast<int>(std::lround(cfg.novel_fraction * cfg.num_classes));
    std::vector<int> perm(static_cast<std::size_t>(cfg.num_classes));
    for (int i = 0; i < cfg.num_classes; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < n_novel; ++i) ds.classes[static_cast<std::size_t>(perm[static_cast<std::size_t>(cfg.num_classes - 1 - i)])].novel = true;

    for (const auto& c : ds.classes)
        if (!c.novel) ds.bank.entries.emplace_back(c.name, synthetic_negatives(c));

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.04);
    const int n = cfg.image_size;
    const int n_test = static_cast<int>(std::lround(cfg.test_fraction * cfg.per_class));
    long seg = 0;
    for (std::size_t ci = 0; ci < ds.classes.size(); ++ci) {
        const auto& cls = ds.classes[ci];
        const Rgb base_rgb = synth::colors()[static_cast<std::size_t>(cls.color)].rgb;
        for (int k = 0; k < cfg.per_class; ++k) {
            // background: desaturated tone, stripes, pixel noise
            const double gray = 0.25 + 0.5 * unit(rng);
            const double tint[3] = {gray + 0.08 * (unit(rng) - 0.5), gray + 0.08 * (unit(rng) - 0.5),
                                    gray + 0.08 * (unit(rng) - 0.5)};
            const double freq = 0.2 + 0.6 * unit(rng);
            const double angle = 3.14159265358979 * unit(rng);
            const double amp = 0.05 + 0.1 * unit(rng);
            const double r = n * (0.18 + 0.14 * unit(rng));
            const double cy = r + (n - 2 * r) * unit(rng);
            const double cx = r + (n - 2 * r) * unit(rng);
            double jitter[3];
            for (double& j : jitter) j = 0.12 * (unit(rng) - 0.5);

            Image img(n, n);
            Mask mask(n, n);
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    const bool in = synth::inside_shape(cls.shape, x + 0.5 - cx, y + 0.5 - cy, r);
                    mask.set(y, x, in);
                    const double stripe = amp * std::sin(freq * (x * std::cos(angle) + y * std::sin(angle)));
                    for (int c = 0; c < 3; ++c) {
                        double v = in ? base_rgb[static_cast<std::size_t>(c)] + jitter[c] : tint[c] + stripe;
                        v += noise(rng);
                        img.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                    }
                }
            SegmentRecord rec;
            const std::string stem = "c" + std::to_string(ci) + "_" + std::to_string(k);
            rec.image = "images/" + stem + ".png";
            rec.mask = "masks/" + stem + ".png";
            rec.label = cls.name;
            rec.segment_id = seg++;
            rec.split = (cls.novel || k >= cfg.per_class - n_test) ? Split::test : Split::train;
            ds.records.push_back(std::move(rec));
            ds.images.push_back(std::move(img));
            ds.masks.push_back(std::move(mask));
        }
    }
    return ds;
}

/// Writes images/, masks/, train.jsonl, test.jsonl and negatives.json
/// under `out_dir`.
inline void write_synthetic(const SyntheticDataset& ds, const std::string& out_dir) {
    namespace fs = std::filesystem;
    const fs::path root = fs::absolute(out_dir).lexically_normal();
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    std::vector<SegmentRecord> train, test;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        SegmentRecord r = ds.records[i];
        r.image = (root / r.image).string();
        r.mask = (root / r.mask).string();
        save_png_rgb(r.image, ds.images[i]);
        save_png_mask(r.mask, ds.masks[i]);
        (r.split == Split::train ? train : test).push_back(std::move(r));
    }
    save_manifest((root / "train.jsonl").string(), train);
    save_manifest((root / "test.jsonl").string(), test);
    std::ofstream bank(root / "negatives.json");
    bank << dump_negative_bank(ds.bank);
    if (!bank) throw IoError("cannot write " + (root / "negatives.json").string());
}

} // namespace opendas

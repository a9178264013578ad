#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "image.hpp"
#include "image_io.hpp"

namespace opendas {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// One annotated segment. `mask` is a PNG path, an inline run-length mask
/// ("rle:H W n0 n1 ...", alternating runs of outside/inside pixels in
/// row-major order) or empty for an already prepared crop.
struct SegmentRecord {
    std::string image;
    std::string mask;
    std::string label;
    long segment_id = 0;
    Split split = Split::train;

    bool operator==(const SegmentRecord&) const = default;
};

struct SegmentCrop {
    Image pixels;
    Rgb fill_color = kPixelMean;
    bool empty_mask = false; // source mask selected nothing; crop is pure fill
};

inline constexpr double kCropPadding = 0.10;

/// Fills everything outside `mask` with `fill_color` at native resolution,
/// cuts the mask's bounding box grown by 10% per side (clamped to the
/// image) and resizes it bilinearly to out_size x out_size.
inline SegmentCrop mask_and_fill(const Image& image, const Mask& mask, Rgb fill_color, int out_size) {
    if (image.height != mask.height || image.width != mask.width)
        throw ShapeError("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         " does not match image " + std::to_string(image.height) + "x" + std::to_string(image.width));
    SegmentCrop out;
    out.fill_color = fill_color;
    int y_min = image.height, y_max = -1, x_min = image.width, x_max = -1;
    Image filled = image;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            if (mask.inside(y, x)) {
                y_min = std::min(y_min, y), y_max = std::max(y_max, y);
                x_min = std::min(x_min, x), x_max = std::max(x_max, x);
            } else {
                for (int c = 0; c < 3; ++c) filled.at(y, x, c) = fill_color[static_cast<std::size_t>(c)];
            }
        }
    if (y_max < 0) {
        out.empty_mask = true;
        out.pixels = Image(out_size, out_size, fill_color);
        return out;
    }
    const int bh = y_max - y_min + 1;
    const int bw = x_max - x_min + 1;
    const int pad_y = static_cast<int>(std::lround(kCropPadding * bh));
    const int pad_x = static_cast<int>(std::lround(kCropPadding * bw));
    const int y0 = std::max(0, y_min - pad_y);
    const int x0 = std::max(0, x_min - pad_x);
    const int y1 = std::min(image.height, y_max + 1 + pad_y);
    const int x1 = std::min(image.width, x_max + 1 + pad_x);
    out.pixels = resize_bilinear(crop(filled, y0, x0, y1 - y0, x1 - x0), out_size, out_size);
    return out;
}

inline Mask decode_rle_mask(const std::string& text) {
    if (text.rfind("rle:", 0) != 0) throw ParseError("run-length mask must start with 'rle:'");
    std::istringstream in(text.substr(4));
    int h = 0, w = 0;
    if (!(in >> h >> w) || h < 1 || w < 1) throw ParseError("run-length mask needs positive 'H W' dimensions");
    Mask m(h, w);
    std::size_t pos = 0;
    bool inside = false;
    for (long run; in >> run; inside = !inside) {
        if (run < 0 || pos + static_cast<std::size_t>(run) > m.values.size())
            throw ParseError("run-length mask overruns its dimensions");
        std::fill_n(m.values.begin() + static_cast<long>(pos), run, inside ? 1 : 0);
        pos += static_cast<std::size_t>(run);
    }
    if (!in.eof()) throw ParseError("run-length mask holds a non-integer run");
    if (pos != m.values.size()) throw ParseError("run-length mask does not cover every pixel");
    return m;
}

inline std::string encode_rle_mask(const Mask& m) {
    std::ostringstream out;
    out << "rle:" << m.height << ' ' << m.width;
    bool inside = false;
    std::size_t run = 0;
    for (auto v : m.values) {
        if ((v != 0) != inside) {
            out << ' ' << run;
            run = 0;
            inside = !inside;
        }
        ++run;
    }
    out << ' ' << run;
    return out.str();
}

namespace detail {

inline std::string resolve(const std::filesystem::path& dir, const std::string& ref) {
    if (ref.empty() || ref.rfind("rle:", 0) == 0) return ref;
    std::filesystem::path p(ref);
    if (p.is_relative()) p = dir / p;
    return p.lexically_normal().string();
}

inline std::string relativize(const std::filesystem::path& dir, const std::string& ref) {
    if (ref.empty() || ref.rfind("rle:", 0) == 0) return ref;
    std::filesystem::path p(ref);
    if (p.is_relative()) return ref;
    auto rel = p.lexically_relative(dir);
    return rel.empty() ? ref : rel.string();
}

} // namespace detail

/// JSON-lines manifest with keys image, mask, label, segment_id, split.
/// Relative paths are resolved against the manifest's directory.
inline std::vector<SegmentRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    const auto dir = std::filesystem::absolute(path).parent_path();
    std::vector<SegmentRecord> records;
    std::set<std::pair<std::string, long>> ids;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto where = [&] { return path + ":" + std::to_string(lineno) + ": "; };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw ParseError(where() + "malformed JSON");
        }
        SegmentRecord r;
        try {
            r.image = detail::resolve(dir, j.at("image").get<std::string>());
            r.mask = detail::resolve(dir, j.value("mask", std::string()));
            r.label = j.at("label").get<std::string>();
            r.segment_id = j.at("segment_id").get<long>();
            const auto split = j.value("split", std::string("train"));
            if (split == "train") r.split = Split::train;
            else if (split == "test") r.split = Split::test;
            else throw ParseError(where() + "split must be 'train' or 'test', got '" + split + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(where() + e.what());
        }
        if (r.image.empty()) throw ValidationError(where() + "empty image path");
        if (r.label.empty()) throw ValidationError(where() + "empty label");
        if (!ids.emplace(r.image, r.segment_id).second)
            throw ValidationError(where() + "duplicate segment_id " + std::to_string(r.segment_id) + " for image " +
                                  r.image);
        records.push_back(std::move(r));
    }
    return records;
}

inline void save_manifest(const std::string& path, const std::vector<SegmentRecord>& records) {
    const auto dir = std::filesystem::absolute(path).parent_path();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path);
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["image"] = detail::relativize(dir, r.image);
        j["mask"] = detail::relativize(dir, r.mask);
        j["label"] = r.label;
        j["segment_id"] = r.segment_id;
        j["split"] = to_string(r.split);
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("failed writing manifest " + path);
}

inline Mask load_record_mask(const SegmentRecord& r, int h, int w) {
    if (r.mask.empty()) return Mask(h, w, true);
    if (r.mask.rfind("rle:", 0) == 0) return decode_rle_mask(r.mask);
    if (!std::filesystem::exists(r.mask))
        throw IoError("segment " + std::to_string(r.segment_id) + " (" + r.image + "): missing mask file " + r.mask);
    return load_png_mask(r.mask);
}

/// Reads the record's files and produces the model-ready crop.
inline SegmentCrop load_crop(const SegmentRecord& r, Rgb fill_color, int out_size) {
    if (!std::filesystem::exists(r.image))
        throw IoError("segment " + std::to_string(r.segment_id) + ": missing image file " + r.image);
    Image img = load_png_rgb(r.image);
    Mask mask = load_record_mask(r, img.height, img.width);
    try {
        return mask_and_fill(img, mask, fill_color, out_size);
    } catch (const ShapeError& e) {
        throw ShapeError("segment " + std::to_string(r.segment_id) + " (" + r.image + "): " + e.what());
    }
}

/// Base/novel partition of the test queries by exact string match.
struct QuerySet {
    std::vector<std::string> train_queries;
    std::vector<std::string> test_queries;
    std::vector<std::string> base_test;
    std::vector<std::string> novel_test;

    bool is_base(const std::string& q) const {
        return std::find(base_test.begin(), base_test.end(), q) != base_test.end();
    }
};

inline std::vector<std::string> unique_in_order(const std::vector<std::string>& v) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& s : v)
        if (seen.insert(s).second) out.push_back(s);
    return out;
}

inline QuerySet split_queries(const std::vector<std::string>& train_labels, const std::vector<std::string>& test_labels) {
    if (train_labels.empty() || test_labels.empty()) throw ValidationError("split_queries: both label sets must be non-empty");
    QuerySet q;
    q.train_queries = unique_in_order(train_labels);
    q.test_queries = unique_in_order(test_labels);
    std::unordered_set<std::string> train(q.train_queries.begin(), q.train_queries.end());
    for (const auto& t : q.test_queries) (train.count(t) ? q.base_test : q.novel_test).push_back(t);
    return q;
}

inline QuerySet split_queries(const std::vector<SegmentRecord>& records) {
    std::vector<std::string> train, test;
    for (const auto& r : records) (r.split == Split::train ? train : test).push_back(r.label);
    return split_queries(train, test);
}

inline nlohmann::ordered_json split_report(const QuerySet& q) {
    nlohmann::ordered_json j;
    j["counts"] = {{"train_queries", q.train_queries.size()},
                   {"test_queries", q.test_queries.size()},
                   {"base", q.base_test.size()},
                   {"novel", q.novel_test.size()}};
    j["train_queries"] = q.train_queries;
    j["test_queries"] = q.test_queries;
    j["base"] = q.base_test;
    j["novel"] = q.novel_test;
    return j;
}

} // namespace opendas

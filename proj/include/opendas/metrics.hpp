#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "tensor.hpp"

namespace opendas {

struct ClassScores {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    std::size_t support = 0;

    bool operator==(const ClassScores&) const = default;
};

/// Segment classification report. Subset F1 scores are absent when the
/// subset has no support in the evaluated samples.
struct MetricsReport {
    std::size_t samples = 0;
    double accuracy = 0;
    double weighted_f1 = 0;
    std::optional<double> base_f1, novel_f1;             // support-weighted
    std::optional<double> base_f1_macro, novel_f1_macro; // unweighted mean
    std::optional<double> base_accuracy, novel_accuracy;
    std::map<std::string, ClassScores> per_class;

    bool operator==(const MetricsReport&) const = default;
};

namespace detail {

inline std::optional<double> weighted_mean_f1(const std::map<std::string, ClassScores>& pc,
                                              const std::vector<std::string>& classes, bool weighted) {
    double num = 0, den = 0;
    for (const auto& c : classes) {
        auto it = pc.find(c);
        if (it == pc.end() || it->second.support == 0) continue;
        const double w = weighted ? static_cast<double>(it->second.support) : 1.0;
        num += w * it->second.f1;
        den += w;
    }
    if (den == 0) return std::nullopt;
    return num / den;
}

} // namespace detail

/// One-vs-rest precision/recall/F1 per test query, overall accuracy and
/// support-weighted F1 over all, base and novel test queries.
inline MetricsReport classification_metrics(const std::vector<std::string>& predictions,
                                            const std::vector<std::string>& truths, const QuerySet& queries) {
    if (predictions.size() != truths.size())
        throw ValidationError("classification_metrics: predictions and truths differ in length");
    std::unordered_map<std::string, std::size_t> tp, fp, fn;
    std::unordered_map<std::string, bool> known;
    for (const auto& q : queries.test_queries) known[q] = true;
    MetricsReport r;
    r.samples = truths.size();
    std::size_t correct = 0, base_n = 0, base_ok = 0, novel_n = 0, novel_ok = 0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const auto& t = truths[i];
        const auto& p = predictions[i];
        if (!known.count(t)) throw ValidationError("classification_metrics: truth '" + t + "' is not a test query");
        const bool ok = t == p;
        if (ok) {
            ++correct;
            ++tp[t];
        } else {
            ++fn[t];
            ++fp[p];
        }
        if (queries.is_base(t)) ++base_n, base_ok += ok;
        else ++novel_n, novel_ok += ok;
    }
    r.accuracy = truths.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truths.size());
    if (base_n) r.base_accuracy = static_cast<double>(base_ok) / static_cast<double>(base_n);
    if (novel_n) r.novel_accuracy = static_cast<double>(novel_ok) / static_cast<double>(novel_n);

    for (const auto& q : queries.test_queries) {
        ClassScores s;
        const double t = static_cast<double>(tp[q]), f_p = static_cast<double>(fp[q]), f_n = static_cast<double>(fn[q]);
        s.support = tp[q] + fn[q];
        s.precision = t + f_p > 0 ? t / (t + f_p) : 0.0;
        s.recall = t + f_n > 0 ? t / (t + f_n) : 0.0;
        s.f1 = 2 * t + f_p + f_n > 0 ? 2 * t / (2 * t + f_p + f_n) : 0.0;
        r.per_class[q] = s;
    }
    r.weighted_f1 = detail::weighted_mean_f1(r.per_class, queries.test_queries, true).value_or(0.0);
    r.base_f1 = detail::weighted_mean_f1(r.per_class, queries.base_test, true);
    r.novel_f1 = detail::weighted_mean_f1(r.per_class, queries.novel_test, true);
    r.base_f1_macro = detail::weighted_mean_f1(r.per_class, queries.base_test, false);
    r.novel_f1_macro = detail::weighted_mean_f1(r.per_class, queries.novel_test, false);
    return r;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    nlohmann::ordered_json j;
    j["samples"] = r.samples;
    j["accuracy"] = r.accuracy;
    j["weighted_f1"] = r.weighted_f1;
    j["base_f1"] = opt(r.base_f1);
    j["novel_f1"] = opt(r.novel_f1);
    j["base_f1_macro"] = opt(r.base_f1_macro);
    j["novel_f1_macro"] = opt(r.novel_f1_macro);
    j["base_accuracy"] = opt(r.base_accuracy);
    j["novel_accuracy"] = opt(r.novel_accuracy);
    auto& pc = j["per_class"] = nlohmann::ordered_json::object();
    for (const auto& [label, s] : r.per_class)
        pc[label] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
    return j;
}

/// H x W map of class indices; negative values mark unlabeled pixels.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<int> values;

    LabelMap() = default;
    LabelMap(int h, int w, int fill = -1) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}
    int& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Paints each segment mask with its predicted class; later segments win.
inline LabelMap paint_segments(int h, int w, const std::vector<Mask>& masks, const std::vector<int>& classes) {
    if (masks.size() != classes.size()) throw ValidationError("paint_segments: masks and classes differ in length");
    LabelMap out(h, w);
    for (std::size_t s = 0; s < masks.size(); ++s) {
        if (masks[s].height != h || masks[s].width != w) throw ShapeError("paint_segments: mask size mismatch");
        for (std::size_t i = 0; i < out.values.size(); ++i)
            if (masks[s].values[i]) out.values[i] = classes[s];
    }
    return out;
}

struct PixelEval {
    double miou = 0;
    double macc = 0;
    std::map<std::string, double> per_class_iou;
};

/// IoU per class over pixels with a ground-truth label; mIoU averages the
/// classes present in either map, mAcc the per-class recall of classes
/// present in the ground truth.
inline PixelEval pixel_metrics(const LabelMap& gt, const LabelMap& pred, const std::vector<std::string>& labels) {
    if (gt.height != pred.height || gt.width != pred.width) throw ShapeError("pixel_metrics: map shapes differ");
    const std::size_t c = labels.size();
    std::vector<std::size_t> inter(c, 0), gt_n(c, 0), pred_n(c, 0);
    auto valid = [c](int v) { return v >= 0 && static_cast<std::size_t>(v) < c; };
    for (std::size_t i = 0; i < gt.values.size(); ++i) {
        const int g = gt.values[i];
        const int p = pred.values[i];
        if (g < 0) continue;
        if (!valid(g)) throw ValidationError("pixel_metrics: ground-truth class out of range");
        ++gt_n[static_cast<std::size_t>(g)];
        if (valid(p)) {
            ++pred_n[static_cast<std::size_t>(p)];
            if (p == g) ++inter[static_cast<std::size_t>(g)];
        }
    }
    PixelEval e;
    double iou_sum = 0, acc_sum = 0;
    std::size_t iou_n = 0, acc_n = 0;
    for (std::size_t k = 0; k < c; ++k) {
        const std::size_t uni = gt_n[k] + pred_n[k] - inter[k];
        if (uni == 0) continue;
        const double iou = static_cast<double>(inter[k]) / static_cast<double>(uni);
        e.per_class_iou[labels[k]] = iou;
        iou_sum += iou;
        ++iou_n;
        if (gt_n[k] > 0) {
            acc_sum += static_cast<double>(inter[k]) / static_cast<double>(gt_n[k]);
            ++acc_n;
        }
    }
    e.miou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
    e.macc = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
    return e;
}

/// Row-major little-endian float32 matrix at `path`, labels in `path`.labels
/// ("rows cols" header then one label per line).
template <typename T>
void export_embeddings(const std::vector<RowVector<T>>& rows, const std::vector<std::string>& labels,
                       const std::string& path) {
    if (rows.size() != labels.size()) throw ValidationError("export_embeddings: rows and labels differ in length");
    const std::size_t cols = rows.empty() ? 0 : static_cast<std::size_t>(rows.front().size());
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw IoError("cannot write " + path);
    for (const auto& r : rows) {
        if (static_cast<std::size_t>(r.size()) != cols) throw ShapeError("export_embeddings: ragged rows");
        for (Eigen::Index k = 0; k < r.size(); ++k) {
            auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(r(k)));
            unsigned char le[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                   static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
            bin.write(reinterpret_cast<const char*>(le), 4);
        }
    }
    std::ofstream side(path + ".labels");
    if (!side) throw IoError("cannot write " + path + ".labels");
    side << rows.size() << ' ' << cols << '\n';
    for (const auto& l : labels) side << l << '\n';
    if (!bin || !side) throw IoError("failed writing embedding export " + path);
}

} // namespace opendas

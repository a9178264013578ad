#pragma once

#include <string>
#include <vector>

#include "data.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "synthetic.hpp"
#include "trainer.hpp"

namespace opendas {

/// Crops every record of the requested split from an in-memory synthetic set.
inline std::vector<TrainSample> synthetic_samples(const SyntheticDataset& ds, Split split, Rgb fill, int out_size) {
    std::vector<TrainSample> out;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        if (ds.records[i].split != split) continue;
        out.push_back({mask_and_fill(ds.images[i], ds.masks[i], fill, out_size).pixels, ds.records[i].label});
    }
    return out;
}

inline std::vector<TrainSample> load_samples(const std::vector<SegmentRecord>& records, Rgb fill, int out_size) {
    std::vector<TrainSample> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({load_crop(r, fill, out_size).pixels, r.label});
    return out;
}

template <typename T>
std::vector<RowVector<T>> embed_queries(const ModelState<T>& m, const std::vector<std::string>& queries) {
    std::vector<RowVector<T>> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(forward_text(q, m));
    return out;
}

/// Predicts every sample over `queries.test_queries` only and scores it.
template <typename T>
MetricsReport evaluate(const ModelState<T>& m, const std::vector<TrainSample>& samples, const QuerySet& queries) {
    const auto label_emb = embed_queries(m, queries.test_queries);
    std::vector<std::string> preds, truths;
    preds.reserve(samples.size());
    for (const auto& s : samples) {
        auto p = predict(forward_image(s.pixels, m), label_emb);
        preds.push_back(queries.test_queries[p.index]);
        truths.push_back(s.label);
    }
    return classification_metrics(preds, truths, queries);
}

/// Vocabulary covering every word the given phrases use plus the prompt
/// initialization phrase.
inline Vocabulary vocabulary_for(std::vector<std::string> phrases, const NegativeBank& bank) {
    phrases.insert(phrases.begin(), kTextInitPhrase);
    for (const auto& [k, negs] : bank.entries) {
        phrases.push_back(k);
        phrases.insert(phrases.end(), negs.begin(), negs.end());
    }
    return Vocabulary::from_phrases(phrases);
}

} // namespace opendas

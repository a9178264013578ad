#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace opendas {

struct LossConfig {
    double margin = 1.5;
    double lambda_min = 2.0;
    double lambda_max = 5.0;
};

inline void validate(const LossConfig& c) {
    if (!(c.margin > 0)) throw ValidationError("triplet margin must be > 0");
    if (!(c.lambda_min >= 0) || !(c.lambda_max >= c.lambda_min))
        throw ValidationError("lambda schedule requires lambda_max >= lambda_min >= 0");
}

/// -log softmax(logits)[target] for one sample, via log-sum-exp. If `grad`
/// is given it receives softmax(logits) - onehot(target).
template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t target, std::vector<T>* grad = nullptr) {
    if (logits.empty() || target >= logits.size()) throw ValidationError("cross_entropy: target out of range");
    for (T l : logits)
        if (!std::isfinite(static_cast<double>(l))) throw ValidationError("cross_entropy: non-finite logit");
    const T mx = *std::max_element(logits.begin(), logits.end());
    T sum = 0;
    for (T l : logits) sum += std::exp(l - mx);
    const T lse = mx + std::log(sum);
    if (grad) {
        grad->resize(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - lse);
        (*grad)[target] -= T(1);
    }
    return lse - logits[target];
}

/// Batch mean of the per-sample cross entropy.
template <typename T>
T cross_entropy(const std::vector<std::vector<T>>& logits, const std::vector<std::size_t>& targets) {
    if (logits.size() != targets.size() || logits.empty())
        throw ValidationError("cross_entropy: logits and targets must be non-empty and of equal length");
    T total = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) total += cross_entropy<T>(logits[i], targets[i]);
    return total / static_cast<T>(logits.size());
}

template <typename T>
struct TripletGrad {
    RowVector<T> anchor, positive, negative;
};

/// max(|v - t+| - |v - t-| + margin, 0) for one triplet. The subgradient is
/// 0 at the kink and for any zero-length difference.
template <typename T>
T triplet_loss(const RowVector<T>& v, const RowVector<T>& pos, const RowVector<T>& neg, T margin,
               TripletGrad<T>* grad = nullptr) {
    if (v.size() != pos.size() || v.size() != neg.size()) throw ShapeError("triplet_loss: dimension mismatch");
    RowVector<T> dp = v - pos;
    RowVector<T> dn = v - neg;
    const T d_pos = dp.norm();
    const T d_neg = dn.norm();
    const T value = d_pos - d_neg + margin;
    if (grad) {
        grad->anchor = RowVector<T>::Zero(v.size());
        grad->positive = RowVector<T>::Zero(v.size());
        grad->negative = RowVector<T>::Zero(v.size());
        if (value > T(0)) {
            if (d_pos > T(0)) {
                grad->anchor += dp / d_pos;
                grad->positive -= dp / d_pos;
            }
            if (d_neg > T(0)) {
                grad->anchor -= dn / d_neg;
                grad->negative += dn / d_neg;
            }
        }
    }
    return std::max(value, T(0));
}

template <typename T>
struct TripletBatch {
    std::vector<RowVector<T>> anchors, positives, negatives;
};

/// Batch mean of the hinge triplet loss.
template <typename T>
T triplet_loss(const TripletBatch<T>& b, T margin) {
    if (b.anchors.size() != b.positives.size() || b.anchors.size() != b.negatives.size())
        throw ShapeError("triplet batch has unequal sizes");
    if (b.anchors.empty()) return T(0);
    T total = 0;
    for (std::size_t i = 0; i < b.anchors.size(); ++i)
        total += triplet_loss<T>(b.anchors[i], b.positives[i], b.negatives[i], margin);
    return total / static_cast<T>(b.anchors.size());
}

/// Linear ramp from lambda_min (step 0) to lambda_max (step == total_steps).
inline double lambda_at(long step, long total_steps, const LossConfig& c) {
    if (total_steps < 1 || step < 0 || step > total_steps) throw ValidationError("lambda_at: step outside schedule");
    if (step == total_steps) return c.lambda_max;
    return c.lambda_min + (c.lambda_max - c.lambda_min) * static_cast<double>(step) / static_cast<double>(total_steps);
}

/// Cross entropy plus lambda times the triplet hinge, for one sample.
template <typename T>
T stage2_loss(const RowVector<T>& v, std::span<const T> logits, std::size_t target, const RowVector<T>& pos,
              const RowVector<T>& neg, T lambda, const LossConfig& cfg) {
    if (lambda < T(0)) throw ValidationError("stage2_loss: lambda must be >= 0");
    T ce = cross_entropy<T>(logits, target);
    if (lambda == T(0)) return ce;
    return ce + lambda * triplet_loss<T>(v, pos, neg, static_cast<T>(cfg.margin));
}

} // namespace opendas

#pragma once

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "losses.hpp"
#include "mining.hpp"
#include "model.hpp"

namespace opendas {

enum class StageMode { two_stage_v_then_t, two_stage_t_then_v, joint, v_triplet_then_t_triplet };

inline const char* to_string(StageMode m) {
    switch (m) {
    case StageMode::two_stage_v_then_t: return "two_stage_v_then_t";
    case StageMode::two_stage_t_then_v: return "two_stage_t_then_v";
    case StageMode::joint: return "joint";
    case StageMode::v_triplet_then_t_triplet: return "v_triplet_then_t_triplet";
    }
    return "?";
}

inline StageMode parse_stage_mode(const std::string& s) {
    for (auto m : {StageMode::two_stage_v_then_t, StageMode::two_stage_t_then_v, StageMode::joint,
                   StageMode::v_triplet_then_t_triplet})
        if (s == to_string(m)) return m;
    throw ValidationError("unknown stage_mode '" + s + "'");
}

struct TrainConfig {
    int epochs_stage1 = 5;
    int epochs_stage2 = 5;
    int batch_size = 16;
    double base_lr = 0.0025;
    double warmup_lr = 1e-5;
    int warmup_epochs = 1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    StageMode stage_mode = StageMode::two_stage_v_then_t;
};

inline void validate(const TrainConfig& c) {
    if (c.batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(c.base_lr > 0) || !(c.warmup_lr > 0)) throw ValidationError("learning rates must be > 0");
    if (c.epochs_stage1 < 0 || c.epochs_stage2 < 0) throw ValidationError("epoch counts must be >= 0");
    if (c.warmup_epochs < 0) throw ValidationError("warmup_epochs must be >= 0");
    if (c.momentum < 0 || c.momentum >= 1) throw ValidationError("momentum must lie in [0, 1)");
    if (c.weight_decay < 0) throw ValidationError("weight_decay must be >= 0");
}

struct LrSchedule {
    long total_steps = 1;
    long warmup_steps = 0;
};

/// Constant warmup_lr for the warmup steps, then base_lr * 0.5 (1 + cos(pi t))
/// with t running from 0 at the first post-warmup step to 1 at the last step.
inline double lr_at(long step, const LrSchedule& s, const TrainConfig& c) {
    if (step < 0 || step >= s.total_steps) throw ValidationError("lr_at: step outside schedule");
    if (step < s.warmup_steps) return c.warmup_lr;
    const long span = s.total_steps - s.warmup_steps - 1;
    const double progress = span > 0 ? static_cast<double>(step - s.warmup_steps) / static_cast<double>(span) : 0.0;
    return c.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// SGD with optional momentum (PyTorch convention: buf = m*buf + g; p -= lr*buf).
template <typename T>
class Sgd {
  public:
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(std::vector<Matrix<T>>& params, const std::vector<Matrix<T>>& grads, double lr) {
        if (buffers_.empty())
            for (const auto& p : params) buffers_.push_back(Matrix<T>::Zero(p.rows(), p.cols()));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Matrix<T> g = grads[i];
            if (weight_decay_ != 0.0) g += static_cast<T>(weight_decay_) * params[i];
            if (momentum_ != 0.0) {
                buffers_[i] = static_cast<T>(momentum_) * buffers_[i] + g;
                params[i] -= static_cast<T>(lr) * buffers_[i];
            } else {
                params[i] -= static_cast<T>(lr) * g;
            }
        }
    }

  private:
    double momentum_;
    double weight_decay_;
    std::vector<Matrix<T>> buffers_;
};

/// A prepared crop with its ground-truth query.
struct TrainSample {
    Image pixels;
    std::string label;
};

struct TrainLogEntry {
    int stage = 1;
    int epoch = 0;
    long step = 0;
    double lr = 0;
    double lambda = 0;
    double loss_ce = 0;
    double loss_triplet = 0;
    double loss_total = 0;
    double grad_norm_visual = 0;
    double grad_norm_textual = 0;

    bool operator==(const TrainLogEntry&) const = default;
};

inline nlohmann::ordered_json to_json(const TrainLogEntry& e) {
    return {{"stage", e.stage},         {"epoch", e.epoch},
            {"step", e.step},           {"lr", e.lr},
            {"lambda", e.lambda},       {"loss_ce", e.loss_ce},
            {"loss_triplet", e.loss_triplet}, {"loss_total", e.loss_total},
            {"grad_norm_visual", e.grad_norm_visual}, {"grad_norm_textual", e.grad_norm_textual}};
}

/// Append-only training log, optionally mirrored as JSON lines to a stream
/// that is flushed at every epoch boundary.
class TrainLog {
  public:
    explicit TrainLog(std::ostream* sink = nullptr) : sink_(sink) {}

    void append(const TrainLogEntry& e) {
        std::lock_guard lock(mu_);
        entries_.push_back(e);
        if (sink_) *sink_ << to_json(e).dump() << "\n";
    }
    void end_epoch() {
        std::lock_guard lock(mu_);
        if (sink_) sink_->flush();
    }
    std::vector<TrainLogEntry> entries() const {
        std::lock_guard lock(mu_);
        return entries_;
    }

  private:
    mutable std::mutex mu_;
    std::vector<TrainLogEntry> entries_;
    std::ostream* sink_;
};

/// Tokenized label space, built once per run.
struct LabelTokens {
    std::vector<TokenIds> tokens;

    template <typename T>
    static LabelTokens build(const LabelSpace& ls, const ModelState<T>& m) {
        LabelTokens lt;
        for (const auto& l : ls.labels) lt.tokens.push_back(tokenize_text(l, m.vocab, m.config.text.context_length));
        return lt;
    }
};

template <typename T>
std::vector<RowVector<T>> embed_labels(const ModelState<T>& m, const LabelTokens& lt,
                                       std::vector<TowerCache<T>>* caches = nullptr) {
    std::vector<RowVector<T>> out;
    out.reserve(lt.tokens.size());
    if (caches) caches->assign(lt.tokens.size(), TowerCache<T>());
    for (std::size_t n = 0; n < lt.tokens.size(); ++n)
        out.push_back(forward_text(lt.tokens[n], m, caches ? &(*caches)[n] : nullptr));
    return out;
}

/// What one optimizer step differentiates.
struct ObjectiveSpec {
    bool grad_visual = false;
    bool grad_textual = false;
    double lambda = 0.0; // triplet weight; 0 disables mining entirely
};

template <typename T>
struct BatchResult {
    T loss_ce = 0;
    T loss_triplet = 0;
    T loss_total = 0;
    PromptBank<T> grads;             // zero wherever the spec does not differentiate
    std::vector<T> hinge_values;     // d+ - d- + margin per sample, when lambda > 0
    std::vector<std::size_t> mined;  // hardest negative per sample, when lambda > 0
};

/// Mean over the batch of CE(logit_scale * cos(v_i, t_n), y_i) plus
/// lambda times the mean triplet hinge with online hardest negatives, and
/// its gradient with respect to the prompts selected in `spec`.
///
/// `visual_cache` may hold precomputed visual embeddings (one per sample in
/// `batch` order); it is only consulted when visual prompts are not
/// differentiated.
template <typename T>
BatchResult<T> evaluate_batch(const ModelState<T>& m, const std::vector<const Image*>& batch,
                              const std::vector<std::size_t>& targets, const LabelTokens& labels,
                              const ObjectiveSpec& spec, const LossConfig& loss_cfg,
                              const std::vector<RowVector<T>>* visual_cache = nullptr) {
    const std::size_t b = batch.size();
    const std::size_t n = labels.tokens.size();
    if (b == 0 || targets.size() != b) throw ValidationError("evaluate_batch: empty or inconsistent batch");
    if (spec.lambda > 0 && n < 2) throw ValidationError("triplet loss needs at least one negative label");

    BatchResult<T> r;
    r.grads = PromptBank<T>::zeros_like(m.prompts);

    std::vector<TowerCache<T>> text_caches;
    auto text_emb = embed_labels(m, labels, spec.grad_textual ? &text_caches : nullptr);

    std::vector<TowerCache<T>> vis_caches(spec.grad_visual ? b : 0);
    std::vector<RowVector<T>> vis_emb(b);
    for (std::size_t i = 0; i < b; ++i) {
        if (spec.grad_visual) vis_emb[i] = forward_image(*batch[i], m, &vis_caches[i]);
        else if (visual_cache) vis_emb[i] = (*visual_cache)[i];
        else vis_emb[i] = forward_image(*batch[i], m);
    }

    const T scale = m.logit_scale;
    const T inv_b = T(1) / static_cast<T>(b);
    const T lambda = static_cast<T>(spec.lambda);
    const T margin = static_cast<T>(loss_cfg.margin);
    std::vector<RowVector<T>> d_vis(b, RowVector<T>::Zero(vis_emb.front().size()));
    std::vector<RowVector<T>> d_txt(n, RowVector<T>::Zero(vis_emb.front().size()));

    std::vector<T> logits(n);
    std::vector<T> g;
    for (std::size_t i = 0; i < b; ++i) {
        if (targets[i] >= n) throw ValidationError("evaluate_batch: target outside label space");
        for (std::size_t k = 0; k < n; ++k) logits[k] = scale * vis_emb[i].dot(text_emb[k]);
        r.loss_ce += cross_entropy<T>(logits, targets[i], &g) * inv_b;
        for (std::size_t k = 0; k < n; ++k) {
            const T gk = g[k] * scale * inv_b;
            d_vis[i] += gk * text_emb[k];
            d_txt[k] += gk * vis_emb[i];
        }
        if (spec.lambda > 0) {
            const std::size_t neg = hardest_negative(vis_emb[i], text_emb, targets[i]);
            TripletGrad<T> tg;
            const T tl = triplet_loss<T>(vis_emb[i], text_emb[targets[i]], text_emb[neg], margin, &tg);
            r.loss_triplet += tl * inv_b;
            r.hinge_values.push_back((vis_emb[i] - text_emb[targets[i]]).norm() -
                                     (vis_emb[i] - text_emb[neg]).norm() + margin);
            r.mined.push_back(neg);
            d_vis[i] += lambda * inv_b * tg.anchor;
            d_txt[targets[i]] += lambda * inv_b * tg.positive;
            d_txt[neg] += lambda * inv_b * tg.negative;
        }
    }
    r.loss_total = r.loss_ce + lambda * r.loss_triplet;

    if (spec.grad_visual) {
        const int depth = static_cast<int>(m.prompts.visual.size());
        const auto rows = m.prompts.visual.front().rows();
        for (std::size_t i = 0; i < b; ++i) {
            auto gi = m.vision.tower.backward(d_vis[i], vis_caches[i], depth, rows);
            for (int j = 0; j < depth; ++j) r.grads.visual[static_cast<std::size_t>(j)] += gi[static_cast<std::size_t>(j)];
        }
    }
    if (spec.grad_textual) {
        const int depth = static_cast<int>(m.prompts.textual.size());
        const auto rows = m.prompts.textual.front().rows();
        for (std::size_t k = 0; k < n; ++k) {
            if (d_txt[k].isZero(0)) continue;
            auto gk = m.text.tower.backward(d_txt[k], text_caches[k], depth, rows);
            for (int j = 0; j < depth; ++j) r.grads.textual[static_cast<std::size_t>(j)] += gk[static_cast<std::size_t>(j)];
        }
    }
    return r;
}

template <typename T>
double squared_norm(const std::vector<Matrix<T>>& ms) {
    double s = 0;
    for (const auto& m : ms) s += static_cast<double>(m.squaredNorm());
    return s;
}

/// One optimization stage: which prompts move and whether the triplet term
/// is active (ramped by the lambda schedule across the stage).
struct StageSpec {
    int stage = 1;
    int epochs = 0;
    bool train_visual = false;
    bool train_textual = false;
    bool triplet = false;
};

/// Maps every sample's label to its label-space index; labels must be base
/// queries. Fails before any training happens.
inline std::vector<std::size_t> resolve_targets(const std::vector<TrainSample>& data, const LabelSpace& labels) {
    std::vector<std::size_t> out;
    out.reserve(data.size());
    for (const auto& s : data) {
        auto idx = labels.index_of(s.label);
        if (!idx || !labels.is_base[*idx])
            throw ValidationError("training label '" + s.label + "' is not a base query of the label space");
        out.push_back(*idx);
    }
    return out;
}

template <typename T>
ModelState<T> run_stage(ModelState<T> state, const std::vector<TrainSample>& data, const LabelSpace& labels,
                        const TrainConfig& cfg, const LossConfig& loss_cfg, const StageSpec& stage, TrainLog& log) {
    validate(cfg);
    validate(loss_cfg);
    const auto targets = resolve_targets(data, labels);
    if (stage.epochs == 0 || data.empty()) return state;
    if (stage.triplet && labels.size() < 2) throw ValidationError("empty negative pool: label space holds one query");

    const auto lt = LabelTokens::build(labels, state);
    const long per_epoch = (static_cast<long>(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const LrSchedule sched{per_epoch * stage.epochs, std::min<long>(per_epoch * cfg.warmup_epochs, per_epoch * stage.epochs)};
    const long lambda_span = std::max<long>(sched.total_steps - 1, 1);

    std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(stage.stage));
    Sgd<T> vis_opt(cfg.momentum, cfg.weight_decay), txt_opt(cfg.momentum, cfg.weight_decay);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    const ObjectiveSpec base_spec{stage.train_visual, stage.train_textual, 0.0};
    long step = 0;
    for (int epoch = 0; epoch < stage.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);

        // visual parameters cannot change in this stage: embed once per epoch
        std::vector<RowVector<T>> anchors;
        if (!stage.train_visual) {
            anchors.resize(data.size());
            for (std::size_t i = 0; i < data.size(); ++i) anchors[i] = forward_image(data[i].pixels, state);
        }

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++step) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const Image*> batch;
            std::vector<std::size_t> batch_targets;
            std::vector<RowVector<T>> batch_anchors;
            for (std::size_t k = start; k < end; ++k) {
                batch.push_back(&data[order[k]].pixels);
                batch_targets.push_back(targets[order[k]]);
                if (!anchors.empty()) batch_anchors.push_back(anchors[order[k]]);
            }
            ObjectiveSpec spec = base_spec;
            if (stage.triplet) spec.lambda = lambda_at(std::min(step, lambda_span), lambda_span, loss_cfg);
            const double lr = lr_at(step, sched, cfg);

            auto res = evaluate_batch(state, batch, batch_targets, lt, spec, loss_cfg,
                                      anchors.empty() ? nullptr : &batch_anchors);
            if (!std::isfinite(static_cast<double>(res.loss_total))) throw Error("training diverged: non-finite loss");
            if (stage.train_visual) vis_opt.step(state.prompts.visual, res.grads.visual, lr);
            if (stage.train_textual) txt_opt.step(state.prompts.textual, res.grads.textual, lr);

            TrainLogEntry e;
            e.stage = stage.stage;
            e.epoch = epoch;
            e.step = step;
            e.lr = lr;
            e.lambda = spec.lambda;
            e.loss_ce = static_cast<double>(res.loss_ce);
            e.loss_triplet = static_cast<double>(res.loss_triplet);
            e.loss_total = static_cast<double>(res.loss_total);
            e.grad_norm_visual = std::sqrt(squared_norm(res.grads.visual));
            e.grad_norm_textual = std::sqrt(squared_norm(res.grads.textual));
            log.append(e);
        }
        log.end_epoch();
    }
    return state;
}

/// Visual prompts with cross entropy over the label space; everything else
/// stays bitwise identical.
template <typename T>
ModelState<T> stage1_train(ModelState<T> state, const std::vector<TrainSample>& data, const LabelSpace& labels,
                           const TrainConfig& cfg, TrainLog& log) {
    return run_stage(std::move(state), data, labels, cfg, LossConfig{},
                     StageSpec{1, cfg.epochs_stage1, true, false, false}, log);
}

/// Textual prompts with cross entropy plus the lambda-ramped triplet term
/// over mined hardest negatives; visual prompts stay frozen.
template <typename T>
ModelState<T> stage2_train(ModelState<T> state, const std::vector<TrainSample>& data, const LabelSpace& labels,
                           const TrainConfig& cfg, const LossConfig& loss_cfg, TrainLog& log) {
    return run_stage(std::move(state), data, labels, cfg, loss_cfg, StageSpec{2, cfg.epochs_stage2, false, true, true},
                     log);
}

template <typename T>
struct AdaptationResult {
    ModelState<T> state;
    std::vector<TrainLogEntry> log;
};

/// Runs both stages in the order `cfg.stage_mode` selects. `on_stage_end`
/// (if set) sees the state after stage 1.
template <typename T, typename Hook = void (*)(const ModelState<T>&)>
AdaptationResult<T> run_adaptation(ModelState<T> state, const std::vector<TrainSample>& data,
                                   const std::vector<std::string>& base_queries, const NegativeBank& bank,
                                   const TrainConfig& cfg, const LossConfig& loss_cfg, TrainLog& log,
                                   Hook on_stage_end = nullptr) {
    validate(cfg);
    validate(loss_cfg);
    const LabelSpace labels = build_label_space(base_queries, bank);
    resolve_targets(data, labels);

    std::vector<StageSpec> stages;
    switch (cfg.stage_mode) {
    case StageMode::two_stage_v_then_t:
        stages = {{1, cfg.epochs_stage1, true, false, false}, {2, cfg.epochs_stage2, false, true, true}};
        break;
    case StageMode::two_stage_t_then_v:
        stages = {{1, cfg.epochs_stage1, false, true, true}, {2, cfg.epochs_stage2, true, false, false}};
        break;
    case StageMode::v_triplet_then_t_triplet:
        stages = {{1, cfg.epochs_stage1, true, false, true}, {2, cfg.epochs_stage2, false, true, true}};
        break;
    case StageMode::joint:
        stages = {{1, cfg.epochs_stage1 + cfg.epochs_stage2, true, true, true}};
        break;
    }
    for (std::size_t s = 0; s < stages.size(); ++s) {
        state = run_stage(std::move(state), data, labels, cfg, loss_cfg, stages[s], log);
        if (s == 0 && stages.size() > 1) {
            if constexpr (!std::is_same_v<Hook, void (*)(const ModelState<T>&)>) on_stage_end(state);
            else if (on_stage_end) on_stage_end(state);
        }
    }
    return {std::move(state), log.entries()};
}

} // namespace opendas

#pragma once

// Detection metrics: AUC-ROC, AUC-PR (average precision), precision/recall/F1,
// point adjustment and the best-F1 threshold scan.
//
// Conventions: a timestamp is predicted anomalous when score >= threshold;
// undefined ratios are 0; AUC ties earn half credit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedtad/error.hpp"

namespace fedtad {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct PrecisionRecallF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct ThresholdResult {
    double threshold = std::numeric_limits<double>::infinity();
    ConfusionCounts counts;
    PrecisionRecallF1 prf;
};

struct EvaluationResult {
    double auc_roc = 0.0;
    double auc_pr = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double precision_adj = 0.0;
    double recall_adj = 0.0;
    double f1_adj = 0.0;
    double threshold = 0.0;      // best raw-F1 threshold
    double threshold_adj = 0.0;  // best adjusted-F1 threshold
    std::string config_fingerprint;
};

namespace detail {

inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " + std::to_string(b));
    }
}

inline std::int64_t count_positives(std::span<const int> labels) {
    std::int64_t p = 0;
    for (int l : labels) p += (l != 0);
    return p;
}

// Indices sorted by descending score.
inline std::vector<std::size_t> order_desc(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

inline double ratio(std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

// Mann-Whitney formulation with average ranks for ties.
inline double auc_roc(std::span<const double> scores, std::span<const int> labels) {
    detail::require_same_length(scores.size(), labels.size(), "auc_roc");
    const std::int64_t pos = detail::count_positives(labels);
    const std::int64_t neg = static_cast<std::int64_t>(labels.size()) - pos;
    if (pos == 0 || neg == 0) throw UndefinedMetricError("auc_roc needs both classes");

    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            if (labels[idx[k]] != 0) rank_sum += avg_rank;
        i = j + 1;
    }
    const double p = static_cast<double>(pos);
    const double n = static_cast<double>(neg);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

// Average precision: sum over distinct thresholds (descending) of
// (R_k - R_{k-1}) * P_k.
inline double auc_pr(std::span<const double> scores, std::span<const int> labels) {
    detail::require_same_length(scores.size(), labels.size(), "auc_pr");
    const std::int64_t pos = detail::count_positives(labels);
    if (pos == 0) throw UndefinedMetricError("auc_pr needs at least one positive");

    const auto idx = detail::order_desc(scores);
    std::int64_t tp = 0, fp = 0;
    double prev_recall = 0.0;
    double ap = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            if (labels[idx[j]] != 0) {
                ++tp;
            } else {
                ++fp;
            }
            ++j;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

inline ConfusionCounts confusion(std::span<const int> preds, std::span<const int> labels) {
    detail::require_same_length(preds.size(), labels.size(), "confusion");
    ConfusionCounts c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool p = preds[i] != 0;
        const bool l = labels[i] != 0;
        if (p && l) {
            ++c.tp;
        } else if (p) {
            ++c.fp;
        } else if (l) {
            ++c.fn;
        } else {
            ++c.tn;
        }
    }
    return c;
}

inline PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c) {
    PrecisionRecallF1 r;
    r.precision = detail::ratio(c.tp, c.tp + c.fp);
    r.recall = detail::ratio(c.tp, c.tp + c.fn);
    // Harmonic mean of P and R, evaluated as 2tp / (2tp + fp + fn) so the
    // result is the correctly rounded rational.
    r.f1 = detail::ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    return r;
}

// Any hit inside a maximal run of anomalous labels marks the whole run.
inline std::vector<int> point_adjust(std::span<const int> preds, std::span<const int> labels) {
    detail::require_same_length(preds.size(), labels.size(), "point_adjust");
    std::vector<int> out(preds.begin(), preds.end());
    std::size_t i = 0;
    while (i < labels.size()) {
        if (labels[i] == 0) {
            ++i;
            continue;
        }
        std::size_t j = i;
        bool hit = false;
        while (j < labels.size() && labels[j] != 0) {
            hit = hit || preds[j] != 0;
            ++j;
        }
        if (hit) std::fill(out.begin() + static_cast<std::ptrdiff_t>(i), out.begin() + static_cast<std::ptrdiff_t>(j), 1);
        i = j;
    }
    return out;
}

inline std::vector<int> threshold_predictions(std::span<const double> scores, double threshold) {
    std::vector<int> p(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) p[i] = scores[i] >= threshold ? 1 : 0;
    return p;
}

struct ScoredChunk {
    std::span<const double> scores;
    std::span<const int> labels;
};

namespace detail {

// Core of the threshold scan over one or more independently labelled chunks.
// Label runs never continue across a chunk boundary.
inline ThresholdResult best_f1_chunks(std::span<const ScoredChunk> chunks, bool adjusted) {
    struct Event {
        double score;
        std::int64_t tp_gain;
        std::int64_t fp_gain;
    };
    std::vector<Event> events;
    std::vector<double> candidates;
    std::int64_t pos = 0;
    std::int64_t n = 0;
    for (const auto& ch : chunks) {
        require_same_length(ch.scores.size(), ch.labels.size(), "best_f1_threshold");
        pos += count_positives(ch.labels);
        n += static_cast<std::int64_t>(ch.labels.size());
        candidates.insert(candidates.end(), ch.scores.begin(), ch.scores.end());
        std::size_t i = 0;
        while (i < ch.labels.size()) {
            if (ch.labels[i] == 0) {
                events.push_back({ch.scores[i], 0, 1});
                ++i;
                continue;
            }
            std::size_t j = i;
            double seg_max = -std::numeric_limits<double>::infinity();
            while (j < ch.labels.size() && ch.labels[j] != 0) {
                if (!adjusted) events.push_back({ch.scores[j], 1, 0});
                seg_max = std::max(seg_max, ch.scores[j]);
                ++j;
            }
            if (adjusted) events.push_back({seg_max, static_cast<std::int64_t>(j - i), 0});
            i = j;
        }
    }
    if (pos == 0 || pos == n) throw UndefinedMetricError("best_f1_threshold needs both classes");
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.score > b.score; });
    std::sort(candidates.begin(), candidates.end(), std::greater<>());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    // Threshold +inf predicts nothing.
    ThresholdResult best;
    best.counts = ConfusionCounts{0, 0, pos, n - pos};
    best.prf = precision_recall_f1(best.counts);

    // F1 = 2tp / (2tp + fp + fn); compared by cross-multiplication so equal
    // F1 values tie exactly.
    auto better = [](const ConfusionCounts& a, const ConfusionCounts& b) {
        const __int128 lhs = static_cast<__int128>(a.tp) * (2 * b.tp + b.fp + b.fn);
        const __int128 rhs = static_cast<__int128>(b.tp) * (2 * a.tp + a.fp + a.fn);
        return lhs > rhs;
    };

    std::int64_t tp = 0, fp = 0;
    std::size_t k = 0;
    for (double theta : candidates) {
        while (k < events.size() && events[k].score >= theta) {
            tp += events[k].tp_gain;
            fp += events[k].fp_gain;
            ++k;
        }
        ConfusionCounts c{tp, fp, pos - tp, (n - pos) - fp};
        if (better(c, best.counts)) {
            best.threshold = theta;
            best.counts = c;
            best.prf = precision_recall_f1(c);
        }
    }
    return best;
}

}  // namespace detail

// Scans every distinct score (and +inf) as a threshold and keeps the highest
// F1, preferring the larger threshold on ties. With `adjusted`, predictions are
// point-adjusted before counting.
//
// Runs in O(n log n): a label segment is fully detected exactly when the
// threshold is at or below the segment's maximum score, so adjusted counts can
// be swept like raw ones.
inline ThresholdResult best_f1_threshold(std::span<const double> scores, std::span<const int> labels,
                                         bool adjusted) {
    const ScoredChunk chunk{scores, labels};
    return detail::best_f1_chunks(std::span<const ScoredChunk>(&chunk, 1), adjusted);
}

// All metrics over several entities at once: AUCs on the pooled scores, F1
// scans with point adjustment confined to each entity.
inline EvaluationResult evaluate(std::span<const ScoredChunk> chunks) {
    std::vector<double> all_scores;
    std::vector<int> all_labels;
    for (const auto& ch : chunks) {
        detail::require_same_length(ch.scores.size(), ch.labels.size(), "evaluate");
        all_scores.insert(all_scores.end(), ch.scores.begin(), ch.scores.end());
        all_labels.insert(all_labels.end(), ch.labels.begin(), ch.labels.end());
    }
    EvaluationResult r;
    r.auc_roc = auc_roc(all_scores, all_labels);
    r.auc_pr = auc_pr(all_scores, all_labels);
    const auto raw = detail::best_f1_chunks(chunks, false);
    const auto adj = detail::best_f1_chunks(chunks, true);
    r.precision = raw.prf.precision;
    r.recall = raw.prf.recall;
    r.f1 = raw.prf.f1;
    r.threshold = raw.threshold;
    r.precision_adj = adj.prf.precision;
    r.recall_adj = adj.prf.recall;
    r.f1_adj = adj.prf.f1;
    r.threshold_adj = adj.threshold;
    return r;
}

inline EvaluationResult evaluate(std::span<const double> scores, std::span<const int> labels) {
    const ScoredChunk chunk{scores, labels};
    return evaluate(std::span<const ScoredChunk>(&chunk, 1));
}

// Field-wise mean, used for averaging per-client results of isolated runs.
inline EvaluationResult mean_result(std::span<const EvaluationResult> results) {
    EvaluationResult m;
    if (results.empty()) return m;
    const double inv = 1.0 / static_cast<double>(results.size());
    for (const auto& r : results) {
        m.auc_roc += r.auc_roc * inv;
        m.auc_pr += r.auc_pr * inv;
        m.precision += r.precision * inv;
        m.recall += r.recall * inv;
        m.f1 += r.f1 * inv;
        m.precision_adj += r.precision_adj * inv;
        m.recall_adj += r.recall_adj * inv;
        m.f1_adj += r.f1_adj * inv;
        m.threshold += r.threshold * inv;
        m.threshold_adj += r.threshold_adj * inv;
    }
    return m;
}

}  // namespace fedtad

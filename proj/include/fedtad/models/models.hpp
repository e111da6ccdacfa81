#pragma once

#include "fedtad/models/deep_svdd.hpp"
#include "fedtad/models/detector.hpp"
#include "fedtad/models/gdn.hpp"
#include "fedtad/models/lstm_ae.hpp"
#include "fedtad/models/tranad.hpp"
#include "fedtad/models/usad.hpp"

namespace fedtad {

inline const Detector& detector_for(ModelKind kind) {
    static const DeepSvddDetector deep_svdd;
    static const LstmAeDetector lstm_ae;
    static const UsadDetector usad;
    static const GdnDetector gdn;
    static const TranAdDetector tranad;
    switch (kind) {
        case ModelKind::DeepSVDD: return deep_svdd;
        case ModelKind::LstmAE: return lstm_ae;
        case ModelKind::USAD: return usad;
        case ModelKind::GDN: return gdn;
        case ModelKind::TranAD: return tranad;
    }
    throw ConfigError("unknown model kind");
}

// Mean of a detector's data statistic over all windows (computed in batches)
// together with the window count, or nullopt for detectors without one.
inline std::optional<std::pair<Matrix, std::size_t>> windowed_statistic(const Detector& det,
                                                                        const ParameterSet& params,
                                                                        const ModelConfig& cfg,
                                                                        const WindowSet& windows) {
    if (windows.empty()) return std::nullopt;
    std::optional<Matrix> acc;
    std::vector<std::size_t> idx;
    const std::size_t bs = 1024;
    for (std::size_t start = 0; start < windows.size(); start += bs) {
        const std::size_t end = std::min(windows.size(), start + bs);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        auto part = det.data_statistic(params, cfg, windows.batch(idx));
        if (!part) return std::nullopt;
        Matrix weighted = *part * static_cast<double>(end - start);
        acc = acc ? Matrix(*acc + weighted) : weighted;
    }
    return std::make_pair(Matrix(*acc / static_cast<double>(windows.size())), windows.size());
}

// Seeded initialization. When training windows are supplied, detectors with
// a data-dependent statistic (DeepSVDD's center) compute it from them.
inline ParameterSet init_model(const ModelConfig& cfg, std::uint64_t seed, const WindowSet* train = nullptr) {
    cfg.validate();
    const Detector& det = detector_for(cfg.kind);
    Rng rng(seed, "model.init");
    ParameterSet params = det.init(cfg, rng);
    if (train != nullptr && !train->empty()) {
        if (auto stat = windowed_statistic(det, params, cfg, *train)) det.apply_statistic(params, stat->first);
    }
    return params;
}

// Per-timestamp scores for a whole test matrix: one per window anchor, with
// the leading window_len-1 timestamps taking the first window's score.
inline std::vector<double> score_series(const ParameterSet& params, const ModelConfig& cfg, const Matrix& test) {
    const Detector& det = detector_for(cfg.kind);
    WindowSet windows = make_test_windows(test, cfg.window_len);
    const Vector ws = score_windows(det, params, cfg, windows);
    std::vector<double> scores(ws.data(), ws.data() + ws.size());
    for (auto& s : scores) {
        if (!std::isfinite(s)) throw DivergenceError("non-finite anomaly score", -1);
        s = std::max(s, 0.0);
    }
    const auto anchors = windows.anchors();
    return expand_scores(scores, anchors, test.rows());
}

}  // namespace fedtad

#pragma once

// Central-difference checks of detector losses on tiny configurations.

#include "fedtad/federation.hpp"
#include "fedtad/models/models.hpp"
#include "oracles.hpp"

namespace gradcheck {

using namespace fedtad;

inline ModelConfig tiny(ModelKind kind) {
    ModelConfig c;
    c.kind = kind;
    c.input_dims = 3;
    c.window_len = 4;
    c.hidden_size = 5;
    c.latent_size = 4;
    c.gdn_top_k = 2;
    c.tranad_heads = 2;
    return c;
}

inline ParameterSet jittered(const ModelConfig& cfg, std::uint64_t seed) {
    ParameterSet p = init_model(cfg, seed);
    Rng rng(seed, "jitter");
    for (std::size_t e = 0; e < p.size(); ++e)
        for (Index k = 0; k < p[e].value.size(); ++k) p[e].value.data()[k] += 0.1 * rng.normal();
    return p;
}

inline Matrix random_batch(Rng& rng, Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
    return m;
}

// Worst relative error over `points` random (parameters, batch) draws, every
// phase, with and without a penalty.
inline double worst_gradient_error(ModelKind kind, int points, const PenaltyFn& penalty = {}) {
    const ModelConfig cfg = tiny(kind);
    const Detector& det = detector_for(kind);
    double worst = 0.0;
    for (int pt = 0; pt < points; ++pt) {
        Rng rng(1000 + static_cast<std::uint64_t>(pt));
        // Off the initialization so biases and offsets are non-zero.
        ParameterSet params = jittered(cfg, 77 + static_cast<std::uint64_t>(pt));
        const Matrix batch = random_batch(rng, 3, cfg.flat_width());
        const int epoch = 1 + pt % 4;
        for (int phase = 0; phase < det.phases(); ++phase) {
            auto [value, analytic] = loss_and_gradient(det, params, cfg, batch, phase, epoch, penalty);
            auto f = [&](const ParameterSet& p) {
                return loss_and_gradient(det, p, cfg, batch, phase, epoch, penalty).first;
            };
            const ParameterSet numeric = oracle::numeric_gradient(params, f);
            worst = std::max(worst, oracle::max_relative_error(analytic, numeric));
        }
    }
    return worst;
}

}  // namespace gradcheck

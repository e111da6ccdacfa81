#pragma once

// Common detector interface and the shared training loop.
//
// A detector is stateless: everything it learns lives in a ParameterSet it
// creates in init(). Training losses are built on an autodiff tape, so the
// same forward code serves training, scoring and gradient checking.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedtad/autodiff.hpp"
#include "fedtad/dataset.hpp"
#include "fedtad/error.hpp"
#include "fedtad/parameter_set.hpp"
#include "fedtad/rng.hpp"

namespace fedtad {

enum class ModelKind { DeepSVDD, LstmAE, USAD, GDN, TranAD };

inline constexpr std::array<ModelKind, 5> kAllModels{ModelKind::DeepSVDD, ModelKind::LstmAE, ModelKind::USAD,
                                                     ModelKind::GDN, ModelKind::TranAD};

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::DeepSVDD: return "DeepSVDD";
        case ModelKind::LstmAE: return "LSTM-AE";
        case ModelKind::USAD: return "USAD";
        case ModelKind::GDN: return "GDN";
        case ModelKind::TranAD: return "TranAD";
    }
    return "?";
}

inline std::string cli_name(ModelKind k) {
    switch (k) {
        case ModelKind::DeepSVDD: return "deepsvdd";
        case ModelKind::LstmAE: return "lstmae";
        case ModelKind::USAD: return "usad";
        case ModelKind::GDN: return "gdn";
        case ModelKind::TranAD: return "tranad";
    }
    return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
    for (auto k : kAllModels)
        if (s == cli_name(k) || s == to_string(k)) return k;
    if (s == "lstm_ae" || s == "LSTM_AE") return ModelKind::LstmAE;
    throw ConfigError("unknown model: " + std::string(s));
}

struct ModelConfig {
    ModelKind kind = ModelKind::USAD;
    int input_dims = 1;
    int window_len = 10;
    int hidden_size = 64;
    int latent_size = 32;

    double learning_rate = 1e-3;
    int batch_size = 128;

    // USAD anomaly score weights.
    double usad_alpha = 0.1;
    double usad_beta = 0.9;
    // GDN neighbourhood size.
    int gdn_top_k = 5;
    // TranAD attention heads.
    int tranad_heads = 2;

    void validate() const {
        if (input_dims < 1) throw ConfigError("input_dims must be >= 1");
        if (window_len < 2) throw ConfigError("window_len must be >= 2");
        if (hidden_size < 1 || latent_size < 1) throw ConfigError("hidden_size and latent_size must be >= 1");
        if (latent_size >= window_len * input_dims)
            throw ConfigError("latent_size must be smaller than window_len * input_dims");
        if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (usad_alpha < 0.0 || usad_alpha > 1.0 || usad_beta < 0.0 || usad_beta > 1.0)
            throw ConfigError("USAD score weights must lie in [0, 1]");
        if (gdn_top_k < 1) throw ConfigError("gdn_top_k must be >= 1");
        if (tranad_heads < 1 || latent_size % tranad_heads != 0)
            throw ConfigError("latent_size must be divisible by tranad_heads");
    }

    Index flat_width() const { return static_cast<Index>(window_len) * input_dims; }
};

// Additional loss terms supplied by a federated strategy. Returns a scalar
// Var added to the base loss, or an invalid Var for "no penalty".
using PenaltyFn = std::function<ad::Var(ad::Tape&, const BoundParams&, const Matrix& batch)>;

// In-place rewrite of a gradient before the optimizer consumes it.
using GradientCorrectionFn = std::function<void(ParameterSet& grad)>;

class Detector {
public:
    virtual ~Detector() = default;

    virtual ModelKind kind() const = 0;

    // Fresh parameters. Non-trainable entries carry model state such as a
    // hypersphere center or score calibration.
    virtual ParameterSet init(const ModelConfig& cfg, Rng& rng) const = 0;

    // Number of optimizer phases per batch (adversarial models use two).
    virtual int phases() const { return 1; }

    // Whether `phase` updates the named entry.
    virtual bool trains(int /*phase*/, std::string_view /*name*/) const { return true; }

    // Base training loss for one phase; `epoch` is the 1-based count of
    // training epochs seen so far, used by epoch-weighted objectives.
    virtual ad::Var loss(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg, const Matrix& batch,
                         int phase, int epoch) const = 0;

    // Representation rows (batch x latent) compared by model-contrastive
    // training.
    virtual ad::Var representation(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                                   const Matrix& batch) const = 0;

    // One anomaly score per window (higher is more anomalous).
    virtual Vector window_scores(const ParameterSet& params, const ModelConfig& cfg, const Matrix& batch) const = 0;

    // Data-dependent initialization. Detectors that need one return the
    // per-client statistic (already a mean over `batch`); the caller combines
    // means weighted by window counts and hands the result to
    // apply_statistic.
    virtual std::optional<Matrix> data_statistic(const ParameterSet&, const ModelConfig&, const Matrix&) const {
        return std::nullopt;
    }
    virtual void apply_statistic(ParameterSet&, const Matrix&) const {}

    // Post-training calibration of score normalization on held training data.
    virtual void calibrate(ParameterSet&, const ModelConfig&, const Matrix&) const {}
};

// ---------------------------------------------------------------------------
// Layer helpers
// ---------------------------------------------------------------------------

inline Matrix glorot(Rng& rng, Index rows, Index cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-a, a);
    return m;
}

inline void add_dense(ParameterSet& p, Rng& rng, const std::string& prefix, Index in, Index out, bool bias = true) {
    p.add(prefix + ".w", glorot(rng, in, out));
    if (bias) p.add(prefix + ".b", Matrix::Zero(1, out));
}

inline ad::Var dense(const BoundParams& p, const std::string& prefix, ad::Var x) {
    return ad::add_row(ad::matmul(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

inline ad::Var dense_nobias(const BoundParams& p, const std::string& prefix, ad::Var x) {
    return ad::matmul(x, p[prefix + ".w"]);
}

// (B x w*n) timestep-major rows -> (B*w x n), row b*w + t holds step t of
// sample b.
inline Matrix unfold_steps(const Matrix& flat, Index window_len, Index dims) {
    Matrix out(flat.rows() * window_len, dims);
    for (Index b = 0; b < flat.rows(); ++b)
        for (Index t = 0; t < window_len; ++t) out.row(b * window_len + t) = flat.row(b).segment(t * dims, dims);
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

// Adaptive moment estimation with per-entry step counters, so entries updated
// by several phases per batch keep their own bias correction.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    ParameterSet m;
    ParameterSet v;
    std::vector<long> steps;

    bool initialized() const { return !steps.empty(); }

    void reset(const ParameterSet& like) {
        m = like.zeros_like();
        v = like.zeros_like();
        steps.assign(like.size(), 0);
    }

    friend bool operator==(const AdamState& a, const AdamState& b) {
        return a.m == b.m && a.v == b.v && a.steps == b.steps;
    }
};

// Updates trainable entries selected by `mask` (all when empty).
inline void adam_step(ParameterSet& params, const ParameterSet& grad, AdamState& st, double lr,
                      const std::vector<bool>& mask = {}) {
    if (!st.initialized()) st.reset(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable) continue;
        if (!mask.empty() && !mask[i]) continue;
        const long t = ++st.steps[i];
        Matrix& m = st.m[i].value;
        Matrix& v = st.v[i].value;
        const Matrix& g = grad[i].value;
        m = st.beta1 * m + (1.0 - st.beta1) * g;
        v = st.beta2 * v + (1.0 - st.beta2) * g.cwiseProduct(g);
        const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(t));
        const double step = lr / bc1;
        const double inv_bc2 = 1.0 / bc2;
        params[i].value.array() -=
            step * m.array() / ((v.array() * inv_bc2).sqrt() + st.eps);
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochContext {
    int epoch = 1;                  // 1-based count of epochs trained so far, including this one
    std::uint64_t shuffle_seed = 0;  // seeds this epoch's window order
};

struct TrainHooks {
    PenaltyFn penalty;
    GradientCorrectionFn correction;
};

struct EpochResult {
    double mean_loss = 0.0;
    long batches = 0;  // optimizer steps taken (one per batch)
};

// Evaluates one phase's loss (plus optional penalty) and its gradient.
inline std::pair<double, ParameterSet> loss_and_gradient(const Detector& det, const ParameterSet& params,
                                                          const ModelConfig& cfg, const Matrix& batch, int phase,
                                                          int epoch, const PenaltyFn& penalty = {}) {
    ad::Tape tape;
    BoundParams bound(tape, params);
    ad::Var total = det.loss(tape, bound, cfg, batch, phase, epoch);
    if (penalty) {
        ad::Var extra = penalty(tape, bound, batch);
        if (extra.valid()) total = ad::add(total, extra);
    }
    tape.backward(total);
    return {total.scalar(), bound.gradients()};
}

inline std::vector<bool> phase_mask(const Detector& det, const ParameterSet& params, int phase) {
    std::vector<bool> mask(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) mask[i] = det.trains(phase, params[i].name);
    return mask;
}

// One pass over `windows` in a seeded random order.
inline EpochResult local_train_epoch(const Detector& det, ParameterSet& params, const ModelConfig& cfg,
                                     const WindowSet& windows, AdamState& opt, const EpochContext& ctx,
                                     const TrainHooks& hooks = {}) {
    EpochResult result;
    if (windows.empty()) return result;
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(ctx.shuffle_seed);
    rng.shuffle(order);

    std::vector<std::vector<bool>> masks;
    for (int ph = 0; ph < det.phases(); ++ph) masks.push_back(phase_mask(det, params, ph));

    double loss_sum = 0.0;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t end = std::min(order.size(), start + bs);
        const Matrix batch = windows.batch(std::span<const std::size_t>(order.data() + start, end - start));
        double batch_loss = 0.0;
        for (int ph = 0; ph < det.phases(); ++ph) {
            auto [value, grad] = loss_and_gradient(det, params, cfg, batch, ph, ctx.epoch, hooks.penalty);
            if (!std::isfinite(value) || !grad.all_finite()) {
                throw DivergenceError("non-finite loss in " + to_string(det.kind()) + " at batch " +
                                          std::to_string(result.batches),
                                      result.batches);
            }
            if (hooks.correction) hooks.correction(grad);
            adam_step(params, grad, opt, cfg.learning_rate, masks[ph]);
            batch_loss += value;
        }
        loss_sum += batch_loss;
        ++result.batches;
    }
    result.mean_loss = loss_sum / static_cast<double>(result.batches);
    return result;
}

// Scores every window of `windows`, in batches.
inline Vector score_windows(const Detector& det, const ParameterSet& params, const ModelConfig& cfg,
                            const WindowSet& windows) {
    Vector out(static_cast<Index>(windows.size()));
    const std::size_t bs = static_cast<std::size_t>(std::max(cfg.batch_size, 256));
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < windows.size(); start += bs) {
        const std::size_t end = std::min(windows.size(), start + bs);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        out.segment(static_cast<Index>(start), static_cast<Index>(end - start)) =
            det.window_scores(params, cfg, windows.batch(idx));
    }
    return out;
}

inline Matrix extract_representation(const Detector& det, const ParameterSet& params, const ModelConfig& cfg,
                                     const Matrix& batch) {
    ad::Tape tape;
    BoundParams bound(tape, params);
    return det.representation(tape, bound, cfg, batch).value();
}

}  // namespace fedtad

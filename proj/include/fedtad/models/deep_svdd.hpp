#pragma once

#include "fedtad/models/detector.hpp"

namespace fedtad {

// One-class hypersphere model: a two-layer encoder of the flattened window
// pulled towards a fixed center c. The final layer has no bias, otherwise
// the encoder could map everything onto c trivially.
class DeepSvddDetector final : public Detector {
public:
    ModelKind kind() const override { return ModelKind::DeepSVDD; }

    ParameterSet init(const ModelConfig& cfg, Rng& rng) const override {
        ParameterSet p;
        add_dense(p, rng, "enc.l1", cfg.flat_width(), cfg.hidden_size);
        add_dense(p, rng, "enc.l2", cfg.hidden_size, cfg.latent_size, /*bias=*/false);
        p.add("center", Matrix::Zero(1, cfg.latent_size), /*trainable=*/false);
        return p;
    }

    static ad::Var encode(ad::Tape& tape, const BoundParams& p, const Matrix& batch) {
        ad::Var x = tape.constant(batch);
        ad::Var h = ad::leaky_relu(dense(p, "enc.l1", x), 0.01);
        return dense_nobias(p, "enc.l2", h);
    }

    // Squared distance of each latent row to the center, (B x 1).
    static ad::Var squared_distance(ad::Tape& tape, const BoundParams& p, const Matrix& batch) {
        ad::Var z = encode(tape, p, batch);
        return ad::row_sum(ad::square(ad::add_row(z, ad::neg(p["center"]))));
    }

    ad::Var loss(ad::Tape& tape, const BoundParams& p, const ModelConfig&, const Matrix& batch, int,
                 int) const override {
        return ad::mean(squared_distance(tape, p, batch));
    }

    ad::Var representation(ad::Tape& tape, const BoundParams& p, const ModelConfig&,
                           const Matrix& batch) const override {
        return encode(tape, p, batch);
    }

    Vector window_scores(const ParameterSet& params, const ModelConfig&, const Matrix& batch) const override {
        ad::Tape tape;
        BoundParams p(tape, params);
        return squared_distance(tape, p, batch).value().col(0).cwiseSqrt();
    }

    std::optional<Matrix> data_statistic(const ParameterSet& params, const ModelConfig&,
                                         const Matrix& batch) const override {
        ad::Tape tape;
        BoundParams p(tape, params);
        return Matrix(encode(tape, p, batch).value().colwise().mean());
    }

    void apply_statistic(ParameterSet& params, const Matrix& center) const override {
        params.at("center") = center;
    }
};

}  // namespace fedtad

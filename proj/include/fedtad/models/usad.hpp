#pragma once

#include "fedtad/models/detector.hpp"

namespace fedtad {

// Two autoencoders sharing one encoder E, with decoders D1 and D2, trained
// adversarially. With W a flattened window and e the epoch:
//
//   AE1(W) = D1(E(W)),  AE2(W) = D2(E(W)),  AE2(AE1(W)) = D2(E(D1(E(W))))
//   L1 = (1/e)·|W - AE1(W)|² + (1 - 1/e)·|W - AE2(AE1(W))|²   (trains E, D1)
//   L2 = (1/e)·|W - AE2(W)|² - (1 - 1/e)·|W - AE2(AE1(W))|²   (trains E, D2)
//
// where |·|² is the mean squared error. Scores are
// alpha·|W - AE1(W)|² + beta·|W - AE2(AE1(W))|² per window.
class UsadDetector final : public Detector {
public:
    ModelKind kind() const override { return ModelKind::USAD; }

    ParameterSet init(const ModelConfig& cfg, Rng& rng) const override {
        ParameterSet p;
        const Index in = cfg.flat_width();
        add_dense(p, rng, "enc.l1", in, cfg.hidden_size);
        add_dense(p, rng, "enc.l2", cfg.hidden_size, cfg.latent_size);
        for (const char* d : {"dec1", "dec2"}) {
            add_dense(p, rng, std::string(d) + ".l1", cfg.latent_size, cfg.hidden_size);
            add_dense(p, rng, std::string(d) + ".l2", cfg.hidden_size, in);
        }
        return p;
    }

    int phases() const override { return 2; }

    bool trains(int phase, std::string_view name) const override {
        if (name.starts_with("enc.")) return true;
        return phase == 0 ? name.starts_with("dec1.") : name.starts_with("dec2.");
    }

    // Convex weights of the epoch-e objectives; they sum to one.
    static std::pair<double, double> epoch_weights(int epoch) {
        const double a = 1.0 / static_cast<double>(std::max(epoch, 1));
        return {a, 1.0 - a};
    }

    static ad::Var encode(const BoundParams& p, ad::Var x) {
        return dense(p, "enc.l2", ad::relu(dense(p, "enc.l1", x)));
    }

    static ad::Var decode(const BoundParams& p, const std::string& which, ad::Var z) {
        return ad::sigmoid(dense(p, which + ".l2", ad::relu(dense(p, which + ".l1", z))));
    }

    ad::Var loss(ad::Tape& tape, const BoundParams& p, const ModelConfig&, const Matrix& batch, int phase,
                 int epoch) const override {
        const auto [first, second] = epoch_weights(epoch);
        ad::Var w = tape.constant(batch);
        ad::Var z = encode(p, w);
        ad::Var w1 = decode(p, "dec1", z);
        ad::Var w3 = decode(p, "dec2", encode(p, w1));
        if (phase == 0) return ad::add(ad::scale(ad::mse(w, w1), first), ad::scale(ad::mse(w, w3), second));
        ad::Var w2 = decode(p, "dec2", z);
        return ad::sub(ad::scale(ad::mse(w, w2), first), ad::scale(ad::mse(w, w3), second));
    }

    ad::Var representation(ad::Tape& tape, const BoundParams& p, const ModelConfig&,
                           const Matrix& batch) const override {
        return encode(p, tape.constant(batch));
    }

    Vector window_scores(const ParameterSet& params, const ModelConfig& cfg, const Matrix& batch) const override {
        ad::Tape tape;
        BoundParams p(tape, params);
        ad::Var w = tape.constant(batch);
        ad::Var w1 = decode(p, "dec1", encode(p, w));
        ad::Var w3 = decode(p, "dec2", encode(p, w1));
        const Vector e1 = (batch - w1.value()).array().square().rowwise().mean();
        const Vector e3 = (batch - w3.value()).array().square().rowwise().mean();
        return cfg.usad_alpha * e1 + cfg.usad_beta * e3;
    }
};

}  // namespace fedtad

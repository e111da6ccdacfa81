#pragma once

#include "fedtad/models/detector.hpp"

namespace fedtad {

// Sequence autoencoder: an LSTM encoder whose final hidden state (size
// latent_size) is fed at every step to an LSTM decoder (size hidden_size)
// followed by a linear read-out.
class LstmAeDetector final : public Detector {
public:
    ModelKind kind() const override { return ModelKind::LstmAE; }

    ParameterSet init(const ModelConfig& cfg, Rng& rng) const override {
        ParameterSet p;
        add_lstm(p, rng, "enc", cfg.input_dims, cfg.latent_size);
        add_lstm(p, rng, "dec", cfg.latent_size, cfg.hidden_size);
        add_dense(p, rng, "out", cfg.hidden_size, cfg.input_dims);
        return p;
    }

    // Final encoder hidden state, (B x latent).
    static ad::Var encode(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg, const Matrix& batch) {
        const Index n = cfg.input_dims;
        const Index hs = cfg.latent_size;
        ad::Var h = tape.constant(Matrix::Zero(batch.rows(), hs));
        ad::Var c = h;
        for (Index t = 0; t < cfg.window_len; ++t) {
            ad::Var x = tape.constant(batch.middleCols(t * n, n));
            std::tie(h, c) = lstm_step(p, "enc", x, h, c, hs);
        }
        return h;
    }

    // Reconstruction per step, each (B x n).
    static std::vector<ad::Var> decode(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg, ad::Var z) {
        const Index hs = cfg.hidden_size;
        ad::Var h = tape.constant(Matrix::Zero(z.rows(), hs));
        ad::Var c = h;
        std::vector<ad::Var> out;
        out.reserve(static_cast<std::size_t>(cfg.window_len));
        for (Index t = 0; t < cfg.window_len; ++t) {
            std::tie(h, c) = lstm_step(p, "dec", z, h, c, hs);
            out.push_back(dense(p, "out", h));
        }
        return out;
    }

    ad::Var loss(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg, const Matrix& batch, int,
                 int) const override {
        auto recon = decode(tape, p, cfg, encode(tape, p, cfg, batch));
        ad::Var target = tape.constant(batch);
        return ad::mse(ad::hcat(std::span<const ad::Var>(recon)), target);
    }

    ad::Var representation(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                           const Matrix& batch) const override {
        return encode(tape, p, cfg, batch);
    }

    // Mean squared reconstruction error of the last step.
    Vector window_scores(const ParameterSet& params, const ModelConfig& cfg, const Matrix& batch) const override {
        ad::Tape tape;
        BoundParams p(tape, params);
        auto recon = decode(tape, p, cfg, encode(tape, p, cfg, batch));
        const Index n = cfg.input_dims;
        const Matrix diff = recon.back().value() - batch.middleCols((cfg.window_len - 1) * n, n);
        return diff.array().square().rowwise().mean();
    }

private:
    static void add_lstm(ParameterSet& p, Rng& rng, const std::string& prefix, Index in, Index hidden) {
        p.add(prefix + ".wx", glorot(rng, in, 4 * hidden));
        p.add(prefix + ".wh", glorot(rng, hidden, 4 * hidden));
        Matrix b = Matrix::Zero(1, 4 * hidden);
        b.middleCols(hidden, hidden).setOnes();  // forget gate starts open
        p.add(prefix + ".b", std::move(b));
    }

    // Gate layout along columns: input, forget, cell, output.
    static std::pair<ad::Var, ad::Var> lstm_step(const BoundParams& p, const std::string& prefix, ad::Var x,
                                                 ad::Var h, ad::Var c, Index hs) {
        ad::Var z = ad::add_row(ad::add(ad::matmul(x, p[prefix + ".wx"]), ad::matmul(h, p[prefix + ".wh"])),
                                p[prefix + ".b"]);
        ad::Var i = ad::sigmoid(ad::cols(z, 0, hs));
        ad::Var f = ad::sigmoid(ad::cols(z, hs, hs));
        ad::Var g = ad::tanh(ad::cols(z, 2 * hs, hs));
        ad::Var o = ad::sigmoid(ad::cols(z, 3 * hs, hs));
        ad::Var c_next = ad::add(ad::hadamard(f, c), ad::hadamard(i, g));
        ad::Var h_next = ad::hadamard(o, ad::tanh(c_next));
        return {h_next, c_next};
    }
};

}  // namespace fedtad

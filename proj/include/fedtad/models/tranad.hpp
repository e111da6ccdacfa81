#pragma once

#include <cmath>

#include "fedtad/models/detector.hpp"

namespace fedtad {

// Self-conditioned transformer reconstruction. One encoder layer reads the
// window concatenated with a focus score F; two decoders D1, D2 query the
// encoder memory through cross-attention from learned positional queries.
//
//   phase 1: F = 0          -> O1 = D1(enc(W, 0)),  O2 = D2(enc(W, 0))
//   phase 2: F = (O1 - W)²  -> Ô2 = D2(enc(W, F))
//   L1 = (1/e)·|O1 - W|² + (1 - 1/e)·|Ô2 - W|²   (trains encoder, D1)
//   L2 = (1/e)·|O2 - W|² - (1 - 1/e)·|Ô2 - W|²   (trains encoder, D2)
//
// Sequences of the batch are stacked as (B*w x ·) matrices; attention runs
// per w-row block. Layer normalization is omitted.
class TranAdDetector final : public Detector {
public:
    ModelKind kind() const override { return ModelKind::TranAD; }

    ParameterSet init(const ModelConfig& cfg, Rng& rng) const override {
        const Index n = cfg.input_dims;
        const Index d = cfg.latent_size;
        const Index ff = cfg.hidden_size;
        ParameterSet p;
        add_dense(p, rng, "in", 2 * n, d);
        add_attention(p, rng, "enc.att", d);
        add_dense(p, rng, "enc.ff1", d, ff);
        add_dense(p, rng, "enc.ff2", ff, d);
        for (const char* k : {"dec1", "dec2"}) {
            const std::string pre(k);
            p.add(pre + ".query", glorot(rng, 1, d));
            add_attention(p, rng, pre + ".att", d);
            add_dense(p, rng, pre + ".ff1", d, ff);
            add_dense(p, rng, pre + ".ff2", ff, d);
            add_dense(p, rng, pre + ".out", d, n);
        }
        return p;
    }

    int phases() const override { return 2; }

    bool trains(int phase, std::string_view name) const override {
        if (name.starts_with("in.") || name.starts_with("enc.")) return true;
        return phase == 0 ? name.starts_with("dec1.") : name.starts_with("dec2.");
    }

    struct Forward {
        ad::Var memory;  // phase-1 encoder output, (B*w x d)
        ad::Var o1, o2, o2_hat;
        ad::Var target;
    };

    static Matrix positional(Index w, Index d) {
        Matrix pe(w, d);
        for (Index t = 0; t < w; ++t) {
            for (Index j = 0; j < d; ++j) {
                const double rate = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(d));
                pe(t, j) = (j % 2 == 0) ? std::sin(static_cast<double>(t) * rate) : std::cos(static_cast<double>(t) * rate);
            }
        }
        return pe;
    }

    static Forward forward(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg, const Matrix& batch,
                           bool need_second_phase) {
        const Index n = cfg.input_dims;
        const Index w = cfg.window_len;
        const Index d = cfg.latent_size;
        const Index B = batch.rows();
        const ad::Var pos = tape.constant(positional(w, d).replicate(B, 1));

        Forward f;
        f.target = tape.constant(unfold_steps(batch, w, n));
        ad::Var zero_focus = tape.constant(Matrix::Zero(B * w, n));
        f.memory = encode(p, cfg, f.target, zero_focus, pos);
        f.o1 = decode(tape, p, cfg, "dec1", f.memory, pos);
        f.o2 = decode(tape, p, cfg, "dec2", f.memory, pos);
        if (need_second_phase) {
            ad::Var focus = ad::square(ad::sub(f.o1, f.target));
            ad::Var memory2 = encode(p, cfg, f.target, focus, pos);
            f.o2_hat = decode(tape, p, cfg, "dec2", memory2, pos);
        }
        return f;
    }

    static std::pair<double, double> epoch_weights(int epoch) {
        const double a = 1.0 / static_cast<double>(std::max(epoch, 1));
        return {a, 1.0 - a};
    }

    ad::Var loss(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg, const Matrix& batch, int phase,
                 int epoch) const override {
        const auto [first, second] = epoch_weights(epoch);
        Forward f = forward(tape, p, cfg, batch, true);
        ad::Var adv = ad::scale(ad::mse(f.o2_hat, f.target), second);
        if (phase == 0) return ad::add(ad::scale(ad::mse(f.o1, f.target), first), adv);
        return ad::sub(ad::scale(ad::mse(f.o2, f.target), first), adv);
    }

    // Encoder output at the anchor step, (B x d).
    ad::Var representation(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                           const Matrix& batch) const override {
        Forward f = forward(tape, p, cfg, batch, false);
        return ad::gather_rows(f.memory, anchor_rows(batch.rows(), cfg.window_len));
    }

    // Mean of the two reconstruction errors (O1 and Ô2) at the anchor step.
    Vector window_scores(const ParameterSet& params, const ModelConfig& cfg, const Matrix& batch) const override {
        ad::Tape tape;
        BoundParams p(tape, params);
        Forward f = forward(tape, p, cfg, batch, true);
        const Index w = cfg.window_len;
        Vector out(batch.rows());
        for (Index b = 0; b < batch.rows(); ++b) {
            const Index r = b * w + w - 1;
            const double e1 = (f.o1.value().row(r) - f.target.value().row(r)).squaredNorm();
            const double e2 = (f.o2_hat.value().row(r) - f.target.value().row(r)).squaredNorm();
            out(b) = 0.5 * (e1 + e2) / static_cast<double>(cfg.input_dims);
        }
        return out;
    }

private:
    static std::vector<Index> anchor_rows(Index B, Index w) {
        std::vector<Index> rows(static_cast<std::size_t>(B));
        for (Index b = 0; b < B; ++b) rows[static_cast<std::size_t>(b)] = b * w + w - 1;
        return rows;
    }

    static void add_attention(ParameterSet& p, Rng& rng, const std::string& prefix, Index d) {
        for (const char* m : {".wq", ".wk", ".wv", ".wo"}) p.add(prefix + m, glorot(rng, d, d));
    }

    static ad::Var attention(const BoundParams& p, const ModelConfig& cfg, const std::string& prefix, ad::Var queries,
                             ad::Var keys) {
        const Index d = cfg.latent_size;
        const Index heads = cfg.tranad_heads;
        const Index dh = d / heads;
        const Index w = cfg.window_len;
        ad::Var q = ad::matmul(queries, p[prefix + ".wq"]);
        ad::Var k = ad::matmul(keys, p[prefix + ".wk"]);
        ad::Var v = ad::matmul(keys, p[prefix + ".wv"]);
        std::vector<ad::Var> out;
        for (Index h = 0; h < heads; ++h) {
            out.push_back(ad::block_attention(ad::cols(q, h * dh, dh), ad::cols(k, h * dh, dh),
                                              ad::cols(v, h * dh, dh), w, w, 1.0 / std::sqrt(static_cast<double>(dh))));
        }
        return ad::matmul(heads == 1 ? out.front() : ad::hcat(std::span<const ad::Var>(out)), p[prefix + ".wo"]);
    }

    static ad::Var feed_forward(const BoundParams& p, const std::string& prefix, ad::Var x) {
        return dense(p, prefix + ".ff2", ad::relu(dense(p, prefix + ".ff1", x)));
    }

    static ad::Var encode(const BoundParams& p, const ModelConfig& cfg, ad::Var x, ad::Var focus, ad::Var pos) {
        ad::Var e0 = ad::add(dense(p, "in", ad::hcat({x, focus})), pos);
        ad::Var e1 = ad::add(e0, attention(p, cfg, "enc.att", e0, e0));
        return ad::add(e1, feed_forward(p, "enc", e1));
    }

    static ad::Var decode(ad::Tape&, const BoundParams& p, const ModelConfig& cfg, const std::string& which,
                          ad::Var memory, ad::Var pos) {
        ad::Var t0 = ad::add_row(pos, p[which + ".query"]);
        ad::Var t1 = ad::add(t0, attention(p, cfg, which + ".att", t0, memory));
        ad::Var t2 = ad::add(t1, feed_forward(p, which, t1));
        return ad::sigmoid(dense(p, which + ".out", t2));
    }
};

}  // namespace fedtad

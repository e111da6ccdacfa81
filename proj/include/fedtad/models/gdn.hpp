#pragma once

#include <algorithm>

#include "fedtad/models/detector.hpp"

namespace fedtad {

// Graph deviation network. Each dimension is a node with a learned embedding
// v_i. Node i attends over itself and its top-k neighbours by embedding
// cosine similarity; the attention layer maps the first w-1 steps of every
// node's history to a forecast of step w-1 (the window's anchor).
//
//   h_i   = x_i · W                      (x_i: node history, length w-1)
//   g_i   = [h_i, v_i]
//   a_ij  = softmax_j LeakyReLU(g_i·a_src + g_j·a_dst),  j ∈ {i} ∪ N(i)
//   z_i   = ReLU(Σ_j a_ij h_j)
//   x̂_i   = (z_i ⊙ v_i)·w_out + b_out
//
// Score: max over nodes of |x̂_i - x_i| after per-node robust scaling
// (median and IQR fitted by calibrate()).
class GdnDetector final : public Detector {
public:
    ModelKind kind() const override { return ModelKind::GDN; }

    ParameterSet init(const ModelConfig& cfg, Rng& rng) const override {
        const Index n = cfg.input_dims;
        const Index d = cfg.latent_size;
        ParameterSet p;
        p.add("emb", glorot(rng, n, d));
        p.add("lin.w", glorot(rng, cfg.window_len - 1, d));
        p.add("att.src", glorot(rng, 2 * d, 1));
        p.add("att.dst", glorot(rng, 2 * d, 1));
        add_dense(p, rng, "out", d, 1);
        p.add("score.median", Matrix::Zero(1, n), /*trainable=*/false);
        p.add("score.inv_scale", Matrix::Ones(1, n), /*trainable=*/false);
        return p;
    }

    // Row i lists the neighbours of node i by descending cosine similarity of
    // embeddings, excluding i itself; lower index wins ties.
    static std::vector<std::vector<Index>> neighbours(const Matrix& emb, int top_k) {
        const Index n = emb.rows();
        const Index k = std::min<Index>(top_k, n - 1);
        Vector norms = emb.rowwise().norm();
        Matrix sim = emb * emb.transpose();
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) sim(i, j) /= std::max(norms(i) * norms(j), 1e-12);
        std::vector<std::vector<Index>> out(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) {
            std::vector<Index> cand;
            for (Index j = 0; j < n; ++j)
                if (j != i) cand.push_back(j);
            std::stable_sort(cand.begin(), cand.end(), [&](Index a, Index b) { return sim(i, a) > sim(i, b); });
            cand.resize(static_cast<std::size_t>(k));
            out[static_cast<std::size_t>(i)] = std::move(cand);
        }
        return out;
    }

    struct Forward {
        ad::Var forecast;  // (B*n x 1)
        ad::Var hidden;    // (B*n x d), z
        Matrix target;     // (B*n x 1)
    };

    static Forward forward(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg, const Matrix& batch) {
        const Index n = cfg.input_dims;
        const Index w = cfg.window_len;
        const Index B = batch.rows();
        const Index rows = B * n;

        Matrix hist(rows, w - 1);
        Matrix target(rows, 1);
        for (Index b = 0; b < B; ++b) {
            for (Index i = 0; i < n; ++i) {
                for (Index t = 0; t + 1 < w; ++t) hist(b * n + i, t) = batch(b, t * n + i);
                target(b * n + i, 0) = batch(b, (w - 1) * n + i);
            }
        }

        const auto nbrs = neighbours(p["emb"].value(), cfg.gdn_top_k);
        const std::size_t slots = nbrs.empty() ? 1 : nbrs.front().size() + 1;

        std::vector<Index> node_of_row(static_cast<std::size_t>(rows));
        for (Index r = 0; r < rows; ++r) node_of_row[static_cast<std::size_t>(r)] = r % n;

        ad::Var h = ad::matmul(tape.constant(hist), p["lin.w"]);
        ad::Var v = ad::gather_rows(p["emb"], node_of_row);
        ad::Var g = ad::hcat({h, v});
        ad::Var s_src = ad::matmul(g, p["att.src"]);
        ad::Var s_dst = ad::matmul(g, p["att.dst"]);

        std::vector<std::vector<Index>> slot_rows(slots, std::vector<Index>(static_cast<std::size_t>(rows)));
        for (Index b = 0; b < B; ++b) {
            for (Index i = 0; i < n; ++i) {
                const auto r = static_cast<std::size_t>(b * n + i);
                slot_rows[0][r] = b * n + i;
                for (std::size_t m = 1; m < slots; ++m)
                    slot_rows[m][r] = b * n + nbrs[static_cast<std::size_t>(i)][m - 1];
            }
        }

        std::vector<ad::Var> logits;
        for (std::size_t m = 0; m < slots; ++m)
            logits.push_back(ad::leaky_relu(ad::add(s_src, ad::gather_rows(s_dst, slot_rows[m])), 0.2));
        ad::Var att = ad::softmax_rows(ad::hcat(std::span<const ad::Var>(logits)));

        ad::Var z;
        for (std::size_t m = 0; m < slots; ++m) {
            ad::Var term = ad::mul_col(ad::gather_rows(h, slot_rows[m]), ad::cols(att, static_cast<Index>(m), 1));
            z = m == 0 ? term : ad::add(z, term);
        }
        z = ad::relu(z);
        ad::Var forecast = dense(p, "out", ad::hadamard(z, v));
        return {forecast, z, std::move(target)};
    }

    ad::Var loss(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg, const Matrix& batch, int,
                 int) const override {
        Forward f = forward(tape, p, cfg, batch);
        return ad::mse(f.forecast, tape.constant(f.target));
    }

    // Mean of z over nodes per window, (B x d).
    ad::Var representation(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                           const Matrix& batch) const override {
        Forward f = forward(tape, p, cfg, batch);
        const Index n = cfg.input_dims;
        Matrix pool = Matrix::Zero(batch.rows(), batch.rows() * n);
        for (Index b = 0; b < batch.rows(); ++b) pool.block(b, b * n, 1, n).setConstant(1.0 / static_cast<double>(n));
        return ad::matmul(tape.constant(pool), f.hidden);
    }

    // |forecast error| per (window, node), (B x n).
    static Matrix abs_errors(const ParameterSet& params, const ModelConfig& cfg, const Matrix& batch) {
        ad::Tape tape;
        BoundParams p(tape, params);
        Forward f = forward(tape, p, cfg, batch);
        const Index n = cfg.input_dims;
        Matrix err(batch.rows(), n);
        for (Index b = 0; b < batch.rows(); ++b)
            for (Index i = 0; i < n; ++i)
                err(b, i) = std::abs(f.forecast.value()(b * n + i, 0) - f.target(b * n + i, 0));
        return err;
    }

    Vector window_scores(const ParameterSet& params, const ModelConfig& cfg, const Matrix& batch) const override {
        Matrix err = abs_errors(params, cfg, batch);
        const auto& med = params.at("score.median");
        const auto& inv = params.at("score.inv_scale");
        for (Index b = 0; b < err.rows(); ++b)
            err.row(b) = ((err.row(b) - med).cwiseAbs()).cwiseProduct(inv);
        return err.rowwise().maxCoeff();
    }

    // Fits per-node median and 1/(IQR + 0.01) of forecast errors on `batch`.
    void calibrate(ParameterSet& params, const ModelConfig& cfg, const Matrix& batch) const override {
        if (batch.rows() == 0) return;
        ParameterSet raw = params;
        raw.at("score.median").setZero();
        raw.at("score.inv_scale").setOnes();
        const Matrix err = abs_errors(raw, cfg, batch);
        Matrix med(1, err.cols());
        Matrix inv(1, err.cols());
        for (Index i = 0; i < err.cols(); ++i) {
            std::vector<double> col(err.col(i).data(), err.col(i).data() + err.rows());
            std::sort(col.begin(), col.end());
            med(0, i) = quantile(col, 0.5);
            inv(0, i) = 1.0 / (quantile(col, 0.75) - quantile(col, 0.25) + 1e-2);
        }
        params.at("score.median") = med;
        params.at("score.inv_scale") = inv;
    }

private:
    // Linear interpolation between order statistics of a sorted sample.
    static double quantile(const std::vector<double>& sorted, double q) {
        const double pos = q * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, sorted.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
    }
};

}  // namespace fedtad

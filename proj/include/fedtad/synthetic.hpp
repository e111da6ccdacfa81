#pragma once

// Synthetic stand-ins for the benchmark datasets, with the same geometry and
// on-disk layout. Each entity mixes a few periodic factors into its
// dimensions and moves through several operating regimes, so a client that
// owns only part of the training rows sees only part of normal behaviour.
// Test splits revisit every regime and carry labelled anomaly segments.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "fedtad/dataset.hpp"
#include "fedtad/error.hpp"
#include "fedtad/rng.hpp"

namespace fedtad {

struct SyntheticConfig {
    Index train_rows = 2000;  // per entity
    Index test_rows = 1000;   // per entity
    int regimes = 4;
    double anomaly_fraction = 0.06;
    double noise = 0.05;
    std::uint64_t seed = 0;
};

inline std::string entity_name(DatasetName d, int i) {
    char buf[32];
    switch (d) {
        case DatasetName::SMD: std::snprintf(buf, sizeof buf, "machine-%d-%d", i / 9 + 1, i % 9 + 1); break;
        case DatasetName::SMAP: std::snprintf(buf, sizeof buf, "%c-%d", "ADEFGPRST"[i % 9], i / 9 + 1); break;
        case DatasetName::PSM: std::snprintf(buf, sizeof buf, "psm"); break;
    }
    return buf;
}

namespace detail {

struct EntityModel {
    static constexpr int kFactors = 3;
    Index dims = 0;
    std::vector<double> period;         // per factor
    std::vector<double> phase;          // per factor
    Matrix loading;                     // dims × factors
    std::vector<Vector> regime_offset;  // per regime, per dim
    std::vector<double> regime_speed;   // per regime frequency multiplier
    Vector scale;                       // raw units
    Vector bias;
    std::vector<bool> constant;

    EntityModel(Index n, int regimes, Rng& rng) : dims(n), loading(n, kFactors), scale(n), bias(n) {
        for (int f = 0; f < kFactors; ++f) {
            period.push_back(rng.uniform(20.0, 120.0));
            phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
        }
        for (Index d = 0; d < n; ++d)
            for (int f = 0; f < kFactors; ++f) loading(d, f) = rng.normal() * 0.6;
        for (int r = 0; r < regimes; ++r) {
            Vector off(n);
            for (Index d = 0; d < n; ++d) off(d) = rng.normal() * 0.8;
            regime_offset.push_back(off);
            regime_speed.push_back(rng.uniform(0.6, 1.6));
        }
        for (Index d = 0; d < n; ++d) {
            scale(d) = std::exp(rng.uniform(-1.0, 3.0));
            bias(d) = rng.uniform(-50.0, 50.0);
        }
        constant.assign(static_cast<std::size_t>(n), false);
    }

    // Latent value before scaling, at time t within regime r.
    double value(Index d, double t, int r) const {
        double v = regime_offset[static_cast<std::size_t>(r)](d);
        const double speed = regime_speed[static_cast<std::size_t>(r)];
        for (int f = 0; f < kFactors; ++f)
            v += loading(d, f) * std::sin(2.0 * std::numbers::pi * speed * t / period[f] + phase[f]);
        return v;
    }
};

inline Matrix render(const EntityModel& m, Index rows, const std::vector<int>& regime_of_row, double noise,
                     Rng& rng) {
    Matrix out(rows, m.dims);
    for (Index t = 0; t < rows; ++t) {
        const int r = regime_of_row[static_cast<std::size_t>(t)];
        for (Index d = 0; d < m.dims; ++d) {
            const double v = m.constant[static_cast<std::size_t>(d)] ? 0.0 : m.value(d, static_cast<double>(t), r) + noise * rng.normal();
            out(t, d) = m.bias(d) + m.scale(d) * v;
        }
    }
    return out;
}

// Contiguous regime blocks in order 0..R-1.
inline std::vector<int> regime_blocks(Index rows, int regimes) {
    std::vector<int> out(static_cast<std::size_t>(rows));
    for (Index t = 0; t < rows; ++t) out[static_cast<std::size_t>(t)] = static_cast<int>(t * regimes / rows);
    return out;
}

// Injects anomaly segments into the test matrix; returns labels.
inline std::vector<int> inject_anomalies(Matrix& test, const EntityModel& m, double fraction, Rng& rng) {
    const Index rows = test.rows();
    std::vector<int> labels(static_cast<std::size_t>(rows), 0);
    const Index budget = static_cast<Index>(fraction * static_cast<double>(rows));
    Index used = 0;
    int attempts = 0;
    while (used < budget && attempts++ < 1000) {
        const Index len = 5 + static_cast<Index>(rng.below(36));
        if (len + 2 >= rows) break;
        const Index start = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(rows - len - 1)));
        bool clash = false;
        for (Index t = start - 1; t <= start + len && !clash; ++t) clash = labels[static_cast<std::size_t>(t)] != 0;
        if (clash) continue;
        const int kind = static_cast<int>(rng.below(4));
        std::vector<Index> hit;
        for (Index d = 0; d < m.dims; ++d)
            if (!m.constant[static_cast<std::size_t>(d)] && rng.uniform() < 0.3) hit.push_back(d);
        if (hit.empty()) {
            for (Index d = 0; d < m.dims; ++d)
                if (!m.constant[static_cast<std::size_t>(d)]) {
                    hit.push_back(d);
                    break;
                }
        }
        for (Index d : hit) {
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            const double frozen = test(start, d);
            for (Index t = start; t < start + len; ++t) {
                switch (kind) {
                    case 0: test(t, d) += sign * 3.0 * m.scale(d); break;                     // level shift
                    case 1: test(t, d) += 2.0 * m.scale(d) * rng.normal(); break;             // noise burst
                    case 2: test(t, d) = frozen + sign * 1.5 * m.scale(d); break;             // stuck value
                    default: test(t, d) += sign * m.scale(d) * 4.0 * (t - start + 1) / len; break;  // ramp
                }
            }
        }
        for (Index t = start; t < start + len; ++t) labels[static_cast<std::size_t>(t)] = 1;
        used += len;
    }
    return labels;
}

}  // namespace detail

inline DatasetBundle synthetic_bundle(DatasetName name, const SyntheticConfig& cfg) {
    if (cfg.train_rows < 1 || cfg.test_rows < 2 || cfg.regimes < 1)
        throw ConfigError("synthetic dataset needs positive sizes");
    const DatasetGeometry g = geometry(name);
    DatasetBundle bundle;
    bundle.name = name;
    bundle.dims = g.dims;
    for (int i = 0; i < g.series; ++i) {
        Rng rng(cfg.seed, "synthetic." + to_string(name), 0, static_cast<std::uint64_t>(i));
        detail::EntityModel m(g.dims, cfg.regimes, rng);
        // SMD has idle counters that never move.
        if (name == DatasetName::SMD)
            for (int d = 0; d < 3; ++d) m.constant[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(g.dims)))] = true;

        MultivariateSeries s;
        s.entity_id = entity_name(name, i);
        s.train = detail::render(m, cfg.train_rows, detail::regime_blocks(cfg.train_rows, cfg.regimes), cfg.noise, rng);
        // The test split cycles through every regime twice.
        {
            std::vector<int> reg(static_cast<std::size_t>(cfg.test_rows));
            for (Index t = 0; t < cfg.test_rows; ++t)
                reg[static_cast<std::size_t>(t)] = static_cast<int>((t * 2 * cfg.regimes / cfg.test_rows) % cfg.regimes);
            s.test = detail::render(m, cfg.test_rows, reg, cfg.noise, rng);
        }
        s.test_labels = detail::inject_anomalies(s.test, m, cfg.anomaly_fraction, rng);
        // PSM ships with missing readings.
        if (name == DatasetName::PSM) {
            for (Index t = 0; t < s.train.rows(); ++t)
                if (rng.uniform() < 0.002) s.train(t, static_cast<Index>(rng.below(static_cast<std::uint64_t>(g.dims)))) = std::nan("");
        }
        bundle.series.push_back(std::move(s));
    }
    return bundle;
}

namespace detail {

inline void write_csv(const std::filesystem::path& file, const Matrix& m) {
    std::ofstream out(file);
    if (!out) throw LoadError("cannot write " + file.string());
    char buf[32];
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) {
            if (c) out << ',';
            if (std::isnan(m(r, c))) continue;
            std::snprintf(buf, sizeof buf, "%.10g", m(r, c));
            out << buf;
        }
        out << '\n';
    }
}

}  // namespace detail

// Writes <root>/<DATASET>/ with manifest, train, test and label files.
inline void write_dataset(const DatasetBundle& bundle, const std::filesystem::path& root) {
    const auto dir = root / to_string(bundle.name);
    std::filesystem::create_directories(dir);
    Manifest m;
    m.dataset = to_string(bundle.name);
    m.dims = bundle.dims;
    for (const auto& s : bundle.series) {
        m.entities.push_back(s.entity_id);
        detail::write_csv(dir / (s.entity_id + "_train.csv"), s.train);
        detail::write_csv(dir / (s.entity_id + "_test.csv"), s.test);
        std::ofstream lab(dir / (s.entity_id + "_labels.csv"));
        for (int l : s.test_labels) lab << l << '\n';
    }
    write_manifest(dir / "manifest.txt", m);
}

inline void generate_dataset(DatasetName name, const std::filesystem::path& root, const SyntheticConfig& cfg) {
    write_dataset(synthetic_bundle(name, cfg), root);
}

}  // namespace fedtad

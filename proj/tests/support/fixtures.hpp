#pragma once

#include "fedtad/runner.hpp"
#include "fedtad/synthetic.hpp"

namespace fixture {

// Raw synthetic bundle at smoke scale.
inline const fedtad::DatasetBundle& raw_bundle(fedtad::DatasetName name, fedtad::Index train_rows = 2000,
                                               fedtad::Index test_rows = 1000) {
    static std::map<std::tuple<int, fedtad::Index, fedtad::Index>, fedtad::DatasetBundle> cache;
    static std::mutex mu;
    std::lock_guard lock(mu);
    auto key = std::make_tuple(static_cast<int>(name), train_rows, test_rows);
    auto it = cache.find(key);
    if (it == cache.end()) {
        fedtad::SyntheticConfig sc;
        sc.train_rows = train_rows;
        sc.test_rows = test_rows;
        it = cache.emplace(key, fedtad::synthetic_bundle(name, sc)).first;
    }
    return it->second;
}

inline fedtad::DatasetBundle smoke_bundle(fedtad::DatasetName name = fedtad::DatasetName::PSM,
                                          fedtad::Index train_rows = 2000) {
    return fedtad::normalize(fedtad::truncate_training(raw_bundle(name, train_rows), fedtad::kSmokeTrainRows));
}

inline fedtad::ModelConfig smoke_model(fedtad::ModelKind kind, int dims) {
    fedtad::ModelConfig m;
    m.kind = kind;
    m.input_dims = dims;
    m.hidden_size = fedtad::kSmokeHidden;
    m.latent_size = fedtad::kSmokeLatent;
    return m;
}

inline fedtad::ExperimentConfig smoke_experiment(fedtad::ModelKind kind, fedtad::Strategy s, std::uint64_t seed = 0) {
    fedtad::ExperimentConfig c;
    c.dataset = fedtad::DatasetName::PSM;
    c.model.kind = kind;
    c.federation.strategy = s;
    c.federation.seed = seed;
    c.smoke = true;
    return c;
}

// Largest absolute entrywise difference.
inline double max_abs_diff(const fedtad::ParameterSet& a, const fedtad::ParameterSet& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, (a[i].value - b[i].value).cwiseAbs().maxCoeff());
    return worst;
}

}  // namespace fixture

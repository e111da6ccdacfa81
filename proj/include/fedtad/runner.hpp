#pragma once

// Experiment orchestration: configuration, one experiment end to end, grids
// of experiments with resumable result storage.
//
// Results live in <out>/records.jsonl, one JSON object per line, appended
// only. A run is identified by the fingerprint of its effective configuration
// together with its seed.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedtad/dataset.hpp"
#include "fedtad/error.hpp"
#include "fedtad/federation.hpp"
#include "fedtad/metrics.hpp"
#include "fedtad/models/models.hpp"
#include "fedtad/partition.hpp"
#include "fedtad/rng.hpp"

namespace fedtad {

inline constexpr Index kSmokeTrainRows = 2000;
inline constexpr int kSmokeHidden = 8;
inline constexpr int kSmokeLatent = 4;
inline constexpr int kSmokeGlobalEpochs = 3;

struct ExperimentConfig {
    DatasetName dataset = DatasetName::PSM;
    std::filesystem::path data_root = "data";
    ModelConfig model;
    FederationConfig federation;
    std::optional<PartitionScheme> partition;  // unset: the dataset's default
    int clients = 0;                           // 0: the dataset's default
    double beta = 0.5;
    std::filesystem::path out_dir = "out";
    int repeats = 1;
    bool smoke = false;

    ExperimentConfig() { federation.global_epochs = 5; }
};

inline PartitionScheme default_partition(DatasetName d) {
    return d == DatasetName::PSM ? PartitionScheme::DirichletContiguous : PartitionScheme::PerSeries;
}

namespace detail {

inline std::string normalize_key(std::string key) {
    std::replace(key.begin(), key.end(), '-', '_');
    return key;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* b = value.data();
    const char* e = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(b, e, out);
    if (ec != std::errc() || ptr != e) throw ConfigError("bad value for " + key + ": '" + value + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
    if (value == "0" || value == "false" || value == "no" || value == "off") return false;
    throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

}  // namespace detail

// Applies one `key = value` setting. Keys match the CLI long options, with
// '-' and '_' interchangeable.
inline void apply_setting(ExperimentConfig& cfg, std::string key, const std::string& value) {
    using detail::parse_number;
    key = detail::normalize_key(key);
    auto& m = cfg.model;
    auto& f = cfg.federation;
    if (key == "dataset") cfg.dataset = parse_dataset_name(value);
    else if (key == "data_root" || key == "data") cfg.data_root = value;
    else if (key == "model") m.kind = parse_model_kind(value);
    else if (key == "fl" || key == "strategy") f.strategy = parse_strategy(value);
    else if (key == "clients") cfg.clients = parse_number<int>(key, value);
    else if (key == "beta") cfg.beta = parse_number<double>(key, value);
    else if (key == "partition") cfg.partition = parse_partition_scheme(value);
    else if (key == "global_epochs") f.global_epochs = parse_number<int>(key, value);
    else if (key == "local_epochs") f.local_epochs = parse_number<int>(key, value);
    else if (key == "seed") f.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "out") cfg.out_dir = value;
    else if (key == "smoke") cfg.smoke = detail::parse_bool(key, value);
    else if (key == "repeats") cfg.repeats = parse_number<int>(key, value);
    else if (key == "workers") f.workers = parse_number<int>(key, value);
    else if (key == "mu") f.mu = parse_number<double>(key, value);
    else if (key == "tau") f.tau = parse_number<double>(key, value);
    else if (key == "contrastive_weight") f.contrastive_weight = parse_number<double>(key, value);
    else if (key == "window_len") m.window_len = parse_number<int>(key, value);
    else if (key == "hidden_size") m.hidden_size = parse_number<int>(key, value);
    else if (key == "latent_size") m.latent_size = parse_number<int>(key, value);
    else if (key == "learning_rate") m.learning_rate = parse_number<double>(key, value);
    else if (key == "batch_size") m.batch_size = parse_number<int>(key, value);
    else if (key == "usad_alpha") m.usad_alpha = parse_number<double>(key, value);
    else if (key == "usad_beta") m.usad_beta = parse_number<double>(key, value);
    else if (key == "gdn_top_k") m.gdn_top_k = parse_number<int>(key, value);
    else if (key == "tranad_heads") m.tranad_heads = parse_number<int>(key, value);
    else throw ConfigError("unknown setting: " + key);
}

// Plain text, one `key = value` (or `key: value`) per line; '#' starts a
// comment.
inline void apply_config_text(ExperimentConfig& cfg, std::istream& in, const std::string& origin = "config") {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        auto sep = t.find_first_of("=:");
        if (sep == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        apply_setting(cfg, detail::trim(std::string_view(t).substr(0, sep)),
                      detail::trim(std::string_view(t).substr(sep + 1)));
    }
}

inline void apply_config_file(ExperimentConfig& cfg, const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    apply_config_text(cfg, in, file.string());
}

// Fills dataset-dependent defaults, applies the smoke profile and validates
// every field. The result is what actually runs.
inline ExperimentConfig resolve(ExperimentConfig cfg) {
    const DatasetGeometry g = geometry(cfg.dataset);
    cfg.model.input_dims = g.dims;
    if (!cfg.partition) cfg.partition = default_partition(cfg.dataset);
    if (cfg.clients == 0) cfg.clients = *cfg.partition == PartitionScheme::PerSeries ? g.series : g.clients;
    if (cfg.smoke) {
        cfg.model.hidden_size = kSmokeHidden;
        cfg.model.latent_size = kSmokeLatent;
        cfg.federation.global_epochs = kSmokeGlobalEpochs;
    }
    if (cfg.clients < 1) throw ConfigError("clients must be >= 1");
    if (*cfg.partition == PartitionScheme::PerSeries && cfg.clients != g.series)
        throw ConfigError("per_series partition of " + to_string(cfg.dataset) + " needs " +
                          std::to_string(g.series) + " clients");
    if (!(cfg.beta > 0.0)) throw ConfigError("beta must be positive");
    if (cfg.repeats < 1) throw ConfigError("repeats must be >= 1");
    cfg.model.validate();
    cfg.federation.validate();
    return cfg;
}

// Canonical `key=value` lines of everything that influences results. The
// seed and the output location are excluded; worker count does not change
// any number.
inline std::string canonical_config(const ExperimentConfig& raw) {
    const ExperimentConfig c = resolve(raw);
    std::map<std::string, std::string> kv;
    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    kv["dataset"] = to_string(c.dataset);
    kv["model"] = cli_name(c.model.kind);
    kv["fl"] = cli_name(c.federation.strategy);
    kv["partition"] = to_string(*c.partition);
    kv["clients"] = std::to_string(c.clients);
    kv["beta"] = *c.partition == PartitionScheme::DirichletContiguous ? num(c.beta) : "-";
    kv["global_epochs"] = std::to_string(c.federation.global_epochs);
    kv["local_epochs"] = std::to_string(c.federation.local_epochs);
    kv["mu"] = num(c.federation.mu);
    kv["tau"] = num(c.federation.tau);
    kv["contrastive_weight"] = num(c.federation.contrastive_weight);
    kv["window_len"] = std::to_string(c.model.window_len);
    kv["hidden_size"] = std::to_string(c.model.hidden_size);
    kv["latent_size"] = std::to_string(c.model.latent_size);
    kv["learning_rate"] = num(c.model.learning_rate);
    kv["batch_size"] = std::to_string(c.model.batch_size);
    kv["usad_alpha"] = num(c.model.usad_alpha);
    kv["usad_beta"] = num(c.model.usad_beta);
    kv["gdn_top_k"] = std::to_string(c.model.gdn_top_k);
    kv["tranad_heads"] = std::to_string(c.model.tranad_heads);
    kv["smoke"] = c.smoke ? "1" : "0";
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

inline std::string fingerprint(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_config(cfg))));
    return buf;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct ResultsRecord {
    std::string config_fingerprint;
    std::uint64_t seed = 0;
    bool ok = true;
    std::string failed_stage;
    std::string error;

    DatasetName dataset = DatasetName::PSM;
    ModelKind model = ModelKind::USAD;
    Strategy strategy = Strategy::FedAvg;
    PartitionScheme partition = PartitionScheme::PerSeries;
    int clients = 0;
    double beta = 0.0;
    int global_epochs = 0;
    int local_epochs = 0;
    std::string canonical;

    EvaluationResult metrics;
    std::vector<double> round_seconds;
    double total_seconds = 0.0;
    std::vector<std::vector<double>> loss_curves;

    double seconds_per_round() const {
        if (round_seconds.empty()) return 0.0;
        double s = 0.0;
        for (double v : round_seconds) s += v;
        return s / static_cast<double>(round_seconds.size());
    }
};

namespace detail {

// JSON has no infinity; an unreachable threshold is stored as null.
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

inline double number_or_inf(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const ResultsRecord& r) {
    nlohmann::json j;
    j["fingerprint"] = r.config_fingerprint;
    j["seed"] = r.seed;
    j["status"] = r.ok ? "ok" : "failed";
    if (!r.ok) {
        j["stage"] = r.failed_stage;
        j["error"] = r.error;
    }
    j["dataset"] = to_string(r.dataset);
    j["model"] = cli_name(r.model);
    j["fl"] = cli_name(r.strategy);
    j["partition"] = to_string(r.partition);
    j["clients"] = r.clients;
    j["beta"] = r.beta;
    j["global_epochs"] = r.global_epochs;
    j["local_epochs"] = r.local_epochs;
    j["config"] = r.canonical;
    const auto& m = r.metrics;
    j["metrics"] = {{"auc_roc", m.auc_roc},         {"auc_pr", m.auc_pr},
                    {"precision", m.precision},     {"recall", m.recall},
                    {"f1", m.f1},                   {"precision_adj", m.precision_adj},
                    {"recall_adj", m.recall_adj},   {"f1_adj", m.f1_adj},
                    {"threshold", detail::finite_or_null(m.threshold)},
                    {"threshold_adj", detail::finite_or_null(m.threshold_adj)}};
    j["round_seconds"] = r.round_seconds;
    j["total_seconds"] = r.total_seconds;
    j["loss_curves"] = r.loss_curves;
    return j;
}

inline ResultsRecord record_from_json(const nlohmann::json& j) {
    ResultsRecord r;
    r.config_fingerprint = j.at("fingerprint").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ok = j.at("status").get<std::string>() == "ok";
    r.failed_stage = j.value("stage", "");
    r.error = j.value("error", "");
    r.dataset = parse_dataset_name(j.at("dataset").get<std::string>());
    r.model = parse_model_kind(j.at("model").get<std::string>());
    r.strategy = parse_strategy(j.at("fl").get<std::string>());
    r.partition = parse_partition_scheme(j.at("partition").get<std::string>());
    r.clients = j.at("clients").get<int>();
    r.beta = j.at("beta").get<double>();
    r.global_epochs = j.at("global_epochs").get<int>();
    r.local_epochs = j.at("local_epochs").get<int>();
    r.canonical = j.value("config", "");
    const auto& m = j.at("metrics");
    r.metrics.auc_roc = m.at("auc_roc").get<double>();
    r.metrics.auc_pr = m.at("auc_pr").get<double>();
    r.metrics.precision = m.at("precision").get<double>();
    r.metrics.recall = m.at("recall").get<double>();
    r.metrics.f1 = m.at("f1").get<double>();
    r.metrics.precision_adj = m.at("precision_adj").get<double>();
    r.metrics.recall_adj = m.at("recall_adj").get<double>();
    r.metrics.f1_adj = m.at("f1_adj").get<double>();
    r.metrics.threshold = detail::number_or_inf(m.at("threshold"));
    r.metrics.threshold_adj = detail::number_or_inf(m.at("threshold_adj"));
    r.metrics.config_fingerprint = r.config_fingerprint;
    r.round_seconds = j.at("round_seconds").get<std::vector<double>>();
    r.total_seconds = j.at("total_seconds").get<double>();
    r.loss_curves = j.at("loss_curves").get<std::vector<std::vector<double>>>();
    return r;
}

// Append-only JSON-lines store. Appends are serialized and flushed; a line
// cut short by a crash is ignored on load and never glued to the next record.
class RecordStore {
public:
    explicit RecordStore(std::filesystem::path file) : file_(std::move(file)) {}

    const std::filesystem::path& path() const { return file_; }

    std::vector<ResultsRecord> load() const {
        std::vector<ResultsRecord> out;
        std::ifstream in(file_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                out.push_back(record_from_json(nlohmann::json::parse(line)));
            } catch (const std::exception&) {
                // torn or foreign line
            }
        }
        return out;
    }

    void append(const ResultsRecord& r) {
        const std::string line = to_json(r).dump();
        std::lock_guard lock(mu_);
        if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
        bool needs_newline = false;
        if (std::filesystem::exists(file_) && std::filesystem::file_size(file_) > 0) {
            std::ifstream in(file_, std::ios::binary);
            in.seekg(-1, std::ios::end);
            char last = '\n';
            in.get(last);
            needs_newline = last != '\n';
        }
        std::ofstream out(file_, std::ios::app | std::ios::binary);
        if (!out) throw LoadError("cannot append to " + file_.string());
        if (needs_newline) out << '\n';
        out << line << '\n';
        out.flush();
    }

private:
    std::filesystem::path file_;
    mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

// Keeps the first `rows` training rows of every series.
inline DatasetBundle truncate_training(DatasetBundle bundle, Index rows) {
    for (auto& s : bundle.series)
        if (s.train.rows() > rows) s.train = Matrix(s.train.topRows(rows));
    return bundle;
}

inline EvaluationResult evaluate_model(const ParameterSet& params, const ModelConfig& model,
                                       const DatasetBundle& bundle) {
    std::vector<std::vector<double>> scores;
    scores.reserve(bundle.series.size());
    for (const auto& s : bundle.series) scores.push_back(score_series(params, model, s.test));
    std::vector<ScoredChunk> chunks;
    for (std::size_t i = 0; i < bundle.series.size(); ++i)
        chunks.push_back(ScoredChunk{scores[i], bundle.series[i].test_labels});
    return evaluate(chunks);
}

struct RunOptions {
    RoundLogSink log;  // per-client round lines
    // When set, final models are written here as <fingerprint>_seed<S>.params
    // (isolated runs add _client<C> per client model).
    std::filesystem::path checkpoint_dir;
};

inline void write_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    params.write(os);
    if (!os) throw Error("checkpoint", "cannot write " + path.string());
}

// Runs one seed of an already-loaded (raw, unnormalized) bundle. Errors are
// captured in the returned record.
inline ResultsRecord run_experiment_on(const ExperimentConfig& raw, const DatasetBundle& raw_bundle,
                                       const RunOptions& opts = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    ResultsRecord rec;
    rec.dataset = raw.dataset;
    rec.model = raw.model.kind;
    rec.strategy = raw.federation.strategy;
    rec.seed = raw.federation.seed;
    std::string stage = "config";
    try {
        const ExperimentConfig cfg = resolve(raw);
        rec.canonical = canonical_config(cfg);
        rec.config_fingerprint = fingerprint(cfg);
        rec.partition = *cfg.partition;
        rec.clients = cfg.clients;
        rec.beta = cfg.beta;
        rec.global_epochs = cfg.federation.global_epochs;
        rec.local_epochs = cfg.federation.local_epochs;

        stage = "load";
        if (raw_bundle.name != cfg.dataset) throw LoadError("loaded " + to_string(raw_bundle.name) + " but configured " + to_string(cfg.dataset));
        DatasetBundle bundle = cfg.smoke ? truncate_training(raw_bundle, kSmokeTrainRows) : raw_bundle;
        stage = "normalize";
        if (!bundle.normalized()) bundle = normalize(std::move(bundle));

        stage = "partition";
        PartitionConfig pc;
        pc.scheme = *cfg.partition;
        pc.n_clients = cfg.clients;
        pc.beta = cfg.beta;
        pc.seed = cfg.federation.seed;
        const ClientAssignment assignment = make_partition(bundle, pc);

        stage = "train";
        TrainingOutcome trained = run_training(cfg.federation, cfg.model, bundle, assignment, opts.log);
        rec.round_seconds = trained.round_seconds;
        rec.loss_curves = trained.loss_curves;

        if (!opts.checkpoint_dir.empty()) {
            stage = "checkpoint";
            const std::string stem = rec.config_fingerprint + "_seed" + std::to_string(rec.seed);
            if (cfg.federation.strategy == Strategy::Isolated) {
                for (std::size_t c = 0; c < trained.client_params.size(); ++c)
                    write_checkpoint(opts.checkpoint_dir / (stem + "_client" + std::to_string(c) + ".params"),
                                     trained.client_params[c]);
            } else {
                write_checkpoint(opts.checkpoint_dir / (stem + ".params"), trained.global_params);
            }
        }

        stage = "evaluate";
        if (cfg.federation.strategy == Strategy::Isolated) {
            std::vector<EvaluationResult> per_client;
            for (const auto& p : trained.client_params) per_client.push_back(evaluate_model(p, cfg.model, bundle));
            rec.metrics = mean_result(per_client);
        } else {
            rec.metrics = evaluate_model(trained.global_params, cfg.model, bundle);
        }
        rec.metrics.config_fingerprint = rec.config_fingerprint;
    } catch (const Error& e) {
        rec.ok = false;
        rec.failed_stage = e.stage();
        rec.error = e.what();
    } catch (const std::exception& e) {
        rec.ok = false;
        rec.failed_stage = stage;
        rec.error = e.what();
    }
    rec.total_seconds = detail::seconds_since(t0);
    return rec;
}

inline DatasetBundle load_for(const ExperimentConfig& cfg) { return load_dataset(cfg.dataset, cfg.data_root); }

// Loads the dataset and runs every repeat (seeds seed, seed+1, ...),
// appending each record to <out>/records.jsonl.
inline std::vector<ResultsRecord> run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
    RecordStore store(cfg.out_dir / "records.jsonl");
    std::vector<ResultsRecord> out;
    std::optional<DatasetBundle> bundle;
    std::string load_error;
    std::string load_stage = "load";
    try {
        bundle = load_for(cfg);
    } catch (const Error& e) {
        load_error = e.what();
        load_stage = e.stage();
    }
    for (int r = 0; r < std::max(cfg.repeats, 1); ++r) {
        ExperimentConfig one = cfg;
        one.federation.seed = cfg.federation.seed + static_cast<std::uint64_t>(r);
        ResultsRecord rec;
        if (bundle) {
            rec = run_experiment_on(one, *bundle, opts);
        } else {
            rec.dataset = one.dataset;
            rec.model = one.model.kind;
            rec.strategy = one.federation.strategy;
            rec.seed = one.federation.seed;
            rec.ok = false;
            rec.failed_stage = load_stage;
            rec.error = load_error;
            try {
                rec.config_fingerprint = fingerprint(one);
            } catch (const Error&) {
            }
        }
        store.append(rec);
        out.push_back(std::move(rec));
    }
    return out;
}

// Cross product of the listed values over a base configuration. Empty lists
// keep the base value.
struct GridSpec {
    ExperimentConfig base;
    std::vector<DatasetName> datasets;
    std::vector<ModelKind> models;
    std::vector<Strategy> strategies;
    std::vector<PartitionScheme> partitions;
    std::vector<double> betas;
    std::vector<std::uint64_t> seeds;
    int workers = 1;  // experiments run concurrently

    std::vector<ExperimentConfig> expand() const {
        std::vector<ExperimentConfig> out;
        auto or_base = [](const auto& v, auto b) { return v.empty() ? std::vector<decltype(b)>{b} : v; };
        for (auto d : or_base(datasets, base.dataset))
            for (auto m : or_base(models, base.model.kind))
                for (auto s : or_base(strategies, base.federation.strategy))
                    for (auto p : partitions.empty() ? std::vector<std::optional<PartitionScheme>>{base.partition}
                                                     : std::vector<std::optional<PartitionScheme>>(
                                                           partitions.begin(), partitions.end()))
                        for (auto b : or_base(betas, base.beta))
                            for (auto seed : or_base(seeds, base.federation.seed)) {
                                ExperimentConfig c = base;
                                c.dataset = d;
                                c.model.kind = m;
                                c.federation.strategy = s;
                                c.partition = p;
                                c.beta = b;
                                c.federation.seed = seed;
                                c.repeats = 1;
                                out.push_back(c);
                            }
        return out;
    }
};

struct GridOutcome {
    std::vector<ResultsRecord> records;  // one per grid cell, in expansion order
    std::size_t executed = 0;
    std::size_t resumed = 0;
};

// Runs every cell not already completed in <base.out>/records.jsonl.
// `loader` supplies datasets (by default from disk) and is called once per
// dataset.
inline GridOutcome run_grid(const GridSpec& spec,
                            const std::function<DatasetBundle(const ExperimentConfig&)>& loader = load_for,
                            const RunOptions& opts = {}) {
    RecordStore store(spec.base.out_dir / "records.jsonl");
    std::map<std::pair<std::string, std::uint64_t>, ResultsRecord> done;
    for (auto& r : store.load())
        if (r.ok) done[{r.config_fingerprint, r.seed}] = r;

    const auto cells = spec.expand();
    GridOutcome out;
    out.records.resize(cells.size());
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        std::string fp;
        try {
            fp = fingerprint(cells[i]);
        } catch (const Error&) {
        }
        auto it = fp.empty() ? done.end() : done.find({fp, cells[i].federation.seed});
        if (it != done.end()) {
            out.records[i] = it->second;
            ++out.resumed;
        } else {
            todo.push_back(i);
        }
    }

    std::mutex data_mu;
    std::map<DatasetName, std::shared_ptr<const DatasetBundle>> cache;
    std::map<DatasetName, std::string> load_errors;
    auto bundle_for = [&](const ExperimentConfig& c) -> std::shared_ptr<const DatasetBundle> {
        std::lock_guard lock(data_mu);
        if (auto it = cache.find(c.dataset); it != cache.end()) return it->second;
        if (load_errors.count(c.dataset)) return nullptr;
        try {
            auto b = std::make_shared<const DatasetBundle>(loader(c));
            cache[c.dataset] = b;
            return b;
        } catch (const std::exception& e) {
            load_errors[c.dataset] = e.what();
            return nullptr;
        }
    };

    detail::parallel_for(todo.size(), spec.workers, [&](std::size_t k) {
        const std::size_t i = todo[k];
        const ExperimentConfig& c = cells[i];
        ResultsRecord rec;
        if (auto b = bundle_for(c)) {
            rec = run_experiment_on(c, *b, opts);
        } else {
            rec.dataset = c.dataset;
            rec.model = c.model.kind;
            rec.strategy = c.federation.strategy;
            rec.seed = c.federation.seed;
            rec.ok = false;
            rec.failed_stage = "load";
            {
                std::lock_guard lock(data_mu);
                rec.error = load_errors[c.dataset];
            }
            try {
                rec.config_fingerprint = fingerprint(c);
            } catch (const Error&) {
            }
        }
        store.append(rec);
        out.records[i] = std::move(rec);
    });
    out.executed = todo.size();
    return out;
}

}  // namespace fedtad

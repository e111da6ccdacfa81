#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "../support/fixtures.hpp"
#include "fedtad/runner.hpp"

using namespace fedtad;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("fedtad_runner_" + name);
    fs::remove_all(p);
    return p;
}

// Cheap smoke experiment on the in-memory PSM bundle.
ExperimentConfig quick(ModelKind kind = ModelKind::DeepSVDD, Strategy s = Strategy::FedAvg) {
    auto c = fixture::smoke_experiment(kind, s, 3);
    c.clients = 4;
    c.federation.local_epochs = 1;
    return c;
}

DatasetBundle psm_loader(const ExperimentConfig& c) {
    if (c.dataset != DatasetName::PSM) throw LoadError("only psm in memory");
    return fixture::raw_bundle(DatasetName::PSM, 2000, 600);
}

void expect_same_metrics(const EvaluationResult& a, const EvaluationResult& b) {
    EXPECT_EQ(a.auc_roc, b.auc_roc);
    EXPECT_EQ(a.auc_pr, b.auc_pr);
    EXPECT_EQ(a.f1, b.f1);
    EXPECT_EQ(a.f1_adj, b.f1_adj);
    EXPECT_EQ(a.threshold, b.threshold);
    EXPECT_EQ(a.threshold_adj, b.threshold_adj);
}

}  // namespace

TEST(Config, SettingsAcceptDashOrUnderscore) {
    ExperimentConfig c;
    apply_setting(c, "global-epochs", "7");
    apply_setting(c, "local_epochs", "2");
    apply_setting(c, "fl", "scaffold");
    apply_setting(c, "model", "tranad");
    apply_setting(c, "partition", "equal");
    EXPECT_EQ(c.federation.global_epochs, 7);
    EXPECT_EQ(c.federation.local_epochs, 2);
    EXPECT_EQ(c.federation.strategy, Strategy::Scaffold);
    EXPECT_EQ(c.model.kind, ModelKind::TranAD);
    EXPECT_EQ(*c.partition, PartitionScheme::Equal);
    EXPECT_THROW(apply_setting(c, "bogus", "1"), ConfigError);
    EXPECT_THROW(apply_setting(c, "clients", "4x"), ConfigError);
    EXPECT_THROW(apply_setting(c, "fl", "fedsgd"), ConfigError);
}

TEST(Config, TextFileWithComments) {
    ExperimentConfig c;
    std::istringstream in("# experiment\n dataset = smd\nmodel: gdn  # detector\n\nbeta=0.1\nsmoke = true\n");
    apply_config_text(c, in);
    EXPECT_EQ(c.dataset, DatasetName::SMD);
    EXPECT_EQ(c.model.kind, ModelKind::GDN);
    EXPECT_DOUBLE_EQ(c.beta, 0.1);
    EXPECT_TRUE(c.smoke);
    std::istringstream bad("dataset smd\n");
    EXPECT_THROW(apply_config_text(c, bad), ConfigError);
}

TEST(Config, ResolveFillsDatasetDefaults) {
    ExperimentConfig c;
    auto r = resolve(c);
    EXPECT_EQ(*r.partition, PartitionScheme::DirichletContiguous);
    EXPECT_EQ(r.clients, 24);
    EXPECT_EQ(r.model.input_dims, 25);
    EXPECT_EQ(r.federation.local_epochs, 10);
    c.dataset = DatasetName::SMD;
    r = resolve(c);
    EXPECT_EQ(*r.partition, PartitionScheme::PerSeries);
    EXPECT_EQ(r.clients, 28);
    EXPECT_EQ(r.model.input_dims, 38);
    c.dataset = DatasetName::SMAP;
    EXPECT_EQ(resolve(c).clients, 54);
}

TEST(Config, ResolveRejectsInvalidFields) {
    ExperimentConfig c;
    c.dataset = DatasetName::SMD;
    c.clients = 5;
    EXPECT_THROW(resolve(c), ConfigError);
    c = ExperimentConfig{};
    c.beta = 0.0;
    EXPECT_THROW(resolve(c), ConfigError);
    c = ExperimentConfig{};
    c.federation.local_epochs = 0;
    EXPECT_THROW(resolve(c), ConfigError);
    c = ExperimentConfig{};
    c.model.hidden_size = 0;
    EXPECT_THROW(resolve(c), ConfigError);
}

TEST(Config, SmokeShrinksModelAndRounds) {
    ExperimentConfig c;
    c.smoke = true;
    const auto r = resolve(c);
    EXPECT_EQ(r.model.hidden_size, kSmokeHidden);
    EXPECT_EQ(r.model.latent_size, kSmokeLatent);
    EXPECT_EQ(r.federation.global_epochs, 3);
}

TEST(Fingerprint, StableAndIgnoresSeedOutAndWorkers) {
    ExperimentConfig a;
    ExperimentConfig b = a;
    b.federation.seed = 99;
    b.out_dir = "elsewhere";
    b.federation.workers = 8;
    EXPECT_EQ(fingerprint(a), fingerprint(b));
    EXPECT_EQ(fingerprint(a).size(), 16u);
    // Explicit defaults and implicit defaults are the same experiment.
    b.partition = PartitionScheme::DirichletContiguous;
    b.clients = 24;
    EXPECT_EQ(fingerprint(a), fingerprint(b));
}

TEST(Fingerprint, ChangesWithEveryResultField) {
    std::set<std::string> seen;
    ExperimentConfig base;
    seen.insert(fingerprint(base));
    auto add = [&](auto edit) {
        ExperimentConfig c = base;
        edit(c);
        EXPECT_TRUE(seen.insert(fingerprint(c)).second) << canonical_config(c);
    };
    add([](ExperimentConfig& c) { c.beta = 0.1; });
    add([](ExperimentConfig& c) { c.model.kind = ModelKind::GDN; });
    add([](ExperimentConfig& c) { c.federation.strategy = Strategy::Moon; });
    add([](ExperimentConfig& c) { c.federation.local_epochs = 3; });
    add([](ExperimentConfig& c) { c.federation.global_epochs = 2; });
    add([](ExperimentConfig& c) { c.federation.mu = 0.5; });
    add([](ExperimentConfig& c) { c.clients = 12; });
    add([](ExperimentConfig& c) { c.partition = PartitionScheme::Equal; });
    add([](ExperimentConfig& c) { c.model.window_len = 20; });
    add([](ExperimentConfig& c) { c.smoke = true; });
}

TEST(Fingerprint, BetaIrrelevantWithoutDirichlet) {
    ExperimentConfig a;
    a.dataset = DatasetName::SMD;
    ExperimentConfig b = a;
    b.beta = 5.0;
    EXPECT_EQ(fingerprint(a), fingerprint(b));
}

TEST(Runner, ConfigEchoesReferenceSetting) {
    ExperimentConfig c;
    c.dataset = DatasetName::PSM;
    c.model.kind = ModelKind::USAD;
    c.federation.strategy = Strategy::FedAvg;
    c.partition = PartitionScheme::DirichletContiguous;
    c.beta = 0.5;
    c.clients = 24;
    const std::string canon = canonical_config(c);
    for (const char* line : {"dataset=PSM\n", "model=usad\n", "fl=fedavg\n", "partition=dirichlet\n",
                             "clients=24\n", "beta=0.5\n", "local_epochs=10\n"})
        EXPECT_NE(canon.find(line), std::string::npos) << line << "\n" << canon;
}

TEST(Runner, SameConfigAndSeedGiveIdenticalRecords) {
    const auto& raw = fixture::raw_bundle(DatasetName::PSM, 2000, 600);
    const auto cfg = quick(ModelKind::USAD, Strategy::Scaffold);
    const auto a = run_experiment_on(cfg, raw);
    const auto b = run_experiment_on(cfg, raw);
    ASSERT_TRUE(a.ok) << a.error;
    ASSERT_TRUE(b.ok) << b.error;
    expect_same_metrics(a.metrics, b.metrics);
    EXPECT_EQ(a.loss_curves, b.loss_curves);
    EXPECT_EQ(a.config_fingerprint, b.config_fingerprint);
}

TEST(Runner, WorkerCountDoesNotChangeNumbers) {
    const auto& raw = fixture::raw_bundle(DatasetName::PSM, 2000, 600);
    auto cfg = quick(ModelKind::LstmAE, Strategy::FedProx);
    const auto a = run_experiment_on(cfg, raw);
    cfg.federation.workers = 4;
    const auto b = run_experiment_on(cfg, raw);
    ASSERT_TRUE(a.ok && b.ok);
    expect_same_metrics(a.metrics, b.metrics);
    EXPECT_EQ(a.loss_curves, b.loss_curves);
}

TEST(Runner, DifferentSeedsDiffer) {
    const auto& raw = fixture::raw_bundle(DatasetName::PSM, 2000, 600);
    auto cfg = quick();
    const auto a = run_experiment_on(cfg, raw);
    cfg.federation.seed += 1;
    const auto b = run_experiment_on(cfg, raw);
    ASSERT_TRUE(a.ok && b.ok);
    EXPECT_NE(a.loss_curves, b.loss_curves);
}

TEST(Runner, ZeroGlobalEpochsGivesUntrainedRecord) {
    const auto raw = truncate_training(fixture::raw_bundle(DatasetName::PSM, 2000, 600), 500);
    ExperimentConfig cfg;
    cfg.model.kind = ModelKind::DeepSVDD;
    cfg.model.hidden_size = 8;
    cfg.model.latent_size = 4;
    cfg.clients = 4;
    cfg.federation.global_epochs = 0;
    const auto r = run_experiment_on(cfg, raw);
    ASSERT_TRUE(r.ok) << r.error;
    EXPECT_TRUE(r.round_seconds.empty());
    EXPECT_EQ(r.seconds_per_round(), 0.0);
    EXPECT_GE(r.metrics.auc_roc, 0.0);
    EXPECT_LE(r.metrics.auc_roc, 1.0);
    EXPECT_GT(r.total_seconds, 0.0);
}

TEST(Runner, TimingSanity) {
    const auto& raw = fixture::raw_bundle(DatasetName::PSM, 2000, 600);
    const auto r = run_experiment_on(quick(ModelKind::GDN, Strategy::Moon), raw);
    ASSERT_TRUE(r.ok) << r.error;
    ASSERT_EQ(r.round_seconds.size(), 3u);
    double sum = 0.0;
    for (double s : r.round_seconds) {
        EXPECT_GT(s, 0.0);
        sum += s;
    }
    EXPECT_LE(sum, r.total_seconds);
}

TEST(Runner, ErrorsBecomeFailedRecordsWithStage) {
    const auto& raw = fixture::raw_bundle(DatasetName::PSM, 2000, 600);
    auto cfg = quick();
    cfg.model.window_len = 0;
    auto r = run_experiment_on(cfg, raw);
    EXPECT_FALSE(r.ok);
    EXPECT_EQ(r.failed_stage, "config");
    EXPECT_FALSE(r.error.empty());

    cfg = quick();
    cfg.clients = 5000;  // more clients than rows
    r = run_experiment_on(cfg, raw);
    EXPECT_FALSE(r.ok);
    EXPECT_EQ(r.failed_stage, "partition");

    cfg = quick();
    cfg.dataset = DatasetName::SMAP;
    cfg.clients = 0;
    r = run_experiment_on(cfg, raw);
    EXPECT_FALSE(r.ok);
    EXPECT_EQ(r.failed_stage, "load");
}

TEST(Runner, MissingDatasetOnDiskIsLoadFailure) {
    auto cfg = quick();
    cfg.data_root = fresh_dir("nodata");
    cfg.out_dir = fresh_dir("nodata_out");
    const auto recs = run_experiment(cfg);
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_FALSE(recs[0].ok);
    EXPECT_EQ(recs[0].failed_stage, "load");
    EXPECT_NE(recs[0].error.find("manifest"), std::string::npos);
    EXPECT_EQ(RecordStore(cfg.out_dir / "records.jsonl").load().size(), 1u);
}

TEST(Records, JsonRoundTrip) {
    const auto& raw = fixture::raw_bundle(DatasetName::PSM, 2000, 600);
    const auto r = run_experiment_on(quick(), raw);
    ASSERT_TRUE(r.ok);
    const auto back = record_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_EQ(back.config_fingerprint, r.config_fingerprint);
    EXPECT_EQ(back.seed, r.seed);
    EXPECT_EQ(back.strategy, r.strategy);
    EXPECT_EQ(back.partition, r.partition);
    EXPECT_EQ(back.clients, r.clients);
    EXPECT_EQ(back.round_seconds, r.round_seconds);
    EXPECT_EQ(back.loss_curves, r.loss_curves);
    EXPECT_EQ(back.canonical, r.canonical);
    expect_same_metrics(back.metrics, r.metrics);
}

TEST(Records, InfiniteThresholdSurvivesJson) {
    ResultsRecord r;
    r.metrics.threshold = std::numeric_limits<double>::infinity();
    const auto back = record_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_TRUE(std::isinf(back.metrics.threshold));
}

TEST(Records, TornLineIsSkippedAndNotGlued) {
    const auto dir = fresh_dir("torn");
    fs::create_directories(dir);
    RecordStore store(dir / "records.jsonl");
    ResultsRecord a;
    a.config_fingerprint = "aaaa";
    store.append(a);
    {
        std::ofstream out(store.path(), std::ios::app);
        out << R"({"config_fingerprint":"half)";
    }
    ResultsRecord b;
    b.config_fingerprint = "bbbb";
    store.append(b);
    const auto loaded = store.load();
    ASSERT_EQ(loaded.size(), 2u);
    EXPECT_EQ(loaded[0].config_fingerprint, "aaaa");
    EXPECT_EQ(loaded[1].config_fingerprint, "bbbb");
}

TEST(Records, ConcurrentAppendsAreWholeLines) {
    const auto dir = fresh_dir("concurrent");
    RecordStore store(dir / "records.jsonl");
    detail::parallel_for(64, 8, [&](std::size_t i) {
        ResultsRecord r;
        r.seed = i;
        r.loss_curves.assign(5, std::vector<double>(50, 0.125 * static_cast<double>(i)));
        store.append(r);
    });
    const auto loaded = store.load();
    ASSERT_EQ(loaded.size(), 64u);
    std::set<std::uint64_t> seeds;
    for (const auto& r : loaded) seeds.insert(r.seed);
    EXPECT_EQ(seeds.size(), 64u);
}

TEST(Grid, SingleCellMatchesRunExperiment) {
    GridSpec spec;
    spec.base = quick();
    spec.base.out_dir = fresh_dir("grid1");
    const auto out = run_grid(spec, psm_loader);
    ASSERT_EQ(out.records.size(), 1u);
    EXPECT_EQ(out.executed, 1u);
    const auto direct = run_experiment_on(spec.base, psm_loader(spec.base));
    ASSERT_TRUE(out.records[0].ok);
    expect_same_metrics(out.records[0].metrics, direct.metrics);
    EXPECT_EQ(out.records[0].config_fingerprint, direct.config_fingerprint);
}

TEST(Grid, RerunResumesWithoutTraining) {
    GridSpec spec;
    spec.base = quick();
    spec.base.out_dir = fresh_dir("resume");
    spec.strategies = {Strategy::FedAvg, Strategy::Isolated};
    spec.workers = 2;
    const auto first = run_grid(spec, psm_loader);
    EXPECT_EQ(first.executed, 2u);
    int loads = 0;
    auto counting = [&](const ExperimentConfig& c) {
        ++loads;
        return psm_loader(c);
    };
    const auto second = run_grid(spec, counting);
    EXPECT_EQ(second.executed, 0u);
    EXPECT_EQ(second.resumed, 2u);
    EXPECT_EQ(loads, 0);
    for (std::size_t i = 0; i < 2; ++i) expect_same_metrics(first.records[i].metrics, second.records[i].metrics);
    EXPECT_EQ(RecordStore(spec.base.out_dir / "records.jsonl").load().size(), 2u);
}

TEST(Grid, FailedCellsAreRetriedOnResume) {
    GridSpec spec;
    spec.base = quick();
    spec.base.out_dir = fresh_dir("retry");
    auto failing = [](const ExperimentConfig&) -> DatasetBundle { throw LoadError("disk gone"); };
    const auto first = run_grid(spec, failing);
    ASSERT_FALSE(first.records[0].ok);
    EXPECT_EQ(first.records[0].failed_stage, "load");
    const auto second = run_grid(spec, psm_loader);
    EXPECT_EQ(second.executed, 1u);
    EXPECT_TRUE(second.records[0].ok);
}

TEST(Grid, TwoByTwoHasDistinctFingerprints) {
    GridSpec spec;
    spec.base = quick();
    spec.base.out_dir = fresh_dir("grid4");
    spec.models = {ModelKind::DeepSVDD, ModelKind::LstmAE};
    spec.betas = {0.1, 5.0};
    spec.workers = 4;
    const auto out = run_grid(spec, psm_loader);
    ASSERT_EQ(out.records.size(), 4u);
    std::set<std::string> fps;
    for (const auto& r : out.records) {
        EXPECT_TRUE(r.ok) << r.error;
        fps.insert(r.config_fingerprint);
    }
    EXPECT_EQ(fps.size(), 4u);
}

TEST(Grid, ErrorsStayInsideTheirCell) {
    GridSpec spec;
    spec.base = quick();
    spec.base.out_dir = fresh_dir("isolate");
    spec.datasets = {DatasetName::SMAP, DatasetName::PSM};
    const auto out = run_grid(spec, psm_loader);
    ASSERT_EQ(out.records.size(), 2u);
    EXPECT_FALSE(out.records[0].ok);
    EXPECT_TRUE(out.records[1].ok);
}

TEST(Runner, CheckpointReproducesRecordedMetrics) {
    const auto dir = fresh_dir("ckpt");
    const auto cfg = quick();
    RunOptions opts;
    opts.checkpoint_dir = dir;
    const auto raw = psm_loader(cfg);
    const auto rec = run_experiment_on(cfg, raw, opts);
    ASSERT_TRUE(rec.ok) << rec.error;
    std::ifstream in(dir / (rec.config_fingerprint + "_seed3.params"));
    ASSERT_TRUE(in.good());
    const ParameterSet p = ParameterSet::read(in);
    const auto bundle = normalize(truncate_training(raw, kSmokeTrainRows));
    expect_same_metrics(evaluate_model(p, resolve(cfg).model, bundle), rec.metrics);
    fs::remove_all(dir);
}

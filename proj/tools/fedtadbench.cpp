// fedtadbench: generate data, run experiments and grids, emit reports.

#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedtad/report.hpp"
#include "fedtad/runner.hpp"
#include "fedtad/synthetic.hpp"

using namespace fedtad;

namespace {

// Experiment flags shared by `run` and `grid`. Values given on the command
// line are replayed over the config file.
struct ExperimentFlags {
    std::string config;
    std::vector<std::pair<std::string, CLI::Option*>> opts;
    std::map<std::string, std::string> values;
    bool smoke = false;
    CLI::Option* smoke_opt = nullptr;

    void add(CLI::App& app) {
        app.add_option("--config", config, "Config file of key = value lines");
        for (const char* name : {"dataset", "data-root", "model", "fl", "clients", "beta", "partition",
                                 "global-epochs", "local-epochs", "seed", "out", "workers", "repeats", "mu",
                                 "tau", "contrastive-weight", "window-len", "hidden-size", "latent-size",
                                 "learning-rate", "batch-size"}) {
            auto* o = app.add_option(std::string("--") + name, values[name]);
            opts.emplace_back(name, o);
        }
        smoke_opt = app.add_flag("--smoke", smoke, "Desk-scale profile");
    }

    ExperimentConfig build() const {
        ExperimentConfig cfg;
        if (!config.empty()) apply_config_file(cfg, config);
        for (const auto& [name, o] : opts)
            if (o->count()) apply_setting(cfg, name, values.at(name));
        if (smoke_opt->count()) cfg.smoke = smoke;
        return cfg;
    }
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

RoundLogSink stderr_log() {
    static std::mutex mu;
    return [](const RoundLog& l) {
        std::lock_guard lock(mu);
        write_round_log(std::cerr, l);
    };
}

void print_record(const ResultsRecord& r) {
    if (r.ok) {
        std::printf("%s seed=%llu %s/%s/%s auc_roc=%.4f auc_pr=%.4f f1=%.4f f1_adj=%.4f sec/round=%.3f\n",
                    r.config_fingerprint.c_str(), static_cast<unsigned long long>(r.seed),
                    to_string(r.dataset).c_str(), cli_name(r.model).c_str(), cli_name(r.strategy).c_str(),
                    r.metrics.auc_roc, r.metrics.auc_pr, r.metrics.f1, r.metrics.f1_adj, r.seconds_per_round());
    } else {
        std::fprintf(stderr, "error: stage=%s: %s\n", r.failed_stage.c_str(), r.error.c_str());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated time series anomaly detection benchmark"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Write synthetic datasets in the on-disk layout");
    std::string gen_dataset = "all";
    std::string gen_root = "data";
    SyntheticConfig syn;
    gen->add_option("--dataset", gen_dataset, "smd, smap, psm or all");
    gen->add_option("--root", gen_root, "Output root directory");
    gen->add_option("--train-rows", syn.train_rows, "Training rows per entity");
    gen->add_option("--test-rows", syn.test_rows, "Test rows per entity");
    gen->add_option("--seed", syn.seed);

    // run
    auto* run = app.add_subcommand("run", "Run one experiment");
    ExperimentFlags run_flags;
    run_flags.add(*run);

    // grid
    auto* grid = app.add_subcommand("grid", "Run a resumable grid of experiments");
    ExperimentFlags grid_flags;
    grid_flags.add(*grid);
    std::string g_datasets, g_models, g_fls, g_partitions, g_betas, g_seeds;
    int jobs = 1;
    grid->add_option("--datasets", g_datasets, "Comma-separated datasets");
    grid->add_option("--models", g_models, "Comma-separated detectors");
    grid->add_option("--fls", g_fls, "Comma-separated training regimes");
    grid->add_option("--partitions", g_partitions, "Comma-separated partition schemes");
    grid->add_option("--betas", g_betas, "Comma-separated Dirichlet concentrations");
    grid->add_option("--seeds", g_seeds, "Comma-separated seeds");
    grid->add_option("--jobs", jobs, "Experiments run concurrently");

    // report
    auto* rep = app.add_subcommand("report", "Emit tables and figures from records");
    std::string records_path = "out/records.jsonl";
    std::string rep_out = "out/report";
    std::string rep_kind = "all";
    std::string rep_dataset = "psm";
    std::string rep_model = "usad";
    rep->add_option("--records", records_path);
    rep->add_option("--out", rep_out);
    rep->add_option("--kind", rep_kind, "auc_table, pr_table, f1_table, time_table, beta_figure, isolation_figure or all");
    rep->add_option("--dataset", rep_dataset, "Subject dataset of timing table and figures");
    rep->add_option("--model", rep_model, "Subject detector of timing table and figures");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            std::vector<DatasetName> names;
            if (gen_dataset == "all") names.assign(kAllDatasets.begin(), kAllDatasets.end());
            else names.push_back(parse_dataset_name(gen_dataset));
            for (auto d : names) {
                generate_dataset(d, gen_root, syn);
                std::printf("wrote %s/%s\n", gen_root.c_str(), to_string(d).c_str());
            }
            return 0;
        }
        if (run->parsed()) {
            const ExperimentConfig cfg = run_flags.build();
            resolve(cfg);
            RunOptions opts;
            opts.log = stderr_log();
            opts.checkpoint_dir = cfg.out_dir / "checkpoints";
            int failed = 0;
            for (const auto& r : run_experiment(cfg, opts)) {
                print_record(r);
                failed += !r.ok;
            }
            return failed ? 1 : 0;
        }
        if (grid->parsed()) {
            GridSpec spec;
            spec.base = grid_flags.build();
            spec.workers = jobs;
            for (const auto& s : split_list(g_datasets)) spec.datasets.push_back(parse_dataset_name(s));
            for (const auto& s : split_list(g_models)) spec.models.push_back(parse_model_kind(s));
            for (const auto& s : split_list(g_fls)) spec.strategies.push_back(parse_strategy(s));
            for (const auto& s : split_list(g_partitions)) spec.partitions.push_back(parse_partition_scheme(s));
            for (const auto& s : split_list(g_betas)) spec.betas.push_back(std::stod(s));
            for (const auto& s : split_list(g_seeds)) spec.seeds.push_back(std::stoull(s));
            RunOptions opts;
            opts.log = stderr_log();
            opts.checkpoint_dir = spec.base.out_dir / "checkpoints";
            const GridOutcome out = run_grid(spec, load_for, opts);
            int failed = 0;
            for (const auto& r : out.records) {
                print_record(r);
                failed += !r.ok;
            }
            std::printf("grid: %zu cells, %zu executed, %zu resumed, %d failed\n", out.records.size(), out.executed,
                        out.resumed, failed);
            return failed ? 1 : 0;
        }
        if (rep->parsed()) {
            const auto records = RecordStore(records_path).load();
            ReportOptions opt;
            opt.dataset = parse_dataset_name(rep_dataset);
            opt.model = parse_model_kind(rep_model);
            std::vector<ReportKind> kinds;
            if (rep_kind == "all") kinds.assign(kAllReports.begin(), kAllReports.end());
            else kinds.push_back(parse_report_kind(rep_kind));
            for (auto k : kinds) {
                const auto files = emit_report(records, k, rep_out, opt);
                for (const auto& f : files.files) std::printf("wrote %s\n", f.string().c_str());
                if (!files.missing.empty())
                    std::printf("%s: %zu missing cells\n", to_string(k).c_str(), files.missing.size());
            }
            return 0;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: stage=%s: %s\n", e.stage().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: stage=unknown: %s\n", e.what());
        return 1;
    }
    return 0;
}

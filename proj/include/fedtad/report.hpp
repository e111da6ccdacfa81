#pragma once

// Tables and figures assembled from result records.
//
// Metric tables have one block of rows per dataset, one row per training
// regime and a pair of columns per detector. Each value column is followed by
// a flag column holding "best" or "second" within its dataset block. Cells
// with no completed record stay empty and are listed as missing.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedtad/error.hpp"
#include "fedtad/runner.hpp"

namespace fedtad {

enum class ReportKind { AucTable, PrTable, F1Table, TimeTable, BetaFigure, IsolationFigure };

inline constexpr std::array<ReportKind, 6> kAllReports{ReportKind::AucTable,  ReportKind::PrTable,
                                                       ReportKind::F1Table,   ReportKind::TimeTable,
                                                       ReportKind::BetaFigure, ReportKind::IsolationFigure};

inline std::string to_string(ReportKind k) {
    switch (k) {
        case ReportKind::AucTable: return "auc_table";
        case ReportKind::PrTable: return "pr_table";
        case ReportKind::F1Table: return "f1_table";
        case ReportKind::TimeTable: return "time_table";
        case ReportKind::BetaFigure: return "beta_figure";
        case ReportKind::IsolationFigure: return "isolation_figure";
    }
    return "?";
}

inline ReportKind parse_report_kind(std::string_view s) {
    for (auto k : kAllReports)
        if (s == to_string(k)) return k;
    throw ConfigError("unknown report kind: " + std::string(s));
}

struct ReportOptions {
    // Subject of the timing table and both figures.
    DatasetName dataset = DatasetName::PSM;
    ModelKind model = ModelKind::USAD;
    std::vector<double> betas{0.1, 0.5, 5.0};
};

struct ReportTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> missing;
};

// Regimes in table order; centralized training is labelled "Original".
inline constexpr std::array<Strategy, 5> kTableRegimes{Strategy::Centralized, Strategy::FedAvg, Strategy::FedProx,
                                                       Strategy::Scaffold, Strategy::Moon};

inline std::string table_label(Strategy s) { return s == Strategy::Centralized ? "Original" : to_string(s); }

namespace detail {

inline std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline bool default_partition_record(const ResultsRecord& r) {
    if (r.partition != default_partition(r.dataset)) return false;
    return r.partition != PartitionScheme::DirichletContiguous || r.beta == 0.5;
}

// Mean of the chosen value over completed records accepted by `keep`.
template <class Keep, class Value>
std::optional<double> mean_over(std::span<const ResultsRecord> records, Keep keep, Value value) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : records) {
        if (!r.ok || !keep(r)) continue;
        sum += value(r);
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / n;
}

using MetricFn = double (*)(const EvaluationResult&);

struct MetricColumn {
    const char* name;
    MetricFn get;
};

inline std::array<MetricColumn, 2> table_metrics(ReportKind k) {
    switch (k) {
        case ReportKind::AucTable:
            return {{{"AUC-ROC", [](const EvaluationResult& m) { return m.auc_roc; }},
                     {"AUC-PR", [](const EvaluationResult& m) { return m.auc_pr; }}}};
        case ReportKind::PrTable:
            return {{{"Precision", [](const EvaluationResult& m) { return m.precision_adj; }},
                     {"Recall", [](const EvaluationResult& m) { return m.recall_adj; }}}};
        default:
            return {{{"F1", [](const EvaluationResult& m) { return m.f1; }},
                     {"F1(adjusted)", [](const EvaluationResult& m) { return m.f1_adj; }}}};
    }
}

inline const std::array<MetricColumn, 4>& figure_metrics() {
    static const std::array<MetricColumn, 4> cols{{
        {"AUC-ROC", [](const EvaluationResult& m) { return m.auc_roc; }},
        {"AUC-PR", [](const EvaluationResult& m) { return m.auc_pr; }},
        {"F1", [](const EvaluationResult& m) { return m.f1; }},
        {"F1(adjusted)", [](const EvaluationResult& m) { return m.f1_adj; }},
    }};
    return cols;
}

// Marks the largest and second-largest value in rows [begin, end) of column
// `col`; the earlier row wins a tie.
inline void flag_block(std::vector<std::vector<std::optional<double>>>& values,
                       std::vector<std::vector<std::string>>& rows, std::size_t begin, std::size_t end,
                       std::size_t col, std::size_t flag_col) {
    std::optional<std::size_t> best, second;
    for (std::size_t r = begin; r < end; ++r) {
        const auto& v = values[r][col];
        if (!v) continue;
        if (!best || *v > *values[*best][col]) {
            second = best;
            best = r;
        } else if (!second || *v > *values[*second][col]) {
            second = r;
        }
    }
    if (best) rows[*best][flag_col] = "best";
    if (second) rows[*second][flag_col] = "second";
}

inline ReportTable metric_table(std::span<const ResultsRecord> records, ReportKind kind) {
    ReportTable t;
    const auto metrics = table_metrics(kind);
    t.header = {"dataset", "method"};
    for (auto m : kAllModels)
        for (const auto& mc : metrics) {
            t.header.push_back(to_string(m) + " " + mc.name);
            t.header.push_back(to_string(m) + " " + mc.name + " flag");
        }

    std::vector<DatasetName> present;
    for (auto d : kAllDatasets)
        for (const auto& r : records)
            if (r.dataset == d) {
                present.push_back(d);
                break;
            }

    std::vector<std::vector<std::optional<double>>> values;
    for (auto d : present) {
        const std::size_t block = t.rows.size();
        for (auto s : kTableRegimes) {
            std::vector<std::string> row{to_string(d), table_label(s)};
            std::vector<std::optional<double>> vrow{std::nullopt, std::nullopt};
            for (auto m : kAllModels) {
                auto keep = [&](const ResultsRecord& r) {
                    return r.dataset == d && r.model == m && r.strategy == s && default_partition_record(r);
                };
                bool any = false;
                for (const auto& mc : metrics) {
                    auto v = mean_over(records, keep, [&](const ResultsRecord& r) { return mc.get(r.metrics); });
                    row.push_back(v ? fmt4(*v) : "");
                    row.push_back("");
                    vrow.push_back(v);
                    vrow.push_back(std::nullopt);
                    any = any || v.has_value();
                }
                if (!any) t.missing.push_back(to_string(d) + "/" + table_label(s) + "/" + to_string(m));
            }
            t.rows.push_back(std::move(row));
            values.push_back(std::move(vrow));
        }
        for (std::size_t c = 2; c < t.header.size(); c += 2) flag_block(values, t.rows, block, t.rows.size(), c, c + 1);
    }
    return t;
}

inline ReportTable time_table(std::span<const ResultsRecord> records, const ReportOptions& opt) {
    ReportTable t;
    t.header = {"learning_manner", "federated", "seconds_per_global_epoch"};
    for (auto s : {Strategy::Centralized, Strategy::Isolated, Strategy::FedAvg, Strategy::FedProx,
                   Strategy::Scaffold, Strategy::Moon}) {
        auto keep = [&](const ResultsRecord& r) {
            return r.dataset == opt.dataset && r.model == opt.model && r.strategy == s && default_partition_record(r) &&
                   !r.round_seconds.empty();
        };
        auto v = mean_over(records, keep, [](const ResultsRecord& r) { return r.seconds_per_round(); });
        if (!v) t.missing.push_back(to_string(s));
        char buf[32];
        if (v) std::snprintf(buf, sizeof buf, "%.6f", *v);
        t.rows.push_back({to_string(s), is_federated(s) ? "Y" : "N", v ? std::string(buf) : ""});
    }
    return t;
}

inline std::string beta_label(double b) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "dirichlet beta=%g", b);
    return buf;
}

inline ReportTable beta_figure(std::span<const ResultsRecord> records, const ReportOptions& opt) {
    ReportTable t;
    t.header = {"partition"};
    for (const auto& mc : figure_metrics()) t.header.push_back(mc.name);
    auto add_row = [&](const std::string& label, auto keep) {
        std::vector<std::string> row{label};
        bool any = false;
        for (const auto& mc : figure_metrics()) {
            auto v = mean_over(records, keep, [&](const ResultsRecord& r) { return mc.get(r.metrics); });
            row.push_back(v ? fmt4(*v) : "");
            any = any || v.has_value();
        }
        if (!any) t.missing.push_back(label);
        t.rows.push_back(std::move(row));
    };
    auto base = [&](const ResultsRecord& r) {
        return r.dataset == opt.dataset && r.model == opt.model && r.strategy == Strategy::FedAvg;
    };
    add_row("equal", [&](const ResultsRecord& r) { return base(r) && r.partition == PartitionScheme::Equal; });
    for (double b : opt.betas)
        add_row(beta_label(b), [&, b](const ResultsRecord& r) {
            return base(r) && r.partition == PartitionScheme::DirichletContiguous && r.beta == b;
        });
    return t;
}

inline ReportTable isolation_figure(std::span<const ResultsRecord> records, const ReportOptions& opt) {
    ReportTable t;
    t.header = {"training"};
    for (const auto& mc : figure_metrics()) t.header.push_back(mc.name);
    for (auto s : {Strategy::Isolated, Strategy::FedAvg, Strategy::FedProx, Strategy::Scaffold, Strategy::Moon}) {
        auto keep = [&](const ResultsRecord& r) {
            return r.dataset == opt.dataset && r.model == opt.model && r.strategy == s && default_partition_record(r);
        };
        std::vector<std::string> row{to_string(s)};
        bool any = false;
        for (const auto& mc : figure_metrics()) {
            auto v = mean_over(records, keep, [&](const ResultsRecord& r) { return mc.get(r.metrics); });
            row.push_back(v ? fmt4(*v) : "");
            any = any || v.has_value();
        }
        if (!any) t.missing.push_back(to_string(s));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

// Grouped bar chart: one group per row, one bar per value column.
inline std::string render_svg(const ReportTable& t, const std::string& title) {
    const std::size_t groups = t.rows.size();
    const std::size_t series = t.header.size() - 1;
    const double bar = 14.0, gap = 18.0, left = 50.0, top = 40.0, height = 220.0;
    const double width = left + static_cast<double>(groups) * (static_cast<double>(series) * bar + gap) + 160.0;
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    std::string svg;
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"sans-serif\" "
                  "font-size=\"11\">\n",
                  width, top + height + 80.0);
    svg += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.0f\" y=\"20\" font-size=\"13\">%s</text>\n", left, title.c_str());
    svg += buf;
    for (int tick = 0; tick <= 4; ++tick) {
        const double y = top + height - height * tick / 4.0;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.0f\" y1=\"%.1f\" x2=\"%.0f\" y2=\"%.1f\" stroke=\"#ddd\"/>"
                      "<text x=\"%.0f\" y=\"%.1f\" text-anchor=\"end\">%.2f</text>\n",
                      left, y, width - 160.0, y, left - 4.0, y + 4.0, tick / 4.0);
        svg += buf;
    }
    for (std::size_t g = 0; g < groups; ++g) {
        const double x0 = left + 6.0 + static_cast<double>(g) * (static_cast<double>(series) * bar + gap);
        for (std::size_t s = 0; s < series; ++s) {
            const std::string& cell = t.rows[g][s + 1];
            if (cell.empty()) continue;
            const double v = std::clamp(std::stod(cell), 0.0, 1.0);
            std::snprintf(buf, sizeof buf,
                          "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"%s\"/>\n",
                          x0 + static_cast<double>(s) * bar, top + height - v * height, bar - 2.0, v * height,
                          colors[s % 6]);
            svg += buf;
        }
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.1f\" y=\"%.1f\" transform=\"rotate(30 %.1f %.1f)\">%s</text>\n", x0,
                      top + height + 14.0, x0, top + height + 14.0, t.rows[g][0].c_str());
        svg += buf;
    }
    for (std::size_t s = 0; s < series; ++s) {
        const double y = top + 14.0 * static_cast<double>(s);
        std::snprintf(buf, sizeof buf,
                      "<rect x=\"%.0f\" y=\"%.0f\" width=\"10\" height=\"10\" fill=\"%s\"/>"
                      "<text x=\"%.0f\" y=\"%.0f\">%s</text>\n",
                      width - 150.0, y, colors[s % 6], width - 135.0, y + 9.0, t.header[s + 1].c_str());
        svg += buf;
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace detail

inline ReportTable build_report(std::span<const ResultsRecord> records, ReportKind kind,
                                const ReportOptions& opt = {}) {
    switch (kind) {
        case ReportKind::AucTable:
        case ReportKind::PrTable:
        case ReportKind::F1Table: return detail::metric_table(records, kind);
        case ReportKind::TimeTable: return detail::time_table(records, opt);
        case ReportKind::BetaFigure: return detail::beta_figure(records, opt);
        case ReportKind::IsolationFigure: return detail::isolation_figure(records, opt);
    }
    throw ConfigError("unknown report kind");
}

inline void write_csv(std::ostream& os, const ReportTable& t) {
    for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << detail::csv_field(t.header[i]);
    os << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << detail::csv_field(row[i]);
        os << '\n';
    }
}

struct ReportFiles {
    std::vector<std::filesystem::path> files;
    std::vector<std::string> missing;
};

// Writes <out>/<kind>.csv, <out>/<kind>_missing.txt when cells are absent,
// and <out>/<kind>.svg for figures.
inline ReportFiles emit_report(std::span<const ResultsRecord> records, ReportKind kind,
                               const std::filesystem::path& out_dir, const ReportOptions& opt = {}) {
    std::filesystem::create_directories(out_dir);
    const ReportTable t = build_report(records, kind, opt);
    ReportFiles files;
    files.missing = t.missing;
    const std::string stem = to_string(kind);
    {
        const auto p = out_dir / (stem + ".csv");
        std::ofstream out(p);
        if (!out) throw LoadError("cannot write " + p.string());
        write_csv(out, t);
        files.files.push_back(p);
    }
    const auto miss = out_dir / (stem + "_missing.txt");
    if (!t.missing.empty()) {
        std::ofstream out(miss);
        for (const auto& m : t.missing) out << m << '\n';
        files.files.push_back(miss);
    } else {
        std::filesystem::remove(miss);
    }
    if (kind == ReportKind::BetaFigure || kind == ReportKind::IsolationFigure) {
        const auto p = out_dir / (stem + ".svg");
        std::ofstream out(p);
        const std::string title = to_string(opt.model) + " on " + to_string(opt.dataset) +
                                  (kind == ReportKind::BetaFigure ? ": data partitions" : ": isolated vs federated");
        out << detail::render_svg(t, title);
        files.files.push_back(p);
    }
    return files;
}

}  // namespace fedtad

#pragma once

// Dataset ingestion, min-max normalization and sliding windows.
//
// On-disk layout, one directory per dataset under a common root:
//
//   <root>/<DATASET>/manifest.txt
//   <root>/<DATASET>/<entity>_train.csv
//   <root>/<DATASET>/<entity>_test.csv
//   <root>/<DATASET>/<entity>_labels.csv
//
// The manifest is plain `key: value` text with keys `dataset`, `dims` and
// `entities` (comma-separated ids). CSVs have no header; an empty field or
// `nan` marks a missing value.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedtad/error.hpp"

namespace fedtad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class DatasetName { SMD, SMAP, PSM };

inline constexpr std::array<DatasetName, 3> kAllDatasets{DatasetName::SMD, DatasetName::SMAP,
                                                         DatasetName::PSM};

inline std::string to_string(DatasetName d) {
    switch (d) {
        case DatasetName::SMD: return "SMD";
        case DatasetName::SMAP: return "SMAP";
        case DatasetName::PSM: return "PSM";
    }
    return "?";
}

inline DatasetName parse_dataset_name(std::string_view s) {
    std::string up(s);
    std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
    if (up == "SMD") return DatasetName::SMD;
    if (up == "SMAP") return DatasetName::SMAP;
    if (up == "PSM") return DatasetName::PSM;
    throw ConfigError("unknown dataset: " + std::string(s));
}

// Series count, dimensionality and default federated client count.
struct DatasetGeometry {
    int series;
    int dims;
    int clients;
};

inline constexpr DatasetGeometry geometry(DatasetName d) {
    switch (d) {
        case DatasetName::SMD: return {28, 38, 28};
        case DatasetName::SMAP: return {54, 25, 54};
        case DatasetName::PSM: return {1, 25, 24};
    }
    return {0, 0, 0};
}

// SMD and SMAP share one set of scaling statistics across all entities.
inline constexpr bool pooled_normalization(DatasetName d) { return d != DatasetName::PSM; }

struct MultivariateSeries {
    std::string entity_id;
    Matrix train;
    Matrix test;
    std::vector<int> test_labels;

    Index dims() const { return train.cols(); }
};

struct NormalizationStats {
    Vector min;
    Vector max;
    std::vector<bool> constant;  // max == min; mapped to 0
    std::size_t missing_filled = 0;
};

struct DatasetBundle {
    DatasetName name = DatasetName::PSM;
    std::vector<MultivariateSeries> series;
    int dims = 0;
    std::optional<NormalizationStats> normalization_stats;

    bool normalized() const { return normalization_stats.has_value(); }

    Index total_train_rows() const {
        Index n = 0;
        for (const auto& s : series) n += s.train.rows();
        return n;
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline double parse_field(std::string_view f, const std::filesystem::path& file, std::size_t line) {
    std::string t = trim(f);
    if (t.empty() || t == "nan" || t == "NaN" || t == "NAN") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const char* first = t.data();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) {
        throw FormatError(file.string() + ":" + std::to_string(line) + ": bad number '" + t + "'");
    }
    return v;
}

inline Matrix read_csv_matrix(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw LoadError("cannot open " + file.string());
    std::vector<double> values;
    Index cols = -1;
    Index rows = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        Index c = 0;
        std::size_t pos = 0;
        for (;;) {
            std::size_t comma = line.find(',', pos);
            std::string_view field(line.data() + pos,
                                   (comma == std::string::npos ? line.size() : comma) - pos);
            values.push_back(parse_field(field, file, lineno));
            ++c;
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (cols < 0) cols = c;
        if (c != cols) {
            throw FormatError(file.string() + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(cols) + " columns, found " + std::to_string(c));
        }
        ++rows;
    }
    if (rows == 0) throw FormatError(file.string() + ": no rows");
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = values[static_cast<std::size_t>(r * cols + c)];
    return m;
}

inline std::vector<int> read_labels(const std::filesystem::path& file) {
    Matrix m = read_csv_matrix(file);
    if (m.cols() != 1) throw FormatError(file.string() + ": labels must have one column");
    std::vector<int> labels(static_cast<std::size_t>(m.rows()));
    for (Index r = 0; r < m.rows(); ++r) {
        const double v = m(r, 0);
        if (v != 0.0 && v != 1.0) throw FormatError(file.string() + ": non-binary label at row " + std::to_string(r));
        labels[static_cast<std::size_t>(r)] = static_cast<int>(v);
    }
    return labels;
}

}  // namespace detail

struct Manifest {
    std::string dataset;
    int dims = 0;
    std::vector<std::string> entities;
};

inline Manifest read_manifest(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw LoadError("cannot open " + file.string());
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
        auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        std::string key = detail::trim(std::string_view(line).substr(0, colon));
        std::string val = detail::trim(std::string_view(line).substr(colon + 1));
        if (key == "dataset") {
            m.dataset = val;
        } else if (key == "dims") {
            m.dims = std::stoi(val);
        } else if (key == "entities") {
            std::size_t pos = 0;
            while (pos <= val.size()) {
                auto comma = val.find(',', pos);
                std::string id = detail::trim(std::string_view(val).substr(
                    pos, (comma == std::string::npos ? val.size() : comma) - pos));
                if (!id.empty()) m.entities.push_back(id);
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
        }
    }
    if (m.dims <= 0 || m.entities.empty()) throw FormatError(file.string() + ": manifest needs dims and entities");
    return m;
}

inline void write_manifest(const std::filesystem::path& file, const Manifest& m) {
    std::ofstream out(file);
    if (!out) throw LoadError("cannot write " + file.string());
    out << "dataset: " << m.dataset << "\n";
    out << "dims: " << m.dims << "\n";
    out << "entities: ";
    for (std::size_t i = 0; i < m.entities.size(); ++i) out << (i ? "," : "") << m.entities[i];
    out << "\n";
}

inline DatasetBundle load_dataset(DatasetName name, const std::filesystem::path& root) {
    const auto dir = root / to_string(name);
    const auto manifest_path = dir / "manifest.txt";
    if (!std::filesystem::exists(manifest_path)) throw LoadError("missing file " + manifest_path.string());
    Manifest manifest = read_manifest(manifest_path);

    const DatasetGeometry g = geometry(name);
    if (manifest.dims != g.dims) {
        throw FormatError(to_string(name) + ": manifest declares " + std::to_string(manifest.dims) +
                          " dims, expected " + std::to_string(g.dims));
    }
    if (static_cast<int>(manifest.entities.size()) != g.series) {
        throw FormatError(to_string(name) + ": manifest lists " + std::to_string(manifest.entities.size()) +
                          " series, expected " + std::to_string(g.series));
    }

    DatasetBundle bundle;
    bundle.name = name;
    bundle.dims = manifest.dims;
    for (const auto& id : manifest.entities) {
        MultivariateSeries s;
        s.entity_id = id;
        for (const char* suffix : {"_train.csv", "_test.csv", "_labels.csv"}) {
            auto p = dir / (id + suffix);
            if (!std::filesystem::exists(p)) throw LoadError("missing file " + p.string());
        }
        s.train = detail::read_csv_matrix(dir / (id + "_train.csv"));
        s.test = detail::read_csv_matrix(dir / (id + "_test.csv"));
        s.test_labels = detail::read_labels(dir / (id + "_labels.csv"));
        if (s.train.cols() != manifest.dims || s.test.cols() != manifest.dims) {
            throw FormatError(id + ": train has " + std::to_string(s.train.cols()) + " columns, test has " +
                              std::to_string(s.test.cols()) + ", manifest says " + std::to_string(manifest.dims));
        }
        if (static_cast<Index>(s.test_labels.size()) != s.test.rows()) {
            throw FormatError(id + ": " + std::to_string(s.test_labels.size()) + " labels for " +
                              std::to_string(s.test.rows()) + " test rows");
        }
        bundle.series.push_back(std::move(s));
    }
    return bundle;
}

namespace detail {

inline NormalizationStats compute_stats(std::span<const MultivariateSeries* const> series, Index dims) {
    NormalizationStats st;
    st.min = Vector::Constant(dims, std::numeric_limits<double>::infinity());
    st.max = Vector::Constant(dims, -std::numeric_limits<double>::infinity());
    for (const auto* s : series) {
        for (Index r = 0; r < s->train.rows(); ++r) {
            for (Index c = 0; c < dims; ++c) {
                const double v = s->train(r, c);
                if (std::isnan(v)) continue;
                st.min(c) = std::min(st.min(c), v);
                st.max(c) = std::max(st.max(c), v);
            }
        }
    }
    st.constant.assign(static_cast<std::size_t>(dims), false);
    for (Index c = 0; c < dims; ++c) {
        if (!std::isfinite(st.min(c))) {
            // Entire column missing.
            st.min(c) = 0.0;
            st.max(c) = 0.0;
        }
        st.constant[static_cast<std::size_t>(c)] = !(st.max(c) > st.min(c));
    }
    return st;
}

inline std::size_t apply_stats(Matrix& m, const NormalizationStats& st) {
    std::size_t filled = 0;
    for (Index c = 0; c < m.cols(); ++c) {
        const bool constant = st.constant[static_cast<std::size_t>(c)];
        const double lo = st.min(c);
        const double span = st.max(c) - st.min(c);
        for (Index r = 0; r < m.rows(); ++r) {
            double& v = m(r, c);
            if (std::isnan(v)) {
                v = 0.0;
                ++filled;
            } else {
                v = constant ? 0.0 : (v - lo) / span;
            }
        }
    }
    return filled;
}

}  // namespace detail

// Min-max scaling fitted on the training split. Pooled across entities for
// SMD and SMAP, per series otherwise (PSM has a single series, so the two
// coincide there). Missing values become 0 afterwards.
inline DatasetBundle normalize(DatasetBundle bundle) {
    if (bundle.normalized()) throw ConfigError("bundle is already normalized");
    std::vector<const MultivariateSeries*> all;
    for (const auto& s : bundle.series) all.push_back(&s);

    NormalizationStats recorded;
    if (pooled_normalization(bundle.name) || bundle.series.size() == 1) {
        recorded = detail::compute_stats(all, bundle.dims);
        for (auto& s : bundle.series) {
            recorded.missing_filled += detail::apply_stats(s.train, recorded);
            recorded.missing_filled += detail::apply_stats(s.test, recorded);
        }
    } else {
        // Per-series statistics; the recorded min/max are the first series'.
        for (std::size_t i = 0; i < bundle.series.size(); ++i) {
            const MultivariateSeries* one[] = {&bundle.series[i]};
            auto st = detail::compute_stats(one, bundle.dims);
            std::size_t filled = detail::apply_stats(bundle.series[i].train, st);
            filled += detail::apply_stats(bundle.series[i].test, st);
            if (i == 0) recorded = st;
            recorded.missing_filled += filled;
        }
    }
    bundle.normalization_stats = std::move(recorded);
    return bundle;
}

// Sliding windows over one or more row ranges of shared source matrices.
// Each window is addressed by (source, first row); the anchor is its last row.
class WindowSet {
public:
    struct Ref {
        std::uint32_t source;
        Index start;
    };

    WindowSet() = default;
    WindowSet(Index window_len, Index dims) : window_len_(window_len), dims_(dims) {}

    Index window_len() const { return window_len_; }
    Index dims() const { return dims_; }
    std::size_t size() const { return refs_.size(); }
    bool empty() const { return refs_.empty(); }

    Index anchor(std::size_t k) const { return refs_[k].start + window_len_ - 1; }

    std::vector<Index> anchors() const {
        std::vector<Index> a(refs_.size());
        for (std::size_t k = 0; k < refs_.size(); ++k) a[k] = anchor(k);
        return a;
    }

    Matrix window(std::size_t k) const {
        const auto& r = refs_[k];
        return sources_[r.source]->middleRows(r.start, window_len_);
    }

    // Rows of the result are windows flattened row-major (timestep-major),
    // i.e. column t*dims + d holds dimension d at step t.
    Matrix batch(std::span<const std::size_t> indices) const {
        Matrix out(static_cast<Index>(indices.size()), window_len_ * dims_);
        for (std::size_t b = 0; b < indices.size(); ++b) {
            const auto& r = refs_[indices[b]];
            const Matrix& src = *sources_[r.source];
            for (Index t = 0; t < window_len_; ++t)
                out.row(static_cast<Index>(b)).segment(t * dims_, dims_) = src.row(r.start + t);
        }
        return out;
    }

    Matrix all() const {
        std::vector<std::size_t> idx(refs_.size());
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
        return batch(idx);
    }

    void add_range(std::shared_ptr<const Matrix> source, Index row_begin, Index row_end, Index stride) {
        if (source->cols() != dims_) throw ShapeError("window source has wrong column count");
        const auto sid = static_cast<std::uint32_t>(sources_.size());
        sources_.push_back(std::move(source));
        for (Index s = row_begin; s + window_len_ <= row_end; s += stride) refs_.push_back(Ref{sid, s});
    }

    void append(const WindowSet& other) {
        if (other.window_len_ != window_len_ || other.dims_ != dims_) throw ShapeError("window sets differ in shape");
        const auto base = static_cast<std::uint32_t>(sources_.size());
        sources_.insert(sources_.end(), other.sources_.begin(), other.sources_.end());
        for (const auto& r : other.refs_) refs_.push_back(Ref{r.source + base, r.start});
    }

    // Windows at the given positions, sharing this set's sources.
    WindowSet subset(std::span<const std::size_t> indices) const {
        WindowSet w(window_len_, dims_);
        w.sources_ = sources_;
        for (auto k : indices) w.refs_.push_back(refs_[k]);
        return w;
    }

private:
    Index window_len_ = 0;
    Index dims_ = 0;
    std::vector<std::shared_ptr<const Matrix>> sources_;
    std::vector<Ref> refs_;
};

// Windows over rows [row_begin, row_end) of a shared matrix. Throws
// EmptyInputError when the range is shorter than one window.
inline WindowSet make_windows(std::shared_ptr<const Matrix> source, Index row_begin, Index row_end,
                              Index window_len, Index stride) {
    if (window_len <= 0 || stride <= 0) throw ConfigError("window_len and stride must be positive");
    if (window_len > row_end - row_begin) {
        throw EmptyInputError("window_len " + std::to_string(window_len) + " exceeds " +
                              std::to_string(row_end - row_begin) + " rows");
    }
    WindowSet w(window_len, source->cols());
    w.add_range(std::move(source), row_begin, row_end, stride);
    return w;
}

inline WindowSet make_windows(const Matrix& series_matrix, Index window_len, Index stride) {
    auto src = std::make_shared<const Matrix>(series_matrix);
    return make_windows(src, 0, series_matrix.rows(), window_len, stride);
}

// Test windows always use stride 1 so every timestamp from window_len-1 on
// gets exactly one score.
inline WindowSet make_test_windows(const Matrix& test, Index window_len) {
    return make_windows(test, window_len, 1);
}

// Spreads per-window scores onto timestamps; rows before the first anchor
// take the first window's score.
inline std::vector<double> expand_scores(std::span<const double> window_scores,
                                         std::span<const Index> anchors, Index total_rows) {
    if (window_scores.size() != anchors.size() || window_scores.empty())
        throw ShapeError("expand_scores: scores and anchors must be non-empty and aligned");
    std::vector<double> out(static_cast<std::size_t>(total_rows), window_scores.front());
    for (std::size_t k = 0; k < anchors.size(); ++k) out[static_cast<std::size_t>(anchors[k])] = window_scores[k];
    return out;
}

}  // namespace fedtad

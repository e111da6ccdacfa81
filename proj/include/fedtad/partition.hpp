#pragma once

// Splitting training rows across simulated clients.
//
// Rows are addressed in the concatenated row space of a bundle's series, in
// bundle order. A client owns one contiguous block of that space, which maps
// to one slice per entity it touches. Test data is never partitioned.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fedtad/dataset.hpp"
#include "fedtad/error.hpp"
#include "fedtad/rng.hpp"

namespace fedtad {

enum class PartitionScheme { PerSeries, DirichletContiguous, Equal };

inline std::string to_string(PartitionScheme s) {
    switch (s) {
        case PartitionScheme::PerSeries: return "per_series";
        case PartitionScheme::DirichletContiguous: return "dirichlet";
        case PartitionScheme::Equal: return "equal";
    }
    return "?";
}

inline PartitionScheme parse_partition_scheme(std::string_view s) {
    if (s == "per_series") return PartitionScheme::PerSeries;
    if (s == "dirichlet" || s == "dirichlet_contiguous") return PartitionScheme::DirichletContiguous;
    if (s == "equal") return PartitionScheme::Equal;
    throw ConfigError("unknown partition scheme: " + std::string(s));
}

struct PartitionConfig {
    PartitionScheme scheme = PartitionScheme::PerSeries;
    double beta = 0.5;  // Dirichlet concentration; ignored by other schemes
    int n_clients = 1;
    std::uint64_t seed = 0;
};

struct RowSlice {
    std::size_t series_index = 0;
    std::string entity_id;
    Index row_begin = 0;
    Index row_end = 0;  // exclusive

    Index rows() const { return row_end - row_begin; }
    friend bool operator==(const RowSlice&, const RowSlice&) = default;
};

struct ClientAssignment {
    int n_clients = 0;
    std::vector<std::vector<RowSlice>> assignment;
    std::vector<double> proportions;

    Index client_rows(std::size_t client) const {
        Index n = 0;
        for (const auto& s : assignment[client]) n += s.rows();
        return n;
    }

    friend bool operator==(const ClientAssignment&, const ClientAssignment&) = default;

    // Audit table: `client_id,entity_id,row_start,row_end` (row_end exclusive).
    void write_table(std::ostream& os) const {
        os << "client_id,entity_id,row_start,row_end\n";
        for (std::size_t c = 0; c < assignment.size(); ++c)
            for (const auto& s : assignment[c])
                os << c << ',' << s.entity_id << ',' << s.row_begin << ',' << s.row_end << '\n';
    }
};

namespace detail {

// Maps contiguous block sizes over the concatenated row space onto per-entity
// slices.
inline ClientAssignment blocks_to_assignment(std::span<const MultivariateSeries> series,
                                             std::span<const Index> sizes) {
    ClientAssignment a;
    a.n_clients = static_cast<int>(sizes.size());
    a.assignment.resize(sizes.size());
    Index total = 0;
    for (const auto& s : series) total += s.train.rows();

    std::size_t si = 0;
    Index offset_in_series = 0;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
        Index remaining = sizes[c];
        while (remaining > 0) {
            while (si < series.size() && offset_in_series >= series[si].train.rows()) {
                ++si;
                offset_in_series = 0;
            }
            const Index avail = series[si].train.rows() - offset_in_series;
            const Index take = std::min(avail, remaining);
            a.assignment[c].push_back(
                RowSlice{si, series[si].entity_id, offset_in_series, offset_in_series + take});
            offset_in_series += take;
            remaining -= take;
        }
        a.proportions.push_back(static_cast<double>(sizes[c]) / static_cast<double>(total));
    }
    return a;
}

inline Index total_rows(std::span<const MultivariateSeries> series) {
    Index t = 0;
    for (const auto& s : series) t += s.train.rows();
    return t;
}

inline void require_feasible(Index rows, int n_clients) {
    if (n_clients <= 0) throw InfeasiblePartitionError("n_clients must be positive");
    if (static_cast<Index>(n_clients) > rows) {
        throw InfeasiblePartitionError(std::to_string(n_clients) + " clients cannot share " +
                                       std::to_string(rows) + " training rows");
    }
}

}  // namespace detail

// Client i owns series i in full.
inline ClientAssignment partition_per_series(const DatasetBundle& bundle) {
    std::vector<Index> sizes;
    for (const auto& s : bundle.series) sizes.push_back(s.train.rows());
    return detail::blocks_to_assignment(bundle.series, sizes);
}

// Block sizes for a Dirichlet(beta) split of `rows` into `n_clients` pieces.
// Residue from rounding goes to the last client; empty blocks then take one
// row at a time from the currently largest block (lowest index on ties).
inline std::vector<Index> dirichlet_block_sizes(Index rows, int n_clients, double beta, std::uint64_t seed) {
    detail::require_feasible(rows, n_clients);
    if (!(beta > 0.0)) throw ConfigError("Dirichlet beta must be positive");
    Rng rng(seed, "partition.dirichlet");
    const std::vector<double> p = rng.dirichlet(static_cast<std::size_t>(n_clients), beta);

    std::vector<Index> sizes(static_cast<std::size_t>(n_clients), 0);
    Index assigned = 0;
    for (int i = 0; i + 1 < n_clients; ++i) {
        sizes[i] = static_cast<Index>(std::llround(p[i] * static_cast<double>(rows)));
        assigned += sizes[i];
    }
    sizes.back() = rows - assigned;
    while (sizes.back() < 0) {
        auto it = std::max_element(sizes.begin(), sizes.end() - 1);
        --*it;
        ++sizes.back();
    }
    for (auto& s : sizes) {
        while (s == 0) {
            auto it = std::max_element(sizes.begin(), sizes.end());
            --*it;
            ++s;
        }
    }
    return sizes;
}

inline ClientAssignment partition_dirichlet_contiguous(std::span<const MultivariateSeries> series,
                                                       const PartitionConfig& cfg) {
    if (cfg.scheme != PartitionScheme::DirichletContiguous)
        throw ConfigError("partition_dirichlet_contiguous requires the dirichlet scheme");
    const auto sizes = dirichlet_block_sizes(detail::total_rows(series), cfg.n_clients, cfg.beta, cfg.seed);
    return detail::blocks_to_assignment(series, sizes);
}

inline ClientAssignment partition_dirichlet_contiguous(const MultivariateSeries& series,
                                                       const PartitionConfig& cfg) {
    return partition_dirichlet_contiguous(std::span<const MultivariateSeries>(&series, 1), cfg);
}

// Sizes differ by at most one; the first T mod n clients get the extra row.
inline ClientAssignment partition_equal(std::span<const MultivariateSeries> series, int n_clients) {
    const Index rows = detail::total_rows(series);
    detail::require_feasible(rows, n_clients);
    std::vector<Index> sizes(static_cast<std::size_t>(n_clients), rows / n_clients);
    for (Index i = 0; i < rows % n_clients; ++i) ++sizes[static_cast<std::size_t>(i)];
    return detail::blocks_to_assignment(series, sizes);
}

inline ClientAssignment partition_equal(const MultivariateSeries& series, int n_clients) {
    return partition_equal(std::span<const MultivariateSeries>(&series, 1), n_clients);
}

inline ClientAssignment make_partition(const DatasetBundle& bundle, const PartitionConfig& cfg) {
    switch (cfg.scheme) {
        case PartitionScheme::PerSeries: return partition_per_series(bundle);
        case PartitionScheme::DirichletContiguous: return partition_dirichlet_contiguous(bundle.series, cfg);
        case PartitionScheme::Equal: return partition_equal(bundle.series, cfg.n_clients);
    }
    throw ConfigError("unknown partition scheme");
}

// Everything in one client: the centralized regime's view of the data.
inline ClientAssignment single_client(const DatasetBundle& bundle) {
    std::vector<Index> sizes{bundle.total_train_rows()};
    return detail::blocks_to_assignment(bundle.series, sizes);
}

}  // namespace fedtad

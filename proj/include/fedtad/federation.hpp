#pragma once

// Federated training engine: clients train locally for a number of epochs,
// the server aggregates their models, and the cycle repeats for a number of
// global epochs (rounds). Centralized and isolated training run through the
// same client machinery without aggregation.
//
// All randomness a client sees derives from (seed, purpose, epoch, client id),
// so running clients in parallel or in any order gives identical results.

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fedtad/autodiff.hpp"
#include "fedtad/dataset.hpp"
#include "fedtad/error.hpp"
#include "fedtad/models/models.hpp"
#include "fedtad/parameter_set.hpp"
#include "fedtad/partition.hpp"
#include "fedtad/rng.hpp"

namespace fedtad {

enum class Strategy { FedAvg, FedProx, Scaffold, Moon, Centralized, Isolated };

inline constexpr std::array<Strategy, 6> kAllStrategies{Strategy::Centralized, Strategy::Isolated, Strategy::FedAvg,
                                                        Strategy::FedProx,     Strategy::Scaffold, Strategy::Moon};

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::FedAvg: return "FedAvg";
        case Strategy::FedProx: return "FedProx";
        case Strategy::Scaffold: return "Scaffold";
        case Strategy::Moon: return "Moon";
        case Strategy::Centralized: return "Centralized";
        case Strategy::Isolated: return "Isolated";
    }
    return "?";
}

inline std::string cli_name(Strategy s) {
    switch (s) {
        case Strategy::FedAvg: return "fedavg";
        case Strategy::FedProx: return "fedprox";
        case Strategy::Scaffold: return "scaffold";
        case Strategy::Moon: return "moon";
        case Strategy::Centralized: return "central";
        case Strategy::Isolated: return "isolated";
    }
    return "?";
}

inline Strategy parse_strategy(std::string_view s) {
    for (auto k : kAllStrategies)
        if (s == cli_name(k) || s == to_string(k)) return k;
    if (s == "centralized") return Strategy::Centralized;
    throw ConfigError("unknown federated strategy: " + std::string(s));
}

inline bool is_federated(Strategy s) { return s != Strategy::Centralized && s != Strategy::Isolated; }

struct FederationConfig {
    Strategy strategy = Strategy::FedAvg;
    int global_epochs = 1;
    int local_epochs = 10;
    double mu = 0.01;                 // FedProx proximal weight
    double tau = 0.5;                 // MOON temperature
    double contrastive_weight = 1.0;  // MOON loss weight
    std::uint64_t seed = 0;
    int workers = 1;  // clients trained concurrently

    void validate() const {
        if (global_epochs < 0) throw ConfigError("global_epochs must be >= 0");
        if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
        if (mu < 0.0) throw ConfigError("mu must be non-negative");
        if (!(tau > 0.0)) throw ConfigError("tau must be positive");
        if (contrastive_weight < 0.0) throw ConfigError("contrastive_weight must be non-negative");
        if (workers < 1) throw ConfigError("workers must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Aggregation and strategy primitives
// ---------------------------------------------------------------------------

// Entrywise sum_i w_i * theta_i / sum_i w_i.
inline ParameterSet aggregate_weighted(std::span<const ParameterSet> params, std::span<const double> weights) {
    if (params.empty()) throw AggregationError("nothing to aggregate");
    if (params.size() != weights.size()) throw AggregationError("one weight per parameter set required");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw AggregationError("weights must be finite and non-negative");
        total += w;
    }
    if (!(total > 0.0)) throw AggregationError("weights must not all be zero");
    for (std::size_t i = 1; i < params.size(); ++i) params.front().require_congruent(params[i]);

    ParameterSet out = params.front().zeros_like();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (weights[i] == 0.0) continue;
        out.axpy(weights[i] / total, params[i]);
    }
    return out;
}

// (mu/2)·|local - global_ref|² and its gradient mu·(local - global_ref).
inline std::pair<double, ParameterSet> fedprox_penalty(const ParameterSet& local, const ParameterSet& global_ref,
                                                       double mu) {
    local.require_congruent(global_ref);
    ParameterSet diff = local - global_ref;
    const double value = 0.5 * mu * diff.squared_norm();
    diff *= mu;
    return {value, std::move(diff)};
}

// Proximal term on the tape, over trainable entries.
inline ad::Var fedprox_penalty_var(ad::Tape& tape, const BoundParams& local, const ParameterSet& global_ref,
                                   double mu) {
    ad::Var acc;
    for (std::size_t i = 0; i < local.size(); ++i) {
        if (!local.source()[i].trainable) continue;
        ad::Var d = ad::sub(local[i], tape.constant(global_ref[i].value));
        ad::Var s = ad::sum(ad::square(d));
        acc = acc.valid() ? ad::add(acc, s) : s;
    }
    if (!acc.valid()) return acc;
    return ad::scale(acc, 0.5 * mu);
}

inline double cosine_similarity(const Vector& a, const Vector& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw DegenerateRepresentationError("zero-norm representation");
    return a.dot(b) / (na * nb);
}

// -log( exp(cos(z, z_glob)/tau) / (exp(cos(z, z_glob)/tau) + exp(cos(z, z_prev)/tau)) )
inline double moon_contrastive_loss(const Vector& z, const Vector& z_global, const Vector& z_prev, double tau) {
    const double pos = cosine_similarity(z, z_global) / tau;
    const double neg = cosine_similarity(z, z_prev) / tau;
    // Equals softplus(neg - pos).
    const double x = neg - pos;
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Row-mean of the contrastive loss with z on the tape and the two reference
// representations held constant.
inline ad::Var moon_contrastive_var(ad::Tape& tape, ad::Var z, const Matrix& z_global, const Matrix& z_prev,
                                    double tau) {
    if (z_global.rows() != z.rows() || z_prev.rows() != z.rows() || z_global.cols() != z.cols() ||
        z_prev.cols() != z.cols())
        throw ShapeError("moon: representation shapes differ");
    const Vector ng = z_global.rowwise().norm();
    const Vector np = z_prev.rowwise().norm();
    const Vector nz = z.value().rowwise().norm();
    if ((ng.array() == 0.0).any() || (np.array() == 0.0).any() || (nz.array() == 0.0).any())
        throw DegenerateRepresentationError("zero-norm representation in contrastive loss");

    ad::Var inv_nz = ad::reciprocal(ad::sqrt(ad::row_sum(ad::square(z))));
    auto cos_with = [&](const Matrix& ref, const Vector& ref_norm) {
        ad::Var dot = ad::row_sum(ad::hadamard(z, tape.constant(ref)));
        ad::Var inv_ref = tape.constant(Matrix(ref_norm.cwiseInverse()));
        return ad::mul_col(ad::mul_col(dot, inv_nz), inv_ref);
    };
    ad::Var cos_g = cos_with(z_global, ng);
    ad::Var cos_p = cos_with(z_prev, np);
    return ad::mean(ad::softplus(ad::scale(ad::sub(cos_p, cos_g), 1.0 / tau)));
}

// grad - c_client + c_server
inline ParameterSet scaffold_local_step_correction(const ParameterSet& grad, const ParameterSet& c_server,
                                                   const ParameterSet& c_client) {
    ParameterSet out = grad;
    out -= c_client;
    out += c_server;
    return out;
}

struct VariateUpdate {
    ParameterSet c_client;  // updated client variate
    ParameterSet delta;     // new minus old
};

// c+ = c_client - c_server + (global_before - local_after) / (K·lr)
inline VariateUpdate scaffold_update_variates(const ParameterSet& c_client, const ParameterSet& c_server,
                                              const ParameterSet& global_before, const ParameterSet& local_after,
                                              double lr, long local_steps) {
    if (local_steps < 1) throw ProtocolError("SCAFFOLD variate update needs at least one local step");
    if (!(lr > 0.0)) throw ProtocolError("SCAFFOLD variate update needs a positive learning rate");
    c_client.require_congruent(c_server);
    c_client.require_congruent(global_before);
    c_client.require_congruent(local_after);
    const double denom = static_cast<double>(local_steps) * lr;
    VariateUpdate u{c_client, c_client.zeros_like()};
    for (std::size_t i = 0; i < u.c_client.size(); ++i) {
        u.c_client[i].value = c_client[i].value - c_server[i].value + global_before[i].value / denom -
                              local_after[i].value / denom;
        u.delta[i].value = u.c_client[i].value - c_client[i].value;
    }
    return u;
}

// ---------------------------------------------------------------------------
// Client and server state
// ---------------------------------------------------------------------------

struct ClientState {
    int client_id = 0;
    ParameterSet params;
    ParameterSet control_variate;              // SCAFFOLD
    std::optional<ParameterSet> prev_params;   // MOON
    AdamState opt;
    int epochs_trained = 0;
    WindowSet windows;
    Index rows = 0;                            // training rows owned
    std::vector<double> loss_curve;            // mean loss per local epoch
};

struct ServerState {
    ParameterSet global_params;
    ParameterSet server_control_variate;  // SCAFFOLD
    int round = 0;
    std::vector<double> wall_clock_per_round;
};

struct RoundLog {
    int round = 0;
    int client = 0;
    double mean_loss = 0.0;
    double seconds = 0.0;
};

// `round=R client=C loss=L seconds=S`
inline void write_round_log(std::ostream& os, const RoundLog& log) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "round=%d client=%d loss=%.9g seconds=%.6f\n", log.round, log.client,
                  log.mean_loss, log.seconds);
    os << buf;
}

using RoundLogSink = std::function<void(const RoundLog&)>;

// Client windows over its assigned row slices of the training matrices.
// Slices shorter than one window contribute no windows.
inline std::vector<WindowSet> client_windows(const DatasetBundle& bundle, const ClientAssignment& assignment,
                                             Index window_len, Index stride = 1) {
    std::vector<std::shared_ptr<const Matrix>> sources;
    for (const auto& s : bundle.series) sources.push_back(std::make_shared<const Matrix>(s.train));
    std::vector<WindowSet> out;
    for (const auto& slices : assignment.assignment) {
        WindowSet w(window_len, bundle.dims);
        for (const auto& sl : slices) w.add_range(sources[sl.series_index], sl.row_begin, sl.row_end, stride);
        out.push_back(std::move(w));
    }
    return out;
}

inline std::vector<ClientState> make_clients(const DatasetBundle& bundle, const ClientAssignment& assignment,
                                             const ModelConfig& model) {
    auto windows = client_windows(bundle, assignment, model.window_len);
    std::vector<ClientState> clients(windows.size());
    for (std::size_t c = 0; c < windows.size(); ++c) {
        clients[c].client_id = static_cast<int>(c);
        clients[c].windows = std::move(windows[c]);
        clients[c].rows = assignment.client_rows(c);
    }
    return clients;
}

namespace detail {

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the
// exception of the lowest failing index.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

// Trains one client for `epochs` local epochs starting from its current
// params. Returns the number of optimizer steps taken.
inline long train_client(ClientState& client, const Detector& det, const ModelConfig& model,
                         const FederationConfig& cfg, int epochs, const TrainHooks& hooks) {
    long steps = 0;
    for (int e = 0; e < epochs; ++e) {
        EpochContext ctx;
        ctx.epoch = client.epochs_trained + 1;
        ctx.shuffle_seed = derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(ctx.epoch),
                                       static_cast<std::uint64_t>(client.client_id));
        try {
            EpochResult r = local_train_epoch(det, client.params, model, client.windows, client.opt, ctx, hooks);
            steps += r.batches;
            client.loss_curve.push_back(r.mean_loss);
        } catch (const Error& err) {
            throw ClientError(client.client_id, err.what());
        }
        ++client.epochs_trained;
    }
    return steps;
}

inline long train_client(ClientState& client, const ModelConfig& model, const FederationConfig& cfg, int epochs,
                         const TrainHooks& hooks) {
    return train_client(client, detector_for(model.kind), model, cfg, epochs, hooks);
}

// Initial global model. Data-dependent statistics are combined from
// per-client means weighted by window counts.
inline ParameterSet initial_global_model(const ModelConfig& model, std::uint64_t seed,
                                         std::span<const ClientState> clients) {
    const Detector& det = detector_for(model.kind);
    ParameterSet params = init_model(model, seed);
    std::optional<Matrix> acc;
    std::size_t total = 0;
    for (const auto& c : clients) {
        auto stat = windowed_statistic(det, params, model, c.windows);
        if (!stat) continue;
        Matrix weighted = stat->first * static_cast<double>(stat->second);
        acc = acc ? Matrix(*acc + weighted) : weighted;
        total += stat->second;
    }
    if (acc && total > 0) det.apply_statistic(params, *acc / static_cast<double>(total));
    return params;
}

// One global epoch: broadcast, local training, aggregation. `det` is
// normally detector_for(model.kind).
inline void run_round(ServerState& server, std::vector<ClientState>& clients, const Detector& det,
                      const ModelConfig& model, const FederationConfig& cfg, const RoundLogSink& sink = {}) {
    if (!is_federated(cfg.strategy)) throw ConfigError("run_round needs a federated strategy");
    if (clients.empty()) throw ProtocolError("no clients");
    const auto round_start = std::chrono::steady_clock::now();
    const ParameterSet global_before = server.global_params;
    if (cfg.strategy == Strategy::Scaffold && server.server_control_variate.empty())
        server.server_control_variate = global_before.zeros_like();

    std::vector<ParameterSet> deltas(clients.size());
    std::vector<RoundLog> logs(clients.size());

    detail::parallel_for(clients.size(), cfg.workers, [&](std::size_t i) {
        ClientState& client = clients[i];
        const auto start = std::chrono::steady_clock::now();
        client.params = global_before;
        if (cfg.strategy == Strategy::Scaffold && client.control_variate.empty())
            client.control_variate = global_before.zeros_like();

        TrainHooks hooks;
        switch (cfg.strategy) {
            case Strategy::FedProx:
                hooks.penalty = [&](ad::Tape& tape, const BoundParams& p, const Matrix&) {
                    return fedprox_penalty_var(tape, p, global_before, cfg.mu);
                };
                break;
            case Strategy::Moon:
                if (client.prev_params) {
                    const ParameterSet* prev = &*client.prev_params;
                    hooks.penalty = [&, prev](ad::Tape& tape, const BoundParams& p, const Matrix& batch) {
                        ad::Var z = det.representation(tape, p, model, batch);
                        const Matrix zg = extract_representation(det, global_before, model, batch);
                        const Matrix zp = extract_representation(det, *prev, model, batch);
                        return ad::scale(moon_contrastive_var(tape, z, zg, zp, cfg.tau), cfg.contrastive_weight);
                    };
                }
                break;
            case Strategy::Scaffold:
                hooks.correction = [&](ParameterSet& grad) {
                    grad = scaffold_local_step_correction(grad, server.server_control_variate, client.control_variate);
                };
                break;
            default: break;
        }

        const std::size_t curve_start = client.loss_curve.size();
        const long steps = train_client(client, det, model, cfg, cfg.local_epochs, hooks);

        if (cfg.strategy == Strategy::Scaffold) {
            if (steps > 0) {
                auto u = scaffold_update_variates(client.control_variate, server.server_control_variate, global_before,
                                                  client.params, model.learning_rate, steps);
                client.control_variate = std::move(u.c_client);
                deltas[i] = std::move(u.delta);
            } else {
                deltas[i] = global_before.zeros_like();
            }
        }
        if (cfg.strategy == Strategy::Moon) client.prev_params = client.params;

        double loss = 0.0;
        const std::size_t n = client.loss_curve.size() - curve_start;
        for (std::size_t k = curve_start; k < client.loss_curve.size(); ++k) loss += client.loss_curve[k];
        logs[i] = RoundLog{server.round + 1, client.client_id, n ? loss / static_cast<double>(n) : 0.0,
                           detail::seconds_since(start)};
    });

    std::vector<ParameterSet> locals;
    std::vector<double> weights;
    locals.reserve(clients.size());
    for (const auto& c : clients) {
        locals.push_back(c.params);
        weights.push_back(static_cast<double>(c.rows));
    }
    server.global_params = aggregate_weighted(locals, weights);

    if (cfg.strategy == Strategy::Scaffold) {
        ParameterSet mean_delta = server.server_control_variate.zeros_like();
        for (const auto& d : deltas) mean_delta += d;
        mean_delta *= 1.0 / static_cast<double>(clients.size());
        server.server_control_variate += mean_delta;
    }

    ++server.round;
    server.wall_clock_per_round.push_back(detail::seconds_since(round_start));
    if (sink)
        for (const auto& l : logs) sink(l);
}

inline void run_round(ServerState& server, std::vector<ClientState>& clients, const ModelConfig& model,
                      const FederationConfig& cfg, const RoundLogSink& sink = {}) {
    run_round(server, clients, detector_for(model.kind), model, cfg, sink);
}

struct TrainingOutcome {
    ParameterSet global_params;                // final global (or centralized) model
    std::vector<ParameterSet> client_params;   // isolated regime: one model per client
    std::vector<double> round_seconds;
    std::vector<std::vector<double>> loss_curves;  // per client, per local epoch
    double total_seconds = 0.0;
};

// Last `fraction` of each client's windows (at least one when it has any);
// used to calibrate score normalization after training.
inline WindowSet calibration_windows(std::span<const ClientState> clients, Index window_len, Index dims,
                                     double fraction = 0.1) {
    WindowSet out(window_len, dims);
    for (const auto& c : clients) {
        if (c.windows.empty()) continue;
        const std::size_t n = c.windows.size();
        const std::size_t take = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
        std::vector<std::size_t> idx(take);
        std::iota(idx.begin(), idx.end(), n - take);
        out.append(c.windows.subset(idx));
    }
    return out;
}

inline void calibrate_model(ParameterSet& params, const ModelConfig& model, const WindowSet& windows) {
    if (windows.empty()) return;
    detector_for(model.kind).calibrate(params, model, windows.all());
}

// Runs one training regime end to end.
//   Centralized: one client holding every training row, no aggregation.
//   Isolated:    every client trains alone, no communication.
//   Federated:   run_round for cfg.global_epochs rounds.
// Every regime trains cfg.global_epochs × cfg.local_epochs epochs per client
// and times each block of cfg.local_epochs epochs as one round.
inline TrainingOutcome run_training(const FederationConfig& cfg, const ModelConfig& model, const DatasetBundle& bundle,
                                    const ClientAssignment& assignment, const RoundLogSink& sink = {}) {
    cfg.validate();
    model.validate();
    const auto t0 = std::chrono::steady_clock::now();
    TrainingOutcome out;

    const ClientAssignment effective = cfg.strategy == Strategy::Centralized ? single_client(bundle) : assignment;
    std::vector<ClientState> clients = make_clients(bundle, effective, model);
    if (clients.empty()) throw ProtocolError("assignment has no clients");

    if (is_federated(cfg.strategy)) {
        ServerState server;
        server.global_params = initial_global_model(model, cfg.seed, clients);
        for (int g = 0; g < cfg.global_epochs; ++g) run_round(server, clients, model, cfg, sink);
        out.global_params = std::move(server.global_params);
        out.round_seconds = std::move(server.wall_clock_per_round);
        calibrate_model(out.global_params, model, calibration_windows(clients, model.window_len, bundle.dims));
    } else {
        // Isolated clients compute their own data statistics; centralized is
        // the single-client case of the same loop.
        const ParameterSet base = init_model(model, cfg.seed);
        for (auto& c : clients) {
            c.params = base;
            if (auto stat = windowed_statistic(detector_for(model.kind), base, model, c.windows))
                detector_for(model.kind).apply_statistic(c.params, stat->first);
        }
        for (int g = 0; g < cfg.global_epochs; ++g) {
            const auto start = std::chrono::steady_clock::now();
            std::vector<RoundLog> logs(clients.size());
            detail::parallel_for(clients.size(), cfg.workers, [&](std::size_t i) {
                const auto cs = std::chrono::steady_clock::now();
                const std::size_t before = clients[i].loss_curve.size();
                train_client(clients[i], model, cfg, cfg.local_epochs, {});
                double loss = 0.0;
                for (std::size_t k = before; k < clients[i].loss_curve.size(); ++k) loss += clients[i].loss_curve[k];
                const std::size_t n = clients[i].loss_curve.size() - before;
                logs[i] = RoundLog{g + 1, clients[i].client_id, n ? loss / static_cast<double>(n) : 0.0,
                                   detail::seconds_since(cs)};
            });
            out.round_seconds.push_back(detail::seconds_since(start));
            if (sink)
                for (const auto& l : logs) sink(l);
        }
        for (auto& c : clients) {
            const ClientState* one = &c;
            calibrate_model(c.params, model, calibration_windows(std::span<const ClientState>(one, 1), model.window_len, bundle.dims));
        }
        if (cfg.strategy == Strategy::Centralized) {
            out.global_params = clients.front().params;
        } else {
            for (auto& c : clients) out.client_params.push_back(c.params);
            out.global_params = clients.front().params;
        }
    }
    for (const auto& c : clients) out.loss_curves.push_back(c.loss_curve);
    out.total_seconds = detail::seconds_since(t0);
    return out;
}

}  // namespace fedtad

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "../support/fixtures.hpp"
#include "fedtad/federation.hpp"

using namespace fedtad;

namespace {

ParameterSet scalar_set(double v, const char* name = "w") {
    ParameterSet p;
    p.add(name, Matrix::Constant(1, 1, v));
    return p;
}

ParameterSet random_set(Rng& rng) {
    ParameterSet p;
    Matrix a(2, 3), b(1, 4);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
    p.add("a", a);
    p.add("b", b);
    return p;
}

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

struct Trajectory {
    std::vector<ParameterSet> globals;  // after each round
};

Trajectory run_rounds(const DatasetBundle& bundle, const ClientAssignment& a, const ModelConfig& m,
                      const FederationConfig& cfg, int rounds) {
    auto clients = make_clients(bundle, a, m);
    ServerState server;
    server.global_params = initial_global_model(m, cfg.seed, clients);
    Trajectory t;
    for (int r = 0; r < rounds; ++r) {
        run_round(server, clients, m, cfg);
        t.globals.push_back(server.global_params);
    }
    return t;
}

ClientAssignment dirichlet_clients(const DatasetBundle& b, int n, std::uint64_t seed = 0) {
    PartitionConfig pc;
    pc.scheme = PartitionScheme::DirichletContiguous;
    pc.n_clients = n;
    pc.seed = seed;
    return make_partition(b, pc);
}

}  // namespace

TEST(Aggregate, TwoScalarCases) {
    std::vector<ParameterSet> p{scalar_set(2.0), scalar_set(4.0)};
    std::vector<double> eq{1.0, 1.0};
    EXPECT_NEAR(aggregate_weighted(p, eq)[0].value(0, 0), 3.0, 1e-12);
    std::vector<ParameterSet> q{scalar_set(0.0), scalar_set(4.0)};
    std::vector<double> w{1.0, 3.0};
    EXPECT_NEAR(aggregate_weighted(q, w)[0].value(0, 0), 3.0, 1e-12);
}

TEST(Aggregate, IdempotentOnIdenticalInputs) {
    Rng rng(1);
    const ParameterSet p = random_set(rng);
    std::vector<ParameterSet> same(5, p);
    std::vector<double> w{1, 7, 3, 2, 9};
    EXPECT_LE(fixture::max_abs_diff(aggregate_weighted(same, w), p), 1e-12);
}

TEST(Aggregate, SingleClientIsExactCopy) {
    Rng rng(2);
    const ParameterSet p = random_set(rng);
    std::vector<ParameterSet> one{p};
    std::vector<double> w{1234.0};
    EXPECT_TRUE(aggregate_weighted(one, w) == p);
}

TEST(Aggregate, WeightScaleInvariant) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ParameterSet> ps;
        std::vector<double> w, w_scaled;
        const double c = std::exp(rng.uniform(-5.0, 5.0));
        for (int i = 0; i < 4; ++i) {
            ps.push_back(random_set(rng));
            w.push_back(rng.uniform(0.1, 10.0));
            w_scaled.push_back(w.back() * c);
        }
        EXPECT_LE(fixture::max_abs_diff(aggregate_weighted(ps, w), aggregate_weighted(ps, w_scaled)), 1e-12);
    }
}

TEST(Aggregate, MatchesExplicitWeightedMean) {
    Rng rng(4);
    std::vector<ParameterSet> ps;
    std::vector<double> w;
    for (int i = 0; i < 3; ++i) {
        ps.push_back(random_set(rng));
        w.push_back(static_cast<double>(i + 1));
    }
    const ParameterSet agg = aggregate_weighted(ps, w);
    for (std::size_t e = 0; e < agg.size(); ++e) {
        Matrix want = (1.0 * ps[0][e].value + 2.0 * ps[1][e].value + 3.0 * ps[2][e].value) / 6.0;
        EXPECT_LE((agg[e].value - want).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Aggregate, RejectsBadInput) {
    std::vector<ParameterSet> none;
    std::vector<double> nw;
    EXPECT_THROW(aggregate_weighted(none, nw), AggregationError);
    std::vector<ParameterSet> two{scalar_set(1.0), scalar_set(2.0)};
    std::vector<double> zeros{0.0, 0.0};
    EXPECT_THROW(aggregate_weighted(two, zeros), AggregationError);
    std::vector<double> neg{1.0, -1.0};
    EXPECT_THROW(aggregate_weighted(two, neg), AggregationError);
    std::vector<ParameterSet> mismatch{scalar_set(1.0, "w"), scalar_set(2.0, "v")};
    std::vector<double> ones{1.0, 1.0};
    EXPECT_THROW(aggregate_weighted(mismatch, ones), AggregationError);
}

TEST(FedProx, ValueAndGradient) {
    ParameterSet local, global;
    local.add("w", (Matrix(1, 2) << 1.0, 3.0).finished());
    global.add("w", (Matrix(1, 2) << 0.0, 1.0).finished());
    auto [value, grad] = fedprox_penalty(local, global, 0.1);
    EXPECT_NEAR(value, 0.05 * (1.0 + 4.0), 1e-15);
    EXPECT_NEAR(grad[0].value(0, 0), 0.1, 1e-15);
    EXPECT_NEAR(grad[0].value(0, 1), 0.2, 1e-15);
}

TEST(FedProx, ZeroAtGlobalOrZeroMu) {
    Rng rng(5);
    const ParameterSet p = random_set(rng);
    EXPECT_EQ(fedprox_penalty(p, p, 0.5).first, 0.0);
    const ParameterSet q = random_set(rng);
    EXPECT_EQ(fedprox_penalty(p, q, 0.0).first, 0.0);
}

TEST(Moon, SymmetricSimilarityGivesLn2) {
    const Vector z = vec({0.3, -1.2, 0.7});
    const Vector r = vec({1.0, 0.5, -0.2});
    EXPECT_NEAR(moon_contrastive_loss(z, r, r, 0.5), std::log(2.0), 1e-12);
}

TEST(Moon, OrthogonalCaseAtTauHalf) {
    const Vector z = vec({1.0, 0.0});
    const Vector zg = vec({1.0, 0.0});
    const Vector zp = vec({0.0, 1.0});
    const double want = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));
    EXPECT_NEAR(moon_contrastive_loss(z, zg, zp, 0.5), want, 1e-12);
}

TEST(Moon, ZeroNormThrows) {
    const Vector z = vec({0.0, 0.0});
    const Vector r = vec({1.0, 0.0});
    EXPECT_THROW(moon_contrastive_loss(z, r, r, 0.5), DegenerateRepresentationError);
    EXPECT_THROW(moon_contrastive_loss(r, z, r, 0.5), DegenerateRepresentationError);
}

TEST(Moon, BatchLossIsRowMeanOfScalarLoss) {
    Rng rng(6);
    Matrix z(4, 3), zg(4, 3), zp(4, 3);
    for (Index i = 0; i < z.size(); ++i) {
        z.data()[i] = rng.normal();
        zg.data()[i] = rng.normal();
        zp.data()[i] = rng.normal();
    }
    ad::Tape tape;
    ad::Var zv = tape.variable(z);
    const double got = moon_contrastive_var(tape, zv, zg, zp, 0.5).scalar();
    double want = 0.0;
    for (Index r = 0; r < 4; ++r)
        want += moon_contrastive_loss(z.row(r).transpose(), zg.row(r).transpose(), zp.row(r).transpose(), 0.5);
    EXPECT_NEAR(got, want / 4.0, 1e-12);
}

TEST(Scaffold, ScalarWorkedExample) {
    const auto u = scaffold_update_variates(scalar_set(0.0), scalar_set(0.0), scalar_set(1.0), scalar_set(0.8), 0.1, 2);
    EXPECT_EQ(u.c_client[0].value(0, 0), 1.0);
    EXPECT_EQ(u.delta[0].value(0, 0), 1.0);
}

TEST(Scaffold, ZeroStepsIsProtocolError) {
    EXPECT_THROW(scaffold_update_variates(scalar_set(0), scalar_set(0), scalar_set(1), scalar_set(1), 0.1, 0),
                 ProtocolError);
}

TEST(Scaffold, StepCorrection) {
    const auto g = scaffold_local_step_correction(scalar_set(0.5), scalar_set(0.25), scalar_set(1.0));
    EXPECT_DOUBLE_EQ(g[0].value(0, 0), 0.5 - 1.0 + 0.25);
}

TEST(Scaffold, ServerVariateIsMeanOfClientVariates) {
    const auto bundle = fixture::smoke_bundle();
    const auto a = dirichlet_clients(bundle, 6);
    const ModelConfig m = fixture::smoke_model(ModelKind::USAD, bundle.dims);
    FederationConfig cfg;
    cfg.strategy = Strategy::Scaffold;
    cfg.local_epochs = 1;
    auto clients = make_clients(bundle, a, m);
    ServerState server;
    server.global_params = initial_global_model(m, 0, clients);
    for (int r = 0; r < 5; ++r) {
        run_round(server, clients, m, cfg);
        ParameterSet mean = server.global_params.zeros_like();
        for (const auto& c : clients) mean += c.control_variate;
        mean *= 1.0 / static_cast<double>(clients.size());
        EXPECT_LE(fixture::max_abs_diff(mean, server.server_control_variate), 1e-9) << "round " << r + 1;
    }
}

class Reductions : public ::testing::TestWithParam<ModelKind> {};

TEST_P(Reductions, FedProxWithZeroMuIsFedAvg) {
    const auto bundle = fixture::smoke_bundle();
    const auto a = dirichlet_clients(bundle, 4);
    const ModelConfig m = fixture::smoke_model(GetParam(), bundle.dims);
    FederationConfig avg;
    avg.strategy = Strategy::FedAvg;
    avg.local_epochs = 1;
    FederationConfig prox = avg;
    prox.strategy = Strategy::FedProx;
    prox.mu = 0.0;
    const auto ta = run_rounds(bundle, a, m, avg, 3);
    const auto tp = run_rounds(bundle, a, m, prox, 3);
    for (int r = 0; r < 3; ++r) EXPECT_LE(fixture::max_abs_diff(ta.globals[r], tp.globals[r]), 1e-6);
}

TEST_P(Reductions, MoonWithZeroWeightIsFedAvg) {
    const auto bundle = fixture::smoke_bundle();
    const auto a = dirichlet_clients(bundle, 4);
    const ModelConfig m = fixture::smoke_model(GetParam(), bundle.dims);
    FederationConfig avg;
    avg.strategy = Strategy::FedAvg;
    avg.local_epochs = 1;
    FederationConfig moon = avg;
    moon.strategy = Strategy::Moon;
    moon.contrastive_weight = 0.0;
    const auto ta = run_rounds(bundle, a, m, avg, 3);
    const auto tm = run_rounds(bundle, a, m, moon, 3);
    for (int r = 0; r < 3; ++r) EXPECT_LE(fixture::max_abs_diff(ta.globals[r], tm.globals[r]), 1e-6);
}

TEST_P(Reductions, OneClientFedAvgIsCentralized) {
    const auto bundle = fixture::smoke_bundle();
    const ModelConfig m = fixture::smoke_model(GetParam(), bundle.dims);
    FederationConfig avg;
    avg.strategy = Strategy::FedAvg;
    avg.global_epochs = 3;
    avg.local_epochs = 1;
    FederationConfig central = avg;
    central.strategy = Strategy::Centralized;
    const auto fa = run_training(avg, m, bundle, single_client(bundle));
    const auto ce = run_training(central, m, bundle, single_client(bundle));
    EXPECT_LE(fixture::max_abs_diff(fa.global_params, ce.global_params), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Detectors, Reductions, ::testing::Values(ModelKind::DeepSVDD, ModelKind::USAD, ModelKind::GDN),
                         [](const auto& info) { return cli_name(info.param); });

TEST(Federation, ParallelClientsMatchSerial) {
    const auto bundle = fixture::smoke_bundle();
    const auto a = dirichlet_clients(bundle, 8);
    const ModelConfig m = fixture::smoke_model(ModelKind::USAD, bundle.dims);
    FederationConfig cfg;
    cfg.strategy = Strategy::Moon;
    cfg.local_epochs = 1;
    const auto serial = run_rounds(bundle, a, m, cfg, 2);
    cfg.workers = 4;
    const auto parallel = run_rounds(bundle, a, m, cfg, 2);
    EXPECT_TRUE(serial.globals.back() == parallel.globals.back());
}

TEST(Federation, IsolatedClientsTrainIndependently) {
    const auto bundle = fixture::smoke_bundle();
    const auto a = dirichlet_clients(bundle, 5);
    const ModelConfig m = fixture::smoke_model(ModelKind::USAD, bundle.dims);
    FederationConfig cfg;
    cfg.strategy = Strategy::Isolated;
    cfg.global_epochs = 2;
    cfg.local_epochs = 1;
    const auto out = run_training(cfg, m, bundle, a);
    ASSERT_EQ(out.client_params.size(), 5u);
    ASSERT_EQ(out.round_seconds.size(), 2u);
    // Client 0 trained alone equals client 0 of the isolated run.
    ClientAssignment only0;
    only0.n_clients = 1;
    only0.assignment = {a.assignment[0]};
    only0.proportions = {1.0};
    auto solo = make_clients(bundle, only0, m);
    solo[0].params = init_model(m, cfg.seed);
    train_client(solo[0], m, cfg, 2, {});
    EXPECT_TRUE(solo[0].params == out.client_params[0]);
}

TEST(Federation, RoundTimingsPositiveAndBounded) {
    const auto bundle = fixture::smoke_bundle();
    const auto a = dirichlet_clients(bundle, 4);
    const ModelConfig m = fixture::smoke_model(ModelKind::DeepSVDD, bundle.dims);
    FederationConfig cfg;
    cfg.global_epochs = 3;
    cfg.local_epochs = 1;
    const auto out = run_training(cfg, m, bundle, a);
    double sum = 0.0;
    for (double s : out.round_seconds) {
        EXPECT_GT(s, 0.0);
        sum += s;
    }
    EXPECT_LE(sum, out.total_seconds);
}

TEST(Federation, ClientWithoutWindowsKeepsGlobalModel) {
    const auto bundle = fixture::smoke_bundle();
    // Client 1 owns fewer rows than one window.
    std::vector<Index> sizes{bundle.total_train_rows() - 5, 5};
    const auto a = detail::blocks_to_assignment(bundle.series, sizes);
    const ModelConfig m = fixture::smoke_model(ModelKind::USAD, bundle.dims);
    FederationConfig cfg;
    cfg.strategy = Strategy::Scaffold;
    cfg.local_epochs = 1;
    auto clients = make_clients(bundle, a, m);
    ServerState server;
    server.global_params = initial_global_model(m, 0, clients);
    const ParameterSet before = server.global_params;
    run_round(server, clients, m, cfg);
    EXPECT_TRUE(clients[1].params == before);
    EXPECT_EQ(clients[1].control_variate.squared_norm(), 0.0);
}

TEST(Federation, RoundLogFormat) {
    std::ostringstream os;
    write_round_log(os, RoundLog{2, 7, 0.5, 1.25});
    EXPECT_EQ(os.str(), "round=2 client=7 loss=0.5 seconds=1.250000\n");
}

namespace {

// Scalar model w with loss mean((w - x)^2) over one-dimensional windows of
// length one.
class QuadraticToy : public Detector {
public:
    ModelKind kind() const override { return ModelKind::DeepSVDD; }
    ParameterSet init(const ModelConfig&, Rng&) const override { return scalar_set(0.0); }
    ad::Var loss(ad::Tape& tape, const BoundParams& p, const ModelConfig&, const Matrix& batch, int,
                 int) const override {
        return ad::mean(ad::square(ad::add_row(tape.constant(-batch), p["w"])));
    }
    ad::Var representation(ad::Tape&, const BoundParams& p, const ModelConfig&, const Matrix&) const override {
        return p["w"];
    }
    Vector window_scores(const ParameterSet& params, const ModelConfig&, const Matrix& batch) const override {
        return (batch.col(0).array() - params.at("w")(0, 0)).square().matrix();
    }
};

}  // namespace

TEST(Federation, TwoScalarClientsFollowHandSimulatedTrajectory) {
    DatasetBundle b;
    b.dims = 1;
    const double targets[2] = {2.0, -1.0};
    const Index rows[2] = {3, 1};
    ClientAssignment a;
    a.n_clients = 2;
    for (std::size_t c = 0; c < 2; ++c) {
        MultivariateSeries s;
        s.entity_id = "c" + std::to_string(c);
        s.train = Matrix::Constant(rows[c], 1, targets[c]);
        b.series.push_back(s);
        a.assignment.push_back({RowSlice{c, s.entity_id, 0, rows[c]}});
    }
    ModelConfig m;
    m.input_dims = 1;
    m.window_len = 1;
    m.learning_rate = 0.1;
    FederationConfig cfg;
    cfg.strategy = Strategy::FedAvg;
    cfg.local_epochs = 2;

    const QuadraticToy toy;
    auto clients = make_clients(b, a, m);
    ServerState server;
    server.global_params = scalar_set(0.5);

    // Each local epoch is one full batch with gradient 2(w - target).
    double w = 0.5;
    double mo[2] = {0, 0}, vo[2] = {0, 0};
    int t[2] = {0, 0};
    for (int round = 0; round < 4; ++round) {
        run_round(server, clients, toy, m, cfg);
        double next = 0.0;
        for (int c = 0; c < 2; ++c) {
            double x = w;
            for (int e = 0; e < cfg.local_epochs; ++e) {
                const double g = 2.0 * (x - targets[c]);
                ++t[c];
                mo[c] = 0.9 * mo[c] + 0.1 * g;
                vo[c] = 0.999 * vo[c] + 0.001 * g * g;
                const double mh = mo[c] / (1 - std::pow(0.9, t[c]));
                const double vh = vo[c] / (1 - std::pow(0.999, t[c]));
                x -= m.learning_rate * mh / (std::sqrt(vh) + 1e-8);
            }
            next += static_cast<double>(rows[c]) * x;
        }
        w = next / 4.0;
        EXPECT_NEAR(server.global_params.at("w")(0, 0), w, 1e-12) << "round " << round + 1;
    }
}

TEST(Federation, ZeroGlobalEpochsReturnsInitialModel) {
    const auto bundle = fixture::smoke_bundle();
    const auto a = dirichlet_clients(bundle, 4);
    const ModelConfig m = fixture::smoke_model(ModelKind::DeepSVDD, bundle.dims);
    FederationConfig cfg;
    cfg.strategy = Strategy::FedAvg;
    cfg.global_epochs = 0;
    cfg.seed = 2;
    const auto out = run_training(cfg, m, bundle, a);
    const ParameterSet init = initial_global_model(m, cfg.seed, make_clients(bundle, a, m));
    ASSERT_EQ(out.global_params.size(), init.size());
    for (std::size_t i = 0; i < init.size(); ++i)
        if (init[i].trainable) EXPECT_EQ(out.global_params[i].value, init[i].value) << init[i].name;
    EXPECT_TRUE(out.round_seconds.empty());
}

TEST(Federation, CheckpointRoundTripIsExact) {
    Rng rng(12);
    ParameterSet p = random_set(rng);
    p.add("state", Matrix::Constant(1, 2, 1.0 / 3.0), false);
    std::stringstream ss;
    p.write(ss);
    EXPECT_TRUE(ParameterSet::read(ss) == p);
    std::stringstream bad("parameter_set 1\nw 1 1 1\n");
    EXPECT_THROW(ParameterSet::read(bad), FormatError);
}

#include <gtest/gtest.h>

#include <functional>
#include <vector>

#include "fedtad/autodiff.hpp"
#include "fedtad/rng.hpp"

using namespace fedtad;
using namespace fedtad::ad;

namespace {

using Build = std::function<Var(Tape&, std::vector<Var>&)>;

Matrix random_matrix(Rng& rng, Index r, Index c, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

// Contracts the op output with a fixed random weight so every output entry
// contributes a distinct amount to the scalar.
double forward(const Build& build, const std::vector<Matrix>& inputs, const Matrix& weight) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& m : inputs) vs.push_back(t.constant(m));
    return build(t, vs).value().cwiseProduct(weight).sum();
}

double worst_relative_error(const Build& build, std::vector<Matrix> inputs, std::uint64_t seed) {
    Rng rng(seed);
    Matrix weight;
    {
        Tape t;
        std::vector<Var> vs;
        for (const auto& m : inputs) vs.push_back(t.constant(m));
        const Var y = build(t, vs);
        weight = random_matrix(rng, y.rows(), y.cols());
    }
    Tape t;
    std::vector<Var> vs;
    for (const auto& m : inputs) vs.push_back(t.variable(m));
    const Var y = build(t, vs);
    Var w = t.constant(weight);
    t.backward(sum(hadamard(y, w)));
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Matrix analytic = vs[k].grad();
        for (Index i = 0; i < inputs[k].size(); ++i) {
            auto probe = inputs;
            probe[k].data()[i] += h;
            const double up = forward(build, probe, weight);
            probe[k].data()[i] -= 2 * h;
            const double down = forward(build, probe, weight);
            const double numeric = (up - down) / (2 * h);
            const double a = analytic.size() ? analytic.data()[i] : 0.0;
            worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
        }
    }
    return worst;
}

struct OpCase {
    const char* name;
    std::vector<std::pair<Index, Index>> shapes;
    Build build;
    double lo = -1.0, hi = 1.0;
};

std::vector<OpCase> op_cases() {
    return {
        {"matmul", {{3, 4}, {4, 2}}, [](Tape&, auto& v) { return matmul(v[0], v[1]); }},
        {"add", {{3, 2}, {3, 2}}, [](Tape&, auto& v) { return add(v[0], v[1]); }},
        {"sub", {{3, 2}, {3, 2}}, [](Tape&, auto& v) { return sub(v[0], v[1]); }},
        {"hadamard", {{3, 2}, {3, 2}}, [](Tape&, auto& v) { return hadamard(v[0], v[1]); }},
        {"add_row", {{4, 3}, {1, 3}}, [](Tape&, auto& v) { return add_row(v[0], v[1]); }},
        {"mul_col", {{4, 3}, {4, 1}}, [](Tape&, auto& v) { return mul_col(v[0], v[1]); }},
        {"scale", {{2, 3}}, [](Tape&, auto& v) { return scale(v[0], -2.5); }},
        {"add_scalar", {{2, 3}}, [](Tape&, auto& v) { return add_scalar(v[0], 0.7); }},
        {"tanh", {{3, 3}}, [](Tape&, auto& v) { return tanh(v[0]); }},
        {"sigmoid", {{3, 3}}, [](Tape&, auto& v) { return sigmoid(v[0]); }},
        {"leaky_relu", {{3, 3}}, [](Tape&, auto& v) { return leaky_relu(v[0], 0.2); }},
        {"exp", {{3, 3}}, [](Tape&, auto& v) { return exp(v[0]); }},
        {"log", {{3, 3}}, [](Tape&, auto& v) { return log(v[0]); }, 0.5, 2.0},
        {"square", {{3, 3}}, [](Tape&, auto& v) { return square(v[0]); }},
        {"sqrt", {{3, 3}}, [](Tape&, auto& v) { return sqrt(v[0]); }, 0.5, 2.0},
        {"reciprocal", {{3, 3}}, [](Tape&, auto& v) { return reciprocal(v[0]); }, 0.5, 2.0},
        {"softplus", {{3, 3}}, [](Tape&, auto& v) { return softplus(v[0]); }, -3.0, 3.0},
        {"sum", {{3, 4}}, [](Tape&, auto& v) { return sum(v[0]); }},
        {"mean", {{3, 4}}, [](Tape&, auto& v) { return mean(v[0]); }},
        {"row_sum", {{3, 4}}, [](Tape&, auto& v) { return row_sum(v[0]); }},
        {"row_mean", {{3, 4}}, [](Tape&, auto& v) { return row_mean(v[0]); }},
        {"col_mean", {{3, 4}}, [](Tape&, auto& v) { return col_mean(v[0]); }},
        {"cols", {{3, 5}}, [](Tape&, auto& v) { return cols(v[0], 1, 3); }},
        {"rows", {{5, 3}}, [](Tape&, auto& v) { return rows(v[0], 2, 2); }},
        {"hcat", {{3, 2}, {3, 1}}, [](Tape&, auto& v) { return hcat({v[0], v[1], v[0]}); }},
        {"vcat", {{2, 3}, {1, 3}}, [](Tape&, auto& v) { return vcat({v[1], v[0]}); }},
        {"gather_rows", {{4, 3}}, [](Tape&, auto& v) { return gather_rows(v[0], {3, 0, 3, 1}); }},
        {"transpose", {{2, 5}}, [](Tape&, auto& v) { return transpose(v[0]); }},
        {"softmax_rows", {{3, 4}}, [](Tape&, auto& v) { return softmax_rows(v[0]); }},
        {"block_attention", {{4, 6}, {6, 6}, {6, 6}},
         [](Tape&, auto& v) { return block_attention(v[0], v[1], v[2], 2, 3, 0.5); }},
        {"mse", {{3, 2}, {3, 2}}, [](Tape&, auto& v) { return mse(v[0], v[1]); }},
        {"row_mse", {{3, 2}, {3, 2}}, [](Tape&, auto& v) { return row_mse(v[0], v[1]); }},
        {"composite", {{4, 3}, {3, 3}, {1, 3}},
         [](Tape&, auto& v) { return softmax_rows(tanh(add_row(matmul(v[0], v[1]), v[2]))); }},
    };
}

}  // namespace

TEST(Autodiff, EveryOpMatchesCentralDifferences) {
    std::uint64_t seed = 1;
    for (const auto& c : op_cases()) {
        for (int trial = 0; trial < 5; ++trial) {
            Rng rng(seed++);
            std::vector<Matrix> inputs;
            for (auto [r, k] : c.shapes) inputs.push_back(random_matrix(rng, r, k, c.lo, c.hi));
            EXPECT_LT(worst_relative_error(c.build, inputs, seed), 1e-6) << c.name << " trial " << trial;
        }
    }
}

TEST(Autodiff, ReluGradientAwayFromKink) {
    Tape t;
    Matrix m(1, 4);
    m << -2.0, -0.5, 0.5, 3.0;
    Var x = t.variable(m);
    t.backward(sum(relu(x)));
    EXPECT_EQ(x.grad(), (Matrix(1, 4) << 0, 0, 1, 1).finished());
}

TEST(Autodiff, ReusedNodeAccumulatesGradient) {
    Tape t;
    Var x = t.variable(Matrix::Constant(1, 1, 3.0));
    t.backward(sum(hadamard(x, x)));
    EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
    Tape t;
    Var c = t.constant(Matrix::Constant(2, 2, 1.0));
    Var x = t.variable(Matrix::Constant(2, 2, 2.0));
    t.backward(sum(hadamard(c, x)));
    EXPECT_EQ(x.grad(), Matrix::Constant(2, 2, 1.0));
    EXPECT_TRUE(c.grad().size() == 0 || c.grad().isZero());
}

TEST(Autodiff, ShapeMismatchThrows) {
    Tape t;
    Var a = t.variable(Matrix::Zero(2, 3));
    Var b = t.variable(Matrix::Zero(2, 3));
    EXPECT_THROW(matmul(a, b), ShapeError);
    EXPECT_THROW(add(a, t.variable(Matrix::Zero(3, 2))), ShapeError);
    EXPECT_THROW(add_row(a, t.variable(Matrix::Zero(1, 2))), ShapeError);
}

#pragma once

// A small reverse-mode automatic differentiation tape over dense matrices.
//
// Every value is an Eigen matrix; scalars are 1x1. A Tape records operations
// in creation order, so a single reverse sweep from the root propagates
// gradients. Tapes are cheap to create and are meant to live for exactly one
// loss evaluation.

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "fedtad/error.hpp"

namespace fedtad::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Matrix& value() const;
    const Matrix& grad() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }

    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, int)>;

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value) { return push(std::move(value), false, nullptr); }
    Var variable(Matrix value) { return push(std::move(value), true, nullptr); }

    Var push(Matrix value, bool requires_grad, Backward backward) {
        nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward), requires_grad});
        return Var(this, static_cast<int>(nodes_.size()) - 1);
    }

    const Matrix& value(int id) const { return nodes_[id].value; }
    const Matrix& grad(int id) const { return nodes_[id].grad; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    template <class Expr>
    void accumulate(int id, const Expr& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    // Seeds d(root)/d(root) = 1 and sweeps backwards.
    void backward(Var root) {
        if (root.rows() != 1 || root.cols() != 1) {
            throw ShapeError("backward requires a scalar root");
        }
        for (auto& n : nodes_) n.grad.resize(0, 0);
        nodes_[root.id()].grad = Matrix::Ones(1, 1);
        for (int id = root.id(); id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.backward && n.grad.size() != 0) n.backward(*this, id);
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        bool requires_grad;
    };
    std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const { return tape_->grad(id_); }

namespace detail {

inline bool any_grad(std::initializer_list<Var> vs) {
    for (const auto& v : vs)
        if (v.tape()->requires_grad(v.id())) return true;
    return false;
}

inline void same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
}

// Elementwise unary op given f(x) and f'(x) expressed via (x, y).
template <class F, class DF>
Var unary(Var a, F f, DF df) {
    Tape& t = *a.tape();
    Matrix y = a.value().unaryExpr(f);
    const int ia = a.id();
    return t.push(std::move(y), any_grad({a}), [ia, df](Tape& tp, int self) {
        const Matrix& x = tp.value(ia);
        const Matrix& y = tp.value(self);
        Matrix d(x.rows(), x.cols());
        for (Index j = 0; j < x.cols(); ++j)
            for (Index i = 0; i < x.rows(); ++i) d(i, j) = df(x(i, j), y(i, j));
        tp.accumulate(ia, tp.grad(self).cwiseProduct(d));
    });
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.push(a.value() * b.value(), detail::any_grad({a, b}), [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
        if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
    });
}

inline Var add(Var a, Var b) {
    detail::same_shape(a, b, "add");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.push(a.value() + b.value(), detail::any_grad({a, b}), [ia, ib](Tape& tp, int self) {
        tp.accumulate(ia, tp.grad(self));
        tp.accumulate(ib, tp.grad(self));
    });
}

inline Var sub(Var a, Var b) {
    detail::same_shape(a, b, "sub");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.push(a.value() - b.value(), detail::any_grad({a, b}), [ia, ib](Tape& tp, int self) {
        tp.accumulate(ia, tp.grad(self));
        tp.accumulate(ib, -tp.grad(self));
    });
}

inline Var hadamard(Var a, Var b) {
    detail::same_shape(a, b, "hadamard");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.push(a.value().cwiseProduct(b.value()), detail::any_grad({a, b}),
                  [ia, ib](Tape& tp, int self) {
                      const Matrix& g = tp.grad(self);
                      if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
                      if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
                  });
}

// a (r x c) + row (1 x c), broadcast down the rows.
inline Var add_row(Var a, Var row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: bad row shape");
    Tape& t = *a.tape();
    const int ia = a.id(), ir = row.id();
    Matrix y = a.value().rowwise() + row.value().row(0);
    return t.push(std::move(y), detail::any_grad({a, row}), [ia, ir](Tape& tp, int self) {
        tp.accumulate(ia, tp.grad(self));
        if (tp.requires_grad(ir)) tp.accumulate(ir, tp.grad(self).colwise().sum());
    });
}

// a (r x c) scaled row-wise by col (r x 1).
inline Var mul_col(Var a, Var col) {
    if (col.cols() != 1 || col.rows() != a.rows()) throw ShapeError("mul_col: bad column shape");
    Tape& t = *a.tape();
    const int ia = a.id(), ic = col.id();
    Matrix y = a.value().array().colwise() * col.value().col(0).array();
    return t.push(std::move(y), detail::any_grad({a, col}), [ia, ic](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) {
            Matrix d = g.array().colwise() * tp.value(ic).col(0).array();
            tp.accumulate(ia, d);
        }
        if (tp.requires_grad(ic)) {
            tp.accumulate(ic, g.cwiseProduct(tp.value(ia)).rowwise().sum());
        }
    });
}

inline Var scale(Var a, double s) {
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.push(a.value() * s, detail::any_grad({a}),
                  [ia, s](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self) * s); });
}

inline Var add_scalar(Var a, double s) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix y = a.value().array() + s;
    return t.push(std::move(y), detail::any_grad({a}),
                  [ia](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self)); });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var tanh(Var a) {
    return detail::unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
    return detail::unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(Var a) {
    return detail::unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(Var a, double slope) {
    return detail::unary(
        a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Var exp(Var a) {
    return detail::unary(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
    return detail::unary(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var square(Var a) {
    return detail::unary(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(Var a) {
    return detail::unary(
        a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var reciprocal(Var a) {
    return detail::unary(
        a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

// log(1 + e^x), evaluated stably.
inline Var softplus(Var a) {
    return detail::unary(
        a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Var sum(Var a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix y(1, 1);
    y(0, 0) = a.value().sum();
    return t.push(std::move(y), detail::any_grad({a}), [ia](Tape& tp, int self) {
        const Matrix& x = tp.value(ia);
        tp.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), tp.grad(self)(0, 0)));
    });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// (r x c) -> (r x 1)
inline Var row_sum(Var a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix y = a.value().rowwise().sum();
    return t.push(std::move(y), detail::any_grad({a}), [ia](Tape& tp, int self) {
        const Index c = tp.value(ia).cols();
        tp.accumulate(ia, tp.grad(self).replicate(1, c));
    });
}

inline Var row_mean(Var a) { return scale(row_sum(a), 1.0 / static_cast<double>(a.cols())); }

// (r x c) -> (1 x c)
inline Var col_mean(Var a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    const double inv = 1.0 / static_cast<double>(a.rows());
    Matrix y = a.value().colwise().sum() * inv;
    return t.push(std::move(y), detail::any_grad({a}), [ia, inv](Tape& tp, int self) {
        const Index r = tp.value(ia).rows();
        tp.accumulate(ia, (tp.grad(self) * inv).replicate(r, 1));
    });
}

inline Var cols(Var a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("cols: out of range");
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix y = a.value().middleCols(start, count);
    return t.push(std::move(y), detail::any_grad({a}), [ia, start, count](Tape& tp, int self) {
        const Matrix& x = tp.value(ia);
        Matrix d = Matrix::Zero(x.rows(), x.cols());
        d.middleCols(start, count) = tp.grad(self);
        tp.accumulate(ia, d);
    });
}

inline Var rows(Var a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("rows: out of range");
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix y = a.value().middleRows(start, count);
    return t.push(std::move(y), detail::any_grad({a}), [ia, start, count](Tape& tp, int self) {
        const Matrix& x = tp.value(ia);
        Matrix d = Matrix::Zero(x.rows(), x.cols());
        d.middleRows(start, count) = tp.grad(self);
        tp.accumulate(ia, d);
    });
}

inline Var hcat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("hcat: no inputs");
    Tape& t = *parts.front().tape();
    const Index r = parts.front().rows();
    Index c = 0;
    bool needs = false;
    std::vector<int> ids;
    std::vector<Index> widths;
    for (const auto& p : parts) {
        if (p.rows() != r) throw ShapeError("hcat: row counts differ");
        c += p.cols();
        needs = needs || t.requires_grad(p.id());
        ids.push_back(p.id());
        widths.push_back(p.cols());
    }
    Matrix y(r, c);
    Index off = 0;
    for (const auto& p : parts) {
        y.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    return t.push(std::move(y), needs, [ids, widths](Tape& tp, int self) {
        Index o = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (tp.requires_grad(ids[k])) tp.accumulate(ids[k], tp.grad(self).middleCols(o, widths[k]));
            o += widths[k];
        }
    });
}

inline Var vcat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("vcat: no inputs");
    Tape& t = *parts.front().tape();
    const Index c = parts.front().cols();
    Index r = 0;
    bool needs = false;
    std::vector<int> ids;
    std::vector<Index> heights;
    for (const auto& p : parts) {
        if (p.cols() != c) throw ShapeError("vcat: column counts differ");
        r += p.rows();
        needs = needs || t.requires_grad(p.id());
        ids.push_back(p.id());
        heights.push_back(p.rows());
    }
    Matrix y(r, c);
    Index off = 0;
    for (const auto& p : parts) {
        y.middleRows(off, p.rows()) = p.value();
        off += p.rows();
    }
    return t.push(std::move(y), needs, [ids, heights](Tape& tp, int self) {
        Index o = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (tp.requires_grad(ids[k])) tp.accumulate(ids[k], tp.grad(self).middleRows(o, heights[k]));
            o += heights[k];
        }
    });
}

inline Var hcat(std::initializer_list<Var> parts) {
    return hcat(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var vcat(std::initializer_list<Var> parts) {
    return vcat(std::span<const Var>(parts.begin(), parts.size()));
}

// out.row(i) = a.row(index[i]); gradient scatters back with accumulation.
inline Var gather_rows(Var a, std::vector<Index> index) {
    Tape& t = *a.tape();
    Matrix y(static_cast<Index>(index.size()), a.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
        y.row(static_cast<Index>(i)) = a.value().row(index[i]);
    }
    const int ia = a.id();
    return t.push(std::move(y), detail::any_grad({a}), [ia, index = std::move(index)](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix d = Matrix::Zero(tp.value(ia).rows(), tp.value(ia).cols());
        for (std::size_t i = 0; i < index.size(); ++i) d.row(index[i]) += g.row(static_cast<Index>(i));
        tp.accumulate(ia, d);
    });
}

inline Var transpose(Var a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.push(a.value().transpose(), detail::any_grad({a}),
                  [ia](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self).transpose()); });
}

inline Var softmax_rows(Var a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Matrix y = a.value();
    for (Index i = 0; i < y.rows(); ++i) {
        const double m = y.row(i).maxCoeff();
        y.row(i) = (y.row(i).array() - m).exp();
        y.row(i) /= y.row(i).sum();
    }
    return t.push(std::move(y), detail::any_grad({a}), [ia](Tape& tp, int self) {
        const Matrix& s = tp.value(self);
        const Matrix& g = tp.grad(self);
        Eigen::VectorXd inner = g.cwiseProduct(s).rowwise().sum();
        Matrix d = s.cwiseProduct(g.colwise() - inner);
        tp.accumulate(ia, d);
    });
}

// Scaled dot-product attention applied independently to consecutive row
// blocks: block b of the output is softmax(Q_b K_b^T * scale) V_b, where Q_b
// holds rows [b*q_block, (b+1)*q_block) of q and K_b, V_b rows
// [b*kv_block, (b+1)*kv_block) of k and v.
inline Var block_attention(Var q, Var k, Var v, Index q_block, Index kv_block, double scale) {
    if (q.cols() != k.cols() || k.rows() != v.rows()) throw ShapeError("block_attention: shape mismatch");
    if (q_block <= 0 || kv_block <= 0 || q.rows() % q_block != 0 || k.rows() % kv_block != 0 ||
        q.rows() / q_block != k.rows() / kv_block)
        throw ShapeError("block_attention: blocks do not tile the inputs");
    Tape& t = *q.tape();
    const Index blocks = q.rows() / q_block;
    Matrix out(q.rows(), v.cols());
    std::vector<Matrix> weights(static_cast<std::size_t>(blocks));
    for (Index b = 0; b < blocks; ++b) {
        Matrix s = q.value().middleRows(b * q_block, q_block) * k.value().middleRows(b * kv_block, kv_block).transpose();
        s *= scale;
        for (Index i = 0; i < s.rows(); ++i) {
            const double m = s.row(i).maxCoeff();
            s.row(i) = (s.row(i).array() - m).exp();
            s.row(i) /= s.row(i).sum();
        }
        out.middleRows(b * q_block, q_block) = s * v.value().middleRows(b * kv_block, kv_block);
        weights[static_cast<std::size_t>(b)] = std::move(s);
    }
    const int iq = q.id(), ik = k.id(), iv = v.id();
    return t.push(std::move(out), detail::any_grad({q, k, v}),
                  [iq, ik, iv, q_block, kv_block, scale, blocks, weights = std::move(weights)](Tape& tp, int self) {
                      const Matrix& g = tp.grad(self);
                      const Matrix& qv = tp.value(iq);
                      const Matrix& kv = tp.value(ik);
                      const Matrix& vv = tp.value(iv);
                      Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
                      Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
                      Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
                      for (Index b = 0; b < blocks; ++b) {
                          const Matrix& a = weights[static_cast<std::size_t>(b)];
                          const auto gb = g.middleRows(b * q_block, q_block);
                          dv.middleRows(b * kv_block, kv_block) = a.transpose() * gb;
                          Matrix da = gb * vv.middleRows(b * kv_block, kv_block).transpose();
                          Eigen::VectorXd inner = da.cwiseProduct(a).rowwise().sum();
                          Matrix ds = a.cwiseProduct(da.colwise() - inner) * scale;
                          dq.middleRows(b * q_block, q_block) = ds * kv.middleRows(b * kv_block, kv_block);
                          dk.middleRows(b * kv_block, kv_block) = ds.transpose() * qv.middleRows(b * q_block, q_block);
                      }
                      tp.accumulate(iq, dq);
                      tp.accumulate(ik, dk);
                      tp.accumulate(iv, dv);
                  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// Mean squared error between two equally shaped matrices.
inline Var mse(Var a, Var b) { return mean(square(sub(a, b))); }

// Per-row mean squared error, (r x 1).
inline Var row_mse(Var a, Var b) { return row_mean(square(sub(a, b))); }

}  // namespace fedtad::ad

#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedtad/autodiff.hpp"
#include "fedtad/error.hpp"

namespace fedtad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ParamEntry {
    std::string name;
    Matrix value;
    bool trainable = true;
};

// Ordered collection of named tensors holding one model's state. Entry order
// is fixed at construction, so two sets built by the same model kind and
// config line up index by index.
class ParameterSet {
public:
    ParameterSet() = default;

    void add(std::string name, Matrix value, bool trainable = true) {
        if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
        index_.emplace(name, entries_.size());
        entries_.push_back(ParamEntry{std::move(name), std::move(value), trainable});
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    const std::vector<ParamEntry>& entries() const { return entries_; }
    ParamEntry& operator[](std::size_t i) { return entries_[i]; }
    const ParamEntry& operator[](std::size_t i) const { return entries_[i]; }

    bool contains(const std::string& name) const { return index_.contains(name); }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    Matrix& at(const std::string& name) { return entries_[index_of(name)].value; }
    const Matrix& at(const std::string& name) const { return entries_[index_of(name)].value; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
        return n;
    }

    bool congruent(const ParameterSet& other) const {
        if (other.size() != size()) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            const auto& a = entries_[i];
            const auto& b = other.entries_[i];
            if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
                return false;
        }
        return true;
    }

    // Throws AggregationError naming the first offending entry.
    void require_congruent(const ParameterSet& other) const {
        if (other.size() != size()) {
            throw AggregationError("parameter sets differ in entry count: " + std::to_string(size()) +
                                   " vs " + std::to_string(other.size()));
        }
        for (std::size_t i = 0; i < size(); ++i) {
            const auto& a = entries_[i];
            const auto& b = other.entries_[i];
            if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
                throw AggregationError("shape mismatch at entry '" + a.name + "'");
        }
    }

    ParameterSet zeros_like() const {
        ParameterSet z = *this;
        for (auto& e : z.entries_) e.value.setZero();
        return z;
    }

    ParameterSet& operator+=(const ParameterSet& o) {
        require_congruent(o);
        for (std::size_t i = 0; i < size(); ++i) entries_[i].value += o.entries_[i].value;
        return *this;
    }

    ParameterSet& operator-=(const ParameterSet& o) {
        require_congruent(o);
        for (std::size_t i = 0; i < size(); ++i) entries_[i].value -= o.entries_[i].value;
        return *this;
    }

    ParameterSet& operator*=(double s) {
        for (auto& e : entries_) e.value *= s;
        return *this;
    }

    // this += s * o
    ParameterSet& axpy(double s, const ParameterSet& o) {
        require_congruent(o);
        for (std::size_t i = 0; i < size(); ++i) entries_[i].value += s * o.entries_[i].value;
        return *this;
    }

    friend ParameterSet operator+(ParameterSet a, const ParameterSet& b) { return a += b; }
    friend ParameterSet operator-(ParameterSet a, const ParameterSet& b) { return a -= b; }
    friend ParameterSet operator*(ParameterSet a, double s) { return a *= s; }
    friend ParameterSet operator*(double s, ParameterSet a) { return a *= s; }

    double dot(const ParameterSet& o) const {
        require_congruent(o);
        double acc = 0.0;
        for (std::size_t i = 0; i < size(); ++i)
            acc += entries_[i].value.cwiseProduct(o.entries_[i].value).sum();
        return acc;
    }

    double squared_norm() const { return dot(*this); }

    Vector flatten() const {
        Vector v(static_cast<Eigen::Index>(scalar_count()));
        Eigen::Index off = 0;
        for (const auto& e : entries_) {
            for (Eigen::Index r = 0; r < e.value.rows(); ++r)
                for (Eigen::Index c = 0; c < e.value.cols(); ++c) v(off++) = e.value(r, c);
        }
        return v;
    }

    void unflatten(const Vector& v) {
        if (static_cast<std::size_t>(v.size()) != scalar_count())
            throw ShapeError("unflatten: wrong vector length");
        Eigen::Index off = 0;
        for (auto& e : entries_) {
            for (Eigen::Index r = 0; r < e.value.rows(); ++r)
                for (Eigen::Index c = 0; c < e.value.cols(); ++c) e.value(r, c) = v(off++);
        }
    }

    bool all_finite() const {
        for (const auto& e : entries_)
            if (!e.value.allFinite()) return false;
        return true;
    }

    // Bitwise equality of names, shapes, flags and values.
    friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
        if (!a.congruent(b)) return false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a.entries_[i].trainable != b.entries_[i].trainable) return false;
            if (a.entries_[i].value != b.entries_[i].value) return false;
        }
        return true;
    }

    // Text checkpoint: per entry a header line `name rows cols trainable`
    // followed by one line of row-major values printed with 17 significant
    // digits, so a round trip is exact.
    void write(std::ostream& os) const {
        os << "parameter_set " << size() << "\n";
        char buf[32];
        for (const auto& e : entries_) {
            os << e.name << ' ' << e.value.rows() << ' ' << e.value.cols() << ' ' << (e.trainable ? 1 : 0)
               << "\n";
            for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
                for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
                    std::snprintf(buf, sizeof buf, "%.17g", e.value(r, c));
                    if (r != 0 || c != 0) os << ' ';
                    os << buf;
                }
            }
            os << "\n";
        }
    }

    static ParameterSet read(std::istream& is) {
        std::string tag;
        std::size_t n = 0;
        if (!(is >> tag >> n) || tag != "parameter_set") throw FormatError("not a parameter_set checkpoint");
        ParameterSet p;
        for (std::size_t k = 0; k < n; ++k) {
            std::string name;
            Eigen::Index rows = 0, cols = 0;
            int trainable = 1;
            if (!(is >> name >> rows >> cols >> trainable)) throw FormatError("truncated checkpoint header");
            Matrix m(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (Eigen::Index c = 0; c < cols; ++c) {
                    std::string tok;
                    if (!(is >> tok)) throw FormatError("truncated checkpoint values for " + name);
                    m(r, c) = std::stod(tok);
                }
            }
            p.add(std::move(name), std::move(m), trainable != 0);
        }
        return p;
    }

    std::string to_string() const {
        std::ostringstream os;
        write(os);
        return os.str();
    }

    static ParameterSet from_string(const std::string& s) {
        std::istringstream is(s);
        return read(is);
    }

private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// A ParameterSet placed on a tape: trainable entries become variables,
// the rest constants.
class BoundParams {
public:
    BoundParams(ad::Tape& tape, const ParameterSet& params) : params_(&params) {
        vars_.reserve(params.size());
        for (const auto& e : params.entries())
            vars_.push_back(e.trainable ? tape.variable(e.value) : tape.constant(e.value));
    }

    ad::Var operator[](const std::string& name) const { return vars_[params_->index_of(name)]; }
    ad::Var operator[](std::size_t i) const { return vars_[i]; }
    std::size_t size() const { return vars_.size(); }
    const ParameterSet& source() const { return *params_; }

    // Gradients after Tape::backward, congruent with the source set; entries
    // the loss did not touch come back as zeros.
    ParameterSet gradients() const {
        ParameterSet g = params_->zeros_like();
        for (std::size_t i = 0; i < vars_.size(); ++i) {
            const auto& gr = vars_[i].grad();
            if (gr.size() != 0) g[i].value = gr;
        }
        return g;
    }

private:
    const ParameterSet* params_;
    std::vector<ad::Var> vars_;
};

}  // namespace fedtad

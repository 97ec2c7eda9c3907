#pragma once

// Scalar reverse-mode automatic differentiation.
//
// A Tape is an append-only arena of nodes. Every node stores its value and a
// contiguous run of (parent, local partial) edges, so parents always precede
// children and backward() is a single reverse sweep. One tape is meant to be
// owned by one worker; clear() keeps the allocation for the next pass.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dmtpp/error.hpp"
#include "dmtpp/special.hpp"

namespace dmtpp::ad {

enum class OpKind : std::uint8_t {
    leaf, add, sub, mul, div, neg, exp, log, pow, tanh, erf, max, sqrt, softplus, sum, custom
};

inline const char* op_name(OpKind k) {
    switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::neg: return "neg";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::pow: return "pow";
    case OpKind::tanh: return "tanh";
    case OpKind::erf: return "erf";
    case OpKind::max: return "max";
    case OpKind::sqrt: return "sqrt";
    case OpKind::softplus: return "softplus";
    case OpKind::sum: return "sum";
    case OpKind::custom: return "custom";
    }
    return "?";
}

class Tape;

class Var {
public:
    Var() = default;

    [[nodiscard]] double value() const noexcept { return value_; }
    [[nodiscard]] std::uint32_t index() const noexcept { return index_; }
    [[nodiscard]] Tape* tape() const noexcept { return tape_; }

private:
    friend class Tape;
    Var(Tape* tape, std::uint32_t index, double value) : tape_(tape), index_(index), value_(value) {}

    Tape* tape_ = nullptr;
    std::uint32_t index_ = 0;
    double value_ = 0.0;
};

struct Edge {
    std::uint32_t parent;
    double partial;
};

/// Adjoints of every node after a backward sweep.
class Gradient {
public:
    Gradient() = default;
    explicit Gradient(std::vector<double> adjoints) : adjoints_(std::move(adjoints)) {}

    [[nodiscard]] double operator[](const Var& v) const { return adjoints_.at(v.index()); }
    [[nodiscard]] double operator[](std::uint32_t node) const { return adjoints_.at(node); }
    [[nodiscard]] std::span<const double> adjoints() const noexcept { return adjoints_; }

private:
    std::vector<double> adjoints_;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    [[nodiscard]] Var variable(double value) {
        if (!std::isfinite(value)) {
            throw DomainError("leaf", "non-finite value " + std::to_string(value));
        }
        return push(OpKind::leaf, value, {});
    }

    /// A node with arbitrary parents and caller-supplied local partials.
    /// Used to wire sampler pathwise derivatives into the graph.
    [[nodiscard]] Var custom(double value, std::span<const Var> parents, std::span<const double> partials) {
        const auto begin = static_cast<std::uint32_t>(edges_.size());
        for (std::size_t i = 0; i < parents.size(); ++i) {
            edges_.push_back({parents[i].index(), partials[i]});
        }
        return finish(OpKind::custom, value, begin);
    }

    [[nodiscard]] Var push(OpKind kind, double value, std::initializer_list<Edge> edges) {
        const auto begin = static_cast<std::uint32_t>(edges_.size());
        edges_.insert(edges_.end(), edges.begin(), edges.end());
        return finish(kind, value, begin);
    }

    [[nodiscard]] Var sum(std::span<const Var> terms) {
        const auto begin = static_cast<std::uint32_t>(edges_.size());
        double total = 0.0;
        for (const Var& t : terms) {
            total += t.value();
            edges_.push_back({t.index(), 1.0});
        }
        return finish(OpKind::sum, total, begin);
    }

    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] OpKind kind(std::uint32_t node) const { return kinds_.at(node); }

    void clear() noexcept {
        values_.clear();
        kinds_.clear();
        edge_begin_.clear();
        edges_.clear();
    }

    /// Reverse sweep from root; adjoints are written into `adjoints` (resized to size()).
    void backward(const Var& root, std::vector<double>& adjoints) const {
        adjoints.assign(values_.size(), 0.0);
        adjoints[root.index()] = 1.0;
        for (std::uint32_t n = root.index() + 1; n-- > 0;) {
            const double a = adjoints[n];
            if (a == 0.0) continue;
            const auto stop = n + 1 < edge_begin_.size() ? edge_begin_[n + 1]
                                                         : static_cast<std::uint32_t>(edges_.size());
            for (std::uint32_t e = edge_begin_[n]; e < stop; ++e) {
                adjoints[edges_[e].parent] += edges_[e].partial * a;
            }
        }
    }

    [[nodiscard]] Gradient backward(const Var& root) const {
        std::vector<double> adj;
        backward(root, adj);
        return Gradient(std::move(adj));
    }

private:
    Var finish(OpKind kind, double value, std::uint32_t edge_begin) {
        const auto idx = static_cast<std::uint32_t>(values_.size());
        values_.push_back(value);
        kinds_.push_back(kind);
        edge_begin_.push_back(edge_begin);
        return Var(this, idx, value);
    }

    std::vector<double> values_;
    std::vector<OpKind> kinds_;
    std::vector<std::uint32_t> edge_begin_;
    std::vector<Edge> edges_;
};

// ---------------------------------------------------------------------------
// Arithmetic

inline Var operator+(const Var& a, const Var& b) {
    return a.tape()->push(OpKind::add, a.value() + b.value(), {{a.index(), 1.0}, {b.index(), 1.0}});
}
inline Var operator+(const Var& a, double b) {
    return a.tape()->push(OpKind::add, a.value() + b, {{a.index(), 1.0}});
}
inline Var operator+(double a, const Var& b) { return b + a; }

inline Var operator-(const Var& a, const Var& b) {
    return a.tape()->push(OpKind::sub, a.value() - b.value(), {{a.index(), 1.0}, {b.index(), -1.0}});
}
inline Var operator-(const Var& a, double b) {
    return a.tape()->push(OpKind::sub, a.value() - b, {{a.index(), 1.0}});
}
inline Var operator-(double a, const Var& b) {
    return b.tape()->push(OpKind::sub, a - b.value(), {{b.index(), -1.0}});
}
inline Var operator-(const Var& a) {
    return a.tape()->push(OpKind::neg, -a.value(), {{a.index(), -1.0}});
}

inline Var operator*(const Var& a, const Var& b) {
    return a.tape()->push(OpKind::mul, a.value() * b.value(),
                          {{a.index(), b.value()}, {b.index(), a.value()}});
}
inline Var operator*(const Var& a, double b) {
    return a.tape()->push(OpKind::mul, a.value() * b, {{a.index(), b}});
}
inline Var operator*(double a, const Var& b) { return b * a; }

inline Var operator/(const Var& a, const Var& b) {
    if (b.value() == 0.0) throw DomainError("div", "division by zero");
    const double inv = 1.0 / b.value();
    const double q = a.value() * inv;
    return a.tape()->push(OpKind::div, q, {{a.index(), inv}, {b.index(), -q * inv}});
}
inline Var operator/(const Var& a, double b) {
    if (b == 0.0) throw DomainError("div", "division by zero");
    return a.tape()->push(OpKind::div, a.value() / b, {{a.index(), 1.0 / b}});
}
inline Var operator/(double a, const Var& b) {
    if (b.value() == 0.0) throw DomainError("div", "division by zero");
    const double inv = 1.0 / b.value();
    return b.tape()->push(OpKind::div, a * inv, {{b.index(), -a * inv * inv}});
}

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator+=(Var& a, double b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator*=(Var& a, double b) { return a = a * b; }

// ---------------------------------------------------------------------------
// Elementary functions

inline Var exp(const Var& a) {
    const double v = std::exp(a.value());
    return a.tape()->push(OpKind::exp, v, {{a.index(), v}});
}

inline Var log(const Var& a) {
    if (!(a.value() > 0.0)) {
        throw DomainError("log", "argument " + std::to_string(a.value()) + " is not positive");
    }
    return a.tape()->push(OpKind::log, std::log(a.value()), {{a.index(), 1.0 / a.value()}});
}

inline Var pow(const Var& a, double p) {
    if (a.value() < 0.0 && p != std::floor(p)) {
        throw DomainError("pow", "negative base with non-integer exponent");
    }
    if (a.value() == 0.0 && p < 1.0) throw DomainError("pow", "derivative undefined at 0");
    const double v = std::pow(a.value(), p);
    return a.tape()->push(OpKind::pow, v, {{a.index(), p * std::pow(a.value(), p - 1.0)}});
}

inline Var pow(const Var& a, const Var& b) {
    if (!(a.value() > 0.0)) throw DomainError("pow", "base must be positive for a variable exponent");
    const double v = std::pow(a.value(), b.value());
    return a.tape()->push(OpKind::pow, v,
                          {{a.index(), b.value() * v / a.value()}, {b.index(), v * std::log(a.value())}});
}

inline Var sqrt(const Var& a) {
    if (!(a.value() > 0.0)) throw DomainError("sqrt", "argument must be positive");
    const double v = std::sqrt(a.value());
    return a.tape()->push(OpKind::sqrt, v, {{a.index(), 0.5 / v}});
}

inline Var tanh(const Var& a) {
    const double v = std::tanh(a.value());
    return a.tape()->push(OpKind::tanh, v, {{a.index(), 1.0 - v * v}});
}

inline Var erf(const Var& a) {
    const double x = a.value();
    return a.tape()->push(OpKind::erf, special::erf(x),
                          {{a.index(), 2.0 * std::exp(-x * x) / std::sqrt(std::numbers::pi)}});
}

/// log(1 + e^x), overflow-safe.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var softplus(const Var& a) {
    return a.tape()->push(OpKind::softplus, softplus(a.value()), {{a.index(), sigmoid(a.value())}});
}

/// Ties route the subgradient to the first argument.
inline Var max(const Var& a, const Var& b) {
    if (a.value() >= b.value()) return a.tape()->push(OpKind::max, a.value(), {{a.index(), 1.0}});
    return a.tape()->push(OpKind::max, b.value(), {{b.index(), 1.0}});
}
inline Var max(const Var& a, double b) {
    if (a.value() >= b) return a.tape()->push(OpKind::max, a.value(), {{a.index(), 1.0}});
    return a.tape()->push(OpKind::max, b, {});
}

// Uniform access to the primal value in code templated over double / Var.
inline double value_of(const Var& v) { return v.value(); }

} // namespace dmtpp::ad

namespace dmtpp {
inline double value_of(double v) { return v; }
using ad::value_of;
} // namespace dmtpp

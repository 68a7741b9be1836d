#pragma once

// Tape-based reverse-mode automatic differentiation.
//
// A Var is either detached (a plain number, no tape) or recorded on a Tape.
// Arithmetic on detached values stays detached, so the same generic code runs
// both as a pure numeric evaluation and as a differentiable recording. Values
// produced along the two paths are bit-identical.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfnn::ad {

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Tape;

class Var {
public:
    Var() = default;
    Var(double value) : value_(value) {}  // NOLINT: implicit constant lift

    double value() const { return value_; }
    Tape* tape() const { return tape_; }
    std::int32_t index() const { return index_; }
    bool recorded() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::int32_t index, double value) : tape_(tape), index_(index), value_(value) {}

    Tape* tape_ = nullptr;
    std::int32_t index_ = -1;
    double value_ = 0.0;
};

/// Append-only computation graph. Parents of node i always have indices < i.
class Tape {
public:
    Tape() { clear(); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Records a leaf without gradient (a constant that lives on the tape).
    Var lift(double constant);
    /// Records a gradient root bound to parameter slot `slot`.
    Var parameter(std::size_t slot, double value);
    /// Lifts theta[k] into slot `first_slot + k` for every k.
    std::vector<Var> parameters(std::span<const double> theta, std::size_t first_slot = 0);

    /// dloss/dtheta over slots [0, n_slots()). A detached loss yields zeros.
    std::vector<double> backward(const Var& loss) const;
    /// Rejects anything but exactly one output.
    std::vector<double> backward(std::span<const Var> outputs) const;

    void clear();
    std::size_t size() const { return values_.size(); }
    std::size_t n_slots() const { return n_slots_; }
    std::size_t n_edges() const { return parents_.size(); }

    // Low-level recording used by the elementary operations.
    Var record(double value, std::span<const std::int32_t> parents, std::span<const double> partials,
               const char* op);
    Var record1(double value, std::int32_t parent, double partial, const char* op);
    Var record2(double value, std::int32_t p0, double d0, std::int32_t p1, double d1, const char* op);

private:
    std::vector<double> values_;
    std::vector<std::uint32_t> offsets_;
    std::vector<std::int32_t> parents_;
    std::vector<double> partials_;
    std::vector<std::pair<std::size_t, std::int32_t>> slot_nodes_;
    std::size_t n_slots_ = 0;
};

namespace detail {

inline double sigmoid_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

[[noreturn]] void throw_non_finite(const char* op, double value);

inline void check_finite(double v, const char* op) {
    if (!std::isfinite(v)) throw_non_finite(op, v);
}

Tape* common_tape(const Var& a, const Var& b);

// Unary op: value v, local partial d.
inline Var unary(const Var& a, double v, double d, const char* op) {
    check_finite(v, op);
    if (!a.recorded()) return Var(v);
    return a.tape()->record1(v, a.index(), d, op);
}

inline Var binary(const Var& a, const Var& b, double v, double da, double db, const char* op) {
    check_finite(v, op);
    Tape* t = common_tape(a, b);
    if (t == nullptr) return Var(v);
    if (a.recorded() && b.recorded()) return t->record2(v, a.index(), da, b.index(), db, op);
    if (a.recorded()) return t->record1(v, a.index(), da, op);
    return t->record1(v, b.index(), db, op);
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
    return detail::binary(a, b, a.value() + b.value(), 1.0, 1.0, "add");
}
inline Var operator-(const Var& a, const Var& b) {
    return detail::binary(a, b, a.value() - b.value(), 1.0, -1.0, "sub");
}
inline Var operator*(const Var& a, const Var& b) {
    return detail::binary(a, b, a.value() * b.value(), b.value(), a.value(), "mul");
}
inline Var operator/(const Var& a, const Var& b) {
    const double inv = 1.0 / b.value();
    const double v = a.value() / b.value();
    return detail::binary(a, b, v, inv, -v * inv, "div");
}
inline Var operator-(const Var& a) { return detail::unary(a, -a.value(), -1.0, "neg"); }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

inline Var exp(const Var& a) {
    const double v = std::exp(a.value());
    return detail::unary(a, v, v, "exp");
}
inline Var log(const Var& a) { return detail::unary(a, std::log(a.value()), 1.0 / a.value(), "log"); }
inline Var sin(const Var& a) { return detail::unary(a, std::sin(a.value()), std::cos(a.value()), "sin"); }
inline Var cos(const Var& a) { return detail::unary(a, std::cos(a.value()), -std::sin(a.value()), "cos"); }
inline Var tanh(const Var& a) {
    const double v = std::tanh(a.value());
    return detail::unary(a, v, 1.0 - v * v, "tanh");
}
inline Var sigmoid(const Var& a) {
    const double v = detail::sigmoid_value(a.value());
    return detail::unary(a, v, v * (1.0 - v), "sigmoid");
}
// relu'(0) := 0
inline Var relu(const Var& a) {
    return a.value() > 0.0 ? detail::unary(a, a.value(), 1.0, "relu") : detail::unary(a, 0.0, 0.0, "relu");
}
inline Var sqrt(const Var& a) {
    const double v = std::sqrt(a.value());
    return detail::unary(a, v, 0.5 / v, "sqrt");
}
inline Var atan(const Var& a) {
    return detail::unary(a, std::atan(a.value()), 1.0 / (1.0 + a.value() * a.value()), "atan");
}
inline Var abs(const Var& a) {
    const double s = a.value() > 0.0 ? 1.0 : (a.value() < 0.0 ? -1.0 : 0.0);
    return detail::unary(a, std::fabs(a.value()), s, "abs");
}
inline Var square(const Var& a) { return detail::unary(a, a.value() * a.value(), 2.0 * a.value(), "square"); }
Var powi(const Var& a, int n);

// Ties route the gradient to the first argument.
inline Var min(const Var& a, const Var& b) {
    return a.value() <= b.value() ? detail::binary(a, b, a.value(), 1.0, 0.0, "min")
                                  : detail::binary(a, b, b.value(), 0.0, 1.0, "min");
}
inline Var max(const Var& a, const Var& b) {
    return a.value() >= b.value() ? detail::binary(a, b, a.value(), 1.0, 0.0, "max")
                                  : detail::binary(a, b, b.value(), 0.0, 1.0, "max");
}

/// bias + sum_j weights[j] * inputs[j], accumulated left to right as one node.
Var affine(const Var& bias, std::span<const Var> weights, std::span<const Var> inputs);
/// Sum of all terms, one node with one parent per recorded term.
Var sum(std::span<const Var> terms);
/// Arithmetic mean, one node with one parent per recorded term.
Var mean(std::span<const Var> terms);

std::vector<double> values(std::span<const Var> vars);
std::vector<Var> constants(std::span<const double> values);

}  // namespace mfnn::ad

#include "mfnn/autodiff.hpp"

#include <limits>
#include <sstream>

namespace mfnn::ad {

namespace detail {

void throw_non_finite(const char* op, double value) {
    std::ostringstream os;
    os << "non-finite value " << value << " produced by '" << op << "'";
    throw NonFiniteError(os.str());
}

Tape* common_tape(const Var& a, const Var& b) {
    if (a.recorded() && b.recorded() && a.tape() != b.tape())
        throw std::logic_error("autodiff: operands recorded on different tapes");
    return a.recorded() ? a.tape() : b.tape();
}

}  // namespace detail

void Tape::clear() {
    values_.clear();
    parents_.clear();
    partials_.clear();
    offsets_.assign(1, 0);
    slot_nodes_.clear();
    n_slots_ = 0;
}

Var Tape::record(double value, std::span<const std::int32_t> parents, std::span<const double> partials,
                 const char* op) {
    detail::check_finite(value, op);
    if (values_.size() >= static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max()))
        throw std::length_error("autodiff: tape exceeds 2^31 nodes");
    const auto index = static_cast<std::int32_t>(values_.size());
    values_.push_back(value);
    parents_.insert(parents_.end(), parents.begin(), parents.end());
    partials_.insert(partials_.end(), partials.begin(), partials.end());
    offsets_.push_back(static_cast<std::uint32_t>(parents_.size()));
    return Var(this, index, value);
}

Var Tape::record1(double value, std::int32_t parent, double partial, const char* op) {
    detail::check_finite(value, op);
    const auto index = static_cast<std::int32_t>(values_.size());
    values_.push_back(value);
    parents_.push_back(parent);
    partials_.push_back(partial);
    offsets_.push_back(static_cast<std::uint32_t>(parents_.size()));
    return Var(this, index, value);
}

Var Tape::record2(double value, std::int32_t p0, double d0, std::int32_t p1, double d1, const char* op) {
    detail::check_finite(value, op);
    const auto index = static_cast<std::int32_t>(values_.size());
    values_.push_back(value);
    parents_.push_back(p0);
    parents_.push_back(p1);
    partials_.push_back(d0);
    partials_.push_back(d1);
    offsets_.push_back(static_cast<std::uint32_t>(parents_.size()));
    return Var(this, index, value);
}

Var Tape::lift(double constant) { return record(constant, {}, {}, "lift"); }

Var Tape::parameter(std::size_t slot, double value) {
    Var v = record(value, {}, {}, "parameter");
    slot_nodes_.emplace_back(slot, v.index());
    n_slots_ = std::max(n_slots_, slot + 1);
    return v;
}

std::vector<Var> Tape::parameters(std::span<const double> theta, std::size_t first_slot) {
    std::vector<Var> out;
    out.reserve(theta.size());
    for (std::size_t k = 0; k < theta.size(); ++k) out.push_back(parameter(first_slot + k, theta[k]));
    return out;
}

std::vector<double> Tape::backward(const Var& loss) const {
    std::vector<double> grad(n_slots_, 0.0);
    if (!loss.recorded()) return grad;
    if (loss.tape() != this) throw std::logic_error("autodiff: loss recorded on another tape");

    std::vector<double> adjoint(static_cast<std::size_t>(loss.index()) + 1, 0.0);
    adjoint.back() = 1.0;
    for (std::int64_t i = loss.index(); i >= 0; --i) {
        const double a = adjoint[static_cast<std::size_t>(i)];
        if (a == 0.0) continue;
        const std::uint32_t end = offsets_[static_cast<std::size_t>(i) + 1];
        for (std::uint32_t k = offsets_[static_cast<std::size_t>(i)]; k < end; ++k)
            adjoint[static_cast<std::size_t>(parents_[k])] += a * partials_[k];
    }
    for (const auto& [slot, node] : slot_nodes_) {
        if (node <= loss.index()) grad[slot] += adjoint[static_cast<std::size_t>(node)];
    }
    return grad;
}

std::vector<double> Tape::backward(std::span<const Var> outputs) const {
    if (outputs.size() != 1)
        throw std::invalid_argument("autodiff: backward needs a scalar loss, got " +
                                    std::to_string(outputs.size()) + " outputs");
    return backward(outputs.front());
}

Var powi(const Var& a, int n) {
    if (n == 0) return detail::unary(a, 1.0, 0.0, "powi");
    double v = 1.0;
    const int m = n < 0 ? -n : n;
    for (int k = 0; k < m; ++k) v *= a.value();
    double d = 1.0;
    for (int k = 0; k < m - 1; ++k) d *= a.value();
    d *= m;
    if (n < 0) {
        // d/dx x^-m = -m x^-(m+1)
        d = -d / (v * v);
        v = 1.0 / v;
    }
    return detail::unary(a, v, d, "powi");
}

Var affine(const Var& bias, std::span<const Var> weights, std::span<const Var> inputs) {
    if (weights.size() != inputs.size()) throw std::invalid_argument("affine: size mismatch");
    double acc = bias.value();
    for (std::size_t j = 0; j < weights.size(); ++j) acc += weights[j].value() * inputs[j].value();
    detail::check_finite(acc, "affine");

    Tape* tape = bias.tape();
    for (std::size_t j = 0; j < weights.size() && tape == nullptr; ++j)
        tape = weights[j].recorded() ? weights[j].tape() : inputs[j].tape();
    if (tape == nullptr) return Var(acc);

    thread_local std::vector<std::int32_t> parents;
    thread_local std::vector<double> partials;
    parents.clear();
    partials.clear();
    if (bias.recorded()) {
        parents.push_back(bias.index());
        partials.push_back(1.0);
    }
    for (std::size_t j = 0; j < weights.size(); ++j) {
        if (weights[j].recorded()) {
            parents.push_back(weights[j].index());
            partials.push_back(inputs[j].value());
        }
        if (inputs[j].recorded()) {
            parents.push_back(inputs[j].index());
            partials.push_back(weights[j].value());
        }
    }
    return tape->record(acc, parents, partials, "affine");
}

namespace {

Var reduce(std::span<const Var> terms, double scale, const char* op) {
    double acc = 0.0;
    Tape* tape = nullptr;
    for (const Var& t : terms) {
        acc += t.value();
        if (t.recorded()) {
            if (tape != nullptr && tape != t.tape()) throw std::logic_error("autodiff: mixed tapes");
            tape = t.tape();
        }
    }
    acc *= scale;
    detail::check_finite(acc, op);
    if (tape == nullptr) return Var(acc);

    thread_local std::vector<std::int32_t> parents;
    thread_local std::vector<double> partials;
    parents.clear();
    partials.clear();
    for (const Var& t : terms) {
        if (!t.recorded()) continue;
        parents.push_back(t.index());
        partials.push_back(scale);
    }
    return tape->record(acc, parents, partials, op);
}

}  // namespace

Var sum(std::span<const Var> terms) { return reduce(terms, 1.0, "sum"); }

Var mean(std::span<const Var> terms) {
    if (terms.empty()) throw std::invalid_argument("mean of an empty range");
    return reduce(terms, 1.0 / static_cast<double>(terms.size()), "mean");
}

std::vector<double> values(std::span<const Var> vars) {
    std::vector<double> out;
    out.reserve(vars.size());
    for (const Var& v : vars) out.push_back(v.value());
    return out;
}

std::vector<Var> constants(std::span<const double> vals) { return {vals.begin(), vals.end()}; }

}  // namespace mfnn::ad

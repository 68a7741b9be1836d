#include "mfnn/optim.hpp"

#include "mfnn/csv.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mfnn {

LrSchedule LrSchedule::constant(double eta) {
    LrSchedule s;
    s.kind = Kind::constant;
    s.eta = eta;
    return s;
}

LrSchedule LrSchedule::step_decay(double eta0, double factor, std::size_t every) {
    LrSchedule s;
    s.kind = Kind::step_decay;
    s.eta = eta0;
    s.decay_factor = factor;
    s.decay_every = every;
    return s;
}

LrSchedule LrSchedule::adam(double eta, double beta1, double beta2, double eps) {
    LrSchedule s;
    s.kind = Kind::adam;
    s.eta = eta;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps_adam = eps;
    return s;
}

void LrSchedule::validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("learning rate must be > 0");
    if (!(decay_factor > 0.0)) throw std::invalid_argument("learning-rate decay factor must be > 0");
    if (kind == Kind::step_decay && decay_every == 0)
        throw std::invalid_argument("step_decay schedule needs decay_every >= 1");
    if (kind == Kind::adam) {
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw std::invalid_argument("adam betas must lie in [0, 1)");
        if (!(eps_adam > 0.0)) throw std::invalid_argument("adam epsilon must be > 0");
    }
}

double LrSchedule::rate(std::size_t step) const {
    if (decay_every == 0) return eta;
    return eta * std::pow(decay_factor, static_cast<double>(step / decay_every));
}

std::string to_string(LrSchedule::Kind k) {
    switch (k) {
        case LrSchedule::Kind::constant: return "constant";
        case LrSchedule::Kind::step_decay: return "step_decay";
        case LrSchedule::Kind::adam: return "adam";
    }
    return "unknown";
}

LrSchedule::Kind lr_kind_from_string(const std::string& s) {
    if (s == "constant" || s == "sgd") return LrSchedule::Kind::constant;
    if (s == "step_decay") return LrSchedule::Kind::step_decay;
    if (s == "adam") return LrSchedule::Kind::adam;
    throw std::invalid_argument("unknown learning-rate schedule '" + s + "'");
}

void sgd_step(std::vector<double>& theta, std::span<const double> grad, OptimizerState& state) {
    if (grad.size() != theta.size()) throw std::invalid_argument("sgd_step: gradient length != parameter length");
    for (std::size_t k = 0; k < grad.size(); ++k)
        if (!std::isfinite(grad[k]))
            throw std::domain_error("non-finite gradient in coordinate " + std::to_string(k) + " at update " +
                                    std::to_string(state.step));
    const LrSchedule& s = state.schedule;
    const double eta = s.rate(state.step);
    ++state.step;
    if (s.kind != LrSchedule::Kind::adam) {
        for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= eta * grad[k];
        return;
    }
    if (state.m1.size() != theta.size()) {
        state.m1.assign(theta.size(), 0.0);
        state.m2.assign(theta.size(), 0.0);
    }
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(s.beta1, t);
    const double c2 = 1.0 - std::pow(s.beta2, t);
    for (std::size_t k = 0; k < theta.size(); ++k) {
        state.m1[k] = s.beta1 * state.m1[k] + (1.0 - s.beta1) * grad[k];
        state.m2[k] = s.beta2 * state.m2[k] + (1.0 - s.beta2) * grad[k] * grad[k];
        const double mh = state.m1[k] / c1;
        const double vh = state.m2[k] / c2;
        theta[k] -= eta * mh / (std::sqrt(vh) + s.eps_adam);
    }
}

void TrainTrace::write_csv(const std::string& path) const {
    csv::Writer w(path, {"iteration", "loss", "moving_avg", "eval_loss", "l2_error"});
    for (const auto& r : records)
        w.row(r.iteration, r.loss, r.moving_avg, r.eval_loss,
              r.l2_error ? *r.l2_error : std::numeric_limits<double>::quiet_NaN());
    w.close();
}

}  // namespace mfnn

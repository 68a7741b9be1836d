#pragma once

// Learning-rate schedules, the SGD / Adam update, and training traces shared by
// both solvers.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mfnn {

struct LrSchedule {
    enum class Kind { constant, step_decay, adam };
    Kind kind = Kind::adam;
    double eta = 1e-3;
    /// eta is multiplied by decay_factor every decay_every updates (0 = never).
    double decay_factor = 1.0;
    std::size_t decay_every = 0;
    double beta1 = 0.9, beta2 = 0.999, eps_adam = 1e-8;

    static LrSchedule constant(double eta);
    static LrSchedule step_decay(double eta0, double factor, std::size_t every);
    static LrSchedule adam(double eta, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void validate() const;
    /// Learning rate used for update number `step` (0-based).
    double rate(std::size_t step) const;
};

std::string to_string(LrSchedule::Kind k);
LrSchedule::Kind lr_kind_from_string(const std::string& s);

struct OptimizerState {
    LrSchedule schedule;
    std::size_t step = 0;
    std::vector<double> m1, m2;  // Adam moments

    explicit OptimizerState(LrSchedule s) : schedule(s) { schedule.validate(); }
};

/// theta <- theta - eta * grad (or the Adam step). A non-finite gradient throws
/// std::domain_error naming the first bad coordinate.
void sgd_step(std::vector<double>& theta, std::span<const double> grad, OptimizerState& state);

struct TraceRecord {
    std::size_t iteration = 0;   // number of completed updates
    double loss = 0.0;           // sampled loss of the current parameters on a fresh sample
    double moving_avg = 0.0;     // mean of the last `window` sampled losses
    double eval_loss = 0.0;      // held-out sample, identical across records
    std::optional<double> l2_error;
    double wall_seconds = 0.0;   // kept out of CSVs
};

struct TrainTrace {
    std::vector<TraceRecord> records;

    /// CSV columns: iteration, loss, moving_avg, eval_loss, l2_error (nan when absent).
    void write_csv(const std::string& path) const;
};

}  // namespace mfnn

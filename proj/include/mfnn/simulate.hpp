#pragma once

// Euler-Maruyama simulation of the N-particle system, empirical measure
// utilities, and the strong-error experiment.

#include "mfnn/model.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfnn {

struct TimeGrid {
    double horizon = 1.0;
    std::size_t n_steps = 1;
    double dt = 1.0;

    static TimeGrid make(double horizon, std::size_t n_steps);
    void validate() const;
    double time(std::size_t n) const { return static_cast<double>(n) * dt; }
};

/// N particle states at one time, row-major N x dim.
struct Ensemble {
    std::size_t n_particles = 0;
    std::size_t dim = 1;
    std::vector<double> states;

    void validate() const;
    double at(std::size_t i, std::size_t k = 0) const { return states[i * dim + k]; }
};

Ensemble sample_initial(const InitSampler& sampler, std::size_t n, std::size_t dim, std::uint64_t seed);
Ensemble sample_initial(const ModelSpec& model, std::size_t n, std::uint64_t seed);

struct NoiseBundle {
    std::size_t n_steps = 0;
    std::size_t n_particles = 0;
    std::size_t dim_w = 1;
    double dt = 0.0;
    /// Idiosyncratic increments, n_steps x N x dim_w, each N(0, dt).
    std::vector<double> increments;
    CommonNoiseSpec common;
    /// two_point_jump: eps0 at t_0..t_{N_T}; correlated_brownian: W0 increments per step; none: empty.
    std::vector<double> common_path;
    std::uint64_t seed = 0;

    double dw(std::size_t step, std::size_t particle, std::size_t k) const {
        return increments[(step * n_particles + particle) * dim_w + k];
    }
    /// Realized common noise at t_step (W0 accumulated up to t_step).
    CommonNoiseState common_state(std::size_t step) const;
    double common_increment(std::size_t step) const {
        return common.kind == CommonNoiseKind::correlated_brownian ? common_path[step] : 0.0;
    }
    /// Terminal eps0 for jump noise, 0 otherwise.
    double jump_value() const;
};

NoiseBundle sample_noise(const TimeGrid& grid, std::size_t n, std::size_t dim_w, const CommonNoiseSpec& common,
                         std::uint64_t seed);
/// Replaces the drawn jump scenario by `value` (+-c_T), e.g. to evaluate one scenario.
void set_jump_value(NoiseBundle& noise, double value);
/// Sums blocks of `factor` fine increments (the same Brownian path on a coarser grid).
NoiseBundle coarsen(const NoiseBundle& fine, std::size_t factor);

/// Initial states and noise derived from one sample seed (streams 1 and 2).
struct Sample {
    Ensemble initial;
    NoiseBundle noise;
};
Sample draw_sample(const InitSampler& sampler, std::size_t dim_x, std::size_t dim_w, const CommonNoiseSpec& common,
                   const TimeGrid& grid, std::size_t n, std::uint64_t seed);

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t step, std::size_t particle, const std::string& what)
        : std::runtime_error(what), step(step), particle(particle) {}
    std::size_t step;
    std::size_t particle;
};

/// States beyond this magnitude abort a rollout.
inline constexpr double kDivergenceBound = 1e8;

/// Feedback control: writes dim_alpha values into alpha.
using ControlFn = std::function<void(double t, VarSpan x, const MeasureStats& mu, const CommonNoiseState& cn,
                                     VarOut alpha)>;

struct RolloutResult {
    std::size_t n_steps = 0, n_particles = 0, dim_x = 1, dim_alpha = 1;
    std::vector<double> trajectories;  // (N_T+1) x N x dim_x
    std::vector<double> controls;      // N_T x N x dim_alpha
    double running_cost_sum = 0.0;     // dt sum_n mean_i f
    double terminal_cost = 0.0;        // mean_i g
    double total_cost = 0.0;
    Var loss;  // total cost, recorded when a tape was given

    double x(std::size_t step, std::size_t i, std::size_t k = 0) const {
        return trajectories[(step * n_particles + i) * dim_x + k];
    }
};

/// Explicit Euler rollout of the controlled particle system. When the control
/// closure returns Vars recorded on a tape, the whole objective lands on that tape.
RolloutResult rollout(const ModelSpec& model, const ControlFn& control, const Ensemble& initial,
                      const NoiseBundle& noise, const TimeGrid& grid);

/// Mean and second moment of a numeric ensemble. All particles share one
/// common-noise scenario per rollout, so this is also the conditional measure.
MeasureStats empirical_stats(const Ensemble& ensemble);

/// sqrt((1/N) sum_i |x_i - y_i|^2) for index-aligned ensembles.
double w2_upper_bound(const Ensemble& a, const Ensemble& b);

struct StrongErrorResult {
    std::vector<double> dts;
    std::vector<double> mses;
    double reference_dt = 0.0;
    double slope = 0.0;  // least-squares slope of log mse against log dt
};

/// Terminal mean-square gap between Euler paths on grids coarse, coarse/r, ...,
/// (n_levels of them) and a reference grid a further `reference_factor` finer,
/// all driven by one fine Brownian path.
StrongErrorResult strong_error_experiment(const ModelSpec& model, const ControlFn& control, const TimeGrid& coarse,
                                          std::size_t refinement_factor, std::size_t n_levels,
                                          std::size_t reference_factor, std::size_t n_particles, std::uint64_t seed);

/// Ordinary least-squares slope of y on x.
double fit_slope(std::span<const double> x, std::span<const double> y);

/// CSV columns: step, time, particle, coordinate, value.
void write_trajectory_csv(const std::string& path, std::span<const double> paths, std::size_t n_steps,
                          std::size_t n_particles, std::size_t dim, double dt, std::size_t max_particles);

struct Histogram {
    std::string label;
    std::vector<double> edges;  // n_bins + 1
    std::vector<std::size_t> counts;
};
Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t n_bins, std::string label);
/// CSV columns: label, bin_lo, bin_hi, count.
void write_histogram_csv(const std::string& path, std::span<const Histogram> hists);

}  // namespace mfnn

#pragma once

// Method 2: shooting. The backward equation is run forward from a learned
// Y_0 = y0(X_0) with a learned volatility z(t, X_t); the networks are trained so
// that Y_T matches G(X_T, L(X_T)) in mean square.

#include "mfnn/nn.hpp"
#include "mfnn/optim.hpp"
#include "mfnn/simulate.hpp"

#include <functional>
#include <optional>
#include <string>

namespace mfnn {

struct FbsdeNets {
    nn::NetParams y0;  // dim_x -> dim_y
    nn::NetParams z;   // (t, x) -> dim_y x noise_dim, row-major

    std::size_t n_params() const { return y0.theta.size() + z.theta.size(); }
};

struct FbsdeTrainConfig {
    std::size_t iterations = 1000;
    std::size_t batch = 256;
    TimeGrid grid = TimeGrid::make(1.0, 20);
    LrSchedule lr = LrSchedule::adam(1e-3);
    std::uint64_t seed = 0;
    std::size_t eval_every = 100;
    std::size_t eval_batch = 1000;
    std::optional<std::uint64_t> eval_seed;
    std::vector<std::size_t> y0_hidden{16};
    std::vector<std::size_t> z_hidden{32};
    nn::Activation activation = nn::Activation::tanh;
    nn::InitScheme init = nn::InitScheme::uniform_scaled;
    std::size_t moving_window = 50;

    void validate() const;
    std::uint64_t held_out_seed() const;
    std::uint64_t sample_seed(std::size_t m) const;
};

FbsdeNets init_fbsde_nets(const FbsdeSpec& spec, const FbsdeTrainConfig& config);

struct FbsdeRollout {
    std::size_t n_steps = 0, n_particles = 0, dim_x = 0, dim_y = 0;
    std::vector<double> X;         // (N_T+1) x N x dim_x
    std::vector<double> Y;         // (N_T+1) x N x dim_y
    std::vector<double> mismatch;  // N x dim_y: Y_T - G(X_T, mu_T)
    Var loss;                      // (1/N) sum_i |mismatch_i|^2
    double loss_value = 0.0;

    double x(std::size_t step, std::size_t i, std::size_t k = 0) const { return X[(step * n_particles + i) * dim_x + k]; }
    double y(std::size_t step, std::size_t i, std::size_t k = 0) const { return Y[(step * n_particles + i) * dim_y + k]; }
};

/// Forward-forward Euler system. Theta spans may be recorded or detached.
FbsdeRollout fbsde_rollout(const FbsdeSpec& spec, const nn::Architecture& y0_arch, std::span<const Var> y0_theta,
                           const nn::Architecture& z_arch, std::span<const Var> z_theta, const Ensemble& initial,
                           const NoiseBundle& noise, const TimeGrid& grid);
FbsdeRollout fbsde_rollout(const FbsdeSpec& spec, const FbsdeNets& nets, const Ensemble& initial,
                           const NoiseBundle& noise, const TimeGrid& grid);

struct FbsdeLossGrad {
    double loss = 0.0;
    std::vector<double> grad;  // [d/d theta_y0 | d/d theta_z]
};

FbsdeLossGrad loss_fbsde(const FbsdeNets& nets, const FbsdeSpec& spec, std::uint64_t sample_seed,
                         const FbsdeTrainConfig& config);

/// Untaped rollout on the sample drawn from `seed`.
FbsdeRollout evaluate_fbsde(const FbsdeNets& nets, const FbsdeSpec& spec, const TimeGrid& grid, std::size_t n,
                            std::uint64_t seed);

/// Reference Y_0 as a function of X_0, for the trace's error column.
using Y0Oracle = std::function<double(std::span<const double> x0)>;

struct FbsdeTrainResult {
    FbsdeNets nets;
    TrainTrace trace;
    std::optional<std::string> failure;
};

/// Joint SGD / Adam over (theta_y0, theta_z), fresh sample per iteration. With an
/// oracle, l2_error is the RMS of y0(X_0) - oracle(X_0) (first Y coordinate) over the
/// held-out initial states.
FbsdeTrainResult train_fbsde(const FbsdeSpec& spec, const FbsdeTrainConfig& config, const Y0Oracle* oracle = nullptr);

/// y0(x) on the first Y coordinate.
double y0_estimate(const FbsdeNets& nets, std::span<const double> x0);

struct CurvePoint {
    double rho = 0.0;
    double y0 = 0.0;
    double eval_loss = 0.0;
    std::uint64_t seed = 0;
    std::optional<std::string> error;
};

/// One independent training per rho; the spec must carry a deterministic initial point.
/// Failed points keep their error and NaN values; the rest of the curve is returned.
std::vector<CurvePoint> y0_vs_rho_curve(const std::function<FbsdeSpec(double rho)>& family,
                                        std::span<const double> rhos, const FbsdeTrainConfig& config,
                                        std::size_t threads = 1);

/// CSV columns: rho, y0_estimate, eval_loss, seed
void write_curve_csv(const std::string& path, std::span<const CurvePoint> curve);
/// CSV columns: particle, step, time, X[_k]..., Y[_k]...
void write_fbsde_paths_csv(const std::string& path, const FbsdeRollout& r, double dt, std::size_t max_particles);

}  // namespace mfnn

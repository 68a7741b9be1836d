#pragma once

// Method 1: SGD on the sampled N-particle objective over neural feedback
// controls phi_theta(t, x[, eps0_t]).

#include "mfnn/nn.hpp"
#include "mfnn/optim.hpp"
#include "mfnn/simulate.hpp"

#include <functional>
#include <optional>
#include <string>

namespace mfnn {

struct TrainConfig {
    std::size_t iterations = 1000;  // M
    std::size_t batch = 256;        // particles per sample
    TimeGrid grid = TimeGrid::make(1.0, 20);
    LrSchedule lr;
    std::uint64_t seed = 0;
    std::size_t eval_every = 100;
    std::size_t eval_batch = 1000;
    std::optional<std::uint64_t> eval_seed;  // defaults to a stream of `seed`
    std::vector<std::size_t> hidden{32};
    nn::Activation activation = nn::Activation::tanh;
    nn::InitScheme init = nn::InitScheme::uniform_scaled;
    std::optional<nn::Box> clamp;      // overrides the model's box when set
    std::optional<double> grad_tol;    // stop once |grad| falls below (off by default)
    std::size_t moving_window = 50;
    std::string checkpoint_dir;        // empty: no checkpoints

    void validate() const;
    std::uint64_t held_out_seed() const;
    /// Sample seed of iteration m.
    std::uint64_t sample_seed(std::size_t m) const;
};

/// Input (t, x[, eps0_t]) -> dim_alpha.
nn::Architecture control_architecture(const ModelSpec& model, const TrainConfig& config);

/// Feedback control backed by a network; theta may be recorded or detached.
ControlFn net_control(const nn::Architecture& arch, std::span<const Var> theta, bool with_common_level);

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Sampled objective J_S(theta) for S drawn from sample_seed, and its exact gradient.
LossGrad loss_mfc(const nn::NetParams& params, const ModelSpec& model, std::uint64_t sample_seed,
                  const TrainConfig& config);

/// Untaped rollout of the learned control on the sample drawn from `seed`.
/// `jump_value` forces the common-noise scenario.
RolloutResult evaluate_control(const nn::NetParams& params, const ModelSpec& model, const TimeGrid& grid,
                               std::size_t n, std::uint64_t seed, std::optional<double> jump_value = std::nullopt,
                               const std::optional<nn::Box>& clamp = std::nullopt);

/// Reference feedback alpha*(t, x) for the L2 control error.
using ControlOracle = std::function<void(double t, std::span<const double> x, std::span<double> alpha)>;

/// sqrt(dt sum_n (1/N) sum_i |phi(t_n, X^i_n) - alpha*(t_n, X^i_n)|^2) along paths driven by phi.
double l2_control_error(const nn::NetParams& params, const ControlOracle& oracle, const ModelSpec& model,
                        const TimeGrid& grid, std::size_t n_eval, std::uint64_t seed);

struct TrainResult {
    nn::NetParams params;
    TrainTrace trace;
    std::optional<std::string> failure;  // set when training aborted; trace holds what was done
};

/// Algorithm: fresh sample per iteration, exact gradient, descent update.
TrainResult train(const ModelSpec& model, const TrainConfig& config, const ControlOracle* oracle = nullptr);

/// Same, from given initial parameters.
TrainResult train_from(const ModelSpec& model, const TrainConfig& config, nn::NetParams init,
                       const ControlOracle* oracle = nullptr);

}  // namespace mfnn

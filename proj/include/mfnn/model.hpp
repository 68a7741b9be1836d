#pragma once

// Mean-field problem data: coefficient functions over Vars (so the same model
// evaluates numerically and on a tape), common-noise structure, and the six
// preset problems.

#include "mfnn/autodiff.hpp"
#include "mfnn/nn.hpp"
#include "mfnn/rng.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mfnn {

using ad::Var;
using VarSpan = std::span<const Var>;
using VarOut = std::span<Var>;

/// Summary statistics of an empirical measure over N particles.
struct MeasureStats {
    std::vector<Var> mean;
    Var second_moment;      // (1/N) sum |x_i|^2
    VarSpan raw_points;     // N x dim row-major; empty when not provided

    /// Mean and second moment as single tape nodes with N parents each.
    static MeasureStats from_points(VarSpan points, std::size_t n, std::size_t dim, bool keep_points = true);
};

enum class CommonNoiseKind { none, two_point_jump, correlated_brownian };

struct CommonNoiseSpec {
    CommonNoiseKind kind = CommonNoiseKind::none;
    double jump_time = 0.0;  // two_point_jump
    double magnitude = 0.0;  // c_T, two_point_jump
    double rho = 0.0;        // correlated_brownian

    static CommonNoiseSpec none() { return {}; }
    static CommonNoiseSpec two_point_jump(double jump_time, double magnitude);
    static CommonNoiseSpec correlated_brownian(double rho);

    void validate(double horizon) const;
    /// Extra Brownian coordinates shared by all particles.
    std::size_t brownian_dim() const { return kind == CommonNoiseKind::correlated_brownian ? 1 : 0; }
    bool has_jump() const { return kind == CommonNoiseKind::two_point_jump; }
};

/// Realized common noise seen by the coefficients at one time.
struct CommonNoiseState {
    double level = 0.0;     // eps0_t: 0 before the jump, +-c_T after
    double brownian = 0.0;  // W0_t
};

using DriftFn = std::function<void(double t, VarSpan x, const MeasureStats& mu, VarSpan alpha,
                                   const CommonNoiseState& cn, VarOut out)>;
/// out: dim_x x noise_dim, row-major.
using VolFn = std::function<void(double t, VarSpan x, const MeasureStats& mu, const CommonNoiseState& cn, VarOut out)>;
using RunningCostFn =
    std::function<Var(double t, VarSpan x, const MeasureStats& mu, VarSpan alpha, const CommonNoiseState& cn)>;
using TerminalCostFn = std::function<Var(VarSpan x, const MeasureStats& mu, const CommonNoiseState& cn)>;
using InitSampler = std::function<void(Rng& rng, std::span<double> out)>;

/// Linear-quadratic coefficients (one-dimensional).
struct LqParams {
    double A = 0.2, Abar = 0.3, B = 1.0;
    double Q = 0.5, Qbar = 0.5, R = 1.0, S = 0.25;
    double QT = 0.5, QbarT = 0.5, ST = 0.25;
    double sigma = 0.5;
    double mu0_mean = 1.0, mu0_std = 0.5;
    double horizon = 1.0;

    void validate() const;
};

/// R|alpha|^2 running control cost with B alpha drift.
struct QuadraticControl {
    double B = 1.0;
    double R = 1.0;
};

struct ModelSpec {
    std::string name;
    std::size_t dim_x = 1;
    std::size_t dim_alpha = 1;
    std::size_t dim_w = 1;  // idiosyncratic Brownian coordinates
    double horizon = 1.0;

    DriftFn drift;
    VolFn vol;
    RunningCostFn running_cost;
    TerminalCostFn terminal_cost;
    InitSampler init_sampler;
    CommonNoiseSpec common_noise;
    std::optional<nn::Box> control_box;

    std::optional<QuadraticControl> quadratic_control;
    std::optional<LqParams> lq;

    std::size_t noise_dim() const { return dim_w + common_noise.brownian_dim(); }
    /// (t, x[, eps0_t])
    std::size_t control_input_dim() const { return 1 + dim_x + (common_noise.has_jump() ? 1 : 0); }
    void validate() const;
};

struct MinLqgParams {
    double xi1 = 0.25, xi2 = 0.75;
    double sigma = 0.5;
    double mu0_mean = 1.0, mu0_std = 0.2;
    double horizon = 0.2;

    void validate() const;
};

struct CommonNoiseLqParams {
    double cT = 1.5;
    double KT = 1.0;
    double sigma = 0.3;
    double mu0_mean = 0.0, mu0_std = 0.2;
    double horizon = 1.0;

    void validate() const;
    double jump_time() const { return 0.5 * horizon; }
};

ModelSpec make_lq(const LqParams& p);
ModelSpec make_minlqg(const MinLqgParams& p);
ModelSpec make_common_noise_lq(const CommonNoiseLqParams& p);

/// min(|x - xi1|, |x - xi2|)
Var minlqg_terminal(const Var& x, double xi1, double xi2);

/// argmin_a { B a y + R a^2 } = -B y / (2R), for LQ-family models only.
std::vector<double> hat_alpha_lq(const ModelSpec& model, double t, std::span<const double> x,
                                 std::span<const double> mu_mean, std::span<const double> y);

// ---------------------------------------------------------------------------
// Generic McKean-Vlasov FBSDE
//   dX = B(t, X, L(X), Y) dt + sigma(t, X, L(X)) dW
//   dY = -F(t, X, L(X), Y, Z) dt + Z dW,   Y_T = G(X_T, L(X_T))
// The Y statistics are passed along so Pontryagin systems of control problems
// (whose drivers involve E[Y]) fit the same form.

using ForwardDriftFn = std::function<void(double t, VarSpan x, const MeasureStats& mu_x, VarSpan y,
                                          const MeasureStats& mu_y, const CommonNoiseState& cn, VarOut out)>;
/// z is the dim_y x noise_dim volatility of Y (row-major) when the driver asks for it, else empty.
using DriverFn = std::function<void(double t, VarSpan x, const MeasureStats& mu_x, VarSpan y, const MeasureStats& mu_y,
                                    VarSpan z, const CommonNoiseState& cn, VarOut out)>;
using TerminalMapFn = std::function<void(VarSpan x, const MeasureStats& mu_x, const CommonNoiseState& cn, VarOut out)>;

struct SystemicRiskParams {
    double a = 1.0, q = 0.5, eps = 1.0, c = 1.0;
    double rho = 0.5, sigma = 0.5;
    double mu0_mean = 0.0, mu0_std = 0.5;
    double horizon = 1.0;

    void validate() const;
};

struct FbsdeSpec {
    std::string name;
    std::size_t dim_x = 1;
    std::size_t dim_y = 1;
    std::size_t dim_w = 1;
    double horizon = 1.0;

    ForwardDriftFn drift;
    DriverFn driver;
    bool driver_uses_z = false;
    VolFn vol;
    TerminalMapFn terminal;
    InitSampler init_sampler;
    CommonNoiseSpec common_noise;

    /// Mean field game (equilibrium) rather than a control problem.
    bool is_game = false;
    /// Deterministic initial point, when the initial law is a Dirac mass.
    std::optional<std::vector<double>> initial_point;
    std::optional<SystemicRiskParams> systemic;
    std::vector<std::string> warnings;

    std::size_t noise_dim() const { return dim_w + common_noise.brownian_dim(); }
    void validate() const;
};

FbsdeSpec make_sincos_fbsde(double rho, double sigma, double x0, double horizon = 1.0);
FbsdeSpec make_atan_mfg(double rho, double sigma, double x0, double horizon = 1.0);
FbsdeSpec make_systemic_risk(const SystemicRiskParams& p);
/// Pontryagin system of the min-LQG control problem.
FbsdeSpec make_minlqg_fbsde(const MinLqgParams& p);
/// Pontryagin system of the LQ mean field control problem.
FbsdeSpec make_lq_fbsde(const LqParams& p);

/// 1/2 a^2 - q a (mbar - x) + eps/2 (mbar - x)^2
double systemic_risk_running_cost(const SystemicRiskParams& p, double alpha, double x, double mbar);
/// Minimizer of the systemic-risk Hamiltonian: q (mbar - x) - y.
double systemic_risk_hat_alpha(const SystemicRiskParams& p, double x, double mbar, double y);

}  // namespace mfnn

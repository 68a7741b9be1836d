#pragma once

// Independent oracles: Riccati solutions of the LQ test cases, a finite-volume
// HJB / Fokker-Planck Picard solver, and the decoupled closed form.

#include "mfnn/model.hpp"
#include "mfnn/simulate.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfnn {

class RiccatiBlowUp : public std::runtime_error {
public:
    RiccatiBlowUp(double time, const std::string& what) : std::runtime_error(what), time(time) {}
    double time;
};

/// Coefficient path on a uniform RK4 grid, evaluated between nodes by cubic
/// Hermite interpolation (node derivatives from the ODE right-hand side).
struct CoefficientPath {
    std::vector<double> t;
    std::vector<double> value;
    std::vector<double> slope;

    double operator()(double time) const;
};

/// LQ mean field control. With xt = x - mbar:
///   P'  = -2 A P + B^2 P^2 / R - (Q + Qbar S^2),              P(T)  = QT + QbarT ST^2
///   Pi' = -2 (A + Abar) Pi + B^2 Pi^2 / R - (Q + Qbar (1-S)^2), Pi(T) = QT + QbarT (1-ST)^2
///   mbar' = (A + Abar - B^2 Pi / R) mbar,  s' = -sigma^2 P,  s(T) = 0
/// The optimal feedback is alpha = -(B/R) [P (x - mbar) + Pi mbar] and the
/// decoupling field is u_x = 2 P x + psi mbar with psi = 2 (Pi - P).
struct RiccatiLqSolution {
    LqParams params;
    TimeGrid grid;  // output grid; integration used dt / 10
    CoefficientPath P, Pi, s, mbar;

    double psi(double t) const { return 2.0 * (Pi(t) - P(t)); }
    double feedback(double t, double x) const;
    double feedback(double t, double x, double mbar_t) const;
    /// Y = d_x u(t, x) in the Pontryagin system.
    double y(double t, double x, double mbar_t) const;
    /// Optimal cost P(0) Var0 + Pi(0) m0^2 + s(0).
    double value() const;
    /// Right-hand sides, used for residual checks.
    double dP(double P) const;
    double dPi(double Pi) const;
};

RiccatiLqSolution riccati_lq_solve(const LqParams& p, const TimeGrid& grid);

/// Systemic-risk MFG: eta' = 2 (a + q) eta + eta^2 - (eps - q^2), eta(T) = c.
/// Y = eta (X - mbar), alpha = (q + eta) (mbar - X), Z = eta sigma sqrt(1 - rho^2), Z0 = 0.
struct RiccatiSystemicSolution {
    SystemicRiskParams params;
    TimeGrid grid;
    CoefficientPath eta;

    double y(double t, double x, double mbar) const { return eta(t) * (x - mbar); }
    double control(double t, double x, double mbar) const { return (params.q + eta(t)) * (mbar - x); }
    double z(double t) const;
    double d_eta(double e) const;
};

RiccatiSystemicSolution riccati_systemic_solve(const SystemicRiskParams& p, const TimeGrid& grid);

/// Oracle X, Y paths of the systemic-risk MFG: the oracle feedback is simulated on
/// the fine noise grid (empirical mean from the oracle ensemble) and reported on the
/// coarse grid every `factor` steps. Layout (n_coarse+1) x N.
struct OraclePaths {
    std::vector<double> X, Y;
};
OraclePaths systemic_oracle_paths(const RiccatiSystemicSolution& sol, const Ensemble& initial,
                                  const NoiseBundle& fine_noise, std::size_t factor);

/// E[sin(x0 + sigma W_T)] = sin(x0) exp(-sigma^2 T / 2).
double analytic_y0_decoupled(double x0, double sigma, double T);

// ---------------------------------------------------------------------------
// HJB / Fokker-Planck Picard solver, one space dimension, constant sigma.

/// Callbacks describing the PDE system. H is the minimized Hamiltonian
/// inf_a { b p + f }, b* its minimizing drift; for control problems the
/// m-derivative terms enter through d H / d mbar and d g / d mbar.
struct HamiltonianModel {
    std::string name;
    double sigma = 0.0;
    bool mean_field_control = true;
    std::function<double(double x)> initial_density;
    std::function<double(double t, double x, double mbar, double p)> hamiltonian;
    std::function<double(double t, double x, double mbar, double p)> optimal_drift;
    std::function<double(double t, double x, double mbar, double p)> hamiltonian_dmbar;
    std::function<double(double x, double mbar)> terminal;
    std::function<double(double x, double mbar)> terminal_dmbar;

    void validate() const;
};

HamiltonianModel hamiltonian_lq(const LqParams& p);
/// Game version of the atan example with a Gaussian of std init_std standing in for the point mass.
HamiltonianModel hamiltonian_atan(double rho, double sigma, double x0, double init_std);

struct SpaceDomain {
    double x_min = -1.0, x_max = 1.0;
};
/// mean +- (6 sqrt(std0^2 + sigma^2 T) + extra)
SpaceDomain auto_domain(double mean, double std0, double sigma, double T, double extra = 0.0);

struct PicardOptions {
    std::size_t max_iters = 200;
    double damping = 0.5;  // weight on the previous iterate
    double tol = 1e-9;
};

struct PdeSolution {
    std::vector<double> x;  // n_x nodes
    TimeGrid grid;
    std::vector<double> m;  // (N_T+1) x n_x
    std::vector<double> u;  // (N_T+1) x n_x
    std::vector<double> residuals;

    std::size_t n_x() const { return x.size(); }
    double h() const { return x[1] - x[0]; }
    double m_at(std::size_t n, std::size_t i) const { return m[n * x.size() + i]; }
    double u_at(std::size_t n, std::size_t i) const { return u[n * x.size() + i]; }
    /// Trapezoid mass and mean of m at time index n.
    double mass(std::size_t n) const;
    double mean(std::size_t n) const;
    /// d_x u at (t_n, x) from central differences, linearly interpolated.
    double du_dx(std::size_t n, double xq) const;
};

class PdeNonConvergence : public std::runtime_error {
public:
    PdeNonConvergence(std::vector<double> residuals, const std::string& what)
        : std::runtime_error(what), residuals(std::move(residuals)) {}
    std::vector<double> residuals;
};

PdeSolution pde_solve_hjb_fp(const HamiltonianModel& model, const SpaceDomain& domain, std::size_t n_x,
                             const TimeGrid& grid, const PicardOptions& picard = {});

// ---------------------------------------------------------------------------
// Dumps.

/// CSV columns: time, <coefficient names...>
void write_riccati_lq_csv(const std::string& path, const RiccatiLqSolution& sol);
void write_riccati_systemic_csv(const std::string& path, const RiccatiSystemicSolution& sol);
/// CSV columns: step, time, x, m, u
void write_pde_csv(const std::string& path, const PdeSolution& sol);

}  // namespace mfnn

#include "mfnn/bench.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace mfnn;

namespace {

LqParams pure_terminal() {
    LqParams p;
    p.A = p.Abar = p.S = p.ST = 0.0;
    p.Q = p.Qbar = p.QbarT = 0.0;
    p.QT = 1.0;
    p.B = p.R = 1.0;
    return p;
}

double sup_feedback_gap(const RiccatiLqSolution& ric, const PdeSolution& pde) {
    const auto& p = ric.params;
    const double half = 2.0 * p.sigma * std::sqrt(p.horizon);
    double gap = 0.0;
    for (int k = 0; k <= 200; ++k) {
        const double x = p.mu0_mean - half + 2.0 * half * k / 200.0;
        const double a_pde = -p.B / (2.0 * p.R) * pde.du_dx(0, x);
        gap = std::max(gap, std::fabs(a_pde - ric.feedback(0.0, x, pde.mean(0))));
    }
    return gap;
}

}  // namespace

TEST(Riccati, PureTerminalClosedForm) {
    const auto p = pure_terminal();
    const auto sol = riccati_lq_solve(p, TimeGrid::make(p.horizon, 20));
    for (double t : {0.0, 0.137, 0.5, 0.91, 1.0}) {
        EXPECT_NEAR(sol.P(t), 1.0 / (1.0 + p.horizon - t), 1e-9) << t;
        EXPECT_NEAR(sol.feedback(t, 0.7, 0.0), -0.7 / (1.0 + p.horizon - t), 1e-9);
    }
}

TEST(Riccati, ZeroCostsGiveZeroFeedback) {
    LqParams p = pure_terminal();
    p.QT = 0.0;
    const auto sol = riccati_lq_solve(p, TimeGrid::make(1.0, 10));
    for (double t : {0.0, 0.4, 1.0}) {
        EXPECT_EQ(sol.P(t), 0.0);
        EXPECT_EQ(sol.Pi(t), 0.0);
        EXPECT_EQ(sol.s(t), 0.0);
        EXPECT_EQ(sol.feedback(t, 1.3), 0.0);
    }
}

TEST(Riccati, MidpointResiduals) {
    LqParams p;
    const auto sol = riccati_lq_solve(p, TimeGrid::make(p.horizon, 20));
    const auto& t = sol.P.t;
    const double s2 = p.sigma * p.sigma;
    // Simpson average of the right-hand side over each RK4 step, midpoint from the interpolant
    auto simpson = [&](auto f, std::size_t j) {
        const double h = t[j + 1] - t[j];
        return (f(t[j]) + 4.0 * f(t[j] + 0.5 * h) + f(t[j + 1])) / 6.0;
    };
    for (std::size_t j = 0; j + 1 < t.size(); ++j) {
        const double h = t[j + 1] - t[j];
        const double dP = (sol.P.value[j + 1] - sol.P.value[j]) / h;
        const double dPi = (sol.Pi.value[j + 1] - sol.Pi.value[j]) / h;
        const double ds = (sol.s.value[j + 1] - sol.s.value[j]) / h;
        EXPECT_LT(std::fabs(dP - simpson([&](double u) { return sol.dP(sol.P(u)); }, j)), 1e-6);
        EXPECT_LT(std::fabs(dPi - simpson([&](double u) { return sol.dPi(sol.Pi(u)); }, j)), 1e-6);
        EXPECT_LT(std::fabs(ds - simpson([&](double u) { return -s2 * sol.P(u); }, j)), 1e-6);
    }
}

TEST(Riccati, PsiIsTwicePiMinusP) {
    const auto sol = riccati_lq_solve(LqParams{}, TimeGrid::make(1.0, 20));
    for (double t : {0.0, 0.3, 0.8}) {
        const double m = sol.mbar(t), x = 0.4;
        // y = 2 P (x - m) + 2 Pi m and the feedback is -(B / 2R) y
        EXPECT_NEAR(sol.y(t, x, m), 2.0 * sol.P(t) * (x - m) + 2.0 * sol.Pi(t) * m, 1e-12);
        EXPECT_NEAR(sol.feedback(t, x, m), -sol.params.B / (2.0 * sol.params.R) * sol.y(t, x, m), 1e-12);
    }
}

TEST(Riccati, BlowUpIsReported) {
    LqParams p = pure_terminal();
    p.QT = -2.0;  // P' = P^2 with P(T) = -2 blows up at T - 1/2
    p.horizon = 2.0;
    try {
        riccati_lq_solve(p, TimeGrid::make(p.horizon, 40));
        FAIL() << "expected blow-up";
    } catch (const RiccatiBlowUp& e) {
        EXPECT_NEAR(e.time, 1.5, 0.01);
    }
}

TEST(Riccati, ValueMatchesDeterministicSingleParticle) {
    LqParams p;
    p.sigma = 0.0;
    p.mu0_std = 0.0;
    const auto sol = riccati_lq_solve(p, TimeGrid::make(p.horizon, 100));
    // N = 1: the particle is its own mean; Euler on a fine grid with the oracle feedback
    const std::size_t n = 20000;
    const double dt = p.horizon / n;
    double x = p.mu0_mean, cost = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = k * dt;
        const double a = sol.feedback(t, x, x);
        const double d = x - p.S * x;
        const double f0 = p.Q * x * x + p.Qbar * d * d + p.R * a * a;
        const double xn = x + (p.A * x + p.Abar * x + p.B * a) * dt;
        const double an = sol.feedback(t + dt, xn, xn);
        const double dn = xn - p.S * xn;
        cost += 0.5 * dt * (f0 + p.Q * xn * xn + p.Qbar * dn * dn + p.R * an * an);
        x = xn;
    }
    const double dT = x - p.ST * x;
    cost += p.QT * x * x + p.QbarT * dT * dT;
    EXPECT_NEAR(cost, sol.value(), 1e-3);
}

TEST(Riccati, SystemicTanhClosedForm) {
    SystemicRiskParams p;
    p.a = p.q = 0.0;
    p.eps = 2.0;
    p.c = 0.5;
    const auto sol = riccati_systemic_solve(p, TimeGrid::make(p.horizon, 20));
    const double k = std::sqrt(p.eps), C = -std::atanh(p.c / k);
    for (double t : {0.0, 0.21, 0.5, 0.77, 1.0})
        EXPECT_NEAR(sol.eta(t), -k * std::tanh(k * (t - p.horizon) + C), 1e-8) << t;
}

TEST(Riccati, SystemicTrivial) {
    SystemicRiskParams p;
    p.c = p.eps = p.q = 0.0;
    const auto sol = riccati_systemic_solve(p, TimeGrid::make(1.0, 10));
    EXPECT_EQ(sol.eta(0.3), 0.0);
    EXPECT_EQ(sol.control(0.3, 1.0, 0.0), 0.0);
}

TEST(Riccati, SystemicOracleSatisfiesTheFbsdeInMean) {
    // Y = eta (X - mbar) must obey dY = -F dt + Z dW; compare the conditional drift
    // of eta(t)(X - mbar) against -F along a fine particle simulation.
    SystemicRiskParams p;
    p.rho = 0.0;
    const auto sol = riccati_systemic_solve(p, TimeGrid::make(1.0, 200));
    const double t = 0.4, h = 1e-5;
    const double deta = (sol.eta(t + h) - sol.eta(t - h)) / (2 * h);
    const double e = sol.eta(t), k = p.a + p.q;
    // X - mbar has drift -(k + e)(X - mbar); d/dt of eta (X - mbar) = (eta' - e (k + e)) (X - mbar)
    const double lhs = deta - e * (k + e);
    const double rhs = k * e - (p.eps - p.q * p.q);  // -F / (X - mbar)
    EXPECT_NEAR(lhs, rhs, 1e-6);
}

TEST(Riccati, OraclePathsMatchDirectSimulation) {
    SystemicRiskParams p;
    const auto sol = riccati_systemic_solve(p, TimeGrid::make(1.0, 40));
    const auto grid = TimeGrid::make(1.0, 80);
    const std::size_t N = 16;
    Ensemble init{N, 1, std::vector<double>(N)};
    for (std::size_t i = 0; i < N; ++i) init.states[i] = -1.0 + 0.125 * i;
    const auto noise = sample_noise(grid, N, 1, CommonNoiseSpec::correlated_brownian(p.rho), 5);
    const auto paths = systemic_oracle_paths(sol, init, noise, 2);
    ASSERT_EQ(paths.X.size(), 41 * N);
    for (std::size_t i = 0; i < N; ++i) EXPECT_EQ(paths.X[i], init.states[i]);
    // Particle deviations from the mean see no common noise.
    std::vector<double> x = init.states;
    for (std::size_t k = 0; k < 80; ++k) {
        double mb = 0.0;
        for (double v : x) mb += v;
        mb /= N;
        for (std::size_t i = 0; i < N; ++i)
            x[i] += ((p.a + p.q) * (mb - x[i]) - sol.eta(k * grid.dt) * (x[i] - mb)) * grid.dt +
                    p.sigma * std::sqrt(1 - p.rho * p.rho) * noise.dw(k, i, 0) + p.sigma * p.rho * noise.common_path[k];
    }
    for (std::size_t i = 0; i < N; ++i) EXPECT_NEAR(paths.X[40 * N + i], x[i], 1e-12);
}

TEST(Analytic, DecoupledY0) {
    EXPECT_EQ(analytic_y0_decoupled(0.0, 1.0, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(analytic_y0_decoupled(0.7, 0.0, 1.0), std::sin(0.7));
    EXPECT_NEAR(analytic_y0_decoupled(std::numbers::pi / 2, std::sqrt(2.0), 1.0), std::exp(-1.0), 1e-15);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    double acc = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) acc += std::sin(std::numbers::pi / 2 + std::sqrt(2.0) * g(rng));
    EXPECT_NEAR(acc / n, std::exp(-1.0), 3e-3);
}

TEST(Pde, ZeroCostFixedPoint) {
    HamiltonianModel m;
    m.name = "zero";
    m.sigma = 0.5;
    m.mean_field_control = false;
    m.initial_density = [](double x) { return std::exp(-x * x / 0.08); };
    m.hamiltonian = [](double, double, double, double q) { return -0.5 * q * q; };
    m.optimal_drift = [](double, double, double, double q) { return -q; };
    m.terminal = [](double, double) { return 0.0; };
    PicardOptions po;
    const auto sol = pde_solve_hjb_fp(m, SpaceDomain{-4, 4}, 200, TimeGrid::make(1.0, 50), po);
    for (double u : sol.u) EXPECT_LT(std::fabs(u), po.tol);
}

TEST(Pde, HeatKernel) {
    HamiltonianModel m;
    m.name = "heat";
    m.sigma = 1.0;
    m.mean_field_control = false;
    const double s0 = 0.3;
    m.initial_density = [s0](double x) { return std::exp(-0.5 * x * x / (s0 * s0)); };
    m.hamiltonian = [](double, double, double, double) { return 0.0; };
    m.optimal_drift = [](double, double, double, double) { return 0.0; };
    m.terminal = [](double, double) { return 0.0; };
    const auto dom = auto_domain(0.0, s0, 1.0, 1.0);
    const auto sol = pde_solve_hjb_fp(m, dom, 400, TimeGrid::make(1.0, 1000));
    const std::size_t nt = sol.grid.n_steps;
    const double var = s0 * s0 + 1.0;
    double l1 = 0.0;
    for (std::size_t i = 0; i < sol.n_x(); ++i) {
        const double exact = std::exp(-0.5 * sol.x[i] * sol.x[i] / var) / std::sqrt(2 * std::numbers::pi * var);
        l1 += sol.h() * std::fabs(sol.m_at(nt, i) - exact);
    }
    EXPECT_LT(l1, 1e-3);
}

TEST(Pde, LqMassPositivityAndTerminal) {
    LqParams p;
    const auto model = hamiltonian_lq(p);
    const auto sol = pde_solve_hjb_fp(model, auto_domain(p.mu0_mean, p.mu0_std, p.sigma, p.horizon), 200,
                                      TimeGrid::make(p.horizon, 50));
    for (std::size_t n = 0; n <= 50; ++n) EXPECT_NEAR(sol.mass(n), 1.0, 1e-6);
    EXPECT_GE(*std::min_element(sol.m.begin(), sol.m.end()), -1e-12);
    // discrete terminal condition, including the mean-field derivative term
    const double mb = sol.mean(50);
    double coupling = 0.0;
    for (std::size_t i = 0; i < sol.n_x(); ++i)
        coupling += (i == 0 || i + 1 == sol.n_x() ? 0.5 : 1.0) * sol.h() * model.terminal_dmbar(sol.x[i], mb) *
                    sol.m_at(50, i);
    for (std::size_t i = 0; i < sol.n_x(); ++i)
        EXPECT_NEAR(sol.u_at(50, i), model.terminal(sol.x[i], mb) + sol.x[i] * coupling, 1e-12 * (1 + std::fabs(sol.u_at(50, i))));
    EXPECT_LT(sol.residuals.back(), 1e-9);
}

TEST(Pde, LqFeedbackMatchesRiccati) {
    LqParams p;
    const auto grid = TimeGrid::make(p.horizon, 200);
    const auto ric = riccati_lq_solve(p, grid);
    const auto pde = pde_solve_hjb_fp(hamiltonian_lq(p), auto_domain(p.mu0_mean, p.mu0_std, p.sigma, p.horizon), 400,
                                      grid);
    EXPECT_LT(sup_feedback_gap(ric, pde), 2e-2);
    EXPECT_NEAR(pde.mean(200), ric.mbar(p.horizon), 1e-2);
}

TEST(Pde, NonConvergenceCarriesResiduals) {
    LqParams p;
    PicardOptions po;
    po.max_iters = 2;
    po.tol = 1e-30;
    try {
        pde_solve_hjb_fp(hamiltonian_lq(p), auto_domain(1.0, 0.5, 0.5, 1.0), 50, TimeGrid::make(1.0, 10), po);
        FAIL();
    } catch (const PdeNonConvergence& e) {
        EXPECT_EQ(e.residuals.size(), 2u);
    }
}

TEST(Pde, RejectsMissingMeanFieldCallbacks) {
    auto m = hamiltonian_lq(LqParams{});
    m.hamiltonian_dmbar = nullptr;
    EXPECT_THROW(pde_solve_hjb_fp(m, SpaceDomain{-3, 5}, 50, TimeGrid::make(1.0, 10)), std::invalid_argument);
}

TEST(Pde, AtanDecoupledLimit) {
    // rho = 0: from X_0 = x0, X = x0 + sigma W and mbar stays at x0, so
    // Y0 = E[atan X_T] - T atan(x0).
    const double x0 = 1.0, s0 = 0.1, T = 1.0;
    const auto sol = pde_solve_hjb_fp(hamiltonian_atan(0.0, 1.0, x0, s0), auto_domain(x0, s0, 1.0, T), 400,
                                      TimeGrid::make(T, 200));
    EXPECT_NEAR(sol.mass(200), 1.0, 1e-6);
    const double sd = std::sqrt(T);
    double ey = 0.0;
    const int n = 20000;
    for (int k = 0; k <= n; ++k) {
        const double z = -10.0 + 20.0 * k / n;
        ey += (k == 0 || k == n ? 0.5 : 1.0) * std::atan(x0 + sd * z) * std::exp(-0.5 * z * z);
    }
    ey *= (20.0 / n) / std::sqrt(2.0 * std::numbers::pi);
    EXPECT_NEAR(sol.du_dx(0, x0), ey - T * std::atan(x0), 2e-3);
}

TEST(Dumps, CsvLayouts) {
    const auto dir = std::filesystem::temp_directory_path() / "mfnn_bench_test";
    std::filesystem::create_directories(dir);
    const auto ric = riccati_lq_solve(LqParams{}, TimeGrid::make(1.0, 4));
    write_riccati_lq_csv((dir / "r.csv").string(), ric);
    std::ifstream f(dir / "r.csv");
    std::string line;
    std::getline(f, line);
    EXPECT_EQ(line, "time,P,Pi,psi,s,mbar");
    int rows = 0;
    while (std::getline(f, line)) ++rows;
    EXPECT_EQ(rows, 5);
    std::filesystem::remove_all(dir);
}

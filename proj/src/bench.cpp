#include "mfnn/bench.hpp"

#include "mfnn/csv.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace mfnn {

double CoefficientPath::operator()(double time) const {
    const std::size_t n = t.size();
    if (n == 1) return value[0];
    const double h = t[1] - t[0];
    double pos = (time - t[0]) / h;
    pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
    auto j = static_cast<std::size_t>(pos);
    if (j >= n - 1) j = n - 2;
    const double s = pos - static_cast<double>(j);
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    return h00 * value[j] + h10 * h * slope[j] + h01 * value[j + 1] + h11 * h * slope[j + 1];
}

namespace {

constexpr double kBlowUp = 1e8;
constexpr std::size_t kSubsteps = 10;

void check_coefficient(double v, double t, const char* name) {
    if (!std::isfinite(v) || std::fabs(v) > kBlowUp) {
        std::ostringstream os;
        os << "Riccati blow-up: " << name << " exceeds 1e8 in magnitude at t = " << t;
        throw RiccatiBlowUp(t, os.str());
    }
}

/// Integrates y' = f(t, y) backward from y(T) = yT on n_sub uniform steps.
template <class F>
CoefficientPath integrate_backward(F f, double yT, double T, std::size_t n_sub, const char* name) {
    CoefficientPath c;
    const double h = T / static_cast<double>(n_sub);
    c.t.resize(n_sub + 1);
    c.value.resize(n_sub + 1);
    c.slope.resize(n_sub + 1);
    for (std::size_t j = 0; j <= n_sub; ++j) c.t[j] = static_cast<double>(j) * h;
    double y = yT;
    c.value[n_sub] = y;
    for (std::size_t j = n_sub; j > 0; --j) {
        const double t = c.t[j];
        const double k1 = f(t, y);
        const double k2 = f(t - 0.5 * h, y - 0.5 * h * k1);
        const double k3 = f(t - 0.5 * h, y - 0.5 * h * k2);
        const double k4 = f(t - h, y - h * k3);
        y -= h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        check_coefficient(y, c.t[j - 1], name);
        c.value[j - 1] = y;
    }
    for (std::size_t j = 0; j <= n_sub; ++j) c.slope[j] = f(c.t[j], c.value[j]);
    return c;
}

template <class F>
CoefficientPath integrate_forward(F f, double y0, double T, std::size_t n_sub, const char* name) {
    CoefficientPath c;
    const double h = T / static_cast<double>(n_sub);
    c.t.resize(n_sub + 1);
    c.value.resize(n_sub + 1);
    c.slope.resize(n_sub + 1);
    for (std::size_t j = 0; j <= n_sub; ++j) c.t[j] = static_cast<double>(j) * h;
    double y = y0;
    c.value[0] = y;
    for (std::size_t j = 0; j < n_sub; ++j) {
        const double t = c.t[j];
        const double k1 = f(t, y);
        const double k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
        const double k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
        const double k4 = f(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        check_coefficient(y, c.t[j + 1], name);
        c.value[j + 1] = y;
    }
    for (std::size_t j = 0; j <= n_sub; ++j) c.slope[j] = f(c.t[j], c.value[j]);
    return c;
}

}  // namespace

double RiccatiLqSolution::dP(double P) const {
    const auto& p = params;
    return -2.0 * p.A * P + p.B * p.B * P * P / p.R - (p.Q + p.Qbar * p.S * p.S);
}

double RiccatiLqSolution::dPi(double Pi) const {
    const auto& p = params;
    return -2.0 * (p.A + p.Abar) * Pi + p.B * p.B * Pi * Pi / p.R - (p.Q + p.Qbar * (1 - p.S) * (1 - p.S));
}

double RiccatiLqSolution::feedback(double t, double x) const { return feedback(t, x, mbar(t)); }

double RiccatiLqSolution::feedback(double t, double x, double mbar_t) const {
    return -(params.B / params.R) * (P(t) * (x - mbar_t) + Pi(t) * mbar_t);
}

double RiccatiLqSolution::y(double t, double x, double mbar_t) const { return 2.0 * P(t) * x + psi(t) * mbar_t; }

double RiccatiLqSolution::value() const {
    const auto& p = params;
    return P(0.0) * p.mu0_std * p.mu0_std + Pi(0.0) * p.mu0_mean * p.mu0_mean + s(0.0);
}

RiccatiLqSolution riccati_lq_solve(const LqParams& p, const TimeGrid& grid) {
    p.validate();
    grid.validate();
    if (std::fabs(grid.horizon - p.horizon) > 1e-12) throw std::invalid_argument("riccati_lq_solve: grid horizon != T");
    RiccatiLqSolution sol;
    sol.params = p;
    sol.grid = grid;
    const std::size_t n_sub = grid.n_steps * kSubsteps;
    const double T = p.horizon;
    sol.P = integrate_backward([&](double, double P) { return sol.dP(P); }, p.QT + p.QbarT * p.ST * p.ST, T, n_sub,
                               "P");
    sol.Pi = integrate_backward([&](double, double Pi) { return sol.dPi(Pi); },
                                p.QT + p.QbarT * (1 - p.ST) * (1 - p.ST), T, n_sub, "Pi");
    const double s2 = p.sigma * p.sigma;
    sol.s = integrate_backward([&](double t, double) { return -s2 * sol.P(t); }, 0.0, T, n_sub, "s");
    sol.mbar = integrate_forward(
        [&](double t, double m) { return (p.A + p.Abar - p.B * p.B * sol.Pi(t) / p.R) * m; }, p.mu0_mean, T, n_sub,
        "mbar");
    return sol;
}

double RiccatiSystemicSolution::z(double t) const {
    return eta(t) * params.sigma * std::sqrt(1.0 - params.rho * params.rho);
}

double RiccatiSystemicSolution::d_eta(double e) const {
    const auto& p = params;
    return 2.0 * (p.a + p.q) * e + e * e - (p.eps - p.q * p.q);
}

RiccatiSystemicSolution riccati_systemic_solve(const SystemicRiskParams& p, const TimeGrid& grid) {
    p.validate();
    grid.validate();
    RiccatiSystemicSolution sol;
    sol.params = p;
    sol.grid = grid;
    sol.eta = integrate_backward([&](double, double e) { return sol.d_eta(e); }, p.c, grid.horizon,
                                 grid.n_steps * kSubsteps, "eta");
    return sol;
}

OraclePaths systemic_oracle_paths(const RiccatiSystemicSolution& sol, const Ensemble& initial,
                                  const NoiseBundle& fine, std::size_t factor) {
    initial.validate();
    if (initial.dim != 1 || initial.n_particles != fine.n_particles || fine.dim_w != 1)
        throw std::invalid_argument("systemic_oracle_paths: shape mismatch");
    if (factor < 1 || fine.n_steps % factor != 0)
        throw std::invalid_argument("systemic_oracle_paths: factor must divide the fine step count");
    const auto& p = sol.params;
    const std::size_t N = initial.n_particles, nc = fine.n_steps / factor;
    const double idio = p.sigma * std::sqrt(1.0 - p.rho * p.rho), common = p.sigma * p.rho;
    const bool with_common = fine.common.kind == CommonNoiseKind::correlated_brownian;
    OraclePaths out;
    out.X.resize((nc + 1) * N);
    out.Y.resize((nc + 1) * N);
    std::vector<double> x = initial.states, xn(N);
    auto mean = [&] {
        double acc = 0.0;
        for (double v : x) acc += v;
        return acc / static_cast<double>(N);
    };
    for (std::size_t k = 0; k <= fine.n_steps; ++k) {
        const double t = static_cast<double>(k) * fine.dt;
        const double mb = mean();
        if (k % factor == 0) {
            const std::size_t n = k / factor;
            for (std::size_t i = 0; i < N; ++i) {
                out.X[n * N + i] = x[i];
                out.Y[n * N + i] = sol.y(t, x[i], mb);
            }
        }
        if (k == fine.n_steps) break;
        const double dw0 = with_common ? fine.common_path[k] : 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double drift = (p.a + p.q) * (mb - x[i]) - sol.y(t, x[i], mb);
            xn[i] = x[i] + drift * fine.dt + idio * fine.dw(k, i, 0) + common * dw0;
        }
        x.swap(xn);
    }
    return out;
}

double analytic_y0_decoupled(double x0, double sigma, double T) {
    return std::sin(x0) * std::exp(-0.5 * sigma * sigma * T);
}

// ---------------------------------------------------------------------------

void HamiltonianModel::validate() const {
    if (!(sigma >= 0.0)) throw std::invalid_argument("pde model: sigma must be >= 0");
    if (!initial_density || !hamiltonian || !optimal_drift || !terminal)
        throw std::invalid_argument("pde model '" + name + "': missing callback");
    if (mean_field_control && (!hamiltonian_dmbar || !terminal_dmbar))
        throw std::invalid_argument("pde model '" + name +
                                    "': mean field control needs d/dmbar callbacks for H and g");
}

namespace {

double gaussian_density(double x, double mean, double std) {
    const double z = (x - mean) / std;
    return std::exp(-0.5 * z * z) / (std * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

HamiltonianModel hamiltonian_lq(const LqParams& p) {
    p.validate();
    if (!(p.mu0_std > 0.0)) throw std::invalid_argument("hamiltonian_lq: the PDE needs mu0_std > 0");
    HamiltonianModel h;
    h.name = "lq";
    h.sigma = p.sigma;
    h.mean_field_control = true;
    h.initial_density = [p](double x) { return gaussian_density(x, p.mu0_mean, p.mu0_std); };
    h.hamiltonian = [p](double, double x, double mb, double q) {
        const double d = mb - p.S * x;
        return (p.A * x + p.Abar * mb) * q - p.B * p.B * q * q / (4.0 * p.R) + p.Q * x * x + p.Qbar * d * d;
    };
    h.optimal_drift = [p](double, double x, double mb, double q) {
        return p.A * x + p.Abar * mb - p.B * p.B * q / (2.0 * p.R);
    };
    h.hamiltonian_dmbar = [p](double, double x, double mb, double q) {
        return p.Abar * q + 2.0 * p.Qbar * (mb - p.S * x);
    };
    h.terminal = [p](double x, double mb) {
        const double d = mb - p.ST * x;
        return p.QT * x * x + p.QbarT * d * d;
    };
    h.terminal_dmbar = [p](double x, double mb) { return 2.0 * p.QbarT * (mb - p.ST * x); };
    return h;
}

HamiltonianModel hamiltonian_atan(double rho, double sigma, double x0, double init_std) {
    if (!(init_std > 0.0)) throw std::invalid_argument("hamiltonian_atan: init_std must be > 0");
    HamiltonianModel h;
    h.name = "atan-mfg";
    h.sigma = sigma;
    h.mean_field_control = false;
    h.initial_density = [x0, init_std](double x) { return gaussian_density(x, x0, init_std); };
    // f = a^2 / (2 rho) - x atan(mbar): its Pontryagin system is dX = -rho Y dt, dY = atan(mbar) dt.
    h.hamiltonian = [rho](double, double x, double mb, double q) { return -0.5 * rho * q * q - x * std::atan(mb); };
    h.optimal_drift = [rho](double, double, double, double q) { return -rho * q; };
    h.terminal = [](double x, double) { return x * std::atan(x) - 0.5 * std::log1p(x * x); };
    return h;
}

SpaceDomain auto_domain(double mean, double std0, double sigma, double T, double extra) {
    const double half = 6.0 * std::sqrt(std0 * std0 + sigma * sigma * T) + extra;
    return SpaceDomain{mean - half, mean + half};
}

double PdeSolution::mass(std::size_t n) const {
    const std::size_t nx = x.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < nx; ++i) acc += (i == 0 || i + 1 == nx ? 0.5 : 1.0) * m_at(n, i);
    return acc * h();
}

double PdeSolution::mean(std::size_t n) const {
    const std::size_t nx = x.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < nx; ++i) acc += (i == 0 || i + 1 == nx ? 0.5 : 1.0) * x[i] * m_at(n, i);
    return acc * h();
}

double PdeSolution::du_dx(std::size_t n, double xq) const {
    const std::size_t nx = x.size();
    auto grad = [&](std::size_t i) {
        if (i == 0) return (u_at(n, 1) - u_at(n, 0)) / h();
        if (i + 1 == nx) return (u_at(n, nx - 1) - u_at(n, nx - 2)) / h();
        return (u_at(n, i + 1) - u_at(n, i - 1)) / (2.0 * h());
    };
    double pos = std::clamp((xq - x[0]) / h(), 0.0, static_cast<double>(nx - 1));
    auto i = static_cast<std::size_t>(pos);
    if (i >= nx - 1) i = nx - 2;
    const double s = pos - static_cast<double>(i);
    return (1.0 - s) * grad(i) + s * grad(i + 1);
}

namespace {

/// B(z) = z / (e^z - 1), the Bernoulli function.
double bernoulli(double z) {
    if (std::fabs(z) < 1e-8) return 1.0 - 0.5 * z;
    return z / std::expm1(z);
}

/// Scharfetter-Gummel flux coefficients F = a m_i - c m_{i+1} for drift v at an interface.
void sg_coefficients(double v, double D, double h, double& a, double& c) {
    if (D == 0.0) {
        a = std::max(v, 0.0);
        c = std::max(-v, 0.0);
        return;
    }
    const double z = v * h / D;
    a = D / h * bernoulli(-z);
    c = D / h * bernoulli(z);
}

/// Solves a tridiagonal system in place (Thomas); lower[0] and upper[n-1] unused.
void thomas(std::vector<double>& lower, std::vector<double>& diag, std::vector<double>& upper,
            std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

struct Discretization {
    std::vector<double> x, w;
    double h = 0.0, D = 0.0;

    double integrate(const double* f) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += w[i] * f[i];
        return acc;
    }
    double central_gradient(const double* u, std::size_t i) const {
        const std::size_t nx = x.size();
        if (i == 0 || i + 1 == nx) return 0.0;  // Neumann
        return (u[i + 1] - u[i - 1]) / (2.0 * h);
    }
};

void hjb_sweep(const HamiltonianModel& mod, const Discretization& d, const TimeGrid& grid,
               const std::vector<double>& m, std::vector<double>& u) {
    const std::size_t nx = d.x.size(), nt = grid.n_steps;
    std::vector<double> lo(nx), di(nx), up(nx), rhs(nx), a(nx), c(nx), p(nx);
    auto mean_of = [&](std::size_t n) {
        std::vector<double> xm(nx);
        for (std::size_t i = 0; i < nx; ++i) xm[i] = d.x[i] * m[n * nx + i];
        return d.integrate(xm.data());
    };
    // terminal condition
    {
        const double mb = mean_of(nt);
        double coupling = 0.0;
        if (mod.mean_field_control) {
            std::vector<double> dg(nx);
            for (std::size_t i = 0; i < nx; ++i) dg[i] = mod.terminal_dmbar(d.x[i], mb) * m[nt * nx + i];
            coupling = d.integrate(dg.data());
        }
        for (std::size_t i = 0; i < nx; ++i) u[nt * nx + i] = mod.terminal(d.x[i], mb) + d.x[i] * coupling;
    }
    for (std::size_t n = nt; n-- > 0;) {
        const double t = grid.time(n + 1);
        const double* un = &u[(n + 1) * nx];
        const double* mn = &m[(n + 1) * nx];
        const double mb = mean_of(n + 1);
        for (std::size_t i = 0; i < nx; ++i) p[i] = d.central_gradient(un, i);
        double coupling = 0.0;
        if (mod.mean_field_control) {
            std::vector<double> dh(nx);
            for (std::size_t i = 0; i < nx; ++i) dh[i] = mod.hamiltonian_dmbar(t, d.x[i], mb, p[i]) * mn[i];
            coupling = d.integrate(dh.data());
        }
        for (std::size_t i = 0; i + 1 < nx; ++i) {
            const double xf = 0.5 * (d.x[i] + d.x[i + 1]);
            const double pf = (un[i + 1] - un[i]) / d.h;
            sg_coefficients(mod.optimal_drift(t, xf, mb, pf), d.D, d.h, a[i], c[i]);
        }
        for (std::size_t i = 0; i < nx; ++i) {
            const double b = mod.optimal_drift(t, d.x[i], mb, p[i]);
            const double ell = mod.hamiltonian(t, d.x[i], mb, p[i]) - b * p[i] + d.x[i] * coupling;
            rhs[i] = un[i] + grid.dt * ell;
            // (K* u)_i = [a_i (u_{i+1} - u_i) + c_{i-1} (u_{i-1} - u_i)] / w_i
            const double right = i + 1 < nx ? a[i] : 0.0;
            const double left = i > 0 ? c[i - 1] : 0.0;
            di[i] = 1.0 + grid.dt * (right + left) / d.w[i];
            up[i] = -grid.dt * right / d.w[i];
            lo[i] = -grid.dt * left / d.w[i];
        }
        thomas(lo, di, up, rhs);
        std::copy(rhs.begin(), rhs.end(), u.begin() + static_cast<std::ptrdiff_t>(n * nx));
    }
}

void fp_sweep(const HamiltonianModel& mod, const Discretization& d, const TimeGrid& grid,
              const std::vector<double>& u, std::vector<double>& m) {
    const std::size_t nx = d.x.size(), nt = grid.n_steps;
    std::vector<double> lo(nx), di(nx), up(nx), rhs(nx), a(nx), c(nx), xm(nx);
    for (std::size_t n = 0; n < nt; ++n) {
        const double t = grid.time(n);
        const double* un = &u[n * nx];
        const double* mn = &m[n * nx];
        for (std::size_t i = 0; i < nx; ++i) xm[i] = d.x[i] * mn[i];
        const double mb = d.integrate(xm.data());
        for (std::size_t i = 0; i + 1 < nx; ++i) {
            const double xf = 0.5 * (d.x[i] + d.x[i + 1]);
            const double pf = (un[i + 1] - un[i]) / d.h;
            sg_coefficients(mod.optimal_drift(t, xf, mb, pf), d.D, d.h, a[i], c[i]);
        }
        // (K m)_i = [a_{i-1} m_{i-1} - c_{i-1} m_i - a_i m_i + c_i m_{i+1}] / w_i
        for (std::size_t i = 0; i < nx; ++i) {
            const double out_right = i + 1 < nx ? a[i] : 0.0;
            const double in_right = i + 1 < nx ? c[i] : 0.0;
            const double in_left = i > 0 ? a[i - 1] : 0.0;
            const double out_left = i > 0 ? c[i - 1] : 0.0;
            di[i] = 1.0 + grid.dt * (out_right + out_left) / d.w[i];
            up[i] = -grid.dt * in_right / d.w[i];
            lo[i] = -grid.dt * in_left / d.w[i];
            rhs[i] = mn[i];
        }
        thomas(lo, di, up, rhs);
        std::copy(rhs.begin(), rhs.end(), m.begin() + static_cast<std::ptrdiff_t>((n + 1) * nx));
    }
}

}  // namespace

PdeSolution pde_solve_hjb_fp(const HamiltonianModel& model, const SpaceDomain& domain, std::size_t n_x,
                             const TimeGrid& grid, const PicardOptions& picard) {
    model.validate();
    grid.validate();
    if (n_x < 3) throw std::invalid_argument("pde: need at least 3 space nodes");
    if (!(domain.x_min < domain.x_max)) throw std::invalid_argument("pde: empty space domain");
    if (!(picard.damping >= 0.0 && picard.damping < 1.0)) throw std::invalid_argument("pde: damping must be in [0, 1)");
    if (picard.max_iters < 1) throw std::invalid_argument("pde: max_iters must be >= 1");

    Discretization d;
    d.h = (domain.x_max - domain.x_min) / static_cast<double>(n_x - 1);
    d.D = 0.5 * model.sigma * model.sigma;
    d.x.resize(n_x);
    d.w.assign(n_x, d.h);
    d.w.front() = d.w.back() = 0.5 * d.h;
    for (std::size_t i = 0; i < n_x; ++i) d.x[i] = domain.x_min + static_cast<double>(i) * d.h;

    const std::size_t nt = grid.n_steps;
    PdeSolution sol;
    sol.x = d.x;
    sol.grid = grid;
    sol.m.assign((nt + 1) * n_x, 0.0);
    sol.u.assign((nt + 1) * n_x, 0.0);

    std::vector<double> m0(n_x);
    for (std::size_t i = 0; i < n_x; ++i) m0[i] = model.initial_density(d.x[i]);
    const double mass0 = d.integrate(m0.data());
    if (!(mass0 > 0.0)) throw std::invalid_argument("pde: initial density has no mass on the domain");
    for (double& v : m0) v /= mass0;
    for (std::size_t n = 0; n <= nt; ++n) std::copy(m0.begin(), m0.end(), sol.m.begin() + static_cast<std::ptrdiff_t>(n * n_x));

    std::vector<double> m_new = sol.m, u_prev = sol.u;
    for (std::size_t it = 0; it < picard.max_iters; ++it) {
        hjb_sweep(model, d, grid, sol.m, sol.u);
        fp_sweep(model, d, grid, sol.u, m_new);
        double res = 0.0;
        for (std::size_t k = 0; k < sol.m.size(); ++k) {
            res = std::max(res, std::fabs(m_new[k] - sol.m[k]));
            res = std::max(res, std::fabs(sol.u[k] - u_prev[k]));
        }
        if (!std::isfinite(res)) throw PdeNonConvergence(sol.residuals, "pde: Picard iterate became non-finite");
        sol.residuals.push_back(res);
        for (std::size_t k = 0; k < sol.m.size(); ++k)
            sol.m[k] = picard.damping * sol.m[k] + (1.0 - picard.damping) * m_new[k];
        u_prev = sol.u;
        if (res < picard.tol) {
            // u consistent with the returned m
            hjb_sweep(model, d, grid, sol.m, sol.u);
            return sol;
        }
    }
    std::ostringstream os;
    os << "pde: Picard iteration did not converge in " << picard.max_iters << " iterations (last residual "
       << sol.residuals.back() << ")";
    throw PdeNonConvergence(sol.residuals, os.str());
}

void write_riccati_lq_csv(const std::string& path, const RiccatiLqSolution& sol) {
    csv::Writer w(path, {"time", "P", "Pi", "psi", "s", "mbar"});
    for (std::size_t n = 0; n <= sol.grid.n_steps; ++n) {
        const double t = sol.grid.time(n);
        w.row(t, sol.P(t), sol.Pi(t), sol.psi(t), sol.s(t), sol.mbar(t));
    }
    w.close();
}

void write_riccati_systemic_csv(const std::string& path, const RiccatiSystemicSolution& sol) {
    csv::Writer w(path, {"time", "eta", "z"});
    for (std::size_t n = 0; n <= sol.grid.n_steps; ++n) {
        const double t = sol.grid.time(n);
        w.row(t, sol.eta(t), sol.z(t));
    }
    w.close();
}

void write_pde_csv(const std::string& path, const PdeSolution& sol) {
    csv::Writer w(path, {"step", "time", "x", "m", "u"});
    for (std::size_t n = 0; n <= sol.grid.n_steps; ++n)
        for (std::size_t i = 0; i < sol.n_x(); ++i) w.row(n, sol.grid.time(n), sol.x[i], sol.m_at(n, i), sol.u_at(n, i));
    w.close();
}

}  // namespace mfnn

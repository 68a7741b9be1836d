#include "mfnn/model.hpp"

#include <cmath>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mfnn {

MeasureStats MeasureStats::from_points(VarSpan points, std::size_t n, std::size_t dim, bool keep_points) {
    if (n == 0 || points.size() != n * dim) throw std::invalid_argument("empirical stats: bad point block");
    MeasureStats s;
    std::vector<Var> column(n);
    s.mean.reserve(dim);
    for (std::size_t k = 0; k < dim; ++k) {
        for (std::size_t i = 0; i < n; ++i) column[i] = points[i * dim + k];
        s.mean.push_back(ad::mean(column));
    }
    std::vector<Var> sq;
    sq.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Var acc = ad::square(points[i * dim]);
        for (std::size_t k = 1; k < dim; ++k) acc = acc + ad::square(points[i * dim + k]);
        sq.push_back(acc);
    }
    s.second_moment = ad::mean(sq);
    if (keep_points) s.raw_points = points;
    return s;
}

CommonNoiseSpec CommonNoiseSpec::two_point_jump(double jump_time, double magnitude) {
    CommonNoiseSpec s;
    s.kind = CommonNoiseKind::two_point_jump;
    s.jump_time = jump_time;
    s.magnitude = magnitude;
    return s;
}

CommonNoiseSpec CommonNoiseSpec::correlated_brownian(double rho) {
    CommonNoiseSpec s;
    s.kind = CommonNoiseKind::correlated_brownian;
    s.rho = rho;
    return s;
}

void CommonNoiseSpec::validate(double horizon) const {
    switch (kind) {
        case CommonNoiseKind::none: return;
        case CommonNoiseKind::two_point_jump:
            if (!(jump_time > 0.0 && jump_time < horizon))
                throw std::invalid_argument("common noise: jump_time must lie in (0, T)");
            if (!std::isfinite(magnitude)) throw std::invalid_argument("common noise: non-finite jump magnitude");
            return;
        case CommonNoiseKind::correlated_brownian:
            if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("common noise: rho must lie in [0, 1]");
            return;
    }
}

void LqParams::validate() const {
    if (!(R > 0.0)) throw std::invalid_argument("LQ model: R must be > 0");
    if (!(sigma >= 0.0)) throw std::invalid_argument("LQ model: sigma must be >= 0");
    if (!(mu0_std >= 0.0)) throw std::invalid_argument("LQ model: mu0_std must be >= 0");
    if (!(horizon > 0.0)) throw std::invalid_argument("LQ model: horizon must be > 0");
}

void MinLqgParams::validate() const {
    if (!(xi1 < xi2)) throw std::invalid_argument("min-LQG model: xi1 must be < xi2");
    if (!(sigma >= 0.0)) throw std::invalid_argument("min-LQG model: sigma must be >= 0");
    if (!(horizon > 0.0)) throw std::invalid_argument("min-LQG model: horizon must be > 0");
}

void CommonNoiseLqParams::validate() const {
    if (!(cT > 0.0)) throw std::invalid_argument("common-noise LQ model: cT must be > 0");
    if (!(KT >= 0.0)) throw std::invalid_argument("common-noise LQ model: KT must be >= 0");
    if (!(sigma >= 0.0)) throw std::invalid_argument("common-noise LQ model: sigma must be >= 0");
    if (!(horizon > 0.0)) throw std::invalid_argument("common-noise LQ model: horizon must be > 0");
}

void SystemicRiskParams::validate() const {
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("systemic risk: rho must lie in [0, 1]");
    if (!(sigma >= 0.0)) throw std::invalid_argument("systemic risk: sigma must be >= 0");
    if (!(horizon > 0.0)) throw std::invalid_argument("systemic risk: horizon must be > 0");
    for (double v : {a, q, eps, c})
        if (!std::isfinite(v)) throw std::invalid_argument("systemic risk: parameters must be finite");
}

void ModelSpec::validate() const {
    if (dim_x < 1 || dim_alpha < 1) throw std::invalid_argument("model: dimensions must be >= 1");
    if (!drift || !vol || !running_cost || !terminal_cost || !init_sampler)
        throw std::invalid_argument("model '" + name + "': missing coefficient function");
    if (!(horizon > 0.0)) throw std::invalid_argument("model: horizon must be > 0");
    common_noise.validate(horizon);
    if (control_box) {
        control_box->validate();
        if (control_box->lo.size() != dim_alpha) throw std::invalid_argument("model: control box dimension");
    }
}

void FbsdeSpec::validate() const {
    if (dim_x < 1 || dim_y < 1) throw std::invalid_argument("fbsde: dimensions must be >= 1");
    if (!drift || !driver || !vol || !terminal || !init_sampler)
        throw std::invalid_argument("fbsde '" + name + "': missing coefficient function");
    if (!(horizon > 0.0)) throw std::invalid_argument("fbsde: horizon must be > 0");
    common_noise.validate(horizon);
}

namespace {

InitSampler gaussian_sampler(double mean, double std) {
    return [mean, std](Rng& rng, std::span<double> out) {
        std::normal_distribution<double> n(0.0, 1.0);
        for (double& v : out) v = mean + std * n(rng);
    };
}

InitSampler point_sampler(double x0) {
    return [x0](Rng&, std::span<double> out) {
        for (double& v : out) v = x0;
    };
}

VolFn constant_vol(double sigma) {
    return [sigma](double, VarSpan, const MeasureStats&, const CommonNoiseState&, VarOut out) { out[0] = sigma; };
}

}  // namespace

ModelSpec make_lq(const LqParams& p) {
    p.validate();
    ModelSpec m;
    m.name = "lq";
    m.horizon = p.horizon;
    m.drift = [p](double, VarSpan x, const MeasureStats& mu, VarSpan a, const CommonNoiseState&, VarOut out) {
        out[0] = p.A * x[0] + p.Abar * mu.mean[0] + p.B * a[0];
    };
    m.vol = constant_vol(p.sigma);
    m.running_cost = [p](double, VarSpan x, const MeasureStats& mu, VarSpan a, const CommonNoiseState&) {
        return p.Q * ad::square(x[0]) + p.Qbar * ad::square(mu.mean[0] - p.S * x[0]) + p.R * ad::square(a[0]);
    };
    m.terminal_cost = [p](VarSpan x, const MeasureStats& mu, const CommonNoiseState&) {
        return p.QT * ad::square(x[0]) + p.QbarT * ad::square(mu.mean[0] - p.ST * x[0]);
    };
    m.init_sampler = gaussian_sampler(p.mu0_mean, p.mu0_std);
    m.quadratic_control = QuadraticControl{p.B, p.R};
    m.lq = p;
    return m;
}

Var minlqg_terminal(const Var& x, double xi1, double xi2) {
    return ad::min(ad::abs(x - xi1), ad::abs(x - xi2));
}

ModelSpec make_minlqg(const MinLqgParams& p) {
    p.validate();
    ModelSpec m;
    m.name = "minlqg";
    m.horizon = p.horizon;
    m.drift = [](double, VarSpan, const MeasureStats&, VarSpan a, const CommonNoiseState&, VarOut out) {
        out[0] = a[0];
    };
    m.vol = constant_vol(p.sigma);
    m.running_cost = [](double, VarSpan, const MeasureStats&, VarSpan a, const CommonNoiseState&) {
        return 0.5 * ad::square(a[0]);
    };
    m.terminal_cost = [p](VarSpan x, const MeasureStats&, const CommonNoiseState&) {
        return minlqg_terminal(x[0], p.xi1, p.xi2);
    };
    m.init_sampler = gaussian_sampler(p.mu0_mean, p.mu0_std);
    m.quadratic_control = QuadraticControl{1.0, 0.5};
    return m;
}

ModelSpec make_common_noise_lq(const CommonNoiseLqParams& p) {
    p.validate();
    ModelSpec m;
    m.name = "cn-lq";
    m.horizon = p.horizon;
    m.common_noise = CommonNoiseSpec::two_point_jump(p.jump_time(), p.cT);
    m.drift = [](double, VarSpan, const MeasureStats&, VarSpan a, const CommonNoiseState&, VarOut out) {
        out[0] = a[0];
    };
    m.vol = constant_vol(p.sigma);
    m.running_cost = [](double, VarSpan, const MeasureStats&, VarSpan a, const CommonNoiseState&) {
        return ad::square(a[0]);
    };
    // Within one rollout every particle sees the same scenario, so the population
    // mean is the mean conditional on the common noise.
    m.terminal_cost = [p](VarSpan x, const MeasureStats& mu, const CommonNoiseState& cn) {
        return ad::square(x[0] - cn.level) + p.KT * ad::square(x[0] - mu.mean[0]);
    };
    m.init_sampler = gaussian_sampler(p.mu0_mean, p.mu0_std);
    m.quadratic_control = QuadraticControl{1.0, 1.0};
    return m;
}

std::vector<double> hat_alpha_lq(const ModelSpec& model, double, std::span<const double> x,
                                 std::span<const double>, std::span<const double> y) {
    if (!model.quadratic_control)
        throw std::invalid_argument("hat_alpha_lq: model '" + model.name + "' is not an LQ-family model");
    if (x.size() != model.dim_x || y.size() != model.dim_alpha)
        throw std::invalid_argument("hat_alpha_lq: dimension mismatch");
    const auto [B, R] = *model.quadratic_control;
    std::vector<double> a(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) a[k] = -B * y[k] / (2.0 * R);
    return a;
}

FbsdeSpec make_sincos_fbsde(double rho, double sigma, double x0, double horizon) {
    if (!(sigma >= 0.0) || !(horizon > 0.0)) throw std::invalid_argument("sincos: need sigma >= 0, T > 0");
    FbsdeSpec s;
    s.name = "sincos";
    s.horizon = horizon;
    s.drift = [rho](double, VarSpan, const MeasureStats&, VarSpan y, const MeasureStats&, const CommonNoiseState&,
                    VarOut out) { out[0] = rho * ad::cos(y[0]); };
    s.driver = [](double, VarSpan, const MeasureStats&, VarSpan, const MeasureStats&, VarSpan,
                  const CommonNoiseState&, VarOut out) { out[0] = Var(0.0); };
    s.vol = constant_vol(sigma);
    s.terminal = [](VarSpan x, const MeasureStats&, const CommonNoiseState&, VarOut out) { out[0] = ad::sin(x[0]); };
    s.init_sampler = point_sampler(x0);
    s.initial_point = std::vector<double>{x0};
    return s;
}

FbsdeSpec make_atan_mfg(double rho, double sigma, double x0, double horizon) {
    if (!(sigma >= 0.0) || !(horizon > 0.0)) throw std::invalid_argument("atan-mfg: need sigma >= 0, T > 0");
    FbsdeSpec s;
    s.name = "atan-mfg";
    s.horizon = horizon;
    s.is_game = true;
    s.drift = [rho](double, VarSpan, const MeasureStats&, VarSpan y, const MeasureStats&, const CommonNoiseState&,
                    VarOut out) { out[0] = -rho * y[0]; };
    // dY = -F dt + Z dW with F = -atan(E[X_t]), i.e. dY = atan(E[X_t]) dt + Z dW.
    s.driver = [](double, VarSpan, const MeasureStats& mu, VarSpan, const MeasureStats&, VarSpan,
                  const CommonNoiseState&, VarOut out) { out[0] = -ad::atan(mu.mean[0]); };
    s.vol = constant_vol(sigma);
    s.terminal = [](VarSpan x, const MeasureStats&, const CommonNoiseState&, VarOut out) { out[0] = ad::atan(x[0]); };
    s.init_sampler = point_sampler(x0);
    s.initial_point = std::vector<double>{x0};
    return s;
}

FbsdeSpec make_systemic_risk(const SystemicRiskParams& p) {
    p.validate();
    FbsdeSpec s;
    s.name = "systemic-risk";
    s.horizon = p.horizon;
    s.is_game = true;
    s.systemic = p;
    if (p.rho > 0.0) s.common_noise = CommonNoiseSpec::correlated_brownian(p.rho);
    if (p.q > p.eps * p.eps || p.q * p.q > p.eps) {
        std::ostringstream os;
        os << "systemic-risk: q=" << p.q << ", eps=" << p.eps
           << " violates q <= eps^2 or q^2 <= eps; the running cost may not be jointly convex";
        s.warnings.push_back(os.str());
        std::cerr << "warning: " << os.str() << '\n';
    }
    const double k = p.a + p.q;
    const double gap = p.eps - p.q * p.q;
    s.drift = [k](double, VarSpan x, const MeasureStats& mu, VarSpan y, const MeasureStats&, const CommonNoiseState&,
                  VarOut out) { out[0] = k * (mu.mean[0] - x[0]) - y[0]; };
    s.driver = [k, gap](double, VarSpan x, const MeasureStats& mu, VarSpan y, const MeasureStats&, VarSpan,
                        const CommonNoiseState&, VarOut out) { out[0] = -(k * y[0] + gap * (mu.mean[0] - x[0])); };
    const double idio = p.sigma * std::sqrt(1.0 - p.rho * p.rho);
    const double common = p.sigma * p.rho;
    const bool with_common = p.rho > 0.0;
    s.vol = [idio, common, with_common](double, VarSpan, const MeasureStats&, const CommonNoiseState&, VarOut out) {
        out[0] = idio;
        if (with_common) out[1] = common;
    };
    s.terminal = [c = p.c](VarSpan x, const MeasureStats& mu, const CommonNoiseState&, VarOut out) {
        out[0] = c * (x[0] - mu.mean[0]);
    };
    s.init_sampler = gaussian_sampler(p.mu0_mean, p.mu0_std);
    return s;
}

FbsdeSpec make_minlqg_fbsde(const MinLqgParams& p) {
    p.validate();
    FbsdeSpec s;
    s.name = "minlqg";
    s.horizon = p.horizon;
    // b = a, f = a^2 / 2  =>  hat alpha = -y, d_x H = 0.
    s.drift = [](double, VarSpan, const MeasureStats&, VarSpan y, const MeasureStats&, const CommonNoiseState&,
                 VarOut out) { out[0] = -y[0]; };
    s.driver = [](double, VarSpan, const MeasureStats&, VarSpan, const MeasureStats&, VarSpan,
                  const CommonNoiseState&, VarOut out) { out[0] = Var(0.0); };
    s.vol = constant_vol(p.sigma);
    s.terminal = [p](VarSpan x, const MeasureStats&, const CommonNoiseState&, VarOut out) {
        // derivative of min(|x - xi1|, |x - xi2|); jumps at the midpoint
        const double mid = 0.5 * (p.xi1 + p.xi2);
        const double target = x[0].value() <= mid ? p.xi1 : p.xi2;
        out[0] = Var(x[0].value() > target ? 1.0 : (x[0].value() < target ? -1.0 : 0.0));
    };
    s.init_sampler = gaussian_sampler(p.mu0_mean, p.mu0_std);
    return s;
}

FbsdeSpec make_lq_fbsde(const LqParams& p) {
    p.validate();
    FbsdeSpec s;
    s.name = "lq";
    s.horizon = p.horizon;
    const double b2r = p.B * p.B / (2.0 * p.R);
    s.drift = [p, b2r](double, VarSpan x, const MeasureStats& mu, VarSpan y, const MeasureStats&,
                       const CommonNoiseState&, VarOut out) {
        out[0] = p.A * x[0] + p.Abar * mu.mean[0] - b2r * y[0];
    };
    // d_x H + E~[d_mu H]
    s.driver = [p](double, VarSpan x, const MeasureStats& mu, VarSpan y, const MeasureStats& mu_y, VarSpan,
                   const CommonNoiseState&, VarOut out) {
        const Var& m = mu.mean[0];
        out[0] = p.A * y[0] + 2.0 * p.Q * x[0] - 2.0 * p.Qbar * p.S * (m - p.S * x[0]) + p.Abar * mu_y.mean[0] +
                 2.0 * p.Qbar * (1.0 - p.S) * m;
    };
    s.vol = constant_vol(p.sigma);
    s.terminal = [p](VarSpan x, const MeasureStats& mu, const CommonNoiseState&, VarOut out) {
        const Var& m = mu.mean[0];
        out[0] = 2.0 * p.QT * x[0] - 2.0 * p.QbarT * p.ST * (m - p.ST * x[0]) + 2.0 * p.QbarT * (1.0 - p.ST) * m;
    };
    s.init_sampler = gaussian_sampler(p.mu0_mean, p.mu0_std);
    return s;
}

double systemic_risk_running_cost(const SystemicRiskParams& p, double alpha, double x, double mbar) {
    const double d = mbar - x;
    return 0.5 * alpha * alpha - p.q * alpha * d + 0.5 * p.eps * d * d;
}

double systemic_risk_hat_alpha(const SystemicRiskParams& p, double x, double mbar, double y) {
    return p.q * (mbar - x) - y;
}

}  // namespace mfnn

#include "mfnn/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace mfnn;

namespace {

MeasureStats stats_of(double mean) {
    MeasureStats s;
    s.mean = {Var(mean)};
    s.second_moment = Var(mean * mean);
    return s;
}

double eval_terminal(const FbsdeSpec& s, double x, double mbar, double level = 0.0) {
    std::vector<Var> xv{Var(x)}, out(1);
    s.terminal(xv, stats_of(mbar), CommonNoiseState{level, 0.0}, out);
    return out[0].value();
}

double eval_drift(const FbsdeSpec& s, double t, double x, double mbar, double y) {
    std::vector<Var> xv{Var(x)}, yv{Var(y)}, out(1);
    s.drift(t, xv, stats_of(mbar), yv, stats_of(y), CommonNoiseState{}, out);
    return out[0].value();
}

double eval_driver(const FbsdeSpec& s, double t, double x, double mbar, double y, double ybar) {
    std::vector<Var> xv{Var(x)}, yv{Var(y)}, out(1);
    s.driver(t, xv, stats_of(mbar), yv, stats_of(ybar), {}, CommonNoiseState{}, out);
    return out[0].value();
}

}  // namespace

TEST(Model, LqCoefficients) {
    LqParams p;
    p.A = 0.0;
    p.Abar = 0.5;
    p.B = 1.0;
    p.Q = 0.0;
    p.Qbar = 1.0;
    p.S = 1.0;
    p.R = 1.0;
    p.QT = 1.0;
    p.QbarT = 0.0;
    auto m = make_lq(p);
    std::vector<Var> x{Var(1.0)}, a{Var(2.0)};
    EXPECT_DOUBLE_EQ(m.running_cost(0.0, x, stats_of(1.0), a, {}).value(), 4.0);
    std::vector<Var> b(1);
    m.drift(0.0, x, stats_of(1.0), a, {}, b);
    EXPECT_DOUBLE_EQ(b[0].value(), 0.5 + 2.0);
}

TEST(Model, DecoupledLqReducesToControlDrift) {
    LqParams p;
    p.A = p.Abar = p.S = p.Q = p.Qbar = p.QbarT = p.ST = 0.0;
    p.B = p.R = p.QT = 1.0;
    auto m = make_lq(p);
    std::vector<Var> x{Var(3.0)}, a{Var(-0.5)}, b(1);
    m.drift(0.0, x, stats_of(10.0), a, {}, b);
    EXPECT_EQ(b[0].value(), -0.5);
    EXPECT_DOUBLE_EQ(m.running_cost(0.0, x, stats_of(10.0), a, {}).value(), 0.25);
    EXPECT_DOUBLE_EQ(m.terminal_cost(x, stats_of(10.0), {}).value(), 9.0);
}

TEST(Model, LqRejectsNonPositiveR) {
    LqParams p;
    p.R = 0.0;
    EXPECT_THROW(make_lq(p), std::invalid_argument);
    p.R = 1.0;
    p.sigma = -0.1;
    EXPECT_THROW(make_lq(p), std::invalid_argument);
}

TEST(Model, MinLqgTerminal) {
    EXPECT_DOUBLE_EQ(minlqg_terminal(1.0, 0.25, 0.75).value(), 0.25);
    EXPECT_DOUBLE_EQ(minlqg_terminal(0.5, 0.25, 0.75).value(), 0.25);
    EXPECT_DOUBLE_EQ(minlqg_terminal(0.25, 0.25, 0.75).value(), 0.0);
    EXPECT_DOUBLE_EQ(minlqg_terminal(-1.0, 0.25, 0.75).value(), 1.25);
    // kink: both branches equal at the midpoint
    EXPECT_DOUBLE_EQ(std::fabs(0.5 - 0.25), std::fabs(0.5 - 0.75));
    MinLqgParams bad;
    bad.xi1 = 0.75;
    bad.xi2 = 0.75;
    EXPECT_THROW(make_minlqg(bad), std::invalid_argument);
}

TEST(Model, MinLqgTerminalIsOneLipschitz) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < 2000; ++i) {
        const double x = u(rng), y = u(rng);
        const double gx = minlqg_terminal(x, 0.25, 0.75).value(), gy = minlqg_terminal(y, 0.25, 0.75).value();
        EXPECT_LE(std::fabs(gx - gy), std::fabs(x - y) + 1e-12);
    }
}

TEST(Model, SincosPreset) {
    auto s = make_sincos_fbsde(0.7, 1.0, 0.5);
    EXPECT_DOUBLE_EQ(eval_drift(s, 0.0, 3.0, -2.0, 0.0), 0.7);
    EXPECT_DOUBLE_EQ(eval_terminal(s, std::numbers::pi / 2, 0.0), 1.0);
    EXPECT_EQ(eval_driver(s, 0.1, 1.0, 2.0, 3.0, 4.0), 0.0);
    auto s0 = make_sincos_fbsde(0.0, 1.0, 0.5);
    EXPECT_EQ(eval_drift(s0, 0.0, 1.0, 1.0, 5.0), 0.0);
}

TEST(Model, AtanPreset) {
    auto s = make_atan_mfg(1.0, 1.0, 1.0);
    EXPECT_TRUE(s.is_game);
    EXPECT_EQ(eval_driver(s, 0.0, 5.0, 0.0, 1.0, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(eval_driver(s, 0.0, 5.0, 1.0, 1.0, 1.0), -std::numbers::pi / 4);
    EXPECT_DOUBLE_EQ(eval_terminal(s, 1.0, 0.0), std::numbers::pi / 4);
    EXPECT_DOUBLE_EQ(eval_drift(s, 0.0, 0.0, 0.0, 2.0), -2.0);
    EXPECT_EQ(eval_drift(make_atan_mfg(0.0, 1.0, 1.0), 0.0, 0.0, 0.0, 2.0), 0.0);
}

TEST(Model, CommonNoiseLq) {
    CommonNoiseLqParams p;
    auto m = make_common_noise_lq(p);
    EXPECT_EQ(m.common_noise.kind, CommonNoiseKind::two_point_jump);
    EXPECT_DOUBLE_EQ(m.common_noise.magnitude, 1.5);
    EXPECT_DOUBLE_EQ(m.common_noise.jump_time, 0.5);
    EXPECT_EQ(m.control_input_dim(), 3u);
    std::vector<Var> x{Var(1.0)};
    // target revealed at +1.5, conditional mean 0.5
    EXPECT_DOUBLE_EQ(m.terminal_cost(x, stats_of(0.5), CommonNoiseState{1.5, 0.0}).value(), 0.25 + 0.25);
    p.KT = 0.0;
    auto m0 = make_common_noise_lq(p);
    EXPECT_DOUBLE_EQ(m0.terminal_cost(x, stats_of(0.5), CommonNoiseState{-1.5, 0.0}).value(), 6.25);
}

TEST(Model, CommonNoiseSpecValidation) {
    EXPECT_THROW(CommonNoiseSpec::correlated_brownian(1.5).validate(1.0), std::invalid_argument);
    EXPECT_THROW(CommonNoiseSpec::two_point_jump(1.0, 1.0).validate(1.0), std::invalid_argument);
    EXPECT_NO_THROW(CommonNoiseSpec::two_point_jump(0.5, 1.0).validate(1.0));
}

TEST(Model, SystemicRisk) {
    SystemicRiskParams p;
    p.a = p.q = p.eps = p.c = 0.0;
    p.rho = 0.0;
    auto s = make_systemic_risk(p);
    EXPECT_EQ(s.common_noise.kind, CommonNoiseKind::none);
    EXPECT_TRUE(s.warnings.empty());
    EXPECT_EQ(eval_driver(s, 0.0, 1.0, 0.3, 0.0, 0.0), 0.0);
    EXPECT_EQ(eval_terminal(s, 1.0, 0.3), 0.0);
    EXPECT_EQ(systemic_risk_hat_alpha(p, 1.0, 0.3, 0.0), 0.0);

    SystemicRiskParams r;
    r.q = 0.8;
    r.eps = 2.0;
    const double x = 0.3, mbar = 1.1, d = mbar - x;
    EXPECT_NEAR(systemic_risk_running_cost(r, r.q * d, x, mbar), -(r.q * r.q / 2) * d * d + (r.eps / 2) * d * d,
                1e-14);

    SystemicRiskParams w;
    w.q = 2.0;
    w.eps = 1.0;
    EXPECT_FALSE(make_systemic_risk(w).warnings.empty());
    auto sc = make_systemic_risk(SystemicRiskParams{});
    EXPECT_EQ(sc.common_noise.kind, CommonNoiseKind::correlated_brownian);
    EXPECT_EQ(sc.noise_dim(), 2u);
}

TEST(Model, HatAlphaLq) {
    LqParams p;
    p.B = 1.0;
    p.R = 1.0;
    auto m = make_lq(p);
    const std::vector<double> x{0.0}, mu{0.0};
    EXPECT_DOUBLE_EQ(hat_alpha_lq(m, 0.0, x, mu, std::vector<double>{2.0})[0], -1.0);
    EXPECT_EQ(hat_alpha_lq(m, 0.0, x, mu, std::vector<double>{0.0})[0], 0.0);
    p.B = 2.0;
    auto m2 = make_lq(p);
    EXPECT_DOUBLE_EQ(hat_alpha_lq(m2, 0.0, x, mu, std::vector<double>{1.0})[0], -1.0);

    ModelSpec bare = m;
    bare.quadratic_control.reset();
    EXPECT_THROW(hat_alpha_lq(bare, 0.0, x, mu, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Model, HatAlphaFirstOrderCondition) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        LqParams p;
        p.B = u(rng);
        p.R = 0.1 + std::fabs(u(rng));
        auto m = make_lq(p);
        const double y = u(rng);
        const double a = hat_alpha_lq(m, 0.0, std::vector<double>{0.0}, std::vector<double>{0.0},
                                      std::vector<double>{y})[0];
        auto h = [&](double al) { return p.B * al * y + p.R * al * al; };
        const double step = 0.5;  // exact for a quadratic; large step keeps round-off small
        EXPECT_NEAR((h(a + step) - h(a - step)) / (2 * step), 0.0, 1e-12);
    }
}

TEST(Model, PresetsAreFiniteOnRandomInputs) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    std::vector<ModelSpec> models{make_lq(LqParams{}), make_minlqg(MinLqgParams{}),
                                  make_common_noise_lq(CommonNoiseLqParams{})};
    for (const auto& m : models) {
        for (int i = 0; i < 200; ++i) {
            std::vector<Var> x{Var(u(rng))}, a{Var(u(rng))}, b(1), sig(m.dim_x * m.noise_dim());
            const CommonNoiseState cn{u(rng), u(rng)};
            const auto mu = stats_of(u(rng));
            m.drift(u(rng), x, mu, a, cn, b);
            m.vol(0.0, x, mu, cn, sig);
            EXPECT_TRUE(std::isfinite(b[0].value()));
            EXPECT_TRUE(std::isfinite(sig[0].value()));
            EXPECT_TRUE(std::isfinite(m.running_cost(0.0, x, mu, a, cn).value()));
            EXPECT_TRUE(std::isfinite(m.terminal_cost(x, mu, cn).value()));
        }
    }
    std::vector<FbsdeSpec> specs{make_sincos_fbsde(1.0, 1.0, 0.5), make_atan_mfg(1.0, 1.0, 1.0),
                                 make_systemic_risk(SystemicRiskParams{}), make_minlqg_fbsde(MinLqgParams{}),
                                 make_lq_fbsde(LqParams{})};
    for (const auto& s : specs) {
        for (int i = 0; i < 200; ++i) {
            const double x = u(rng), mb = u(rng), y = u(rng);
            EXPECT_TRUE(std::isfinite(eval_drift(s, 0.5, x, mb, y)));
            EXPECT_TRUE(std::isfinite(eval_driver(s, 0.5, x, mb, y, u(rng))));
            EXPECT_TRUE(std::isfinite(eval_terminal(s, x, mb)));
        }
    }
}

TEST(Model, MeasureStatsFromPoints) {
    std::vector<Var> pts{Var(1.0), Var(3.0)};
    auto s = MeasureStats::from_points(pts, 2, 1);
    EXPECT_DOUBLE_EQ(s.mean[0].value(), 2.0);
    EXPECT_DOUBLE_EQ(s.second_moment.value(), 5.0);
    EXPECT_EQ(s.raw_points.size(), 2u);
    EXPECT_GE(s.second_moment.value(), s.mean[0].value() * s.mean[0].value());
}

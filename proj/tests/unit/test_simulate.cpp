#include "mfnn/simulate.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace mfnn;

namespace {

ModelSpec toy_model(double drift_const, double sigma, bool terminal_identity) {
    ModelSpec m;
    m.name = "toy";
    m.drift = [drift_const](double, VarSpan, const MeasureStats&, VarSpan, const CommonNoiseState&, VarOut out) {
        out[0] = drift_const;
    };
    m.vol = [sigma](double, VarSpan, const MeasureStats&, const CommonNoiseState&, VarOut out) { out[0] = sigma; };
    m.running_cost = [](double, VarSpan, const MeasureStats&, VarSpan, const CommonNoiseState&) { return Var(0.0); };
    m.terminal_cost = [terminal_identity](VarSpan x, const MeasureStats&, const CommonNoiseState&) {
        return terminal_identity ? x[0] : Var(0.0);
    };
    m.init_sampler = [](Rng&, std::span<double> out) { out[0] = 2.0; };
    return m;
}

ControlFn zero_control() {
    return [](double, VarSpan, const MeasureStats&, const CommonNoiseState&, VarOut a) { a[0] = Var(0.0); };
}

ControlFn linear_control(double k) {
    return [k](double, VarSpan x, const MeasureStats&, const CommonNoiseState&, VarOut a) { a[0] = -k * x[0]; };
}

double exact_w2_1d(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

}  // namespace

TEST(Simulate, TimeGrid) {
    auto g = TimeGrid::make(1.0, 3);
    EXPECT_NEAR(g.dt * 3, 1.0, 1e-12);
    EXPECT_THROW(TimeGrid::make(1.0, 0), std::invalid_argument);
}

TEST(Simulate, NoiseIsDeterministic) {
    auto g = TimeGrid::make(1.0, 10);
    auto a = sample_noise(g, 50, 1, CommonNoiseSpec::none(), 7);
    auto b = sample_noise(g, 50, 1, CommonNoiseSpec::none(), 7);
    EXPECT_EQ(a.increments, b.increments);
    EXPECT_TRUE(a.common_path.empty());
    auto c = sample_noise(g, 50, 1, CommonNoiseSpec::none(), 8);
    EXPECT_NE(a.increments, c.increments);
}

TEST(Simulate, IncrementVarianceIsDt) {
    auto g = TimeGrid::make(0.5, 1);
    auto b = sample_noise(g, 100000, 1, CommonNoiseSpec::none(), 3);
    double s = 0.0, s2 = 0.0;
    for (double v : b.increments) {
        s += v;
        s2 += v * v;
    }
    const double n = static_cast<double>(b.increments.size());
    const double var = s2 / n - (s / n) * (s / n);
    EXPECT_GE(var, 0.9 * g.dt);
    EXPECT_LE(var, 1.1 * g.dt);
}

TEST(Simulate, JumpCommonNoise) {
    auto g = TimeGrid::make(1.0, 10);
    int plus = 0;
    for (std::uint64_t s = 0; s < 400; ++s) {
        auto b = sample_noise(g, 2, 1, CommonNoiseSpec::two_point_jump(0.5, 1.5), s);
        ASSERT_EQ(b.common_path.size(), 11u);
        for (std::size_t n = 0; n < 5; ++n) EXPECT_EQ(b.common_state(n).level, 0.0);
        const double v = b.jump_value();
        EXPECT_TRUE(v == 1.5 || v == -1.5);
        for (std::size_t n = 5; n <= 10; ++n) EXPECT_EQ(b.common_state(n).level, v);
        plus += v > 0;
    }
    EXPECT_GT(plus, 150);
    EXPECT_LT(plus, 250);
}

TEST(Simulate, CoarsenSumsIncrements) {
    auto g = TimeGrid::make(1.0, 8);
    auto fine = sample_noise(g, 3, 1, CommonNoiseSpec::correlated_brownian(0.5), 1);
    auto c = coarsen(fine, 4);
    EXPECT_EQ(c.n_steps, 2u);
    EXPECT_DOUBLE_EQ(c.dt, 0.5);
    EXPECT_DOUBLE_EQ(c.dw(1, 2, 0), fine.dw(4, 2, 0) + fine.dw(5, 2, 0) + fine.dw(6, 2, 0) + fine.dw(7, 2, 0));
    EXPECT_NEAR(c.common_state(2).brownian, fine.common_state(8).brownian, 1e-15);
    EXPECT_THROW(coarsen(fine, 3), std::invalid_argument);
}

TEST(Simulate, ConstantStateAndIdentityTerminal) {
    auto m = toy_model(0.0, 0.0, true);
    auto g = TimeGrid::make(1.0, 5);
    auto x0 = sample_initial(m, 1, 0);
    auto r = rollout(m, zero_control(), x0, sample_noise(g, 1, 1, {}, 0), g);
    EXPECT_EQ(r.total_cost, 2.0);
    for (std::size_t n = 0; n <= 5; ++n) EXPECT_EQ(r.x(n, 0), 2.0);
}

TEST(Simulate, ConstantDriftReachesXPlusT) {
    auto m = toy_model(1.0, 0.0, false);
    auto g = TimeGrid::make(1.5, 7);
    auto r = rollout(m, zero_control(), sample_initial(m, 3, 0), sample_noise(g, 3, 1, {}, 0), g);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.x(7, i), 2.0 + 1.5, 1e-14);
}

TEST(Simulate, LqZeroControlMatchesRecurrence) {
    LqParams p;
    p.sigma = 0.0;
    p.mu0_std = 0.0;
    p.mu0_mean = 0.8;
    auto m = make_lq(p);
    auto g = TimeGrid::make(1.0, 20);
    auto r = rollout(m, zero_control(), sample_initial(m, 4, 1), sample_noise(g, 4, 1, {}, 1), g);
    // independent scalar recurrence: every particle equals the mean
    double x = 0.8, cost = 0.0;
    for (std::size_t n = 0; n < 20; ++n) {
        cost += g.dt * (p.Q * x * x + p.Qbar * (x - p.S * x) * (x - p.S * x));
        x = x + (p.A + p.Abar) * x * g.dt;
    }
    cost += p.QT * x * x + p.QbarT * (x - p.ST * x) * (x - p.ST * x);
    EXPECT_NEAR(r.total_cost, cost, 1e-12);
    EXPECT_NEAR(r.x(20, 2), x, 1e-13);
}

TEST(Simulate, ObjectiveDecomposition) {
    auto m = make_lq(LqParams{});
    auto g = TimeGrid::make(1.0, 10);
    auto r = rollout(m, linear_control(0.7), sample_initial(m, 64, 5), sample_noise(g, 64, 1, {}, 5), g);
    EXPECT_NEAR(r.total_cost, r.running_cost_sum + r.terminal_cost, 1e-10);
    // recompute from stored trajectories and controls
    double run = 0.0;
    for (std::size_t n = 0; n < 10; ++n) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 64; ++i) mean += r.x(n, i);
        mean /= 64.0;
        double acc = 0.0;
        for (std::size_t i = 0; i < 64; ++i) {
            std::vector<Var> x{Var(r.x(n, i))}, a{Var(r.controls[n * 64 + i])};
            MeasureStats mu;
            mu.mean = {Var(mean)};
            acc += m.running_cost(g.time(n), x, mu, a, {}).value();
        }
        run += g.dt * acc / 64.0;
    }
    EXPECT_NEAR(r.running_cost_sum, run, 1e-10);
}

TEST(Simulate, IndependentParticlesWithoutCoupling) {
    auto m = toy_model(0.3, 0.0, true);
    m.init_sampler = [](Rng& rng, std::span<double> out) { out[0] = std::normal_distribution<double>(0, 1)(rng); };
    auto g = TimeGrid::make(1.0, 6);
    auto x0 = sample_initial(m, 5, 2);
    auto noise = sample_noise(g, 5, 1, {}, 2);
    auto all = rollout(m, linear_control(0.5), x0, noise, g);
    for (std::size_t i = 0; i < 5; ++i) {
        Ensemble one{1, 1, {x0.at(i)}};
        auto r1 = rollout(m, linear_control(0.5), one, sample_noise(g, 1, 1, {}, 2), g);
        for (std::size_t n = 0; n <= 6; ++n) EXPECT_EQ(r1.x(n, 0), all.x(n, i));
    }
}

TEST(Simulate, RolloutIsDeterministic) {
    auto m = make_lq(LqParams{});
    auto g = TimeGrid::make(1.0, 10);
    auto run = [&] {
        return rollout(m, linear_control(0.3), sample_initial(m, 32, 9), sample_noise(g, 32, 1, {}, 9), g);
    };
    auto a = run(), b = run();
    EXPECT_EQ(a.trajectories, b.trajectories);
    EXPECT_EQ(a.total_cost, b.total_cost);
}

TEST(Simulate, DivergenceNamesStepAndParticle) {
    auto m = toy_model(0.0, 0.0, false);
    m.drift = [](double, VarSpan x, const MeasureStats&, VarSpan, const CommonNoiseState&, VarOut out) {
        out[0] = 1e4 * x[0] * x[0];
    };
    auto g = TimeGrid::make(1.0, 10);
    try {
        rollout(m, zero_control(), sample_initial(m, 3, 0), sample_noise(g, 3, 1, {}, 0), g);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.step, 1u);
        EXPECT_EQ(e.particle, 0u);
    }
}

TEST(Simulate, EmpiricalStats) {
    auto s = empirical_stats(Ensemble{2, 1, {1.0, 3.0}});
    EXPECT_DOUBLE_EQ(s.mean[0].value(), 2.0);
    EXPECT_DOUBLE_EQ(s.second_moment.value(), 5.0);
    EXPECT_DOUBLE_EQ(empirical_stats(Ensemble{1, 1, {-0.7}}).mean[0].value(), -0.7);
    InitSampler normal = [](Rng& rng, std::span<double> out) { out[0] = std::normal_distribution<double>(0, 1)(rng); };
    auto big = sample_initial(normal, 10000, 1, 4);
    EXPECT_LT(std::fabs(empirical_stats(big).mean[0].value()), 0.05);
}

TEST(Simulate, W2UpperBound) {
    Ensemble a{3, 1, {0.0, 1.0, 2.0}};
    EXPECT_EQ(w2_upper_bound(a, a), 0.0);
    EXPECT_DOUBLE_EQ(w2_upper_bound(Ensemble{1, 1, {0.0}}, Ensemble{1, 1, {3.0}}), 3.0);
    Ensemble p{2, 1, {0.0, 1.0}}, q{2, 1, {1.0, 0.0}};
    EXPECT_DOUBLE_EQ(w2_upper_bound(p, q), 1.0);
    EXPECT_EQ(exact_w2_1d(p.states, q.states), 0.0);
    EXPECT_THROW(w2_upper_bound(p, a), std::invalid_argument);

    InitSampler normal = [](Rng& rng, std::span<double> out) { out[0] = std::normal_distribution<double>(0, 1)(rng); };
    for (std::uint64_t s = 0; s < 50; ++s) {
        auto x = sample_initial(normal, 40, 1, s), y = sample_initial(normal, 40, 1, s + 1000);
        EXPECT_GE(w2_upper_bound(x, y) + 1e-15, exact_w2_1d(x.states, y.states));
    }
}

TEST(Simulate, StrongErrorDeterministicDrift) {
    auto m = toy_model(0.0, 0.0, false);
    m.drift = [](double, VarSpan x, const MeasureStats&, VarSpan, const CommonNoiseState&, VarOut out) {
        out[0] = -1.3 * x[0];
    };
    auto res = strong_error_experiment(m, zero_control(), TimeGrid::make(1.0, 8), 2, 4, 8, 10, 1);
    EXPECT_GE(res.slope, 1.0);
    EXPECT_THROW(strong_error_experiment(m, zero_control(), TimeGrid::make(1.0, 8), 1, 4, 8, 10, 1),
                 std::invalid_argument);
}

TEST(Simulate, StrongErrorBoundedByDt) {
    // The Euler bound sum_i E|X_n - X(t_n)|^2 <= C N dt: mean-square error shrinks at least linearly.
    auto m = make_lq(LqParams{});
    auto res = strong_error_experiment(m, linear_control(0.8), TimeGrid::make(1.0, 8), 2, 4, 8, 1000, 3);
    ASSERT_EQ(res.dts.size(), 4u);
    EXPECT_GE(res.slope, 0.8);
    for (std::size_t l = 0; l < 4; ++l) EXPECT_LE(res.mses[l] / res.dts[l], res.mses[0] / res.dts[0] * 1.5);
}

TEST(Simulate, CsvOutputs) {
    const auto dir = std::filesystem::temp_directory_path() / "mfnn_sim_test";
    std::filesystem::create_directories(dir);
    const std::vector<double> paths{0.0, 1.0, 0.5, 1.5};
    write_trajectory_csv((dir / "traj.csv").string(), paths, 1, 2, 1, 0.25, 10);
    std::ifstream is(dir / "traj.csv");
    std::string header, row;
    std::getline(is, header);
    EXPECT_EQ(header, "step,time,particle,coordinate,value");
    std::getline(is, row);
    EXPECT_EQ(row, "0,0,0,0,0");

    const std::vector<double> vals{0.1, 0.2, 0.9, 5.0};
    auto h = histogram(vals, 0.0, 1.0, 2, "plus");
    EXPECT_EQ(h.counts, (std::vector<std::size_t>{2, 1}));
    write_histogram_csv((dir / "hist.csv").string(), std::span<const Histogram>(&h, 1));
    std::filesystem::remove_all(dir);
}

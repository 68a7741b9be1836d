#include "mfnn/autodiff.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

using namespace mfnn::ad;

namespace {

// Central finite difference of f at theta in coordinate k.
double fd(const std::function<double(const std::vector<double>&)>& f, std::vector<double> theta, std::size_t k,
          double h) {
    const double t0 = theta[k];
    theta[k] = t0 + h;
    const double up = f(theta);
    theta[k] = t0 - h;
    const double dn = f(theta);
    return (up - dn) / (2.0 * h);
}

// A random expression graph built from a fixed op sequence. Evaluated with
// detached Vars it is a plain numeric function; with parameters it records.
struct RandomGraph {
    std::uint64_t seed;
    std::size_t n_params;
    std::size_t n_ops;

    Var build(std::span<const Var> theta) const {
        std::mt19937_64 rng(seed);
        std::vector<Var> pool(theta.begin(), theta.end());
        std::uniform_int_distribution<int> op(0, 13);
        std::uniform_real_distribution<double> c(-1.0, 1.0);
        for (std::size_t i = 0; i < n_ops; ++i) {
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            const Var a = pool[pick(rng)];
            const Var b = pool[pick(rng)];
            const double k = c(rng);
            Var r;
            switch (op(rng)) {
                case 0: r = a + b; break;
                case 1: r = a - k * b; break;
                case 2: r = a * b; break;
                case 3: r = a / (2.0 + square(b)); break;
                case 4: r = sin(a); break;
                case 5: r = cos(a + k); break;
                case 6: r = tanh(a * b); break;
                case 7: r = sigmoid(a - b); break;
                case 8: r = exp(0.2 * tanh(a)); break;
                case 9: r = sqrt(1.0 + square(a)); break;
                case 10: r = atan(a + b); break;
                case 11: r = powi(0.5 * tanh(a) + 1.5, 3); break;
                case 12: r = log(1.5 + sin(a)); break;
                default: r = affine(k, pool.size() >= 3 ? std::span<const Var>(pool).subspan(0, 3) : theta.subspan(0, 1),
                                    pool.size() >= 3 ? std::span<const Var>(pool).subspan(pool.size() - 3, 3)
                                                     : theta.subspan(0, 1));
                    r = tanh(r);
                    break;
            }
            pool.push_back(r);
        }
        // Reduce the last few nodes so many paths feed the loss.
        const std::size_t tail = std::min<std::size_t>(pool.size(), 16);
        return mean(std::span<const Var>(pool).subspan(pool.size() - tail, tail));
    }

    double value(const std::vector<double>& theta) const {
        std::vector<Var> v(theta.begin(), theta.end());
        return build(v).value();
    }
};

}  // namespace

TEST(Autodiff, ConstantLiftHasZeroGradient) {
    Tape tape;
    Var p = tape.parameter(0, 1.0);
    Var c = tape.lift(3.0);
    Var loss = c * 2.0;
    (void)p;
    const auto g = tape.backward(loss);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_EQ(g[0], 0.0);
}

TEST(Autodiff, ParameterIdentityAndProductRule) {
    Tape tape;
    Var a = tape.parameter(0, 2.0);
    Var b = tape.parameter(1, 5.0);
    EXPECT_EQ(tape.backward(a)[0], 1.0);
    const auto g = tape.backward(a * b);
    EXPECT_EQ(g[0], 5.0);
    EXPECT_EQ(g[1], 2.0);
}

TEST(Autodiff, SumOfSquares) {
    Tape tape;
    auto th = tape.parameters(std::vector<double>{1.0, 2.0});
    const auto g = tape.backward(square(th[0]) + square(th[1]));
    EXPECT_EQ(g[0], 2.0);
    EXPECT_EQ(g[1], 4.0);
}

TEST(Autodiff, ElementaryPartials) {
    Tape tape;
    Var x0 = tape.parameter(0, 0.0);
    EXPECT_DOUBLE_EQ(tape.backward(sin(x0))[0], 1.0);
    tape.clear();
    Var xm = tape.parameter(0, -1.0);
    EXPECT_EQ(tape.backward(relu(xm))[0], 0.0);
    tape.clear();
    Var x1 = tape.parameter(0, 1.0);
    EXPECT_DOUBLE_EQ(tape.backward(atan(x1))[0], 0.5);
}

TEST(Autodiff, ReluAtZeroAndTiesRouteToFirstArgument) {
    Tape tape;
    Var a = tape.parameter(0, 0.0);
    EXPECT_EQ(tape.backward(relu(a))[0], 0.0);
    tape.clear();
    Var x = tape.parameter(0, 1.0);
    Var y = tape.parameter(1, 1.0);
    auto gmin = tape.backward(min(x, y));
    EXPECT_EQ(gmin[0], 1.0);
    EXPECT_EQ(gmin[1], 0.0);
    auto gmax = tape.backward(max(y, x));
    EXPECT_EQ(gmax[0], 0.0);
    EXPECT_EQ(gmax[1], 1.0);
}

TEST(Autodiff, DivisionByZeroRaises) {
    Tape tape;
    Var a = tape.parameter(0, 1.0);
    EXPECT_THROW(a / 0.0, NonFiniteError);
    EXPECT_THROW(Var(1.0) / Var(0.0), NonFiniteError);
    EXPECT_THROW(sqrt(Var(-1.0)), NonFiniteError);
}

TEST(Autodiff, NonScalarLossRejected) {
    Tape tape;
    auto th = tape.parameters(std::vector<double>{1.0, 2.0});
    EXPECT_THROW(tape.backward(std::span<const Var>(th)), std::invalid_argument);
    EXPECT_NO_THROW(tape.backward(std::span<const Var>(th).subspan(0, 1)));
}

TEST(Autodiff, MixedTapesRejected) {
    Tape t1, t2;
    Var a = t1.parameter(0, 1.0);
    Var b = t2.parameter(0, 1.0);
    EXPECT_THROW(a + b, std::logic_error);
}

TEST(Autodiff, BackwardIsDeterministic) {
    RandomGraph g{7, 5, 300};
    Tape tape;
    auto th = tape.parameters(std::vector<double>{0.1, -0.3, 0.7, 0.2, -0.9});
    Var loss = g.build(th);
    EXPECT_EQ(tape.backward(loss), tape.backward(loss));
}

TEST(Autodiff, DetachedAndRecordedValuesAgree) {
    RandomGraph g{11, 4, 500};
    const std::vector<double> theta{0.3, -0.2, 0.5, 1.1};
    Tape tape;
    Var rec = g.build(tape.parameters(theta));
    EXPECT_EQ(rec.value(), g.value(theta));
}

TEST(Autodiff, RandomGraphsMatchFiniteDifferences) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::uint64_t s = 0; s < 20; ++s) {
        RandomGraph g{s, 4, 200 + 40 * s};
        std::vector<double> theta(4);
        for (double& v : theta) v = u(rng);
        Tape tape;
        const auto grad = tape.backward(g.build(tape.parameters(theta)));
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double ref = fd([&](const std::vector<double>& t) { return g.value(t); }, theta, k, 1e-5);
            EXPECT_NEAR(grad[k], ref, 1e-6 + 1e-5 * std::fabs(ref)) << "graph " << s << " coord " << k;
        }
    }
}

TEST(Autodiff, Linearity) {
    RandomGraph g1{3, 3, 150}, g2{4, 3, 150};
    const std::vector<double> theta{0.4, -0.6, 0.25};
    const double a = 1.7, b = -0.4;
    Tape tape;
    auto th = tape.parameters(theta);
    Var l1 = g1.build(th), l2 = g2.build(th);
    const auto d1 = tape.backward(l1), d2 = tape.backward(l2);
    const auto d = tape.backward(a * l1 + b * l2);
    for (std::size_t k = 0; k < theta.size(); ++k) EXPECT_NEAR(d[k], a * d1[k] + b * d2[k], 1e-12);
}

TEST(Autodiff, TapeGrowthIsLinear) {
    Tape tape;
    Var x = tape.parameter(0, 0.5);
    const std::size_t base = tape.size();
    for (int i = 0; i < 1000; ++i) x = x * 0.999 + 0.001;
    EXPECT_EQ(tape.size() - base, 2000u);
}

TEST(Autodiff, MeanRecordsOneParentPerTerm) {
    Tape tape;
    auto th = tape.parameters(std::vector<double>{1.0, 2.0, 3.0, 4.0});
    const std::size_t edges = tape.n_edges();
    Var m = mean(th);
    EXPECT_EQ(tape.n_edges() - edges, 4u);
    EXPECT_DOUBLE_EQ(m.value(), 2.5);
    for (double gk : tape.backward(m)) EXPECT_DOUBLE_EQ(gk, 0.25);
}

TEST(Autodiff, PowiNegativeExponent) {
    Tape tape;
    Var x = tape.parameter(0, 2.0);
    Var y = powi(x, -2);
    EXPECT_DOUBLE_EQ(y.value(), 0.25);
    EXPECT_DOUBLE_EQ(tape.backward(y)[0], -0.25);
}

#include "mfnn/solver_fbsde.hpp"

#include "mfnn/csv.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

namespace mfnn {

void FbsdeTrainConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("train_fbsde: iterations must be >= 1");
    if (batch < 1) throw std::invalid_argument("train_fbsde: batch must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("train_fbsde: eval_every must be >= 1");
    if (eval_batch < 1) throw std::invalid_argument("train_fbsde: eval_batch must be >= 1");
    if (moving_window < 1) throw std::invalid_argument("train_fbsde: moving_window must be >= 1");
    grid.validate();
    lr.validate();
}

std::uint64_t FbsdeTrainConfig::held_out_seed() const {
    return eval_seed ? *eval_seed : stream_seed(seed, 0xE7A1ULL);
}

std::uint64_t FbsdeTrainConfig::sample_seed(std::size_t m) const { return stream_seed(seed, 0x1000ULL + m); }

FbsdeNets init_fbsde_nets(const FbsdeSpec& spec, const FbsdeTrainConfig& config) {
    const auto y0_arch = nn::Architecture::mlp(spec.dim_x, config.y0_hidden, spec.dim_y, config.activation);
    const auto z_arch =
        nn::Architecture::mlp(1 + spec.dim_x, config.z_hidden, spec.dim_y * spec.noise_dim(), config.activation);
    return FbsdeNets{nn::init(y0_arch, stream_seed(config.seed, 0), config.init),
                     nn::init(z_arch, stream_seed(config.seed, 0x21), config.init)};
}

namespace {

void check_nets(const FbsdeSpec& spec, const nn::Architecture& y0, const nn::Architecture& z) {
    if (y0.input_dim() != spec.dim_x || y0.output_dim() != spec.dim_y)
        throw std::invalid_argument("y0 network must map dim_x -> dim_y");
    if (z.input_dim() != 1 + spec.dim_x || z.output_dim() != spec.dim_y * spec.noise_dim())
        throw std::invalid_argument("z network must map (t, x) -> dim_y x noise_dim");
}

std::string divergence_text(std::size_t step, std::size_t i, const std::string& what) {
    std::ostringstream os;
    os << "divergence at step " << step << ", particle " << i << ": " << what;
    return os.str();
}

Var checked(const Var& v, std::size_t step, std::size_t i, const char* which) {
    if (!(std::fabs(v.value()) <= kDivergenceBound))
        throw DivergenceError(step, i, divergence_text(step, i, std::string(which) + " exceeds 1e8"));
    return v;
}

Sample spec_sample(const FbsdeSpec& spec, const TimeGrid& grid, std::size_t n, std::uint64_t seed) {
    return draw_sample(spec.init_sampler, spec.dim_x, spec.dim_w, spec.common_noise, grid, n, seed);
}

}  // namespace

FbsdeRollout fbsde_rollout(const FbsdeSpec& spec, const nn::Architecture& y0_arch, std::span<const Var> y0_theta,
                           const nn::Architecture& z_arch, std::span<const Var> z_theta, const Ensemble& initial,
                           const NoiseBundle& noise, const TimeGrid& grid) {
    spec.validate();
    initial.validate();
    grid.validate();
    check_nets(spec, y0_arch, z_arch);
    if (y0_theta.size() != y0_arch.n_params() || z_theta.size() != z_arch.n_params())
        throw std::invalid_argument("fbsde_rollout: parameter vector length does not match the network");
    if (initial.dim != spec.dim_x) throw std::invalid_argument("fbsde_rollout: ensemble dimension != dim_x");
    const std::size_t N = initial.n_particles, dx = spec.dim_x, dy = spec.dim_y, dw = spec.dim_w;
    const std::size_t m = spec.noise_dim();
    if (noise.n_particles != N || noise.n_steps != grid.n_steps || noise.dim_w != dw ||
        std::fabs(noise.dt - grid.dt) > 1e-15 * (1.0 + grid.dt))
        throw std::invalid_argument("fbsde_rollout: noise bundle does not match the grid / ensemble");
    const bool common_bm = spec.common_noise.kind == CommonNoiseKind::correlated_brownian;
    const double dt = grid.dt;

    FbsdeRollout r;
    r.n_steps = grid.n_steps;
    r.n_particles = N;
    r.dim_x = dx;
    r.dim_y = dy;
    r.X.resize((grid.n_steps + 1) * N * dx);
    r.Y.resize((grid.n_steps + 1) * N * dy);
    r.mismatch.resize(N * dy);

    std::vector<Var> x(initial.states.begin(), initial.states.end()), y(N * dy);
    std::vector<Var> xn(N * dx), yn(N * dy), b(dx), sig(dx * m), f(dy), zin(1 + dx), g(dy);
    std::copy(initial.states.begin(), initial.states.end(), r.X.begin());
    for (std::size_t i = 0; i < N; ++i) {
        try {
            const auto out = nn::forward(y0_arch, y0_theta, VarSpan(x.data() + i * dx, dx));
            for (std::size_t k = 0; k < dy; ++k) {
                y[i * dy + k] = checked(out[k], 0, i, "Y");
                r.Y[i * dy + k] = out[k].value();
            }
        } catch (const ad::NonFiniteError& e) {
            throw DivergenceError(0, i, divergence_text(0, i, e.what()));
        }
    }

    CommonNoiseState cn = noise.common_state(0);
    for (std::size_t n = 0; n < grid.n_steps; ++n) {
        const double t = grid.time(n);
        const MeasureStats mu_x = MeasureStats::from_points(x, N, dx);
        const MeasureStats mu_y = MeasureStats::from_points(y, N, dy);
        const double dw0 = noise.common_increment(n);
        for (std::size_t i = 0; i < N; ++i) {
            const VarSpan xi(x.data() + i * dx, dx), yi(y.data() + i * dy, dy);
            try {
                spec.drift(t, xi, mu_x, yi, mu_y, cn, b);
                std::fill(sig.begin(), sig.end(), Var(0.0));
                spec.vol(t, xi, mu_x, cn, sig);
                zin[0] = Var(t);
                std::copy(xi.begin(), xi.end(), zin.begin() + 1);
                const auto z = nn::forward(z_arch, z_theta, zin);
                std::fill(f.begin(), f.end(), Var(0.0));
                spec.driver(t, xi, mu_x, yi, mu_y, spec.driver_uses_z ? VarSpan(z) : VarSpan(), cn, f);
                for (std::size_t k = 0; k < dx; ++k) {
                    Var acc = xi[k] + b[k] * dt;
                    for (std::size_t j = 0; j < dw; ++j) acc = acc + sig[k * m + j] * noise.dw(n, i, j);
                    if (common_bm) acc = acc + sig[k * m + dw] * dw0;
                    xn[i * dx + k] = checked(acc, n + 1, i, "X");
                    r.X[((n + 1) * N + i) * dx + k] = acc.value();
                }
                for (std::size_t k = 0; k < dy; ++k) {
                    Var acc = yi[k] - f[k] * dt;
                    for (std::size_t j = 0; j < dw; ++j) acc = acc + z[k * m + j] * noise.dw(n, i, j);
                    if (common_bm) acc = acc + z[k * m + dw] * dw0;
                    yn[i * dy + k] = checked(acc, n + 1, i, "Y");
                    r.Y[((n + 1) * N + i) * dy + k] = acc.value();
                }
            } catch (const ad::NonFiniteError& e) {
                throw DivergenceError(n + 1, i, divergence_text(n + 1, i, e.what()));
            }
        }
        x.swap(xn);
        y.swap(yn);
        if (common_bm) cn.brownian += dw0;
        else cn = noise.common_state(n + 1);
    }

    const MeasureStats mu_T = MeasureStats::from_points(x, N, dx);
    std::vector<Var> sq(N);
    for (std::size_t i = 0; i < N; ++i) {
        try {
            spec.terminal(VarSpan(x.data() + i * dx, dx), mu_T, cn, g);
            Var acc(0.0);
            for (std::size_t k = 0; k < dy; ++k) {
                const Var d = y[i * dy + k] - g[k];
                r.mismatch[i * dy + k] = d.value();
                acc = acc + d * d;
            }
            sq[i] = acc;
        } catch (const ad::NonFiniteError& e) {
            throw DivergenceError(grid.n_steps, i, divergence_text(grid.n_steps, i, e.what()));
        }
    }
    r.loss = ad::mean(sq);
    r.loss_value = r.loss.value();
    return r;
}

FbsdeRollout fbsde_rollout(const FbsdeSpec& spec, const FbsdeNets& nets, const Ensemble& initial,
                           const NoiseBundle& noise, const TimeGrid& grid) {
    const std::vector<Var> a(nets.y0.theta.begin(), nets.y0.theta.end());
    const std::vector<Var> b(nets.z.theta.begin(), nets.z.theta.end());
    return fbsde_rollout(spec, nets.y0.arch, a, nets.z.arch, b, initial, noise, grid);
}

namespace {

FbsdeLossGrad loss_on_tape(ad::Tape& tape, const FbsdeNets& nets, const FbsdeSpec& spec, const Sample& s,
                           const TimeGrid& grid) {
    tape.clear();
    const auto a = tape.parameters(nets.y0.theta, 0);
    const auto b = tape.parameters(nets.z.theta, nets.y0.theta.size());
    const auto r = fbsde_rollout(spec, nets.y0.arch, a, nets.z.arch, b, s.initial, s.noise, grid);
    auto grad = tape.backward(r.loss);
    grad.resize(nets.n_params(), 0.0);
    return FbsdeLossGrad{r.loss_value, std::move(grad)};
}

}  // namespace

FbsdeLossGrad loss_fbsde(const FbsdeNets& nets, const FbsdeSpec& spec, std::uint64_t sample_seed,
                         const FbsdeTrainConfig& config) {
    config.validate();
    ad::Tape tape;
    return loss_on_tape(tape, nets, spec, spec_sample(spec, config.grid, config.batch, sample_seed), config.grid);
}

FbsdeRollout evaluate_fbsde(const FbsdeNets& nets, const FbsdeSpec& spec, const TimeGrid& grid, std::size_t n,
                            std::uint64_t seed) {
    const Sample s = spec_sample(spec, grid, n, seed);
    return fbsde_rollout(spec, nets, s.initial, s.noise, grid);
}

double y0_estimate(const FbsdeNets& nets, std::span<const double> x0) { return nn::forward(nets.y0, x0).at(0); }

FbsdeTrainResult train_fbsde(const FbsdeSpec& spec, const FbsdeTrainConfig& config, const Y0Oracle* oracle) {
    config.validate();
    spec.validate();
    FbsdeTrainResult result{init_fbsde_nets(spec, config), {}, std::nullopt};
    const std::size_t n_y0 = result.nets.y0.theta.size();
    std::vector<double> theta(result.nets.n_params());
    auto pack = [&] {
        std::copy(result.nets.y0.theta.begin(), result.nets.y0.theta.end(), theta.begin());
        std::copy(result.nets.z.theta.begin(), result.nets.z.theta.end(), theta.begin() + static_cast<std::ptrdiff_t>(n_y0));
    };
    auto unpack = [&] {
        std::copy(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(n_y0), result.nets.y0.theta.begin());
        std::copy(theta.begin() + static_cast<std::ptrdiff_t>(n_y0), theta.end(), result.nets.z.theta.begin());
    };
    pack();

    OptimizerState opt(config.lr);
    ad::Tape tape;
    std::deque<double> window;
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t eval_seed = config.held_out_seed();

    auto record = [&](std::size_t it, double sampled) {
        TraceRecord rec;
        rec.iteration = it;
        rec.loss = sampled;
        rec.moving_avg = std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
        const Sample s = spec_sample(spec, config.grid, config.eval_batch, eval_seed);
        rec.eval_loss = fbsde_rollout(spec, result.nets, s.initial, s.noise, config.grid).loss_value;
        if (oracle) {
            double acc = 0.0;
            const std::size_t dx = spec.dim_x;
            for (std::size_t i = 0; i < s.initial.n_particles; ++i) {
                const std::span<const double> xi(s.initial.states.data() + i * dx, dx);
                const double d = y0_estimate(result.nets, xi) - (*oracle)(xi);
                acc += d * d;
            }
            rec.l2_error = std::sqrt(acc / static_cast<double>(s.initial.n_particles));
        }
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.trace.records.push_back(rec);
    };
    auto push = [&](double loss) {
        window.push_back(loss);
        if (window.size() > config.moving_window) window.pop_front();
    };

    std::size_t it = 0;
    try {
        for (; it < config.iterations; ++it) {
            const Sample s = spec_sample(spec, config.grid, config.batch, config.sample_seed(it));
            const FbsdeLossGrad lg = loss_on_tape(tape, result.nets, spec, s, config.grid);
            push(lg.loss);
            if (it % config.eval_every == 0) record(it, lg.loss);
            sgd_step(theta, lg.grad, opt);
            unpack();
        }
        const Sample s = spec_sample(spec, config.grid, config.batch, config.sample_seed(it));
        const double loss = fbsde_rollout(spec, result.nets, s.initial, s.noise, config.grid).loss_value;
        push(loss);
        record(it, loss);
    } catch (const std::exception& e) {
        std::ostringstream os;
        os << "training aborted at iteration " << it << ": " << e.what();
        result.failure = os.str();
    }
    return result;
}

std::vector<CurvePoint> y0_vs_rho_curve(const std::function<FbsdeSpec(double rho)>& family,
                                        std::span<const double> rhos, const FbsdeTrainConfig& config,
                                        std::size_t threads) {
    std::vector<CurvePoint> curve(rhos.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto solve = [&](std::size_t k) {
        CurvePoint& pt = curve[k];
        pt.rho = rhos[k];
        pt.seed = config.seed;
        pt.y0 = pt.eval_loss = nan;
        try {
            const FbsdeSpec spec = family(rhos[k]);
            if (!spec.initial_point) throw std::invalid_argument("Y0 curve needs a deterministic initial point");
            const auto res = train_fbsde(spec, config);
            if (res.failure) throw std::runtime_error(*res.failure);
            pt.y0 = y0_estimate(res.nets, *spec.initial_point);
            pt.eval_loss = res.trace.records.back().eval_loss;
        } catch (const std::exception& e) {
            pt.error = e.what();
        }
    };
    threads = std::max<std::size_t>(1, std::min(threads, rhos.size()));
    if (threads == 1) {
        for (std::size_t k = 0; k < rhos.size(); ++k) solve(k);
        return curve;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (std::size_t k = next++; k < rhos.size(); k = next++) solve(k);
        });
    for (auto& th : pool) th.join();
    return curve;
}

void write_curve_csv(const std::string& path, std::span<const CurvePoint> curve) {
    csv::Writer w(path, {"rho", "y0_estimate", "eval_loss", "seed"});
    for (const auto& p : curve) w.row(p.rho, p.y0, p.eval_loss, static_cast<std::size_t>(p.seed));
    w.close();
}

void write_fbsde_paths_csv(const std::string& path, const FbsdeRollout& r, double dt, std::size_t max_particles) {
    std::vector<std::string> header{"particle", "step", "time"};
    for (std::size_t k = 0; k < r.dim_x; ++k) header.push_back(r.dim_x == 1 ? "X" : "X_" + std::to_string(k));
    for (std::size_t k = 0; k < r.dim_y; ++k) header.push_back(r.dim_y == 1 ? "Y" : "Y_" + std::to_string(k));
    csv::Writer w(path, header);
    const std::size_t P = std::min(max_particles, r.n_particles);
    for (std::size_t i = 0; i < P; ++i)
        for (std::size_t n = 0; n <= r.n_steps; ++n) {
            w.cell(i).cell(n).cell(static_cast<double>(n) * dt);
            for (std::size_t k = 0; k < r.dim_x; ++k) w.cell(r.x(n, i, k));
            for (std::size_t k = 0; k < r.dim_y; ++k) w.cell(r.y(n, i, k));
            w.end_row();
        }
    w.close();
}

}  // namespace mfnn

#include "mfnn/simulate.hpp"

#include "mfnn/csv.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace mfnn {

TimeGrid TimeGrid::make(double horizon, std::size_t n_steps) {
    TimeGrid g{horizon, n_steps, n_steps > 0 ? horizon / static_cast<double>(n_steps) : 0.0};
    g.validate();
    return g;
}

void TimeGrid::validate() const {
    if (n_steps < 1) throw std::invalid_argument("time grid: n_steps must be >= 1");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("time grid: horizon must be > 0");
    if (std::fabs(dt * static_cast<double>(n_steps) - horizon) > 1e-12 * std::max(1.0, horizon))
        throw std::invalid_argument("time grid: dt * n_steps != horizon");
}

void Ensemble::validate() const {
    if (n_particles < 1) throw std::invalid_argument("ensemble: need at least one particle");
    if (states.size() != n_particles * dim) throw std::invalid_argument("ensemble: state block has wrong size");
    for (double v : states)
        if (!std::isfinite(v)) throw std::invalid_argument("ensemble: non-finite state");
}

Ensemble sample_initial(const InitSampler& sampler, std::size_t n, std::size_t dim, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_initial: need at least one particle");
    Ensemble e{n, dim, std::vector<double>(n * dim)};
    Rng rng(stream_seed(seed, 1));
    for (std::size_t i = 0; i < n; ++i) sampler(rng, std::span<double>(e.states).subspan(i * dim, dim));
    return e;
}

Ensemble sample_initial(const ModelSpec& model, std::size_t n, std::uint64_t seed) {
    return sample_initial(model.init_sampler, n, model.dim_x, seed);
}

CommonNoiseState NoiseBundle::common_state(std::size_t step) const {
    CommonNoiseState s;
    switch (common.kind) {
        case CommonNoiseKind::none: break;
        case CommonNoiseKind::two_point_jump: s.level = common_path[step]; break;
        case CommonNoiseKind::correlated_brownian:
            for (std::size_t n = 0; n < step; ++n) s.brownian += common_path[n];
            break;
    }
    return s;
}

double NoiseBundle::jump_value() const {
    return common.kind == CommonNoiseKind::two_point_jump ? common_path.back() : 0.0;
}

namespace {

std::vector<double> jump_levels(const CommonNoiseSpec& common, double dt, std::size_t n_steps, double value) {
    std::vector<double> levels(n_steps + 1, 0.0);
    // Grid times within round-off of the jump time count as post-jump.
    const double tol = 1e-9 * dt;
    for (std::size_t n = 0; n <= n_steps; ++n)
        if (static_cast<double>(n) * dt >= common.jump_time - tol) levels[n] = value;
    return levels;
}

}  // namespace

NoiseBundle sample_noise(const TimeGrid& grid, std::size_t n, std::size_t dim_w, const CommonNoiseSpec& common,
                         std::uint64_t seed) {
    grid.validate();
    if (n < 1) throw std::invalid_argument("sample_noise: need at least one particle");
    common.validate(grid.horizon);
    NoiseBundle b;
    b.n_steps = grid.n_steps;
    b.n_particles = n;
    b.dim_w = dim_w;
    b.dt = grid.dt;
    b.common = common;
    b.seed = seed;
    b.increments.resize(grid.n_steps * n * dim_w);
    const double sd = std::sqrt(grid.dt);
    Rng rng(stream_seed(seed, 2));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : b.increments) v = sd * normal(rng);

    Rng crng(stream_seed(seed, 3));
    switch (common.kind) {
        case CommonNoiseKind::none: break;
        case CommonNoiseKind::two_point_jump: {
            std::bernoulli_distribution coin(0.5);
            const double value = coin(crng) ? common.magnitude : -common.magnitude;
            b.common_path = jump_levels(common, grid.dt, grid.n_steps, value);
            break;
        }
        case CommonNoiseKind::correlated_brownian:
            b.common_path.resize(grid.n_steps);
            for (double& v : b.common_path) v = sd * normal(crng);
            break;
    }
    return b;
}

void set_jump_value(NoiseBundle& noise, double value) {
    if (noise.common.kind != CommonNoiseKind::two_point_jump)
        throw std::invalid_argument("set_jump_value: bundle has no jump common noise");
    noise.common_path = jump_levels(noise.common, noise.dt, noise.n_steps, value);
}

NoiseBundle coarsen(const NoiseBundle& fine, std::size_t factor) {
    if (factor < 1 || fine.n_steps % factor != 0)
        throw std::invalid_argument("coarsen: factor must divide the number of steps");
    NoiseBundle c;
    c.n_steps = fine.n_steps / factor;
    c.n_particles = fine.n_particles;
    c.dim_w = fine.dim_w;
    c.dt = fine.dt * static_cast<double>(factor);
    c.common = fine.common;
    c.seed = fine.seed;
    c.increments.assign(c.n_steps * c.n_particles * c.dim_w, 0.0);
    for (std::size_t n = 0; n < c.n_steps; ++n)
        for (std::size_t f = 0; f < factor; ++f)
            for (std::size_t i = 0; i < c.n_particles; ++i)
                for (std::size_t k = 0; k < c.dim_w; ++k)
                    c.increments[(n * c.n_particles + i) * c.dim_w + k] += fine.dw(n * factor + f, i, k);
    switch (fine.common.kind) {
        case CommonNoiseKind::none: break;
        case CommonNoiseKind::two_point_jump:
            c.common_path.resize(c.n_steps + 1);
            for (std::size_t n = 0; n <= c.n_steps; ++n) c.common_path[n] = fine.common_path[n * factor];
            break;
        case CommonNoiseKind::correlated_brownian:
            c.common_path.assign(c.n_steps, 0.0);
            for (std::size_t n = 0; n < c.n_steps; ++n)
                for (std::size_t f = 0; f < factor; ++f) c.common_path[n] += fine.common_path[n * factor + f];
            break;
    }
    return c;
}

Sample draw_sample(const InitSampler& sampler, std::size_t dim_x, std::size_t dim_w, const CommonNoiseSpec& common,
                   const TimeGrid& grid, std::size_t n, std::uint64_t seed) {
    return Sample{sample_initial(sampler, n, dim_x, seed), sample_noise(grid, n, dim_w, common, seed)};
}

namespace {

void check_shapes(const ModelSpec& model, const Ensemble& initial, const NoiseBundle& noise, const TimeGrid& grid) {
    grid.validate();
    initial.validate();
    if (initial.dim != model.dim_x) throw std::invalid_argument("rollout: ensemble dimension != dim_x");
    if (initial.n_particles != noise.n_particles)
        throw std::invalid_argument("rollout: ensemble size does not match the noise bundle");
    if (noise.n_steps != grid.n_steps || noise.dim_w != model.dim_w)
        throw std::invalid_argument("rollout: noise bundle shape does not match grid/model");
    if (std::fabs(noise.dt - grid.dt) > 1e-12 * grid.dt) throw std::invalid_argument("rollout: noise dt != grid dt");
    if (noise.common.kind != model.common_noise.kind)
        throw std::invalid_argument("rollout: noise bundle common-noise kind differs from the model's");
}

std::string divergence_message(std::size_t step, std::size_t particle, const char* detail) {
    std::ostringstream os;
    os << "rollout diverged at step " << step << ", particle " << particle << ": " << detail;
    return os.str();
}

}  // namespace

RolloutResult rollout(const ModelSpec& model, const ControlFn& control, const Ensemble& initial,
                      const NoiseBundle& noise, const TimeGrid& grid) {
    check_shapes(model, initial, noise, grid);
    const std::size_t N = initial.n_particles, dx = model.dim_x, da = model.dim_alpha, dw = model.dim_w;
    const std::size_t m = model.noise_dim();
    const bool common_bm = model.common_noise.kind == CommonNoiseKind::correlated_brownian;
    const double dt = grid.dt;

    RolloutResult res;
    res.n_steps = grid.n_steps;
    res.n_particles = N;
    res.dim_x = dx;
    res.dim_alpha = da;
    res.trajectories.resize((grid.n_steps + 1) * N * dx);
    res.controls.resize(grid.n_steps * N * da);
    std::copy(initial.states.begin(), initial.states.end(), res.trajectories.begin());

    std::vector<Var> x(initial.states.begin(), initial.states.end());
    std::vector<Var> xnext(N * dx);
    std::vector<Var> alpha(da), b(dx), sig(dx * m), terms(N);
    std::vector<Var> step_costs;
    step_costs.reserve(grid.n_steps);

    CommonNoiseState cn = noise.common_state(0);
    for (std::size_t n = 0; n < grid.n_steps; ++n) {
        const double t = grid.time(n);
        const MeasureStats mu = MeasureStats::from_points(x, N, dx);
        const double dw0 = noise.common_increment(n);
        for (std::size_t i = 0; i < N; ++i) {
            const VarSpan xi(x.data() + i * dx, dx);
            try {
                control(t, xi, mu, cn, alpha);
                if (model.control_box) nn::clamp_output(std::span<Var>(alpha), *model.control_box);
                for (std::size_t k = 0; k < da; ++k) res.controls[(n * N + i) * da + k] = alpha[k].value();
                model.drift(t, xi, mu, alpha, cn, b);
                std::fill(sig.begin(), sig.end(), Var(0.0));
                model.vol(t, xi, mu, cn, sig);
                terms[i] = model.running_cost(t, xi, mu, alpha, cn);
                for (std::size_t k = 0; k < dx; ++k) {
                    Var acc = xi[k] + b[k] * dt;
                    for (std::size_t j = 0; j < dw; ++j) acc = acc + sig[k * m + j] * noise.dw(n, i, j);
                    if (common_bm) acc = acc + sig[k * m + dw] * dw0;
                    if (!(std::fabs(acc.value()) <= kDivergenceBound))
                        throw DivergenceError(n + 1, i, divergence_message(n + 1, i, "state exceeds 1e8"));
                    xnext[i * dx + k] = acc;
                    res.trajectories[((n + 1) * N + i) * dx + k] = acc.value();
                }
            } catch (const ad::NonFiniteError& e) {
                throw DivergenceError(n + 1, i, divergence_message(n + 1, i, e.what()));
            }
        }
        step_costs.push_back(ad::mean(terms));
        x.swap(xnext);
        if (common_bm) cn.brownian += dw0;
        else cn = noise.common_state(n + 1);
    }

    const MeasureStats mu_T = MeasureStats::from_points(x, N, dx);
    for (std::size_t i = 0; i < N; ++i) {
        try {
            terms[i] = model.terminal_cost(VarSpan(x.data() + i * dx, dx), mu_T, cn);
        } catch (const ad::NonFiniteError& e) {
            throw DivergenceError(grid.n_steps, i, divergence_message(grid.n_steps, i, e.what()));
        }
    }
    const Var terminal = ad::mean(terms);
    const Var running = ad::sum(step_costs) * dt;
    res.loss = running + terminal;
    res.running_cost_sum = running.value();
    res.terminal_cost = terminal.value();
    res.total_cost = res.loss.value();
    return res;
}

MeasureStats empirical_stats(const Ensemble& ensemble) {
    ensemble.validate();
    MeasureStats s;
    const std::size_t N = ensemble.n_particles, d = ensemble.dim;
    double sq = 0.0;
    s.mean.assign(d, Var(0.0));
    for (std::size_t k = 0; k < d; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < N; ++i) acc += ensemble.at(i, k);
        s.mean[k] = acc / static_cast<double>(N);
    }
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k < d; ++k) sq += ensemble.at(i, k) * ensemble.at(i, k);
    s.second_moment = sq / static_cast<double>(N);
    return s;
}

double w2_upper_bound(const Ensemble& a, const Ensemble& b) {
    if (a.n_particles != b.n_particles || a.dim != b.dim)
        throw std::invalid_argument("w2_upper_bound: ensembles differ in size");
    if (a.n_particles == 0) throw std::invalid_argument("w2_upper_bound: empty ensembles");
    double acc = 0.0;
    for (std::size_t j = 0; j < a.states.size(); ++j) {
        const double d = a.states[j] - b.states[j];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.n_particles));
}

double fit_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_slope: need >= 2 paired points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if (sxx == 0.0) throw std::invalid_argument("fit_slope: degenerate abscissae");
    return sxy / sxx;
}

StrongErrorResult strong_error_experiment(const ModelSpec& model, const ControlFn& control, const TimeGrid& coarse,
                                          std::size_t refinement_factor, std::size_t n_levels,
                                          std::size_t reference_factor, std::size_t n_particles, std::uint64_t seed) {
    if (refinement_factor < 2) throw std::invalid_argument("strong_error_experiment: refinement_factor must be >= 2");
    if (n_levels < 2) throw std::invalid_argument("strong_error_experiment: need at least two levels");
    if (reference_factor < 1) throw std::invalid_argument("strong_error_experiment: reference_factor must be >= 1");
    coarse.validate();
    std::size_t finest = coarse.n_steps;
    for (std::size_t l = 1; l < n_levels; ++l) finest *= refinement_factor;
    const TimeGrid ref_grid = TimeGrid::make(coarse.horizon, finest * reference_factor);

    const Ensemble x0 = sample_initial(model, n_particles, seed);
    const NoiseBundle fine = sample_noise(ref_grid, n_particles, model.dim_w, model.common_noise, seed);
    const RolloutResult ref = rollout(model, control, x0, fine, ref_grid);

    StrongErrorResult out;
    out.reference_dt = ref_grid.dt;
    std::size_t steps = coarse.n_steps;
    for (std::size_t l = 0; l < n_levels; ++l, steps *= refinement_factor) {
        const TimeGrid g = TimeGrid::make(coarse.horizon, steps);
        const RolloutResult r = rollout(model, control, x0, coarsen(fine, ref_grid.n_steps / steps), g);
        double acc = 0.0;
        for (std::size_t i = 0; i < n_particles; ++i)
            for (std::size_t k = 0; k < model.dim_x; ++k) {
                const double d = r.x(g.n_steps, i, k) - ref.x(ref_grid.n_steps, i, k);
                acc += d * d;
            }
        out.dts.push_back(g.dt);
        out.mses.push_back(acc / static_cast<double>(n_particles));
    }
    std::vector<double> lx, ly;
    for (std::size_t l = 0; l < n_levels; ++l) {
        lx.push_back(std::log(out.dts[l]));
        ly.push_back(std::log(out.mses[l]));
    }
    out.slope = fit_slope(lx, ly);
    return out;
}

void write_trajectory_csv(const std::string& path, std::span<const double> paths, std::size_t n_steps,
                          std::size_t n_particles, std::size_t dim, double dt, std::size_t max_particles) {
    if (paths.size() != (n_steps + 1) * n_particles * dim)
        throw std::invalid_argument("write_trajectory_csv: path block has wrong size");
    csv::Writer w(path, {"step", "time", "particle", "coordinate", "value"});
    const std::size_t np = std::min(n_particles, max_particles);
    for (std::size_t n = 0; n <= n_steps; ++n)
        for (std::size_t i = 0; i < np; ++i)
            for (std::size_t k = 0; k < dim; ++k)
                w.row(n, static_cast<double>(n) * dt, i, k, paths[(n * n_particles + i) * dim + k]);
    w.close();
}

Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t n_bins, std::string label) {
    if (n_bins < 1 || !(lo < hi)) throw std::invalid_argument("histogram: need n_bins >= 1 and lo < hi");
    Histogram h{std::move(label), std::vector<double>(n_bins + 1), std::vector<std::size_t>(n_bins, 0)};
    const double w = (hi - lo) / static_cast<double>(n_bins);
    for (std::size_t j = 0; j <= n_bins; ++j) h.edges[j] = lo + static_cast<double>(j) * w;
    for (double v : values) {
        if (!(v >= lo && v <= hi)) continue;
        auto j = static_cast<std::size_t>((v - lo) / w);
        h.counts[std::min(j, n_bins - 1)] += 1;
    }
    return h;
}

void write_histogram_csv(const std::string& path, std::span<const Histogram> hists) {
    csv::Writer w(path, {"label", "bin_lo", "bin_hi", "count"});
    for (const auto& h : hists)
        for (std::size_t j = 0; j < h.counts.size(); ++j) w.row(std::string_view(h.label), h.edges[j], h.edges[j + 1], h.counts[j]);
    w.close();
}

}  // namespace mfnn

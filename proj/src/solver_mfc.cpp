#include "mfnn/solver_mfc.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <numeric>
#include <sstream>

namespace mfnn {

void TrainConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("train: iterations must be >= 1");
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
    if (eval_batch < 1) throw std::invalid_argument("train: eval_batch must be >= 1");
    if (moving_window < 1) throw std::invalid_argument("train: moving_window must be >= 1");
    grid.validate();
    lr.validate();
    if (clamp) clamp->validate();
}

std::uint64_t TrainConfig::held_out_seed() const { return eval_seed ? *eval_seed : stream_seed(seed, 0xE7A1ULL); }

std::uint64_t TrainConfig::sample_seed(std::size_t m) const { return stream_seed(seed, 0x1000ULL + m); }

nn::Architecture control_architecture(const ModelSpec& model, const TrainConfig& config) {
    return nn::Architecture::mlp(model.control_input_dim(), config.hidden, model.dim_alpha, config.activation);
}

ControlFn net_control(const nn::Architecture& arch, std::span<const Var> theta, bool with_common_level) {
    return [&arch, theta, with_common_level](double t, VarSpan x, const MeasureStats&, const CommonNoiseState& cn,
                                             VarOut alpha) {
        std::vector<Var> in;
        in.reserve(arch.input_dim());
        in.emplace_back(t);
        in.insert(in.end(), x.begin(), x.end());
        if (with_common_level) in.emplace_back(cn.level);
        const auto out = nn::forward(arch, theta, in);
        std::copy(out.begin(), out.end(), alpha.begin());
    };
}

namespace {

void check_arch(const nn::NetParams& params, const ModelSpec& model) {
    params.validate();
    if (params.arch.input_dim() != model.control_input_dim() || params.arch.output_dim() != model.dim_alpha)
        throw std::invalid_argument("control network shape does not match the model (input " +
                                    std::to_string(model.control_input_dim()) + ", output " +
                                    std::to_string(model.dim_alpha) + ")");
}

ModelSpec with_clamp(const ModelSpec& model, const std::optional<nn::Box>& clamp) {
    if (!clamp) return model;
    ModelSpec m = model;
    m.control_box = clamp;
    return m;
}

LossGrad loss_on_tape(ad::Tape& tape, const nn::NetParams& params, const ModelSpec& model, const Sample& s,
                      const TimeGrid& grid) {
    tape.clear();
    const auto theta = tape.parameters(params.theta);
    const ControlFn control = net_control(params.arch, theta, model.common_noise.has_jump());
    const RolloutResult r = rollout(model, control, s.initial, s.noise, grid);
    return LossGrad{r.total_cost, tape.backward(r.loss)};
}

Sample model_sample(const ModelSpec& model, const TimeGrid& grid, std::size_t n, std::uint64_t seed) {
    return draw_sample(model.init_sampler, model.dim_x, model.dim_w, model.common_noise, grid, n, seed);
}

}  // namespace

LossGrad loss_mfc(const nn::NetParams& params, const ModelSpec& model, std::uint64_t sample_seed,
                  const TrainConfig& config) {
    config.validate();
    check_arch(params, model);
    const ModelSpec m = with_clamp(model, config.clamp);
    ad::Tape tape;
    return loss_on_tape(tape, params, m, model_sample(m, config.grid, config.batch, sample_seed), config.grid);
}

RolloutResult evaluate_control(const nn::NetParams& params, const ModelSpec& model, const TimeGrid& grid,
                               std::size_t n, std::uint64_t seed, std::optional<double> jump_value,
                               const std::optional<nn::Box>& clamp) {
    check_arch(params, model);
    const ModelSpec m = with_clamp(model, clamp);
    Sample s = model_sample(m, grid, n, seed);
    if (jump_value) set_jump_value(s.noise, *jump_value);
    const std::vector<Var> theta(params.theta.begin(), params.theta.end());
    return rollout(m, net_control(params.arch, theta, m.common_noise.has_jump()), s.initial, s.noise, grid);
}

double l2_control_error(const nn::NetParams& params, const ControlOracle& oracle, const ModelSpec& model,
                        const TimeGrid& grid, std::size_t n_eval, std::uint64_t seed) {
    const RolloutResult r = evaluate_control(params, model, grid, n_eval, seed);
    const std::size_t N = r.n_particles, dx = r.dim_x, da = r.dim_alpha;
    std::vector<double> ref(da);
    double acc = 0.0;
    for (std::size_t n = 0; n < r.n_steps; ++n) {
        double step = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const std::span<const double> x(r.trajectories.data() + (n * N + i) * dx, dx);
            oracle(grid.time(n), x, ref);
            for (std::size_t k = 0; k < da; ++k) {
                const double d = r.controls[(n * N + i) * da + k] - ref[k];
                step += d * d;
            }
        }
        acc += grid.dt * step / static_cast<double>(N);
    }
    return std::sqrt(acc);
}

TrainResult train(const ModelSpec& model, const TrainConfig& config, const ControlOracle* oracle) {
    config.validate();
    return train_from(model, config, nn::init(control_architecture(model, config), stream_seed(config.seed, 0), config.init),
                      oracle);
}

TrainResult train_from(const ModelSpec& model, const TrainConfig& config, nn::NetParams init,
                       const ControlOracle* oracle) {
    config.validate();
    model.validate();
    check_arch(init, model);
    const ModelSpec m = with_clamp(model, config.clamp);
    if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

    TrainResult result{std::move(init), {}, std::nullopt};
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
        rec.eval_loss = evaluate_control(result.params, m, config.grid, config.eval_batch, eval_seed).total_cost;
        if (oracle)
            rec.l2_error = l2_control_error(result.params, *oracle, m, config.grid, config.eval_batch, eval_seed);
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.trace.records.push_back(rec);
        if (!config.checkpoint_dir.empty())
            nn::save_file(result.params,
                          (std::filesystem::path(config.checkpoint_dir) / ("ckpt_" + std::to_string(it) + ".mfnn"))
                              .string());
    };
    auto push = [&](double loss) {
        window.push_back(loss);
        if (window.size() > config.moving_window) window.pop_front();
    };

    std::size_t m_it = 0;
    try {
        for (; m_it < config.iterations; ++m_it) {
            const Sample s = model_sample(m, config.grid, config.batch, config.sample_seed(m_it));
            const LossGrad lg = loss_on_tape(tape, result.params, m, s, config.grid);
            push(lg.loss);
            if (m_it % config.eval_every == 0) record(m_it, lg.loss);
            if (config.grad_tol) {
                double g2 = 0.0;
                for (double g : lg.grad) g2 += g * g;
                if (std::sqrt(g2) < *config.grad_tol) break;
            }
            sgd_step(result.params.theta, lg.grad, opt);
        }
        const std::size_t done = m_it;
        if (result.trace.records.empty() || result.trace.records.back().iteration != done) {
            const Sample s = model_sample(m, config.grid, config.batch, config.sample_seed(done));
            const std::vector<Var> theta(result.params.theta.begin(), result.params.theta.end());
            const double loss =
                rollout(m, net_control(result.params.arch, theta, m.common_noise.has_jump()), s.initial, s.noise,
                        config.grid)
                    .total_cost;
            push(loss);
            record(done, loss);
        }
    } catch (const std::exception& e) {
        std::ostringstream os;
        os << "training aborted at iteration " << m_it << ": " << e.what();
        result.failure = os.str();
    }
    return result;
}

}  // namespace mfnn

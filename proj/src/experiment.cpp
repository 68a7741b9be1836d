#include "mfnn/experiment.hpp"

#include "mfnn/bench.hpp"
#include "mfnn/csv.hpp"
#include "mfnn/solver_fbsde.hpp"
#include "mfnn/solver_mfc.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#ifndef MFNN_VERSION
#define MFNN_VERSION "0.0.0"
#endif

namespace mfnn::experiment {

namespace fs = std::filesystem;

std::string to_string(Method m) {
    switch (m) {
        case Method::mfc: return "mfc";
        case Method::fbsde: return "fbsde";
        case Method::bench_riccati: return "bench-riccati";
        case Method::bench_pde: return "bench-pde";
    }
    return "?";
}

Method method_from_string(const std::string& s) {
    if (s == "mfc") return Method::mfc;
    if (s == "fbsde") return Method::fbsde;
    if (s == "bench-riccati") return Method::bench_riccati;
    if (s == "bench-pde") return Method::bench_pde;
    throw ConfigError("method", "unknown method '" + s + "' (mfc, fbsde, bench-riccati, bench-pde)");
}

const std::vector<PresetInfo>& presets() {
    using M = Method;
    static const std::vector<PresetInfo> v{
        {"lq", "linear-quadratic mean field control", false, {M::mfc, M::fbsde, M::bench_riccati, M::bench_pde}},
        {"minlqg", "min-LQG: quadratic control cost, distance to the nearer of two targets", false, {M::mfc, M::fbsde}},
        {"sincos", "decoupled-at-rho=0 FBSDE with terminal sin(x)", false, {M::fbsde}},
        {"atan-mfg", "mean field game with an atan(E X) interaction", true, {M::fbsde, M::bench_pde}},
        {"cn-lq", "LQ control with a +-c_T common-noise jump at T/2", false, {M::mfc}},
        {"systemic-risk", "systemic-risk mean field game with correlated common noise", true,
         {M::fbsde, M::bench_riccati}},
    };
    return v;
}

const PresetInfo& preset_info(const std::string& name) {
    for (const auto& p : presets())
        if (p.name == name) return p;
    std::string known;
    for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
    throw ConfigError("preset", "unknown preset '" + name + "' (" + known + ")");
}

// ---------------------------------------------------------------------------
// Parameters of each preset.

namespace {

json default_params(const std::string& preset) {
    if (preset == "lq") {
        LqParams p;
        return {{"A", p.A},   {"Abar", p.Abar},   {"B", p.B},     {"Q", p.Q},         {"Qbar", p.Qbar},
                {"R", p.R},   {"S", p.S},         {"QT", p.QT},   {"QbarT", p.QbarT}, {"ST", p.ST},
                {"sigma", p.sigma}, {"mu0_mean", p.mu0_mean}, {"mu0_std", p.mu0_std}, {"horizon", p.horizon}};
    }
    if (preset == "minlqg") {
        MinLqgParams p;
        return {{"xi1", p.xi1},           {"xi2", p.xi2},         {"sigma", p.sigma},
                {"mu0_mean", p.mu0_mean}, {"mu0_std", p.mu0_std}, {"horizon", p.horizon}};
    }
    if (preset == "sincos") return {{"rho", 0.0}, {"sigma", 1.0}, {"x0", 1.0}, {"horizon", 1.0}};
    if (preset == "atan-mfg") return {{"rho", 1.0}, {"sigma", 1.0}, {"x0", 1.0}, {"horizon", 1.0}};
    if (preset == "cn-lq") {
        CommonNoiseLqParams p;
        return {{"cT", p.cT},           {"KT", p.KT},           {"sigma", p.sigma},
                {"mu0_mean", p.mu0_mean}, {"mu0_std", p.mu0_std}, {"horizon", p.horizon}};
    }
    SystemicRiskParams p;
    return {{"a", p.a},         {"q", p.q},         {"eps", p.eps},
            {"c", p.c},         {"rho", p.rho},     {"sigma", p.sigma},
            {"mu0_mean", p.mu0_mean}, {"mu0_std", p.mu0_std}, {"horizon", p.horizon}};
}

double num(const json& params, const char* key) { return params.at(key).get<double>(); }

LqParams lq_params(const json& j) {
    LqParams p;
    p.A = num(j, "A");
    p.Abar = num(j, "Abar");
    p.B = num(j, "B");
    p.Q = num(j, "Q");
    p.Qbar = num(j, "Qbar");
    p.R = num(j, "R");
    p.S = num(j, "S");
    p.QT = num(j, "QT");
    p.QbarT = num(j, "QbarT");
    p.ST = num(j, "ST");
    p.sigma = num(j, "sigma");
    p.mu0_mean = num(j, "mu0_mean");
    p.mu0_std = num(j, "mu0_std");
    p.horizon = num(j, "horizon");
    return p;
}

MinLqgParams minlqg_params(const json& j) {
    MinLqgParams p;
    p.xi1 = num(j, "xi1");
    p.xi2 = num(j, "xi2");
    p.sigma = num(j, "sigma");
    p.mu0_mean = num(j, "mu0_mean");
    p.mu0_std = num(j, "mu0_std");
    p.horizon = num(j, "horizon");
    return p;
}

CommonNoiseLqParams cn_params(const json& j) {
    CommonNoiseLqParams p;
    p.cT = num(j, "cT");
    p.KT = num(j, "KT");
    p.sigma = num(j, "sigma");
    p.mu0_mean = num(j, "mu0_mean");
    p.mu0_std = num(j, "mu0_std");
    p.horizon = num(j, "horizon");
    return p;
}

SystemicRiskParams systemic_params(const json& j) {
    SystemicRiskParams p;
    p.a = num(j, "a");
    p.q = num(j, "q");
    p.eps = num(j, "eps");
    p.c = num(j, "c");
    p.rho = num(j, "rho");
    p.sigma = num(j, "sigma");
    p.mu0_mean = num(j, "mu0_mean");
    p.mu0_std = num(j, "mu0_std");
    p.horizon = num(j, "horizon");
    return p;
}

ModelSpec make_model(const ExperimentConfig& c) {
    if (c.preset == "lq") return make_lq(lq_params(c.params));
    if (c.preset == "minlqg") return make_minlqg(minlqg_params(c.params));
    if (c.preset == "cn-lq") return make_common_noise_lq(cn_params(c.params));
    throw ConfigError("method", "preset '" + c.preset + "' has no control formulation");
}

FbsdeSpec make_fbsde(const ExperimentConfig& c, std::optional<double> rho = std::nullopt) {
    const json& j = c.params;
    if (c.preset == "lq") return make_lq_fbsde(lq_params(j));
    if (c.preset == "minlqg") return make_minlqg_fbsde(minlqg_params(j));
    if (c.preset == "systemic-risk") return make_systemic_risk(systemic_params(j));
    const double r = rho.value_or(num(j, "rho"));
    if (c.preset == "sincos") return make_sincos_fbsde(r, num(j, "sigma"), num(j, "x0"), num(j, "horizon"));
    if (c.preset == "atan-mfg") return make_atan_mfg(r, num(j, "sigma"), num(j, "x0"), num(j, "horizon"));
    throw ConfigError("method", "preset '" + c.preset + "' has no FBSDE formulation");
}

// ---------------------------------------------------------------------------
// Strict JSON reading with field paths.

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void expect_object(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
}

void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : keys) ok = ok || it.key() == k;
        if (!ok) throw ConfigError(join(path, it.key()), "unknown field");
    }
}

double read_double(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path, "must be finite");
    return d;
}

std::uint64_t read_u64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) {
        if (v.get<std::int64_t>() < 0) throw ConfigError(path, "must be non-negative");
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    throw ConfigError(path, "expected a non-negative integer");
}

std::size_t read_size(const json& v, const std::string& path) { return static_cast<std::size_t>(read_u64(v, path)); }

template <class T, class F>
void field(const json& j, const std::string& path, const char* key, T& out, F read) {
    if (j.contains(key)) out = read(j.at(key), join(path, key));
}

void get(const json& j, const std::string& path, const char* key, double& out) { field(j, path, key, out, read_double); }
void get(const json& j, const std::string& path, const char* key, std::size_t& out) { field(j, path, key, out, read_size); }
void get(const json& j, const std::string& path, const char* key, bool& out) {
    field(j, path, key, out, [](const json& v, const std::string& p) {
        if (!v.is_boolean()) throw ConfigError(p, "expected true or false");
        return v.get<bool>();
    });
}
void get(const json& j, const std::string& path, const char* key, std::string& out) {
    field(j, path, key, out, [](const json& v, const std::string& p) {
        if (!v.is_string()) throw ConfigError(p, "expected a string");
        return v.get<std::string>();
    });
}

template <class T, class F>
std::vector<T> read_list(const json& v, const std::string& path, F read) {
    if (!v.is_array()) throw ConfigError(path, "expected an array");
    std::vector<T> out;
    for (std::size_t k = 0; k < v.size(); ++k) out.push_back(read(v[k], path + "[" + std::to_string(k) + "]"));
    return out;
}

LrSchedule parse_lr(const json& j, const std::string& path) {
    expect_object(j, path);
    reject_unknown(j, path, {"kind", "eta", "decay_factor", "decay_every", "beta1", "beta2", "eps"});
    LrSchedule s = LrSchedule::adam(1e-3);
    if (j.contains("kind")) {
        std::string kind;
        get(j, path, "kind", kind);
        try {
            s.kind = lr_kind_from_string(kind);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(join(path, "kind"), e.what());
        }
    }
    get(j, path, "eta", s.eta);
    get(j, path, "decay_factor", s.decay_factor);
    get(j, path, "decay_every", s.decay_every);
    get(j, path, "beta1", s.beta1);
    get(j, path, "beta2", s.beta2);
    get(j, path, "eps", s.eps_adam);
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
    return s;
}

json lr_to_json(const LrSchedule& s) {
    return {{"kind", to_string(s.kind)},     {"eta", s.eta},     {"decay_factor", s.decay_factor},
            {"decay_every", s.decay_every}, {"beta1", s.beta1}, {"beta2", s.beta2},
            {"eps", s.eps_adam}};
}

TrainSection parse_train(const json& j, const std::string& path) {
    expect_object(j, path);
    reject_unknown(j, path,
                   {"iterations", "batch", "n_steps", "lr", "eval_every", "eval_batch", "eval_seed", "hidden",
                    "y0_hidden", "z_hidden", "activation", "clamp", "moving_window", "checkpoints"});
    TrainSection t;
    get(j, path, "iterations", t.iterations);
    get(j, path, "batch", t.batch);
    get(j, path, "n_steps", t.n_steps);
    if (j.contains("lr")) t.lr = parse_lr(j.at("lr"), join(path, "lr"));
    get(j, path, "eval_every", t.eval_every);
    get(j, path, "eval_batch", t.eval_batch);
    if (j.contains("eval_seed")) t.eval_seed = read_u64(j.at("eval_seed"), join(path, "eval_seed"));
    for (auto [key, dst] : {std::pair{"hidden", &t.hidden}, {"y0_hidden", &t.y0_hidden}, {"z_hidden", &t.z_hidden}}) {
        if (!j.contains(key)) continue;
        const std::string p = join(path, key);
        *dst = read_list<std::size_t>(j.at(key), p, read_size);
        for (std::size_t k = 0; k < dst->size(); ++k)
            if ((*dst)[k] == 0) throw ConfigError(p + "[" + std::to_string(k) + "]", "layer width must be positive");
    }
    get(j, path, "activation", t.activation);
    try {
        nn::activation_from_string(t.activation);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(join(path, "activation"), e.what());
    }
    if (j.contains("clamp")) {
        const std::string p = join(path, "clamp");
        const auto v = read_list<double>(j.at("clamp"), p, read_double);
        if (v.size() != 2 || !(v[0] < v[1])) throw ConfigError(p, "expected [lo, hi] with lo < hi");
        t.clamp = std::pair{v[0], v[1]};
    }
    get(j, path, "moving_window", t.moving_window);
    get(j, path, "checkpoints", t.checkpoints);
    if (t.iterations == 0) throw ConfigError(join(path, "iterations"), "must be positive");
    if (t.batch == 0) throw ConfigError(join(path, "batch"), "must be positive");
    if (t.n_steps == 0) throw ConfigError(join(path, "n_steps"), "must be positive");
    if (t.eval_every == 0) throw ConfigError(join(path, "eval_every"), "must be positive");
    if (t.eval_batch == 0) throw ConfigError(join(path, "eval_batch"), "must be positive");
    if (t.moving_window == 0) throw ConfigError(join(path, "moving_window"), "must be positive");
    return t;
}

json train_to_json(const TrainSection& t) {
    json j{{"iterations", t.iterations}, {"batch", t.batch},         {"n_steps", t.n_steps},
           {"lr", lr_to_json(t.lr)},     {"eval_every", t.eval_every}, {"eval_batch", t.eval_batch},
           {"hidden", t.hidden},         {"y0_hidden", t.y0_hidden}, {"z_hidden", t.z_hidden},
           {"activation", t.activation}, {"moving_window", t.moving_window}, {"checkpoints", t.checkpoints}};
    if (t.eval_seed) j["eval_seed"] = *t.eval_seed;
    if (t.clamp) j["clamp"] = {t.clamp->first, t.clamp->second};
    return j;
}

PdeSection parse_pde(const json& j, const std::string& path) {
    expect_object(j, path);
    reject_unknown(j, path, {"n_x", "n_steps", "init_std", "max_iters", "damping", "tol"});
    PdeSection p;
    get(j, path, "n_x", p.n_x);
    get(j, path, "n_steps", p.n_steps);
    get(j, path, "init_std", p.init_std);
    get(j, path, "max_iters", p.max_iters);
    get(j, path, "damping", p.damping);
    get(j, path, "tol", p.tol);
    if (p.n_x < 3) throw ConfigError(join(path, "n_x"), "need at least 3 nodes");
    if (p.n_steps == 0) throw ConfigError(join(path, "n_steps"), "must be positive");
    if (!(p.init_std > 0.0)) throw ConfigError(join(path, "init_std"), "must be positive");
    if (p.max_iters == 0) throw ConfigError(join(path, "max_iters"), "must be positive");
    if (!(p.damping >= 0.0 && p.damping < 1.0)) throw ConfigError(join(path, "damping"), "must lie in [0, 1)");
    if (!(p.tol > 0.0)) throw ConfigError(join(path, "tol"), "must be positive");
    return p;
}

json pde_to_json(const PdeSection& p) {
    return {{"n_x", p.n_x},         {"n_steps", p.n_steps}, {"init_std", p.init_std},
            {"max_iters", p.max_iters}, {"damping", p.damping}, {"tol", p.tol}};
}

OutputSection parse_outputs(const json& j, const std::string& path) {
    expect_object(j, path);
    reject_unknown(j, path, {"trajectory_particles", "histogram_bins", "control_grid", "oracle_refine", "eval_particles"});
    OutputSection o;
    get(j, path, "trajectory_particles", o.trajectory_particles);
    get(j, path, "histogram_bins", o.histogram_bins);
    get(j, path, "control_grid", o.control_grid);
    get(j, path, "oracle_refine", o.oracle_refine);
    get(j, path, "eval_particles", o.eval_particles);
    if (o.histogram_bins == 0) throw ConfigError(join(path, "histogram_bins"), "must be positive");
    if (o.control_grid < 2) throw ConfigError(join(path, "control_grid"), "need at least 2 points");
    if (o.oracle_refine == 0) throw ConfigError(join(path, "oracle_refine"), "must be positive");
    if (o.eval_particles == 0) throw ConfigError(join(path, "eval_particles"), "must be positive");
    return o;
}

json outputs_to_json(const OutputSection& o) {
    return {{"trajectory_particles", o.trajectory_particles}, {"histogram_bins", o.histogram_bins},
            {"control_grid", o.control_grid},                 {"oracle_refine", o.oracle_refine},
            {"eval_particles", o.eval_particles}};
}

bool has(const std::vector<std::string>& v, const std::string& s) { return std::find(v.begin(), v.end(), s) != v.end(); }

// Which oracle comparisons each (preset, method) pair supports.
bool compare_supported(const std::string& target, const std::string& preset, Method m) {
    if (target == "riccati")
        return (preset == "lq" && (m == Method::mfc || m == Method::fbsde || m == Method::bench_pde)) ||
               (preset == "systemic-risk" && m == Method::fbsde);
    if (target == "pde") return preset == "atan-mfg" && m == Method::fbsde;
    if (target == "analytic") return preset == "sincos" && m == Method::fbsde;
    return false;
}

void validate_semantics(const ExperimentConfig& c) {
    const auto& info = preset_info(c.preset);
    if (std::find(info.methods.begin(), info.methods.end(), c.method) == info.methods.end()) {
        if (c.method == Method::mfc && info.is_game)
            throw ConfigError("method", "preset '" + c.preset +
                                            "' is a mean field game; mfc minimizes a social cost and does not apply "
                                            "(use fbsde)");
        std::string allowed;
        for (Method m : info.methods) allowed += (allowed.empty() ? "" : ", ") + to_string(m);
        throw ConfigError("method", "method " + to_string(c.method) + " is not available for preset '" + c.preset +
                                        "' (" + allowed + ")");
    }
    for (std::size_t k = 0; k < c.compare.size(); ++k) {
        const std::string p = "compare[" + std::to_string(k) + "]";
        const auto& t = c.compare[k];
        if (t != "riccati" && t != "pde" && t != "analytic")
            throw ConfigError(p, "unknown comparison '" + t + "' (riccati, pde, analytic)");
        if (!compare_supported(t, c.preset, c.method))
            throw ConfigError(p, "no " + t + " oracle for preset '" + c.preset + "' with method " + to_string(c.method));
    }
    if (!c.rho_list.empty()) {
        const bool ok = (c.preset == "sincos" && c.method == Method::fbsde) ||
                        (c.preset == "atan-mfg" && (c.method == Method::fbsde || c.method == Method::bench_pde));
        if (!ok) throw ConfigError("rho_list", "rho sweeps apply to sincos and atan-mfg only");
    }
    if (has(c.compare, "analytic")) {
        const bool any_zero = c.rho_list.empty() ? num(c.params, "rho") == 0.0
                                                 : std::find(c.rho_list.begin(), c.rho_list.end(), 0.0) !=
                                                       c.rho_list.end();
        if (!any_zero) throw ConfigError("compare", "the closed form holds at rho = 0 only");
    }
    if (c.seeds.empty()) throw ConfigError("seeds", "need at least one seed");
    std::set<std::uint64_t> uniq(c.seeds.begin(), c.seeds.end());
    if (uniq.size() != c.seeds.size()) throw ConfigError("seeds", "duplicate seed");

    // Let the library constructors check the parameter values.
    try {
        if (c.preset == "lq") lq_params(c.params).validate();
        else if (c.preset == "minlqg") minlqg_params(c.params).validate();
        else if (c.preset == "cn-lq") cn_params(c.params).validate();
        else if (c.preset == "systemic-risk") systemic_params(c.params).validate();
        else make_fbsde(c).validate();
        if (c.preset == "cn-lq" || c.preset == "sincos" || c.preset == "atan-mfg") {
            if (!(num(c.params, "horizon") > 0.0)) throw std::invalid_argument("horizon must be positive");
        }
        for (double r : c.rho_list) make_fbsde(c, r).validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("params", e.what());
    }
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig parse_config(const json& j) {
    expect_object(j, "");
    reject_unknown(j, "", {"name", "preset", "params", "method", "train", "seeds", "out", "compare", "rho_list", "pde",
                           "outputs", "thresholds"});
    ExperimentConfig c;
    if (!j.contains("preset")) throw ConfigError("preset", "missing");
    get(j, "", "preset", c.preset);
    preset_info(c.preset);
    if (!j.contains("method")) throw ConfigError("method", "missing");
    std::string method;
    get(j, "", "method", method);
    c.method = method_from_string(method);

    c.params = default_params(c.preset);
    if (j.contains("params")) {
        const auto& p = j.at("params");
        expect_object(p, "params");
        for (auto it = p.begin(); it != p.end(); ++it) {
            const std::string path = join("params", it.key());
            if (!c.params.contains(it.key())) throw ConfigError(path, "unknown parameter for preset '" + c.preset + "'");
            c.params[it.key()] = read_double(it.value(), path);
        }
    }
    c.name = c.preset + "-" + method;
    get(j, "", "name", c.name);
    if (c.name.empty() || c.name.find('/') != std::string::npos) throw ConfigError("name", "must be a plain non-empty name");
    if (j.contains("train")) c.train = parse_train(j.at("train"), "train");
    if (j.contains("seeds")) c.seeds = read_list<std::uint64_t>(j.at("seeds"), "seeds", read_u64);
    get(j, "", "out", c.out);
    if (j.contains("compare"))
        c.compare = read_list<std::string>(j.at("compare"), "compare", [](const json& v, const std::string& p) {
            if (!v.is_string()) throw ConfigError(p, "expected a string");
            return v.get<std::string>();
        });
    if (j.contains("rho_list")) c.rho_list = read_list<double>(j.at("rho_list"), "rho_list", read_double);
    if (j.contains("pde")) c.pde = parse_pde(j.at("pde"), "pde");
    if (j.contains("outputs")) c.outputs = parse_outputs(j.at("outputs"), "outputs");
    if (j.contains("thresholds")) {
        const auto& t = j.at("thresholds");
        expect_object(t, "thresholds");
        for (auto it = t.begin(); it != t.end(); ++it)
            c.thresholds[it.key()] = read_double(it.value(), join("thresholds", it.key()));
    }
    validate_semantics(c);
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("", "cannot open config file " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("", path + ": invalid JSON: " + e.what());
    }
    return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
    json j{{"name", c.name},
           {"preset", c.preset},
           {"params", c.params},
           {"method", to_string(c.method)},
           {"train", train_to_json(c.train)},
           {"seeds", c.seeds},
           {"compare", c.compare},
           {"rho_list", c.rho_list},
           {"pde", pde_to_json(c.pde)},
           {"outputs", outputs_to_json(c.outputs)},
           {"thresholds", c.thresholds}};
    if (!c.out.empty()) j["out"] = c.out;
    return j;
}

bool ExperimentConfig::operator==(const ExperimentConfig& o) const { return to_json(*this) == to_json(o); }

// ---------------------------------------------------------------------------
// Reports.

std::map<std::string, Aggregate> aggregate(const std::vector<SeedResult>& seeds) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& s : seeds)
        for (const auto& [k, v] : s.metrics)
            if (std::isfinite(v)) values[k].push_back(v);
    std::map<std::string, Aggregate> out;
    for (const auto& [k, v] : values) {
        Aggregate a;
        a.n = v.size();
        for (double x : v) a.mean += x;
        a.mean /= static_cast<double>(a.n);
        if (a.n > 1) {
            double ss = 0.0;
            for (double x : v) ss += (x - a.mean) * (x - a.mean);
            a.std = std::sqrt(ss / static_cast<double>(a.n - 1));
        }
        out[k] = a;
    }
    return out;
}

json Report::to_json() const {
    json seeds_j = json::array();
    for (const auto& s : seeds) {
        json m = json::object();
        for (const auto& [k, v] : s.metrics) m[k] = std::isfinite(v) ? json(v) : json(nullptr);
        json e{{"seed", s.seed}, {"metrics", m}};
        e["error"] = s.error ? json(*s.error) : json(nullptr);
        seeds_j.push_back(e);
    }
    json agg = json::object();
    for (const auto& [k, a] : aggregates) agg[k] = {{"mean", a.mean}, {"std", a.std}, {"n", a.n}};
    return {{"version", version},   {"runtime_seconds", runtime_seconds}, {"config", config},
            {"seeds", seeds_j},     {"aggregates", agg},                  {"breaches", breaches},
            {"warnings", warnings}, {"notes", notes},                  {"exit_code", exit_code()}};
}

int Report::exit_code() const {
    if (!breaches.empty()) return 3;
    for (const auto& s : seeds)
        if (s.error) return 2;
    return 0;
}

std::string resolve_out_dir(const ExperimentConfig& c, const RunOptions& opt) {
    if (!opt.out_dir.empty()) return opt.out_dir;
    if (!c.out.empty()) return c.out;
    if (const char* root = std::getenv("MFNN_OUT_ROOT"); root && *root) return (fs::path(root) / c.name).string();
    return (fs::path("runs") / c.name).string();
}

// ---------------------------------------------------------------------------
// One seed.

namespace {

using Metrics = std::map<std::string, double>;

std::string rho_key(const std::string& stem, double rho) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s@rho=%g", stem.c_str(), rho);
    return buf;
}

TrainConfig mfc_config(const ExperimentConfig& c, const ModelSpec& model, std::uint64_t seed) {
    TrainConfig t;
    t.iterations = c.train.iterations;
    t.batch = c.train.batch;
    t.grid = TimeGrid::make(model.horizon, c.train.n_steps);
    t.lr = c.train.lr;
    t.seed = seed;
    t.eval_every = c.train.eval_every;
    t.eval_batch = c.train.eval_batch;
    t.eval_seed = c.train.eval_seed;
    t.hidden = c.train.hidden;
    t.activation = nn::activation_from_string(c.train.activation);
    if (c.train.clamp)
        t.clamp = nn::Box{std::vector<double>(model.dim_alpha, c.train.clamp->first),
                          std::vector<double>(model.dim_alpha, c.train.clamp->second)};
    t.moving_window = c.train.moving_window;
    return t;
}

FbsdeTrainConfig fbsde_config(const ExperimentConfig& c, double horizon, std::uint64_t seed) {
    FbsdeTrainConfig t;
    t.iterations = c.train.iterations;
    t.batch = c.train.batch;
    t.grid = TimeGrid::make(horizon, c.train.n_steps);
    t.lr = c.train.lr;
    t.seed = seed;
    t.eval_every = c.train.eval_every;
    t.eval_batch = c.train.eval_batch;
    t.eval_seed = c.train.eval_seed;
    t.y0_hidden = c.train.y0_hidden;
    t.z_hidden = c.train.z_hidden;
    t.activation = nn::activation_from_string(c.train.activation);
    t.moving_window = c.train.moving_window;
    return t;
}

void trace_metrics(const TrainTrace& trace, Metrics& m) {
    if (trace.records.empty()) return;
    const auto& first = trace.records.front();
    const auto& last = trace.records.back();
    m["iterations_done"] = static_cast<double>(last.iteration);
    m["initial_eval_loss"] = first.eval_loss;
    m["final_eval_loss"] = last.eval_loss;
    m["final_moving_avg"] = last.moving_avg;
    if (last.l2_error) m["l2_error_final"] = *last.l2_error;
    for (const auto& r : trace.records)
        if (r.iteration == 100 && r.l2_error) m["l2_error_at_100"] = *r.l2_error;
    if (m.count("l2_error_final") && m.count("l2_error_at_100") && m["l2_error_at_100"] > 0.0)
        m["l2_error_ratio"] = m["l2_error_final"] / m["l2_error_at_100"];
}

// Half-width of the x range used for control.csv: three standard deviations of
// the uncontrolled state at the horizon.
double control_half_width(const json& p) {
    const double s0 = num(p, "mu0_std"), sig = num(p, "sigma"), T = num(p, "horizon");
    return 3.0 * std::sqrt(s0 * s0 + sig * sig * T);
}

template <class Alpha>
void write_control_csv(const fs::path& path, const TimeGrid& grid, double lo, double hi, std::size_t nx, Alpha alpha) {
    csv::Writer w(path.string(), {"step", "time", "x", "alpha"});
    for (std::size_t n = 0; n <= grid.n_steps; ++n)
        for (std::size_t k = 0; k < nx; ++k) {
            const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(nx - 1);
            w.row(n, grid.time(n), x, alpha(grid.time(n), x));
        }
    w.close();
}

double mean_at(const RolloutResult& r, std::size_t step) {
    double s = 0.0;
    for (std::size_t i = 0; i < r.n_particles; ++i) s += r.x(step, i);
    return s / static_cast<double>(r.n_particles);
}

struct SeedRun {
    const ExperimentConfig& c;
    std::uint64_t seed;
    fs::path dir;
    std::size_t threads;
    SeedResult& out;

    Metrics& m() { return out.metrics; }
    std::string file(const char* name) const { return (dir / name).string(); }

    void fail(const std::string& msg) {
        if (!out.error) out.error = msg;
    }

    void mfc() {
        const ModelSpec model = make_model(c);
        const TrainConfig tc = mfc_config(c, model, seed);
        TrainConfig tcx = tc;
        if (c.train.checkpoints) tcx.checkpoint_dir = file("checkpoints");

        std::optional<RiccatiLqSolution> ric;
        ControlOracle oracle;
        if (has(c.compare, "riccati")) {
            ric = riccati_lq_solve(*model.lq, TimeGrid::make(model.horizon, c.train.n_steps * c.outputs.oracle_refine));
            oracle = [&](double t, std::span<const double> x, std::span<double> a) { a[0] = ric->feedback(t, x[0]); };
        }
        const auto res = train(model, tcx, ric ? &oracle : nullptr);
        res.trace.write_csv(file("trace.csv"));
        nn::save_file(res.params, file("params.mfnn"));
        trace_metrics(res.trace, m());
        if (ric) {
            for (const char* k : {"l2_error_final", "l2_error_at_100", "l2_error_ratio"})
                if (m().count(k)) m()[std::string("l2_control") + (k + 8)] = m()[k];
        }
        if (res.failure) return fail("training failed: " + *res.failure);

        const auto& grid = tc.grid;
        const auto eval = evaluate_control(res.params, model, grid, c.outputs.eval_particles, tc.held_out_seed(),
                                           std::nullopt, tc.clamp);
        write_trajectory_csv(file("trajectories.csv"), eval.trajectories, grid.n_steps, eval.n_particles, model.dim_x,
                             grid.dt, c.outputs.trajectory_particles);
        m()["eval_cost"] = eval.total_cost;
        m()["mean_X_T"] = mean_at(eval, grid.n_steps);

        if (c.preset == "cn-lq") return common_noise_outputs(res.params, model, tc);

        const double mid = num(c.params, "mu0_mean"), hw = control_half_width(c.params);
        write_control_csv(dir / "control.csv", grid, mid - hw, mid + hw, c.outputs.control_grid, [&](double t, double x) {
            const double in[2] = {t, x};
            auto a = nn::forward(res.params, in);
            if (tc.clamp) a = nn::clamp_output(a, *tc.clamp);
            return a[0];
        });

        if (ric) {
            // Riccati feedback rolled out on the held-out sample that produced eval_loss.
            const auto s = draw_sample(model.init_sampler, model.dim_x, model.dim_w, model.common_noise, grid,
                                       tc.eval_batch, tc.held_out_seed());
            const ControlFn fb = [&](double t, VarSpan x, const MeasureStats&, const CommonNoiseState&, VarOut a) {
                a[0] = Var(ric->feedback(t, x[0].value()));
            };
            const double rc = rollout(model, fb, s.initial, s.noise, grid).total_cost;
            m()["riccati_cost"] = rc;
            m()["riccati_value"] = ric->value();
            m()["cost_gap_rel"] = std::fabs(m()["final_eval_loss"] - rc) / std::fabs(rc);
        }
    }

    void common_noise_outputs(const nn::NetParams& params, const ModelSpec& model, const TrainConfig& tc) {
        const auto& grid = tc.grid;
        const double cT = num(c.params, "cT");
        const std::size_t jump = static_cast<std::size_t>(std::llround(model.common_noise.jump_time / grid.dt));
        const double spread = control_half_width(c.params);
        std::vector<Histogram> hists;
        double mid[2] = {0, 0}, term[2] = {0, 0};
        for (int sgn = 0; sgn < 2; ++sgn) {
            const double v = sgn == 0 ? cT : -cT;
            const std::string tag = sgn == 0 ? "plus" : "minus";
            // independent draws per scenario
            const auto r = evaluate_control(params, model, grid, c.outputs.eval_particles,
                                            stream_seed(tc.held_out_seed(), 0xC1 + sgn), v, tc.clamp);
            mid[sgn] = mean_at(r, jump);
            term[sgn] = mean_at(r, grid.n_steps);
            for (auto [step, when] : {std::pair{jump, "jump"}, {grid.n_steps, "T"}}) {
                std::vector<double> xs(r.n_particles);
                for (std::size_t i = 0; i < r.n_particles; ++i) xs[i] = r.x(step, i);
                hists.push_back(histogram(xs, -cT - spread, cT + spread, c.outputs.histogram_bins, tag + "_" + when));
            }
        }
        write_histogram_csv(file("histogram.csv"), hists);
        m()["mean_X_T_plus"] = term[0];
        m()["mean_X_T_minus"] = term[1];
        m()["mean_X_jump_plus"] = mid[0];
        m()["mean_X_jump_minus"] = mid[1];
        m()["pre_jump_gap"] = std::fabs(mid[0] - mid[1]);
        m()["sign_violation"] = (term[0] > 0.0 && term[1] < 0.0) ? 0.0 : 1.0;
        m()["terminal_excess"] = std::max(std::fabs(term[0]), std::fabs(term[1])) - cT;
    }

    double atan_pde_y0(double rho) const {
        const double sig = num(c.params, "sigma"), x0 = num(c.params, "x0"), T = num(c.params, "horizon");
        const auto sol = pde_solve_hjb_fp(hamiltonian_atan(rho, sig, x0, c.pde.init_std),
                                          auto_domain(x0, c.pde.init_std, sig, T), c.pde.n_x,
                                          TimeGrid::make(T, c.pde.n_steps), picard());
        return sol.du_dx(0, x0);
    }

    PicardOptions picard() const {
        PicardOptions po;
        po.max_iters = c.pde.max_iters;
        po.damping = c.pde.damping;
        po.tol = c.pde.tol;
        return po;
    }

    void write_pde_curve(const std::vector<double>& rhos, const std::vector<double>& y0) {
        csv::Writer w(file("curve_pde.csv"), {"rho", "y0_estimate"});
        for (std::size_t k = 0; k < rhos.size(); ++k) w.row(rhos[k], y0[k]);
        w.close();
    }

    void fbsde() {
        const double T = num(c.params, "horizon");
        const FbsdeTrainConfig fc = fbsde_config(c, T, seed);
        if (!c.rho_list.empty()) return fbsde_curve(fc);

        const FbsdeSpec spec = make_fbsde(c);
        Y0Oracle oracle;
        std::optional<RiccatiLqSolution> lq_ric;
        if (has(c.compare, "analytic")) {
            const double v = analytic_y0_decoupled(num(c.params, "x0"), num(c.params, "sigma"), T);
            oracle = [v](std::span<const double>) { return v; };
        } else if (has(c.compare, "riccati") && c.preset == "lq") {
            const auto p = lq_params(c.params);
            lq_ric = riccati_lq_solve(p, TimeGrid::make(T, c.train.n_steps * c.outputs.oracle_refine));
            oracle = [&, m0 = p.mu0_mean](std::span<const double> x) { return lq_ric->y(0.0, x[0], m0); };
        }
        const auto res = train_fbsde(spec, fc, oracle ? &oracle : nullptr);
        res.trace.write_csv(file("trace.csv"));
        nn::save_file(res.nets.y0, file("y0.mfnn"));
        nn::save_file(res.nets.z, file("z.mfnn"));
        trace_metrics(res.trace, m());
        if (res.failure) return fail("training failed: " + *res.failure);

        const auto eval = evaluate_fbsde(res.nets, spec, fc.grid, c.outputs.eval_particles, fc.held_out_seed());
        write_fbsde_paths_csv(file("paths.csv"), eval, fc.grid.dt, c.outputs.trajectory_particles);
        if (spec.initial_point) {
            const double y0 = y0_estimate(res.nets, *spec.initial_point);
            m()["y0"] = y0;
            if (has(c.compare, "analytic")) m()["y0_abs_error"] = std::fabs(y0 - oracle(*spec.initial_point));
            if (has(c.compare, "pde")) {
                const double ref = atan_pde_y0(num(c.params, "rho"));
                m()["y0_pde"] = ref;
                m()["y0_pde_gap"] = std::fabs(y0 - ref);
            }
        }
        if (has(c.compare, "riccati") && c.preset == "systemic-risk") systemic_gaps(spec, res.nets, fc);
    }

    // Solver and oracle paths driven by one fine Brownian path.
    void systemic_gaps(const FbsdeSpec& spec, const FbsdeNets& nets, const FbsdeTrainConfig& fc) {
        const std::size_t factor = c.outputs.oracle_refine, nt = fc.grid.n_steps, n = c.outputs.eval_particles;
        const auto fine = TimeGrid::make(fc.grid.horizon, nt * factor);
        const auto s = draw_sample(spec.init_sampler, spec.dim_x, spec.dim_w, spec.common_noise, fine, n,
                                   stream_seed(fc.held_out_seed(), 0x0DAC));
        const auto ric = riccati_systemic_solve(*spec.systemic, fine);
        const auto orc = systemic_oracle_paths(ric, s.initial, s.noise, factor);
        const auto ro = fbsde_rollout(spec, nets, s.initial, coarsen(s.noise, factor), fc.grid);
        double gx = 0.0, gy = 0.0;
        for (std::size_t k = 0; k <= nt; ++k)
            for (std::size_t i = 0; i < n; ++i) {
                const double dx = ro.x(k, i) - orc.X[k * n + i], dy = ro.y(k, i) - orc.Y[k * n + i];
                gx += dx * dx;
                gy += dy * dy;
            }
        const double cnt = static_cast<double>((nt + 1) * n);
        m()["gap_X"] = std::sqrt(gx / cnt);
        m()["gap_Y"] = std::sqrt(gy / cnt);
        m()["gap_XY"] = std::sqrt((gx + gy) / cnt);

        csv::Writer w(file("oracle_paths.csv"), {"particle", "step", "time", "X", "Y"});
        for (std::size_t i = 0; i < std::min(n, c.outputs.trajectory_particles); ++i)
            for (std::size_t k = 0; k <= nt; ++k) w.row(i, k, fc.grid.time(k), orc.X[k * n + i], orc.Y[k * n + i]);
        w.close();
        csv::Writer v(file("solver_paths.csv"), {"particle", "step", "time", "X", "Y"});
        for (std::size_t i = 0; i < std::min(n, c.outputs.trajectory_particles); ++i)
            for (std::size_t k = 0; k <= nt; ++k) v.row(i, k, fc.grid.time(k), ro.x(k, i), ro.y(k, i));
        v.close();
    }

    void fbsde_curve(const FbsdeTrainConfig& fc) {
        const auto family = [this](double rho) { return make_fbsde(c, rho); };
        const auto curve = y0_vs_rho_curve(family, c.rho_list, fc, threads);
        write_curve_csv(file("curve.csv"), curve);
        std::string errors;
        double jump = 0.0;
        for (std::size_t k = 0; k < curve.size(); ++k) {
            m()[rho_key("y0", curve[k].rho)] = curve[k].y0;
            if (curve[k].error) errors += (errors.empty() ? "" : "; ") + rho_key("rho", curve[k].rho) + ": " + *curve[k].error;
            if (k > 0) jump = std::max(jump, std::fabs(curve[k].y0 - curve[k - 1].y0));
        }
        if (curve.size() > 1) m()["max_adjacent_jump"] = jump;
        if (has(c.compare, "analytic")) {
            for (const auto& pt : curve)
                if (pt.rho == 0.0)
                    m()["y0_abs_error"] = std::fabs(
                        pt.y0 - analytic_y0_decoupled(num(c.params, "x0"), num(c.params, "sigma"), num(c.params, "horizon")));
        }
        if (has(c.compare, "pde")) {
            std::vector<double> ref(c.rho_list.size());
            double sup = 0.0;
            for (std::size_t k = 0; k < ref.size(); ++k) {
                ref[k] = atan_pde_y0(c.rho_list[k]);
                m()[rho_key("y0_pde", c.rho_list[k])] = ref[k];
                sup = std::max(sup, std::fabs(curve[k].y0 - ref[k]));
            }
            m()["curve_pde_sup_gap"] = sup;
            write_pde_curve(c.rho_list, ref);
        }
        if (!errors.empty()) fail(errors);
    }

    void bench_riccati() {
        const double T = num(c.params, "horizon");
        const auto grid = TimeGrid::make(T, c.train.n_steps);
        if (c.preset == "systemic-risk") {
            const auto sol = riccati_systemic_solve(systemic_params(c.params), grid);
            write_riccati_systemic_csv(file("riccati.csv"), sol);
            m()["eta_0"] = sol.eta(0.0);
            m()["z_0"] = sol.z(0.0);
            return;
        }
        const auto p = lq_params(c.params);
        const auto sol = riccati_lq_solve(p, grid);
        write_riccati_lq_csv(file("riccati.csv"), sol);
        const double hw = control_half_width(c.params);
        write_control_csv(dir / "control.csv", grid, p.mu0_mean - hw, p.mu0_mean + hw, c.outputs.control_grid,
                          [&](double t, double x) { return sol.feedback(t, x); });
        m()["value"] = sol.value();
        m()["P_0"] = sol.P(0.0);
        m()["Pi_0"] = sol.Pi(0.0);
        m()["mbar_T"] = sol.mbar(T);
    }

    void bench_pde() {
        const double T = num(c.params, "horizon");
        const auto grid = TimeGrid::make(T, c.pde.n_steps);
        if (c.preset == "atan-mfg") {
            if (!c.rho_list.empty()) {
                std::vector<double> y0;
                for (double r : c.rho_list) {
                    y0.push_back(atan_pde_y0(r));
                    m()[rho_key("y0_pde", r)] = y0.back();
                }
                write_pde_curve(c.rho_list, y0);
                return;
            }
            const double sig = num(c.params, "sigma"), x0 = num(c.params, "x0");
            const auto sol = pde_solve_hjb_fp(hamiltonian_atan(num(c.params, "rho"), sig, x0, c.pde.init_std),
                                              auto_domain(x0, c.pde.init_std, sig, T), c.pde.n_x, grid, picard());
            pde_metrics(sol);
            m()["y0_pde"] = sol.du_dx(0, x0);
            return;
        }
        const auto p = lq_params(c.params);
        const auto sol =
            pde_solve_hjb_fp(hamiltonian_lq(p), auto_domain(p.mu0_mean, p.mu0_std, p.sigma, T), c.pde.n_x, grid, picard());
        pde_metrics(sol);
        if (has(c.compare, "riccati")) {
            const auto ric = riccati_lq_solve(p, grid);
            const double half = 2.0 * p.sigma * std::sqrt(T);
            double gap0 = 0.0, gap_all = 0.0;
            for (std::size_t n = 0; n <= grid.n_steps; ++n)
                for (int k = 0; k <= 200; ++k) {
                    const double x = p.mu0_mean - half + 2.0 * half * k / 200.0;
                    const double a_pde = -p.B / (2.0 * p.R) * sol.du_dx(n, x);
                    const double g = std::fabs(a_pde - ric.feedback(grid.time(n), x, sol.mean(n)));
                    if (n == 0) gap0 = std::max(gap0, g);
                    gap_all = std::max(gap_all, g);
                }
            m()["feedback_sup_gap"] = gap0;
            m()["feedback_sup_gap_all_times"] = gap_all;
            m()["mean_T_gap"] = std::fabs(sol.mean(grid.n_steps) - ric.mbar(T));
        }
    }

    void pde_metrics(const PdeSolution& sol) {
        write_pde_csv(file("pde.csv"), sol);
        double mass_err = 0.0, m_min = sol.m[0];
        for (std::size_t n = 0; n <= sol.grid.n_steps; ++n) mass_err = std::max(mass_err, std::fabs(sol.mass(n) - 1.0));
        for (double v : sol.m) m_min = std::min(m_min, v);
        m()["mass_error"] = mass_err;
        m()["min_density"] = m_min;
        m()["negative_density"] = std::max(0.0, -m_min);
        m()["picard_iterations"] = static_cast<double>(sol.residuals.size());
        m()["mean_T"] = sol.mean(sol.grid.n_steps);
    }

    void go() {
        fs::create_directories(dir);
        switch (c.method) {
            case Method::mfc: return mfc();
            case Method::fbsde: return fbsde();
            case Method::bench_riccati: return bench_riccati();
            case Method::bench_pde: return bench_pde();
        }
    }
};

std::vector<std::string> preset_warnings(const ExperimentConfig& c) {
    if (c.method != Method::fbsde && c.preset != "systemic-risk") return {};
    return make_fbsde(c).warnings;
}

std::vector<std::string> metric_notes(const ExperimentConfig& c) {
    std::vector<std::string> out;
    if (c.preset == "lq" && c.params == default_params("lq"))
        out.push_back("lq coefficients are implementer-chosen defaults; override them under params");
    if (c.method == Method::mfc && has(c.compare, "riccati"))
        out.push_back("l2 control errors are measured along trajectories driven by the learned control");
    if (c.method == Method::fbsde && has(c.compare, "riccati") && c.preset == "systemic-risk")
        out.push_back("gap_X / gap_Y: RMS over particles and coarse time steps against Riccati paths on the same noise");
    if (c.method == Method::bench_pde || has(c.compare, "pde"))
        out.push_back("point-mass initial laws are replaced by a Gaussian of std pde.init_std in the PDE");
    return out;
}

}  // namespace

Report run(const ExperimentConfig& config, const RunOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path out = resolve_out_dir(config, opt);
    fs::create_directories(out);

    Report rep;
    rep.config = to_json(config);
    rep.version = MFNN_VERSION;
    rep.warnings = preset_warnings(config);
    rep.notes = metric_notes(config);
    rep.seeds.resize(config.seeds.size());
    for (std::size_t k = 0; k < config.seeds.size(); ++k) rep.seeds[k].seed = config.seeds[k];

    const std::size_t n_seeds = config.seeds.size();
    const std::size_t workers = std::clamp<std::size_t>(opt.threads, 1, n_seeds);
    const std::size_t inner = std::max<std::size_t>(1, opt.threads / workers);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < n_seeds;) {
            auto& res = rep.seeds[k];
            SeedRun r{config, res.seed, out / ("seed_" + std::to_string(res.seed)), inner, res};
            try {
                r.go();
            } catch (const std::exception& e) {
                r.fail(e.what());
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    rep.aggregates = aggregate(rep.seeds);
    for (const auto& [metric, limit] : config.thresholds)
        for (const auto& s : rep.seeds) {
            const auto it = s.metrics.find(metric);
            const std::string who = "seed " + std::to_string(s.seed) + ": " + metric;
            if (it == s.metrics.end()) {
                rep.breaches.push_back(who + " missing");
            } else if (!(it->second <= limit)) {
                char buf[128];
                std::snprintf(buf, sizeof buf, " = %.6g exceeds %.6g", it->second, limit);
                rep.breaches.push_back(who + buf);
            }
        }
    rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ofstream f(out / "report.json");
    f << rep.to_json().dump(2) << '\n';
    if (!f) throw std::runtime_error("cannot write " + (out / "report.json").string());
    return rep;
}

// ---------------------------------------------------------------------------
// CSV comparison.

bool is_key_column(const std::string& name) {
    static const std::set<std::string> keys{"step",  "time", "particle", "coordinate", "iteration",
                                            "rho",   "x",    "label",    "bin_lo",     "bin_hi"};
    return keys.count(name) > 0;
}

namespace {

// Bookkeeping columns neither compared nor matched.
bool is_ignored_column(const std::string& name) { return name == "seed"; }

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

Table read_table(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    Table t;
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error(path + ": empty file");
    t.header = split(line);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        t.rows.push_back(split(line));
        if (t.rows.back().size() != t.header.size())
            throw std::runtime_error(path + ": row " + std::to_string(t.rows.size()) + " has the wrong number of cells");
    }
    return t;
}

double parse_num(const std::string& s) {
    if (s == "nan" || s == "-nan") return std::nan("");
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        return used == s.size() ? v : std::nan("");
    } catch (const std::exception&) {
        return std::nan("");
    }
}

bool same_key(const std::string& a, const std::string& b) {
    if (a == b) return true;
    const double x = parse_num(a), y = parse_num(b);
    return std::isfinite(x) && std::isfinite(y) && std::fabs(x - y) <= 1e-9 * (1.0 + std::fabs(x));
}

int column(const Table& t, const std::string& name) {
    for (std::size_t k = 0; k < t.header.size(); ++k)
        if (t.header[k] == name) return static_cast<int>(k);
    return -1;
}

}  // namespace

std::vector<Gap> compare_csv(const std::string& a, const std::string& b) {
    const Table ta = read_table(a), tb = read_table(b);
    std::set<std::string> ka, kb;
    for (const auto& h : ta.header)
        if (is_key_column(h)) ka.insert(h);
    for (const auto& h : tb.header)
        if (is_key_column(h)) kb.insert(h);
    if (ka != kb) throw std::runtime_error("grid mismatch: " + a + " and " + b + " have different key columns");
    if (ta.rows.size() != tb.rows.size())
        throw std::runtime_error("grid mismatch: " + a + " has " + std::to_string(ta.rows.size()) + " rows, " + b +
                                 " has " + std::to_string(tb.rows.size()));
    for (const auto& key : ka) {
        const int ia = column(ta, key), ib = column(tb, key);
        for (std::size_t r = 0; r < ta.rows.size(); ++r)
            if (!same_key(ta.rows[r][ia], tb.rows[r][ib]))
                throw std::runtime_error("grid mismatch: column '" + key + "' differs at row " + std::to_string(r + 1) +
                                         " (" + ta.rows[r][ia] + " vs " + tb.rows[r][ib] + ")");
    }
    std::vector<Gap> gaps;
    for (std::size_t k = 0; k < ta.header.size(); ++k) {
        const auto& name = ta.header[k];
        if (is_key_column(name) || is_ignored_column(name)) continue;
        const int ib = column(tb, name);
        if (ib < 0) continue;
        Gap g;
        g.file = fs::path(a).filename().string();
        g.column = name;
        double ss = 0.0;
        for (std::size_t r = 0; r < ta.rows.size(); ++r) {
            const double x = parse_num(ta.rows[r][k]), y = parse_num(tb.rows[r][ib]);
            if (std::isnan(x) && std::isnan(y)) continue;
            const double d = std::fabs(x - y);
            ss += d * d;
            g.sup = std::isnan(d) ? d : std::max(g.sup, d);
            ++g.n;
        }
        g.l2 = g.n ? std::sqrt(ss / static_cast<double>(g.n)) : 0.0;
        gaps.push_back(g);
    }
    return gaps;
}

std::vector<Gap> compare_paths(const std::string& a, const std::string& b) {
    auto base = [](const std::string& p) {
        fs::path q(p);
        if (q.filename() == "report.json") q = q.parent_path();
        if (!fs::exists(q)) throw std::runtime_error("no such file or directory: " + p);
        return q;
    };
    const fs::path pa = base(a), pb = base(b);
    if (fs::is_regular_file(pa) && fs::is_regular_file(pb)) return compare_csv(pa.string(), pb.string());
    if (!fs::is_directory(pa) || !fs::is_directory(pb))
        throw std::runtime_error("compare: both arguments must be CSV files or run directories");
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(pa))
        if (e.is_regular_file() && e.path().extension() == ".csv") rel.push_back(fs::relative(e.path(), pa));
    std::sort(rel.begin(), rel.end());
    std::vector<Gap> out;
    for (const auto& r : rel) {
        if (!fs::exists(pb / r)) continue;
        for (auto g : compare_csv((pa / r).string(), (pb / r).string())) {
            g.file = r.generic_string();
            out.push_back(g);
        }
    }
    if (out.empty()) throw std::runtime_error("compare: no CSV files in common");
    return out;
}

json gaps_to_json(const std::vector<Gap>& gaps) {
    json arr = json::array();
    double max_sup = 0.0;
    for (const auto& g : gaps) {
        arr.push_back({{"file", g.file},
                       {"column", g.column},
                       {"l2", std::isfinite(g.l2) ? json(g.l2) : json(nullptr)},
                       {"sup", std::isfinite(g.sup) ? json(g.sup) : json(nullptr)},
                       {"n", g.n}});
        max_sup = std::isnan(g.sup) ? g.sup : std::max(max_sup, g.sup);
    }
    return {{"gaps", arr}, {"max_sup", std::isfinite(max_sup) ? json(max_sup) : json(nullptr)}};
}

}  // namespace mfnn::experiment

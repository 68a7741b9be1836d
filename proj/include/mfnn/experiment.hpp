#pragma once

// Experiment runner behind the command-line tool: JSON configs, per-seed runs,
// oracle comparisons, reports, and CSV gap summaries.

#include "mfnn/optim.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfnn::experiment {

using nlohmann::json;

enum class Method { mfc, fbsde, bench_riccati, bench_pde };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct PresetInfo {
    std::string name;
    std::string description;
    bool is_game = false;
    std::vector<Method> methods;
};

const std::vector<PresetInfo>& presets();
const PresetInfo& preset_info(const std::string& name);  // throws ConfigError

/// Parse or validation failure; `path` names the offending field ("train.lr.eta").
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string path, const std::string& msg)
        : std::runtime_error(path.empty() ? msg : path + ": " + msg), path(std::move(path)) {}
    std::string path;
};

struct TrainSection {
    std::size_t iterations = 1000;
    std::size_t batch = 256;
    std::size_t n_steps = 20;
    LrSchedule lr = LrSchedule::adam(1e-3);
    std::size_t eval_every = 100;
    std::size_t eval_batch = 1000;
    std::optional<std::uint64_t> eval_seed;
    std::vector<std::size_t> hidden{32};     // mfc control network
    std::vector<std::size_t> y0_hidden{16};  // fbsde
    std::vector<std::size_t> z_hidden{32};   // fbsde
    std::string activation = "tanh";
    std::optional<std::pair<double, double>> clamp;
    std::size_t moving_window = 50;
    bool checkpoints = false;
};

struct PdeSection {
    std::size_t n_x = 400;
    std::size_t n_steps = 200;
    double init_std = 0.1;  // width of the Gaussian standing in for a point mass
    std::size_t max_iters = 200;
    double damping = 0.5;
    double tol = 1e-9;
};

struct OutputSection {
    std::size_t trajectory_particles = 10;
    std::size_t histogram_bins = 40;
    std::size_t control_grid = 41;   // x points of control.csv
    std::size_t oracle_refine = 10;  // fine steps per coarse step for path oracles
    std::size_t eval_particles = 2000;
};

struct ExperimentConfig {
    std::string name;
    std::string preset;
    json params;  // normalized: every parameter of the preset, defaults filled in
    Method method = Method::mfc;
    TrainSection train;
    std::vector<std::uint64_t> seeds{0};
    std::string out;
    std::vector<std::string> compare;  // "riccati", "pde", "analytic"
    std::vector<double> rho_list;
    PdeSection pde;
    OutputSection outputs;
    std::map<std::string, double> thresholds;  // metric -> maximum allowed value

    bool operator==(const ExperimentConfig&) const;
};

ExperimentConfig parse_config(const json& j);
ExperimentConfig load_config(const std::string& path);
json to_json(const ExperimentConfig& c);

struct SeedResult {
    std::uint64_t seed = 0;
    std::map<std::string, double> metrics;
    std::optional<std::string> error;
};

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 with one value
    std::size_t n = 0;
};

struct Report {
    json config;
    std::vector<SeedResult> seeds;
    std::map<std::string, Aggregate> aggregates;
    std::vector<std::string> breaches;
    std::vector<std::string> warnings;
    std::vector<std::string> notes;  // how the metrics were measured
    double runtime_seconds = 0.0;
    std::string version;

    json to_json() const;
    /// 0 ok, 2 a seed failed, 3 a threshold was breached.
    int exit_code() const;
};

std::map<std::string, Aggregate> aggregate(const std::vector<SeedResult>& seeds);

struct RunOptions {
    std::string out_dir;  // overrides config.out when set
    std::size_t threads = 1;
};

/// Output directory: options, then config.out, then $MFNN_OUT_ROOT/<name>, then runs/<name>.
std::string resolve_out_dir(const ExperimentConfig& c, const RunOptions& opt);

/// Runs every seed (in parallel up to `threads`), writes seed_<s>/ outputs and report.json.
Report run(const ExperimentConfig& config, const RunOptions& opt = {});

// ---------------------------------------------------------------------------
// CSV comparison.

struct Gap {
    std::string file;
    std::string column;
    double l2 = 0.0;   // root mean square difference
    double sup = 0.0;  // max absolute difference
    std::size_t n = 0;
};

/// Columns treated as the grid: they must agree row by row.
bool is_key_column(const std::string& name);

/// Gaps for every value column shared by two CSV files. Throws on grid mismatch.
std::vector<Gap> compare_csv(const std::string& a, const std::string& b);
/// Files or directories (CSV files with the same relative path). A report.json path means its directory.
std::vector<Gap> compare_paths(const std::string& a, const std::string& b);
json gaps_to_json(const std::vector<Gap>& gaps);

}  // namespace mfnn::experiment

// mfnn: run experiments from JSON configs, compare CSV outputs, list presets.

#include "mfnn/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace ex = mfnn::experiment;

namespace {

int cmd_run(const std::string& config_path, const std::string& out, const std::vector<std::uint64_t>& seeds,
            std::size_t threads) {
    ex::ExperimentConfig cfg;
    try {
        cfg = ex::load_config(config_path);
        if (!seeds.empty()) {
            auto j = ex::to_json(cfg);
            j["seeds"] = seeds;
            cfg = ex::parse_config(j);
        }
    } catch (const ex::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    }
    ex::RunOptions opt;
    opt.out_dir = out;
    opt.threads = threads;
    const auto dir = ex::resolve_out_dir(cfg, opt);
    std::cerr << "running " << cfg.name << " (" << cfg.preset << ", " << ex::to_string(cfg.method) << ", "
              << cfg.seeds.size() << " seed" << (cfg.seeds.size() == 1 ? "" : "s") << ") -> " << dir << '\n';
    const auto rep = ex::run(cfg, opt);

    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& s : rep.seeds)
        if (s.error) std::cerr << "seed " << s.seed << " failed: " << *s.error << '\n';
    std::printf("%-32s %16s %12s %3s\n", "metric", "mean", "std", "n");
    for (const auto& [k, a] : rep.aggregates) std::printf("%-32s %16.8g %12.4g %3zu\n", k.c_str(), a.mean, a.std, a.n);
    for (const auto& b : rep.breaches) std::cerr << "threshold breach: " << b << '\n';
    std::printf("report: %s/report.json (%.1f s)\n", dir.c_str(), rep.runtime_seconds);
    return rep.exit_code();
}

int cmd_compare(const std::string& a, const std::string& b, const std::string& out) {
    std::vector<ex::Gap> gaps;
    try {
        gaps = ex::compare_paths(a, b);
    } catch (const std::exception& e) {
        std::cerr << "compare: " << e.what() << '\n';
        return 1;
    }
    std::printf("%-36s %-16s %14s %14s %8s\n", "file", "column", "l2", "sup", "n");
    for (const auto& g : gaps)
        std::printf("%-36s %-16s %14.6g %14.6g %8zu\n", g.file.c_str(), g.column.c_str(), g.l2, g.sup, g.n);
    if (!out.empty()) {
        std::ofstream f(out);
        f << ex::gaps_to_json(gaps).dump(2) << '\n';
        if (!f) {
            std::cerr << "cannot write " << out << '\n';
            return 1;
        }
    }
    return 0;
}

int cmd_list() {
    for (const auto& p : ex::presets()) {
        std::string methods;
        for (auto m : p.methods) methods += (methods.empty() ? "" : ", ") + ex::to_string(m);
        std::printf("%-14s %s%s\n", p.name.c_str(), p.description.c_str(), p.is_game ? " [game]" : "");
        std::printf("%-14s methods: %s\n", "", methods.c_str());
        // defaults come from parsing a bare config
        nlohmann::json j{{"preset", p.name}, {"method", ex::to_string(p.methods.front())}};
        std::printf("%-14s params: %s\n", "", ex::parse_config(j).params.dump().c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mean field control and game solvers: particle SGD, FBSDE shooting, Riccati and PDE benchmarks"};
    app.set_version_flag("--version", std::string("mfnn ") + MFNN_VERSION);
    app.require_subcommand(1);

    std::string config, out, gaps_out, a, b;
    std::vector<std::uint64_t> seeds;
    std::size_t threads = 1;

    auto* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("--config,-c", config, "JSON config file")->required()->check(CLI::ExistingFile);
    run->add_option("--out,-o", out, "output directory (default: config 'out', then $MFNN_OUT_ROOT/<name>, then runs/<name>)");
    run->add_option("--seeds", seeds, "comma-separated seeds, overriding the config")->delimiter(',');
    run->add_option("--threads,-j", threads, "seeds run in parallel")->check(CLI::PositiveNumber);

    auto* cmp = app.add_subcommand("compare", "L2 / sup gaps between two CSV files or run directories");
    cmp->add_option("a", a, "CSV file, run directory or report.json")->required();
    cmp->add_option("b", b, "CSV file, run directory or report.json")->required();
    cmp->add_option("--out,-o", gaps_out, "write the gap table as JSON");

    auto* list = app.add_subcommand("list-presets", "show presets, their methods and default parameters");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run) return cmd_run(config, out, seeds, threads);
        if (*cmp) return cmd_compare(a, b, gaps_out);
        if (*list) return cmd_list();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

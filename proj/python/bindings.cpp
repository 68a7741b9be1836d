#include "mfnn/bench.hpp"
#include "mfnn/experiment.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
namespace ex = mfnn::experiment;

namespace {

// JSON crosses the boundary as text; the Python wrapper decodes it.
std::string run_config(const std::string& config_json, const std::string& out_dir, std::size_t threads) {
    const auto cfg = ex::parse_config(ex::json::parse(config_json));
    ex::Report rep;
    {
        py::gil_scoped_release nogil;
        rep = ex::run(cfg, {out_dir, threads});
    }
    return rep.to_json().dump();
}

std::string normalize(const std::string& config_json) {
    return ex::to_json(ex::parse_config(ex::json::parse(config_json))).dump();
}

std::string compare(const std::string& a, const std::string& b) { return ex::gaps_to_json(ex::compare_paths(a, b)).dump(); }

py::dict riccati_lq(const std::string& params_json, std::size_t n_steps) {
    const auto cfg = ex::parse_config({{"preset", "lq"}, {"method", "bench-riccati"}, {"params", ex::json::parse(params_json)}});
    const auto& j = cfg.params;
    mfnn::LqParams p;
    for (auto [key, dst] : {std::pair{"A", &p.A}, {"Abar", &p.Abar}, {"B", &p.B}, {"Q", &p.Q}, {"Qbar", &p.Qbar},
                            {"R", &p.R}, {"S", &p.S}, {"QT", &p.QT}, {"QbarT", &p.QbarT}, {"ST", &p.ST},
                            {"sigma", &p.sigma}, {"mu0_mean", &p.mu0_mean}, {"mu0_std", &p.mu0_std},
                            {"horizon", &p.horizon}})
        *dst = j.at(key).get<double>();
    const auto grid = mfnn::TimeGrid::make(p.horizon, n_steps);
    const auto sol = mfnn::riccati_lq_solve(p, grid);
    std::vector<double> t, P, Pi, mbar;
    for (std::size_t n = 0; n <= n_steps; ++n) {
        t.push_back(grid.time(n));
        P.push_back(sol.P(t.back()));
        Pi.push_back(sol.Pi(t.back()));
        mbar.push_back(sol.mbar(t.back()));
    }
    py::dict d;
    d["time"] = t;
    d["P"] = P;
    d["Pi"] = Pi;
    d["mbar"] = mbar;
    d["value"] = sol.value();
    return d;
}

}  // namespace

PYBIND11_MODULE(_mfnn, m) {
    m.doc() = "mfnn core: experiment runner and closed-form oracles";
    m.attr("__version__") = MFNN_VERSION;

    py::register_exception<ex::ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("presets", [] {
        std::vector<py::dict> out;
        for (const auto& p : ex::presets()) {
            py::dict d;
            d["name"] = p.name;
            d["description"] = p.description;
            d["is_game"] = p.is_game;
            std::vector<std::string> methods;
            for (auto mm : p.methods) methods.push_back(ex::to_string(mm));
            d["methods"] = methods;
            out.push_back(d);
        }
        return out;
    });
    m.def("normalize_config", &normalize, py::arg("config_json"));
    m.def("run_config", &run_config, py::arg("config_json"), py::arg("out_dir"), py::arg("threads") = 1);
    m.def("compare", &compare, py::arg("a"), py::arg("b"));
    m.def("riccati_lq", &riccati_lq, py::arg("params_json") = "{}", py::arg("n_steps") = 20);
    m.def("analytic_y0_decoupled", &mfnn::analytic_y0_decoupled, py::arg("x0"), py::arg("sigma"), py::arg("T"));
}

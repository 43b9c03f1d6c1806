#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>

#include "mcam/runner.hpp"

namespace py = pybind11;
using namespace mcam;

namespace {

py::dict gain_dict(const GainEstimate& g) {
    py::dict d;
    d["gamma"] = g.gamma;
    d["method"] = std::string(to_string(g.method));
    d["residual"] = g.residual;
    d["se"] = g.se;
    return d;
}

py::dict run_py(const std::string& config, const std::string& out,
                std::optional<std::string> mode, std::optional<std::uint64_t> seed,
                std::optional<int> threads, std::optional<std::string> rvi_variant,
                const std::string& policy) {
    RunConfig cfg = parse_config(config);
    RunOverrides ov;
    if (mode) ov.mode = mode_of_string(*mode);
    if (seed) ov.seed = *seed;
    if (threads) ov.threads = *threads;
    if (rvi_variant) {
        if (*rvi_variant == "paper")
            ov.variant = RviVariant::paper;
        else if (*rvi_variant == "semi-mdp")
            ov.variant = RviVariant::semi_mdp;
        else
            throw ConfigError("rvi_variant must be 'paper' or 'semi-mdp', got '" + *rvi_variant +
                              "'");
    }
    ov.policy_path = policy;

    RunReport rep;
    {
        py::gil_scoped_release release;
        rep = run(cfg, out, ov);
    }
    py::dict d;
    d["exit_code"] = rep.exit_code;
    d["converged"] = rep.converged;
    d["rounds"] = rep.rounds;
    d["gain"] = gain_dict(rep.gain);
    d["monte_carlo"] = rep.has_mc ? py::object(gain_dict(rep.mc)) : py::object(py::none());
    return d;
}

py::dict parse_config_py(const std::string& path) {
    RunConfig cfg = parse_config(path);
    py::dict d;
    d["mode"] = std::string(to_string(cfg.mode));
    d["dx"] = cfg.dx;
    d["dy"] = cfg.dy;
    d["B"] = cfg.model.B;
    d["K"] = cfg.model.K;
    d["regimes"] = cfg.model.m0();
    d["rvi_variant"] =
        std::string(cfg.solver.variant == RviVariant::paper ? "paper" : "semi-mdp");
    py::dict sim;
    sim["dt"] = cfg.sim.dt;
    sim["horizon"] = cfg.sim.horizon;
    sim["burn_in"] = cfg.sim.burn_in;
    sim["n_paths"] = cfg.sim.n_paths;
    sim["seed"] = cfg.sim.seed;
    d["sim"] = sim;
    return d;
}

double eval_policy_gamma(const std::string& config, const std::string& policy) {
    RunConfig cfg = parse_config(config);
    LoadedPolicy lp = policy_from_csv(read_text_file(policy), cfg.model);
    py::gil_scoped_release release;
    return solve_policy_values(cfg.model, lp.grid, lp.policy, cfg.solver).gain.gamma;
}

}  // namespace

PYBIND11_MODULE(_mcam, mod) {
    mod.doc() = "average-reward control of a regime-switching surplus diffusion";

    // translators run newest-first, so the base goes in first
    py::register_exception<Error>(mod, "SolverFailure", PyExc_RuntimeError);
    py::register_exception<ValidationError>(mod, "ValidationFailure", PyExc_ValueError);
    py::register_exception<ConfigError>(mod, "ConfigFailure", PyExc_ValueError);

    mod.def("run", &run_py, py::arg("config"), py::arg("out") = "out",
            py::arg("mode") = py::none(), py::arg("seed") = py::none(),
            py::arg("threads") = py::none(), py::arg("rvi_variant") = py::none(),
            py::arg("policy") = "",
            "Execute one pipeline mode; writes the artifacts into `out` and returns a "
            "summary dict (exit_code, converged, rounds, gain, monte_carlo).");
    mod.def("parse_config", &parse_config_py, py::arg("path"),
            "Validate a config file and return its headline fields.");
    mod.def("eval_policy_gamma", &eval_policy_gamma, py::arg("config"), py::arg("policy"),
            "Long-run average reward of a policy csv under the config's model.");
}

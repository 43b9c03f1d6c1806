#include "mcam/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mcam/errors.hpp"

namespace mcam {

namespace {

using nlohmann::json;

const json* get(const json& obj, const std::string& path, const char* key,
                std::vector<std::string>& errs, bool required = true) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        if (required) errs.push_back(path + key + ": missing");
        return nullptr;
    }
    return &*it;
}

bool take_number(const json& obj, const std::string& path, const char* key, double& out,
                 std::vector<std::string>& errs, bool required = true) {
    const json* j = get(obj, path, key, errs, required);
    if (!j) return false;
    if (!j->is_number()) {
        errs.push_back(path + key + ": must be a number");
        return false;
    }
    out = j->get<double>();
    return true;
}

bool take_int(const json& obj, const std::string& path, const char* key, int& out,
              std::vector<std::string>& errs, bool required = true) {
    const json* j = get(obj, path, key, errs, required);
    if (!j) return false;
    if (!j->is_number_integer()) {
        errs.push_back(path + key + ": must be an integer");
        return false;
    }
    out = j->get<int>();
    return true;
}

bool take_seed(const json& obj, const std::string& path, const char* key, std::uint64_t& out,
               std::vector<std::string>& errs) {
    const json* j = get(obj, path, key, errs);
    if (!j) return false;
    if (!j->is_number_integer() || (j->is_number_integer() && !j->is_number_unsigned() &&
                                    j->get<long long>() < 0)) {
        errs.push_back(path + key + ": must be a nonnegative integer");
        return false;
    }
    out = j->get<std::uint64_t>();
    return true;
}

bool take_string(const json& obj, const std::string& path, const char* key, std::string& out,
                 std::vector<std::string>& errs) {
    const json* j = get(obj, path, key, errs);
    if (!j) return false;
    if (!j->is_string()) {
        errs.push_back(path + key + ": must be a string");
        return false;
    }
    out = j->get<std::string>();
    return true;
}

void check_extras(const json& obj, const std::string& path,
                  std::initializer_list<const char*> allowed, std::vector<std::string>& errs) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) errs.push_back(path + it.key() + ": unknown field");
    }
}

const json* section(const json& root, const char* key, std::vector<std::string>& errs) {
    const json* j = get(root, "", key, errs);
    if (!j) return nullptr;
    if (!j->is_object()) {
        errs.push_back(std::string(key) + ": must be an object");
        return nullptr;
    }
    return j;
}

bool integer_multiple(double value, double h) {
    const double k = value / h;
    return std::abs(k - std::round(k)) <= 1e-9 * std::max(1.0, std::abs(k));
}

std::string num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

bool parse_model(const json& sec, Model& m, std::vector<std::string>& errs) {
    check_extras(sec, "model.",
                 {"regimes", "q", "ey", "ey2", "rho", "beta", "r2", "K", "B", "Ma", "Ms", "Ml"},
                 errs);
    bool shape_ok = true;

    const json* regimes = get(sec, "model.", "regimes", errs);
    if (regimes && regimes->is_array() && !regimes->empty()) {
        m.regimes.clear();
        for (size_t i = 0; i < regimes->size(); ++i) {
            const json& rj = (*regimes)[i];
            const std::string path = "model.regimes[" + std::to_string(i) + "].";
            RegimeParams rp{0.0, 0.0, 0.0};
            if (!rj.is_object()) {
                errs.push_back(path.substr(0, path.size() - 1) + ": must be an object");
                shape_ok = false;
                continue;
            }
            check_extras(rj, path, {"lambda", "r1", "sigma_s"}, errs);
            shape_ok &= take_number(rj, path, "lambda", rp.lambda, errs);
            shape_ok &= take_number(rj, path, "r1", rp.r1, errs);
            shape_ok &= take_number(rj, path, "sigma_s", rp.sigma_s, errs);
            m.regimes.push_back(rp);
        }
    } else if (regimes) {
        errs.push_back("model.regimes: must be a nonempty array");
        shape_ok = false;
    } else {
        shape_ok = false;
    }

    const json* q = get(sec, "model.", "q", errs);
    if (q && q->is_array() && q->size() == m.regimes.size() && shape_ok) {
        m.q.clear();
        for (size_t i = 0; i < q->size(); ++i) {
            const json& row = (*q)[i];
            if (!row.is_array() || row.size() != m.regimes.size()) {
                errs.push_back("model.q[" + std::to_string(i) + "]: must be a row of " +
                               std::to_string(m.regimes.size()) + " numbers");
                shape_ok = false;
                break;
            }
            for (const json& v : row) {
                if (!v.is_number()) {
                    errs.push_back("model.q[" + std::to_string(i) + "]: must be a row of numbers");
                    shape_ok = false;
                    break;
                }
                m.q.push_back(v.get<double>());
            }
        }
    } else if (q) {
        if (shape_ok) {
            errs.push_back("model.q: must be an array of " + std::to_string(m.regimes.size()) +
                           " rows");
            shape_ok = false;
        }
    } else {
        shape_ok = false;
    }

    shape_ok &= take_number(sec, "model.", "ey", m.ey, errs);
    shape_ok &= take_number(sec, "model.", "ey2", m.ey2, errs);
    shape_ok &= take_number(sec, "model.", "rho", m.rho, errs);
    shape_ok &= take_number(sec, "model.", "beta", m.beta, errs);
    shape_ok &= take_number(sec, "model.", "r2", m.r2, errs);
    shape_ok &= take_number(sec, "model.", "K", m.K, errs);
    shape_ok &= take_number(sec, "model.", "B", m.B, errs);
    shape_ok &= take_number(sec, "model.", "Ma", m.Ma, errs);
    shape_ok &= take_number(sec, "model.", "Ms", m.Ms, errs);
    shape_ok &= take_number(sec, "model.", "Ml", m.Ml, errs);
    return shape_ok;
}

}  // namespace

const char* to_string(RunMode mode) {
    switch (mode) {
        case RunMode::rvi: return "rvi";
        case RunMode::refine: return "refine";
        case RunMode::simulate: return "simulate";
        case RunMode::eval_policy: return "eval-policy";
        case RunMode::full: return "full";
    }
    return "full";
}

RunMode mode_of_string(const std::string& name) {
    if (name == "rvi") return RunMode::rvi;
    if (name == "refine") return RunMode::refine;
    if (name == "simulate") return RunMode::simulate;
    if (name == "eval-policy") return RunMode::eval_policy;
    if (name == "full") return RunMode::full;
    throw ConfigError("unknown mode '" + name +
                      "' (expected rvi, refine, simulate, eval-policy or full)");
}

RunConfig parse_config_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");

    RunConfig cfg;
    std::vector<std::string> errs;
    check_extras(root, "", {"model", "grids", "tolerances", "train", "sim", "solver", "mode"},
                 errs);

    bool model_ok = false;
    if (const json* sec = section(root, "model", errs)) {
        model_ok = parse_model(*sec, cfg.model, errs);
        if (model_ok) {
            try {
                cfg.model.validate();
            } catch (const ValidationError& e) {
                errs.insert(errs.end(), e.failures.begin(), e.failures.end());
                model_ok = false;
            }
        }
    }

    if (const json* sec = section(root, "grids", errs)) {
        check_extras(*sec, "grids.", {"dx", "dy"}, errs);
        bool have_dx = take_number(*sec, "grids.", "dx", cfg.dx, errs);
        bool have_dy = take_number(*sec, "grids.", "dy", cfg.dy, errs);
        if (have_dx && !(cfg.dx > 0.0)) {
            errs.push_back("grids.dx: must be positive (" + num(cfg.dx) + ")");
            have_dx = false;
        }
        if (have_dy && !(cfg.dy > 0.0)) {
            errs.push_back("grids.dy: must be positive (" + num(cfg.dy) + ")");
            have_dy = false;
        }
        if (have_dx && have_dy) {
            const double ratio = cfg.dy / cfg.dx;
            const double k = std::round(ratio);
            if (k < 2.0 || std::abs(ratio - k) > 1e-9)
                errs.push_back("grids.dy: must be an integer multiple (>= 2) of grids.dx (" +
                               num(cfg.dy) + " / " + num(cfg.dx) + ")");
            if (model_ok) {
                for (auto [h, name] : {std::pair{cfg.dx, "dx"}, std::pair{cfg.dy, "dy"}}) {
                    if (!integer_multiple(cfg.model.K, h))
                        errs.push_back("grids." + std::string(name) +
                                       ": model.K must be an integer multiple of it (" +
                                       num(cfg.model.K) + " / " + num(h) + ")");
                    if (!integer_multiple(cfg.model.B, h))
                        errs.push_back("grids." + std::string(name) +
                                       ": model.B must be an integer multiple of it (" +
                                       num(cfg.model.B) + " / " + num(h) + ")");
                }
            }
        }
    }

    if (const json* sec = section(root, "tolerances", errs)) {
        check_extras(*sec, "tolerances.",
                     {"epsilon1", "epsilon2", "epsilon3", "epsilon4", "w1"}, errs);
        struct {
            const char* key;
            double* dst;
        } eps[] = {{"epsilon1", &cfg.tol.epsilon1},
                   {"epsilon2", &cfg.tol.epsilon2},
                   {"epsilon3", &cfg.tol.epsilon3},
                   {"epsilon4", &cfg.tol.epsilon4}};
        for (auto& e : eps)
            if (take_number(*sec, "tolerances.", e.key, *e.dst, errs) && !(*e.dst > 0.0))
                errs.push_back("tolerances." + std::string(e.key) + ": must be positive (" +
                               num(*e.dst) + ")");
        if (take_int(*sec, "tolerances.", "w1", cfg.tol.w1, errs) && cfg.tol.w1 < 1)
            errs.push_back("tolerances.w1: must be at least 1 (" + std::to_string(cfg.tol.w1) +
                           ")");
    }

    if (const json* sec = section(root, "train", errs)) {
        check_extras(*sec, "train.", {"h1", "max_epochs_fit", "max_epochs_ascend", "seed"}, errs);
        if (take_number(*sec, "train.", "h1", cfg.train.h1, errs) && !(cfg.train.h1 > 0.0))
            errs.push_back("train.h1: must be positive (" + num(cfg.train.h1) + ")");
        if (take_int(*sec, "train.", "max_epochs_fit", cfg.train.max_epochs_fit, errs) &&
            cfg.train.max_epochs_fit < 1)
            errs.push_back("train.max_epochs_fit: must be at least 1");
        if (take_int(*sec, "train.", "max_epochs_ascend", cfg.train.max_epochs_ascend, errs) &&
            cfg.train.max_epochs_ascend < 1)
            errs.push_back("train.max_epochs_ascend: must be at least 1");
        std::uint64_t seed = 0;
        if (take_seed(*sec, "train.", "seed", seed, errs))
            cfg.train.seed = static_cast<unsigned>(seed);
    }
    cfg.train.epsilon3 = cfg.tol.epsilon3;
    cfg.train.epsilon4 = cfg.tol.epsilon4;

    if (const json* sec = section(root, "sim", errs)) {
        check_extras(*sec, "sim.", {"dt", "horizon", "burn_in", "n_paths", "seed", "x0", "regime0"},
                     errs);
        bool have_dt = take_number(*sec, "sim.", "dt", cfg.sim.dt, errs);
        if (have_dt && (!(cfg.sim.dt > 0.0) || cfg.sim.dt >= 1.0))
            errs.push_back("sim.dt: must lie in (0, 1) (" + num(cfg.sim.dt) + ")");
        else if (have_dt && model_ok) {
            double qmax = 0.0;
            for (int i = 0; i < cfg.model.m0(); ++i)
                qmax = std::max(qmax, std::abs(cfg.model.q_at(i, i)));
            if (cfg.sim.dt * qmax >= 0.1)
                errs.push_back("sim.dt: dt * max|q_jj| must stay below 0.1 (" +
                               num(cfg.sim.dt * qmax) + ")");
        }
        bool have_h = take_number(*sec, "sim.", "horizon", cfg.sim.horizon, errs);
        bool have_b = take_number(*sec, "sim.", "burn_in", cfg.sim.burn_in, errs);
        if (have_h && have_b && !(cfg.sim.burn_in >= 0.0 && cfg.sim.burn_in < cfg.sim.horizon))
            errs.push_back("sim.burn_in: must lie in [0, sim.horizon) (" + num(cfg.sim.burn_in) +
                           " vs " + num(cfg.sim.horizon) + ")");
        if (take_int(*sec, "sim.", "n_paths", cfg.sim.n_paths, errs) && cfg.sim.n_paths < 1)
            errs.push_back("sim.n_paths: must be at least 1");
        take_seed(*sec, "sim.", "seed", cfg.sim.seed, errs);
        if (take_number(*sec, "sim.", "x0", cfg.sim.x0, errs, false) && model_ok &&
            std::abs(cfg.sim.x0) > cfg.model.B)
            errs.push_back("sim.x0: must lie in [-B, B] (" + num(cfg.sim.x0) + ")");
        if (take_int(*sec, "sim.", "regime0", cfg.sim.regime0, errs, false) && model_ok &&
            (cfg.sim.regime0 < 0 || cfg.sim.regime0 >= cfg.model.m0()))
            errs.push_back("sim.regime0: out of range (" + std::to_string(cfg.sim.regime0) + ")");
    }

    if (const json* sec = section(root, "solver", errs)) {
        check_extras(*sec, "solver.",
                     {"variant", "resolution", "damping", "max_sweeps", "centering", "ref_node",
                      "ref_regime"},
                     errs);
        std::string variant;
        if (take_string(*sec, "solver.", "variant", variant, errs)) {
            if (variant == "paper")
                cfg.solver.variant = RviVariant::paper;
            else if (variant == "semi-mdp")
                cfg.solver.variant = RviVariant::semi_mdp;
            else
                errs.push_back("solver.variant: must be 'paper' or 'semi-mdp' ('" + variant +
                               "')");
        }
        if (const json* res = get(*sec, "solver.", "resolution", errs)) {
            bool ok = res->is_array() && res->size() == 3;
            if (ok)
                for (const json& v : *res) ok &= v.is_number_integer();
            if (!ok) {
                errs.push_back("solver.resolution: must be an array of 3 integers");
            } else {
                for (int i = 0; i < 3; ++i) {
                    cfg.solver.resolution[i] = (*res)[i].get<int>();
                    if (cfg.solver.resolution[i] < 2)
                        errs.push_back("solver.resolution[" + std::to_string(i) +
                                       "]: must be at least 2");
                }
            }
        }
        if (take_number(*sec, "solver.", "damping", cfg.solver.damping, errs) &&
            !(cfg.solver.damping > 0.0 && cfg.solver.damping <= 1.0))
            errs.push_back("solver.damping: must lie in (0, 1] (" + num(cfg.solver.damping) +
                           ")");
        if (take_int(*sec, "solver.", "max_sweeps", cfg.solver.max_sweeps, errs) &&
            cfg.solver.max_sweeps < 1)
            errs.push_back("solver.max_sweeps: must be at least 1");
        std::string centering;
        if (sec->contains("centering") &&
            take_string(*sec, "solver.", "centering", centering, errs)) {
            if (centering == "per-regime")
                cfg.solver.centering = Centering::per_regime;
            else if (centering == "scalar")
                cfg.solver.centering = Centering::scalar;
            else
                errs.push_back("solver.centering: must be 'per-regime' or 'scalar' ('" +
                               centering + "')");
        }
        take_int(*sec, "solver.", "ref_node", cfg.solver.ref_node, errs, false);
        if (take_int(*sec, "solver.", "ref_regime", cfg.solver.ref_regime, errs, false) &&
            model_ok &&
            (cfg.solver.ref_regime < 0 || cfg.solver.ref_regime >= cfg.model.m0()))
            errs.push_back("solver.ref_regime: out of range");
    }
    cfg.solver.epsilon2 = cfg.tol.epsilon2;

    std::string mode;
    if (take_string(root, "", "mode", mode, errs)) {
        try {
            cfg.mode = mode_of_string(mode);
        } catch (const ConfigError& e) {
            errs.push_back(std::string("mode: ") + e.what());
        }
    }

    if (!errs.empty()) throw ValidationError(std::move(errs));
    return cfg;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace mcam

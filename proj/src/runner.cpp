#include "mcam/runner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <system_error>

#include <nlohmann/json.hpp>

#include "mcam/refine.hpp"
#include "mcam/sim.hpp"

namespace mcam {

namespace {

namespace fs = std::filesystem;

// shortest decimal form that parses back to the same bits
std::string fmt(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, const std::string& where) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ConfigError(where + ": not a number: '" + std::string(s) + "'");
    return v;
}

int parse_int(std::string_view s, const std::string& where) {
    int v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ConfigError(where + ": not an integer: '" + std::string(s) + "'");
    return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (true) {
        size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

// x matches a node up to rounding noise from hand-written files
bool near_node(double x, double node) {
    return std::abs(x - node) <= 1e-9 * std::max(1.0, std::abs(node));
}

nlohmann::json gain_json_obj(const GainEstimate& g) {
    return {{"gamma", g.gamma},
            {"method", std::string(to_string(g.method))},
            {"residual", g.residual},
            {"se", g.se}};
}

}  // namespace

const char* to_string(GainMethod method) {
    switch (method) {
        case GainMethod::invariant_measure: return "invariant_measure";
        case GainMethod::monte_carlo: return "monte_carlo";
        case GainMethod::rvi_residual: return "rvi_residual";
    }
    return "unknown";
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << text;
    if (!out.flush()) throw ConfigError("write failed: " + path);
}

std::string policy_to_csv(const Grid& g, const TabularPolicy& pol) {
    std::string out = "regime,x,a,s,l\n";
    for (int r = 0; r < pol.m0; ++r)
        for (int i = 0; i < g.size(); ++i) {
            const Control& u = pol.at(i, r);
            out += std::to_string(r) + ',' + fmt(g.x(i)) + ',' + fmt(u.a) + ',' + fmt(u.s) + ',' +
                   fmt(u.l) + '\n';
        }
    return out;
}

std::string values_to_csv(const Grid& g, const ValueTable& v, const ValueTable& u) {
    std::string out = "regime,x,V,U\n";
    for (int r = 0; r < v.m0; ++r)
        for (int i = 0; i < g.size(); ++i)
            out += std::to_string(r) + ',' + fmt(g.x(i)) + ',' + fmt(v.at(i, r)) + ',' +
                   fmt(u.at(i, r)) + '\n';
    return out;
}

std::string occupation_to_csv(const Grid& g, int m0, const std::vector<double>& occ) {
    std::string out = "regime,x,omega\n";
    for (int r = 0; r < m0; ++r)
        for (int i = 0; i < g.size(); ++i)
            out += std::to_string(r) + ',' + fmt(g.x(i)) + ',' +
                   fmt(occ[static_cast<size_t>(i) * m0 + r]) + '\n';
    return out;
}

std::string gain_to_json(const GainEstimate& g, const GainEstimate* mc) {
    nlohmann::json j = gain_json_obj(g);
    if (mc != nullptr) j["monte_carlo"] = gain_json_obj(*mc);
    return j.dump(2) + "\n";
}

LoadedPolicy policy_from_csv(const std::string& text, const Model& m) {
    struct Row {
        int regime;
        double x;
        Control u;
    };
    std::vector<Row> rows;

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = "policy csv line " + std::to_string(lineno);
        auto f = split_fields(line);
        if (lineno == 1) {
            if (f.size() != 5 || f[0] != "regime" || f[1] != "x" || f[2] != "a" || f[3] != "s" ||
                f[4] != "l")
                throw ConfigError(where + ": expected header 'regime,x,a,s,l'");
            continue;
        }
        if (f.size() != 5) throw ConfigError(where + ": expected 5 fields");
        Row r;
        r.regime = parse_int(f[0], where);
        r.x = parse_double(f[1], where);
        r.u.a = parse_double(f[2], where);
        r.u.s = parse_double(f[3], where);
        r.u.l = parse_double(f[4], where);
        if (r.regime < 0 || r.regime >= m.m0())
            throw ConfigError(where + ": regime " + std::to_string(r.regime) +
                              " outside [0, " + std::to_string(m.m0()) + ")");
        if (!std::isfinite(r.x) || !std::isfinite(r.u.a) || !std::isfinite(r.u.s) ||
            !std::isfinite(r.u.l))
            throw ConfigError(where + ": non-finite value");
        rows.push_back(r);
    }
    if (rows.empty()) throw ConfigError("policy csv: no data rows");

    // the step is the smallest positive node, recovered bit-exactly from our
    // own exports
    double h = std::numeric_limits<double>::infinity();
    for (const Row& r : rows)
        if (r.x > 0.0 && r.x < h) h = r.x;
    if (!std::isfinite(h)) throw ConfigError("policy csv: no positive x, cannot infer the step");

    Grid g;
    try {
        g = build_grid(m.B, h, m.K);
    } catch (const AlignmentError& e) {
        throw ConfigError(std::string("policy csv: inferred step h=") + fmt(h) +
                          " does not fit the model lattice: " + e.what());
    }

    LoadedPolicy lp;
    lp.grid = g;
    lp.policy.m0 = m.m0();
    lp.policy.u.assign(static_cast<size_t>(g.size()) * m.m0(), Control{});
    std::vector<char> seen(lp.policy.u.size(), 0);

    for (const Row& r : rows) {
        int node = g.index_of(r.x);
        if (!near_node(r.x, g.x(node)))
            throw ConfigError("policy csv: x=" + fmt(r.x) + " is not a lattice node (step " +
                              fmt(h) + ")");
        size_t idx = static_cast<size_t>(node) * m.m0() + r.regime;
        if (seen[idx])
            throw ConfigError("policy csv: duplicate row for x=" + fmt(r.x) + ", regime " +
                              std::to_string(r.regime));
        seen[idx] = 1;
        lp.policy.u[idx] = r.u;
    }

    // end nodes only reflect, so their rows may be absent
    int missing = 0;
    for (int i = 1; i + 1 < g.size(); ++i)
        for (int r = 0; r < m.m0(); ++r)
            if (!seen[static_cast<size_t>(i) * m.m0() + r]) ++missing;
    if (missing > 0)
        throw ConfigError("policy csv: " + std::to_string(missing) +
                          " interior (node, regime) rows missing");
    return lp;
}

ValueTable interp_values(const Grid& onto, const Grid& from, const ValueTable& u) {
    ValueTable out;
    out.m0 = u.m0;
    out.ref_regime = u.ref_regime;
    out.ref_node = onto.index_of(from.x(u.ref_node));
    out.v.assign(static_cast<size_t>(onto.size()) * u.m0, 0.0);
    for (int i = 0; i < onto.size(); ++i) {
        double x = std::clamp(onto.x(i), from.nodes.front(), from.nodes.back());
        auto it = std::upper_bound(from.nodes.begin(), from.nodes.end(), x);
        int j1 = static_cast<int>(it - from.nodes.begin());
        if (j1 == 0) j1 = 1;
        if (j1 >= from.size()) j1 = from.size() - 1;
        int j0 = j1 - 1;
        double t = (x - from.x(j0)) / (from.x(j1) - from.x(j0));
        for (int r = 0; r < u.m0; ++r)
            out.at(i, r) = (1.0 - t) * u.at(j0, r) + t * u.at(j1, r);
    }
    return out;
}

namespace {

GainEstimate mc_estimate(const PathStats& ps) {
    GainEstimate g;
    g.gamma = ps.time_avg_reward;
    g.method = GainMethod::monte_carlo;
    g.residual = 0.0;
    g.se = ps.se;
    return g;
}

}  // namespace

RunReport run(const RunConfig& cfg0, const std::string& out_dir, const RunOverrides& ov) {
    RunConfig cfg = cfg0;
    if (ov.seed) {
        cfg.train.seed = *ov.seed;
        cfg.sim.seed = *ov.seed;
    }
    if (ov.threads) {
        cfg.train.threads = *ov.threads;
        cfg.sim.threads = *ov.threads;
        cfg.solver.threads = *ov.threads;
    }
    if (ov.variant) cfg.solver.variant = *ov.variant;
    const RunMode mode = ov.mode ? *ov.mode : cfg.mode;
    const Model& m = cfg.model;

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + out_dir + ": " + ec.message());
    auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

    RunReport rep;
    switch (mode) {
        case RunMode::rvi: {
            Grid coarse = build_grid(m.B, cfg.dy, m.K);
            RviResult rr = rvi_solve(m, coarse, cfg.solver);
            write_text_file(path("policy.csv"), policy_to_csv(coarse, rr.policy));
            write_text_file(path("values.csv"), values_to_csv(coarse, rr.values, rr.values));
            write_text_file(path("gain.json"), gain_to_json(rr.gain));
            rep.gain = rr.gain;
            break;
        }
        case RunMode::refine:
        case RunMode::full: {
            Grid coarse = build_grid(m.B, cfg.dy, m.K);
            Grid fine = build_grid(m.B, cfg.dx, m.K);
            GlobalResult res = global_iterate(m, coarse, fine, cfg.solver, cfg.train,
                                              cfg.tol.epsilon1, cfg.tol.w1);
            write_text_file(path("policy.csv"), policy_to_csv(fine, res.fine_policy));
            ValueTable u_on_fine = interp_values(fine, coarse, res.u_coarse);
            write_text_file(path("values.csv"), values_to_csv(fine, res.v_fine, u_on_fine));
            res.net.save(path("net.json"));
            rep.gain = res.gain;
            rep.converged = res.converged;
            rep.rounds = res.rounds;
            if (!res.converged) rep.exit_code = 2;
            if (mode == RunMode::full) {
                PathStats ps =
                    simulate(m, fine, nearest_node_policy(fine, res.fine_policy), cfg.sim);
                rep.mc = mc_estimate(ps);
                rep.has_mc = true;
                write_text_file(path("occupation.csv"),
                                occupation_to_csv(fine, m.m0(), ps.occupation));
                write_text_file(path("gain.json"), gain_to_json(res.gain, &rep.mc));
            } else {
                write_text_file(path("gain.json"), gain_to_json(res.gain));
            }
            break;
        }
        case RunMode::simulate: {
            if (ov.policy_path.empty())
                throw ConfigError("simulate mode needs --policy with a policy csv");
            LoadedPolicy lp = policy_from_csv(read_text_file(ov.policy_path), m);
            PathStats ps =
                simulate(m, lp.grid, nearest_node_policy(lp.grid, lp.policy), cfg.sim);
            rep.gain = mc_estimate(ps);
            rep.mc = rep.gain;
            rep.has_mc = true;
            write_text_file(path("gain.json"), gain_to_json(rep.gain));
            write_text_file(path("occupation.csv"),
                            occupation_to_csv(lp.grid, m.m0(), ps.occupation));
            break;
        }
        case RunMode::eval_policy: {
            if (ov.policy_path.empty())
                throw ConfigError("eval-policy mode needs --policy with a policy csv");
            LoadedPolicy lp = policy_from_csv(read_text_file(ov.policy_path), m);
            PolicyValues pv = solve_policy_values(m, lp.grid, lp.policy, cfg.solver);
            write_text_file(path("gain.json"), gain_to_json(pv.gain));
            write_text_file(path("values.csv"), values_to_csv(lp.grid, pv.values, pv.values));
            rep.gain = pv.gain;
            break;
        }
    }
    return rep;
}

}  // namespace mcam

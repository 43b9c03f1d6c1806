#include "mcam/solver.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mcam/parallel.hpp"

namespace mcam {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) v[i] = lo + (hi - lo) * i / (n - 1);
    v.front() = lo;
    v.back() = hi;
    return v;
}

double reward_of(const Model& m, const State& st, const Control& u, const RewardFn& fo) {
    return fo ? fo(m, st, u) : reward(m, st, u);
}

void fill_entry(TransitionTable::Entry& e, const Model& m, const Grid& g, int node, int regime,
                std::vector<Control> actions, const RewardFn& fo) {
    int m0 = m.m0();
    if (g.is_boundary(node)) {
        e.flag = node == 0 ? BoundaryFlag::reflect_left : BoundaryFlag::reflect_right;
        e.reflect_to = node == 0 ? 1 : g.size() - 2;
        e.actions = {Control{}};
        e.p_up = {0.0};
        e.p_down = {0.0};
        e.dt = {0.0};
        e.f = {0.0};
        e.fdt = {0.0};
        e.p_switch.assign(static_cast<size_t>(m0), 0.0);
        return;
    }
    e.actions = std::move(actions);
    size_t na = e.actions.size();
    e.p_up.resize(na);
    e.p_down.resize(na);
    e.dt.resize(na);
    e.f.resize(na);
    e.fdt.resize(na);
    e.p_switch.assign(na * m0, 0.0);
    State st{g.x(node), regime};
    for (size_t k = 0; k < na; ++k) {
        TransitionRow row = interior_row(m, g.h, st, e.actions[k]);
        e.p_up[k] = row.p_up;
        e.p_down[k] = row.p_down;
        e.dt[k] = row.dt;
        for (int j = 0; j < m0; ++j) e.p_switch[k * m0 + j] = row.p_switch[j];
        e.f[k] = reward_of(m, st, e.actions[k], fo);
        e.fdt[k] = e.f[k] * row.dt;
    }
}

PolicyChain chain_from_table(const TransitionTable& t, const std::vector<int>& choice) {
    PolicyChain ch;
    ch.grid = t.grid;
    ch.m0 = t.m0;
    int ns = t.grid.size() * t.m0;
    ch.rows.resize(ns);
    ch.f.resize(ns);
    for (int idx = 0; idx < ns; ++idx) {
        const auto& e = t.entries[idx];
        int k = choice[idx];
        TransitionRow row;
        row.p_switch.assign(t.m0, 0.0);
        row.flag = e.flag;
        row.reflect_to = e.reflect_to;
        if (e.flag == BoundaryFlag::interior) {
            row.p_up = e.p_up[k];
            row.p_down = e.p_down[k];
            row.dt = e.dt[k];
            for (int j = 0; j < t.m0; ++j) row.p_switch[j] = e.p_switch[k * t.m0 + j];
            ch.f[idx] = e.f[k];
        } else {
            ch.f[idx] = 0.0;
        }
        ch.rows[idx] = std::move(row);
    }
    return ch;
}

// out = nu P over the chain's sparse rows
void apply_chain(const PolicyChain& ch, const std::vector<double>& nu, std::vector<double>& out) {
    int m0 = ch.m0;
    int n = ch.grid.size();
    out.assign(nu.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        for (int r = 0; r < m0; ++r) {
            int idx = i * m0 + r;
            double mass = nu[idx];
            if (mass == 0.0) continue;
            const TransitionRow& row = ch.rows[idx];
            if (row.flag != BoundaryFlag::interior) {
                out[row.reflect_to * m0 + r] += mass;
                continue;
            }
            if (row.p_up != 0.0) out[(i + 1) * m0 + r] += mass * row.p_up;
            if (row.p_down != 0.0) out[(i - 1) * m0 + r] += mass * row.p_down;
            for (int j = 0; j < m0; ++j) {
                if (row.p_switch[j] != 0.0) out[i * m0 + j] += mass * row.p_switch[j];
            }
        }
    }
}

double chain_residual(const PolicyChain& ch, const std::vector<double>& nu) {
    std::vector<double> out;
    apply_chain(ch, nu, out);
    double r = 0.0;
    for (size_t i = 0; i < nu.size(); ++i) r = std::max(r, std::abs(out[i] - nu[i]));
    return r;
}

}  // namespace

std::vector<Control> action_grid(const Model& m, const State& st, std::array<int, 3> res) {
    if (res[0] < 2 || res[1] < 2 || res[2] < 2)
        throw DomainError("action grid resolution must be at least 2 per axis");
    std::vector<Control> out;
    std::vector<double> as = linspace(m.Ma, 1.0, res[0]);
    if (st.x <= m.K) {
        out.reserve(as.size());
        for (double a : as) out.push_back({a, 0.0, 0.0});
        return out;
    }
    std::vector<double> ss = linspace(0.0, m.Ms, res[1]);
    std::vector<double> ls;
    ls.reserve(static_cast<size_t>(res[2]) + 1);
    ls.push_back(0.0);
    for (double l : linspace(m.Ml, 1.0, res[2])) ls.push_back(l);
    for (double a : as)
        for (double s : ss)
            for (double l : ls)
                if (s + l <= 1.0 + 1e-12) out.push_back({a, s, l});
    return out;
}

TransitionTable build_table(const Model& m, const Grid& g, std::array<int, 3> res,
                            const RewardFn& fo) {
    TransitionTable t;
    t.grid = g;
    t.m0 = m.m0();
    int n = g.size();
    t.entries.resize(static_cast<size_t>(n) * t.m0);
    for (int i = 0; i < n; ++i) {
        for (int r = 0; r < t.m0; ++r) {
            auto& e = t.entries[static_cast<size_t>(i) * t.m0 + r];
            std::vector<Control> acts;
            if (!g.is_boundary(i)) acts = action_grid(m, {g.x(i), r}, res);
            fill_entry(e, m, g, i, r, std::move(acts), fo);
        }
    }
    return t;
}

TransitionTable table_of_policy(const Model& m, const Grid& g, const TabularPolicy& pol,
                                const RewardFn& fo) {
    if (pol.nodes() != g.size() || pol.m0 != m.m0())
        throw DomainError("policy shape does not match the grid");
    TransitionTable t;
    t.grid = g;
    t.m0 = m.m0();
    int n = g.size();
    t.entries.resize(static_cast<size_t>(n) * t.m0);
    for (int i = 0; i < n; ++i) {
        for (int r = 0; r < t.m0; ++r) {
            const Control& u = pol.at(i, r);
            if (!g.is_boundary(i) && !is_admissible(m, {g.x(i), r}, u))
                throw DomainError("policy control at node " + std::to_string(i) + ", regime " +
                                  std::to_string(r) + " is not admissible");
            auto& e = t.entries[static_cast<size_t>(i) * t.m0 + r];
            fill_entry(e, m, g, i, r, {u}, fo);
        }
    }
    return t;
}

PolicyChain chain_of_policy(const Model& m, const Grid& g, const TabularPolicy& pol,
                            const RewardFn& fo) {
    TransitionTable t = table_of_policy(m, g, pol, fo);
    std::vector<int> choice(static_cast<size_t>(g.size()) * m.m0(), 0);
    return chain_from_table(t, choice);
}

std::vector<double> stationary_distribution(const PolicyChain& ch, StatMethod method) {
    int ns = ch.states();
    std::vector<double> nu(ns);

    if (method == StatMethod::linear_solve) {
        int m0 = ch.m0;
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(ns, ns);
        for (int i = 0; i < ch.grid.size(); ++i) {
            for (int r = 0; r < m0; ++r) {
                int idx = i * m0 + r;
                const TransitionRow& row = ch.rows[idx];
                if (row.flag != BoundaryFlag::interior) {
                    A(row.reflect_to * m0 + r, idx) += 1.0;
                } else {
                    if (row.p_up != 0.0) A((i + 1) * m0 + r, idx) += row.p_up;
                    if (row.p_down != 0.0) A((i - 1) * m0 + r, idx) += row.p_down;
                    for (int j = 0; j < m0; ++j) A(i * m0 + j, idx) += row.p_switch[j];
                }
                A(idx, idx) -= 1.0;
            }
        }
        // replace one balance equation with the normalization
        for (int j = 0; j < ns; ++j) A(0, j) = 1.0;
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(ns);
        rhs(0) = 1.0;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
        if (!lu.isInvertible())
            throw RankError("chain is reducible or degenerate: no unique stationary distribution");
        Eigen::VectorXd sol = lu.solve(rhs);
        for (int i = 0; i < ns; ++i) nu[i] = sol(i);
    } else {
        std::fill(nu.begin(), nu.end(), 1.0 / ns);
        std::vector<double> out;
        constexpr long kMaxIters = 20000000;
        bool done = false;
        for (long it = 1; it <= kMaxIters; ++it) {
            apply_chain(ch, nu, out);
            for (int i = 0; i < ns; ++i) nu[i] = 0.5 * (nu[i] + out[i]);  // lazy step
            if (it % 500 == 0 && chain_residual(ch, nu) < 1e-13) {
                done = true;
                break;
            }
        }
        if (!done && chain_residual(ch, nu) >= 1e-10)
            throw ConvergenceError("power iteration did not reach the stationary distribution",
                                   chain_residual(ch, nu));
    }

    double total = 0.0;
    for (double& v : nu) {
        if (v < 0.0) {
            if (v < -1e-9) throw RankError("stationary solve produced negative mass");
            v = 0.0;
        }
        total += v;
    }
    if (!(total > 0.0)) throw RankError("stationary solve produced zero mass");
    for (double& v : nu) v /= total;

    double resid = chain_residual(ch, nu);
    if (resid > 1e-8)
        throw RankError("stationary distribution residual too large: " + std::to_string(resid));
    return nu;
}

std::vector<double> occupation_measure(const PolicyChain& ch, const std::vector<double>& nu) {
    std::vector<double> w(nu.size());
    double total = 0.0;
    for (size_t i = 0; i < nu.size(); ++i) {
        w[i] = ch.rows[i].dt * nu[i];
        total += w[i];
    }
    if (!(total > 0.0)) throw RankError("occupation measure has zero total holding time");
    for (double& v : w) v /= total;
    return w;
}

std::pair<double, double> gain_forms(const PolicyChain& ch, const std::vector<double>& nu) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < nu.size(); ++i) {
        num += ch.f[i] * ch.rows[i].dt * nu[i];
        den += ch.rows[i].dt * nu[i];
    }
    double ratio = num / den;
    std::vector<double> w = occupation_measure(ch, nu);
    double mean = 0.0;
    for (size_t i = 0; i < nu.size(); ++i) mean += ch.f[i] * w[i];
    return {ratio, mean};
}

GainEstimate gain_of_policy(const Model& m, const Grid& g, const TabularPolicy& pol,
                            StatMethod method, const RewardFn& fo) {
    PolicyChain ch = chain_of_policy(m, g, pol, fo);
    std::vector<double> nu = stationary_distribution(ch, method);
    auto [ratio, mean] = gain_forms(ch, nu);
    if (std::abs(ratio - mean) > 1e-12 * std::max(1.0, std::abs(ratio)))
        throw Error("gain forms disagree beyond rounding");
    GainEstimate est;
    est.gamma = ratio;
    est.method = GainMethod::invariant_measure;
    est.residual = chain_residual(ch, nu);
    return est;
}

double bellman_backup(const Model& m, const Grid& g, const ValueTable& V, int node, int regime,
                      const Control& u, const RewardFn& fo) {
    if (node < 0 || node >= g.size()) throw IndexError("node index out of range");
    if (regime < 0 || regime >= V.m0) throw IndexError("regime index out of range");
    TransitionRow row = transitions(m, g, node, regime, u);
    if (row.flag != BoundaryFlag::interior) return V.at(row.reflect_to, regime);
    double s = row.p_up * V.at(node + 1, regime) + row.p_down * V.at(node - 1, regime);
    for (int j = 0; j < V.m0; ++j)
        if (row.p_switch[j] != 0.0) s += row.p_switch[j] * V.at(node, j);
    return s + reward_of(m, {g.x(node), regime}, u, fo) * row.dt;
}

std::pair<double, double> boundary_extrapolate(const ValueTable& V, int regime) {
    if (regime < 0 || regime >= V.m0) throw IndexError("regime index out of range");
    int n = V.nodes();
    if (n < 2) throw DomainError("value table too small to extrapolate");
    double left = 2.0 * V.at(0, regime) - V.at(1, regime);
    double right = 2.0 * V.at(n - 1, regime) - V.at(n - 2, regime);
    return {left, right};
}

void recenter(ValueTable& V, Centering mode) {
    if (mode == Centering::scalar) {
        double c = V.at(V.ref_node, V.ref_regime);
        for (double& v : V.v) v -= c;
    } else {
        for (int r = 0; r < V.m0; ++r) {
            double c = V.at(V.ref_node, r);
            for (int i = 0; i < V.nodes(); ++i) V.at(i, r) -= c;
        }
    }
}

RviResult rvi_solve(const Model& m, const Grid& g, const SolverConfig& cfg, const RewardFn& fo,
                    const TransitionTable* table, const ValueTable* warm, double warm_gamma) {
    if (!(cfg.damping > 0.0) || cfg.damping > 1.0)
        throw DomainError("damping must lie in (0, 1]");
    TransitionTable local;
    if (!table) {
        local = build_table(m, g, cfg.resolution, fo);
        table = &local;
    }
    const Grid& grid = table->grid;
    const int n = grid.size();
    const int m0 = table->m0;
    const int ns = n * m0;

    int ref_node = cfg.ref_node >= 0 ? cfg.ref_node : grid.index_of(0.0);
    int ref_reg = cfg.ref_regime;
    if (ref_node <= 0 || ref_node >= n - 1)
        throw DomainError("reference node must be interior");
    if (ref_reg < 0 || ref_reg >= m0) throw IndexError("reference regime out of range");
    const int ref_idx = ref_node * m0 + ref_reg;

    const bool semi = cfg.variant == RviVariant::semi_mdp;
    const Centering centering = semi ? Centering::scalar : cfg.centering;
    const double tau = cfg.damping;

    std::vector<double> U(ns, 0.0), S(ns, 0.0);
    std::vector<int> choice(ns, 0);
    if (warm) {
        if (static_cast<int>(warm->v.size()) != ns)
            throw DomainError("warm-start value table has the wrong shape");
        ValueTable w = *warm;
        w.ref_node = ref_node;
        w.ref_regime = ref_reg;
        recenter(w, centering);
        U = w.v;
    }
    double gamma = warm_gamma;

    ThreadPool pool(cfg.threads);
    double resid = kInf, max_span = 0.0, dgamma = kInf;
    int sweeps_done = 0;
    bool converged = false;

    for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
        if (semi) {
            // running gain from the corrected backup at the reference state
            const auto& e = table->at(ref_node, ref_reg);
            double best = -kInf;
            int bk = 0;
            double up = U[(ref_node + 1) * m0 + ref_reg];
            double dn = U[(ref_node - 1) * m0 + ref_reg];
            for (size_t k = 0; k < e.actions.size(); ++k) {
                double s = e.p_up[k] * up + e.p_down[k] * dn + e.fdt[k] - gamma * e.dt[k];
                const double* ps = &e.p_switch[k * m0];
                for (int j = 0; j < m0; ++j)
                    if (ps[j] != 0.0) s += ps[j] * U[ref_node * m0 + j];
                if (s > best) {
                    best = s;
                    bk = static_cast<int>(k);
                }
            }
            double g_new = gamma + (best - U[ref_idx]) / e.dt[bk];
            dgamma = std::abs(g_new - gamma);
            gamma = g_new;
        }

        pool.for_chunks(ns, 16, [&](long lo, long hi, int) {
            for (long idx = lo; idx < hi; ++idx) {
                int i = static_cast<int>(idx) / m0;
                int r = static_cast<int>(idx) % m0;
                const auto& e = table->entries[idx];
                if (e.flag != BoundaryFlag::interior) {
                    S[idx] = U[e.reflect_to * m0 + r];
                    choice[idx] = 0;
                    continue;
                }
                // clamped reads: synthetic tables may place interior-style
                // rows at the ends with the offending probability zero
                double up = U[std::min(i + 1, n - 1) * m0 + r];
                double dn = U[std::max(i - 1, 0) * m0 + r];
                double best = -kInf;
                int bk = 0;
                const size_t na = e.actions.size();
                for (size_t k = 0; k < na; ++k) {
                    double s = e.p_up[k] * up + e.p_down[k] * dn + e.fdt[k];
                    if (semi) s -= gamma * e.dt[k];
                    const double* ps = &e.p_switch[k * m0];
                    for (int j = 0; j < m0; ++j)
                        if (ps[j] != 0.0) s += ps[j] * U[i * m0 + j];
                    if (s > best) {
                        best = s;
                        bk = static_cast<int>(k);
                    }
                }
                S[idx] = best;
                choice[idx] = bk;
            }
        });

        double c_scalar = S[ref_idx];
        resid = 0.0;
        double dmin = kInf, dmax = -kInf;
        for (int idx = 0; idx < ns; ++idx) {
            double c = centering == Centering::scalar ? c_scalar : S[ref_node * m0 + idx % m0];
            double d = (S[idx] - c) - U[idx];
            if (d < dmin) dmin = d;
            if (d > dmax) dmax = d;
            double step = tau * d;
            U[idx] += step;
            resid = std::max(resid, std::abs(step));
        }
        max_span = std::max(max_span, dmax - dmin);
        if (!std::isfinite(resid)) throw DivergenceError("value iterate diverged");

        sweeps_done = sweep;
        if (resid < cfg.epsilon2 && (!semi || dgamma < cfg.epsilon2)) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw ConvergenceError("relative value iteration hit the sweep limit", resid);

    RviResult out;
    out.sweeps = sweeps_done;
    out.residual = resid;
    out.max_span = max_span;

    out.policy.m0 = m0;
    out.policy.u.resize(ns);
    for (int idx = 0; idx < ns; ++idx)
        out.policy.u[idx] = table->entries[idx].actions[choice[idx]];

    out.values.v = U;
    out.values.m0 = m0;
    out.values.ref_node = ref_node;
    out.values.ref_regime = ref_reg;

    if (semi) {
        out.iterate_gain = {gamma, GainMethod::rvi_residual, resid, 0.0};
    } else {
        // classic read-out: centering constant over the holding time
        const auto& e = table->at(ref_node, ref_reg);
        double dt_ref = e.dt[choice[ref_idx]];
        out.iterate_gain = {S[ref_idx] / dt_ref, GainMethod::rvi_residual, resid, 0.0};
    }

    PolicyChain ch = chain_from_table(*table, choice);
    std::vector<double> nu = stationary_distribution(ch, StatMethod::linear_solve);
    auto [ratio, mean] = gain_forms(ch, nu);
    (void)mean;
    out.gain = {ratio, GainMethod::invariant_measure, chain_residual(ch, nu), 0.0};
    return out;
}

EvalResult evaluate_policy(const Model& m, const Grid& g, const TabularPolicy& pol,
                           const SolverConfig& cfg, const RewardFn& fo, const ValueTable* warm,
                           double warm_gamma) {
    TransitionTable t = table_of_policy(m, g, pol, fo);
    RviResult r = rvi_solve(m, g, cfg, fo, &t, warm, warm_gamma);
    EvalResult out;
    out.values = std::move(r.values);
    out.gamma = r.iterate_gain.gamma;
    out.sweeps = r.sweeps;
    out.residual = r.residual;
    return out;
}

}  // namespace mcam

#include "mcam/sim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mcam/errors.hpp"
#include "mcam/parallel.hpp"

namespace mcam {

namespace {

struct Kahan {
    double sum = 0.0, c = 0.0;
    void add(double v) {
        double y = v - c;
        double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
};

double max_exit_rate(const Model& m) {
    double q = 0.0;
    for (int i = 0; i < m.m0(); ++i) q = std::max(q, std::abs(m.q_at(i, i)));
    return q;
}

void check_dt(const Model& m, double dt) {
    if (!(dt > 0.0) || dt >= 1.0)
        throw ConfigError("sim dt must lie in (0, 1), got " + std::to_string(dt));
    if (dt * max_exit_rate(m) >= 0.1)
        throw ConfigError("sim dt too coarse: dt * max|q_jj| must stay below 0.1 for "
                          "first-order switch probabilities");
}

void check_config(const Model& m, const SimConfig& cfg) {
    check_dt(m, cfg.dt);
    if (cfg.n_paths < 1) throw ConfigError("sim n_paths must be at least 1");
    if (cfg.burn_in < 0.0 || cfg.burn_in >= cfg.horizon)
        throw ConfigError("sim burn_in must lie in [0, horizon)");
    if (std::abs(cfg.x0) > m.B) throw ConfigError("sim x0 must lie in [-B, B]");
    if (cfg.regime0 < 0 || cfg.regime0 >= m.m0())
        throw ConfigError("sim regime0 out of range");
}

std::mt19937_64 path_rng(std::uint64_t seed, std::uint32_t stream, int path) {
    std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     stream, static_cast<std::uint32_t>(path)};
    return std::mt19937_64(sq);
}

// Mean and across-path standard error of per-path averages.
std::pair<double, double> pooled(const std::vector<double>& per_path) {
    const int n = static_cast<int>(per_path.size());
    double mean = 0.0;
    for (double v : per_path) mean += v;
    mean /= n;
    if (n < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double v : per_path) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n))};
}

}  // namespace

State step_with(const Model& m, const State& st, const Control& u, double dt, double z,
                double u_switch) {
    check_dt(m, dt);
    const double b = drift(m, st, u);
    const double s2 = diffusion_sq(m, st, u);
    double x = st.x + b * dt + std::sqrt(s2 * dt) * z;
    x = std::clamp(x, -m.B, m.B);
    int regime = st.regime;
    double acc = 0.0;
    for (int j = 0; j < m.m0(); ++j) {
        if (j == st.regime) continue;
        acc += m.q_at(st.regime, j) * dt;
        if (u_switch < acc) {
            regime = j;
            break;
        }
    }
    return {x, regime};
}

State step(const Model& m, const State& st, const Control& u, double dt, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    const double z = nd(rng);
    const double us = ud(rng);
    return step_with(m, st, u, dt, z, us);
}

PolicyFn nearest_node_policy(const Grid& g, const TabularPolicy& pol) {
    if (pol.nodes() != g.size())
        throw DomainError("tabular policy does not match the lookup grid");
    return [g, pol](const State& st) { return pol.at(g.index_of(st.x), st.regime); };
}

PathStats simulate(const Model& m, const Grid& bins, const PolicyFn& policy, const SimConfig& cfg,
                   const RewardFn& f_override) {
    check_config(m, cfg);
    if (!policy) throw ConfigError("simulate needs a policy");
    const int m0 = m.m0();
    const int nb = bins.size();

    // Spot-check the feedback rule on the bin nodes inside the cap; the hot
    // loop then trusts it.
    for (int i = 0; i < nb; ++i) {
        if (std::abs(bins.x(i)) > m.B) continue;
        for (int r = 0; r < m0; ++r) {
            State st{bins.x(i), r};
            if (!is_admissible(m, st, policy(st)))
                throw DomainError("policy emits an inadmissible control at x = " +
                                  std::to_string(st.x) + ", regime " + std::to_string(r));
        }
    }

    const long long total = std::llround(cfg.horizon / cfg.dt);
    const long long burn = std::llround(cfg.burn_in / cfg.dt);
    const long long counted = total - burn;

    std::vector<double> avgs(cfg.n_paths, 0.0);
    std::vector<std::vector<long long>> bin_counts(
        cfg.n_paths, std::vector<long long>(static_cast<size_t>(nb) * m0, 0));
    std::vector<std::vector<long long>> regime_counts(cfg.n_paths,
                                                      std::vector<long long>(m0, 0));

    ThreadPool pool(cfg.threads);
    pool.for_chunks(cfg.n_paths, cfg.n_paths, [&](long lo, long hi, int) {
        for (long p = lo; p < hi; ++p) {
            auto rng = path_rng(cfg.seed, 1, static_cast<int>(p));
            std::normal_distribution<double> nd(0.0, 1.0);
            std::uniform_real_distribution<double> ud(0.0, 1.0);
            State st{cfg.x0, cfg.regime0};
            Kahan acc;
            auto& counts = bin_counts[p];
            auto& rcounts = regime_counts[p];
            for (long long t = 0; t < total; ++t) {
                const Control u = policy(st);
                if (t >= burn) {
                    acc.add(f_override ? f_override(m, st, u) : reward(m, st, u));
                    ++counts[static_cast<size_t>(bins.index_of(st.x)) * m0 + st.regime];
                    ++rcounts[st.regime];
                }
                st = step_with(m, st, u, cfg.dt, nd(rng), ud(rng));
            }
            avgs[p] = acc.sum / static_cast<double>(counted);
        }
    });

    PathStats out;
    out.per_path = std::move(avgs);
    std::tie(out.time_avg_reward, out.se) = pooled(out.per_path);

    // dt is constant, so time fractions reduce to visit counts.
    const double total_counted = static_cast<double>(counted) * cfg.n_paths;
    out.occupation.assign(static_cast<size_t>(nb) * m0, 0.0);
    out.regime_fractions.assign(m0, 0.0);
    out.regime_per_path.assign(static_cast<size_t>(cfg.n_paths) * m0, 0.0);
    for (int p = 0; p < cfg.n_paths; ++p) {
        for (size_t i = 0; i < out.occupation.size(); ++i)
            out.occupation[i] += static_cast<double>(bin_counts[p][i]);
        for (int r = 0; r < m0; ++r) {
            out.regime_fractions[r] += static_cast<double>(regime_counts[p][r]);
            out.regime_per_path[static_cast<size_t>(p) * m0 + r] =
                static_cast<double>(regime_counts[p][r]) / static_cast<double>(counted);
        }
    }
    for (double& v : out.occupation) v /= total_counted;
    for (double& v : out.regime_fractions) v /= total_counted;
    return out;
}

std::vector<double> occupation_vs_stationary(const Model& m, const Grid& g,
                                             const TabularPolicy& pol, const SimConfig& cfg,
                                             const RewardFn& f_override) {
    PolicyChain chain = chain_of_policy(m, g, pol, f_override);
    const std::vector<double> nu = stationary_distribution(chain, StatMethod::linear_solve);
    const std::vector<double> omega = occupation_measure(chain, nu);
    const PathStats stats = simulate(m, g, nearest_node_policy(g, pol), cfg, f_override);

    std::vector<double> sup(m.m0(), 0.0);
    for (int i = 0; i < g.size(); ++i)
        for (int r = 0; r < m.m0(); ++r) {
            const size_t idx = static_cast<size_t>(i) * m.m0() + r;
            sup[r] = std::max(sup[r], std::abs(stats.occupation[idx] - omega[idx]));
        }
    return sup;
}

ChainStats chain_time_average(const PolicyChain& chain, long long steps, long long burn_steps,
                              int n_paths, std::uint64_t seed, int threads) {
    if (chain.states() == 0) throw DomainError("empty chain");
    if (steps < 1) throw ConfigError("chain sampling needs at least one step");
    if (burn_steps < 0 || burn_steps >= steps)
        throw ConfigError("chain burn_steps must lie in [0, steps)");
    if (n_paths < 1) throw ConfigError("chain sampling needs at least one path");

    const int m0 = chain.m0;
    const int start = chain.grid.index_of(0.0) * m0;

    std::vector<double> avgs(n_paths, 0.0);
    std::vector<std::vector<double>> time_in(
        n_paths, std::vector<double>(static_cast<size_t>(chain.states()), 0.0));
    ThreadPool pool(threads);
    pool.for_chunks(n_paths, n_paths, [&](long lo, long hi, int) {
        for (long p = lo; p < hi; ++p) {
            auto rng = path_rng(seed, 2, static_cast<int>(p));
            std::uniform_real_distribution<double> ud(0.0, 1.0);
            int idx = start;
            Kahan fdt, dt;
            auto& occ = time_in[p];
            for (long long t = 0; t < steps; ++t) {
                const TransitionRow& row = chain.rows[idx];
                if (t >= burn_steps && row.dt > 0.0) {
                    fdt.add(chain.f[idx] * row.dt);
                    dt.add(row.dt);
                    occ[idx] += row.dt;
                }
                const int node = idx / m0;
                const int regime = idx % m0;
                if (row.flag != BoundaryFlag::interior) {
                    idx = row.reflect_to * m0 + regime;
                    continue;
                }
                const double u = ud(rng);
                double acc = row.p_up;
                if (u < acc) {
                    idx = (node + 1) * m0 + regime;
                    continue;
                }
                acc += row.p_down;
                if (u < acc) {
                    idx = (node - 1) * m0 + regime;
                    continue;
                }
                bool moved = false;
                for (int j = 0; j < m0; ++j) {
                    if (j == regime) continue;
                    acc += row.p_switch[j];
                    if (u < acc) {
                        idx = node * m0 + j;
                        moved = true;
                        break;
                    }
                }
                (void)moved;  // rounding residue: stay put
            }
            if (dt.sum <= 0.0)
                throw DomainError("chain trajectory spent no time in interior states");
            avgs[p] = fdt.sum / dt.sum;
        }
    });

    ChainStats out;
    out.per_path = std::move(avgs);
    std::tie(out.time_avg_reward, out.se) = pooled(out.per_path);
    out.occupation.assign(static_cast<size_t>(chain.states()), 0.0);
    double total_time = 0.0;
    for (int p = 0; p < n_paths; ++p)
        for (size_t i = 0; i < out.occupation.size(); ++i) {
            out.occupation[i] += time_in[p][i];
            total_time += time_in[p][i];
        }
    for (double& v : out.occupation) v /= total_time;
    return out;
}

}  // namespace mcam

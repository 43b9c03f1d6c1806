#pragma once

#include <array>
#include <functional>
#include <utility>
#include <vector>

#include "mcam/lattice.hpp"

namespace mcam {

// Optional replacement for the running reward (used to cross-check gain
// estimators by injecting a known constant).
using RewardFn = std::function<double(const Model&, const State&, const Control&)>;

// Relative (centered) value estimates, node-major.
struct ValueTable {
    std::vector<double> v;
    int m0 = 1;
    int ref_node = 0;
    int ref_regime = 0;

    int nodes() const { return static_cast<int>(v.size()) / m0; }
    double& at(int node, int regime) { return v[static_cast<size_t>(node) * m0 + regime]; }
    double at(int node, int regime) const { return v[static_cast<size_t>(node) * m0 + regime]; }
};

struct TabularPolicy {
    std::vector<Control> u;
    int m0 = 1;

    int nodes() const { return static_cast<int>(u.size()) / m0; }
    Control& at(int node, int regime) { return u[static_cast<size_t>(node) * m0 + regime]; }
    const Control& at(int node, int regime) const {
        return u[static_cast<size_t>(node) * m0 + regime];
    }
};

enum class GainMethod { invariant_measure, monte_carlo, rvi_residual };

struct GainEstimate {
    double gamma = 0.0;
    GainMethod method = GainMethod::invariant_measure;
    double residual = 0.0;
    double se = 0.0;
};

enum class RviVariant { paper, semi_mdp };

// Centering of the relative-value iterate. The semi-Markov variant always
// uses the scalar reference; the flag applies to the plain variant.
enum class Centering { per_regime, scalar };

enum class StatMethod { linear_solve, power_iteration };

struct SolverConfig {
    std::array<int, 3> resolution{11, 11, 11};
    double epsilon2 = 1e-6;
    int max_sweeps = 100000;
    RviVariant variant = RviVariant::paper;
    Centering centering = Centering::per_regime;
    double damping = 0.5;  // in (0, 1]; the chain is bipartite, 1.0 oscillates
    int ref_node = -1;     // -1: node nearest x = 0
    int ref_regime = 0;
    int threads = 0;  // 0: MCAM_THREADS env var, else hardware
};

// Admissible action set at a state, ascending lexicographic in (a, s, l).
// Resolution counts per axis must be >= 2.
std::vector<Control> action_grid(const Model& m, const State& st, std::array<int, 3> res);

// One-step law for every (node, regime, action), precomputed once per solve.
struct TransitionTable {
    struct Entry {
        std::vector<Control> actions;
        std::vector<double> p_up, p_down, dt, f, fdt;
        std::vector<double> p_switch;  // action-major, m0 per action
        BoundaryFlag flag = BoundaryFlag::interior;
        int reflect_to = -1;
    };
    Grid grid;
    int m0 = 1;
    std::vector<Entry> entries;  // node-major

    const Entry& at(int node, int regime) const {
        return entries[static_cast<size_t>(node) * m0 + regime];
    }
};

TransitionTable build_table(const Model& m, const Grid& g, std::array<int, 3> res,
                            const RewardFn& f_override = {});

// Singleton-action table for evaluating a fixed policy.
TransitionTable table_of_policy(const Model& m, const Grid& g, const TabularPolicy& pol,
                                const RewardFn& f_override = {});

struct RviResult {
    TabularPolicy policy;
    ValueTable values;        // centered relative values
    GainEstimate gain;        // invariant-measure gain of the final policy
    GainEstimate iterate_gain;  // the iteration's own running estimate
    int sweeps = 0;
    double residual = 0.0;
    double max_span = 0.0;  // largest Bellman-residual span seen
};

// Relative value iteration over the controlled chain. A prebuilt table may be
// injected (synthetic chains in tests, reuse across warm-started calls);
// otherwise one is built from the model. Warm values must share the solve's
// reference state.
RviResult rvi_solve(const Model& m, const Grid& g, const SolverConfig& cfg,
                    const RewardFn& f_override = {}, const TransitionTable* table = nullptr,
                    const ValueTable* warm = nullptr, double warm_gamma = 0.0);

struct EvalResult {
    ValueTable values;
    double gamma = 0.0;  // gain estimate of the evaluation iteration
    int sweeps = 0;
    double residual = 0.0;
};

// Iterated centered evaluation of a fixed policy (the solve with the action
// set pinned to the policy).
EvalResult evaluate_policy(const Model& m, const Grid& g, const TabularPolicy& pol,
                           const SolverConfig& cfg, const RewardFn& f_override = {},
                           const ValueTable* warm = nullptr, double warm_gamma = 0.0);

// The chain induced by one fixed policy: one row per (node, regime).
struct PolicyChain {
    Grid grid;
    int m0 = 1;
    std::vector<TransitionRow> rows;  // node-major
    std::vector<double> f;

    int states() const { return static_cast<int>(rows.size()); }
};

PolicyChain chain_of_policy(const Model& m, const Grid& g, const TabularPolicy& pol,
                            const RewardFn& f_override = {});

// Stationary distribution nu of the embedded jump chain (nu P = nu, sums to
// one). Throws RankError when the chain has no unique distribution.
std::vector<double> stationary_distribution(const PolicyChain& chain, StatMethod method);

// Time-weighted occupation measure omega_i = dt_i nu_i / sum(dt nu).
std::vector<double> occupation_measure(const PolicyChain& chain, const std::vector<double>& nu);

// The two algebraic forms of the long-run average reward: the time-weighted
// ratio and the omega-weighted mean. They agree to rounding error.
std::pair<double, double> gain_forms(const PolicyChain& chain, const std::vector<double>& nu);

GainEstimate gain_of_policy(const Model& m, const Grid& g, const TabularPolicy& pol,
                            StatMethod method = StatMethod::linear_solve,
                            const RewardFn& f_override = {});

// Value of one control at one state against a centered table.
double bellman_backup(const Model& m, const Grid& g, const ValueTable& values, int node,
                      int regime, const Control& u, const RewardFn& f_override = {});

// Linear ghost values one step outside each end of the grid:
// left = 2 V(x_first) - V(x_first + h), right = 2 V(x_last) - V(x_last - h).
std::pair<double, double> boundary_extrapolate(const ValueTable& values, int regime);

// Subtracts the reference value(s) in place.
void recenter(ValueTable& values, Centering mode);

}  // namespace mcam

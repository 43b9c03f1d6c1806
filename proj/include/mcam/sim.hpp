#pragma once

#include <cstdint>
#include <random>

#include "mcam/solver.hpp"

namespace mcam {

// Feedback rule queried at the continuous state (not just at grid nodes).
using PolicyFn = std::function<Control(const State&)>;

struct SimConfig {
    double dt = 0.01;      // Euler step
    double horizon = 2e5;  // simulated time per path
    double burn_in = 1e4;  // discarded initial stretch
    int n_paths = 16;
    double x0 = 0.0;  // start state
    int regime0 = 0;
    std::uint64_t seed = 0;
    int threads = 0;
};

// Monte-Carlo estimate of the long-run reward rate plus the empirical state
// distribution. Occupation is node-major x regime over the bin grid and sums
// to one, as do the regime fractions.
struct PathStats {
    double time_avg_reward = 0.0;
    double se = 0.0;  // across paths; 0 when n_paths == 1
    std::vector<double> per_path;
    std::vector<double> occupation;
    std::vector<double> regime_fractions;
    std::vector<double> regime_per_path;  // path-major x regime, rows sum to 1
};

// One Euler-Maruyama step: x' = clamp(x + b dt + sigma sqrt(dt) Z, -B, B),
// regime switches to j with probability q_ij dt. Requires
// dt max_j |q_jj| < 0.1 so the first-order switch probabilities are valid.
State step(const Model& m, const State& st, const Control& u, double dt, std::mt19937_64& rng);

// Deterministic kernel behind step: z is the standard normal draw, u_switch
// the uniform deciding the regime transition.
State step_with(const Model& m, const State& st, const Control& u, double dt, double z,
                double u_switch);

// Nearest-node table lookup as a feedback rule; ties resolve upward.
PolicyFn nearest_node_policy(const Grid& g, const TabularPolicy& pol);

// Simulates n_paths independent paths from (x0, regime0) and time-averages
// the running reward past the burn-in. Paths get deterministic per-path RNG
// streams, so results are identical for any thread count. Occupation bins are
// the nodes of `bins`.
PathStats simulate(const Model& m, const Grid& bins, const PolicyFn& policy, const SimConfig& cfg,
                   const RewardFn& f_override = {});

// Sup over bins of |empirical occupation - omega| for each regime, where
// omega is the chain's time-weighted stationary measure under the same
// tabular policy.
std::vector<double> occupation_vs_stationary(const Model& m, const Grid& g,
                                             const TabularPolicy& pol, const SimConfig& cfg,
                                             const RewardFn& f_override = {});

struct ChainStats {
    double time_avg_reward = 0.0;
    double se = 0.0;
    std::vector<double> per_path;
    std::vector<double> occupation;  // dt-weighted state fractions, sums to 1
};

// dt-weighted time average of f along sampled trajectories of the
// approximating chain itself. Unbiased for the chain gain, so it
// cross-checks the stationary-distribution estimators without the
// discretization gap an SDE path would add. Paths start at the node nearest
// x = 0 in regime 0.
ChainStats chain_time_average(const PolicyChain& chain, long long steps, long long burn_steps,
                              int n_paths, std::uint64_t seed, int threads = 0);

}  // namespace mcam

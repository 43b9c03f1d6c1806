#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mcam/solver.hpp"

namespace mcam {

struct TrainConfig {
    double h1 = 1e-3;       // initial learning rate, halved on rejected steps
    double epsilon3 = 1e-6;  // fit stopping tolerance on the MSE decrease
    double epsilon4 = 1e-7;  // ascent stopping tolerance on the gain increase
    int max_epochs_fit = 5000;
    int max_epochs_ascend = 2000;
    uint64_t seed = 0;
    int threads = 0;
};

// Two-layer tanh trunk with three affine heads squashed into the admissible
// box. The dividend head carries a dead zone: a squashed value below the
// threshold snaps to exactly zero, since admissible dividend fractions are
// either 0 or at least Ml and the all-zero optimum is otherwise unreachable.
class PolicyNet {
public:
    static constexpr int kWidth = 64;
    static constexpr double kDeadZone = 0.01;

    PolicyNet(int m0, double x_scale, uint64_t seed);

    int m0() const { return m0_; }
    double x_scale() const { return x_scale_; }
    int param_count() const { return static_cast<int>(theta_.size()); }
    std::vector<double>& raw_params() { return theta_; }
    const std::vector<double>& raw_params() const { return theta_; }

    // raw head outputs before squashing
    void raw_heads(double x, int regime, double out[3]) const;
    Control forward(const Model& m, const State& st) const;

    std::string to_json() const;
    static PolicyNet from_json(const std::string& text);
    void save(const std::string& path) const;
    static PolicyNet load(const std::string& path);

private:
    friend struct NetOps;
    int m0_;
    double x_scale_;
    std::vector<double> theta_;
    // layer offsets inside theta_
    int w1_, b1_, w2_, b2_, w3_, b3_;
};

struct FitReport {
    double mse = 0.0;
    double max_abs_dev = 0.0;
    int epochs = 0;
    double final_h1 = 0.0;
    bool converged = false;
};

// Supervised projection of a tabular policy onto the net (interior nodes
// only; boundary entries carry no optimized control). Least-squares head
// initialization on the current trunk features, then damped full-batch
// gradient descent. Accepted steps never increase the loss.
FitReport fit_to_tabular(PolicyNet& net, const Model& m, const Grid& coarse,
                         const TabularPolicy& targets, const TrainConfig& cfg);

// Loss and gradient of the fit objective at the current parameters.
std::pair<double, std::vector<double>> fit_loss_grad(const PolicyNet& net, const Model& m,
                                                     const Grid& coarse,
                                                     const TabularPolicy& targets);

// Mean one-step backup over every interior (node, regime) of the fine grid.
// The two extreme nodes only reflect (zero holding time), so they carry no
// controlled dynamics and are excluded. With a reward override the override
// is treated as control-independent when differentiating (it exists for
// constant-injection diagnostics). `gamma` subtracts a running-gain estimate
// from the reward rate, pricing each state's holding time so that stretching
// dt cannot masquerade as improvement; 0 leaves the raw backup.
double global_objective(const Model& m, const Grid& fine, const ValueTable& V,
                        const std::function<Control(const State&)>& policy,
                        const RewardFn& f_override = {}, double gamma = 0.0);
double global_objective(const Model& m, const Grid& fine, const ValueTable& V,
                        const PolicyNet& net, const RewardFn& f_override = {},
                        double gamma = 0.0);

std::pair<double, std::vector<double>> objective_grad(const PolicyNet& net, const Model& m,
                                                      const Grid& fine, const ValueTable& V,
                                                      const RewardFn& f_override = {},
                                                      int threads = 0, double gamma = 0.0);

struct AscendReport {
    double g_start = 0.0;
    double g_final = 0.0;
    int epochs = 0;
    int accepted = 0;
    double final_h1 = 0.0;
    std::vector<double> trace;  // objective after each accepted step, g_start first
};

// Gradient ascent on the mean backup with halving-on-rejection: steps that
// would lower the objective are discarded.
AscendReport ascend(PolicyNet& net, const Model& m, const Grid& fine, const ValueTable& V,
                    const TrainConfig& cfg, const RewardFn& f_override = {},
                    double gamma = 0.0);

// Net evaluated at every node of a grid.
TabularPolicy restrict_to_grid(const PolicyNet& net, const Model& m, const Grid& g);

struct PolicyValues {
    ValueTable values;
    GainEstimate gain;
};

// Exact relative values of a fixed policy: the fixed point of the iterated
// centered evaluation, obtained directly from the Poisson equation
// (I - P) V = f dt - gamma dt, normalized by V(ref) = 0. Throws RankError
// when the policy's chain is not unichain.
PolicyValues solve_policy_values(const Model& m, const Grid& g, const TabularPolicy& pol,
                                 const SolverConfig& cfg, const RewardFn& f_override = {});

struct RoundLog {
    int round = 0;
    int rvi_sweeps = 0;
    double coarse_gamma = 0.0;
    double fit_mse = 0.0;
    double fit_max_abs = 0.0;
    double g_start = 0.0;
    double g_final = 0.0;
    double fine_gamma = 0.0;   // invariant-measure gain of this round's policy
    double value_delta = 0.0;  // L1 change of the fine value table
};

struct GlobalResult {
    PolicyNet net;
    TabularPolicy coarse_policy;
    TabularPolicy fine_policy;
    ValueTable u_coarse;
    ValueTable v_fine;
    GainEstimate gain;  // invariant-measure gain of the refined fine policy
    bool converged = false;
    int rounds = 0;
    std::vector<RoundLog> log;
};

// Outer loop: coarse solve, fit, ascend against the previous fine values,
// re-evaluate the fine values under the refined policy; stop when the fine
// value table moves less than epsilon1 in L1 or after w1 rounds (the latter
// sets converged = false and returns the best-so-far state).
GlobalResult global_iterate(const Model& m, const Grid& coarse, const Grid& fine,
                            const SolverConfig& solver_cfg, const TrainConfig& train_cfg,
                            double epsilon1, int w1, const RewardFn& f_override = {});

}  // namespace mcam

#pragma once

#include <utility>
#include <vector>

#include "mcam/errors.hpp"

namespace mcam {

// Feedback control: retention fraction a, risky-investment fraction s,
// dividend fraction l (of the surplus above the regulatory floor K).
struct Control {
    double a = 1.0;
    double s = 0.0;
    double l = 0.0;
};

struct State {
    double x = 0.0;
    int regime = 0;
};

struct RegimeParams {
    double lambda;    // claim arrival intensity
    double r1;        // liquid-account rate earned above the floor
    double sigma_s;   // risky-asset volatility
};

// Regime-switching surplus model. q is the row-major m0 x m0 generator of the
// driving Markov chain. Premiums are expected-value loaded: insurer loading
// rho, reinsurer loading beta (beta > rho, otherwise ceding is free money).
struct Model {
    std::vector<RegimeParams> regimes;
    std::vector<double> q;
    double ey = 1.0;    // E[Y]
    double ey2 = 1.0;   // E[Y^2]
    double rho = 0.15;
    double beta = 0.25;
    double r2 = 0.02;   // rate on the portion kept liquid below r1
    double K = 2.0;     // regulatory floor: no investment or dividends at or below
    double B = 10.0;    // reflecting cap on surplus
    double Ma = 0.4;    // minimum retention
    double Ms = 0.3;    // maximum risky fraction
    double Ml = 0.062;  // minimum nonzero dividend fraction

    int m0() const { return static_cast<int>(regimes.size()); }
    double q_at(int i, int j) const { return q[static_cast<size_t>(i) * regimes.size() + j]; }

    // Throws ValidationError listing every violated rule.
    void validate() const;

    static Model table1();
};

// (mu_C, sigma_C^2) of the diffusion approximation of the claim process.
std::pair<double, double> claim_moments(const Model& m, int regime);

// Premium income rate c = (1 + rho) * mu_C.
double premium(const Model& m, int regime);

// Reinsurance cost rate Psi(a) = (1 + beta) * (1 - a) * mu_C for a in [0, 1].
double reinsurance_premium(const Model& m, int regime, double a);

// Surplus drift under control u. Investment and dividends act on (x - K)^+.
double drift(const Model& m, const State& st, const Control& u);

// Squared diffusion coefficient.
double diffusion_sq(const Model& m, const State& st, const Control& u);

// Running reward f = drift + l * (x - K)^+ : dividends are paid out, not
// credited to surplus, so the reward adds the dividend stream back.
double reward(const Model& m, const State& st, const Control& u);

// Control-box admissibility plus the floor rule (x <= K forces s = l = 0).
bool is_admissible(const Model& m, const State& st, const Control& u);

}  // namespace mcam

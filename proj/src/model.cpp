#include "mcam/model.hpp"

#include <cmath>
#include <string>

namespace mcam {

namespace {

constexpr double kEps = 1e-12;

void check_regime(const Model& m, int regime) {
    if (regime < 0 || regime >= m.m0())
        throw IndexError("regime index " + std::to_string(regime) + " out of range [0, " +
                         std::to_string(m.m0()) + ")");
}

bool in_box(const Model& m, const Control& u) {
    if (u.a < m.Ma - kEps || u.a > 1.0 + kEps) return false;
    if (u.s < -kEps || u.s > m.Ms + kEps) return false;
    bool l_ok = std::abs(u.l) <= kEps || (u.l >= m.Ml - kEps && u.l <= 1.0 + kEps);
    if (!l_ok) return false;
    if (u.s + u.l > 1.0 + kEps) return false;
    return true;
}

void check_control(const Model& m, const Control& u) {
    if (!in_box(m, u))
        throw DomainError("control (a=" + std::to_string(u.a) + ", s=" + std::to_string(u.s) +
                          ", l=" + std::to_string(u.l) + ") outside the admissible box");
}

}  // namespace

std::pair<double, double> claim_moments(const Model& m, int regime) {
    check_regime(m, regime);
    double lam = m.regimes[regime].lambda;
    return {lam * m.ey, lam * m.ey2};
}

double premium(const Model& m, int regime) {
    return (1.0 + m.rho) * claim_moments(m, regime).first;
}

double reinsurance_premium(const Model& m, int regime, double a) {
    if (a < -kEps || a > 1.0 + kEps)
        throw DomainError("retention a=" + std::to_string(a) + " outside [0, 1]");
    return (1.0 + m.beta) * (1.0 - a) * claim_moments(m, regime).first;
}

double drift(const Model& m, const State& st, const Control& u) {
    check_control(m, u);
    double mu = claim_moments(m, st.regime).first;
    double above = std::max(st.x - m.K, 0.0);
    double invest = u.s * m.regimes[st.regime].r1 + (1.0 - u.s - u.l) * m.r2 - u.l;
    return premium(m, st.regime) - reinsurance_premium(m, st.regime, u.a) - u.a * mu +
           invest * above;
}

double diffusion_sq(const Model& m, const State& st, const Control& u) {
    check_control(m, u);
    double sc2 = claim_moments(m, st.regime).second;
    double above = std::max(st.x - m.K, 0.0);
    double vol = u.s * m.regimes[st.regime].sigma_s * above;
    return u.a * u.a * sc2 + vol * vol;
}

double reward(const Model& m, const State& st, const Control& u) {
    return drift(m, st, u) + u.l * std::max(st.x - m.K, 0.0);
}

bool is_admissible(const Model& m, const State& st, const Control& u) {
    if (!in_box(m, u)) return false;
    if (st.x <= m.K + kEps && (u.s > kEps || u.l > kEps)) return false;
    return true;
}

void Model::validate() const {
    std::vector<std::string> bad;
    auto num = [](double v) {
        std::string s = std::to_string(v);
        return s;
    };

    int n = m0();
    if (n < 1) bad.push_back("model.regimes: must contain at least one regime");
    if (q.size() != static_cast<size_t>(n) * n) {
        bad.push_back("model.q: must be an m0 x m0 matrix (" + std::to_string(q.size()) +
                      " entries for m0=" + std::to_string(n) + ")");
    } else {
        for (int i = 0; i < n; ++i) {
            double row = 0.0;
            for (int j = 0; j < n; ++j) {
                double v = q_at(i, j);
                row += v;
                if (i != j && v < 0.0)
                    bad.push_back("model.q[" + std::to_string(i) + "][" + std::to_string(j) +
                                  "]: off-diagonal rate must be nonnegative (" + num(v) + ")");
                if (i == j && n > 1 && v >= 0.0)
                    bad.push_back("model.q[" + std::to_string(i) + "][" + std::to_string(j) +
                                  "]: diagonal must be negative (" + num(v) + ")");
            }
            if (std::abs(row) > 1e-12)
                bad.push_back("model.q[" + std::to_string(i) + "]: row must sum to zero (" +
                              num(row) + ")");
        }
    }
    for (int i = 0; i < n; ++i) {
        const auto& rg = regimes[i];
        std::string p = "model.regimes[" + std::to_string(i) + "].";
        if (rg.lambda <= 0.0) bad.push_back(p + "lambda: must be positive (" + num(rg.lambda) + ")");
        if (rg.sigma_s <= 0.0)
            bad.push_back(p + "sigma_s: must be positive (" + num(rg.sigma_s) + ")");
        if (r2 > rg.r1)
            bad.push_back("model.r2: must not exceed " + p + "r1 (" + num(r2) + " > " +
                          num(rg.r1) + ")");
    }
    if (ey <= 0.0) bad.push_back("model.ey: must be positive (" + num(ey) + ")");
    if (ey2 < ey * ey)
        bad.push_back("model.ey2: must be at least ey^2 (" + num(ey2) + " < " + num(ey * ey) + ")");
    if (rho <= 0.0) bad.push_back("model.rho: must be positive (" + num(rho) + ")");
    if (beta <= rho)
        bad.push_back("model.beta: must exceed model.rho (" + num(beta) + " <= " + num(rho) + ")");
    if (!(K > 0.0)) bad.push_back("model.K: must be positive (" + num(K) + ")");
    if (!(B > K)) bad.push_back("model.B: must exceed model.K (" + num(B) + " <= " + num(K) + ")");
    if (!(Ma > 0.0) || Ma > 1.0)
        bad.push_back("model.ma: must lie in (0, 1] (" + num(Ma) + ")");
    if (Ms < 0.0 || Ms > 1.0) bad.push_back("model.ms: must lie in [0, 1] (" + num(Ms) + ")");
    if (Ml < 0.0 || Ml > 1.0) bad.push_back("model.ml: must lie in [0, 1] (" + num(Ml) + ")");

    if (!bad.empty()) throw ValidationError(std::move(bad));
}

Model Model::table1() {
    Model m;
    m.regimes = {{0.13, 0.08, 0.2}, {0.28, 0.05, 0.4}};
    m.q = {-0.05, 0.05, 0.1, -0.1};
    m.ey = 1.0;
    m.ey2 = 1.0;
    m.rho = 0.15;
    m.beta = 0.25;
    m.r2 = 0.02;
    m.K = 2.0;
    m.B = 10.0;
    m.Ma = 0.4;
    m.Ms = 0.3;
    m.Ml = 0.062;
    return m;
}

}  // namespace mcam

#include "mcam/lattice.hpp"

#include <cmath>
#include <string>

namespace mcam {

namespace {

// v must be an integer multiple of h up to rounding noise
bool aligned(double v, double h) {
    double k = v / h;
    return std::abs(k - std::round(k)) <= 1e-9 * std::max(1.0, std::abs(k));
}

}  // namespace

int Grid::index_of(double xv) const {
    double lo = nodes.front(), hi = nodes.back();
    double c = xv < lo ? lo : (xv > hi ? hi : xv);
    int idx = static_cast<int>(std::lround((c - lo) / h));
    if (idx < 0) idx = 0;
    if (idx >= size()) idx = size() - 1;
    return idx;
}

Grid build_grid(double B, double h, double K) {
    if (!(h > 0.0)) throw AlignmentError("grid step h must be positive");
    if (!(K > 0.0) || !(K <= B))
        throw AlignmentError("floor K must satisfy 0 < K <= B (K=" + std::to_string(K) +
                             ", B=" + std::to_string(B) + ")");
    if (!aligned(B, h))
        throw AlignmentError("cap B=" + std::to_string(B) +
                             " is not an integer multiple of h=" + std::to_string(h));
    if (!aligned(K, h))
        throw AlignmentError("floor K=" + std::to_string(K) +
                             " is not an integer multiple of h=" + std::to_string(h));

    Grid g;
    g.h = h;
    int nb = static_cast<int>(std::lround(B / h));
    int n = 2 * nb + 3;  // -(B+h) .. B+h
    g.nodes.resize(n);
    for (int i = 0; i < n; ++i) g.nodes[i] = (i - nb - 1) * h;
    g.k_index = static_cast<int>(std::lround(K / h)) + nb + 1;
    return g;
}

TransitionRow interior_row(const Model& m, double h, const State& st, const Control& u) {
    TransitionRow row;
    int m0 = m.m0();
    row.p_switch.assign(m0, 0.0);

    double b = drift(m, st, u);
    double s2 = diffusion_sq(m, st, u);
    double qii = m.q_at(st.regime, st.regime);
    double D = s2 + h * std::abs(b) - h * h * qii;

    double bp = b > 0.0 ? b : 0.0;
    double bn = b < 0.0 ? -b : 0.0;
    row.p_up = (0.5 * s2 + h * bp) / D;
    row.p_down = (0.5 * s2 + h * bn) / D;
    for (int j = 0; j < m0; ++j) {
        if (j == st.regime) continue;
        row.p_switch[j] = m.q_at(st.regime, j) * h * h / D;
    }
    row.dt = h * h / D;
    return row;
}

TransitionRow transitions(const Model& m, const Grid& g, int node, int regime, const Control& u) {
    if (node < 0 || node >= g.size())
        throw IndexError("node index " + std::to_string(node) + " out of range");
    if (regime < 0 || regime >= m.m0())
        throw IndexError("regime index " + std::to_string(regime) + " out of range");

    if (g.is_boundary(node)) {
        TransitionRow row;
        row.p_switch.assign(m.m0(), 0.0);
        row.dt = 0.0;
        if (node == 0) {
            row.flag = BoundaryFlag::reflect_left;
            row.reflect_to = 1;
        } else {
            row.flag = BoundaryFlag::reflect_right;
            row.reflect_to = g.size() - 2;
        }
        return row;
    }
    return interior_row(m, g.h, {g.x(node), regime}, u);
}

std::pair<double, double> chain_step_moments(const TransitionRow& row, double h) {
    if (row.flag != BoundaryFlag::interior) return {0.0, 0.0};
    double mean = h * (row.p_up - row.p_down);
    double second = h * h * (row.p_up + row.p_down);
    return {mean, second - mean * mean};
}

}  // namespace mcam

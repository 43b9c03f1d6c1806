#pragma once

#include <utility>
#include <vector>

#include "mcam/model.hpp"

namespace mcam {

// Uniform surplus lattice {k h} covering [-(B + h), B + h]. The two extreme
// nodes are reflecting states glued on outside the cap.
struct Grid {
    double h = 0.0;
    std::vector<double> nodes;
    int k_index = -1;  // node equal to the floor K

    int size() const { return static_cast<int>(nodes.size()); }
    bool is_boundary(int idx) const { return idx == 0 || idx == size() - 1; }
    double x(int idx) const { return nodes[idx]; }

    // nearest node; ties resolve upward
    int index_of(double xv) const;
};

// Throws AlignmentError unless B and K are integer multiples of h with
// 0 < K < B.
Grid build_grid(double B, double h, double K);

enum class BoundaryFlag { interior, reflect_left, reflect_right };

// One-step law of the controlled chain out of a single (node, regime) pair.
// Interior rows move one node up/down or switch regime in place; boundary
// rows jump back inside with probability one and consume no time.
struct TransitionRow {
    double p_up = 0.0;
    double p_down = 0.0;
    std::vector<double> p_switch;  // indexed by target regime, own entry 0
    double dt = 0.0;
    BoundaryFlag flag = BoundaryFlag::interior;
    int reflect_to = -1;
};

// Interior-style row at arbitrary x (used for ghost-padded boundary backups as
// well); does not consult grid bounds.
TransitionRow interior_row(const Model& m, double h, const State& st, const Control& u);

// Row at a grid node. Boundary nodes return the reflection row regardless of
// the control.
TransitionRow transitions(const Model& m, const Grid& g, int node, int regime, const Control& u);

// (mean, variance) of the one-step surplus increment under a row.
std::pair<double, double> chain_step_moments(const TransitionRow& row, double h);

}  // namespace mcam

#pragma once

#include <string>

#include "mcam/refine.hpp"
#include "mcam/sim.hpp"

namespace mcam {

enum class RunMode { rvi, refine, simulate, eval_policy, full };

struct Tolerances {
    double epsilon1 = 1e-4;  // outer-loop value change
    double epsilon2 = 1e-6;  // rvi residual
    double epsilon3 = 1e-6;  // fit loss change
    double epsilon4 = 1e-7;  // ascent gain change
    int w1 = 20;             // outer-loop round cap
};

// Everything one run needs. Thread counts are runtime concerns and stay out
// of the file (CLI flag or MCAM_THREADS).
struct RunConfig {
    Model model;
    double dx = 0.1;  // fine spacing
    double dy = 0.5;  // coarse spacing, an integer multiple (>= 2) of dx
    Tolerances tol;
    TrainConfig train;
    SimConfig sim;
    SolverConfig solver;
    RunMode mode = RunMode::full;
};

const char* to_string(RunMode mode);
RunMode mode_of_string(const std::string& name);  // ConfigError on unknown names

// Strict parse of the JSON config text: every field required unless noted in
// the docs, unknown fields rejected, all violations collected into one
// ValidationError with field paths. ConfigError for unreadable/non-JSON
// input.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config(const std::string& path);

}  // namespace mcam

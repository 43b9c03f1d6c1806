#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mcam/config.hpp"

namespace mcam {

// Command-line overrides layered on top of a parsed config.
struct RunOverrides {
    std::optional<std::uint64_t> seed;  // replaces train.seed and sim.seed
    std::optional<int> threads;         // replaces every module's thread count
    std::optional<RviVariant> variant;
    std::optional<RunMode> mode;
    std::string policy_path;  // input table for simulate / eval-policy
};

struct RunReport {
    int exit_code = 0;  // 0 done, 2 round cap hit before the value table settled
    GainEstimate gain;  // headline estimate written to gain.json
    GainEstimate mc;    // Monte-Carlo confirmation (full and simulate modes)
    bool has_mc = false;
    bool converged = true;
    int rounds = 0;
};

// Executes one mode end to end and writes its artifacts into out_dir
// (created if missing):
//   policy.csv      regime,x,a,s,l   rvi, refine, full
//   values.csv      regime,x,V,U     rvi, refine, eval-policy, full
//   gain.json       gamma, method, residual, se (+ monte_carlo block)
//   occupation.csv  regime,x,omega   simulate, full
//   net.json        refined policy network   refine, full
// CSV doubles use the shortest form that parses back to the same bits, so
// export followed by import is lossless.
RunReport run(const RunConfig& cfg, const std::string& out_dir, const RunOverrides& ov = {});

// --- artifact serialization (exposed for tests and bindings) ---

std::string policy_to_csv(const Grid& g, const TabularPolicy& pol);

struct LoadedPolicy {
    Grid grid;
    TabularPolicy policy;
};

// Rebuilds the lattice from the x column: the step is the smallest positive
// node, the extent must reproduce the model's B and K, and every interior
// (node, regime) pair must appear exactly once. Rows for the two reflecting
// end nodes are optional (their controls are never used). ConfigError on
// malformed or mismatched input.
LoadedPolicy policy_from_csv(const std::string& text, const Model& m);

std::string values_to_csv(const Grid& g, const ValueTable& v, const ValueTable& u);
std::string occupation_to_csv(const Grid& g, int m0, const std::vector<double>& occ);
std::string gain_to_json(const GainEstimate& g, const GainEstimate* mc = nullptr);

const char* to_string(GainMethod method);

// Coarse table carried onto another lattice by linear interpolation in x.
ValueTable interp_values(const Grid& onto, const Grid& from, const ValueTable& u);

std::string read_text_file(const std::string& path);  // ConfigError when unreadable
void write_text_file(const std::string& path, const std::string& text);

}  // namespace mcam

// mcam: average-reward reinsurance/investment/dividend policies for a
// regime-switching surplus diffusion, via a controlled-chain approximation.
#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mcam/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"average-reward control of a regime-switching surplus diffusion"};

    std::string config_path;
    std::string out_dir = "out";
    std::string mode_str;
    std::string variant_str;
    std::string policy_path;
    std::uint64_t seed = 0;
    int threads = 0;

    app.add_option("--config", config_path, "run config (json)")->required();
    app.add_option("--mode", mode_str, "rvi | refine | simulate | eval-policy | full")
        ->check(CLI::IsMember({"rvi", "refine", "simulate", "eval-policy", "full"}));
    app.add_option("--out", out_dir, "artifact directory")->capture_default_str();
    auto* seed_opt = app.add_option("--seed", seed, "overrides train and sim seeds");
    app.add_option("--threads", threads, "worker threads (0: MCAM_THREADS, then hardware)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--rvi-variant", variant_str, "paper | semi-mdp")
        ->check(CLI::IsMember({"paper", "semi-mdp"}));
    app.add_option("--policy", policy_path, "policy csv for simulate / eval-policy");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        mcam::RunConfig cfg = mcam::parse_config(config_path);
        mcam::RunOverrides ov;
        if (!mode_str.empty()) ov.mode = mcam::mode_of_string(mode_str);
        if (!variant_str.empty())
            ov.variant = variant_str == "paper" ? mcam::RviVariant::paper
                                                : mcam::RviVariant::semi_mdp;
        if (seed_opt->count() > 0) ov.seed = seed;
        if (threads > 0) ov.threads = threads;
        ov.policy_path = policy_path;

        mcam::RunReport rep = mcam::run(cfg, out_dir, ov);

        const mcam::RunMode mode = ov.mode ? *ov.mode : cfg.mode;
        std::cout << "mode: " << mcam::to_string(mode) << '\n';
        if (mode != mcam::RunMode::simulate)
            std::cout << "gamma (" << mcam::to_string(rep.gain.method) << "): " << rep.gain.gamma
                      << '\n';
        if (rep.has_mc)
            std::cout << "gamma (monte_carlo): " << rep.mc.gamma << " +/- " << rep.mc.se
                      << " (se)\n";
        if (rep.rounds > 0) std::cout << "rounds: " << rep.rounds << '\n';
        std::cout << "artifacts: " << out_dir << '\n';
        if (rep.exit_code == 2)
            std::clog << "warning: round cap reached before the value table settled\n";
        return rep.exit_code;
    } catch (const std::exception& e) {
        std::clog << "error: " << e.what() << '\n';
        return 1;
    }
}

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "mcam/refine.hpp"

using namespace mcam;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void zero_params(PolicyNet& net) {
    std::fill(net.raw_params().begin(), net.raw_params().end(), 0.0);
}

// with a zeroed trunk the raw heads equal the output biases (the last three
// parameters)
void set_head_bias(PolicyNet& net, int head, double v) {
    net.raw_params()[net.param_count() - 3 + head] = v;
}

RewardFn constant_reward(double kappa) {
    return [kappa](const Model&, const State&, const Control&) { return kappa; };
}

ValueTable random_values(const Grid& g, int m0, uint64_t seed, double scale) {
    ValueTable v;
    v.m0 = m0;
    v.v.resize(g.size() * m0);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-scale, scale);
    for (double& x : v.v) x = d(rng);
    return v;
}

// single admissible control everywhere: a is pinned at 1 and the dividend
// floor sits at the barrier so s = l = 0 on the whole grid
Model degenerate_model() {
    Model m = Model::table1();
    m.Ma = 1.0;
    m.K = m.B;
    return m;
}

}  // namespace

TEST_CASE("squash maps raw heads into the admissible box") {
    Model m = Model::table1();
    PolicyNet net(m.m0(), m.B, 1);
    zero_params(net);

    SUBCASE("zero raw heads give the box midpoints") {
        Control u = net.forward(m, {5.0, 0});
        CHECK(u.a == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(u.s == doctest::Approx(0.15).epsilon(1e-12));
        CHECK(u.l == doctest::Approx(0.531).epsilon(1e-12));
    }

    SUBCASE("saturated heads trigger the dividend projection") {
        set_head_bias(net, 1, 40.0);
        set_head_bias(net, 2, 40.0);
        Control u = net.forward(m, {5.0, 1});
        CHECK(u.s == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(u.l == doctest::Approx(0.7).epsilon(1e-12));  // 1 - s
        CHECK(u.s + u.l <= 1.0 + 1e-15);
    }

    SUBCASE("the dead zone snaps small dividend signals to exactly zero") {
        set_head_bias(net, 2, -6.0);  // sigmoid(-6) < 0.01
        Control u = net.forward(m, {5.0, 0});
        CHECK(u.l == 0.0);
        // just above the threshold the head lands at Ml or more
        set_head_bias(net, 2, -4.0);  // sigmoid(-4) = 0.018
        u = net.forward(m, {5.0, 0});
        CHECK(u.l >= m.Ml);
    }

    SUBCASE("at or below the threshold the risky heads are off") {
        set_head_bias(net, 1, 40.0);
        set_head_bias(net, 2, 40.0);
        Control u = net.forward(m, {1.0, 0});
        CHECK(u.a == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(u.s == 0.0);
        CHECK(u.l == 0.0);
        u = net.forward(m, {m.K, 1});  // boundary case x == K counts as below
        CHECK(u.s == 0.0);
        CHECK(u.l == 0.0);
    }
}

TEST_CASE("random nets always emit admissible controls") {
    Model m = Model::table1();
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> dx(-(m.B + 1.0), m.B + 1.0);
    std::uniform_int_distribution<int> dr(0, m.m0() - 1);

    const int nets = 25;
    const int draws_per_net = 4000;  // 1e5 (x, regime, theta) draws in total
    for (int k = 0; k < nets; ++k) {
        PolicyNet net(m.m0(), m.B, 1000 + k);
        for (int d = 0; d < draws_per_net; ++d) {
            State st{dx(rng), dr(rng)};
            Control u = net.forward(m, st);
            CAPTURE(st.x);
            CAPTURE(st.regime);
            REQUIRE(is_admissible(m, st, u));
        }
    }
}

TEST_CASE("net construction is seeded and deterministic") {
    PolicyNet a(2, 10.5, 42), b(2, 10.5, 42), c(2, 10.5, 43);
    CHECK(a.raw_params() == b.raw_params());
    CHECK(a.raw_params() != c.raw_params());
    CHECK(a.param_count() == 64 * 3 + 64 + 64 * 64 + 64 + 3 * 64 + 3);
    CHECK_THROWS_AS(PolicyNet(0, 1.0, 1), DomainError);
    CHECK_THROWS_AS(PolicyNet(2, 0.0, 1), DomainError);
    CHECK_THROWS_AS(a.raw_heads(1.0, 2, nullptr), IndexError);
}

TEST_CASE("checkpoints round-trip bit for bit") {
    PolicyNet net(2, 11.0, 7);
    PolicyNet back = PolicyNet::from_json(net.to_json());
    CHECK(back.raw_params() == net.raw_params());
    CHECK(back.m0() == net.m0());
    CHECK(back.x_scale() == net.x_scale());

    const char* path = "net_roundtrip.json";
    net.save(path);
    PolicyNet loaded = PolicyNet::load(path);
    CHECK(loaded.raw_params() == net.raw_params());
    std::remove(path);

    CHECK_THROWS_AS(PolicyNet::from_json("not json"), ConfigError);
    CHECK_THROWS_AS(PolicyNet::from_json("{\"width\": 8}"), ConfigError);
    CHECK_THROWS_AS(PolicyNet::load("no_such_file.json"), ConfigError);
}

TEST_CASE("fitting a constant tabular policy is easy") {
    Model m = Model::table1();
    Grid g = build_grid(m.B, 0.5, m.K);
    TabularPolicy targets;
    targets.m0 = m.m0();
    targets.u.assign(g.size() * m.m0(), Control{0.55, 0.0, 0.0});

    PolicyNet net(m.m0(), m.B, 3);
    TrainConfig cfg;
    FitReport rep = fit_to_tabular(net, m, g, targets, cfg);

    CHECK(rep.max_abs_dev < 0.01);
    CHECK(rep.mse < 1e-5);
    CHECK(rep.epochs >= 1);
    Control u = net.forward(m, {4.5, 0});
    CHECK(u.a == doctest::Approx(0.55).epsilon(5e-3));
    CHECK(u.l == 0.0);
}

TEST_CASE("fit gradient matches finite differences") {
    Model m = Model::table1();
    Grid g = build_grid(m.B, 0.5, m.K);
    // arbitrary smooth-ish targets, admissible everywhere
    TabularPolicy targets;
    targets.m0 = m.m0();
    targets.u.resize(g.size() * m.m0());
    for (int i = 0; i < static_cast<int>(g.size()); ++i)
        for (int r = 0; r < m.m0(); ++r) {
            double x = g.x(i);
            Control t{0.5 + 0.2 * std::sin(0.3 * x + r), 0.0, 0.0};
            if (x > m.K) {
                t.s = 0.15 + 0.1 * std::cos(0.2 * x);
                t.l = 0.5;
            }
            targets.at(i, r) = t;
        }

    PolicyNet net(m.m0(), m.B, 17);
    auto [loss, grad] = fit_loss_grad(net, m, g, targets);
    CHECK(std::isfinite(loss));

    std::vector<double>& theta = net.raw_params();
    const int n = net.param_count();
    const double delta = 1e-5;
    for (int t = 0; t < 10; ++t) {
        int idx = (t * n) / 10 + 3;  // spread across all layers
        double save = theta[idx];
        theta[idx] = save + delta;
        double up = fit_loss_grad(net, m, g, targets).first;
        theta[idx] = save - delta;
        double dn = fit_loss_grad(net, m, g, targets).first;
        theta[idx] = save;
        double fd = (up - dn) / (2.0 * delta);
        double rel = std::abs(fd - grad[idx]) / std::max({std::abs(fd), std::abs(grad[idx]), 1e-10});
        CAPTURE(idx);
        CHECK(rel < 1e-5);
    }
}

TEST_CASE("the solved coarse policy fits within the deviation gate") {
    Model m = Model::table1();
    Grid g = build_grid(m.B, 0.5, m.K);
    SolverConfig scfg;
    scfg.variant = RviVariant::semi_mdp;
    RviResult res = rvi_solve(m, g, scfg);

    // tuned: the default epsilon3 stalls the polish around max-abs 0.05-0.11
    // depending on the seed; these settings leave a clear margin
    PolicyNet net(m.m0(), m.B, 11);
    TrainConfig cfg;
    cfg.epsilon3 = 1e-8;
    FitReport rep = fit_to_tabular(net, m, g, res.policy, cfg);
    CAPTURE(rep.mse);
    CAPTURE(rep.epochs);
    CHECK(rep.max_abs_dev <= 0.05);

    // the fit preserves the structural features of the target policy
    TabularPolicy fitted = restrict_to_grid(net, m, g);
    for (int i = 0; i < static_cast<int>(g.size()); ++i)
        for (int r = 0; r < m.m0(); ++r)
            if (g.x(i) <= m.K) {
                CHECK(fitted.at(i, r).s == 0.0);
                CHECK(fitted.at(i, r).l == 0.0);
            }
}

TEST_CASE("global objective reduces to mean weighted reward at zero values") {
    Model m = Model::table1();
    Grid g = build_grid(m.B, 0.5, m.K);
    ValueTable v;
    v.m0 = m.m0();
    v.v.assign(g.size() * m.m0(), 0.0);

    auto policy = [&](const State& st) {
        Control u{0.7, 0.0, 0.0};
        if (st.x > m.K) {
            u.s = 0.15;
            u.l = 0.0;
        }
        return u;
    };

    double expect = 0.0;
    for (int i = 1; i + 1 < static_cast<int>(g.size()); ++i)
        for (int r = 0; r < m.m0(); ++r) {
            State st{g.x(i), r};
            Control u = policy(st);
            TransitionRow row = interior_row(m, g.h, st, u);
            expect += reward(m, st, u) * row.dt;
        }
    expect /= static_cast<double>(g.size() - 2) * m.m0();

    double got = global_objective(m, g, v, policy);
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("shifting the value table shifts the objective by the same constant") {
    Model m = Model::table1();
    Grid g = build_grid(m.B, 0.5, m.K);
    ValueTable v = random_values(g, m.m0(), 5, 10.0);

    PolicyNet net(m.m0(), m.B, 11);
    double g0 = global_objective(m, g, v, net);

    const double c = 3.7251;
    ValueTable shifted = v;
    for (double& x : shifted.v) x += c;
    double g1 = global_objective(m, g, v, net);
    double g2 = global_objective(m, g, shifted, net);
    CHECK(g1 == g0);  // same inputs, same result
    CHECK(g2 - g0 == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("global objective agrees with per-state backups") {
    Model m = Model::table1();
    Grid g = build_grid(m.B, 0.5, m.K);
    ValueTable v = random_values(g, m.m0(), 23, 5.0);
    PolicyNet net(m.m0(), m.B, 29);

    const int n = static_cast<int>(g.size());
    double manual = 0.0;
    for (int i = 1; i + 1 < n; ++i)
        for (int r = 0; r < m.m0(); ++r)
            manual += bellman_backup(m, g, v, i, r, net.forward(m, {g.x(i), r}));
    manual /= static_cast<double>(n - 2) * m.m0();

    double got = global_objective(m, g, v, net);
    CHECK(got == doctest::Approx(manual).epsilon(1e-9));
}

TEST_CASE("objective gradient matches finite differences") {
    Model m = Model::table1();
    Grid g = build_grid(m.B, 0.25, m.K);
    ValueTable v = random_values(g, m.m0(), 31, 5.0);

    // seed 5 activates the budget projection on part of the grid, seed 21
    // keeps every dividend inside the dead zone; together they cover both
    // branches of the squash
    for (uint64_t seed : {uint64_t{5}, uint64_t{21}}) {
        CAPTURE(seed);
        PolicyNet net(m.m0(), m.B, seed);

        // the objective is smooth only away from the drift sign change, the
        // dead-zone threshold, and the projection switch-on point; assert the
        // margins so a reseeded net cannot silently sit on a kink
        for (int i = 0; i < static_cast<int>(g.size()); ++i)
            for (int r = 0; r < m.m0(); ++r) {
                State st{g.x(i), r};
                Control u = net.forward(m, st);
                REQUIRE(std::abs(drift(m, st, u)) > 1e-4);
                if (st.x <= m.K) continue;
                double raw[3];
                net.raw_heads(st.x, st.regime, raw);
                double sl = sigmoid(raw[2]);
                REQUIRE(std::abs(sl - PolicyNet::kDeadZone) > 1e-3);
                if (sl >= PolicyNet::kDeadZone)
                    REQUIRE(std::abs(u.s + (m.Ml + (1.0 - m.Ml) * sl) - 1.0) > 1e-3);
            }

        auto [g0, grad] = objective_grad(net, m, g, v);
        CHECK(std::isfinite(g0));
        CHECK(g0 == doctest::Approx(global_objective(m, g, v, net)).epsilon(1e-12));

        std::vector<double>& theta = net.raw_params();
        const int n = net.param_count();
        const double delta = 1e-5;
        for (int t = 0; t < 10; ++t) {
            int idx = (t * n) / 10 + 5;
            double save = theta[idx];
            theta[idx] = save + delta;
            double up = global_objective(m, g, v, net);
            theta[idx] = save - delta;
            double dn = global_objective(m, g, v, net);
            theta[idx] = save;
            double fd = (up - dn) / (2.0 * delta);
            double rel =
                std::abs(fd - grad[idx]) / std::max({std::abs(fd), std::abs(grad[idx]), 1e-10});
            CAPTURE(idx);
            CHECK(rel < 1e-4);
        }
    }
}

TEST_CASE("ascent is stationary when only one control is admissible") {
    Model m = degenerate_model();
    Grid g = build_grid(m.B, 0.5, m.K);
    ValueTable v = random_values(g, m.m0(), 3, 5.0);
    PolicyNet net(m.m0(), m.B, 4);

    auto [g0, grad] = objective_grad(net, m, g, v);
    int nonzero = 0;
    for (double d : grad) nonzero += d != 0.0;
    CHECK(nonzero == 0);

    TrainConfig cfg;
    AscendReport rep = ascend(net, m, g, v, cfg);
    CHECK(rep.g_final == rep.g_start);
    CHECK(rep.g_start == doctest::Approx(g0));
    CHECK(rep.epochs == 1);
}

TEST_CASE("ascent improves the objective and never accepts a decrease") {
    Model m = Model::table1();
    Grid g = build_grid(m.B, 0.25, m.K);

    // a realistic value landscape: evaluate a plain fixed policy first
    TabularPolicy pol;
    pol.m0 = m.m0();
    pol.u.resize(g.size() * m.m0());
    for (int i = 0; i < static_cast<int>(g.size()); ++i)
        for (int r = 0; r < m.m0(); ++r)
            pol.at(i, r) = g.x(i) > m.K ? Control{0.7, 0.15, 0.0} : Control{0.7, 0.0, 0.0};
    SolverConfig scfg;
    scfg.variant = RviVariant::semi_mdp;
    EvalResult ev = evaluate_policy(m, g, pol, scfg);

    PolicyNet net(m.m0(), m.B, 12);
    TrainConfig cfg;
    cfg.max_epochs_ascend = 300;
    AscendReport rep = ascend(net, m, g, ev.values, cfg);
    CHECK(rep.g_final >= rep.g_start);
    CHECK(rep.g_final > rep.g_start + 1e-4);  // real progress, not a no-op
    CHECK(rep.accepted >= 1);
    CHECK(global_objective(m, g, ev.values, net) == doctest::Approx(rep.g_final).epsilon(1e-12));
}

TEST_CASE("a constant injected reward drives the objective to that constant") {
    // with f = kappa and V = 0 every backup is kappa * dt; with V solved for
    // the policy the objective equals the policy's gain, which is kappa
    Model m = Model::table1();
    Grid g = build_grid(m.B, 0.5, m.K);
    PolicyNet net(m.m0(), m.B, 8);
    TabularPolicy pol = restrict_to_grid(net, m, g);
    SolverConfig scfg;
    scfg.variant = RviVariant::semi_mdp;
    RewardFn kappa = constant_reward(0.11);
    EvalResult ev = evaluate_policy(m, g, pol, scfg, kappa);

    // relative values under a constant reward are identically zero, so the
    // objective is a dt-weighted mean of kappa*dt ... kappa itself only when
    // measured through the gain; here we check the zero-value reduction
    double got = global_objective(m, g, ev.values, net, kappa);
    double expect = 0.0;
    for (int i = 1; i + 1 < static_cast<int>(g.size()); ++i)
        for (int r = 0; r < m.m0(); ++r) {
            State st{g.x(i), r};
            TransitionRow row = interior_row(m, g.h, st, net.forward(m, st));
            expect += 0.11 * row.dt;
        }
    expect /= static_cast<double>(g.size() - 2) * m.m0();
    CHECK(got == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("grid restriction samples the net at every node") {
    Model m = Model::table1();
    Grid g = build_grid(m.B, 0.5, m.K);
    PolicyNet net(m.m0(), m.B, 21);
    TabularPolicy pol = restrict_to_grid(net, m, g);
    CHECK(pol.nodes() == static_cast<int>(g.size()));
    for (int i = 0; i < static_cast<int>(g.size()); i += 7)
        for (int r = 0; r < m.m0(); ++r) {
            Control direct = net.forward(m, {g.x(i), r});
            CHECK(pol.at(i, r).a == direct.a);
            CHECK(pol.at(i, r).s == direct.s);
            CHECK(pol.at(i, r).l == direct.l);
        }
}

TEST_CASE("the outer loop converges immediately on a degenerate action set") {
    Model m = degenerate_model();
    Grid coarse = build_grid(m.B, 0.5, m.K);
    Grid fine = build_grid(m.B, 0.25, m.K);
    SolverConfig scfg;
    scfg.variant = RviVariant::semi_mdp;
    TrainConfig tcfg;

    GlobalResult res = global_iterate(m, coarse, fine, scfg, tcfg, 1e-4, 20);
    CHECK(res.converged);
    // one round does all the work; the second only detects the fixed point
    CHECK(res.rounds <= 2);
    REQUIRE(res.log.size() == static_cast<size_t>(res.rounds));
    CHECK(res.log.back().value_delta < 1e-4);

    // the gain equals the forced policy's gain exactly
    TabularPolicy forced;
    forced.m0 = m.m0();
    forced.u.assign(fine.size() * m.m0(), Control{1.0, 0.0, 0.0});
    GainEstimate direct = gain_of_policy(m, fine, forced);
    CHECK(res.gain.gamma == doctest::Approx(direct.gamma).epsilon(1e-12));
    // the forced control holds on [-B, B]; the two extreme nodes sit above
    // the barrier and only ever reflect, so their entries are immaterial
    for (int i = 1; i + 1 < static_cast<int>(fine.size()); ++i)
        for (int r = 0; r < m.m0(); ++r) {
            const Control& u = res.fine_policy.at(i, r);
            CHECK(u.a == 1.0);
            CHECK(u.s == 0.0);
            CHECK(u.l == 0.0);
        }
}

TEST_CASE("the outer loop flags exhaustion instead of pretending to converge") {
    Model m = Model::table1();
    Grid coarse = build_grid(m.B, 0.5, m.K);
    Grid fine = build_grid(m.B, 0.25, m.K);
    SolverConfig scfg;
    scfg.variant = RviVariant::semi_mdp;
    TrainConfig tcfg;
    tcfg.max_epochs_fit = 400;
    tcfg.max_epochs_ascend = 60;

    GlobalResult res = global_iterate(m, coarse, fine, scfg, tcfg, 1e-4, 1);
    CHECK_FALSE(res.converged);
    CHECK(res.rounds == 1);
    CHECK(res.log.size() == 1);
    CHECK(res.log[0].value_delta >= 1e-4);
    CHECK(res.gain.gamma > 0.0);  // best-so-far state is still returned

    // grid mismatches are rejected up front
    Grid bad = build_grid(m.B, 0.4, m.K);
    CHECK_THROWS_AS(global_iterate(m, coarse, bad, scfg, tcfg, 1e-4, 1), AlignmentError);
    CHECK_THROWS_AS(global_iterate(m, fine, fine, scfg, tcfg, 1e-4, 1), AlignmentError);
    CHECK_THROWS_AS(global_iterate(m, coarse, fine, scfg, tcfg, 1e-4, 0), DomainError);
}

TEST_CASE("training is deterministic for a fixed seed and any thread count") {
    Model m = Model::table1();
    Grid coarse = build_grid(m.B, 0.5, m.K);
    Grid fine = build_grid(m.B, 0.25, m.K);
    SolverConfig scfg;
    scfg.variant = RviVariant::semi_mdp;
    TrainConfig tcfg;
    tcfg.max_epochs_fit = 200;
    tcfg.max_epochs_ascend = 40;
    tcfg.seed = 5;

    scfg.threads = 1;
    tcfg.threads = 1;
    GlobalResult a = global_iterate(m, coarse, fine, scfg, tcfg, 1e-4, 1);
    scfg.threads = 4;
    tcfg.threads = 4;
    GlobalResult b = global_iterate(m, coarse, fine, scfg, tcfg, 1e-4, 1);

    CHECK(a.net.raw_params() == b.net.raw_params());
    CHECK(a.gain.gamma == b.gain.gamma);
    CHECK(a.v_fine.v == b.v_fine.v);
    CHECK(a.net.to_json() == b.net.to_json());
}

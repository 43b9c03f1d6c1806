#include <doctest.h>

#include <cmath>
#include <random>

#include "mcam/lattice.hpp"

using namespace mcam;

namespace {

Control sample_box(const Model& m, std::mt19937_64& rng, bool below_k) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Control u;
    u.a = m.Ma + (1.0 - m.Ma) * u01(rng);
    if (below_k) return u;
    u.s = m.Ms * u01(rng);
    if (u01(rng) > 0.5) {
        u.l = m.Ml + (1.0 - m.Ml) * u01(rng);
        if (u.s + u.l > 1.0) u.l = 1.0 - u.s;
        if (u.l < m.Ml) u.l = 0.0;
    }
    return u;
}

}  // namespace

TEST_CASE("grid construction") {
    Grid g = build_grid(10.0, 0.5, 2.0);
    CHECK(g.size() == 43);
    CHECK(g.nodes.front() == doctest::Approx(-10.5).epsilon(1e-14));
    CHECK(g.nodes.back() == doctest::Approx(10.5).epsilon(1e-14));
    CHECK(g.k_index == 25);
    CHECK(g.x(g.k_index) == doctest::Approx(2.0).epsilon(1e-14));

    Grid f = build_grid(10.0, 0.1, 2.0);
    CHECK(f.size() == 203);
    CHECK(f.x(f.k_index) == doctest::Approx(2.0).epsilon(1e-12));

    Grid t = build_grid(1.0, 1.0, 1.0);
    REQUIRE(t.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(t.x(i) == doctest::Approx(-2.0 + i).epsilon(1e-14));
    CHECK(t.k_index == 3);

    CHECK_THROWS_AS(build_grid(10.0, 0.3, 2.0), AlignmentError);
    CHECK_THROWS_AS(build_grid(10.0, 0.5, 2.1), AlignmentError);
    CHECK_THROWS_AS(build_grid(10.0, 0.5, 12.0), AlignmentError);  // K >= B
    CHECK_THROWS_AS(build_grid(10.0, -0.5, 2.0), AlignmentError);
}

TEST_CASE("nearest node lookup") {
    Grid g = build_grid(10.0, 0.5, 2.0);
    CHECK(g.index_of(0.0) == 21);
    CHECK(g.x(g.index_of(0.26)) == doctest::Approx(0.5));
    CHECK(g.x(g.index_of(0.24)) == doctest::Approx(0.0));
    CHECK(g.index_of(-99.0) == 0);
    CHECK(g.index_of(99.0) == 42);
}

TEST_CASE("interior transition row, worked example") {
    Model m = Model::table1();
    double h = 0.1;
    State st{4.0, 0};
    Control u{1.0, 0.3, 0.062};
    TransitionRow row = interior_row(m, h, st, u);

    // independent arithmetic with the raw parameter values
    double b = 0.14950 - 0.0 - 0.13 + (0.3 * 0.08 + (1.0 - 0.3 - 0.062) * 0.02 - 0.062) * 2.0;
    double s2 = 0.13 + std::pow(0.3 * 0.2 * 2.0, 2);
    double D = s2 + h * std::abs(b) - h * h * (-0.05);
    CHECK(D == doctest::Approx(0.147998).epsilon(1e-5));
    CHECK(row.p_up == doctest::Approx((0.5 * s2) / D).epsilon(1e-13));
    CHECK(row.p_down == doctest::Approx((0.5 * s2 + h * (-b)) / D).epsilon(1e-13));
    CHECK(row.p_up == doctest::Approx(0.48784).epsilon(1e-4));
    CHECK(row.p_down == doctest::Approx(0.50878).epsilon(1e-4));
    CHECK(row.p_switch[1] == doctest::Approx(0.05 * h * h / D).epsilon(1e-13));
    CHECK(row.p_switch[1] == doctest::Approx(0.003378).epsilon(1e-3));
    CHECK(row.p_switch[0] == 0.0);
    CHECK(row.dt == doctest::Approx(h * h / D).epsilon(1e-13));
    CHECK(row.dt == doctest::Approx(0.067568).epsilon(1e-5));
    CHECK(row.flag == BoundaryFlag::interior);

    auto [mean, var] = chain_step_moments(row, h);
    CHECK(mean == doctest::Approx(b * row.dt).epsilon(1e-12));
    CHECK(mean == doctest::Approx(-0.0020933).epsilon(1e-4));
    CHECK(var > 0.0);
}

TEST_CASE("zero-drift control gives a symmetric row") {
    // below the floor, b = (1+rho)mu - (1+beta)(1-a)mu - a mu vanishes at
    // a = (beta - rho)/beta, which is exactly Ma = 0.4 for the base table
    Model m = Model::table1();
    State st{1.0, 0};
    Control u{0.4, 0.0, 0.0};
    CHECK(drift(m, st, u) == doctest::Approx(0.0).epsilon(1e-15));

    TransitionRow row = interior_row(m, 0.5, st, u);
    CHECK(row.p_up == doctest::Approx(row.p_down).epsilon(1e-14));
    auto [mean, var] = chain_step_moments(row, 0.5);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(var == doctest::Approx(0.25 * (row.p_up + row.p_down)).epsilon(1e-13));
}

TEST_CASE("boundary rows reflect and consume no time") {
    Model m = Model::table1();
    Grid g = build_grid(10.0, 0.5, 2.0);
    Control u{1.0, 0.0, 0.0};

    TransitionRow left = transitions(m, g, 0, 0, u);
    CHECK(left.flag == BoundaryFlag::reflect_left);
    CHECK(left.reflect_to == 1);
    CHECK(left.dt == 0.0);
    CHECK(left.p_up == 0.0);
    CHECK(left.p_down == 0.0);

    TransitionRow right = transitions(m, g, 42, 1, u);
    CHECK(right.flag == BoundaryFlag::reflect_right);
    CHECK(right.reflect_to == 41);
    CHECK(right.dt == 0.0);

    CHECK(g.x(left.reflect_to) == doctest::Approx(-10.0));
    CHECK(g.x(right.reflect_to) == doctest::Approx(10.0));

    CHECK_THROWS_AS(transitions(m, g, 43, 0, u), IndexError);
    CHECK_THROWS_AS(transitions(m, g, 0, 5, u), IndexError);
}

TEST_CASE("row invariants across random states and controls") {
    Model m = Model::table1();
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> xs(-10.0, 10.0);
    std::uniform_real_distribution<double> hs(0.05, 1.0);

    for (int i = 0; i < 400; ++i) {
        double x = xs(rng);
        int rg = i % 2;
        double h = hs(rng);
        Control u = sample_box(m, rng, x <= m.K);
        State st{x, rg};
        TransitionRow row = interior_row(m, h, st, u);

        double total = row.p_up + row.p_down;
        for (double p : row.p_switch) total += p;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(row.p_up >= 0.0);
        CHECK(row.p_down >= 0.0);
        CHECK(row.dt > 0.0);

        // consistency: mean matches b dt exactly, variance matches
        // sigma^2 dt up to the h|b| numerical-viscosity term
        double b = drift(m, st, u);
        double s2 = diffusion_sq(m, st, u);
        auto [mean, var] = chain_step_moments(row, h);
        CHECK(mean == doctest::Approx(b * row.dt).epsilon(1e-11));
        double gap = std::abs(var / row.dt - s2);
        CHECK(gap <= h * std::abs(b) + b * b * row.dt + 1e-12);
    }
}

TEST_CASE("time steps shrink with the mesh") {
    Model m = Model::table1();
    Control u{1.0, 0.0, 0.0};
    for (double h : {1.0, 0.5, 0.25}) {
        double worst_h = 0.0, worst_h2 = 0.0;
        for (double x : {-9.0, -4.0, 0.0, 3.0, 6.0, 9.0}) {
            for (int rg = 0; rg < 2; ++rg) {
                worst_h = std::max(worst_h, interior_row(m, h, {x, rg}, u).dt);
                worst_h2 = std::max(worst_h2, interior_row(m, h / 2, {x, rg}, u).dt);
            }
        }
        CHECK(worst_h2 < worst_h);
    }
}

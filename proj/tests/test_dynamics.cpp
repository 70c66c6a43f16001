#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "randpot/dynamics.hpp"
#include "randpot/field.hpp"

using namespace randpot;

namespace {

PotentialField free_field_2d(double half = 10.0) {
    PoissonConfiguration cfg;
    cfg.d = 2;
    cfg.win_lo = Vec{-half, -half};
    cfg.win_hi = Vec{half, half};
    return PotentialField::points(cfg);
}

PotentialField cosine_field(int d, int halfwidth) {
    LatticeConfiguration cfg;
    cfg.basis = LatticeBasis::cubic(d);
    cfg.window = IndexBox::centered(d, halfwidth);
    cfg.palette.resize(1);
    cfg.palette[0].terms.push_back(make_cosine_lattice_term(d));
    cfg.marks.assign(static_cast<std::size_t>(cfg.window.count()), 0);
    return PotentialField::lattice(cfg);
}

PotentialField gaussian_well_2d(double depth, double sigma, double half = 12.0) {
    PoissonConfiguration cfg;
    cfg.d = 2;
    cfg.win_lo = Vec{-half, -half};
    cfg.win_hi = Vec{half, half};
    cfg.points.push_back({Vec(2), 0});
    cfg.palette.resize(1);
    cfg.palette[0].terms.push_back(make_gaussian_term(2, -depth, sigma));
    return PotentialField::points(cfg);
}

}  // namespace

TEST_CASE("verlet is second order on the linear-flow reference") {
    PhaseState init(2);
    init.q = Vec{0.3, -0.2};
    init.p = Vec{0.1, 0.4};
    double e1 = linear_flow_error(init, 1.0, 1e-2);
    double e2 = linear_flow_error(init, 1.0, 5e-3);
    double e3 = linear_flow_error(init, 1.0, 2.5e-3);
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.05));
    CHECK(e2 / e3 == doctest::Approx(4.0).epsilon(0.05));
    CHECK(linear_flow_error(init, 1.0, 1e-3) < 1e-6);
}

TEST_CASE("free motion: exact velocity, escape, window guard") {
    auto field = free_field_2d();
    PhaseState init(2);
    init.p = Vec{0.7, -0.3};

    FlowSpec spec;
    spec.step = 1e-2;

    SUBCASE("ballistic velocity statistic") {
        auto est = asymptotic_velocity(field, init, 8.0, spec);
        CHECK(est.status == FlowStatus::completed);
        CHECK(est.stop_time == doctest::Approx(8.0));
        CHECK(std::fabs(est.v_hat[0] - 0.7) < 1e-12);
        CHECK(std::fabs(est.v_hat[1] + 0.3) < 1e-12);
        CHECK(est.gap < 1e-12);
    }
    SUBCASE("escape radius fires") {
        FlowSpec s = spec;
        s.escape_radius = 3.0;
        auto r = integrate_flow(field, init, 100.0, s);
        CHECK(r.status == FlowStatus::escaped);
        CHECK(r.state.q.norm() >= 3.0);
        CHECK(r.state.t < 100.0);
    }
    SUBCASE("faithful window guard fires") {
        auto r = integrate_flow(field, init, 100.0, spec);
        CHECK(r.status == FlowStatus::left_window);
        CHECK(field.faithful_box().margin(r.state.q) <= 0.0);
    }
    SUBCASE("fractional final step lands exactly") {
        auto r = integrate_flow(field, init, 1.0035, spec);
        CHECK(r.status == FlowStatus::completed);
        CHECK(r.state.t == doctest::Approx(1.0035).epsilon(1e-15));
        CHECK(r.state.q[0] == doctest::Approx(0.7 * 1.0035).epsilon(1e-12));
    }
}

TEST_CASE("energy drift is O(h^2) and bounded over time") {
    auto field = cosine_field(1, 40);
    PhaseState init(1);
    init.q = Vec{0.0};
    // H = p^2/2 + V, V(0) = -1; pick E = 1.3 above the barrier top V = 1
    init.p = Vec{std::sqrt(2.0 * (1.3 + 1.0))};

    FlowSpec spec;
    spec.step = 2e-3;
    auto r1 = integrate_flow(field, init, 6.0, spec);
    CHECK(r1.status == FlowStatus::completed);
    spec.step = 1e-3;
    auto r2 = integrate_flow(field, init, 6.0, spec);
    CHECK(r2.status == FlowStatus::completed);
    CHECK(r1.max_energy_drift / r2.max_energy_drift == doctest::Approx(4.0).epsilon(0.2));
    CHECK(r2.max_energy_drift < 1e-4);
    CHECK(r2.max_tail_bound == 0.0);  // compact-support palette
}

TEST_CASE("reversibility on a smooth lattice field") {
    auto field = cosine_field(2, 10);
    PhaseState init(2);
    init.q = Vec{0.2, 0.3};
    init.p = Vec{0.4, -0.3};
    FlowSpec spec;
    spec.step = 1e-3;
    double err = reversibility_error(field, init, 5.0, spec);
    CHECK(err < 1e-9);
}

TEST_CASE("flow commutes with lattice translations") {
    RngStream rng(77);
    LatticeBasis basis = LatticeBasis::cubic(2);
    IndexBox window = IndexBox::centered(2, 10);
    std::vector<SingleSitePotential> palette(2);
    palette[0].terms.push_back(make_gaussian_term(2, 0.4, 0.35));
    palette[1].terms.push_back(make_gaussian_term(2, -0.3, 0.3));
    auto cfg = sample_lattice_configuration(rng, basis, window, {0.5, 0.5}, palette);

    IndexVec ell{};
    ell[0] = 2;
    ell[1] = -1;
    auto field = PotentialField::lattice(cfg);
    auto shifted = PotentialField::lattice(shift_configuration(cfg, ell));
    Vec delta = basis.point(ell);

    PhaseState init(2);
    init.q = Vec{0.15, -0.35};
    init.p = Vec{0.3, 0.25};
    FlowSpec spec;
    spec.step = 1e-3;
    double err = translation_equivariance_error(field, shifted, delta, init, 5.0, spec);
    CHECK(err < 1e-9);
}

TEST_CASE("boundedness classification") {
    auto field = gaussian_well_2d(1.0, 0.5);
    FlowSpec spec;
    spec.step = 1e-2;
    Vec center(2);

    SUBCASE("trapped orbit is bounded") {
        PhaseState init(2);
        init.q = Vec{0.3, 0.0};
        init.p = Vec{0.0, 0.1};
        CHECK(hamiltonian(field, init) < 0.0);
        auto b = classify_boundedness(field, init, 50.0, center, 1.0, 5.0, spec);
        CHECK(b == Boundedness::bounded);
    }
    SUBCASE("energetic orbit escapes") {
        PhaseState init(2);
        init.q = Vec{0.3, 0.0};
        init.p = Vec{1.5, 0.0};
        CHECK(hamiltonian(field, init) > 0.0);
        auto b = classify_boundedness(field, init, 30.0, center, 1.0, 5.0, spec);
        CHECK(b == Boundedness::escaping);
    }
}

TEST_CASE("trajectory recording covers endpoints") {
    auto field = free_field_2d();
    PhaseState init(2);
    init.p = Vec{0.5, 0.0};
    FlowSpec spec;
    spec.step = 1e-2;
    spec.record_stride = 7;
    auto r = integrate_flow(field, init, 1.0, spec);
    REQUIRE(!r.samples.empty());
    CHECK(r.samples.front().t == 0.0);
    CHECK(r.samples.back().t == doctest::Approx(1.0));
    for (std::size_t i = 1; i < r.samples.size(); ++i)
        CHECK(r.samples[i].t > r.samples[i - 1].t);
    CHECK(r.samples.front().energy == doctest::Approx(0.125));
}

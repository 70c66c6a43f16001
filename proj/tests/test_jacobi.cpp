#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>
#include <string>

#include "randpot/errors.hpp"
#include "randpot/jacobi.hpp"

using namespace randpot;

namespace {

PotentialField free_field(int d, double half = 10.0) {
    PoissonConfiguration cfg;
    cfg.d = d;
    cfg.win_lo = Vec(d);
    cfg.win_hi = Vec(d);
    for (int k = 0; k < d; ++k) {
        cfg.win_lo[k] = -half;
        cfg.win_hi[k] = half;
    }
    return PotentialField::points(cfg);
}

PotentialField single_site_field(int d, SiteTerm term, double half = 8.0) {
    PoissonConfiguration cfg;
    cfg.d = d;
    cfg.win_lo = Vec(d);
    cfg.win_hi = Vec(d);
    for (int k = 0; k < d; ++k) {
        cfg.win_lo[k] = -half;
        cfg.win_hi[k] = half;
    }
    cfg.points.push_back({Vec(d), 0});
    cfg.palette.resize(1);
    cfg.palette[0].terms.push_back(std::move(term));
    return PotentialField::points(cfg);
}

// constant level + one central gaussian: lattice palette trick used for the
// conformal-covariance checks (mark 1 only at the center site)
PotentialField gaussian_plus_level(int d, double level, double amp, double sigma,
                                   int halfwidth) {
    LatticeConfiguration cfg;
    cfg.basis = LatticeBasis::cubic(d);
    cfg.window = IndexBox::centered(d, halfwidth);
    cfg.palette.resize(2);
    cfg.palette[0].terms.push_back(make_smoothed_indicator_term(d, level));
    cfg.palette[1].terms.push_back(make_smoothed_indicator_term(d, level));
    cfg.palette[1].terms.push_back(make_gaussian_term(d, amp, sigma));
    cfg.marks.assign(static_cast<std::size_t>(cfg.window.count()), 0);
    cfg.marks[static_cast<std::size_t>(cfg.window.flat_index(IndexVec{}))] = 1;
    return PotentialField::lattice(cfg);
}

PotentialField random_gaussian_wells_2d(std::uint64_t seed, int n_sites, double half = 8.0) {
    PoissonConfiguration cfg;
    cfg.d = 2;
    cfg.win_lo = Vec{-half, -half};
    cfg.win_hi = Vec{half, half};
    cfg.palette.resize(3);
    cfg.palette[0].terms.push_back(make_gaussian_term(2, -0.25, 0.5));
    cfg.palette[1].terms.push_back(make_gaussian_term(2, -0.4, 0.65));
    cfg.palette[2].terms.push_back(make_gaussian_term(2, -0.5, 0.8));
    RngStream rng(seed);
    for (int i = 0; i < n_sites; ++i) {
        MarkedPoint mp;
        mp.x = rng.uniform_in_box(cfg.win_lo, cfg.win_hi);
        mp.mark = static_cast<int>(rng.uniform_index(3));
        cfg.points.push_back(mp);
    }
    return PotentialField::points(cfg);
}

}  // namespace

TEST_CASE("flat and constant fields have zero curvature") {
    auto flat2 = free_field(2);
    JacobiMetric m(flat2, 1.3);
    CHECK(gaussian_curvature(m, Vec{0.4, -0.7}) == 0.0);
    // the stencil on a constant leaves only rounding noise of order eps/h^2
    CHECK(std::fabs(brioschi_fd_curvature(m, Vec{0.4, -0.7})) < 1e-7);

    auto level2 = gaussian_plus_level(2, 0.45, 0.0, 0.7, 5);
    JacobiMetric mc(level2, 1.3);
    CHECK(std::fabs(gaussian_curvature(mc, Vec{0.2, 0.1})) < 1e-9);
    CHECK(std::fabs(brioschi_fd_curvature(mc, Vec{0.2, 0.1})) < 1e-4);

    auto flat3 = free_field(3);
    JacobiMetric m3(flat3, 0.9);
    CHECK(std::fabs(scalar_curvature(m3, Vec{0.1, 0.2, -0.3})) < 1e-12);

    SUBCASE("degenerate metric is rejected") {
        JacobiMetric bad(flat2, -0.5);
        CHECK_THROWS_AS(gaussian_curvature(bad, Vec{0.0, 0.0}), NumericalError);
        CHECK_THROWS_AS(brioschi_fd_curvature(bad, Vec{0.0, 0.0}), NumericalError);
        JacobiMetric bad3(flat3, -0.5);
        CHECK_THROWS_AS(scalar_curvature(bad3, Vec{0.0, 0.0, 0.0}), NumericalError);
        CHECK_THROWS_AS(JacobiMetric(flat2, -1.0, MetricConvention::normalized), ConfigError);
        CHECK_THROWS_AS(scalar_curvature(m, Vec{0.0, 0.0}), ConfigError);   // d = 2
        CHECK_THROWS_AS(gaussian_curvature(m3, Vec{0.0, 0.0, 0.0}), ConfigError);  // d = 3
    }
}

TEST_CASE("analytic gaussian curvature matches the value-only fd oracle") {
    auto field = single_site_field(2, make_yukawa_term(2, 1.0, 1.0));
    JacobiMetric abs(field, 2.0);
    JacobiMetric norm(field, 2.0, MetricConvention::normalized);

    RngStream rng(77);
    int nontrivial = 0;
    for (int i = 0; i < 100; ++i) {
        double r = rng.uniform(0.5, 2.5);
        double th = rng.uniform(0.0, 6.283185307179586);
        Vec q{r * std::cos(th), r * std::sin(th)};
        double ka = gaussian_curvature(abs, q);
        double kf = brioschi_fd_curvature(abs, q);
        CHECK(std::fabs(ka - kf) <= 1e-4 * std::fabs(ka) + 1e-10);
        if (std::fabs(ka) > 1e-4) ++nontrivial;

        // convention scaling: normalized curvature is E times the absolute one
        double kn = gaussian_curvature(norm, q);
        CHECK(kn == doctest::Approx(2.0 * ka).epsilon(1e-13));
    }
    CHECK(nontrivial >= 80);

    SUBCASE("fd oracle also works in the normalized convention") {
        Vec q{1.1, -0.4};
        CHECK(brioschi_fd_curvature(norm, q) ==
              doctest::Approx(gaussian_curvature(norm, q)).epsilon(1e-5));
    }
}

TEST_CASE("scalar curvature: closed formula against the conformal-power route") {
    auto field = single_site_field(3, make_gaussian_term(3, -1.2, 0.9));
    JacobiMetric abs(field, 1.5);
    JacobiMetric norm(field, 1.5, MetricConvention::normalized);

    RngStream rng(31);
    int nontrivial = 0;
    for (int i = 0; i < 30; ++i) {
        Vec q = rng.uniform_in_box(Vec{-1.2, -1.2, -1.2}, Vec{1.2, 1.2, 1.2});
        double r1 = scalar_curvature(abs, q);  // would throw on route disagreement
        double r2 = scalar_curvature_u_route(abs, q);
        CHECK(std::fabs(r1 - r2) <= 1e-4 * 0.5 * (std::fabs(r1) + std::fabs(r2)) + 1e-6);
        if (std::fabs(r1) > 1e-2) ++nontrivial;
        CHECK(scalar_curvature(norm, q) == doctest::Approx(1.5 * r1).epsilon(1e-13));
    }
    CHECK(nontrivial >= 20);
}

TEST_CASE("conformal covariance: V -> V + c with E -> E + c leaves curvature fixed") {
    const double c = 0.45;
    SUBCASE("gaussian curvature, d = 2") {
        auto shifted = gaussian_plus_level(2, c, -0.9, 0.7, 5);
        auto plain = gaussian_plus_level(2, 0.0, -0.9, 0.7, 5);
        JacobiMetric ms(shifted, 1.4 + c);
        JacobiMetric mp(plain, 1.4);
        RngStream rng(5);
        for (int i = 0; i < 10; ++i) {
            Vec q = rng.uniform_in_box(Vec{-1.5, -1.5}, Vec{1.5, 1.5});
            CHECK(gaussian_curvature(ms, q) ==
                  doctest::Approx(gaussian_curvature(mp, q)).epsilon(1e-9));
        }
    }
    SUBCASE("scalar curvature, d = 3") {
        auto shifted = gaussian_plus_level(3, c, -0.9, 0.7, 3);
        auto plain = gaussian_plus_level(3, 0.0, -0.9, 0.7, 3);
        JacobiMetric ms(shifted, 1.4 + c);
        JacobiMetric mp(plain, 1.4);
        RngStream rng(6);
        for (int i = 0; i < 5; ++i) {
            Vec q = rng.uniform_in_box(Vec{-1.0, -1.0, -1.0}, Vec{1.0, 1.0, 1.0});
            CHECK(scalar_curvature(ms, q) ==
                  doctest::Approx(scalar_curvature(mp, q)).epsilon(1e-9));
        }
    }
}

TEST_CASE("curvature threshold: yukawa site, finite-range site, vacuum") {
    Vec lo{-2.0, -2.0}, hi{2.0, 2.0};

    SUBCASE("yukawa: finite threshold, monotone predicate, tight bracket") {
        auto field = single_site_field(2, make_yukawa_term(2, 1.0, 1.0));
        auto scan = curvature_threshold(field, MetricConvention::absolute, lo, hi, 41, 1e-2,
                                        0.05, 80.0, 25);
        REQUIRE(scan.found);
        CHECK_FALSE(scan.at_lower_bound);
        CHECK(scan.non_monotone.empty());
        CHECK(scan.e_hi - scan.e_lo <= 1e-3 * scan.e_hi);

        // verify the bracket against direct evaluations on the same grid
        auto probes = curvature_probe_grid(field, lo, hi, 41, 1e-2);
        double worst_lo = -1e300, worst_hi = -1e300;
        JacobiMetric m_lo(field, scan.e_lo), m_hi(field, scan.e_hi);
        for (const Vec& q : probes) {
            worst_lo = std::max(worst_lo, gaussian_curvature(m_lo, q));
            worst_hi = std::max(worst_hi, gaussian_curvature(m_hi, q));
        }
        CHECK(worst_lo > 0.0);
        CHECK(worst_hi <= 0.0);
    }
    SUBCASE("finite-range cosine site also has a finite threshold") {
        auto field = single_site_field(2, make_finite_range_term(2, 1.0, 0.7, 3));
        auto scan = curvature_threshold(field, MetricConvention::absolute, lo, hi, 31, 1e-2,
                                        0.05, 80.0, 17);
        CHECK(scan.found);
        CHECK(scan.non_monotone.empty());
    }
    SUBCASE("vacuum qualifies at the lower bound") {
        auto field = free_field(2);
        auto scan = curvature_threshold(field, MetricConvention::absolute, lo, hi, 9, 0.0, 0.5,
                                        4.0, 5);
        CHECK(scan.found);
        CHECK(scan.at_lower_bound);
        CHECK(scan.e_lo == scan.e_hi);
    }
}

TEST_CASE("geodesic against reparametrized trajectory") {
    SUBCASE("vacuum: straight lines coincide") {
        auto field = free_field(2, 50.0);
        JacobiMetric m(field, 0.745);  // H of the chosen initial state
        PhaseState x0(Vec{0.1, -0.2}, Vec{0.7, 1.0});
        auto cmp = geodesic_vs_trajectory(m, x0, 4.0, 1e-3);
        CHECK(cmp.completed);
        CHECK(cmp.max_deviation < 1e-12);
        CHECK(cmp.arclength_covered == doctest::Approx(4.0));
    }
    SUBCASE("constant level: straight lines at rescaled speed") {
        auto field = gaussian_plus_level(2, 0.35, 0.0, 0.7, 6);
        double e = 1.1;
        Vec q0{-1.0, 0.3};
        double speed = std::sqrt(2.0 * (e - 0.35));
        Vec dir{1.0, 0.2};
        Vec p0 = (speed / dir.norm()) * dir;
        auto cmp = geodesic_vs_trajectory(JacobiMetric(field, e), PhaseState(q0, p0), 3.0, 1e-3);
        CHECK(cmp.completed);
        CHECK(cmp.max_deviation < 1e-10);
    }
    SUBCASE("smooth random field: cross-integration agreement") {
        auto field = random_gaussian_wells_2d(2024, 12);
        double e = 1.8;
        Vec q0{0.0, 0.0};
        double v0 = field.value(q0);
        Vec dir{0.6, 0.8};
        Vec p0 = std::sqrt(2.0 * (e - v0)) * dir;  // dir is unit
        auto cmp = geodesic_vs_trajectory(JacobiMetric(field, e), PhaseState(q0, p0), 5.0, 1e-4);
        CHECK(cmp.completed);
        CHECK(cmp.max_deviation < 1e-5);

        // wrong-energy metric is rejected
        CHECK_THROWS_AS(geodesic_vs_trajectory(JacobiMetric(field, e + 0.1),
                                               PhaseState(q0, p0), 1.0, 1e-3),
                        ConfigError);
    }
    SUBCASE("turning point aborts with a partial result") {
        auto field = single_site_field(2, make_gaussian_term(2, 1.5, 0.6));
        double e = 1.2;
        Vec q0{-3.0, 0.0};
        double v0 = field.value(q0);
        Vec p0{std::sqrt(2.0 * (e - v0)), 0.0};
        auto cmp = geodesic_vs_trajectory(JacobiMetric(field, e), PhaseState(q0, p0), 10.0, 1e-3);
        CHECK_FALSE(cmp.completed);
        CHECK(cmp.arclength_covered > 0.5);
        CHECK(cmp.arclength_covered < 10.0);
        CHECK(cmp.max_deviation < 1e-3);  // the partial legs still agree
    }
}

TEST_CASE("curvature map csv") {
    auto field = single_site_field(2, make_yukawa_term(2, 1.0, 1.0));
    JacobiMetric m(field, 2.0);
    std::ostringstream os;
    write_curvature_map_csv(os, m, Vec{-1.0, -1.0}, Vec{1.0, 1.0}, 5, 0.05);
    std::istringstream is(os.str());
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "x,y,K");
    int rows = 0;
    std::string first;
    while (std::getline(is, line)) {
        if (rows == 0) first = line;
        ++rows;
    }
    CHECK(rows == 24);  // 5x5 grid minus the excluded singular node
    double k_corner = gaussian_curvature(m, Vec{-1.0, -1.0});
    std::istringstream fs(first);
    std::string x, y, k;
    std::getline(fs, x, ',');
    std::getline(fs, y, ',');
    std::getline(fs, k, ',');
    CHECK(std::stod(x) == -1.0);
    CHECK(std::stod(y) == -1.0);
    CHECK(std::stod(k) == doctest::Approx(k_corner).epsilon(1e-15));
}

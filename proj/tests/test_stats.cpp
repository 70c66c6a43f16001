#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "randpot/errors.hpp"
#include "randpot/oracle1d.hpp"
#include "randpot/parallel.hpp"
#include "randpot/special.hpp"
#include "randpot/stats.hpp"

using namespace randpot;

namespace {

PotentialField free_field_2d(double half = 10.0) {
    PoissonConfiguration cfg;
    cfg.d = 2;
    cfg.win_lo = Vec{-half, -half};
    cfg.win_hi = Vec{half, half};
    return PotentialField::points(cfg);
}

PotentialField cosine_field_1d(int halfwidth) {
    LatticeConfiguration cfg;
    cfg.basis = LatticeBasis::cubic(1);
    cfg.window = IndexBox::centered(1, halfwidth);
    cfg.palette.resize(1);
    cfg.palette[0].terms.push_back(make_cosine_lattice_term(1));
    cfg.marks.assign(static_cast<std::size_t>(cfg.window.count()), 0);
    return PotentialField::lattice(cfg);
}

// Lattice of mollified indicators with unit spacing: the bump family is a
// partition of unity, so inside the faithful box the sum is exactly `level`.
PotentialField constant_field_2d(double level, int halfwidth) {
    LatticeConfiguration cfg;
    cfg.basis = LatticeBasis::cubic(2);
    cfg.window = IndexBox::centered(2, halfwidth);
    cfg.palette.resize(1);
    cfg.palette[0].terms.push_back(make_smoothed_indicator_term(2, level));
    cfg.marks.assign(static_cast<std::size_t>(cfg.window.count()), 0);
    return PotentialField::lattice(cfg);
}

PotentialField indicator_poisson_field_2d(std::uint64_t seed) {
    std::vector<SingleSitePotential> palette(1);
    palette[0].terms.push_back(make_smoothed_indicator_term(2, -0.8));
    auto cfg = sample_poisson_configuration(RngStream(seed), Vec{-3.0, -3.0}, Vec{3.0, 3.0},
                                            {0.5}, std::move(palette));
    return PotentialField::points(cfg);
}

std::string csv_of(const EnergyVelocityHistogram& h) {
    std::ostringstream os;
    h.write_csv(os, {{"note", "unit-test"}});
    return os.str();
}

}  // namespace

TEST_CASE("histogram binning, overflow and merge bookkeeping") {
    auto h = EnergyVelocityHistogram::regular(2, 0.0, 4.0, 4, 2.0, 4);
    CHECK(h.bin_count() == 4u * 4u * 4u);
    CHECK(h.velocity_edges_symmetric(0.0));  // mirror construction is exact

    // half-open bins: lower edge in, upper edge out
    CHECK(h.add(0.0, Vec{-2.0, 0.0}, false));
    CHECK_FALSE(h.add(0.0, Vec{2.0, 0.0}, false));   // v1 == upper edge
    CHECK_FALSE(h.add(4.0, Vec{0.0, 0.0}, false));   // E == upper edge
    CHECK_FALSE(h.add(-0.01, Vec{0.0, 0.0}, true));  // E below range, flagged
    CHECK(h.add(3.999, Vec{1.999, -1.999}, true));
    CHECK(h.total == 5);
    CHECK(h.overflow == 3);
    CHECK(h.overflow_flagged == 1);

    std::uint64_t sum = 0, fsum = 0;
    for (auto c : h.counts) sum += c;
    for (auto c : h.flagged) fsum += c;
    CHECK(sum + h.overflow == h.total);
    CHECK(fsum == 1);

    SUBCASE("merge equals single pass and commutes") {
        auto layout = EnergyVelocityHistogram::regular(1, 0.0, 1.0, 2, 1.0, 2);
        auto a = layout, b = layout, whole = layout;
        const double es[] = {0.1, 0.6, 0.6, 0.9, 0.3};
        const double vs[] = {-0.5, 0.2, 0.2, -0.1, 0.99};
        for (int i = 0; i < 3; ++i) {
            a.add(es[i], Vec{vs[i]}, i == 0);
            whole.add(es[i], Vec{vs[i]}, i == 0);
        }
        for (int i = 3; i < 5; ++i) {
            b.add(es[i], Vec{vs[i]}, false);
            whole.add(es[i], Vec{vs[i]}, false);
        }
        auto ab = a, ba = b;
        ab.merge(b);
        ba.merge(a);
        CHECK(ab.counts == whole.counts);
        CHECK(ab.flagged == whole.flagged);
        CHECK(ab.total == whole.total);
        CHECK(ba.counts == whole.counts);

        auto other = EnergyVelocityHistogram::regular(1, 0.0, 1.0, 3, 1.0, 2);
        CHECK_THROWS_AS(ab.merge(other), ConfigError);
    }
}

TEST_CASE("parallel map is worker-count invariant and propagates exceptions") {
    auto task = [](std::size_t i) {
        double x = 0.0;
        for (int k = 1; k <= 50; ++k) x += std::sin(static_cast<double>(i) * k) / k;
        return x;
    };
    auto one = parallel_map<double>(1, 400, task);
    auto eight = parallel_map<double>(8, 400, task);
    CHECK(one == eight);  // bitwise identical

    std::function<int(std::size_t)> bad = [](std::size_t i) -> int {
        if (i == 37) throw NumericalError("boom");
        return static_cast<int>(i);
    };
    CHECK_THROWS_AS(parallel_map<int>(4, 100, bad), NumericalError);
    CHECK_THROWS_AS(parallel_map<int>(0, 4, bad), ConfigError);
}

TEST_CASE("inversion test: exact symmetry, hand-checked value, layout guard") {
    auto h = EnergyVelocityHistogram::regular(1, 0.0, 1.0, 1, 1.0, 4);

    SUBCASE("symmetric counts give zero distance") {
        h.counts = {3, 5, 5, 3};
        h.total = 16;
        auto r = inversion_symmetry_test(h);
        CHECK(r.tv_distance == 0.0);
        CHECK(r.pass);
    }
    SUBCASE("hand-computed distance") {
        h.counts = {6, 1, 3, 2};
        h.total = 12;
        auto r = inversion_symmetry_test(h);
        // reflected counts are {2,3,1,6}; L1 = 4+2+2+4 = 12; TV = 12/(2*12)
        CHECK(r.tv_distance == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(r.threshold == doctest::Approx(4.0 / std::sqrt(12.0)));
    }
    SUBCASE("asymmetric layout is rejected") {
        h.velocity_edges[0] = {-1.0, 0.5, 0.7, 0.8, 1.0};
        h.counts.assign(4, 1);
        CHECK_THROWS_AS(inversion_symmetry_test(h), ConfigError);
    }
    SUBCASE("empty histogram is rejected") {
        CHECK_THROWS_AS(inversion_symmetry_test(h), NumericalError);
    }
}

TEST_CASE("free ensemble: paraboloid support, inversion symmetry, worker determinism") {
    FieldSampler sampler = [](RngStream&) { return free_field_2d(); };
    EnsembleSpec spec;
    spec.num_configurations = 4;
    spec.trajectories_per_configuration = 50;
    spec.duration = 2.0;
    spec.flow.step = 1e-2;
    spec.box_halfwidth = 5.0;
    spec.e_max = 1.5;

    auto layout = EnergyVelocityHistogram::regular(2, -0.5, 2.0, 5, 2.0, 4);
    auto hist = energy_velocity_distribution(2, sampler, 0.0, 0.0, spec, layout, 20260815);

    CHECK(hist.total == 200);
    CHECK(hist.overflow == 0);
    std::uint64_t fsum = 0;
    for (auto c : hist.flagged) fsum += c;
    CHECK(fsum == 0);  // ballistic estimates have zero gap
    CHECK(hist.momentum_radius == doctest::Approx(std::sqrt(3.0)));

    // Support lies on E = |v|^2/2: every occupied bin's energy interval must
    // meet the kinetic-energy range of its velocity cell.  Bins fully below
    // E = 0 must stay empty (momentum-bound support property).
    for (int e = 0; e < hist.energy_bins(); ++e) {
        double e_lo = hist.energy_edges[static_cast<std::size_t>(e)];
        double e_hi = hist.energy_edges[static_cast<std::size_t>(e) + 1];
        std::vector<int> v(2, 0);
        for (v[0] = 0; v[0] < hist.velocity_bins(0); ++v[0])
            for (v[1] = 0; v[1] < hist.velocity_bins(1); ++v[1]) {
                std::uint64_t c = hist.counts[hist.flat_index(e, v)];
                if (c == 0) continue;
                CHECK(e_hi > 0.0);
                double kmin = 0.0, kmax = 0.0;
                for (int k = 0; k < 2; ++k) {
                    const auto& ed = hist.velocity_edges[static_cast<std::size_t>(k)];
                    double a = ed[static_cast<std::size_t>(v[static_cast<std::size_t>(k)])];
                    double b = ed[static_cast<std::size_t>(v[static_cast<std::size_t>(k)]) + 1];
                    double lo = (a <= 0.0 && 0.0 <= b) ? 0.0 : std::min(std::fabs(a), std::fabs(b));
                    double hi = std::max(std::fabs(a), std::fabs(b));
                    kmin += 0.5 * lo * lo;
                    kmax += 0.5 * hi * hi;
                }
                CHECK(e_lo <= kmax + 1e-12);
                CHECK(e_hi >= kmin - 1e-12);
            }
    }

    auto inv = inversion_symmetry_test(hist);
    CHECK(inv.pass);

    SUBCASE("eight workers reproduce the one-worker artifact byte for byte") {
        EnsembleSpec spec8 = spec;
        spec8.workers = 8;
        auto hist8 = energy_velocity_distribution(2, sampler, 0.0, 0.0, spec8,
                                                  EnergyVelocityHistogram::regular(
                                                      2, -0.5, 2.0, 5, 2.0, 4),
                                                  20260815);
        CHECK(hist8.counts == hist.counts);
        CHECK(hist8.flagged == hist.flagged);
        CHECK(csv_of(hist8) == csv_of(hist));
    }
    SUBCASE("precondition and rejection guards") {
        CHECK_THROWS_AS(energy_velocity_distribution(
                            2, sampler, 0.0, /*v_max_est=*/2.0, spec,
                            EnergyVelocityHistogram::regular(2, -0.5, 2.0, 5, 2.0, 4), 1),
                        ConfigError);
        EnsembleSpec starved = spec;
        starved.num_configurations = 1;
        starved.trajectories_per_configuration = 10;
        starved.duration = 0.1;
        starved.e_max = 0.01;  // with v_min_est = -100 almost every p is rejected
        CHECK_THROWS_AS(energy_velocity_distribution(
                            2, sampler, -100.0, 0.0, starved,
                            EnergyVelocityHistogram::regular(2, -0.5, 2.0, 5, 2.0, 4), 1),
                        NumericalError);
    }
}

TEST_CASE("1d cosine ensemble: transit bins sit on the drift curve") {
    FieldSampler sampler = [](RngStream&) { return cosine_field_1d(400); };
    EnsembleSpec spec;
    spec.num_configurations = 3;
    spec.trajectories_per_configuration = 20;
    spec.duration = 150.0;
    spec.flow.step = 2e-3;
    spec.box_halfwidth = 3.0;
    spec.e_max = 2.5;

    auto layout = EnergyVelocityHistogram::regular(1, -1.0, 2.5, 7, 2.5, 40);
    auto hist = energy_velocity_distribution(1, sampler, -1.0, 1.0, spec, layout, 91);
    CHECK(hist.total == 60);
    CHECK(hist.overflow == 0);

    // For E-bins strictly above the potential maximum every orbit transits,
    // so |v_hat| must land within the drift range of the bin (plus the
    // finite-horizon correction of order one period / duration).
    const double slack = 0.03;
    int checked = 0;
    for (int e = 0; e < hist.energy_bins(); ++e) {
        double e_lo = hist.energy_edges[static_cast<std::size_t>(e)];
        double e_hi = hist.energy_edges[static_cast<std::size_t>(e) + 1];
        if (e_lo < 1.49) continue;
        double d_lo = cosine_drift_closed_form(e_lo) - slack;
        double d_hi = cosine_drift_closed_form(e_hi) + slack;
        std::vector<int> v(1, 0);
        for (v[0] = 0; v[0] < hist.velocity_bins(0); ++v[0]) {
            std::uint64_t c = hist.counts[hist.flat_index(e, v)];
            if (c == 0) continue;
            ++checked;
            const auto& ed = hist.velocity_edges[0];
            double a = ed[static_cast<std::size_t>(v[0])];
            double b = ed[static_cast<std::size_t>(v[0]) + 1];
            bool plus = (a <= d_hi) && (b >= d_lo);
            bool minus = (a <= -d_lo) && (b >= -d_hi);
            CHECK((plus || minus));
        }
    }
    CHECK(checked >= 5);  // the slice is actually populated
}

TEST_CASE("liouville mass: constant-field exactness and phase-space oracle") {
    SUBCASE("vacuum field, closed form pi") {
        auto field = free_field_2d();
        auto est = liouville_mass_estimate(field, 0.5, Vec{0.0, 0.0}, Vec{1.0, 1.0}, 1000,
                                           RngStream(7));
        CHECK(std::fabs(est.value - 3.14159265358979324) < 1e-12);
        CHECK(est.std_error == 0.0);  // constant integrand, zero variance
    }
    SUBCASE("constant level from the partition of unity") {
        auto field = constant_field_2d(0.7, 4);
        double exact = unit_ball_volume(2) * 16.0 * (2.0 * (1.3 - 0.7));
        auto est = liouville_mass_estimate(field, 1.3, Vec{-2.0, -2.0}, Vec{2.0, 2.0}, 2000,
                                           RngStream(8));
        CHECK(std::fabs(est.value / exact - 1.0) < 1e-12);
        CHECK(est.std_error < 1e-11);
    }
    SUBCASE("random field: q-space reduction agrees with phase-space MC") {
        auto field = indicator_poisson_field_2d(4242);
        const double E = 1.0;
        Vec lo{-1.5, -1.5}, hi{1.5, 1.5};
        auto range = estimate_range(field, lo, hi, 41);
        double p_radius = 1.05 * std::sqrt(2.0 * (E - range.vmin));

        auto a = liouville_mass_estimate(field, E, lo, hi, 20000, RngStream(101));
        auto b = liouville_mass_phase_space(field, E, lo, hi, p_radius, 60000, RngStream(202));
        CHECK(a.std_error > 0.0);
        CHECK(b.std_error > 0.0);
        double gap = std::fabs(a.value - b.value);
        double se = std::sqrt(a.std_error * a.std_error + b.std_error * b.std_error);
        CHECK(gap <= 3.0 * se);
    }
}

TEST_CASE("recurrence counting: synthetic entries, quotient wrap, orbit returns") {
    SUBCASE("synthetic entry/exit pattern with gap filter") {
        std::vector<FlowSample> traj;
        const double qs[] = {0.5, 0.5, 2.0, 0.5, 2.0, 0.5, 2.0, 2.0, 0.5, 2.0};
        for (int i = 0; i < 10; ++i)
            traj.push_back({static_cast<double>(i), Vec{qs[i]}, Vec{0.0}, 0.0});
        auto r0 = recurrence_rate(traj, Vec{0.0}, Vec{1.0}, 0.0);
        CHECK(r0.count == 4);
        CHECK(r0.times == std::vector<double>{0.0, 3.0, 5.0, 8.0});
        auto r1 = recurrence_rate(traj, Vec{0.0}, Vec{1.0}, 2.5);
        CHECK(r1.count == 3);
        CHECK(r1.times == std::vector<double>{0.0, 3.0, 8.0});
    }
    SUBCASE("ballistic motion on the unit quotient returns once per period") {
        std::vector<FlowSample> traj;
        for (int i = 0; i <= 1000; ++i) {
            double t = 0.01 * i;
            traj.push_back({t, Vec{t}, Vec{1.0}, 0.5});
        }
        auto r = recurrence_rate(traj, Vec{0.2}, Vec{0.4}, 0.5, Vec{1.0});
        CHECK(r.count == 10);
        auto plain = recurrence_rate(traj, Vec{0.2}, Vec{0.4}, 0.0);
        CHECK(plain.count == 1);  // without the quotient the cell is hit once
    }
    SUBCASE("trapped orbit returns repeatedly, ballistic control does not") {
        PoissonConfiguration cfg;
        cfg.d = 2;
        cfg.win_lo = Vec{-12.0, -12.0};
        cfg.win_hi = Vec{12.0, 12.0};
        cfg.points.push_back({Vec(2), 0});
        cfg.palette.resize(1);
        cfg.palette[0].terms.push_back(make_gaussian_term(2, -1.5, 0.8));
        auto well = PotentialField::points(cfg);

        FlowSpec fs;
        fs.step = 1e-3;
        fs.record_stride = 10;
        PhaseState init(Vec{0.3, 0.0}, Vec{0.0, 0.3});
        auto run = integrate_flow(well, init, 100.0, fs);
        REQUIRE(run.status == FlowStatus::completed);
        auto rec = recurrence_rate(run.samples, Vec{0.15, -0.15}, Vec{0.45, 0.15}, 1.0);
        CHECK(rec.count >= 5);
        for (std::size_t i = 1; i < rec.times.size(); ++i)
            CHECK(rec.times[i] - rec.times[i - 1] >= 1.0);

        auto free = free_field_2d();
        PhaseState bal(Vec{-5.0, 0.0}, Vec{1.0, 0.0});
        auto runb = integrate_flow(free, bal, 9.0, fs);
        auto recb = recurrence_rate(runb.samples, Vec{-0.1, -0.1}, Vec{0.1, 0.1}, 0.0);
        CHECK(recb.count == 1);
    }
}

TEST_CASE("poisson goodness of fit separates matched from mismatched rates") {
    RngStream rng(555);
    std::vector<std::uint64_t> draws(10000);
    for (auto& v : draws) v = rng.poisson(3.7);

    auto good = poisson_counts_gof(draws, 3.7);
    CHECK(good.pooled_bins >= 5);
    CHECK(good.dof == good.pooled_bins - 1);
    CHECK(good.p_value > 0.01);

    auto bad = poisson_counts_gof(draws, 4.4);
    CHECK(bad.p_value < 1e-6);

    CHECK_THROWS_AS(poisson_counts_gof(draws, 0.0), ConfigError);
    CHECK_THROWS_AS(poisson_counts_gof(draws, 3.7, 1e9), ConfigError);
    CHECK_THROWS_AS(poisson_counts_gof({}, 3.7), ConfigError);
}

TEST_CASE("histogram csv layout") {
    auto h = EnergyVelocityHistogram::regular(1, 0.0, 1.0, 2, 1.0, 2);
    h.add(0.25, Vec{-0.5}, false);
    h.add(0.75, Vec{0.5}, true);
    std::string text = csv_of(h);

    CHECK(text.rfind("# dim=1", 0) == 0);
    CHECK(text.find("# note=unit-test") != std::string::npos);
    CHECK(text.find("E_lo,E_hi,v1_lo,v1_hi,count,flagged_count\n") != std::string::npos);
    CHECK(text.find("0,0.5,-1,0,1,0\n") != std::string::npos);
    CHECK(text.find("0.5,1,0,1,1,1\n") != std::string::npos);

    int rows = 0;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line))
        if (!line.empty() && line[0] != '#' && line[0] != 'E') ++rows;
    CHECK(rows == 4);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "randpot/configuration.hpp"
#include "randpot/field.hpp"
#include "randpot/profile.hpp"
#include "randpot/quadrature.hpp"
#include "randpot/rng.hpp"
#include "randpot/single_site.hpp"
#include "randpot/special.hpp"
#include "randpot/vec.hpp"

using namespace randpot;

namespace {

// Central finite differences with one Richardson step, used as independent
// oracles for analytic derivatives.  The extrapolation kills the h^2
// truncation term, which matters for the polynomial mollifiers whose fourth
// derivatives reach ~1e5.
template <typename F>
Vec fd_gradient(F&& f, const Vec& q, double h = 1e-4) {
    auto central = [&](double step) {
        Vec g(q.dim());
        for (int k = 0; k < q.dim(); ++k) {
            Vec qp = q, qm = q;
            qp[k] += step;
            qm[k] -= step;
            g[k] = (f(qp) - f(qm)) / (2.0 * step);
        }
        return g;
    };
    Vec g1 = central(h), g2 = central(0.5 * h);
    Vec g(q.dim());
    for (int k = 0; k < q.dim(); ++k) g[k] = (4.0 * g2[k] - g1[k]) / 3.0;
    return g;
}

template <typename F>
Mat fd_hessian(F&& f, const Vec& q, double h = 4e-4) {
    const int d = q.dim();
    auto central = [&](double step) {
        Mat H(d);
        const double f0 = f(q);
        for (int i = 0; i < d; ++i) {
            Vec qp = q, qm = q;
            qp[i] += step;
            qm[i] -= step;
            H(i, i) = (f(qp) - 2.0 * f0 + f(qm)) / (step * step);
            for (int j = i + 1; j < d; ++j) {
                Vec qpp = q, qpm = q, qmp = q, qmm = q;
                qpp[i] += step; qpp[j] += step;
                qpm[i] += step; qpm[j] -= step;
                qmp[i] -= step; qmp[j] += step;
                qmm[i] -= step; qmm[j] -= step;
                H(i, j) = H(j, i) = (f(qpp) - f(qpm) - f(qmp) + f(qmm)) / (4.0 * step * step);
            }
        }
        return H;
    };
    Mat H1 = central(h), H2 = central(0.5 * h);
    Mat H(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) H(i, j) = (4.0 * H2(i, j) - H1(i, j)) / 3.0;
    return H;
}

void check_derivatives(const SingleSitePotential& site, const Vec& q, double grad_tol,
                       double hess_tol) {
    EvalAccum acc(q.dim());
    site.accumulate(q, Need::hessian, acc);
    auto f = [&](const Vec& x) {
        EvalAccum a(x.dim());
        site.accumulate(x, Need::value, a);
        return a.V;
    };
    Vec g = fd_gradient(f, q);
    Mat H = fd_hessian(f, q);
    for (int i = 0; i < q.dim(); ++i) {
        CHECK(std::fabs(acc.grad[i] - g[i]) < grad_tol);
        for (int j = 0; j < q.dim(); ++j) CHECK(std::fabs(acc.hess(i, j) - H(i, j)) < hess_tol);
    }
    double tr = 0.0;
    for (int i = 0; i < q.dim(); ++i) tr += acc.hess(i, i);
    CHECK(std::fabs(acc.lap - tr) < 1e-12);
}

}  // namespace

TEST_CASE("vec and mat basics") {
    Vec a(3);
    a[0] = 1.0; a[1] = -2.0; a[2] = 0.5;
    CHECK(a.norm() == doctest::Approx(std::sqrt(5.25)));

    Mat m(3);
    m(0, 0) = 2.0; m(0, 1) = 1.0; m(0, 2) = 0.0;
    m(1, 0) = 1.0; m(1, 1) = 3.0; m(1, 2) = 1.0;
    m(2, 0) = 0.0; m(2, 1) = 1.0; m(2, 2) = 4.0;
    CHECK(m.det() == doctest::Approx(2.0 * (12 - 1) - 1.0 * 4.0));
    Mat id = m * m.inverse();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(std::fabs(id(i, j) - (i == j ? 1.0 : 0.0)) < 1e-13);
}

TEST_CASE("rng determinism and stream independence") {
    RngStream r1(42), r2(42);
    for (int i = 0; i < 100; ++i) CHECK(r1.next_u64() == r2.next_u64());

    RngStream base(7);
    RngStream a = base.derive("alpha", 0);
    RngStream b = base.derive("alpha", 1);
    RngStream c = base.derive("beta", 0);
    CHECK(a.next_u64() != b.next_u64());
    CHECK(a.next_u64() != c.next_u64());

    // uniform01 in [0,1), mean near 1/2
    RngStream u(99);
    double s = 0.0;
    for (int i = 0; i < 20000; ++i) {
        double x = u.uniform01();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
        s += x;
    }
    CHECK(std::fabs(s / 20000 - 0.5) < 0.01);
}

TEST_CASE("rng poisson moments") {
    RngStream r(1234);
    const double lam = 37.5;
    double s = 0.0, s2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double k = static_cast<double>(r.poisson(lam));
        s += k;
        s2 += k * k;
    }
    double mean = s / n;
    double var = s2 / n - mean * mean;
    CHECK(std::fabs(mean - lam) < 0.25);
    CHECK(std::fabs(var - lam) < 1.5);
}

TEST_CASE("adaptive quadrature on known integrals") {
    auto r1 = integrate_adaptive([](double x) { return x * x; }, 0.0, 1.0);
    CHECK(std::fabs(r1.value - 1.0 / 3.0) < 1e-13);
    auto r2 = integrate_adaptive([](double x) { return std::sin(x); }, 0.0, std::numbers::pi);
    CHECK(std::fabs(r2.value - 2.0) < 1e-12);
    // sharp peak: adaptivity required
    auto r3 = integrate_adaptive([](double x) { return 1.0 / (1e-4 + x * x); }, -1.0, 1.0, 1e-12);
    double exact = 2.0 / 1e-2 * std::atan(1.0 / 1e-2);
    CHECK(std::fabs(r3.value - exact) / exact < 1e-11);
}

TEST_CASE("incomplete gamma and chi-square tail") {
    CHECK(gamma_p(1.0, 1.0) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
    CHECK(gamma_p(2.5, 1.7) + gamma_q(2.5, 1.7) == doctest::Approx(1.0).epsilon(1e-13));
    // 2 dof: survival = exp(-x/2)
    CHECK(chi2_sf(3.2, 2) == doctest::Approx(std::exp(-1.6)).epsilon(1e-12));
    CHECK(unit_ball_volume(2) == doctest::Approx(std::numbers::pi).epsilon(1e-14));
    CHECK(unit_ball_volume(3) == doctest::Approx(4.0 * std::numbers::pi / 3.0).epsilon(1e-14));
}

TEST_CASE("radial profile reproduces jets and moments") {
    // two-piece profile: specified jets at r = 0, 1, 2
    std::vector<ProfileKnot> knots(3);
    knots[0].r = 0.0;
    knots[0].jet = {-1.0, 0.0, 3.0, 0.0, 0.0};
    knots[1].r = 1.0;
    knots[1].jet = {0.5, 1.0, -2.0, 0.5, 0.0};
    knots[2].r = 2.0;
    knots[2].jet = {0.0, 0.0, 0.0, 0.0, 0.0};
    RadialProfile prof(knots);

    for (const auto& kn : knots) {
        // interior evaluation limits from both sides agree with the jet
        for (int k = 0; k <= 4; ++k) {
            double lo = prof.eval(std::max(0.0, kn.r - 1e-12), k);
            double hi = prof.eval(std::min(2.0, kn.r + 1e-12), k);
            CHECK(std::fabs(lo - kn.jet[static_cast<std::size_t>(k)]) < 1e-6);
            CHECK(std::fabs(hi - kn.jet[static_cast<std::size_t>(k)]) < 1e-6);
        }
    }

    // moment oracle: adaptive quadrature of r^2 * p(r)
    auto q = integrate_adaptive([&](double r) { return r * r * prof.eval(r, 0); }, 0.0, 2.0, 1e-12);
    CHECK(std::fabs(prof.total_moment(2) - q.value) < 1e-10);
}

TEST_CASE("mollified indicator: mass, support, partition of unity") {
    auto mass = integrate_adaptive([](double x) { return mollifier_bump_1d(x, 0); },
                                   -0.25, 0.25, 1e-13);
    CHECK(std::fabs(mass.value - 1.0) < 1e-12);
    CHECK(mollifier_bump_1d(0.26, 0) == 0.0);
    CHECK(mollifier_bump_1d(-0.26, 0) == 0.0);

    // F1(y) = \int f(x) [y-1 <= x <= y] dx; translates sum to 1 pointwise
    for (double y : {-0.2, 0.0, 0.13, 0.5, 0.77, 1.0, 1.2}) {
        double s = 0.0;
        for (int k = -3; k <= 3; ++k) s += mollified_indicator_1d(y - k, 0);
        CHECK(std::fabs(s - 1.0) < 1e-14);
    }
    // evenness about y = 1/2
    for (double y : {0.1, 0.3, 0.45}) {
        CHECK(mollified_indicator_1d(0.5 + y, 0) ==
              doctest::Approx(mollified_indicator_1d(0.5 - y, 0)).epsilon(1e-14));
    }
    // derivative consistency (FD oracle)
    for (double y : {-0.1, 0.2, 0.6, 1.1}) {
        double h = 1e-6;
        double d1 = (mollified_indicator_1d(y + h, 0) - mollified_indicator_1d(y - h, 0)) / (2 * h);
        CHECK(std::fabs(d1 - mollified_indicator_1d(y, 1)) < 1e-8);
        double d2 = (mollified_indicator_1d(y + h, 1) - mollified_indicator_1d(y - h, 1)) / (2 * h);
        CHECK(std::fabs(d2 - mollified_indicator_1d(y, 2)) < 1e-7);
    }
}

TEST_CASE("single-site derivative oracles") {
    Vec q2(2);
    q2[0] = 0.31;
    q2[1] = -0.17;

    SUBCASE("gaussian") {
        SingleSitePotential s;
        s.terms.push_back(make_gaussian_term(2, 1.3, 0.8));
        check_derivatives(s, q2, 1e-8, 1e-6);
    }
    SUBCASE("smoothed indicator") {
        SingleSitePotential s;
        s.terms.push_back(make_smoothed_indicator_term(2, -2.0));
        check_derivatives(s, q2, 1e-7, 1e-5);
    }
    SUBCASE("cosine lattice") {
        SingleSitePotential s;
        s.terms.push_back(make_cosine_lattice_term(2, 1.0));
        check_derivatives(s, q2, 1e-7, 1e-5);
        Vec q3(2);
        q3[0] = 0.9;   // inside support of F but outside the bump
        q3[1] = 0.05;
        check_derivatives(s, q3, 1e-7, 1e-5);
    }
    SUBCASE("yukawa") {
        SingleSitePotential s;
        s.terms.push_back(make_yukawa_term(2, 1.0, 2.0));
        check_derivatives(s, q2, 1e-7, 1e-5);
        EvalAccum acc(2);
        s.accumulate(q2, Need::value, acc);
        double r = q2.norm();
        CHECK(acc.V == doctest::Approx(-std::exp(-2.0 * r) / r).epsilon(1e-13));
    }
    SUBCASE("finite range") {
        SingleSitePotential s;
        s.terms.push_back(make_finite_range_term(2, 1.0, 0.9, 3));
        // probe away from the 1/r singularity so FD truncation stays small
        Vec qf(2);
        qf[0] = 0.61;
        qf[1] = -0.37;
        check_derivatives(s, qf, 1e-7, 1e-5);
        Vec far(2);
        far[0] = 1.8;  // beyond the support radius pi/(2 lambda) ~ 1.745
        EvalAccum acc(2);
        s.accumulate(far, Need::hessian, acc);
        CHECK(acc.V == 0.0);
        CHECK(acc.grad[0] == 0.0);
    }
}

TEST_CASE("site scaling convention") {
    // scaled site:  W_a(q) = a^{-d} W(q / a)
    SingleSitePotential w;
    w.terms.push_back(make_gaussian_term(2, 0.7, 0.5));
    const double a = 1.7;
    SingleSitePotential wa = scale_potential(w, a);

    Vec q(2);
    q[0] = 0.4;
    q[1] = -0.2;
    EvalAccum lhs(2), rhs(2);
    wa.accumulate(q, Need::value, lhs);
    Vec qs = q * (1.0 / a);
    w.accumulate(qs, Need::value, rhs);
    CHECK(lhs.V == doctest::Approx(rhs.V / (a * a)).epsilon(1e-14));
}

TEST_CASE("lattice field equals direct sum and respects shifts") {
    RngStream rng(2024);
    auto basis = LatticeBasis::cubic(2);
    auto window = IndexBox::centered(2, 6);
    std::vector<SingleSitePotential> palette(2);
    palette[0].terms.push_back(make_gaussian_term(2, 1.0, 0.3));
    palette[1].terms.push_back(make_finite_range_term(2, 0.8, 0.45, 3));
    auto cfg = sample_lattice_configuration(rng.derive("marks", 0), basis, window, {0.5, 0.5},
                                            palette);
    auto field = PotentialField::lattice(cfg);

    Vec q(2);
    q[0] = 0.37;
    q[1] = -1.21;

    // direct sum over every site, no truncation
    auto brute = [&](const Vec& x) {
        double v = 0.0;
        IndexVec idx = window.lo;
        for (std::int64_t f = 0; f < window.count(); ++f) {
            EvalAccum acc(2);
            cfg.palette[cfg.mark_at(idx)].accumulate(x - basis.point(idx), Need::value, acc);
            v += acc.V;
            for (int k = 1; k >= 0; --k) {
                if (++idx[k] <= window.hi[k]) break;
                idx[k] = window.lo[k];
            }
        }
        return v;
    };
    FieldEval ev = field.evaluate(q);
    CHECK(std::fabs(ev.V - brute(q)) <= ev.tail_bound + 1e-13);

    // analytic derivatives vs FD of the field itself
    auto fval = [&](const Vec& x) { return field.value(x); };
    Vec g = fd_gradient(fval, q);
    Mat H = fd_hessian(fval, q);
    for (int i = 0; i < 2; ++i) {
        CHECK(std::fabs(ev.grad[i] - g[i]) < 1e-7);
        for (int j = 0; j < 2; ++j) CHECK(std::fabs(ev.hess(i, j) - H(i, j)) < 1e-5);
    }

    // shift: V(shifted, q) = V(orig, q + B ell)
    IndexVec ell{};
    ell[0] = 2;
    ell[1] = -1;
    auto shifted = PotentialField::lattice(shift_configuration(cfg, ell));
    Vec qp = q + basis.point(ell);
    CHECK(shifted.value(q) == doctest::Approx(field.value(qp)).epsilon(1e-13));
}

TEST_CASE("faithful box and compact-support tails") {
    auto basis = LatticeBasis::cubic(2);
    auto window = IndexBox::centered(2, 5);
    std::vector<SingleSitePotential> palette(1);
    palette[0].terms.push_back(make_smoothed_indicator_term(2, 1.0));
    LatticeConfiguration cfg;
    cfg.basis = basis;
    cfg.window = window;
    cfg.palette = palette;
    cfg.marks.assign(static_cast<std::size_t>(window.count()), 0);
    auto field = PotentialField::lattice(cfg);

    FaithfulBox fb = field.faithful_box();
    CHECK(fb.bounded);
    Vec origin(2);
    CHECK(fb.margin(origin) > 2.0);

    FieldEval ev = field.evaluate(origin);
    CHECK(ev.tail_bound == 0.0);  // compact support: omitted sites contribute nothing
}

TEST_CASE("cosine composite telescopes to a bare lattice cosine") {
    // palette site: product indicator times -sum_k cos(2 pi y_k); lattice sum
    // over all of Z^d collapses to -sum_k cos(2 pi q_k) inside the faithful box
    const int d = 2;
    auto basis = LatticeBasis::cubic(d);
    auto window = IndexBox::centered(d, 7);
    std::vector<SingleSitePotential> palette(1);
    palette[0].terms.push_back(make_cosine_lattice_term(d));
    LatticeConfiguration cfg;
    cfg.basis = basis;
    cfg.window = window;
    cfg.palette = palette;
    cfg.marks.assign(static_cast<std::size_t>(window.count()), 0);
    auto field = PotentialField::lattice(cfg);

    for (double x : {0.0, 0.21, 0.5, -1.4}) {
        for (double y : {0.0, 0.35, -0.8}) {
            Vec q(d);
            q[0] = x;
            q[1] = y;
            double expect = -(std::cos(2 * std::numbers::pi * x) + std::cos(2 * std::numbers::pi * y));
            CHECK(field.value(q) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("poisson field: buckets agree with linear scan") {
    RngStream rng(555);
    Vec lo(2), hi(2);
    lo[0] = lo[1] = -8.0;
    hi[0] = hi[1] = 8.0;
    std::vector<SingleSitePotential> palette(1);
    palette[0].terms.push_back(make_finite_range_term(2, 1.0, 0.7, 3));
    auto cfg = sample_poisson_configuration(rng, lo, hi, {1.0}, palette);
    REQUIRE(cfg.points.size() > 48);  // bucket path engaged

    auto field = PotentialField::points(cfg);
    RngStream probe(777);
    for (int t = 0; t < 40; ++t) {
        Vec q(2);
        q[0] = probe.uniform(-6.0, 6.0);
        q[1] = probe.uniform(-6.0, 6.0);
        double direct = 0.0;
        for (const auto& pt : cfg.points) {
            EvalAccum acc(2);
            cfg.palette[static_cast<std::size_t>(pt.mark)].accumulate(q - pt.x, Need::value, acc);
            direct += acc.V;
        }
        CHECK(field.value(q) == doctest::Approx(direct).epsilon(1e-12));
    }
}

TEST_CASE("poisson sampling: counts match intensity") {
    Vec lo(2), hi(2);
    lo[0] = lo[1] = 0.0;
    hi[0] = hi[1] = 10.0;
    std::vector<SingleSitePotential> palette(1);
    palette[0].terms.push_back(make_smoothed_indicator_term(2, 1.0));
    double mean = 0.0;
    const int reps = 300;
    for (int i = 0; i < reps; ++i) {
        RngStream rng(9000 + i);
        auto cfg = sample_poisson_configuration(rng, lo, hi, {0.4}, palette);
        mean += static_cast<double>(cfg.points.size());
    }
    mean /= reps;
    CHECK(std::fabs(mean - 40.0) < 2.5);  // sd = sqrt(40/300) ~ 0.37; allow ~6 sd
}

TEST_CASE("transformed field: alpha * base(A q + b)") {
    RngStream rng(31);
    auto basis = LatticeBasis::cubic(2);
    auto window = IndexBox::centered(2, 4);
    std::vector<SingleSitePotential> palette(1);
    palette[0].terms.push_back(make_gaussian_term(2, 1.0, 0.6));
    auto cfg = sample_lattice_configuration(rng, basis, window, {1.0}, palette);
    auto base = std::make_shared<PotentialField>(PotentialField::lattice(cfg));

    Mat A(2);
    A(0, 0) = 1.5; A(0, 1) = 0.2;
    A(1, 0) = -0.1; A(1, 1) = 0.8;
    Vec b(2);
    b[0] = 0.3;
    b[1] = -0.4;
    const double alpha = 2.5;
    auto tf = PotentialField::transformed(base, alpha, A, b);

    Vec q(2);
    q[0] = 0.2;
    q[1] = 0.1;
    CHECK(tf.value(q) == doctest::Approx(alpha * base->value(A * q + b)).epsilon(1e-13));

    FieldEval ev = tf.evaluate(q);
    auto fval = [&](const Vec& x) { return tf.value(x); };
    Vec g = fd_gradient(fval, q);
    Mat H = fd_hessian(fval, q);
    for (int i = 0; i < 2; ++i) {
        CHECK(std::fabs(ev.grad[i] - g[i]) < 1e-7);
        for (int j = 0; j < 2; ++j) CHECK(std::fabs(ev.hess(i, j) - H(i, j)) < 1e-4);
    }
}

TEST_CASE("range estimate brackets a known potential") {
    // single gaussian bump of height 1 at the origin
    std::vector<SingleSitePotential> palette(1);
    palette[0].terms.push_back(make_gaussian_term(2, 1.0, 0.5));
    PoissonConfiguration cfg;
    cfg.d = 2;
    cfg.win_lo = Vec(2);
    cfg.win_hi = Vec(2);
    cfg.win_lo[0] = cfg.win_lo[1] = -3.0;
    cfg.win_hi[0] = cfg.win_hi[1] = 3.0;
    cfg.points.push_back({Vec(2), 0});
    cfg.palette = palette;
    auto field = PotentialField::points(cfg);

    Vec lo(2), hi(2);
    lo[0] = lo[1] = -2.0;
    hi[0] = hi[1] = 2.0;
    auto est = estimate_range(field, lo, hi, 21);
    double peak = field.value(Vec(2));
    CHECK(est.vmax == doctest::Approx(peak).epsilon(1e-6));
    CHECK(est.vmin >= 0.0);
    CHECK(est.vmin < 1e-3);
}

#include "randpot/jacobi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "randpot/errors.hpp"
#include "randpot/textio.hpp"

namespace randpot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// five-point first and second central differences of f at 0 with step h
struct Stencil5 {
    double d1, d2;
};

template <typename F>
Stencil5 stencil5(F&& f, double h) {
    double fm2 = f(-2.0 * h), fm1 = f(-h), f0 = f(0.0), fp1 = f(h), fp2 = f(2.0 * h);
    Stencil5 s;
    s.d1 = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h);
    s.d2 = (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * h * h);
    return s;
}

}  // namespace

JacobiMetric::JacobiMetric(const PotentialField& f, double e, MetricConvention c)
    : field(&f), energy(e), convention(c) {
    if (f.dim() < 1) throw ConfigError("jacobi metric: empty field");
    if (c == MetricConvention::normalized && !(e > 0.0))
        throw ConfigError("jacobi metric: normalized convention needs positive energy");
}

double JacobiMetric::factor(double v) const {
    return convention == MetricConvention::absolute ? energy - v : 1.0 - v / energy;
}

double gaussian_curvature(const JacobiMetric& metric, const Vec& q) {
    if (metric.field->dim() != 2)
        throw ConfigError("gaussian curvature is defined for d = 2 only");
    FieldEval ev = metric.field->evaluate(q, Need::hessian);
    double lam = metric.energy - ev.V;
    if (!(lam > 0.0)) throw NumericalError("gaussian curvature: degenerate metric (E <= V)");
    double k_abs = (lam * ev.lap + ev.grad.norm2()) / (2.0 * lam * lam * lam);
    return metric.convention == MetricConvention::absolute ? k_abs : metric.energy * k_abs;
}

double brioschi_fd_curvature(const JacobiMetric& metric, const Vec& q, double step) {
    if (metric.field->dim() != 2)
        throw ConfigError("brioschi curvature is defined for d = 2 only");
    if (!(step > 0.0)) throw ConfigError("brioschi curvature: step must be positive");
    auto lam_at = [&](double dx, double dy) {
        Vec p = q;
        p[0] += dx;
        p[1] += dy;
        return metric.factor(metric.field->value(p));
    };
    double lam = lam_at(0.0, 0.0);
    if (!(lam > 0.0)) throw NumericalError("brioschi curvature: degenerate metric (E <= V)");
    Stencil5 sx = stencil5([&](double t) { return lam_at(t, 0.0); }, step);
    Stencil5 sy = stencil5([&](double t) { return lam_at(0.0, t); }, step);
    // K of lambda (dx^2 + dy^2) equals -(1/2 lambda) Lap log lambda.
    double lap_log = (sx.d2 + sy.d2) / lam - (sx.d1 * sx.d1 + sy.d1 * sy.d1) / (lam * lam);
    return -0.5 * lap_log / lam;
}

double scalar_curvature_u_route(const JacobiMetric& metric, const Vec& q, double step) {
    const int d = metric.field->dim();
    if (d < 3) throw ConfigError("scalar curvature is defined for d >= 3 only");
    if (!(step > 0.0)) throw ConfigError("scalar curvature: step must be positive");
    const double expo = 0.25 * (d - 2);
    auto u_at = [&](const Vec& p) {
        double lam = metric.factor(metric.field->value(p));
        if (!(lam > 0.0))
            throw NumericalError("scalar curvature: degenerate metric (E <= V) near probe");
        return std::pow(lam, expo);
    };
    double u0 = u_at(q);
    double lap_u = 0.0;
    for (int k = 0; k < d; ++k) {
        auto f = [&](double t) {
            Vec p = q;
            p[k] += t;
            return u_at(p);
        };
        lap_u += stencil5(f, step).d2;
    }
    return 4.0 * (1.0 - d) / (d - 2.0) * std::pow(u0, -(d + 2.0) / (d - 2.0)) * lap_u;
}

double scalar_curvature(const JacobiMetric& metric, const Vec& q) {
    const int d = metric.field->dim();
    if (d < 3) throw ConfigError("scalar curvature is defined for d >= 3 only");
    FieldEval ev = metric.field->evaluate(q, Need::hessian);
    double lam = metric.energy - ev.V;
    if (!(lam > 0.0)) throw NumericalError("scalar curvature: degenerate metric (E <= V)");
    double r_abs = (1.0 - d) / (lam * lam * lam) *
                   ((ev.V - metric.energy) * ev.lap + 0.25 * (d - 6.0) * ev.grad.norm2());
    double r = metric.convention == MetricConvention::absolute ? r_abs : metric.energy * r_abs;

    double alt = scalar_curvature_u_route(metric, q);
    // the absolute floor covers near-flat fields where both routes sit at
    // finite-difference noise level
    if (std::fabs(r - alt) > 1e-4 * 0.5 * (std::fabs(r) + std::fabs(alt)) + 1e-6)
        throw NumericalError("scalar curvature: formula and conformal-power route disagree");
    return r;
}

std::vector<Vec> curvature_probe_grid(const PotentialField& field, const Vec& lo, const Vec& hi,
                                      int nodes_per_axis, double excl_radius) {
    const int d = field.dim();
    if (lo.dim() != d || hi.dim() != d) throw ConfigError("probe grid: dimension mismatch");
    if (nodes_per_axis < 2) throw ConfigError("probe grid: need at least 2 nodes per axis");
    std::vector<Vec> probes;
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (;;) {
        Vec q(d);
        for (int k = 0; k < d; ++k)
            q[k] = lo[k] + (hi[k] - lo[k]) * idx[static_cast<std::size_t>(k)] /
                               (nodes_per_axis - 1);
        bool keep = true;
        for (const Vec& s : field.singular_points())
            if ((q - s).norm() < excl_radius) {
                keep = false;
                break;
            }
        if (keep) probes.push_back(q);
        int k = d - 1;
        for (; k >= 0; --k) {
            int& i = idx[static_cast<std::size_t>(k)];
            if (++i < nodes_per_axis) break;
            i = 0;
        }
        if (k < 0) break;
    }
    return probes;
}

ThresholdScan curvature_threshold(const PotentialField& field, MetricConvention convention,
                                  const Vec& lo, const Vec& hi, int nodes_per_axis,
                                  double excl_radius, double e_min, double e_max,
                                  int scan_points, double rel_width) {
    if (field.dim() != 2) throw ConfigError("curvature threshold is defined for d = 2 only");
    if (!(e_min > 0.0) || !(e_max > e_min))
        throw ConfigError("curvature threshold: need 0 < e_min < e_max");
    if (scan_points < 2) throw ConfigError("curvature threshold: need at least 2 scan points");
    std::vector<Vec> probes = curvature_probe_grid(field, lo, hi, nodes_per_axis, excl_radius);
    if (probes.empty()) throw ConfigError("curvature threshold: empty probe grid");

    // the metric family needs E > V over the probes; raise e_min accordingly
    double vmax = -kInf;
    for (const Vec& q : probes) vmax = std::max(vmax, field.value(q));
    double floor_e = vmax + std::max(1e-12, 1e-9 * std::fabs(vmax));
    e_min = std::max(e_min, floor_e);
    if (!(e_max > e_min))
        throw ConfigError("curvature threshold: e_max does not exceed the grid maximum of V");

    auto max_k = [&](double e) {
        JacobiMetric m(field, e, convention);
        double worst = -kInf;
        for (const Vec& q : probes) {
            double lam = e - field.value(q);
            if (!(lam > 0.0)) return kInf;
            worst = std::max(worst, gaussian_curvature(m, q));
        }
        return worst;
    };

    ThresholdScan scan;
    const double ratio = e_max / e_min;
    int first_true = -1;
    for (int i = 0; i < scan_points; ++i) {
        double e = e_min * std::pow(ratio, static_cast<double>(i) / (scan_points - 1));
        double mk = max_k(e);
        scan.energies.push_back(e);
        scan.max_curvature.push_back(mk);
        bool qualifies = mk <= 0.0;
        if (qualifies && first_true < 0) first_true = i;
        if (!qualifies && first_true >= 0) scan.non_monotone.push_back(e);
    }
    if (first_true < 0) {
        scan.e_lo = scan.e_hi = e_max;
        scan.found = false;
        return scan;
    }
    if (first_true == 0) {
        scan.e_lo = scan.e_hi = e_min;
        scan.found = true;
        scan.at_lower_bound = true;
        return scan;
    }

    double a = scan.energies[static_cast<std::size_t>(first_true) - 1];  // predicate false
    double b = scan.energies[static_cast<std::size_t>(first_true)];      // predicate true
    while (b - a > rel_width * b) {
        double mid = 0.5 * (a + b);
        if (max_k(mid) <= 0.0)
            b = mid;
        else
            a = mid;
    }
    scan.e_lo = a;
    scan.e_hi = b;
    scan.found = true;
    return scan;
}

GeodesicComparison geodesic_vs_trajectory(const JacobiMetric& metric, const PhaseState& x0,
                                          double arclength, double step, double lambda_floor) {
    const PotentialField& field = *metric.field;
    const int d = field.dim();
    if (x0.dim() != d) throw ConfigError("geodesic comparison: state dimension mismatch");
    if (!(arclength > 0.0) || !(step > 0.0))
        throw ConfigError("geodesic comparison: arclength and step must be positive");
    if (!(x0.p.norm2() > 0.0)) throw ConfigError("geodesic comparison: zero initial momentum");

    FieldEval ev0 = field.evaluate(x0.q, Need::gradient);
    double h0 = ev0.V + 0.5 * x0.p.norm2();
    if (std::fabs(h0 - metric.energy) > 1e-9 * std::max(1.0, std::fabs(metric.energy)))
        throw ConfigError("geodesic comparison: H(x0) differs from the metric energy");

    GeodesicComparison out;

    // -- geodesic leg: q'' = -2 (grad phi . q') q' + |q'|^2 grad phi in the
    //    arclength parameter, grad phi = -grad V / (2 (E - V)).
    const std::int64_t n_s = std::max<std::int64_t>(1, static_cast<std::int64_t>(
                                                           std::ceil(arclength / step)));
    const double hs = arclength / static_cast<double>(n_s);
    std::vector<Vec> geo(static_cast<std::size_t>(n_s) + 1, Vec(d));

    struct Deriv {
        Vec dq, du;
    };
    bool geo_complete = true;
    double geo_len = 0.0;
    {
        Vec q = x0.q;
        Vec u = (1.0 / (x0.p.norm() * std::sqrt(metric.factor(ev0.V)))) * x0.p;
        auto rhs = [&](const Vec& qq, const Vec& uu, Deriv& out_d) {
            FieldEval ev = field.evaluate(qq, Need::gradient);
            double lam_abs = metric.energy - ev.V;
            if (!(lam_abs > lambda_floor)) return false;
            Vec phi_g = (-0.5 / lam_abs) * ev.grad;
            out_d.dq = uu;
            out_d.du = (-2.0 * dot(phi_g, uu)) * uu + uu.norm2() * phi_g;
            return true;
        };
        geo[0] = q;
        Deriv k1, k2, k3, k4;
        std::int64_t j = 0;
        for (; j < n_s; ++j) {
            bool ok = rhs(q, u, k1) && rhs(q + (0.5 * hs) * k1.dq, u + (0.5 * hs) * k1.du, k2) &&
                      rhs(q + (0.5 * hs) * k2.dq, u + (0.5 * hs) * k2.du, k3) &&
                      rhs(q + hs * k3.dq, u + hs * k3.du, k4);
            if (!ok) {
                geo_complete = false;
                break;
            }
            q += (hs / 6.0) * (k1.dq + 2.0 * k2.dq + 2.0 * k3.dq + k4.dq);
            u += (hs / 6.0) * (k1.du + 2.0 * k2.du + 2.0 * k3.du + k4.du);
            if (!q.finite() || !u.finite())
                throw NumericalError("geodesic comparison: non-finite geodesic state");
            geo[static_cast<std::size_t>(j) + 1] = q;
        }
        geo_len = hs * static_cast<double>(j);
        geo.resize(static_cast<std::size_t>(j) + 1);
    }

    // -- trajectory leg: velocity Verlet, arclength by the trapezoid rule on
    //    ds/dt = |qdot| sqrt(lambda); compare against the geodesic at the
    //    accumulated arclength.
    Vec q = x0.q, p = x0.p;
    Vec g = ev0.grad;
    double lam_conv = metric.factor(ev0.V);
    double rate = p.norm() * std::sqrt(lam_conv);
    double s = 0.0;
    const double s_stop = std::min(arclength, geo_len);
    bool traj_turned = false;
    const std::int64_t max_steps = 200000000;
    for (std::int64_t i = 0; i < max_steps && s < s_stop; ++i) {
        Vec ph = p - (0.5 * step) * g;
        q += step * ph;
        FieldEval ev = field.evaluate(q, Need::gradient);
        p = ph - (0.5 * step) * ev.grad;
        g = ev.grad;
        if (!q.finite() || !p.finite())
            throw NumericalError("geodesic comparison: non-finite trajectory state");
        double lam_abs = metric.energy - ev.V;
        if (!(lam_abs > lambda_floor)) {
            traj_turned = true;
            break;
        }
        double rate_new = p.norm() * std::sqrt(metric.factor(ev.V));
        double s_new = s + 0.5 * step * (rate + rate_new);
        rate = rate_new;
        s = s_new;
        if (s > s_stop) break;  // past the comparable range

        double x = s / hs;
        auto j = static_cast<std::size_t>(x);
        if (j + 1 < geo.size()) {
            double th = x - static_cast<double>(j);
            Vec ref = (1.0 - th) * geo[j] + th * geo[j + 1];
            out.max_deviation = std::max(out.max_deviation, (q - ref).norm());
            out.arclength_covered = s;
        }
    }

    bool geo_full = geo_complete && geo_len >= arclength - 1e-9;
    bool traj_full = !traj_turned && s >= s_stop - 1e-9;
    out.completed = geo_full && traj_full;
    if (out.completed) out.arclength_covered = s_stop;
    return out;
}

void write_curvature_map_csv(std::ostream& os, const JacobiMetric& metric, const Vec& lo,
                             const Vec& hi, int nodes_per_axis, double excl_radius) {
    if (metric.field->dim() != 2) throw ConfigError("curvature map is defined for d = 2 only");
    os << "x,y,K\n";
    for (const Vec& q : curvature_probe_grid(*metric.field, lo, hi, nodes_per_axis, excl_radius)) {
        double lam = metric.energy - metric.field->value(q);
        if (!(lam > 0.0)) continue;
        os << fmt17(q[0]) << ',' << fmt17(q[1]) << ',' << fmt17(gaussian_curvature(metric, q))
           << "\n";
    }
}

}  // namespace randpot

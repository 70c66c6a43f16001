#include "randpot/constructions.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

#include "randpot/errors.hpp"
#include "randpot/parallel.hpp"
#include "randpot/quadrature.hpp"
#include "randpot/rng.hpp"
#include "randpot/textio.hpp"

namespace randpot {

namespace {

constexpr double kPi = 3.14159265358979323846;

double site_value(const SingleSitePotential& w, const Vec& q) {
    EvalAccum acc(q.dim());
    w.accumulate(q, Need::value, acc);
    return acc.V;
}

// Visit every integer vector in [-m, m]^d (last axis fastest).
template <class F>
void for_each_index(int d, int m, F&& visit) {
    IndexVec idx{};
    for (int k = 0; k < d; ++k) idx[k] = -m;
    while (true) {
        visit(idx);
        int k = d - 1;
        while (k >= 0 && idx[k] == m) idx[k--] = -m;
        if (k < 0) return;
        ++idx[k];
    }
}

// Deterministic direction samples covering S^{d-1} (two points, a uniform
// circle, or a Fibonacci sphere).
std::vector<Vec> direction_samples(int d, int n) {
    std::vector<Vec> out;
    if (d == 1) {
        out.push_back(Vec{1.0});
        out.push_back(Vec{-1.0});
        return out;
    }
    if (d == 2) {
        for (int i = 0; i < n; ++i) {
            double th = 2.0 * kPi * i / n;
            out.push_back(Vec{std::cos(th), std::sin(th)});
        }
        return out;
    }
    if (d == 3) {
        const double golden = kPi * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < n; ++i) {
            double z = 1.0 - 2.0 * (i + 0.5) / n;
            double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            double th = golden * i;
            out.push_back(Vec{r * std::cos(th), r * std::sin(th), z});
        }
        return out;
    }
    throw ConfigError("direction samples: d must be 1, 2, or 3");
}

// L1 scale of |f| over [-rc, rc]^levels by loose iterated quadrature.  The
// integrand is nonnegative, so relative tolerances are safe here (the probe
// scale cannot cancel away); inner levels run much tighter than outer ones so
// their truncation noise stays invisible to the outer error estimates.
template <class F1>
double iterated_l1_scale(const F1& absv, double rc, int levels) {
    if (levels == 1) return integrate_adaptive(absv, -rc, rc, 1e-6).value;
    if (levels == 2) {
        auto fx = [&](double x) {
            auto fy = [&](double y) { return absv(Vec{x, y}); };
            return integrate_adaptive(fy, -rc, rc, 1e-8).value;
        };
        return integrate_adaptive(fx, -rc, rc, 1e-4).value;
    }
    auto fx = [&](double x) {
        auto fy = [&](double y) {
            auto fz = [&](double z) { return absv(Vec{x, y, z}); };
            return integrate_adaptive(fz, -rc, rc, 1e-10).value;
        };
        return integrate_adaptive(fy, -rc, rc, 1e-7).value;
    };
    return integrate_adaptive(fx, -rc, rc, 1e-4).value;
}

}  // namespace

// ------------------------------------------------------------------ integrals

double unit_sphere_area(int d) {
    switch (d) {
        case 1: return 2.0;
        case 2: return 2.0 * kPi;
        case 3: return 4.0 * kPi;
        case 4: return 2.0 * kPi * kPi;
        default: throw ConfigError("unit_sphere_area: d must be 1..4");
    }
}

double site_mass(const SingleSitePotential& w, int d) {
    if (d < 1 || d > kMaxDim) throw ConfigError("site_mass: bad dimension");
    double total = 0.0;
    for (const SiteTerm& t : w.terms) {
        // Scale cancels against the a^{-d} normalisation and offsets shift
        // the domain, so each kind reduces to its unit-shape integral.
        switch (t.kind) {
            case SiteKind::zero:
                break;
            case SiteKind::gaussian_bump:
                total += t.amplitude * std::pow(2.0 * kPi * t.sigma * t.sigma, 0.5 * d);
                break;
            case SiteKind::smoothed_indicator:
                // F1 = 1_[0,1] * f has unit mass per axis.
                total += t.amplitude;
                break;
            case SiteKind::cosine_lattice:
                // int cos(2 pi y) F1(y) dy = Re[hat 1_[0,1](1) hat f(1)] = 0:
                // the indicator transform vanishes at nonzero integers.
                break;
            case SiteKind::radial_profile: {
                if (!t.profile) throw ConfigError("site_mass: radial-profile term without profile");
                total += t.amplitude * unit_sphere_area(d) * t.profile->total_moment(d - 1);
                break;
            }
            case SiteKind::yukawa: {
                if (d == 1)
                    throw ConfigError("site_mass: yukawa integral diverges in d = 1");
                // -c S_{d-1} int_0^inf r^{d-2} e^{-mu r} dr = -c S_{d-1} (d-2)! / mu^{d-1}
                total += -t.amplitude * t.c * unit_sphere_area(d) *
                         std::tgamma(static_cast<double>(d - 1)) / std::pow(t.mu, d - 1);
                break;
            }
            case SiteKind::finite_range_coulomb: {
                if (d == 1)
                    throw ConfigError("site_mass: screened-coulomb integral diverges in d = 1");
                double sgn = t.attractive ? 1.0 : -1.0;
                double rmax = 0.5 * kPi / t.lambda;
                auto radial = [&](double r) {
                    return std::pow(r, d - 2) *
                           std::pow(std::cos(t.lambda * r), t.eta + 1);
                };
                QuadResult q = integrate_adaptive(radial, 0.0, rmax, 1e-13);
                total += -sgn * t.amplitude * t.c * unit_sphere_area(d) * q.value;
                break;
            }
        }
    }
    return total;
}

double site_mass_quadrature(const SingleSitePotential& w, int d, double rel_tol) {
    if (d < 1 || d > 3) throw ConfigError("site_mass_quadrature: d must be 1..3");
    if (w.singular())
        throw ConfigError("site_mass_quadrature: singular terms are not supported");
    const double rc = w.cutoff_radius(1e-14, d);
    if (!(rc > 0.0)) return 0.0;
    if (d == 1) {
        auto f = [&](double x) { return site_value(w, Vec{x}); };
        return integrate_adaptive(f, -rc, rc, std::max(rel_tol, 1e-13)).value;
    }
    // Iterated integration needs absolute tolerances: relative ones collapse
    // for cancelling integrands (the probe scale vanishes) and make the outer
    // adapt loop chase inner truncation noise.  A loose pass over |w| fixes
    // the global scale; the main pass then gives the outer level the target
    // rel_eff * S and every inner level a budget two orders tighter.
    auto absv = [&](const Vec& q) { return std::fabs(site_value(w, q)); };
    const double S = iterated_l1_scale(absv, rc, d);
    if (!(S > 0.0)) return 0.0;
    const double width = 2.0 * rc;
    const double rel_eff = std::max(rel_tol, d == 2 ? 1e-10 : 1e-9);
    const double target = rel_eff * S;
    if (d == 2) {
        const double t_in = target / (width * 100.0);
        auto fx = [&](double x) {
            auto fy = [&](double y) { return site_value(w, Vec{x, y}); };
            return integrate_adaptive(fy, -rc, rc, 0.0, t_in).value;
        };
        return integrate_adaptive(fx, -rc, rc, 0.0, target).value;
    }
    const double t_mid = target / (width * 100.0);
    const double t_in = t_mid / (width * 100.0);
    auto fx = [&](double x) {
        auto fy = [&](double y) {
            auto fz = [&](double z) { return site_value(w, Vec{x, y, z}); };
            return integrate_adaptive(fz, -rc, rc, 0.0, t_in).value;
        };
        return integrate_adaptive(fy, -rc, rc, 0.0, t_mid).value;
    };
    return integrate_adaptive(fx, -rc, rc, 0.0, target).value;
}

double site_slice_integral(const SingleSitePotential& w, int d, const Vec& normal,
                           double rel_tol) {
    if (normal.dim() != d) throw ConfigError("site_slice_integral: normal dimension mismatch");
    if (w.singular())
        throw ConfigError("site_slice_integral: singular terms are not supported");
    double nn = normal.norm();
    if (!(nn > 0.0)) throw ConfigError("site_slice_integral: zero normal");
    Vec u = (1.0 / nn) * normal;
    const double rc = w.cutoff_radius(1e-14, d);
    if (!(rc > 0.0)) return 0.0;
    if (d == 1) return site_value(w, Vec::zero(1));  // the hyperplane is the origin
    if (d == 2) {
        Vec t{-u[1], u[0]};
        auto f = [&](double s) { return site_value(w, s * t); };
        // Single level, but the slice can cancel: fix the scale from |f|.
        auto af = [&](double s) { return std::fabs(site_value(w, s * t)); };
        double l1 = integrate_adaptive(af, -rc, rc, 1e-6).value;
        if (!(l1 > 0.0)) return 0.0;
        return integrate_adaptive(f, -rc, rc, 0.0, std::max(rel_tol, 1e-12) * l1).value;
    }
    if (d == 3) {
        // Orthonormal tangent pair.
        Vec a = std::fabs(u[0]) < 0.9 ? Vec{1.0, 0.0, 0.0} : Vec{0.0, 1.0, 0.0};
        Vec t1 = a - dot(a, u) * u;
        t1 *= 1.0 / t1.norm();
        Vec t2{u[1] * t1[2] - u[2] * t1[1], u[2] * t1[0] - u[0] * t1[2],
               u[0] * t1[1] - u[1] * t1[0]};
        auto absv = [&](const Vec& s) { return std::fabs(site_value(w, s[0] * t1 + s[1] * t2)); };
        const double l1 = iterated_l1_scale(absv, rc, 2);
        if (!(l1 > 0.0)) return 0.0;
        const double target = std::max(rel_tol, 1e-10) * l1;
        const double t_in = target / (2.0 * rc * 100.0);
        auto fs = [&](double s) {
            auto ft = [&](double r) { return site_value(w, s * t1 + r * t2); };
            return integrate_adaptive(ft, -rc, rc, 0.0, t_in).value;
        };
        return integrate_adaptive(fs, -rc, rc, 0.0, target).value;
    }
    throw ConfigError("site_slice_integral: d must be 1..3");
}

SingleSitePotential amplify_potential(const SingleSitePotential& w, double factor) {
    SingleSitePotential out = w;
    for (auto& t : out.terms) t.amplitude *= factor;
    return out;
}

std::shared_ptr<const RadialProfile> bump_profile(double r_lo, double r_hi, double height) {
    if (!(r_hi > r_lo) || r_lo < 0.0)
        throw ConfigError("bump_profile: need 0 <= r_lo < r_hi");
    // B(u) = 256 u^4 (1-u)^4 on the unit interval: degree 8, single maximum
    // `height` at the midpoint, derivatives 0..3 vanish at both ends.  The
    // degree-9 Hermite piece through the two end jets reproduces it exactly.
    const double delta = r_hi - r_lo;
    const double j4 = height * 256.0 * 24.0 / (delta * delta * delta * delta);
    ProfileKnot lo, hi;
    lo.r = r_lo;
    lo.jet = {0.0, 0.0, 0.0, 0.0, j4};
    hi.r = r_hi;
    hi.jet = {0.0, 0.0, 0.0, 0.0, j4};
    return std::make_shared<RadialProfile>(std::vector<ProfileKnot>{lo, hi});
}

// ---------------------------------------------------------------- scaling ops

ScalingOp motion_op(const Mat& rotation, const Vec& translation) {
    const int d = rotation.dim();
    if (d < 1 || translation.dim() != d)
        throw ConfigError("motion_op: dimension mismatch");
    double worst = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k) s += rotation(k, i) * rotation(k, j);
            worst = std::max(worst, std::fabs(s - (i == j ? 1.0 : 0.0)));
        }
    if (worst > 1e-12) throw ConfigError("motion_op: matrix is not orthogonal");
    if (rotation.det() < 0.0)
        throw ConfigError("motion_op: matrix is orientation-reversing");
    ScalingOp op;
    op.kind = ScalingKind::motion;
    op.d = d;
    op.rotation = rotation;
    op.translation = translation;
    return op;
}

ScalingOp spatial_scaling_op(int d, double c) {
    if (!(c > 0.0)) throw ConfigError("spatial_scaling_op: c must be positive");
    ScalingOp op;
    op.kind = ScalingKind::spatial;
    op.d = d;
    op.factor = c;
    return op;
}

ScalingOp energy_scaling_op(int d, double e) {
    if (!(e > 0.0)) throw ConfigError("energy_scaling_op: e must be positive");
    ScalingOp op;
    op.kind = ScalingKind::energy;
    op.d = d;
    op.factor = e;
    return op;
}

double time_factor(const ScalingOp& op) {
    switch (op.kind) {
        case ScalingKind::motion: return 1.0;
        case ScalingKind::spatial: return op.factor;
        case ScalingKind::energy: return std::sqrt(op.factor);
    }
    return 1.0;
}

PhaseState to_base_state(const ScalingOp& op, const PhaseState& s) {
    if (s.dim() != op.d) throw ConfigError("to_base_state: dimension mismatch");
    PhaseState out = s;
    switch (op.kind) {
        case ScalingKind::motion:
            out.p = op.rotation * s.p;
            out.q = op.rotation * s.q + op.translation;
            break;
        case ScalingKind::spatial:
            out.q = op.factor * s.q;
            break;
        case ScalingKind::energy:
            out.p = (1.0 / std::sqrt(op.factor)) * s.p;
            break;
    }
    out.t = time_factor(op) * s.t;
    return out;
}

PhaseState from_base_state(const ScalingOp& op, const PhaseState& s) {
    if (s.dim() != op.d) throw ConfigError("from_base_state: dimension mismatch");
    PhaseState out = s;
    switch (op.kind) {
        case ScalingKind::motion: {
            // O^T inverts the rotation.
            Mat ot(op.d);
            for (int i = 0; i < op.d; ++i)
                for (int j = 0; j < op.d; ++j) ot(i, j) = op.rotation(j, i);
            out.p = ot * s.p;
            out.q = ot * (s.q - op.translation);
            break;
        }
        case ScalingKind::spatial:
            out.q = (1.0 / op.factor) * s.q;
            break;
        case ScalingKind::energy:
            out.p = std::sqrt(op.factor) * s.p;
            break;
    }
    out.t = s.t / time_factor(op);
    return out;
}

std::shared_ptr<const PotentialField> transform_field(const ScalingOp& op,
                                                      std::shared_ptr<const PotentialField> base) {
    if (!base) throw ConfigError("transform_field: null base field");
    if (base->dim() != op.d) throw ConfigError("transform_field: dimension mismatch");
    double alpha = 1.0;
    Mat a = Mat::identity(op.d);
    Vec b(op.d);
    switch (op.kind) {
        case ScalingKind::motion:
            a = op.rotation;
            b = op.translation;
            break;
        case ScalingKind::spatial:
            a *= op.factor;
            break;
        case ScalingKind::energy:
            alpha = op.factor;
            break;
    }
    return std::make_shared<PotentialField>(PotentialField::transformed(std::move(base), alpha, a, b));
}

ScaledSystem apply_scaling(const ScalingOp& op, std::shared_ptr<const PotentialField> base,
                           const PhaseState& base_state, double base_duration) {
    if (base_duration < 0.0) throw ConfigError("apply_scaling: negative duration");
    ScaledSystem out;
    out.field = transform_field(op, std::move(base));
    out.state = from_base_state(op, base_state);
    out.duration = base_duration / time_factor(op);
    return out;
}

double scaling_conjugacy_error(const ScalingOp& op, std::shared_ptr<const PotentialField> base,
                               const PhaseState& init, double duration, const FlowSpec& spec) {
    if (!base) throw ConfigError("scaling_conjugacy_error: null base field");
    const double kappa = time_factor(op);
    auto tf = transform_field(op, base);

    FlowResult direct = integrate_flow(*tf, init, duration, spec);
    FlowSpec base_spec = spec;
    base_spec.step = spec.step * kappa;  // step for step, the runs coincide
    FlowResult through = integrate_flow(*base, to_base_state(op, init), kappa * duration, base_spec);
    if (direct.status != FlowStatus::completed || through.status != FlowStatus::completed)
        throw NumericalError(std::string("scaling_conjugacy_error: run stopped early (") +
                             flow_status_name(direct.status) + " / " +
                             flow_status_name(through.status) + ")");
    PhaseState mapped = from_base_state(op, through.state);
    double err = 0.0;
    for (int i = 0; i < init.dim(); ++i) {
        err = std::max(err, std::fabs(direct.state.q[i] - mapped.q[i]));
        err = std::max(err, std::fabs(direct.state.p[i] - mapped.p[i]));
    }
    return err;
}

// ------------------------------------------------------ radial change of variables

DensityMap::DensityMap(std::shared_ptr<const RadialProfile> profile, int d)
    : profile_(std::move(profile)), d_(d) {
    if (!profile_) throw ConfigError("density map: null profile");
    if (d_ < 1 || d_ > 3) throw ConfigError("density map: d must be 1..3");
    if (!(profile_->support_lo() > 0.0))
        throw ConfigError("density map: the profile must vanish near the origin");
    double umin, umax;
    profile_->scan_range(umin, umax);
    if (umin < -1e-10 * std::max(1.0, std::fabs(umax)))
        throw ConfigError("density map: the profile must be nonnegative");
    smax_ = g_scalar(profile_->support_hi());
    if (!(smax_ > 0.0)) throw ConfigError("density map: the profile has zero mass");
}

double DensityMap::g_scalar(double r) const {
    if (r <= profile_->support_lo()) return 0.0;
    double m = profile_->moment(d_ - 1, std::min(r, profile_->support_hi()));
    return std::pow(static_cast<double>(d_) * std::max(0.0, m), 1.0 / d_);
}

double DensityMap::g_scalar_inverse(double s) const {
    if (!(s > 0.0) || s > smax_ * (1.0 + 1e-12))
        throw ConfigError("density map: value outside the image interval");
    double lo = profile_->support_lo();
    double hi = profile_->support_hi();
    if (s >= smax_) return hi;
    for (int it = 0; it < 120; ++it) {
        double mid = 0.5 * (lo + hi);
        (g_scalar(mid) < s ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

Vec DensityMap::forward(const Vec& q) const {
    if (q.dim() != d_) throw ConfigError("density map: dimension mismatch");
    double r = q.norm();
    if (r <= profile_->support_lo()) return Vec(d_);
    return (g_scalar(r) / r) * q;
}

Vec DensityMap::inverse(const Vec& x) const {
    if (x.dim() != d_) throw ConfigError("density map: dimension mismatch");
    double s = x.norm();
    if (!(s > 0.0)) throw ConfigError("density map: the origin is not in the image");
    double r = g_scalar_inverse(s);
    return (r / s) * x;
}

double DensityMap::det_forward_fd(const Vec& q, double h) const {
    Mat jac(d_);
    for (int j = 0; j < d_; ++j) {
        Vec qp = q, qm = q;
        qp[j] += h;
        qm[j] -= h;
        Vec gp = forward(qp), gm = forward(qm);
        for (int i = 0; i < d_; ++i) jac(i, j) = (gp[i] - gm[i]) / (2.0 * h);
    }
    return jac.det();
}

// ----------------------------------------------------------- density point set

DensityApproximation build_density_point_set(std::shared_ptr<const RadialProfile> profile,
                                             int d, const SingleSitePotential& w, double epsilon,
                                             int smoothness_k, int probe_nodes) {
    if (!(epsilon > 0.0) || epsilon >= 1.0)
        throw ConfigError("density point set: epsilon must lie in (0, 1)");
    if (smoothness_k < 0) throw ConfigError("density point set: negative smoothness order");
    if (w.singular()) throw ConfigError("density point set: the site must be nonsingular");
    const double mass = site_mass(w, d);
    if (!(mass > 0.0)) throw ConfigError("density point set: the site integral must be positive");

    DensityMap map(profile, d);
    const double smax = map.image_radius();
    const double c = 1.0 / (2.0 * (d + smoothness_k + 1));
    const double a = std::pow(epsilon, c);

    DensityApproximation out;
    out.epsilon = epsilon;
    out.c_exponent = c;
    out.site_mass_value = mass;

    // Lattice eps Z^d restricted to the open punctured image ball, pulled
    // back through the map.
    const int m = static_cast<int>(std::floor(smax / epsilon));
    std::vector<MarkedPoint> pts;
    for_each_index(d, m, [&](const IndexVec& idx) {
        Vec l(d);
        for (int k = 0; k < d; ++k) l[k] = epsilon * idx[k];
        double s = l.norm();
        if (!(s > 0.0) || s >= smax) return;
        pts.push_back({map.inverse(l), 0});
    });
    if (pts.empty()) throw ConfigError("density point set: epsilon too coarse, no lattice points");

    // Palette: I^{-1} eps^d W_{eps^c}.
    SingleSitePotential kernel =
        amplify_potential(scale_potential(w, a), std::pow(epsilon, d) / mass);
    const double reach = kernel.cutoff_radius(1e-12, d);

    PoissonConfiguration cfg;
    cfg.d = d;
    const double box = profile->support_hi() + reach + 1.0;
    cfg.win_lo = Vec(d);
    cfg.win_hi = Vec(d);
    for (int k = 0; k < d; ++k) {
        cfg.win_lo[k] = -box;
        cfg.win_hi[k] = box;
    }
    cfg.points = std::move(pts);
    cfg.palette = {std::move(kernel)};
    cfg.validate();

    PotentialField field = PotentialField::points(cfg);

    // Sup error against U over a regular grid plus the spike centers (the
    // point set itself), so isolated bumps at coarse eps are never missed.
    const double extent = profile->support_hi() + reach;
    out.probe_extent = extent;
    double sup = 0.0;
    auto probe = [&](const Vec& x) {
        double u = profile->eval(x.norm(), 0);
        sup = std::max(sup, std::fabs(field.value(x) - u));
    };
    if (probe_nodes > 1) {
        const int mm = (probe_nodes - 1) / 2;
        const double hgrid = extent / mm;
        for_each_index(d, mm, [&](const IndexVec& idx) {
            Vec x(d);
            for (int k = 0; k < d; ++k) x[k] = hgrid * idx[k];
            probe(x);
        });
    }
    for (const MarkedPoint& p : cfg.points) probe(p.x);
    out.sup_error = sup;
    out.point_count = cfg.points.size();
    out.config = std::move(cfg);
    return out;
}

// ----------------------------------------------------------------- barrier

ContainmentReport verify_containment(const PotentialField& field, double energy,
                                     double launch_radius, double bound_radius,
                                     double escape_radius, int n_orbits, double horizon,
                                     double step, std::uint64_t seed, int workers) {
    if (n_orbits < 1) throw ConfigError("verify_containment: need at least one orbit");
    if (!(launch_radius > 0.0) || !(bound_radius > launch_radius) ||
        !(escape_radius > bound_radius))
        throw ConfigError("verify_containment: need launch < bound < escape radii");
    const int d = field.dim();

    struct OrbitOutcome {
        bool contained = false;
        double max_radius = 0.0;
        double drift = 0.0;
    };
    auto run_orbit = [&](std::size_t i) {
        RngStream rng = RngStream(seed).derive("containment", i);
        Vec q0(d);
        for (int tries = 0; tries < 64; ++tries) {
            q0 = rng.uniform_in_ball(d, launch_radius);
            if (field.value(q0) < 0.5 * energy) break;
        }
        double v0 = field.value(q0);
        if (v0 >= energy)
            throw NumericalError("verify_containment: no launch point below the energy");
        Vec dir(d);
        double nn = 0.0;
        while (nn < 1e-12) {
            for (int k = 0; k < d; ++k) dir[k] = rng.normal();
            nn = dir.norm();
        }
        Vec p0 = (std::sqrt(2.0 * (energy - v0)) / nn) * dir;

        FlowSpec fs;
        fs.step = step;
        fs.escape_radius = escape_radius;
        fs.enforce_window = true;
        FlowResult res = integrate_flow(field, PhaseState(q0, p0), horizon, fs);
        OrbitOutcome o;
        o.max_radius = res.max_radius;
        o.drift = res.max_energy_drift;
        o.contained = res.status == FlowStatus::completed && res.max_radius <= bound_radius;
        return o;
    };
    std::vector<OrbitOutcome> outcomes = parallel_map<OrbitOutcome>(
        workers, static_cast<std::size_t>(n_orbits), run_orbit);

    ContainmentReport rep;
    rep.total = n_orbits;
    for (const auto& o : outcomes) {
        rep.contained += o.contained ? 1 : 0;
        rep.max_radius = std::max(rep.max_radius, o.max_radius);
        rep.max_energy_drift = std::max(rep.max_energy_drift, o.drift);
    }
    return rep;
}

BarrierResult build_confining_barrier(const SingleSitePotential& w, int d, double energy,
                                      const BarrierSpec& spec) {
    if (!(energy > 0.0)) throw ConfigError("confining barrier: energy must be positive");
    if (spec.height_factor < 2.0)
        throw ConfigError("confining barrier: the peak must reach at least twice the energy");
    if (w.singular()) throw ConfigError("confining barrier: the site must be nonsingular");

    // Support starts at twice the (effective) diameter of supp W and carries
    // a single bump of height height_factor * E.
    const double site_reach = w.cutoff_radius(1e-9, d);
    if (!(site_reach > 0.0)) throw ConfigError("confining barrier: empty site");
    const double inner = 4.0 * site_reach;
    const double width = std::max(1.0, 0.5 * inner);
    const double outer = inner + 2.0 * width;
    const double peak_r = inner + width;
    const double height = spec.height_factor * energy;
    auto profile = bump_profile(inner, outer, height);

    std::string notes;
    double eps = spec.epsilon0;
    for (int attempt = 0; attempt <= spec.retries; ++attempt, eps *= 0.5) {
        DensityApproximation approx =
            build_density_point_set(profile, d, w, eps, spec.smoothness_k, 33);
        PotentialField field = PotentialField::points(approx.config);

        // Independent crest scan: the barrier must clear the energy on the
        // whole ring through the bump maximum.
        double ring_min = std::numeric_limits<double>::infinity();
        for (const Vec& u : direction_samples(d, spec.ring_samples))
            ring_min = std::min(ring_min, field.value(peak_r * u));
        const double kernel_reach =
            approx.config.palette.front().cutoff_radius(1e-9, d);
        const double launch = std::min(0.5 * inner, inner - kernel_reach - 0.2);
        const double escape = outer + kernel_reach + 1.0;
        if (!(launch > 0.0))
            throw ConfigError("confining barrier: the site kernel fills the interior hole");

        if (ring_min > energy) {
            ContainmentReport rep =
                verify_containment(field, energy, launch, peak_r, escape, spec.ensemble,
                                   spec.horizon, spec.step, spec.seed, spec.workers);
            if (rep.contained == rep.total) {
                BarrierResult out;
                out.config = std::move(approx.config);
                out.profile = profile;
                out.energy = energy;
                out.epsilon = eps;
                out.inner_radius = inner;
                out.peak_radius = peak_r;
                out.outer_radius = outer;
                out.barrier_min_on_ring = ring_min;
                out.launch_radius = launch;
                out.escape_radius = escape;
                out.ensemble = rep;
                return out;
            }
            notes += " [eps " + fmt17(eps) + ": " + fmt_int(rep.contained) + "/" +
                   fmt_int(rep.total) + " contained]";
        } else {
            notes += " [eps " + fmt17(eps) + ": ring minimum " + fmt17(ring_min) + "]";
        }
    }
    throw VerificationError("confining barrier: retry budget exhausted" + notes);
}

// ------------------------------------------------------------ effective orbits

EffectiveOrbitData effective_potential_orbit(const std::function<double(double, int)>& jet,
                                             double ell, double r) {
    if (!(r > 0.0)) throw ConfigError("effective orbit: radius must be positive");
    EffectiveOrbitData out;
    out.radius = r;
    out.ell = ell;
    const double l2 = ell * ell;
    const double r2 = r * r;
    out.energy = jet(r, 0) + 0.5 * l2 / r2;
    out.d1 = jet(r, 1) - l2 / (r2 * r);
    out.d2 = jet(r, 2) + 3.0 * l2 / (r2 * r2);
    out.d4 = jet(r, 4) + 60.0 * l2 / (r2 * r2 * r2);
    out.omega = ell / r2;
    return out;
}

EffectiveOrbitData effective_potential_orbit(const RadialProfile& u, double ell, double r) {
    return effective_potential_orbit(
        [&u](double rr, int k) { return u.eval(rr, k); }, ell, r);
}

std::shared_ptr<const RadialProfile> design_circular_profile() {
    // Support [0.35, 1.25], jet (-1, 4, 2, 0, 0) at r = 1.  Both Hermite
    // pieces factor as -(distance to the outer end)^5 times a polynomial
    // with positive coefficients, so the well is strictly negative inside
    // and meets zero only flatly at the support ends.
    ProfileKnot a, b, c;
    a.r = 0.35;
    b.r = 1.0;
    b.jet = {-1.0, 4.0, 2.0, 0.0, 0.0};
    c.r = 1.25;
    return std::make_shared<RadialProfile>(std::vector<ProfileKnot>{a, b, c});
}

// ------------------------------------------------------------ linear stability

namespace {

struct SectionCrossing {
    PhaseState state;
    double elapsed = 0.0;
};

// First upward crossing of the section q2 = 0 after min_t (elapsed time).
// Integrates step by step in chunks so the scan stops at the crossing.
SectionCrossing section_return(const PotentialField& field, const PhaseState& start,
                               double min_t, double max_t, const StabilitySpec& spec) {
    FlowSpec fs;
    fs.step = spec.step;
    PhaseState prev = start;
    double elapsed = 0.0;
    while (elapsed < max_t) {
        FlowResult one = integrate_flow(field, prev, spec.step, fs);
        if (one.status != FlowStatus::completed)
            throw NumericalError(std::string("linear_stability: orbit left the domain (") +
                                 flow_status_name(one.status) + ")");
        const PhaseState& cur = one.state;
        double next_elapsed = elapsed + spec.step;
        if (next_elapsed > min_t && prev.q[1] < 0.0 && cur.q[1] >= 0.0 && cur.p[1] > 0.0) {
            // Bisect the crossing inside the step.
            double lo = 0.0, hi = spec.step;
            for (int it = 0; it < 60; ++it) {
                double mid = 0.5 * (lo + hi);
                FlowResult sub = integrate_flow(field, prev, mid, fs);
                (sub.state.q[1] < 0.0 ? lo : hi) = mid;
            }
            FlowResult sub = integrate_flow(field, prev, hi, fs);
            SectionCrossing out;
            out.state = sub.state;
            out.elapsed = sub.state.t - start.t;
            return out;
        }
        prev = cur;
        elapsed = next_elapsed;
    }
    throw NumericalError("linear_stability: no section return within the period budget");
}

}  // namespace

StabilityReport linear_stability(const PotentialField& field, const PhaseState& seed,
                                 double period_guess, const StabilitySpec& spec) {
    if (field.dim() != 2) throw ConfigError("linear_stability: d = 2 only");
    if (seed.dim() != 2) throw ConfigError("linear_stability: seed dimension mismatch");
    if (!(period_guess > 0.0)) throw ConfigError("linear_stability: period guess must be positive");
    if (std::fabs(seed.q[1]) > 1e-9 || !(seed.p[1] > 0.0))
        throw ConfigError("linear_stability: seed must lie on the section q2 = 0 with p2 > 0");

    const double min_t = spec.min_return_fraction * period_guess;
    const double max_t = spec.max_return_factor * period_guess;
    auto ret = [&](const PhaseState& s) { return section_return(field, s, min_t, max_t, spec); };
    auto closure_of = [&](const SectionCrossing& c, const PhaseState& s) {
        double e = 0.0;
        for (int i = 0; i < 2; ++i) {
            e = std::max(e, std::fabs(c.state.q[i] - s.q[i]));
            e = std::max(e, std::fabs(c.state.p[i] - s.p[i]));
        }
        return e;
    };

    // Newton shooting on (q1, p1) with the launch p2 held fixed; skipped when
    // the seed already closes (exact circular orbits), where the shooting
    // Jacobian of the return map is singular.
    PhaseState x = seed;
    x.q[1] = 0.0;
    SectionCrossing cross = ret(x);
    double closure = closure_of(cross, x);
    int newton_steps = 0;
    while (closure > spec.closure_tol) {
        if (newton_steps >= spec.max_newton)
            throw NumericalError("linear_stability: shooting did not converge, closure " +
                                 fmt17(closure));
        auto residual = [&](double q1, double p1, double out[2]) {
            PhaseState y = x;
            y.q[0] = q1;
            y.p[0] = p1;
            SectionCrossing c = ret(y);
            out[0] = c.state.q[0] - q1;
            out[1] = c.state.p[0] - p1;
        };
        double f0[2];
        residual(x.q[0], x.p[0], f0);
        const double h = spec.fd_step;
        double fqp[2], fqm[2], fpp[2], fpm[2];
        residual(x.q[0] + h, x.p[0], fqp);
        residual(x.q[0] - h, x.p[0], fqm);
        residual(x.q[0], x.p[0] + h, fpp);
        residual(x.q[0], x.p[0] - h, fpm);
        Mat jac(2);
        jac(0, 0) = (fqp[0] - fqm[0]) / (2.0 * h);
        jac(1, 0) = (fqp[1] - fqm[1]) / (2.0 * h);
        jac(0, 1) = (fpp[0] - fpm[0]) / (2.0 * h);
        jac(1, 1) = (fpp[1] - fpm[1]) / (2.0 * h);
        if (std::fabs(jac.det()) < 1e-14)
            throw NumericalError(
                "linear_stability: degenerate shooting Jacobian away from closure");
        Mat inv = jac.inverse();
        x.q[0] -= inv(0, 0) * f0[0] + inv(0, 1) * f0[1];
        x.p[0] -= inv(1, 0) * f0[0] + inv(1, 1) * f0[1];
        ++newton_steps;
        cross = ret(x);
        closure = closure_of(cross, x);
    }

    StabilityReport rep;
    rep.orbit = x;
    rep.period = cross.elapsed;
    rep.closure_error = closure;
    rep.newton_steps = newton_steps;
    rep.energy = hamiltonian(field, x);

    // Monodromy d Phi_T by centered differences on all four phase coordinates.
    const double T = rep.period;
    const double h = spec.fd_step;
    FlowSpec fs;
    fs.step = spec.step;
    auto flow_T = [&](const PhaseState& s) {
        FlowResult r = integrate_flow(field, s, T, fs);
        if (r.status != FlowStatus::completed)
            throw NumericalError("linear_stability: monodromy run stopped early");
        return r.state;
    };
    auto coord = [](PhaseState& s, int k) -> double& {
        return k < 2 ? s.q[k] : s.p[k - 2];
    };
    rep.monodromy = Mat(4);
    for (int j = 0; j < 4; ++j) {
        PhaseState sp = x, sm = x;
        coord(sp, j) += h;
        coord(sm, j) -= h;
        PhaseState rp = flow_T(sp), rm = flow_T(sm);
        for (int i = 0; i < 4; ++i)
            rep.monodromy(i, j) = (coord(rp, i) - coord(rm, i)) / (2.0 * h);
    }

    // Full multiplier spectrum via a QR eigensolver; a characteristic-
    // polynomial route would scatter the degenerate unit eigenvalues that
    // time translation and energy conservation force on the monodromy.
    Eigen::MatrixXd m(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) m(i, j) = rep.monodromy(i, j);
    Eigen::EigenSolver<Eigen::MatrixXd> es(m);
    for (int i = 0; i < 4; ++i) rep.multipliers.push_back(es.eigenvalues()(i));
    std::sort(rep.multipliers.begin(), rep.multipliers.end(),
              [](const std::complex<double>& a, const std::complex<double>& b) {
                  return a.real() != b.real() ? a.real() > b.real() : a.imag() > b.imag();
              });

    // Transverse pair from the isoenergetic section map: (q1, p1) -> return,
    // with p2 recovered from energy conservation at launch.  This quotients
    // out the trivial directions, so the pair is clean to differentiate.
    const double e0 = rep.energy;
    auto iso_return = [&](double q1, double p1, double out[2]) {
        Vec q{q1, 0.0};
        double v = field.value(q);
        double p2sq = 2.0 * (e0 - v) - p1 * p1;
        if (!(p2sq > 0.0))
            throw NumericalError("linear_stability: energy shell closed at the probe point");
        PhaseState y(q, Vec{p1, std::sqrt(p2sq)}, x.t);
        SectionCrossing c = ret(y);
        out[0] = c.state.q[0];
        out[1] = c.state.p[0];
    };
    double gp[2], gm[2], hp[2], hm[2];
    iso_return(x.q[0] + h, x.p[0], gp);
    iso_return(x.q[0] - h, x.p[0], gm);
    iso_return(x.q[0], x.p[0] + h, hp);
    iso_return(x.q[0], x.p[0] - h, hm);
    const double j11 = (gp[0] - gm[0]) / (2.0 * h);
    const double j21 = (gp[1] - gm[1]) / (2.0 * h);
    const double j12 = (hp[0] - hm[0]) / (2.0 * h);
    const double j22 = (hp[1] - hm[1]) / (2.0 * h);
    const std::complex<double> tr(j11 + j22, 0.0);
    const std::complex<double> det(j11 * j22 - j12 * j21, 0.0);
    const std::complex<double> disc = std::sqrt(tr * tr - 4.0 * det);
    rep.transverse[0] = 0.5 * (tr + disc);
    rep.transverse[1] = 0.5 * (tr - disc);
    rep.transverse_deviation = std::max(std::fabs(std::abs(rep.transverse[0]) - 1.0),
                                        std::fabs(std::abs(rep.transverse[1]) - 1.0));
    rep.elliptic = rep.transverse_deviation <= spec.unit_circle_tol &&
                   std::fabs(rep.transverse[0].imag()) > spec.unit_circle_tol;
    return rep;
}

// ------------------------------------------------------------------- mirrors

SingleSitePotential design_mirror_site() {
    // Inner bump against an outer ring, first radial moments matched exactly
    // so the planar integral vanishes while the line slice stays positive.
    auto inner = bump_profile(0.0, 0.45, 1.0);
    auto ring = bump_profile(0.55, 1.0, 1.0);
    const double a = ring->total_moment(1) / inner->total_moment(1);
    SingleSitePotential w;
    w.terms.push_back(make_radial_profile_term(2, a, inner));
    w.terms.push_back(make_radial_profile_term(2, -1.0, ring));
    return w;
}

MirrorResult build_mirror_configuration(const SingleSitePotential& w, double tube_radius,
                                        double half_gap, const MirrorSpec& spec) {
    if (!(tube_radius > 0.0) || !(half_gap > tube_radius))
        throw ConfigError("mirror configuration: need 0 < tube_radius < half_gap");
    if (w.singular()) throw ConfigError("mirror configuration: the site must be nonsingular");
    if (!(spec.epsilon > 0.0)) throw ConfigError("mirror configuration: bad epsilon");
    const int d = 2;

    const double mass = site_mass(w, d);
    if (std::fabs(mass) > spec.mass_tol)
        throw ConfigError("mirror configuration: site integral " + fmt17(mass) +
                          " is not zero within tolerance");

    // Rotation scan for a hyperplane with positive slice integral: largest
    // value wins, ties resolved by the first angle.
    double best = -std::numeric_limits<double>::infinity();
    int best_i = -1;
    std::vector<double> slices(static_cast<std::size_t>(spec.rotation_samples));
    for (int i = 0; i < spec.rotation_samples; ++i) {
        double th = kPi * i / spec.rotation_samples;
        Vec u{std::cos(th), std::sin(th)};
        slices[i] = site_slice_integral(w, d, u);
        if (slices[i] > best) {
            best = slices[i];
            best_i = i;
        }
    }
    for (int i = 0; i < spec.rotation_samples; ++i) {
        if (slices[i] >= best - 1e-12 * std::max(1.0, std::fabs(best))) {
            best_i = i;
            break;
        }
    }
    if (!(best > 0.0))
        throw ConfigError("mirror configuration: no hyperplane with positive slice integral");
    const double th = kPi * best_i / spec.rotation_samples;
    Vec axis{std::cos(th), std::sin(th)};
    Vec tangent{-axis[1], axis[0]};

    auto sag = [&](double y) {
        if (spec.sag) return spec.sag(y);
        return spec.focusing ? y * y / (4.0 * half_gap) : 0.0;
    };

    // Transverse slab eps Z cap [-2r, 2r], duplicated at both mirrors,
    // sagging away from the cavity; weights eps^{d-1}.
    PoissonConfiguration cfg;
    cfg.d = d;
    cfg.palette = {amplify_potential(w, spec.epsilon)};
    const int m = static_cast<int>(std::floor(2.0 * tube_radius / spec.epsilon));
    for (int side = -1; side <= 1; side += 2) {
        for (int i = -m; i <= m; ++i) {
            double y = spec.epsilon * i;
            Vec pos = side * (half_gap + sag(y)) * axis + y * tangent;
            cfg.points.push_back({pos, 0});
        }
    }
    double lo0 = std::numeric_limits<double>::infinity(), lo1 = lo0;
    double hi0 = -lo0, hi1 = -lo0;
    for (const auto& p : cfg.points) {
        lo0 = std::min(lo0, p.x[0]);
        hi0 = std::max(hi0, p.x[0]);
        lo1 = std::min(lo1, p.x[1]);
        hi1 = std::max(hi1, p.x[1]);
    }
    cfg.win_lo = Vec{lo0 - spec.pad, lo1 - spec.pad};
    cfg.win_hi = Vec{hi0 + spec.pad, hi1 + spec.pad};
    cfg.validate();

    MirrorResult out;
    out.axis = axis;
    out.slice_integral = best;
    out.site_mass_value = mass;
    out.energy = spec.energy_fraction * best;
    out.tube_radius = tube_radius;
    out.half_gap = half_gap;
    out.site_count = cfg.points.size();
    out.config = std::move(cfg);
    return out;
}

BounceReport count_bounces(const PotentialField& field, const PhaseState& init, const Vec& axis,
                           double tube_radius, double axial_extent, double horizon, double step) {
    if (field.dim() != 2 || init.dim() != 2 || axis.dim() != 2)
        throw ConfigError("count_bounces: d = 2 only");
    Vec u = (1.0 / axis.norm()) * axis;
    Vec t{-u[1], u[0]};

    FlowSpec fs;
    fs.step = step;
    fs.escape_radius = axial_extent + tube_radius + 3.0;
    fs.record_stride = std::max<std::int64_t>(1, std::llround(0.25 / step));
    FlowResult run = integrate_flow(field, init, horizon, fs);

    BounceReport rep;
    rep.status = run.status;
    rep.duration = run.state.t - init.t;
    int last_sign = 0;
    auto visit = [&](double time, const Vec& q, const Vec& p) {
        if (!rep.stayed) return;
        double ax = dot(q, u), tv = dot(q, t);
        rep.max_transverse = std::max(rep.max_transverse, std::fabs(tv));
        if (std::fabs(tv) > tube_radius || std::fabs(ax) > axial_extent) {
            rep.stayed = false;
            rep.exit_time = time - init.t;
            return;
        }
        double pa = dot(p, u);
        int sign = pa > 0.0 ? 1 : (pa < 0.0 ? -1 : 0);
        if (sign != 0) {
            if (last_sign != 0 && sign != last_sign) ++rep.bounces;
            last_sign = sign;
        }
    };
    visit(init.t, init.q, init.p);
    for (const FlowSample& s : run.samples) visit(s.t, s.q, s.p);
    visit(run.state.t, run.state.q, run.state.p);
    if (run.status != FlowStatus::completed && rep.stayed) {
        rep.stayed = false;
        rep.exit_time = rep.duration;
    }
    return rep;
}

// ------------------------------------------------------- slowly varying marks

int slowly_varying_mark_1d(long long n) {
    double r = static_cast<double>(n < 0 ? -n : n);
    return std::cos(std::log(r + 1.0)) >= 0.0 ? 1 : 0;
}

std::vector<int> slowly_varying_run_lengths(int octaves) {
    if (octaves < 1 || octaves > 40) throw ConfigError("run lengths: octaves must be 1..40");
    std::vector<int> out;
    for (int k = 0; k < octaves; ++k) {
        long long lo = 1LL << k, hi = 1LL << (k + 1);
        int bestrun = 0, run = 0, prev = -1;
        for (long long n = lo; n <= hi; ++n) {
            int mk = slowly_varying_mark_1d(n);
            run = (mk == prev) ? run + 1 : 1;
            prev = mk;
            bestrun = std::max(bestrun, run);
        }
        out.push_back(bestrun);
    }
    return out;
}

SlowlyVaryingReport build_slowly_varying_configuration(int d, const IndexBox& window) {
    if (d < 1 || d > 3) throw ConfigError("slowly varying configuration: d must be 1..3");
    if (window.d != d) throw ConfigError("slowly varying configuration: window dimension mismatch");
    if (window.count() <= 0) throw ConfigError("slowly varying configuration: empty window");

    SlowlyVaryingReport rep;
    LatticeConfiguration& cfg = rep.config;
    cfg.basis = LatticeBasis::cubic(d);
    cfg.window = window;
    // Palette W_j = j * F with F the mollified cell indicator; the empty
    // entry realises mark 0.
    for (int j = 0; j <= d; ++j) {
        SingleSitePotential wj;
        if (j > 0) wj.terms.push_back(make_smoothed_indicator_term(d, static_cast<double>(j)));
        cfg.palette.push_back(std::move(wj));
    }
    cfg.marks.assign(static_cast<std::size_t>(window.count()), 0);
    IndexVec idx{};
    for (int k = 0; k < d; ++k) idx[k] = window.lo[k];
    while (true) {
        int mark = 0;
        for (int k = 0; k < d; ++k) mark += slowly_varying_mark_1d(idx[k]);
        cfg.marks[static_cast<std::size_t>(window.flat_index(idx))] =
            static_cast<std::uint8_t>(mark);
        int k = d - 1;
        while (k >= 0 && idx[k] == window.hi[k]) {
            idx[k] = window.lo[k];
            --k;
        }
        if (k < 0) break;
        ++idx[k];
    }
    cfg.validate();
    rep.run_lengths = slowly_varying_run_lengths(7);

    // Separability: the summed potential telescopes to sum_k V_k(x_k), so
    // every mixed second derivative vanishes identically.  Measure the worst
    // analytic off-diagonal Hessian entry and a finite-difference cross
    // derivative over interior probes.
    if (d >= 2) {
        PotentialField field = PotentialField::lattice(cfg);
        FaithfulBox box = field.faithful_box();
        if (!box.bounded) throw NumericalError("slowly varying: unbounded faithful box");
        const double fd_h = 0.5;
        RngStream rng(0x51077a11ULL);
        double worst = 0.0;
        for (int probe = 0; probe < 40; ++probe) {
            Vec q(d);
            bool ok = true;
            for (int k = 0; k < d; ++k) {
                double lo = box.lo[k] + fd_h + 0.1, hi = box.hi[k] - fd_h - 0.1;
                if (!(hi > lo)) {
                    ok = false;
                    break;
                }
                q[k] = rng.uniform(lo, hi);
            }
            if (!ok) break;
            FieldEval ev = field.evaluate(q, Need::hessian);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    if (i != j) worst = std::max(worst, std::fabs(ev.hess(i, j)));
            for (int i = 0; i < d; ++i)
                for (int j = i + 1; j < d; ++j) {
                    Vec qpp = q, qpm = q, qmp = q, qmm = q;
                    qpp[i] += fd_h; qpp[j] += fd_h;
                    qpm[i] += fd_h; qpm[j] -= fd_h;
                    qmp[i] -= fd_h; qmp[j] += fd_h;
                    qmm[i] -= fd_h; qmm[j] -= fd_h;
                    double cross = (field.value(qpp) - field.value(qpm) - field.value(qmp) +
                                    field.value(qmm)) /
                                   (4.0 * fd_h * fd_h);
                    worst = std::max(worst, std::fabs(cross));
                }
        }
        rep.separability_residual = worst;
    }
    return rep;
}

}  // namespace randpot

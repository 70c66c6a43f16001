#include "randpot/single_site.hpp"

#include <cmath>
#include <string>

namespace randpot {

namespace {

constexpr double kPi = 3.14159265358979323846264338328;
constexpr double kTwoPi = 6.28318530717958647692528676656;
constexpr double kSingularGuard = 1e-13;

// ---------------------------------------------------------------------------
// The 1D bump f(x) = c6 (1 - 16 x^2)^6 on |x| <= 1/4, unit mass, C^5.
// G is its antiderivative with G(-inf) = 0, so F1(y) = G(y) - G(y-1).

struct Bump1D {
    double poly[7];     // f(x)/c6 = sum poly[j] x^(2j)
    double anti[7];     // antiderivative coefficients: sum anti[j] x^(2j+1)
    double c6;

    Bump1D() {
        // (1 - 16 x^2)^6 expanded: sum_j C(6,j) (-16)^j x^(2j)
        double binom = 1.0;
        double pw = 1.0;
        for (int j = 0; j <= 6; ++j) {
            poly[j] = binom * pw;
            anti[j] = poly[j] / (2 * j + 1);
            binom = binom * (6 - j) / (j + 1);
            pw *= -16.0;
        }
        // unit mass: integral over [-1/4,1/4] equals 2 * P(1/4)
        double p = 0.0, x2 = 1.0 / 16.0, xp = 0.25;
        for (int j = 0; j <= 6; ++j) {
            p += anti[j] * xp;
            xp *= x2;
        }
        c6 = 1.0 / (2.0 * p);
    }

    double f(double x) const {
        if (std::fabs(x) >= 0.25) return 0.0;
        double x2 = x * x, s = 0.0;
        for (int j = 6; j >= 0; --j) s = s * x2 + poly[j];
        return c6 * s;
    }
    double fp(double x) const {
        if (std::fabs(x) >= 0.25) return 0.0;
        double x2 = x * x, s = 0.0;
        for (int j = 6; j >= 1; --j) s = s * x2 + 2 * j * poly[j];
        return c6 * s * x;
    }
    double fpp(double x) const {
        if (std::fabs(x) >= 0.25) return 0.0;
        double x2 = x * x, s = 0.0;
        for (int j = 6; j >= 1; --j) s = s * x2 + 2 * j * (2 * j - 1) * poly[j];
        return c6 * s;
    }
    double G(double x) const {
        if (x <= -0.25) return 0.0;
        if (x >= 0.25) return 1.0;
        double x2 = x * x, s = 0.0;
        for (int j = 6; j >= 0; --j) s = s * x2 + anti[j];
        return c6 * s * x + 0.5;  // P odd, P(-1/4) shifted so G(-1/4) = 0
    }
};

const Bump1D& bump() {
    static const Bump1D b;
    return b;
}

// F1 and derivatives: F1(y) = G(y) - G(y-1); support (-1/4, 5/4).
inline double F1(double y, int k) {
    const Bump1D& b = bump();
    switch (k) {
        case 0: return b.G(y) - b.G(y - 1.0);
        case 1: return b.f(y) - b.f(y - 1.0);
        case 2: return b.fp(y) - b.fp(y - 1.0);
        default: throw ConfigError("mollified indicator: derivative order > 2");
    }
}

// ---------------------------------------------------------------------------
// Radial accumulation: given w(r) with derivatives (w0, w1, w2) at r > 0 and
// the unit direction u, add the Cartesian value/gradient/Hessian.
//   grad = w1 u,   hess = (w2 - w1/r) u u^T + (w1/r) I,
//   lap  = w2 + (d-1) w1 / r.
void add_radial(double w0, double w1, double w2, const Vec& u, double r, Need need,
                EvalAccum& acc) {
    acc.V += w0;
    if (need == Need::value) return;
    const int d = u.dim();
    for (int i = 0; i < d; ++i) acc.grad[i] += w1 * u[i];
    if (need == Need::gradient) return;
    double a = w2 - w1 / r;
    double b = w1 / r;
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) acc.hess(i, j) += a * u[i] * u[j];
        acc.hess(i, i) += b;
    }
    acc.lap += w2 + (d - 1) * b;
}

}  // namespace

double mollified_indicator_1d(double y, int deriv) { return F1(y, deriv); }

double mollifier_bump_1d(double x, int deriv) {
    const Bump1D& b = bump();
    switch (deriv) {
        case 0: return b.f(x);
        case 1: return b.fp(x);
        case 2: return b.fpp(x);
        default: throw ConfigError("mollifier bump: derivative order > 2");
    }
}

const char* site_kind_name(SiteKind k) {
    switch (k) {
        case SiteKind::zero: return "zero";
        case SiteKind::gaussian_bump: return "gaussian-bump";
        case SiteKind::smoothed_indicator: return "smoothed-indicator";
        case SiteKind::cosine_lattice: return "cosine-lattice";
        case SiteKind::yukawa: return "yukawa";
        case SiteKind::finite_range_coulomb: return "finite-range-coulomb";
        case SiteKind::radial_profile: return "radial-profile";
    }
    return "?";
}

SiteKind site_kind_from_name(const std::string& name) {
    for (SiteKind k : {SiteKind::zero, SiteKind::gaussian_bump, SiteKind::smoothed_indicator,
                       SiteKind::cosine_lattice, SiteKind::yukawa,
                       SiteKind::finite_range_coulomb, SiteKind::radial_profile})
        if (name == site_kind_name(k)) return k;
    throw ConfigError("unknown site kind: " + name);
}

void SiteTerm::accumulate(const Vec& q_rel, Need need, EvalAccum& acc) const {
    if (kind == SiteKind::zero || amplitude == 0.0) return;
    const int d = q_rel.dim();
    const double inv_a = 1.0 / scale;
    // y = q_rel/scale - offset; chain rule brings a 1/scale per derivative order.
    Vec y(d);
    for (int i = 0; i < d; ++i) y[i] = q_rel[i] * inv_a - (offset.dim() == d ? offset[i] : 0.0);
    const double mass_norm = amplitude * std::pow(inv_a, d);

    // Evaluate the unit shape into a local accumulator, then push with the
    // scale chain factors.
    EvalAccum loc(d);
    switch (kind) {
        case SiteKind::gaussian_bump: {
            double r2 = y.norm2();
            double s2 = sigma * sigma;
            double v = std::exp(-0.5 * r2 / s2);
            loc.V = v;
            if (need != Need::value)
                for (int i = 0; i < d; ++i) loc.grad[i] = -v * y[i] / s2;
            if (need == Need::hessian) {
                for (int i = 0; i < d; ++i) {
                    for (int j = 0; j < d; ++j) loc.hess(i, j) = v * y[i] * y[j] / (s2 * s2);
                    loc.hess(i, i) -= v / s2;
                }
                loc.lap = v * (r2 / (s2 * s2) - d / s2);
            }
            break;
        }
        case SiteKind::smoothed_indicator:
        case SiteKind::cosine_lattice: {
            // F(y) = prod F1(y_k); cosine kind multiplies by -(sum cos(2 pi y_k)).
            double f[kMaxDim], f1[kMaxDim], f2[kMaxDim];
            double prod = 1.0;
            for (int i = 0; i < d; ++i) {
                f[i] = F1(y[i], 0);
                prod *= f[i];
            }
            // F1 > 0 strictly inside its support, and every derivative term
            // below carries a vanishing factor on the boundary, so prod == 0
            // implies value, gradient and Hessian all vanish.
            if (prod == 0.0) break;
            for (int i = 0; i < d; ++i) {
                f1[i] = F1(y[i], 1);
                f2[i] = F1(y[i], 2);
            }
            auto prod_except = [&](int k) {
                double s = 1.0;
                for (int i = 0; i < d; ++i)
                    if (i != k) s *= f[i];
                return s;
            };
            auto prod_except2 = [&](int k, int l) {
                double s = 1.0;
                for (int i = 0; i < d; ++i)
                    if (i != k && i != l) s *= f[i];
                return s;
            };
            if (kind == SiteKind::smoothed_indicator) {
                loc.V = prod;
                if (need != Need::value)
                    for (int i = 0; i < d; ++i) loc.grad[i] = f1[i] * prod_except(i);
                if (need == Need::hessian) {
                    for (int i = 0; i < d; ++i) {
                        loc.hess(i, i) = f2[i] * prod_except(i);
                        loc.lap += loc.hess(i, i);
                        for (int j = i + 1; j < d; ++j) {
                            double v = f1[i] * f1[j] * prod_except2(i, j);
                            loc.hess(i, j) = v;
                            loc.hess(j, i) = v;
                        }
                    }
                }
            } else {
                double cs[kMaxDim], sn[kMaxDim], C = 0.0;
                for (int i = 0; i < d; ++i) {
                    cs[i] = std::cos(kTwoPi * y[i]);
                    sn[i] = std::sin(kTwoPi * y[i]);
                    C += cs[i];
                }
                loc.V = -C * prod;
                if (need != Need::value) {
                    for (int i = 0; i < d; ++i)
                        loc.grad[i] = kTwoPi * sn[i] * prod - C * f1[i] * prod_except(i);
                }
                if (need == Need::hessian) {
                    for (int i = 0; i < d; ++i) {
                        double pi_ = prod_except(i);
                        loc.hess(i, i) = kTwoPi * kTwoPi * cs[i] * prod +
                                         2.0 * kTwoPi * sn[i] * f1[i] * pi_ -
                                         C * f2[i] * pi_;
                        loc.lap += loc.hess(i, i);
                        for (int j = i + 1; j < d; ++j) {
                            // d_i d_j (-C F) = 2pi sn_i F_j + 2pi sn_j F_i - C f1_i f1_j P_ij
                            double pij = prod_except2(i, j);
                            double cross = kTwoPi * sn[i] * f1[j] * pij * f[i] +
                                           kTwoPi * sn[j] * f1[i] * pij * f[j] -
                                           C * f1[i] * f1[j] * pij;
                            loc.hess(i, j) = cross;
                            loc.hess(j, i) = cross;
                        }
                    }
                }
            }
            break;
        }
        case SiteKind::yukawa: {
            double r = y.norm();
            if (r < kSingularGuard)
                throw SingularPointError("yukawa site evaluated at its singularity");
            double e = std::exp(-mu * r);
            double w0 = -c * e / r;
            double w1 = c * e * (mu * r + 1.0) / (r * r);
            double w2 = -c * e * (mu * mu * r * r + 2.0 * mu * r + 2.0) / (r * r * r);
            Vec u = (1.0 / r) * y;
            add_radial(w0, w1, w2, u, r, need, loc);
            break;
        }
        case SiteKind::finite_range_coulomb: {
            double r = y.norm();
            if (r < kSingularGuard)
                throw SingularPointError("finite-range site evaluated at its singularity");
            double rmax = 0.5 * kPi / lambda;
            if (r < rmax) {
                double sgn = attractive ? 1.0 : -1.0;
                double cl = std::cos(lambda * r), sl = std::sin(lambda * r);
                double cp = std::pow(cl, eta - 1);  // cos^(eta-1)
                double g = sgn * c * cp * cl * cl;  // cos^(eta+1)
                double g1 = -sgn * c * (eta + 1) * lambda * cp * cl * sl;
                double g2 = sgn * c * (eta + 1) * lambda * lambda * cp *
                            (eta * sl * sl - cl * cl);
                double w0 = -g / r;
                double w1 = -g1 / r + g / (r * r);
                double w2 = -g2 / r + 2.0 * g1 / (r * r) - 2.0 * g / (r * r * r);
                Vec u = (1.0 / r) * y;
                add_radial(w0, w1, w2, u, r, need, loc);
            }
            break;
        }
        case SiteKind::radial_profile: {
            if (!profile) throw ConfigError("radial-profile term without profile");
            double r = y.norm();
            if (r >= profile->support_lo() && r <= profile->support_hi()) {
                if (r < kSingularGuard) {
                    // profiles vanish near zero by construction; treat r = 0 as flat
                    loc.V = profile->eval(0.0, 0);
                } else {
                    auto j = profile->jet(r);
                    Vec u = (1.0 / r) * y;
                    add_radial(j[0], j[1], j[2], u, r, need, loc);
                }
            }
            break;
        }
        case SiteKind::zero:
            break;
    }

    acc.V += mass_norm * loc.V;
    if (need != Need::value) {
        double g = mass_norm * inv_a;
        for (int i = 0; i < d; ++i) acc.grad[i] += g * loc.grad[i];
        if (need == Need::hessian) {
            double h = g * inv_a;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) acc.hess(i, j) += h * loc.hess(i, j);
            acc.lap += h * loc.lap;
        }
    }
}

bool SiteTerm::compact_support() const {
    switch (kind) {
        case SiteKind::zero:
        case SiteKind::smoothed_indicator:
        case SiteKind::cosine_lattice:
        case SiteKind::finite_range_coulomb:
        case SiteKind::radial_profile:
            return true;
        default:
            return false;
    }
}

double SiteTerm::cutoff_radius(double tol, int d) const {
    double off = offset.dim() > 0 ? offset.norm() : 0.0;
    double base = 0.0;
    switch (kind) {
        case SiteKind::zero:
            return 0.0;
        case SiteKind::smoothed_indicator:
        case SiteKind::cosine_lattice:
            base = 1.25 * std::sqrt(static_cast<double>(d));
            break;
        case SiteKind::finite_range_coulomb:
            base = 0.5 * kPi / lambda;
            break;
        case SiteKind::radial_profile:
            base = profile ? profile->support_hi() : 0.0;
            break;
        case SiteKind::gaussian_bump: {
            double a = std::fabs(amplitude) * std::pow(scale, -static_cast<double>(d));
            if (a <= tol) return 0.0;
            base = sigma * std::sqrt(2.0 * std::log(a / tol));
            break;
        }
        case SiteKind::yukawa: {
            double a = std::fabs(c) * std::fabs(amplitude) * std::pow(scale, -static_cast<double>(d));
            if (a <= tol) return 0.0;
            // solve a e^(-mu r)/r = tol by fixed point on r = log(a/(tol r))/mu
            double r = 1.0;
            for (int it = 0; it < 64; ++it) {
                double nr = std::log(a / (tol * std::max(r, 1e-6))) / mu;
                if (nr <= 0.0) {
                    nr = 1e-6;
                    break;
                }
                if (std::fabs(nr - r) < 1e-9 * nr) {
                    r = nr;
                    break;
                }
                r = nr;
            }
            base = r;
            break;
        }
    }
    return scale * (base + off);
}

double SiteTerm::envelope(double r, int d) const {
    // pointwise bound on |term| for ||q_rel|| >= r; zero beyond a compact support
    double off = offset.dim() > 0 ? offset.norm() : 0.0;
    double rr = r / scale - off;  // distance in unit-shape coordinates
    double a = std::fabs(amplitude) * std::pow(scale, -static_cast<double>(d));
    switch (kind) {
        case SiteKind::zero:
            return 0.0;
        case SiteKind::smoothed_indicator:
            return rr >= 1.25 * std::sqrt(static_cast<double>(d)) ? 0.0 : a;
        case SiteKind::cosine_lattice:
            return rr >= 1.25 * std::sqrt(static_cast<double>(d)) ? 0.0 : a * d;
        case SiteKind::finite_range_coulomb: {
            if (rr >= 0.5 * kPi / lambda) return 0.0;
            double denom = std::max(rr, 1e-12);
            return a * std::fabs(c) / denom;
        }
        case SiteKind::radial_profile: {
            if (!profile) return 0.0;
            if (rr >= profile->support_hi()) return 0.0;
            double umin, umax;
            profile->scan_range(umin, umax, 64);
            return a * std::max(std::fabs(umin), std::fabs(umax));
        }
        case SiteKind::gaussian_bump:
            if (rr <= 0.0) return a;
            return a * std::exp(-0.5 * rr * rr / (sigma * sigma));
        case SiteKind::yukawa: {
            if (rr <= 1e-12) return a * std::fabs(c) * 1e12;
            return a * std::fabs(c) * std::exp(-mu * rr) / rr;
        }
    }
    return 0.0;
}

std::vector<Vec> SingleSitePotential::singular_points() const {
    std::vector<Vec> out;
    for (const auto& t : terms)
        if (t.singular()) out.push_back(t.scale * t.offset);
    return out;
}

SingleSitePotential scale_potential(const SingleSitePotential& w, double a) {
    if (!(a > 0.0)) throw ConfigError("scale_potential: scale must be positive");
    SingleSitePotential out = w;
    for (auto& t : out.terms) t.scale *= a;
    return out;
}

SiteTerm make_gaussian_term(int d, double amplitude, double sigma, const Vec& offset) {
    if (!(sigma > 0.0)) throw ConfigError("gaussian term: sigma must be positive");
    SiteTerm t;
    t.kind = SiteKind::gaussian_bump;
    t.amplitude = amplitude;
    t.sigma = sigma;
    t.offset = offset.dim() == d ? offset : Vec(d);
    return t;
}

SiteTerm make_smoothed_indicator_term(int d, double amplitude) {
    SiteTerm t;
    t.kind = SiteKind::smoothed_indicator;
    t.amplitude = amplitude;
    t.offset = Vec(d);
    return t;
}

SiteTerm make_cosine_lattice_term(int d, double amplitude) {
    SiteTerm t;
    t.kind = SiteKind::cosine_lattice;
    t.amplitude = amplitude;
    t.offset = Vec(d);
    return t;
}

SiteTerm make_yukawa_term(int d, double c, double mu, const Vec& offset) {
    if (!(c > 0.0) || !(mu > 0.0)) throw ConfigError("yukawa term: c, mu must be positive");
    SiteTerm t;
    t.kind = SiteKind::yukawa;
    t.c = c;
    t.mu = mu;
    t.offset = offset.dim() == d ? offset : Vec(d);
    return t;
}

SiteTerm make_finite_range_term(int d, double c, double lambda, int eta, const Vec& offset,
                                bool attractive) {
    if (!(c > 0.0) || !(lambda > 0.0) || eta < 2)
        throw ConfigError("finite-range term: need c > 0, lambda > 0, eta >= 2");
    SiteTerm t;
    t.kind = SiteKind::finite_range_coulomb;
    t.c = c;
    t.lambda = lambda;
    t.eta = eta;
    t.attractive = attractive;
    t.offset = offset.dim() == d ? offset : Vec(d);
    return t;
}

SiteTerm make_radial_profile_term(int d, double amplitude,
                                  std::shared_ptr<const RadialProfile> profile) {
    if (!profile) throw ConfigError("radial-profile term: null profile");
    SiteTerm t;
    t.kind = SiteKind::radial_profile;
    t.amplitude = amplitude;
    t.profile = std::move(profile);
    t.offset = Vec(d);
    return t;
}

}  // namespace randpot

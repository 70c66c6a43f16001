#pragma once

// Single-site potentials.  A site is a finite sum of primitive terms; each
// term supplies analytic value / gradient / Hessian and a decay envelope so
// that field evaluation can truncate with a certified tail bound.
//
// Term value:  amplitude * scale^(-d) * K((q - position)/scale - offset)
// where K is the unit shape of the kind.  The scale^(-d) normalisation keeps
// the L1 mass of a term invariant under rescaling, which is what the density
// approximation machinery relies on.

#include <memory>
#include <vector>

#include "randpot/errors.hpp"
#include "randpot/profile.hpp"
#include "randpot/vec.hpp"

namespace randpot {

enum class SiteKind {
    zero,
    gaussian_bump,
    smoothed_indicator,   // product of the 1D mollified cell indicators
    cosine_lattice,       // -(sum_k cos(2 pi y_k)) * smoothed indicator
    yukawa,               // -c exp(-mu r)/r, singular at the offset point
    finite_range_coulomb, // -g(r)/r with g = sign * c cos^(eta+1)(lambda r)
    radial_profile,       // tabulated C^4 radial profile
};

const char* site_kind_name(SiteKind k);
SiteKind site_kind_from_name(const std::string& name);

enum class Need { value, gradient, hessian };

struct EvalAccum {
    double V = 0.0;
    Vec grad;
    Mat hess;
    double lap = 0.0;

    explicit EvalAccum(int d) : grad(d), hess(d) {}
};

struct SiteTerm {
    SiteKind kind = SiteKind::zero;
    double amplitude = 1.0;
    double scale = 1.0;
    Vec offset;  // kind-local center / singularity position (cell coordinates)

    // gaussian_bump
    double sigma = 1.0;
    // yukawa
    double c = 1.0;
    double mu = 1.0;
    // finite_range_coulomb
    double lambda = 1.0;
    int eta = 3;
    bool attractive = true;  // g(0) = +c when true (bounded-from-below Hamiltonian)
    // radial_profile
    std::shared_ptr<const RadialProfile> profile;

    // Add this term's contribution at displacement q_rel = q - site_position.
    void accumulate(const Vec& q_rel, Need need, EvalAccum& acc) const;

    bool singular() const {
        return kind == SiteKind::yukawa || kind == SiteKind::finite_range_coulomb;
    }
    bool compact_support() const;
    // Radius (around the site position) beyond which |term| <= tol.
    double cutoff_radius(double tol, int d) const;
    // Monotone pointwise bound on |term| at distance r from the site position.
    double envelope(double r, int d) const;
};

struct SingleSitePotential {
    std::vector<SiteTerm> terms;

    void accumulate(const Vec& q_rel, Need need, EvalAccum& acc) const {
        for (const auto& t : terms) t.accumulate(q_rel, need, acc);
    }
    bool singular() const {
        for (const auto& t : terms)
            if (t.singular()) return true;
        return false;
    }
    double cutoff_radius(double tol, int d) const {
        double r = 0.0;
        for (const auto& t : terms) r = std::max(r, t.cutoff_radius(tol, d));
        return r;
    }
    double envelope(double r, int d) const {
        double e = 0.0;
        for (const auto& t : terms) e += t.envelope(r, d);
        return e;
    }
    // Positions (relative to the site) of singular points, if any.
    std::vector<Vec> singular_points() const;
};

// W_a(q) = a^(-d) W(q/a): rescale preserving total mass.
SingleSitePotential scale_potential(const SingleSitePotential& w, double a);

// --- convenience factories -------------------------------------------------

SiteTerm make_gaussian_term(int d, double amplitude, double sigma, const Vec& offset = Vec());
SiteTerm make_smoothed_indicator_term(int d, double amplitude);
SiteTerm make_cosine_lattice_term(int d, double amplitude = 1.0);
SiteTerm make_yukawa_term(int d, double c, double mu, const Vec& offset = Vec());
SiteTerm make_finite_range_term(int d, double c, double lambda, int eta, const Vec& offset = Vec(),
                                bool attractive = true);
SiteTerm make_radial_profile_term(int d, double amplitude,
                                  std::shared_ptr<const RadialProfile> profile);

// 1D mollified indicator F1 = 1_[0,1] * f with f the fixed C^5 polynomial
// bump of unit mass supported in [-1/4, 1/4]; sum over integer translates
// telescopes to 1 exactly.  Exposed for tests and the 1D oracle machinery.
double mollified_indicator_1d(double y, int deriv = 0);  // deriv = 0..2

// The underlying bump f itself (unit mass, support [-1/4, 1/4]).
double mollifier_bump_1d(double x, int deriv = 0);  // deriv = 0..2

}  // namespace randpot

#pragma once

// Construction toolkit: the model-building side of the laboratory.
//
//  * site integrals (total mass, hyperplane slice) with closed forms per kind
//    and an independent tensor-quadrature oracle;
//  * exact scaling/symmetry operators (rigid motion, spatial dilation, energy
//    rescaling) together with their flow conjugacies;
//  * the radial change of variables g(q) = g~(|q|) q/|q| with det Dg = U that
//    turns a dilute lattice of bumps into a prescribed nonnegative potential;
//  * a confining annular barrier built from that map, with a trajectory-level
//    containment verifier;
//  * effective radial potentials, designed circular orbits, and linear
//    stability (monodromy + Floquet multipliers) of periodic orbits;
//  * a two-mirror waveguide built from a zero-mass site whose hyperplane
//    slice integral is positive;
//  * slowly-varying separable lattice marks with no velocity averaging.

#include <array>
#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "randpot/configuration.hpp"
#include "randpot/dynamics.hpp"
#include "randpot/field.hpp"
#include "randpot/profile.hpp"
#include "randpot/single_site.hpp"
#include "randpot/vec.hpp"

namespace randpot {

// ---------------------------------------------------------------- integrals

// Surface area of the unit sphere S^{d-1} (2, 2pi, 4pi, 2pi^2 for d = 1..4).
double unit_sphere_area(int d);

// Total integral of w over R^d, by closed form per term kind (exact moments
// for radial profiles, Gaussian and mollified-indicator masses analytically,
// radial quadrature for the screened kinds).  Scale and offset cancel.
// Throws ConfigError when the integral does not exist (yukawa in d = 1).
double site_mass(const SingleSitePotential& w, int d);

// Same integral by adaptive tensor Gauss-Kronrod over the cutoff box; an
// independent oracle for site_mass and the dilation invariance of the mass.
// Nonsingular terms only, d <= 3.  Iterated quadrature runs inner levels on
// a tightened-tolerance ladder, so the achievable relative accuracy floors
// at ~1e-10 (d = 2) / ~1e-9 (d = 3) regardless of rel_tol.
double site_mass_quadrature(const SingleSitePotential& w, int d, double rel_tol = 1e-12);

// Integral of w over the hyperplane through the origin with unit normal u
// (d = 2: a line integral).  Adaptive quadrature; nonsingular terms only.
double site_slice_integral(const SingleSitePotential& w, int d, const Vec& normal,
                           double rel_tol = 1e-12);

// Copy of w with every term amplitude multiplied by `factor`.
SingleSitePotential amplify_potential(const SingleSitePotential& w, double factor);

// The unique degree-8 bump supported on [r_lo, r_hi]: derivatives 0..3 vanish
// at both ends, single maximum `height` at the midpoint, positive inside.
std::shared_ptr<const RadialProfile> bump_profile(double r_lo, double r_hi, double height);

// ------------------------------------------------------------- scaling ops

// Exact symmetries of the flow.  Each operator carries a phase-space change
// of variables sigma mapping transformed coordinates to base coordinates and
// a time factor kappa so that
//     Phi^transformed_t = sigma^{-1} o Phi^base_{kappa t} o sigma .
//  * motion (O, v):  V~(q) = V(O q + v),       sigma (p,q) = (O p, O q + v),
//    kappa = 1;
//  * spatial c > 0:  V~(q) = V(c q),           sigma (p,q) = (p, c q),
//    kappa = c  (arc length stretches by c, speeds are unchanged);
//  * energy  e > 0:  V~(q) = e V(q),           sigma (p,q) = (p / sqrt e, q),
//    kappa = sqrt e  (speeds scale by sqrt e, times shrink by sqrt e).
enum class ScalingKind { motion, spatial, energy };

struct ScalingOp {
    ScalingKind kind = ScalingKind::motion;
    int d = 0;
    Mat rotation;     // motion only
    Vec translation;  // motion only
    double factor = 1.0;  // c or e
};

// Throws ConfigError unless O is orthogonal with det +1.
ScalingOp motion_op(const Mat& rotation, const Vec& translation);
ScalingOp spatial_scaling_op(int d, double c);
ScalingOp energy_scaling_op(int d, double e);

// kappa: base-time units per transformed-time unit.
double time_factor(const ScalingOp& op);

PhaseState to_base_state(const ScalingOp& op, const PhaseState& s);
PhaseState from_base_state(const ScalingOp& op, const PhaseState& s);

// The transformed potential as a field: alpha * base(A q + b).
std::shared_ptr<const PotentialField> transform_field(const ScalingOp& op,
                                                      std::shared_ptr<const PotentialField> base);

struct ScaledSystem {
    std::shared_ptr<const PotentialField> field;
    PhaseState state;
    double duration = 0.0;
};

// Push a base system (field, initial state, run length) through the operator.
ScaledSystem apply_scaling(const ScalingOp& op, std::shared_ptr<const PotentialField> base,
                           const PhaseState& base_state, double base_duration);

// Conjugacy defect: integrate the transformed system from `init` for
// `duration` with spec.step, versus mapping to the base system, integrating
// for kappa * duration with step kappa * spec.step, and mapping back.  The
// two runs take the same number of identical-in-exact-arithmetic steps, so
// the sup distance over (q, p) at the endpoint is roundoff-level.
double scaling_conjugacy_error(const ScalingOp& op, std::shared_ptr<const PotentialField> base,
                               const PhaseState& init, double duration, const FlowSpec& spec);

// ------------------------------------------------- radial change of variables

// g(q) = g~(|q|) q/|q| with g~(r) = (d * int_0^r x^{d-1} U(x) dx)^{1/d} for a
// nonnegative profile U vanishing near the origin; det Dg = U, and g maps the
// interior of supp U diffeomorphically onto a punctured ball.
class DensityMap {
public:
    DensityMap(std::shared_ptr<const RadialProfile> profile, int d);

    int dim() const { return d_; }
    const RadialProfile& profile() const { return *profile_; }

    double g_scalar(double r) const;
    // Inverse of g_scalar on (0, image_radius); bisection, exact to ~1e-14.
    double g_scalar_inverse(double s) const;
    double image_radius() const { return smax_; }

    Vec forward(const Vec& q) const;
    // Throws ConfigError when |x| is outside the open punctured image ball.
    Vec inverse(const Vec& x) const;

    // det Dg at q by centered finite differences (oracle for det Dg = U).
    double det_forward_fd(const Vec& q, double h = 1e-5) const;

private:
    std::shared_ptr<const RadialProfile> profile_;
    int d_ = 0;
    double smax_ = 0.0;
};

// -------------------------------------------------------- density point set

// Point set D_eps = { g^{-1}(l) : l in eps Z^d, 0 < |l| < image radius } with
// palette entry I^{-1} eps^d W_{eps^c}, W_a(q) = a^{-d} W(q/a), I = int W,
// c = 1 / (2 (d + k + 1)).  The resulting field is the discretised pushforward
// I^{-1} (D_eps * W_{eps^c}) which converges to U in sup norm as eps -> 0.
struct DensityApproximation {
    PoissonConfiguration config;  // points + single-entry palette
    double epsilon = 0.0;
    double c_exponent = 0.0;
    double site_mass_value = 0.0;  // I
    std::size_t point_count = 0;
    double sup_error = 0.0;     // max |A_eps - U| over the probe grid
    double probe_extent = 0.0;  // probe grid half-width
};

DensityApproximation build_density_point_set(std::shared_ptr<const RadialProfile> profile,
                                             int d, const SingleSitePotential& w, double epsilon,
                                             int smoothness_k, int probe_nodes = 41);

// ------------------------------------------------------------------ barrier

struct BarrierSpec {
    double epsilon0 = 0.2;       // first lattice spacing tried
    int retries = 4;             // halve epsilon up to this many times
    double height_factor = 2.5;  // barrier peak = height_factor * E (>= 2E)
    int smoothness_k = 1;
    int ring_samples = 720;      // angular scan of the barrier crest
    int ensemble = 12;           // build-time containment sample
    double horizon = 200.0;
    double step = 5e-3;
    std::uint64_t seed = 0x5eedbeefULL;
    int workers = 4;
};

struct ContainmentReport {
    int contained = 0;
    int total = 0;
    double max_radius = 0.0;        // largest |q| seen over the ensemble
    double max_energy_drift = 0.0;  // worst |H(t) - H(0)| over the ensemble
};

struct BarrierResult {
    PoissonConfiguration config;
    std::shared_ptr<const RadialProfile> profile;  // the annular bump U
    double energy = 0.0;
    double epsilon = 0.0;        // accepted lattice spacing
    double inner_radius = 0.0;   // supp U = [inner, outer]
    double peak_radius = 0.0;    // barrier crest (= ring check radius)
    double outer_radius = 0.0;
    double barrier_min_on_ring = 0.0;
    double launch_radius = 0.0;  // interior hole where V = 0
    double escape_radius = 0.0;
    ContainmentReport ensemble;
};

// Builds an annular barrier of height height_factor * E >= 2E whose support
// starts at twice the (effective) diameter of supp W, realises it as a dilute
// point set via the density map, and verifies the crest exceeds E on a dense
// ring plus a small trajectory ensemble.  Halves epsilon and retries when a
// check fails; throws VerificationError when the budget is exhausted.
BarrierResult build_confining_barrier(const SingleSitePotential& w, int d, double energy,
                                      const BarrierSpec& spec = {});

// Launches n_orbits random interior states at total energy E (positions
// uniform in the ball of radius launch_radius, isotropic momenta) and counts
// how many stay inside bound_radius for the whole horizon.
ContainmentReport verify_containment(const PotentialField& field, double energy,
                                     double launch_radius, double bound_radius,
                                     double escape_radius, int n_orbits, double horizon,
                                     double step, std::uint64_t seed, int workers);

// -------------------------------------------------------- effective orbits

// Data of the effective radial potential U_l(r) = U(r) + l^2 / (2 r^2) at a
// candidate circular-orbit radius.
struct EffectiveOrbitData {
    double radius = 0.0;
    double ell = 0.0;     // angular momentum
    double energy = 0.0;  // U_l(r): orbit energy when d1 = 0
    double d1 = 0.0;      // U_l'(r): zero at a circular orbit
    double d2 = 0.0;      // U_l''(r): > 0 certifies an elliptic (stable) orbit
    double d4 = 0.0;      // U_l''''(r): nondegeneracy beyond quadratic order
    double omega = 0.0;   // angular frequency l / r^2
};

// jet(r, k) returns d^k U / dr^k for k = 0..4.
EffectiveOrbitData effective_potential_orbit(const std::function<double(double, int)>& jet,
                                             double ell, double r);
EffectiveOrbitData effective_potential_orbit(const RadialProfile& u, double ell, double r);

// Designed radial well: support [0.35, 1.25], jet (-1, 4, 2, 0, 0) at r = 1,
// nonpositive throughout.  With l = 2 the circle r = 1 is a circular orbit
// with E = 1, omega = 2, U_l'' = 14, so the transverse Floquet multipliers
// over one period T = pi are exp(+-i pi sqrt 14).
std::shared_ptr<const RadialProfile> design_circular_profile();

// --------------------------------------------------------- linear stability

struct StabilitySpec {
    double step = 1e-4;            // integrator step
    double fd_step = 1e-6;         // monodromy finite-difference step
    double closure_tol = 1e-8;     // required |Phi_T(x) - x|
    int max_newton = 12;           // shooting iterations
    double unit_circle_tol = 1e-4; // ellipticity test on the multipliers
    double min_return_fraction = 0.25;  // ignore section crossings before this
    double max_return_factor = 3.0;     // give up after this many guesses
};

struct StabilityReport {
    PhaseState orbit;          // refined point on the section q2 = 0, p2 > 0
    double period = 0.0;
    double energy = 0.0;
    double closure_error = 0.0;
    int newton_steps = 0;
    Mat monodromy;  // d Phi_T at the orbit, centered differences (2d x 2d)
    std::vector<std::complex<double>> multipliers;  // eigenvalues of monodromy
    // Multipliers of the isoenergetic transverse return map (the 2x2 section
    // map on (q1, p1) with p2 recovered from energy conservation); these are
    // the nontrivial pair, free of the degenerate unit-eigenvalue block that
    // time translation and energy conservation force on the full monodromy.
    std::array<std::complex<double>, 2> transverse{};
    double transverse_deviation = 0.0;  // max | |lambda| - 1 | over the pair
    bool elliptic = false;
};

// Refines `seed` (on the section q2 = 0, p2 > 0) to a periodic point of the
// section return map by damped Newton shooting (skipped when the seed already
// closes to tolerance, as exactly circular orbits do), then differentiates
// the time-T flow for the monodromy and the isoenergetic section map for the
// transverse multipliers.  d = 2 only.
StabilityReport linear_stability(const PotentialField& field, const PhaseState& seed,
                                 double period_guess, const StabilitySpec& spec = {});

// ------------------------------------------------------------------ mirrors

struct MirrorSpec {
    double epsilon = 0.25;        // transverse lattice spacing
    bool focusing = true;         // apply the default sag |l|^2 / (4 R)
    std::function<double(double)> sag;  // overrides the default when set
    int rotation_samples = 180;   // hyperplane scan resolution
    double energy_fraction = 0.5; // E = fraction * slice integral
    double mass_tol = 1e-9;       // |int W| must be below this
    double pad = 3.0;             // window margin beyond the mirrors
};

struct MirrorResult {
    PoissonConfiguration config;
    Vec axis;                    // unit normal of the slice hyperplane
    double slice_integral = 0.0; // I' > 0
    double site_mass_value = 0.0;
    double energy = 0.0;
    double tube_radius = 0.0;
    double half_gap = 0.0;       // mirror vertices at +- half_gap * axis
    std::size_t site_count = 0;
};

// Two concave mirrors from a zero-mass site: duplicates the transverse
// lattice slab eps L cap B_{2 tube_radius}, L = span_Z(e2..ed), at both ends
// +- half_gap e1, with sag |l|^2 / (4 half_gap) toward the cavity (vertex
// curvature 1/(2 half_gap), strictly inside the critical 1/half_gap).  The
// axis e1 comes from a rotation scan for a hyperplane with positive slice
// integral.  d = 2 only.
MirrorResult build_mirror_configuration(const SingleSitePotential& w, double tube_radius,
                                        double half_gap, const MirrorSpec& spec = {});

// Companion zero-mass site: two opposed radial bumps whose first radial
// moments cancel exactly (so int W = 0 in d = 2) while the axial line
// integral stays positive.
SingleSitePotential design_mirror_site();

struct BounceReport {
    int bounces = 0;      // sign changes of p . axis
    bool stayed = true;   // never left the tube nor the axial extent
    double exit_time = 0.0;
    double max_transverse = 0.0;
    double duration = 0.0;
    FlowStatus status = FlowStatus::completed;
};

// Counts axial reversals while checking the orbit stays inside the tube
// |q_perp| <= tube_radius and |q . axis| <= axial_extent.
BounceReport count_bounces(const PotentialField& field, const PhaseState& init, const Vec& axis,
                           double tube_radius, double axial_extent, double horizon, double step);

// ------------------------------------------------------- slowly varying marks

// One-dimensional mark omega~(n) = round((1 + cos log(|n| + 1)) / 2): run
// lengths of constant marks grow with |n|, so spatial averages along an orbit
// never settle.
int slowly_varying_mark_1d(long long n);

// Longest constant run of omega~ within each dyadic octave [2^k, 2^{k+1}).
std::vector<int> slowly_varying_run_lengths(int octaves);

struct SlowlyVaryingReport {
    LatticeConfiguration config;
    std::vector<int> run_lengths;
    // Largest |d^2 V / dx_i dx_j| (i != j) over interior probes; the summed
    // potential is exactly separable, so this is roundoff-level.
    double separability_residual = 0.0;
};

// Lattice marks omega(l) = sum_k omega~(l_k) with palette W_j = j * F, F the
// mollified unit-cell indicator; V = sum_k V_k(x_k) inside the window.
SlowlyVaryingReport build_slowly_varying_configuration(int d, const IndexBox& window);

}  // namespace randpot

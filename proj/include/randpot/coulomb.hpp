#pragma once

// Planar motion with attractive coulombic singularities.  Each singular site
// carries a local square-root chart q = z^2 + s in which the collision is
// regular: with w = 2 conj(z) p and fictitious time dt = |z|^2 ds the motion
// is Hamiltonian for
//
//   K(z, w) = |w|^2/8 + f(z) + |z|^2 (V_rest(z^2 + s) - E),
//
// where f(z) = |z|^2 W(z^2 + s) extends smoothly through z = 0 with
// f(0) < 0.  Orbits pass through z = 0 at full speed |w| = sqrt(-8 f(0));
// the projected orbit reflects at the singularity.  Outside all switch disks
// the integrator runs plain fixed-step velocity Verlet on the physical field,
// sharing the update arithmetic with the smooth-flow module.

#include <complex>
#include <cstdint>
#include <limits>
#include <vector>

#include "randpot/dynamics.hpp"
#include "randpot/field.hpp"

namespace randpot {

// A single attractive singular site: position plus one yukawa or
// finite-range coulombic term at unit amplitude and scale.
struct SingularSite {
    std::complex<double> position;
    SiteTerm term;  // kind yukawa or finite_range_coulomb, centred on position

    static SingularSite yukawa_site(std::complex<double> position, double c, double mu);
    static SingularSite finite_range_site(std::complex<double> position, double c, double lambda,
                                          int eta, bool attractive = true);

    // f(z) = |z|^2 W(z^2 + s) as a function of rho = |z|^2, and its
    // rho-derivative.  Yukawa: f = -c exp(-mu rho).  Finite-range:
    // f = -g(rho) with g = sign * c cos^(eta+1)(lambda rho) on its support.
    double chart_f(double rho) const;
    double chart_f_prime(double rho) const;

    // Hard-support radius (finite-range) or decay scale 1/mu (yukawa); used
    // only to cap default switch radii.
    double extent() const;
};

// f(0); throws ConfigError unless the limit is strictly negative
// (non-attractive sites are rejected).
double singularity_strength(const SingularSite& site);

// Sites plus an optional smooth background.  Physical-space evaluation runs
// through an internal point field so smooth segments share the field
// machinery (and its truncation rule) with the rest of the library.
class CoulombSystem {
public:
    // switch_radii: per-site chart activation radii; empty selects the
    // default 0.1 * (min pairwise distance), capped by half the site extent
    // and by 1 (for an isolated site only the caps apply).  Disks of
    // distinct sites must not overlap.
    CoulombSystem(std::vector<SingularSite> sites, const PotentialField* background = nullptr,
                  std::vector<double> switch_radii = {});

    int num_sites() const { return static_cast<int>(sites_.size()); }
    const SingularSite& site(int j) const { return sites_[static_cast<std::size_t>(j)]; }
    double switch_radius(int j) const { return r_sw_[static_cast<std::size_t>(j)]; }
    const PotentialField* background() const { return background_; }

    // The internal point field over the sites (no background); exposed so
    // far-field comparisons can integrate the identical evaluation path.
    const PotentialField& site_field() const { return site_field_; }

    // Full potential / gradient (sites + background).  Throws
    // SingularPointError at a singularity.
    double potential(const Vec& q) const;
    Vec gradient(const Vec& q) const;
    double energy(const PhaseState& x) const { return 0.5 * x.p.norm2() + potential(x.q); }

    // Everything except site j (other sites under the field's truncation
    // rule, plus background); smooth inside chart j.
    void rest_eval(int j, const Vec& q, double& value, Vec& grad) const;

private:
    std::vector<SingularSite> sites_;
    std::vector<double> r_sw_;
    const PotentialField* background_ = nullptr;
    PotentialField site_field_;
};

struct RegularizedSpec {
    double physical_step = 1e-3;       // Verlet step outside all switch disks
    double chart_tolerance = 1e-10;    // adaptive per-step error in the chart
    double max_fictitious_step = 5e-2;
    double collision_z_eps = 1e-12;    // |z| below this counts as a collision
    double escape_radius = std::numeric_limits<double>::infinity();
    bool enforce_window = true;        // honour the background's faithful box
    std::int64_t record_stride = 0;    // sample every n-th accepted step
    std::int64_t max_steps = 200'000'000;
    double transition_rate_limit = 1e4;  // chart transitions per unit time
};

struct CollisionEvent {
    double t;      // physical time of the passage
    int site;
    double angle;  // physical outgoing direction, arg((w/4)^2)
};

struct RegularizedSample {
    double t;
    Vec q, p;
    double energy;
    int chart;  // active site index, -1 in the physical chart
    int sheet;  // cover sign of the tracked lift relative to the principal branch
};

struct RegularizedResult {
    PhaseState state;  // physical state at stop time
    FlowStatus status = FlowStatus::completed;
    std::int64_t physical_steps = 0;
    std::int64_t chart_steps = 0;  // accepted fictitious steps
    std::int64_t transitions = 0;  // chart entries + exits
    std::vector<CollisionEvent> collisions;
    double max_energy_error = 0.0;  // max |H - H(0)| at physical states and chart exits
    double max_chart_defect = 0.0;  // max |K| drift within charts
    std::vector<RegularizedSample> samples;
    // closest physical approach to each site over the whole run
    std::vector<double> min_site_distance;
};

// Integrate for `duration` physical time units from a physical state (which
// must not sit exactly on a singularity).
RegularizedResult integrate_regularized(const CoulombSystem& sys, const PhaseState& init,
                                        double duration, const RegularizedSpec& spec = {});

// Launch from an exact collision at a site: z = 0, |w| = sqrt(-8 f(0)),
// physical outgoing direction `angle` (the chart angle is angle/2).  The
// orbit has physical energy `energy` exactly.
RegularizedResult integrate_from_collision(const CoulombSystem& sys, int site, double energy,
                                           double angle, double duration,
                                           const RegularizedSpec& spec = {});

// Forward for t through any collisions, momentum flip, back for t; sup-norm
// distance to the initial state.  Throws NumericalError if either leg stops
// early.
double regularized_reversibility_error(const CoulombSystem& sys, const PhaseState& init, double t,
                                       const RegularizedSpec& spec = {});

// ---------------------------------------------------------------------------
// Twofold cover bookkeeping: Q^2 = f(q) with f the monic polynomial over the
// window singularities.

struct BranchFunction {
    std::vector<std::complex<double>> zeros;

    explicit BranchFunction(std::vector<std::complex<double>> zs);
    std::complex<double> eval(std::complex<double> q) const;
    double min_distance(std::complex<double> q) const;
};

BranchFunction branch_function(const CoulombSystem& sys);

struct SheetTrack {
    int sign = 1;               // final sheet relative to the start
    double min_distance = 0.0;  // closest approach of the path to any zero
    std::int64_t evaluations = 0;
};

// Continuously track Q = sqrt(f) along the polyline; throws NumericalError
// when the path comes within `margin` of a zero (tracking unreliable).
SheetTrack lift_to_cover(const BranchFunction& branch,
                         const std::vector<std::complex<double>>& path, double margin = 1e-6);

// ---------------------------------------------------------------------------
// Collision-orbit shooting between two sites.

struct ShootSpec {
    double angle_lo = 0.0;  // launch-angle bracket at the source site
    double angle_hi = 0.0;
    double success_distance = 1e-6;  // physical closest approach at the target
    double max_time = 50.0;          // physical time budget per shot
    double angle_tolerance = 1e-12;  // bisection bracket width
    int max_bisections = 80;
    int scan_points = 17;  // interior pre-scan when the endpoints agree in sign
    RegularizedSpec flow = [] {
        RegularizedSpec s;
        s.physical_step = 2.5e-4;   // shooting wants tighter trajectories
        s.chart_tolerance = 1e-12;
        return s;
    }();
};

struct ShootResult {
    bool found = false;
    double launch_angle = 0.0;
    double flight_time = 0.0;       // launch to closest approach at the target
    double closest_approach = 0.0;  // physical distance at the target
};

// Bisect the signed miss distance at site b over launch angles at site a.
// The bracket is always refined to the angle tolerance; `found` reports
// whether the final closest approach beats the success distance.  A bracket
// with no sign change returns found = false (not a proof of absence).
ShootResult shoot_collision_orbit(const CoulombSystem& sys, double energy, int site_a, int site_b,
                                  const ShootSpec& spec);

struct RetraceResult {
    bool completed = false;   // the return leg reached site a's chart
    double miss_at_a = 0.0;   // closest approach to site a on the return leg
    double outward_miss = 0.0;  // closest approach at site b on the way out
    double total_time = 0.0;
};

// Launch from a collision at site a, reflect at the closest approach to
// site b (momentum flip, the regularized collision continuation), and
// measure how closely the second traversal returns to site a.
RetraceResult collision_orbit_retrace(const CoulombSystem& sys, double energy, int site_a,
                                      int site_b, double angle, const ShootSpec& spec);

}  // namespace randpot

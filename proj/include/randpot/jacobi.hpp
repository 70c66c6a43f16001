#pragma once

// Conformal (Jacobi-type) geometry of motion at fixed energy: the metric
// lambda(q) * g_Euclid with lambda = E - V (absolute form) or 1 - V/E
// (normalized form), its Gaussian/scalar curvature, a finite-difference
// curvature oracle built only from potential values, the non-positivity
// threshold scan in E, and the geodesic <-> trajectory correspondence check.

#include <iosfwd>
#include <vector>

#include "randpot/dynamics.hpp"
#include "randpot/field.hpp"

namespace randpot {

enum class MetricConvention {
    absolute,    // lambda = E - V
    normalized,  // lambda = 1 - V/E   (curvatures scale by E relative to absolute)
};

struct JacobiMetric {
    const PotentialField* field = nullptr;
    double energy = 0.0;
    MetricConvention convention = MetricConvention::absolute;

    JacobiMetric(const PotentialField& f, double e,
                 MetricConvention c = MetricConvention::absolute);

    // conformal factor from a potential value; positive iff energy > V
    double factor(double v) const;
};

// Gaussian curvature of the 2d conformal metric,
//   K = [(E - V) Lap V + |grad V|^2] / (2 (E - V)^3)
// in the absolute convention; the normalized form is E times that.  Throws
// NumericalError when E <= V(q) (degenerate metric).
double gaussian_curvature(const JacobiMetric& metric, const Vec& q);

// Finite-difference curvature of lambda (dx^2 + dy^2) from potential values
// only (five-point stencils, i.e. Richardson-extrapolated central
// differences, default step 1e-4): the independent oracle for
// gaussian_curvature.
double brioschi_fd_curvature(const JacobiMetric& metric, const Vec& q, double step = 1e-4);

// Scalar curvature for d >= 3,
//   R = (1-d)/(E-V)^3 [ (V-E) Lap V + (d-6)/4 |grad V|^2 ]
// (normalized form again E times that).  The value is cross-checked against
// the conformal-power route scalar_curvature_u_route; disagreement beyond
// 1e-4 relative (plus a small absolute floor for near-flat fields) throws
// NumericalError, signalling a derivative bug.
double scalar_curvature(const JacobiMetric& metric, const Vec& q);

// Independent route: R = 4 (1-d)/(d-2) u^{-(d+2)/(d-2)} Lap u with
// u = lambda^{(d-2)/4}, the Laplacian taken by nested finite differences of
// potential values (five-point second differences, default step 1e-3).
double scalar_curvature_u_route(const JacobiMetric& metric, const Vec& q, double step = 1e-3);

// Axis-aligned probe grid with nodes within excl_radius of a singular point
// removed; shared by the threshold scan and the curvature map.
std::vector<Vec> curvature_probe_grid(const PotentialField& field, const Vec& lo, const Vec& hi,
                                      int nodes_per_axis, double excl_radius);

struct ThresholdScan {
    std::vector<double> energies;       // scanned energy grid (increasing)
    std::vector<double> max_curvature;  // max K over probes; +inf where E <= V somewhere
    double e_lo = 0.0, e_hi = 0.0;      // bracket: predicate false at e_lo, true at e_hi
    bool found = false;
    bool at_lower_bound = false;        // already non-positive at the lowest scanned E
    std::vector<double> non_monotone;   // scanned energies where the predicate flipped back
};

// Bisects the predicate "max over the probe grid of K(q; E) <= 0" between
// e_min and e_max (geometric scan grid, then bisection to relative bracket
// width rel_width).  e_min is raised above the grid maximum of V first; the
// scan records predicate non-monotonicity instead of failing.
ThresholdScan curvature_threshold(const PotentialField& field, MetricConvention convention,
                                  const Vec& lo, const Vec& hi, int nodes_per_axis,
                                  double excl_radius, double e_min, double e_max,
                                  int scan_points = 17, double rel_width = 1e-3);

struct GeodesicComparison {
    double max_deviation = 0.0;     // sup over matched arclength of |q_traj - q_geod|
    double arclength_covered = 0.0;
    bool completed = true;          // false when the turning-point floor fired
};

// Integrates the geodesic equation of the conformal metric from
// (q0, p0/|p0|) in its arclength parameter and the Hamiltonian trajectory
// from (q0, p0), reparametrized by ds = |qdot| sqrt(lambda) dt (which is
// sqrt(2)(E-V) dt in the absolute convention), and reports the largest
// configuration-space distance at matched arclength.  Requires
// H(x0) = metric.energy.  Near a turning point (lambda < lambda_floor) the
// run stops with a partial result.
GeodesicComparison geodesic_vs_trajectory(const JacobiMetric& metric, const PhaseState& x0,
                                          double arclength, double step,
                                          double lambda_floor = 1e-6);

// CSV `x,y,K` over the probe grid (x slowest); excluded nodes and nodes with
// E <= V are skipped.
void write_curvature_map_csv(std::ostream& os, const JacobiMetric& metric, const Vec& lo,
                             const Vec& hi, int nodes_per_axis, double excl_radius);

}  // namespace randpot

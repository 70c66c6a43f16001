#pragma once

// Closed-form and quadrature references for 1D motion in periodic and
// i.i.d.-marked media.  For energies above the potential ceiling the motion
// is ballistic cell hopping: the crossing time of one cell is
//   tau = int_0^L dq / sqrt(2 (E - V(q)))
// and the drift is L / tau (periodic) or L / E[tau] (i.i.d. marks, by the
// law of large numbers).  The cosine cell has an explicit elliptic form.

#include <functional>
#include <vector>

#include "randpot/single_site.hpp"

namespace randpot {

// Complete elliptic integral of the first kind, parameter convention
// K(m) = int_0^{pi/2} (1 - m sin^2 t)^(-1/2) dt, for m < 1 (AGM iteration;
// negative parameters are fine).
double elliptic_K(double m);

// One cell of a 1D medium: V restricted to [0, length), extended as given
// by the callable (callers pass the full lattice sum, so evaluation slightly
// outside the cell is valid too).
struct Cell1D {
    double length = 1.0;
    std::function<double(double)> potential;
};

// V(q) = -cos(2 pi q), length 1.
Cell1D cosine_cell_1d();

// V(q) = sum_{|k| <= neighbors} W(q - k length): the periodic train of one
// site potential.  `neighbors` must cover the site support.
Cell1D site_train_cell_1d(SingleSitePotential site, double length, int neighbors);

// max of V over the cell: dense scan plus local parabolic refinement.
double cell_max_potential(const Cell1D& cell, int nodes = 2048);

// Crossing time at energy E (requires E > max V over the cell).
double cell_crossing_time(const Cell1D& cell, double E, double rel_tol = 1e-11);

// length / crossing time.
double drift_velocity_periodic(const Cell1D& cell, double E, double rel_tol = 1e-11);

// Drift for i.i.d. marks: length / sum_j w_j tau_j (all cells must share
// one length; weights are normalised internally).
double expected_drift_iid(const std::vector<Cell1D>& cells, const std::vector<double>& weights,
                          double E, double rel_tol = 1e-11);

// Closed form for the cosine cell:  v(E) = pi sqrt((E+1)/2) / K(2/(E+1)),
// valid for E > 1.
double cosine_drift_closed_form(double E);

}  // namespace randpot

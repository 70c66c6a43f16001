#pragma once

// Compactly supported radial profiles r -> U(r), r >= 0, assembled from
// degree-9 Hermite pieces that match value and derivatives up to order 4 at
// every knot.  The result is C^4, has exact piecewise-polynomial moments,
// and gives analytic derivative access up to order 4 -- enough for effective
// potentials, linear stability, and the radial change-of-variables maps.

#include <array>
#include <vector>

#include "randpot/errors.hpp"

namespace randpot {

struct ProfileKnot {
    double r = 0.0;
    // value and derivatives d^k U / dr^k, k = 0..4
    std::array<double, 5> jet{0.0, 0.0, 0.0, 0.0, 0.0};
};

class RadialProfile {
public:
    RadialProfile() = default;

    // Knots must be strictly increasing in r.  The profile is identically
    // zero outside [knots.front().r, knots.back().r]; callers wanting a
    // C^4 global extension supply all-zero jets at the boundary knots.
    explicit RadialProfile(std::vector<ProfileKnot> knots);

    // k-th derivative at r (k = 0..4); zero outside the support.
    double eval(double r, int k = 0) const;

    // All derivatives 0..4 at once.
    std::array<double, 5> jet(double r) const;

    double support_lo() const { return knots_.empty() ? 0.0 : knots_.front().r; }
    double support_hi() const { return knots_.empty() ? 0.0 : knots_.back().r; }

    // Exact integral of x^pow * U(x) over [0, r] (pow >= 0).
    double moment(int pow, double r) const;
    double total_moment(int pow) const { return moment(pow, support_hi()); }

    // Extremes of U over the support, scanned on a dense per-piece grid.
    void scan_range(double& umin, double& umax, int samples_per_piece = 512) const;

    const std::vector<ProfileKnot>& knots() const { return knots_; }

private:
    int piece_of(double r) const;

    std::vector<ProfileKnot> knots_;
    // Per piece: 10 monomial coefficients in the scaled variable
    // u = (r - r_i) / (r_{i+1} - r_i).
    std::vector<std::array<double, 10>> coef_;
    std::vector<double> width_;
};

}  // namespace randpot

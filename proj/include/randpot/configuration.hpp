#pragma once

// Randomness carriers: windowed lattice mark assignments and marked point
// sets (Poisson realisations or deterministically built configurations).
// Both pair positions with palette indices; the palette holds the actual
// single-site potentials.

#include <array>
#include <cstdint>
#include <vector>

#include "randpot/errors.hpp"
#include "randpot/rng.hpp"
#include "randpot/single_site.hpp"
#include "randpot/vec.hpp"

namespace randpot {

using IndexVec = std::array<int, kMaxDim>;

struct LatticeBasis {
    int d = 0;
    Mat basis;      // columns are the basis vectors
    Mat inv_basis;  // cached inverse
    double cell_volume = 0.0;

    LatticeBasis() = default;
    LatticeBasis(int dim, const Mat& b);

    static LatticeBasis cubic(int dim, double spacing = 1.0);

    Vec point(const IndexVec& idx) const {
        Vec q(d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) q[i] += basis(i, j) * idx[j];
        return q;
    }
    // lattice coordinates of a spatial point
    Vec coords(const Vec& q) const { return inv_basis * q; }
};

// Inclusive integer box.
struct IndexBox {
    int d = 0;
    IndexVec lo{};
    IndexVec hi{};

    static IndexBox centered(int d, int halfwidth);

    bool contains(const IndexVec& i) const {
        for (int k = 0; k < d; ++k)
            if (i[k] < lo[k] || i[k] > hi[k]) return false;
        return true;
    }
    std::int64_t count() const {
        std::int64_t n = 1;
        for (int k = 0; k < d; ++k) {
            if (hi[k] < lo[k]) return 0;
            n *= static_cast<std::int64_t>(hi[k]) - lo[k] + 1;
        }
        return n;
    }
    std::int64_t flat_index(const IndexVec& i) const {
        std::int64_t f = 0;
        for (int k = 0; k < d; ++k) f = f * (hi[k] - lo[k] + 1) + (i[k] - lo[k]);
        return f;
    }
};

struct LatticeConfiguration {
    LatticeBasis basis;
    IndexBox window;
    std::vector<std::uint8_t> marks;  // flat over window, palette indices
    std::vector<SingleSitePotential> palette;

    int dim() const { return basis.d; }
    std::uint8_t mark_at(const IndexVec& i) const {
        return marks[static_cast<std::size_t>(window.flat_index(i))];
    }
    void validate() const;
};

// i.i.d. marks from `weights` over every window site.
LatticeConfiguration sample_lattice_configuration(RngStream rng, const LatticeBasis& basis,
                                                  const IndexBox& window,
                                                  const std::vector<double>& weights,
                                                  std::vector<SingleSitePotential> palette);

// Lattice shift: marks'(i) = marks(i + ell), window' = window - ell, so that
// V(shifted, q) = V(original, q + B ell).
LatticeConfiguration shift_configuration(const LatticeConfiguration& cfg, const IndexVec& ell);

struct MarkedPoint {
    Vec x;
    int mark = 0;
};

struct PoissonConfiguration {
    int d = 0;
    Vec win_lo, win_hi;               // axis box the process lives on
    std::vector<MarkedPoint> points;  // multiset; repeated points add
    std::vector<SingleSitePotential> palette;
    std::vector<double> intensities;  // per mark (empty for built point sets)

    int dim() const { return d; }
    void validate(bool require_compact = false) const;
};

// Marked Poisson process on the box [lo, hi]: independent species with the
// given intensities; counts are Poisson(rho_j * volume), positions uniform.
PoissonConfiguration sample_poisson_configuration(RngStream rng, const Vec& lo, const Vec& hi,
                                                  const std::vector<double>& intensities,
                                                  std::vector<SingleSitePotential> palette);

// Point-set shift: x -> x - ell, window shifts along, so that
// V(shifted, q) = V(original, q + ell).
PoissonConfiguration shift_configuration(const PoissonConfiguration& cfg, const Vec& ell);

}  // namespace randpot

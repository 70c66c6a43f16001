#pragma once

// Ensemble statistics over random fields: the empirical energy-velocity
// distribution (Lebesgue initial data truncated to H <= E_max), the
// velocity-inversion total-variation test, Liouville-mass estimators (a
// q-space reduction and an independently coded phase-space Monte Carlo),
// recurrence counting, and a chi-square goodness-of-fit for Poisson counts.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "randpot/dynamics.hpp"
#include "randpot/field.hpp"
#include "randpot/rng.hpp"

namespace randpot {

// Joint histogram of (H(x0), v_hat(x0)) with half-open bins [lo, hi).
// Velocity axes carry their own edge vectors; counts are stored row-major
// with the energy index slowest and the last velocity axis fastest.
struct EnergyVelocityHistogram {
    int dim = 0;
    std::vector<double> energy_edges;                 // size n_E + 1, increasing
    std::vector<std::vector<double>> velocity_edges;  // one vector per axis
    std::vector<std::uint64_t> counts;
    std::vector<std::uint64_t> flagged;    // sub-count of counts, per bin
    std::uint64_t overflow = 0;            // samples outside the binned range
    std::uint64_t overflow_flagged = 0;
    std::uint64_t total = 0;               // binned + overflowed
    std::uint64_t excluded = 0;            // dropped by strict flag handling

    // provenance of the sampling run (filled by energy_velocity_distribution)
    Vec box_lo, box_hi;
    double momentum_radius = 0.0;
    std::uint64_t master_seed = 0;

    // Uniform layout: E in [e_lo, e_hi) split into e_bins, every velocity
    // axis in [-v_max, v_max) split into v_bins (symmetric about zero).
    static EnergyVelocityHistogram regular(int dim, double e_lo, double e_hi, int e_bins,
                                           double v_max, int v_bins);

    std::size_t bin_count() const { return counts.size(); }
    int energy_bins() const { return static_cast<int>(energy_edges.size()) - 1; }
    int velocity_bins(int axis) const {
        return static_cast<int>(velocity_edges[static_cast<std::size_t>(axis)].size()) - 1;
    }

    // Flat index from an energy bin and per-axis velocity bins.
    std::size_t flat_index(int e_bin, const std::vector<int>& v_bins) const;

    // Bins the sample; returns false (and counts it as overflow) when any
    // coordinate falls outside the edge range.
    bool add(double energy, const Vec& velocity, bool flag);

    // Count-exact merge; layouts must match bin for bin.
    void merge(const EnergyVelocityHistogram& other);

    // Every velocity axis has edges symmetric under v -> -v.
    bool velocity_edges_symmetric(double tol = 1e-12) const;

    // CSV: `# key=value` summary lines, a header row, then one row per bin.
    void write_csv(std::ostream& os,
                   const std::vector<std::pair<std::string, std::string>>& summary) const;
};

struct InversionTestResult {
    double tv_distance = 0.0;
    double threshold = 0.0;  // 4 / sqrt(sample count)
    bool pass = false;
};

// Total-variation distance between the histogram and its image under
// v -> -v (all velocity axes negated bin-wise).  Requires symmetric edges.
InversionTestResult inversion_symmetry_test(const EnergyVelocityHistogram& hist);

struct EnsembleSpec {
    int num_configurations = 1;
    int trajectories_per_configuration = 1;
    double duration = 100.0;
    FlowSpec flow;
    double box_halfwidth = 8.0;   // half-width of the sampling box Q_n
    double e_max = 4.0;           // energy cutoff for momentum sampling
    double gap_tolerance = 0.05;  // convergence-gap level above which a sample is flagged
    bool strict_exclude_flagged = false;
    int workers = 1;

    void validate() const;
};

using FieldSampler = std::function<PotentialField(RngStream&)>;

// Samples fields from `sampler` (one derived stream per configuration), then
// per trajectory draws q uniform in the box [-n, n]^d and p uniform in the
// ball of radius sqrt(2 (E_max - v_min_est)), rejecting until H <= E_max.
// Each accepted sample contributes (H(x0), v_hat) to the layout histogram;
// samples whose convergence gap exceeds the tolerance (or whose run stopped
// early) are flagged.  Throws ConfigError when e_max <= v_max_est and
// NumericalError when the momentum rejection rate exceeds 99%.
EnergyVelocityHistogram energy_velocity_distribution(int dim, const FieldSampler& sampler,
                                                     double v_min_est, double v_max_est,
                                                     const EnsembleSpec& spec,
                                                     EnergyVelocityHistogram layout,
                                                     std::uint64_t master_seed);

struct MonteCarloEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::uint64_t samples = 0;
};

// Liouville mass of {H <= energy} over the spatial domain [lo, hi]:
//   tau_d * vol(box) * avg_q (2 (energy - V(q))_+)^{d/2},
// with tau_d the unit-ball volume and q uniform in the box.  Exact (zero
// variance) for fields that are constant on the box.
MonteCarloEstimate liouville_mass_estimate(const PotentialField& field, double energy,
                                           const Vec& lo, const Vec& hi,
                                           std::uint64_t n_samples, RngStream rng);

// Independent oracle for the same mass: plain indicator Monte Carlo over the
// product of the box and the momentum ball of radius p_radius, which must
// dominate sqrt(2 (energy - min V)) on the box.
MonteCarloEstimate liouville_mass_phase_space(const PotentialField& field, double energy,
                                              const Vec& lo, const Vec& hi, double p_radius,
                                              std::uint64_t n_samples, RngStream rng);

struct RecurrenceResult {
    int count = 0;
    std::vector<double> times;  // entry times that passed the gap filter
};

// Counts entries of the recorded trajectory into the box cell, keeping only
// entries separated from the previously kept one by at least min_gap.  Axes
// with modulus[k] > 0 are wrapped into [0, modulus[k]) first (quotient
// diagnostics); an empty modulus disables wrapping.
RecurrenceResult recurrence_rate(const std::vector<FlowSample>& traj, const Vec& cell_lo,
                                 const Vec& cell_hi, double min_gap,
                                 const Vec& modulus = Vec());

struct GofResult {
    double chi2 = 0.0;
    int dof = 0;
    double p_value = 1.0;
    int pooled_bins = 0;  // cells after pooling to expected >= min_expected
};

// Chi-square goodness-of-fit of iid count draws against Poisson(lambda).
// Consecutive count values are pooled until each cell has expected mass at
// least min_expected; the last cell is the open tail.
GofResult poisson_counts_gof(const std::vector<std::uint64_t>& draws, double lambda,
                             double min_expected = 5.0);

}  // namespace randpot

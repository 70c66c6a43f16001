#pragma once

// Hamiltonian flow for H(p, q) = ||p||^2 / 2 + V(q) by fixed-step velocity
// Verlet (symplectic, second order, time reversible up to roundoff).  Runs
// carry guards for escape, leaving the faithful window, singularity
// proximity and numerical failure, and report the worst certified field
// truncation tail seen along the way.

#include <cstdint>
#include <limits>
#include <vector>

#include "randpot/field.hpp"

namespace randpot {

struct PhaseState {
    Vec q, p;
    double t = 0.0;

    PhaseState() = default;
    explicit PhaseState(int d) : q(d), p(d) {}
    PhaseState(const Vec& q0, const Vec& p0, double t0 = 0.0) : q(q0), p(p0), t(t0) {}
    int dim() const { return q.dim(); }
};

enum class FlowStatus {
    completed,        // reached t_end
    escaped,          // ||q|| crossed the escape radius
    left_window,      // left the faithful region of the windowed field
    hit_singularity,  // came within the guard distance of a singular point
    failed_numerics,  // non-finite state encountered
};

const char* flow_status_name(FlowStatus s);

struct FlowSpec {
    double step = 1e-3;
    double escape_radius = std::numeric_limits<double>::infinity();
    Vec escape_center;             // empty: the origin
    bool enforce_window = true;    // stop on leaving the faithful box
    double singular_guard = 1e-6;  // minimum allowed distance to singular points
    std::int64_t record_stride = 0;  // sample every n-th step; 0 records nothing
};

struct FlowSample {
    double t;
    Vec q, p;
    double energy;
};

struct FlowResult {
    PhaseState state;  // state at stop time
    FlowStatus status = FlowStatus::completed;
    std::int64_t steps = 0;
    double energy_initial = 0.0;
    double energy_final = 0.0;
    double max_energy_drift = 0.0;  // max |H(t) - H(0)| over all steps
    double max_tail_bound = 0.0;    // worst field truncation tail encountered
    double max_radius = 0.0;        // max ||q(t)|| over the run
    std::vector<FlowSample> samples;
};

double hamiltonian(const PotentialField& field, const PhaseState& s);

// Integrate from `init` to init.t + duration (duration >= 0); a trailing
// partial step is taken so the stop time is exact.
FlowResult integrate_flow(const PotentialField& field, const PhaseState& init, double duration,
                          const FlowSpec& spec);

// Inline Verlet core over an arbitrary gradient functor grad(q) -> Vec.
// Exposed so reference problems with closed-form flows can reuse the exact
// update arithmetic of the production integrator.
template <typename GradFn>
void velocity_verlet(GradFn&& grad, Vec& q, Vec& p, double h, std::int64_t n_steps) {
    if (n_steps <= 0) return;
    Vec g = grad(q);
    for (std::int64_t k = 0; k < n_steps; ++k) {
        Vec ph = p - (0.5 * h) * g;
        q += h * ph;
        g = grad(q);
        p = ph - (0.5 * h) * g;
    }
}

// Reference problem V(q) = -||q||^2 / 2 with exact flow
//   q(t) = q0 cosh t + p0 sinh t,   p(t) = q0 sinh t + p0 cosh t.
PhaseState linear_flow_exact(const PhaseState& init, double t);
// Sup-norm end-state error of the Verlet update against the closed form.
double linear_flow_error(const PhaseState& init, double t, double h);

// Integrate forward by t, flip momentum, integrate by t again, flip back;
// returns the sup-norm distance to the initial state.  Throws
// NumericalError if either leg stops before its full duration.
double reversibility_error(const PotentialField& field, const PhaseState& init, double t,
                           const FlowSpec& spec);

// Flow/translation commutation: the flow in `shifted` started at (q0, p0)
// against the flow in `original` started at (q0 + delta, p0), where
// V_shifted(q) = V_original(q + delta).  Returns the sup-norm mismatch of
// the end states after mapping back.
double translation_equivariance_error(const PotentialField& original,
                                      const PotentialField& shifted, const Vec& delta,
                                      const PhaseState& init, double t, const FlowSpec& spec);

struct VelocityEstimate {
    Vec v_hat;        // (q(T) - q(0)) / T
    Vec v_half;       // same statistic over [0, T/2]
    double gap = 0.0; // ||v_hat - v_half||, the finite-time convergence proxy
    double energy = 0.0;
    FlowStatus status = FlowStatus::completed;
    double stop_time = 0.0;  // < T when a guard fired
};

// Finite-time asymptotic velocity statistic.  When a guard stops the run
// early the estimate uses the data up to the stop time.
VelocityEstimate asymptotic_velocity(const PotentialField& field, const PhaseState& init,
                                     double T, const FlowSpec& spec);

enum class Boundedness { bounded, escaping, undecided };

const char* boundedness_name(Boundedness b);

// Classify an orbit over a horizon: escaping when ||q - center|| crosses
// r_escape, bounded when it never leaves r_bound, undecided otherwise.
Boundedness classify_boundedness(const PotentialField& field, const PhaseState& init,
                                 double horizon, const Vec& center, double r_bound,
                                 double r_escape, const FlowSpec& spec);

}  // namespace randpot

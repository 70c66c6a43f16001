#include "randpot/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "randpot/errors.hpp"

namespace randpot {

const char* flow_status_name(FlowStatus s) {
    switch (s) {
        case FlowStatus::completed: return "completed";
        case FlowStatus::escaped: return "escaped";
        case FlowStatus::left_window: return "left-window";
        case FlowStatus::hit_singularity: return "hit-singularity";
        case FlowStatus::failed_numerics: return "failed-numerics";
    }
    return "?";
}

const char* boundedness_name(Boundedness b) {
    switch (b) {
        case Boundedness::bounded: return "bounded";
        case Boundedness::escaping: return "escaping";
        case Boundedness::undecided: return "undecided";
    }
    return "?";
}

double hamiltonian(const PotentialField& field, const PhaseState& s) {
    return 0.5 * s.p.norm2() + field.value(s.q);
}

FlowResult integrate_flow(const PotentialField& field, const PhaseState& init, double duration,
                          const FlowSpec& spec) {
    if (init.dim() != field.dim()) throw ConfigError("integrate_flow: dimension mismatch");
    if (!(spec.step > 0.0)) throw ConfigError("integrate_flow: step must be positive");
    if (duration < 0.0) throw ConfigError("integrate_flow: negative duration");

    const int d = field.dim();
    const double h = spec.step;
    const std::int64_t n_full = static_cast<std::int64_t>(std::floor(duration / h));
    const double remainder = duration - static_cast<double>(n_full) * h;
    const bool has_remainder = remainder > 1e-12 * h;

    FlowResult out;
    Vec q = init.q, p = init.p;

    const auto& sing = field.singular_points();
    auto singular_too_close = [&](const Vec& x) {
        for (const auto& s : sing)
            if ((x - s).norm() < spec.singular_guard) return true;
        return false;
    };

    const Vec center = spec.escape_center.dim() == d ? spec.escape_center : Vec(d);

    FieldEval ev(d);
    try {
        ev = field.evaluate(q, Need::gradient);
    } catch (const SingularPointError&) {
        out.state = init;
        out.status = FlowStatus::hit_singularity;
        return out;
    }
    out.max_tail_bound = ev.tail_bound;
    out.energy_initial = 0.5 * p.norm2() + ev.V;
    out.energy_final = out.energy_initial;
    out.max_radius = (q - center).norm();

    const FaithfulBox window = field.faithful_box();

    if (spec.record_stride > 0)
        out.samples.push_back({init.t, q, p, out.energy_initial});

    Vec g = ev.grad;
    double t = init.t;
    FlowStatus status = FlowStatus::completed;

    auto step_once = [&](double hs) -> bool {
        Vec ph = p - (0.5 * hs) * g;
        q += hs * ph;
        if (!q.finite() || !ph.finite()) {
            status = FlowStatus::failed_numerics;
            return false;
        }
        if (!sing.empty() && singular_too_close(q)) {
            p = ph;  // best available state at failure
            status = FlowStatus::hit_singularity;
            return false;
        }
        try {
            ev = field.evaluate(q, Need::gradient);
        } catch (const SingularPointError&) {
            p = ph;
            status = FlowStatus::hit_singularity;
            return false;
        }
        out.max_tail_bound = std::max(out.max_tail_bound, ev.tail_bound);
        g = ev.grad;
        p = ph - (0.5 * hs) * g;

        double energy = 0.5 * p.norm2() + ev.V;
        out.energy_final = energy;
        out.max_energy_drift =
            std::max(out.max_energy_drift, std::fabs(energy - out.energy_initial));
        double r = (q - center).norm();
        out.max_radius = std::max(out.max_radius, r);
        if (!std::isfinite(energy)) {
            status = FlowStatus::failed_numerics;
            return false;
        }
        if (r >= spec.escape_radius) {
            status = FlowStatus::escaped;
            return false;
        }
        if (spec.enforce_window && window.bounded && window.margin(q) <= 0.0) {
            status = FlowStatus::left_window;
            return false;
        }
        return true;
    };

    for (std::int64_t k = 0; k < n_full; ++k) {
        bool ok = step_once(h);
        ++out.steps;
        t = init.t + h * static_cast<double>(k + 1);
        if (spec.record_stride > 0 && (out.steps % spec.record_stride == 0 || !ok))
            out.samples.push_back({t, q, p, out.energy_final});
        if (!ok) break;
    }
    if (status == FlowStatus::completed && has_remainder) {
        step_once(remainder);
        ++out.steps;
        t = init.t + duration;
        if (spec.record_stride > 0) out.samples.push_back({t, q, p, out.energy_final});
    } else if (status == FlowStatus::completed && spec.record_stride > 0 &&
               out.steps % spec.record_stride != 0) {
        out.samples.push_back({t, q, p, out.energy_final});
    }

    out.state = PhaseState(q, p, t);
    out.status = status;
    return out;
}

PhaseState linear_flow_exact(const PhaseState& init, double t) {
    PhaseState out(init.dim());
    const double ch = std::cosh(t), sh = std::sinh(t);
    for (int i = 0; i < init.dim(); ++i) {
        out.q[i] = init.q[i] * ch + init.p[i] * sh;
        out.p[i] = init.q[i] * sh + init.p[i] * ch;
    }
    out.t = init.t + t;
    return out;
}

double linear_flow_error(const PhaseState& init, double t, double h) {
    if (!(h > 0.0) || t < 0.0) throw ConfigError("linear_flow_error: bad step or duration");
    Vec q = init.q, p = init.p;
    auto grad = [](const Vec& x) { return -1.0 * x; };  // grad V for V = -||q||^2/2
    const std::int64_t n = static_cast<std::int64_t>(std::floor(t / h));
    velocity_verlet(grad, q, p, h, n);
    const double rem = t - static_cast<double>(n) * h;
    if (rem > 1e-12 * h) velocity_verlet(grad, q, p, rem, 1);
    PhaseState exact = linear_flow_exact(init, t);
    double err = 0.0;
    for (int i = 0; i < init.dim(); ++i) {
        err = std::max(err, std::fabs(q[i] - exact.q[i]));
        err = std::max(err, std::fabs(p[i] - exact.p[i]));
    }
    return err;
}

double reversibility_error(const PotentialField& field, const PhaseState& init, double t,
                           const FlowSpec& spec) {
    FlowSpec quiet = spec;
    quiet.record_stride = 0;
    FlowResult fwd = integrate_flow(field, init, t, quiet);
    if (fwd.status != FlowStatus::completed)
        throw NumericalError(std::string("reversibility check: forward leg ") +
                             flow_status_name(fwd.status));
    PhaseState mid = fwd.state;
    mid.p = -1.0 * mid.p;
    FlowResult bwd = integrate_flow(field, mid, t, quiet);
    if (bwd.status != FlowStatus::completed)
        throw NumericalError(std::string("reversibility check: return leg ") +
                             flow_status_name(bwd.status));
    double err = 0.0;
    for (int i = 0; i < init.dim(); ++i) {
        err = std::max(err, std::fabs(bwd.state.q[i] - init.q[i]));
        err = std::max(err, std::fabs(-bwd.state.p[i] - init.p[i]));
    }
    return err;
}

double translation_equivariance_error(const PotentialField& original,
                                      const PotentialField& shifted, const Vec& delta,
                                      const PhaseState& init, double t, const FlowSpec& spec) {
    FlowSpec quiet = spec;
    quiet.record_stride = 0;
    FlowResult in_shifted = integrate_flow(shifted, init, t, quiet);
    PhaseState moved(init.q + delta, init.p, init.t);
    FlowResult in_original = integrate_flow(original, moved, t, quiet);
    if (in_shifted.status != FlowStatus::completed ||
        in_original.status != FlowStatus::completed)
        throw NumericalError(std::string("equivariance check stopped early: shifted leg ") +
                             flow_status_name(in_shifted.status) + ", original leg " +
                             flow_status_name(in_original.status));
    double err = 0.0;
    for (int i = 0; i < init.dim(); ++i) {
        err = std::max(err,
                       std::fabs(in_original.state.q[i] - delta[i] - in_shifted.state.q[i]));
        err = std::max(err, std::fabs(in_original.state.p[i] - in_shifted.state.p[i]));
    }
    return err;
}

VelocityEstimate asymptotic_velocity(const PotentialField& field, const PhaseState& init,
                                     double T, const FlowSpec& spec) {
    if (!(T > 0.0)) throw ConfigError("asymptotic_velocity: horizon must be positive");
    FlowSpec quiet = spec;
    quiet.record_stride = 0;

    VelocityEstimate est;
    est.v_hat = Vec(init.dim());
    est.v_half = Vec(init.dim());

    FlowResult first = integrate_flow(field, init, 0.5 * T, quiet);
    est.energy = first.energy_initial;
    double t1 = first.state.t - init.t;
    if (first.status != FlowStatus::completed) {
        est.status = first.status;
        est.stop_time = t1;
        if (t1 > 0.0) est.v_hat = (1.0 / t1) * (first.state.q - init.q);
        est.v_half = est.v_hat;
        est.gap = 0.0;
        return est;
    }
    est.v_half = (1.0 / t1) * (first.state.q - init.q);

    FlowResult second = integrate_flow(field, first.state, 0.5 * T, quiet);
    double t2 = second.state.t - init.t;
    est.status = second.status;
    est.stop_time = t2;
    if (t2 > 0.0) est.v_hat = (1.0 / t2) * (second.state.q - init.q);
    est.gap = (est.v_hat - est.v_half).norm();
    return est;
}

Boundedness classify_boundedness(const PotentialField& field, const PhaseState& init,
                                 double horizon, const Vec& center, double r_bound,
                                 double r_escape, const FlowSpec& spec) {
    if (!(r_bound <= r_escape))
        throw ConfigError("classify_boundedness: r_bound must not exceed r_escape");
    FlowSpec s = spec;
    s.record_stride = 0;
    s.escape_radius = r_escape;
    s.escape_center = center;
    FlowResult r = integrate_flow(field, init, horizon, s);
    if (r.status == FlowStatus::escaped) return Boundedness::escaping;
    if (r.status == FlowStatus::completed && r.max_radius <= r_bound) return Boundedness::bounded;
    return Boundedness::undecided;
}

}  // namespace randpot

#include "randpot/oracle1d.hpp"

#include <cmath>
#include <numbers>

#include "randpot/errors.hpp"
#include "randpot/quadrature.hpp"

namespace randpot {

double elliptic_K(double m) {
    if (!(m < 1.0)) throw ConfigError("elliptic_K: parameter must satisfy m < 1");
    double a = 1.0;
    double b = std::sqrt(1.0 - m);
    for (int it = 0; it < 64 && std::fabs(a - b) > 1e-16 * a; ++it) {
        double an = 0.5 * (a + b);
        b = std::sqrt(a * b);
        a = an;
    }
    return std::numbers::pi / (2.0 * a);
}

Cell1D cosine_cell_1d() {
    Cell1D c;
    c.length = 1.0;
    c.potential = [](double q) { return -std::cos(2.0 * std::numbers::pi * q); };
    return c;
}

Cell1D site_train_cell_1d(SingleSitePotential site, double length, int neighbors) {
    if (!(length > 0.0)) throw ConfigError("site_train_cell_1d: length must be positive");
    if (neighbors < 0) throw ConfigError("site_train_cell_1d: negative neighbor count");
    Cell1D c;
    c.length = length;
    c.potential = [site = std::move(site), length, neighbors](double q) {
        EvalAccum acc(1);
        Vec rel(1);
        for (int k = -neighbors; k <= neighbors; ++k) {
            rel[0] = q - static_cast<double>(k) * length;
            site.accumulate(rel, Need::value, acc);
        }
        return acc.V;
    };
    return c;
}

double cell_max_potential(const Cell1D& cell, int nodes) {
    if (nodes < 8) throw ConfigError("cell_max_potential: too few nodes");
    double best = -std::numeric_limits<double>::infinity();
    double arg = 0.0;
    const double h = cell.length / nodes;
    for (int i = 0; i < nodes; ++i) {
        double q = (i + 0.5) * h;
        double v = cell.potential(q);
        if (v > best) {
            best = v;
            arg = q;
        }
    }
    // parabolic refinement around the best grid node
    double step = h;
    for (int it = 0; it < 48; ++it) {
        double vl = cell.potential(arg - step);
        double vr = cell.potential(arg + step);
        if (vl > best && vl >= vr) {
            arg -= step;
            best = vl;
            continue;
        }
        if (vr > best) {
            arg += step;
            best = vr;
            continue;
        }
        // interior: one parabolic step, then shrink
        double denom = vl - 2.0 * best + vr;
        if (denom < 0.0) {
            double delta = 0.5 * step * (vl - vr) / denom;
            double cand = cell.potential(arg + delta);
            if (cand > best) {
                arg += delta;
                best = cand;
            }
        }
        step *= 0.5;
        if (step < 1e-14 * cell.length) break;
    }
    return best;
}

double cell_crossing_time(const Cell1D& cell, double E, double rel_tol) {
    if (!cell.potential) throw ConfigError("cell_crossing_time: cell has no potential");
    auto integrand = [&](double q) {
        double gap = E - cell.potential(q);
        if (!(gap > 0.0))
            throw NumericalError("cell_crossing_time: energy at or below the potential ceiling");
        return 1.0 / std::sqrt(2.0 * gap);
    };
    return integrate_adaptive(integrand, 0.0, cell.length, rel_tol).value;
}

double drift_velocity_periodic(const Cell1D& cell, double E, double rel_tol) {
    return cell.length / cell_crossing_time(cell, E, rel_tol);
}

double expected_drift_iid(const std::vector<Cell1D>& cells, const std::vector<double>& weights,
                          double E, double rel_tol) {
    if (cells.empty() || cells.size() != weights.size())
        throw ConfigError("expected_drift_iid: cells/weights mismatch");
    const double length = cells.front().length;
    double wsum = 0.0, tau = 0.0;
    for (std::size_t j = 0; j < cells.size(); ++j) {
        if (cells[j].length != length)
            throw ConfigError("expected_drift_iid: cells must share one length");
        if (weights[j] < 0.0) throw ConfigError("expected_drift_iid: negative weight");
        wsum += weights[j];
        tau += weights[j] * cell_crossing_time(cells[j], E, rel_tol);
    }
    if (!(wsum > 0.0)) throw ConfigError("expected_drift_iid: zero weight mass");
    return length * wsum / tau;
}

double cosine_drift_closed_form(double E) {
    if (!(E > 1.0)) throw ConfigError("cosine_drift_closed_form: requires E > 1");
    return std::numbers::pi * std::sqrt(0.5 * (E + 1.0)) / elliptic_K(2.0 / (E + 1.0));
}

}  // namespace randpot

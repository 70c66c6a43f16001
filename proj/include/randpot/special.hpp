#pragma once

// Small special-function kit: regularized incomplete gamma (for chi-squared
// tail probabilities) and the unit-ball volume constant.

#include <cmath>
#include <stdexcept>

namespace randpot {

namespace detail {

// Lower regularized gamma P(a,x) by power series, valid for x < a+1.
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-16)
            return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    throw std::runtime_error("gamma_p_series: no convergence");
}

// Upper regularized gamma Q(a,x) by Lentz continued fraction, x >= a+1.
inline double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        double an = -static_cast<double>(i) * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-16)
            return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    throw std::runtime_error("gamma_q_cf: no convergence");
}

}  // namespace detail

// Lower regularized incomplete gamma P(a,x) = gamma(a,x)/Gamma(a).
inline double gamma_p(double a, double x) {
    if (a <= 0.0 || x < 0.0) throw std::invalid_argument("gamma_p: bad arguments");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return detail::gamma_p_series(a, x);
    return 1.0 - detail::gamma_q_cf(a, x);
}

inline double gamma_q(double a, double x) { return 1.0 - gamma_p(a, x); }

// Survival function of the chi-squared distribution with k dof.
inline double chi2_sf(double chi2, double dof) { return gamma_q(0.5 * dof, 0.5 * chi2); }

// Volume of the unit d-ball, pi^(d/2) / Gamma(1 + d/2).
inline double unit_ball_volume(int d) {
    return std::pow(3.14159265358979323846264338328, 0.5 * d) / std::tgamma(1.0 + 0.5 * d);
}

}  // namespace randpot

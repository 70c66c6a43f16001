#include "randpot/profile.hpp"

#include <cmath>

namespace randpot {

namespace {

// Solve the 10x10 Hermite system: find monomial coefficients c of a degree-9
// polynomial p with p^(k)(0) = a_k and p^(k)(1) = b_k for k = 0..4.
std::array<double, 10> hermite9(const std::array<double, 5>& a, const std::array<double, 5>& b) {
    double m[10][11] = {};
    // rows 0..4: derivatives at u = 0; only the k-th coefficient survives.
    double fact = 1.0;
    for (int k = 0; k < 5; ++k) {
        m[k][k] = fact;
        m[k][10] = a[k];
        fact *= (k + 1);
    }
    // rows 5..9: derivatives at u = 1; d^k u^j / du^k |_1 = j!/(j-k)!.
    for (int k = 0; k < 5; ++k) {
        for (int j = k; j < 10; ++j) {
            double w = 1.0;
            for (int t = 0; t < k; ++t) w *= (j - t);
            m[5 + k][j] = w;
        }
        m[5 + k][10] = b[k];
    }
    // Gaussian elimination with partial pivoting.
    for (int col = 0; col < 10; ++col) {
        int piv = col;
        for (int i = col + 1; i < 10; ++i)
            if (std::fabs(m[i][col]) > std::fabs(m[piv][col])) piv = i;
        if (m[piv][col] == 0.0) throw NumericalError("hermite9: singular system");
        if (piv != col)
            for (int j = col; j < 11; ++j) std::swap(m[piv][j], m[col][j]);
        for (int i = 0; i < 10; ++i) {
            if (i == col) continue;
            double f = m[i][col] / m[col][col];
            if (f == 0.0) continue;
            for (int j = col; j < 11; ++j) m[i][j] -= f * m[col][j];
        }
    }
    std::array<double, 10> c{};
    for (int j = 0; j < 10; ++j) c[j] = m[j][10] / m[j][j];
    return c;
}

double poly_eval(const std::array<double, 10>& c, double u, int k) {
    // k-th derivative of sum c_j u^j.
    double s = 0.0;
    for (int j = 9; j >= k; --j) {
        double w = 1.0;
        for (int t = 0; t < k; ++t) w *= (j - t);
        s = s * u + w * c[j];
    }
    return s;
}

}  // namespace

RadialProfile::RadialProfile(std::vector<ProfileKnot> knots) : knots_(std::move(knots)) {
    if (knots_.size() < 2) throw ConfigError("RadialProfile: need at least two knots");
    for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
        double h = knots_[i + 1].r - knots_[i].r;
        if (!(h > 0.0)) throw ConfigError("RadialProfile: knots must be strictly increasing");
        width_.push_back(h);
        // scale jets to the local variable u = (r - r_i)/h
        std::array<double, 5> a, b;
        double hp = 1.0;
        for (int k = 0; k < 5; ++k) {
            a[k] = knots_[i].jet[k] * hp;
            b[k] = knots_[i + 1].jet[k] * hp;
            hp *= h;
        }
        coef_.push_back(hermite9(a, b));
    }
    if (knots_.front().r < 0.0) throw ConfigError("RadialProfile: negative radius knot");
}

int RadialProfile::piece_of(double r) const {
    // binary search over knot radii
    int lo = 0, hi = static_cast<int>(knots_.size()) - 1;
    while (hi - lo > 1) {
        int mid = (lo + hi) / 2;
        if (knots_[mid].r <= r)
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

double RadialProfile::eval(double r, int k) const {
    if (knots_.empty() || r < knots_.front().r || r > knots_.back().r) return 0.0;
    int i = piece_of(r);
    double h = width_[i];
    double u = (r - knots_[i].r) / h;
    return poly_eval(coef_[i], u, k) / std::pow(h, k);
}

std::array<double, 5> RadialProfile::jet(double r) const {
    std::array<double, 5> out{0, 0, 0, 0, 0};
    if (knots_.empty() || r < knots_.front().r || r > knots_.back().r) return out;
    int i = piece_of(r);
    double h = width_[i];
    double u = (r - knots_[i].r) / h;
    double hp = 1.0;  // out[k] = p^(k)(u) / h^k
    for (int k = 0; k < 5; ++k) {
        out[k] = poly_eval(coef_[i], u, k) / hp;
        hp *= h;
    }
    return out;
}

double RadialProfile::moment(int pow, double r) const {
    if (knots_.empty() || r <= knots_.front().r) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
        double r0 = knots_[i].r, r1 = knots_[i + 1].r;
        if (r <= r0) break;
        double upper = std::min(r, r1);
        double h = width_[i];
        // integrate x^pow * p(u(x)) dx, x = r0 + h u, over u in [0, u1]
        double u1 = (upper - r0) / h;
        // expand (r0 + h u)^pow * p(u) as a polynomial in u and integrate.
        // pow <= 3 in practice, so the binomial expansion is tiny.
        double binom = 1.0;
        for (int s = 0; s <= pow; ++s) {
            // term: C(pow,s) r0^(pow-s) h^s u^s
            double factor = binom * std::pow(r0, pow - s) * std::pow(h, s);
            // integral of u^(s+j) from 0 to u1 against coefficients
            double acc = 0.0;
            double up = std::pow(u1, s + 1);
            for (int j = 0; j < 10; ++j) {
                acc += coef_[i][j] * up / (s + j + 1);
                up *= u1;
            }
            total += h * factor * acc;
            binom = binom * (pow - s) / (s + 1);
        }
    }
    return total;
}

void RadialProfile::scan_range(double& umin, double& umax, int samples_per_piece) const {
    umin = 0.0;
    umax = 0.0;  // zero outside support counts
    for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
        for (int s = 0; s <= samples_per_piece; ++s) {
            double u = static_cast<double>(s) / samples_per_piece;
            double v = poly_eval(coef_[i], u, 0);
            if (v < umin) umin = v;
            if (v > umax) umax = v;
        }
    }
}

}  // namespace randpot

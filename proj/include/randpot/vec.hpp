#pragma once

// Small fixed-capacity vectors and matrices for phase-space work.
// Dimensions are runtime values but never exceed kMaxDim, so everything
// lives on the stack and copies are cheap.

#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>

namespace randpot {

inline constexpr int kMaxDim = 4;

class Vec {
public:
    Vec() : n_(0) { v_.fill(0.0); }
    explicit Vec(int n) : n_(n) {
        assert(n >= 0 && n <= kMaxDim);
        v_.fill(0.0);
    }
    Vec(std::initializer_list<double> xs) : n_(static_cast<int>(xs.size())) {
        assert(n_ <= kMaxDim);
        v_.fill(0.0);
        int i = 0;
        for (double x : xs) v_[i++] = x;
    }

    static Vec zero(int n) { return Vec(n); }
    static Vec unit(int n, int k) {
        Vec e(n);
        e[k] = 1.0;
        return e;
    }

    int dim() const { return n_; }
    double& operator[](int i) {
        assert(i >= 0 && i < n_);
        return v_[i];
    }
    double operator[](int i) const {
        assert(i >= 0 && i < n_);
        return v_[i];
    }

    Vec& operator+=(const Vec& o) {
        assert(n_ == o.n_);
        for (int i = 0; i < n_; ++i) v_[i] += o.v_[i];
        return *this;
    }
    Vec& operator-=(const Vec& o) {
        assert(n_ == o.n_);
        for (int i = 0; i < n_; ++i) v_[i] -= o.v_[i];
        return *this;
    }
    Vec& operator*=(double s) {
        for (int i = 0; i < n_; ++i) v_[i] *= s;
        return *this;
    }

    friend Vec operator+(Vec a, const Vec& b) { return a += b; }
    friend Vec operator-(Vec a, const Vec& b) { return a -= b; }
    friend Vec operator*(double s, Vec a) { return a *= s; }
    friend Vec operator*(Vec a, double s) { return a *= s; }
    friend Vec operator-(Vec a) { return a *= -1.0; }

    friend double dot(const Vec& a, const Vec& b) {
        assert(a.n_ == b.n_);
        double s = 0.0;
        for (int i = 0; i < a.n_; ++i) s += a.v_[i] * b.v_[i];
        return s;
    }

    double norm2() const { return dot(*this, *this); }
    double norm() const { return std::sqrt(norm2()); }

    bool finite() const {
        for (int i = 0; i < n_; ++i)
            if (!std::isfinite(v_[i])) return false;
        return true;
    }

private:
    std::array<double, kMaxDim> v_;
    int n_;
};

// Dense d x d matrix, row-major.
class Mat {
public:
    Mat() : n_(0) { a_.fill(0.0); }
    explicit Mat(int n) : n_(n) {
        assert(n >= 0 && n <= kMaxDim);
        a_.fill(0.0);
    }

    static Mat identity(int n) {
        Mat m(n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    int dim() const { return n_; }
    double& operator()(int i, int j) {
        assert(i >= 0 && i < n_ && j >= 0 && j < n_);
        return a_[static_cast<std::size_t>(i) * kMaxDim + j];
    }
    double operator()(int i, int j) const {
        assert(i >= 0 && i < n_ && j >= 0 && j < n_);
        return a_[static_cast<std::size_t>(i) * kMaxDim + j];
    }

    Mat& operator+=(const Mat& o) {
        assert(n_ == o.n_);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) (*this)(i, j) += o(i, j);
        return *this;
    }
    Mat& operator*=(double s) {
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) (*this)(i, j) *= s;
        return *this;
    }
    friend Mat operator*(double s, Mat m) { return m *= s; }

    friend Vec operator*(const Mat& m, const Vec& x) {
        assert(m.n_ == x.dim());
        Vec y(m.n_);
        for (int i = 0; i < m.n_; ++i) {
            double s = 0.0;
            for (int j = 0; j < m.n_; ++j) s += m(i, j) * x[j];
            y[i] = s;
        }
        return y;
    }

    friend Mat operator*(const Mat& a, const Mat& b) {
        assert(a.n_ == b.n_);
        Mat c(a.n_);
        for (int i = 0; i < a.n_; ++i)
            for (int j = 0; j < a.n_; ++j) {
                double s = 0.0;
                for (int k = 0; k < a.n_; ++k) s += a(i, k) * b(k, j);
                c(i, j) = s;
            }
        return c;
    }

    double trace() const {
        double s = 0.0;
        for (int i = 0; i < n_; ++i) s += (*this)(i, i);
        return s;
    }

    // a b^T contribution, y += s * a b^T applied in place.
    void add_outer(double s, const Vec& a, const Vec& b) {
        assert(a.dim() == n_ && b.dim() == n_);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) (*this)(i, j) += s * a[i] * b[j];
    }

    double det() const;
    Mat inverse() const;  // throws std::runtime_error on singular input

private:
    std::array<double, kMaxDim * kMaxDim> a_;
    int n_;
};

inline double Mat::det() const {
    // Gaussian elimination with partial pivoting on a local copy.
    Mat m = *this;
    double d = 1.0;
    for (int k = 0; k < n_; ++k) {
        int piv = k;
        for (int i = k + 1; i < n_; ++i)
            if (std::fabs(m(i, k)) > std::fabs(m(piv, k))) piv = i;
        if (m(piv, k) == 0.0) return 0.0;
        if (piv != k) {
            for (int j = 0; j < n_; ++j) std::swap(m(piv, j), m(k, j));
            d = -d;
        }
        d *= m(k, k);
        for (int i = k + 1; i < n_; ++i) {
            double f = m(i, k) / m(k, k);
            for (int j = k; j < n_; ++j) m(i, j) -= f * m(k, j);
        }
    }
    return d;
}

inline Mat Mat::inverse() const {
    // Gauss-Jordan with partial pivoting.
    Mat m = *this;
    Mat inv = Mat::identity(n_);
    for (int k = 0; k < n_; ++k) {
        int piv = k;
        for (int i = k + 1; i < n_; ++i)
            if (std::fabs(m(i, k)) > std::fabs(m(piv, k))) piv = i;
        if (m(piv, k) == 0.0) throw std::runtime_error("Mat::inverse: singular matrix");
        if (piv != k)
            for (int j = 0; j < n_; ++j) {
                std::swap(m(piv, j), m(k, j));
                std::swap(inv(piv, j), inv(k, j));
            }
        double f = m(k, k);
        for (int j = 0; j < n_; ++j) {
            m(k, j) /= f;
            inv(k, j) /= f;
        }
        for (int i = 0; i < n_; ++i) {
            if (i == k) continue;
            double g = m(i, k);
            if (g == 0.0) continue;
            for (int j = 0; j < n_; ++j) {
                m(i, j) -= g * m(k, j);
                inv(i, j) -= g * inv(k, j);
            }
        }
    }
    return inv;
}

inline double sqr(double x) { return x * x; }

}  // namespace randpot

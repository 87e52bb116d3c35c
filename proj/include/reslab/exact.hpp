#pragma once

#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <Eigen/Dense>

#include "map_model.hpp"

// Exact rational arithmetic for affine Markov maps with rational data.

namespace reslab::exact {

using Rational = boost::multiprecision::cpp_rational;

struct RMatrix {
    int rows = 0, cols = 0;
    std::vector<Rational> a;

    RMatrix() = default;
    RMatrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, Rational(0)) {}
    static RMatrix identity(int n) {
        RMatrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1;
        return m;
    }
    Rational& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    const Rational& operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
    bool operator==(const RMatrix& o) const { return rows == o.rows && cols == o.cols && a == o.a; }

    Eigen::MatrixXd to_double() const {
        Eigen::MatrixXd m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = static_cast<double>((*this)(i, j));
        return m;
    }
};

inline RMatrix operator*(const RMatrix& x, const RMatrix& y) {
    RMatrix z(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int k = 0; k < x.cols; ++k) {
            if (x(i, k) == 0) continue;
            for (int j = 0; j < y.cols; ++j) z(i, j) += x(i, k) * y(k, j);
        }
    return z;
}

inline RMatrix operator+(RMatrix x, const RMatrix& y) {
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += y.a[i];
    return x;
}

inline RMatrix operator-(RMatrix x, const RMatrix& y) {
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] -= y.a[i];
    return x;
}

inline RMatrix scaled(RMatrix x, const Rational& s) {
    for (auto& v : x.a) v *= s;
    return x;
}

inline std::vector<Rational> apply(const RMatrix& m, const std::vector<Rational>& v) {
    std::vector<Rational> out(m.rows, Rational(0));
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) out[i] += m(i, j) * v[j];
    return out;
}

inline int rank(RMatrix m) {
    int r = 0;
    for (int c = 0; c < m.cols && r < m.rows; ++c) {
        int piv = -1;
        for (int i = r; i < m.rows; ++i)
            if (m(i, c) != 0) {
                piv = i;
                break;
            }
        if (piv < 0) continue;
        for (int j = 0; j < m.cols; ++j) std::swap(m(r, j), m(piv, j));
        for (int i = r + 1; i < m.rows; ++i) {
            if (m(i, c) == 0) continue;
            const Rational f = m(i, c) / m(r, c);
            for (int j = c; j < m.cols; ++j) m(i, j) -= f * m(r, j);
        }
        ++r;
    }
    return r;
}

// Characteristic polynomial det(tI - M), ascending coefficients, by Faddeev-LeVerrier.
inline std::vector<Rational> charpoly(const RMatrix& M) {
    const int n = M.rows;
    std::vector<Rational> c(n + 1, Rational(0));
    c[n] = 1;
    RMatrix Mk(n, n);
    for (int k = 1; k <= n; ++k) {
        RMatrix next = M * Mk;
        for (int i = 0; i < n; ++i) next(i, i) += c[n - k + 1];
        Mk = std::move(next);
        const RMatrix AM = M * Mk;
        Rational tr = 0;
        for (int i = 0; i < n; ++i) tr += AM(i, i);
        c[n - k] = -tr / k;
    }
    return c;
}

inline std::vector<Rational> poly_mul(const std::vector<Rational>& a, const std::vector<Rational>& b) {
    std::vector<Rational> r(a.size() + b.size() - 1, Rational(0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
    return r;
}

// Jordan block sizes of xi via exact ranks of (M - xi)^j.
inline std::vector<int> jordan_blocks(const RMatrix& M, const Rational& xi) {
    const int n = M.rows;
    RMatrix S = M - scaled(RMatrix::identity(n), xi);
    RMatrix P = S;
    std::vector<int> nul;
    for (int j = 1; j <= n; ++j) {
        if (j > 1) P = P * S;
        const int v = n - rank(P);
        if (!nul.empty() && v == nul.back()) break;
        nul.push_back(v);
    }
    std::vector<int> sizes;
    for (std::size_t j = 0; j < nul.size(); ++j) {
        const int bj = nul[j] - (j ? nul[j - 1] : 0);
        const int next = j + 1 < nul.size() ? nul[j + 1] - nul[j] : 0;
        for (int c = 0; c < bj - next; ++c) sizes.push_back(static_cast<int>(j) + 1);
    }
    std::sort(sizes.rbegin(), sizes.rend());
    return sizes;
}

struct RationalAffineMap {
    std::vector<Rational> p, slope, offset, q;
    Eigen::MatrixXi A;

    int size() const { return static_cast<int>(slope.size()); }

    MarkovAffineMap to_double() const {
        std::vector<double> pd, sd, od;
        for (const auto& v : p) pd.push_back(static_cast<double>(v));
        for (const auto& v : slope) sd.push_back(static_cast<double>(v));
        for (const auto& v : offset) od.push_back(static_cast<double>(v));
        auto m = make_affine(pd, sd, od);
        m.A = A;
        return m;
    }
};

inline RationalAffineMap make_rational(std::vector<Rational> p, std::vector<Rational> slope,
                                       std::vector<Rational> offset) {
    RationalAffineMap m{std::move(p), std::move(slope), std::move(offset), {}, {}};
    const int n = m.size();
    m.A = Eigen::MatrixXi::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        m.q.push_back(m.slope[j] * m.p[j] + m.offset[j]);
        Rational a = m.q[j], b = m.slope[j] * m.p[j + 1] + m.offset[j];
        if (b < a) std::swap(a, b);
        for (int i = 0; i < n; ++i)
            if (m.p[i] >= a && m.p[i + 1] <= b) m.A(j, i) = 1;
    }
    return m;
}

// Exact conversion of a floating map (exact when its data are binary fractions).
inline RationalAffineMap from_double(const MarkovAffineMap& m) {
    std::vector<Rational> p, s, o;
    for (double v : m.p) p.emplace_back(v);
    for (double v : m.slope) s.emplace_back(v);
    for (double v : m.offset) o.emplace_back(v);
    return make_rational(p, s, o);
}

inline Rational rpow(const Rational& x, int k) {
    Rational r = 1;
    const Rational b = k >= 0 ? x : Rational(1) / x;
    for (int i = 0; i < std::abs(k); ++i) r *= b;
    return r;
}

inline Rational weight(const Rational& lam, int k, WeightMode mode) {
    if (k == 0) return 1;
    if (mode == WeightMode::MME) return rpow(lam, -k);
    return rpow(lam, -(k - 1)) / abs(lam);
}

inline RMatrix build_Bk(const RationalAffineMap& m, int k, WeightMode mode) {
    const int n = m.size();
    RMatrix B(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (m.A(j, i)) B(i, j) = weight(m.slope[j], k, mode);
    return B;
}

inline RMatrix build_Tkr(const RationalAffineMap& m, int k, int r, WeightMode mode) {
    const int n = m.size();
    RMatrix T(n * (r + 1), n * (r + 1));
    for (int j = 0; j < n; ++j) {
        const Rational alpha = Rational(1) / m.slope[j];
        const Rational beta = m.p[j] - m.q[j] / m.slope[j];
        const Rational w = weight(m.slope[j], k, mode);
        for (int i = 0; i < n; ++i) {
            if (!m.A(j, i)) continue;
            for (int L = 0; L <= r; ++L) {
                Rational binom = 1;
                for (int mm = 0; mm <= L; ++mm) {
                    if (mm > 0) binom = binom * (L - mm + 1) / mm;
                    T(mm * n + i, L * n + j) += w * binom * rpow(alpha, mm) * rpow(beta, L - mm);
                }
            }
        }
    }
    return T;
}

} // namespace reslab::exact

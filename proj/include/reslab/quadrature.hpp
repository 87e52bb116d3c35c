#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include "error.hpp"

namespace reslab {

struct Rule {
    std::vector<double> x, w;
};

// Gauss-Legendre rule on [-1,1] by Newton iteration on P_n.
inline Rule gauss_legendre(int n) {
    Rule r;
    r.x.resize(n);
    r.w.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1, p1 = 0;
            for (int k = 1; k <= n; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = n * (z * p0 - p1) / (z * z - 1);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        // recompute the derivative at the converged node
        double p0 = 1, p1 = 0;
        for (int k = 1; k <= n; ++k) {
            const double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * k - 1) * z * p1 - (k - 1.0) * p2) / k;
        }
        dp = n * (z * p0 - p1) / (z * z - 1);
        r.x[i] = -z;
        r.x[n - 1 - i] = z;
        r.w[i] = r.w[n - 1 - i] = 2.0 / ((1 - z * z) * dp * dp);
    }
    return r;
}

inline const Rule& cached_gauss_legendre(int n) {
    static thread_local std::vector<Rule> cache(129);
    if (n <= 128) {
        if (cache[n].x.empty()) cache[n] = gauss_legendre(n);
        return cache[n];
    }
    static thread_local Rule big;
    big = gauss_legendre(n);
    return big;
}

// Chebyshev points of the first kind on [-1,1], ascending, with barycentric weights.
inline Rule chebyshev_points(int n) {
    Rule r;
    r.x.resize(n);
    r.w.resize(n);
    for (int j = 0; j < n; ++j) {
        const double th = (2.0 * (n - 1 - j) + 1) * std::numbers::pi / (2.0 * n);
        r.x[j] = std::cos(th);
        r.w[j] = ((n - 1 - j) % 2 == 0 ? 1.0 : -1.0) * std::sin(th);
    }
    return r;
}

// Barycentric weights for arbitrary distinct nodes.
inline std::vector<double> barycentric_weights(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<double> w(n, 1.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < n; ++k)
            if (k != j) w[j] *= 2.0 * (x[j] - x[k]);
        w[j] = 1.0 / w[j];
    }
    return w;
}

// Lagrange basis values at t for the nodes x with barycentric weights w.
inline void lagrange_row(const std::vector<double>& x, const std::vector<double>& w, double t,
                         double* out) {
    const std::size_t n = x.size();
    for (std::size_t j = 0; j < n; ++j) {
        if (t == x[j]) {
            for (std::size_t k = 0; k < n; ++k) out[k] = 0.0;
            out[j] = 1.0;
            return;
        }
    }
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = w[j] / (t - x[j]);
        s += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= s;
}

// Adaptive Gauss-Legendre integration by bisection with a 20/40 node comparison.
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-13, int max_depth = 40) {
    const Rule& g = cached_gauss_legendre(20);
    auto panel = [&](double lo, double hi) {
        const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
        double s = 0;
        for (std::size_t i = 0; i < g.x.size(); ++i) s += g.w[i] * f(c + h * g.x[i]);
        return s * h;
    };
    std::function<double(double, double, double, int, double)> rec =
        [&](double lo, double hi, double whole, int depth, double eps) -> double {
        const double mid = 0.5 * (lo + hi);
        const double left = panel(lo, mid), right = panel(mid, hi);
        if (std::abs(left + right - whole) <= eps || depth >= max_depth) {
            if (depth >= max_depth && std::abs(left + right - whole) > 1e3 * eps)
                throw NumericError("adaptive quadrature did not converge");
            return left + right;
        }
        return rec(lo, mid, left, depth + 1, 0.5 * eps) + rec(mid, hi, right, depth + 1, 0.5 * eps);
    };
    if (a == b) return 0.0;
    return rec(a, b, panel(a, b), 0, tol);
}

} // namespace reslab

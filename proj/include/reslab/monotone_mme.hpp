#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "correlation.hpp"
#include "map_model.hpp"
#include "parallel.hpp"
#include "piecewise.hpp"

// Measure of maximal entropy of full-branch monotone maps as the limit of int N^{-n} L_0^n.

namespace reslab {

constexpr int max_mme_iterations = 80;

// 4096 Gauss-Legendre nodes, geometrically graded toward every partition point.
inline GridSpec default_mme_grid(int N) {
    GridSpec s;
    s.kind = NodeKind::Legendre;
    s.order = 16;
    s.panels_per_interval = std::max(1, 4096 / (16 * N));
    s.grading_levels = 12;
    s.grading_ratio = 0.3;
    return s;
}

inline PiecewiseMap checked_full_branch(const MonotoneFullBranchMap& m) {
    if (m.size() < 1) throw InputError("map has no branches");
    return piecewise(m);
}

// Pointwise (L_0 h)(x) = sum_j h(g_j x).
inline double l0_at(const MonotoneFullBranchMap& m, const std::function<double(double)>& h, double x) {
    double s = 0;
    for (int j = 0; j < m.size(); ++j) s += h(m.inverse(j, x));
    return s;
}

struct MmeGrid {
    PanelGrid grid;
    SparseRM L0;   // L_0 on the grid nodes
    Eigen::VectorXd w;
    int N = 0;
};

inline MmeGrid mme_grid(const MonotoneFullBranchMap& m, const GridSpec& spec) {
    MmeGrid g;
    const auto pm = checked_full_branch(m);
    g.grid = PanelGrid(m.p, spec);
    g.L0 = assemble_transfer(pm, g.grid, 0, WeightMode::MME);
    g.w = Eigen::Map<const Eigen::VectorXd>(g.grid.weights().data(), g.grid.size());
    g.N = m.size();
    return g;
}

inline MmeGrid mme_grid(const MonotoneFullBranchMap& m) { return mme_grid(m, default_mme_grid(m.size())); }

inline Eigen::VectorXd l0_apply(const MmeGrid& g, const Eigen::VectorXd& h) { return g.L0 * h; }

struct MmeApproximation {
    int n = 0;                 // iterations used
    bool converged = false;
    double tol = 1e-9;
    Eigen::VectorXd density;   // N^{-n} L_0^n 1 on the nodes
    Eigen::VectorXd dual;      // phi -> int N^{-n} L_0^n phi dx as a weight vector
    std::vector<std::vector<double>> history;  // history[i][n] = mu_n(phi_i)
    std::vector<double> mass;  // int N^{-n} L_0^n 1

    double pair(const Eigen::VectorXd& phi) const { return dual.dot(phi); }
};

// mu_n(phi) = int N^{-n} L_0^n phi dx, stopped once every pairing moves by less than tol.
inline MmeApproximation mme_iterate(const MmeGrid& g, const std::vector<Eigen::VectorXd>& phis, int n_max,
                                    double tol = 1e-9) {
    if (n_max < 1 || n_max > max_mme_iterations)
        throw std::invalid_argument("n_max must be in [1, " + std::to_string(max_mme_iterations) + "]");
    MmeApproximation a;
    a.tol = tol;
    const SparseRM LT = SparseRM(g.L0.transpose()) / static_cast<double>(g.N);
    Eigen::VectorXd v = g.w, rho = Eigen::VectorXd::Ones(g.grid.size());
    a.history.assign(phis.size(), {});
    auto record = [&] {
        for (std::size_t i = 0; i < phis.size(); ++i) a.history[i].push_back(v.dot(phis[i]));
        a.mass.push_back(g.w.dot(rho));
    };
    record();
    for (int n = 1; n <= n_max; ++n) {
        v = LT * v;
        rho = g.L0 * rho / static_cast<double>(g.N);
        record();
        a.n = n;
        double move = std::abs(a.mass[n] - a.mass[n - 1]);
        for (const auto& h : a.history) move = std::max(move, std::abs(h[n] - h[n - 1]));
        if (move < tol) {
            a.converged = true;
            break;
        }
    }
    a.dual = v;
    a.density = rho;
    return a;
}

// Left fixed vector of L_0/N normalized by nu . 1 = 1, iterated to round-off.
inline Eigen::VectorXd mme_functional(const MmeGrid& g, int max_iter = 2000) {
    const SparseRM LT = SparseRM(g.L0.transpose()) / static_cast<double>(g.N);
    Eigen::VectorXd v = g.w;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd nv = LT * v;
        nv /= nv.sum();
        const double d = (nv - v).cwiseAbs().sum();
        v = nv;
        if (d < 1e-15) return v;
    }
    throw NumericError("MME functional did not converge in " + std::to_string(max_iter) + " iterations");
}

struct MixingCheck {
    std::vector<double> C;       // |mu(h . phi o f^n) - mu(h) mu(phi)|
    double target = 0;           // 1/N + 0.05
    double rate = 0;             // fitted
    double bound_constant = 0;   // max_n C(n) / target^n
    bool identically_zero = false;
    bool pass = false;
    std::optional<FitResult> fit;
    std::string note;
};

// mu(h . phi o f^n) = mu(phi . N^{-n} L_0^n h).
inline MixingCheck mixing_rate_check(const MmeGrid& g, const Eigen::VectorXd& nu, const Eigen::VectorXd& h,
                                     const Eigen::VectorXd& phi, int n_max) {
    if (n_max < 1 || n_max > max_mme_iterations)
        throw std::invalid_argument("n_max must be in [1, " + std::to_string(max_mme_iterations) + "]");
    MixingCheck r;
    r.target = 1.0 / g.N + 0.05;
    const double mh = nu.dot(h), mp = nu.dot(phi);
    Eigen::VectorXd hn = h;
    for (int n = 0; n <= n_max; ++n) {
        r.C.push_back(std::abs(nu.dot(phi.cwiseProduct(hn)) - mh * mp));
        hn = g.L0 * hn / static_cast<double>(g.N);
    }
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff() * phi.cwiseAbs().maxCoeff());
    if (*std::max_element(r.C.begin(), r.C.end()) <= 1e-13 * scale) {
        r.identically_zero = true;
        r.pass = true;
        r.note = "correlation vanishes";
        return r;
    }
    for (int n = 0; n <= n_max; ++n) r.bound_constant = std::max(r.bound_constant, r.C[n] / std::pow(r.target, n));
    try {
        r.fit = fit_decay(r.C);
        r.rate = r.fit->rho;
        r.pass = r.rate <= r.target;
    } catch (const NumericError& e) {
        r.note = std::string("inconclusive: ") + e.what();
    }
    return r;
}

// ---------------- cylinders ----------------

struct Cylinder {
    std::vector<int> word;
    double a = 0, b = 0;
};

// p = g_{w_0} o ... o g_{w_{n-1}} ([0,1]).
inline Cylinder cylinder(const MonotoneFullBranchMap& m, const std::vector<int>& word) {
    double lo = 0, hi = 1;
    for (auto it = word.rbegin(); it != word.rend(); ++it) {
        if (*it < 0 || *it >= m.size()) throw std::invalid_argument("cylinder symbol out of range");
        const double x = m.inverse(*it, lo), y = m.inverse(*it, hi);
        lo = std::min(x, y);
        hi = std::max(x, y);
    }
    return {word, lo, hi};
}

inline double apply_inverse_word(const MonotoneFullBranchMap& m, const std::vector<int>& word, double x) {
    for (auto it = word.rbegin(); it != word.rend(); ++it) x = m.inverse(*it, x);
    return x;
}

// Word of the leftmost (or rightmost) cylinder of length k.
inline std::vector<int> extreme_word(const MonotoneFullBranchMap& m, int k, bool leftmost) {
    std::vector<int> w;
    for (int i = 0; i < k; ++i) {
        const int j = leftmost ? 0 : m.size() - 1;
        w.push_back(j);
        if (m.sign[j] < 0) leftmost = !leftmost;
    }
    return w;
}

// Adjacent cylinder of the same length on the right (dir = +1) or left (dir = -1); empty at the boundary.
inline std::vector<int> neighbour_word(const MonotoneFullBranchMap& m, const std::vector<int>& w, int dir) {
    if (w.empty()) return {};
    const int j = w[0];
    const std::vector<int> tail(w.begin() + 1, w.end());
    const int inner = m.sign[j] > 0 ? dir : -dir;
    if (!tail.empty()) {
        auto t = neighbour_word(m, tail, inner);
        if (!t.empty()) {
            t.insert(t.begin(), j);
            return t;
        }
    }
    const int jj = j + dir;
    if (jj < 0 || jj >= m.size()) return {};
    // entering I_jj from its left end when moving right
    const bool want_left_of_image = (dir > 0) == (m.sign[jj] > 0);
    auto t = extreme_word(m, static_cast<int>(w.size()) - 1, want_left_of_image);
    t.insert(t.begin(), jj);
    return t;
}

inline std::pair<std::vector<int>, std::vector<int>> neighbours(const MonotoneFullBranchMap& m, const Cylinder& p) {
    return {neighbour_word(m, p.word, -1), neighbour_word(m, p.word, +1)};
}

inline double cubic_ramp(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3 - 2 * t);
}

struct CylinderBound {
    Cylinder p;
    double measure = 0;   // mu of the smoothed indicator
    double bound = 0;     // 3 N^{-n}
    bool pass = false;
};

// Smoothed indicator: 1 on p, C^1 cubic ramps across the neighbouring cylinders. Its L_0^n image is
// 1 + ramp(g_{w-} x) + ramp(g_{w+} x), a smooth function, paired with nu.
inline CylinderBound cylinder_bound(const MonotoneFullBranchMap& m, const MmeGrid& g, const Eigen::VectorXd& nu,
                                    const std::vector<int>& word) {
    CylinderBound r;
    r.p = cylinder(m, word);
    const int n = static_cast<int>(word.size());
    const auto [lw, rw] = neighbours(m, r.p);
    Cylinder L, R;
    if (!lw.empty()) L = cylinder(m, lw);
    if (!rw.empty()) R = cylinder(m, rw);
    auto bump = [&](double y) {
        if (y >= r.p.a && y <= r.p.b) return 1.0;
        if (!lw.empty() && y < r.p.a && y >= L.a) return cubic_ramp((y - L.a) / (L.b - L.a));
        if (!rw.empty() && y > r.p.b && y <= R.b) return cubic_ramp((R.b - y) / (R.b - R.a));
        return 0.0;
    };
    const Eigen::VectorXd img = g.grid.sample([&](double x) {
        double s = 1.0;
        if (!lw.empty()) s += bump(apply_inverse_word(m, lw, x));
        if (!rw.empty()) s += bump(apply_inverse_word(m, rw, x));
        return s;
    });
    r.measure = std::pow(static_cast<double>(m.size()), -n) * nu.dot(img);
    r.bound = 3 * std::pow(static_cast<double>(m.size()), -n);
    r.pass = r.measure <= r.bound * (1 + 1e-12);
    return r;
}

inline std::vector<std::vector<int>> random_words(std::mt19937_64& rng, int N, int count, int max_len) {
    std::uniform_int_distribution<int> len(1, max_len), sym(0, N - 1);
    std::vector<std::vector<int>> out;
    for (int c = 0; c < count; ++c) {
        std::vector<int> w(len(rng));
        for (auto& s : w) s = sym(rng);
        out.push_back(w);
    }
    return out;
}

} // namespace reslab

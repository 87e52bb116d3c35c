#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "map_model.hpp"
#include "quadrature.hpp"

namespace reslab {

// Uniform view of a piecewise monotone Markov map: branch inverses, derivative and distortion.
struct PiecewiseMap {
    std::vector<double> p;
    Eigen::MatrixXi adj;  // adj(j,i) = 1 iff I_i lies in f(I_j)
    std::function<double(int, double)> inverse;
    std::function<double(int, double)> fprime;
    std::function<double(int, double)> distortion;
    std::function<double(double)> map;
    bool full_branch = false;

    int size() const { return static_cast<int>(p.size()) - 1; }
    double lambda_min() const {
        double m = std::numeric_limits<double>::infinity();
        for (int j = 0; j < size(); ++j)
            for (double x : branch_sample(p[j], p[j + 1], 256)) m = std::min(m, std::abs(fprime(j, x)));
        return m;
    }
};

inline PiecewiseMap piecewise(const MarkovAffineMap& m) {
    PiecewiseMap pm;
    pm.p = m.p;
    pm.adj = m.A;
    pm.inverse = [m](int j, double y) { return m.inverse(j, y); };
    pm.fprime = [s = m.slope](int j, double) { return s[j]; };
    pm.distortion = [](int, double) { return 0.0; };
    pm.map = [m](double x) { return m(x); };
    pm.full_branch = (m.A.array() == 1).all();
    return pm;
}

inline PiecewiseMap piecewise(const SmoothFullBranchMap& m) {
    PiecewiseMap pm;
    pm.p = m.p;
    pm.adj = Eigen::MatrixXi::Ones(m.size(), m.size());
    pm.inverse = [m](int j, double y) { return m.inverse(j, y); };
    pm.fprime = [m](int j, double x) { return m.fprime(j, x); };
    pm.distortion = [m](int j, double x) { return m.distortion(j, x); };
    pm.map = [m](double x) { return m(x); };
    pm.full_branch = true;
    return pm;
}

inline PiecewiseMap piecewise(const MonotoneFullBranchMap& m) {
    PiecewiseMap pm;
    pm.p = m.p;
    pm.adj = Eigen::MatrixXi::Ones(m.size(), m.size());
    pm.inverse = [m](int j, double y) { return m.inverse(j, y); };
    pm.fprime = [m](int j, double x) { return m.fprime(j, x); };
    pm.distortion = [m](int j, double x) { return eval_inward(m.branches[j].D, x, m.p[j], m.p[j + 1]); };
    pm.map = [m](double x) { return m(x); };
    pm.full_branch = true;
    return pm;
}

enum class NodeKind { Chebyshev, Legendre };

struct GridSpec {
    NodeKind kind = NodeKind::Chebyshev;
    int order = 32;                // nodes per panel
    int panels_per_interval = 1;
    int grading_levels = 0;        // geometric panels toward each interval endpoint
    double grading_ratio = 0.15;
};

// Composite panel grid aligned with the partition.
class PanelGrid {
public:
    PanelGrid() = default;
    PanelGrid(const std::vector<double>& partition, const GridSpec& spec) : spec_(spec) {
        const Rule ref = spec.kind == NodeKind::Chebyshev ? chebyshev_points(spec.order)
                                                           : gauss_legendre(spec.order);
        ref_x_ = ref.x;
        bary_ = spec.kind == NodeKind::Chebyshev ? ref.w : barycentric_weights(ref.x);
        const int m = spec.order;
        // integration weights of the interpolant, and partial integrals from -1 to each node
        const Rule& g = cached_gauss_legendre(m);
        ref_w_.assign(m, 0.0);
        std::vector<double> row(m);
        for (std::size_t q = 0; q < g.x.size(); ++q) {
            lagrange_row(ref_x_, bary_, g.x[q], row.data());
            for (int k = 0; k < m; ++k) ref_w_[k] += g.w[q] * row[k];
        }
        ref_partial_.assign(static_cast<std::size_t>(m) * m, 0.0);
        for (int i = 0; i < m; ++i) {
            const double c = 0.5 * (ref_x_[i] - 1.0), h = 0.5 * (ref_x_[i] + 1.0);
            for (std::size_t q = 0; q < g.x.size(); ++q) {
                lagrange_row(ref_x_, bary_, c + h * g.x[q], row.data());
                for (int k = 0; k < m; ++k) ref_partial_[i * m + k] += h * g.w[q] * row[k];
            }
        }
        for (std::size_t iv = 0; iv + 1 < partition.size(); ++iv) {
            const double a = partition[iv], b = partition[iv + 1];
            std::vector<double> cuts;
            const int P = std::max(1, spec.panels_per_interval);
            for (int k = 0; k <= P; ++k) cuts.push_back(a + (b - a) * k / P);
            if (spec.grading_levels > 0) {
                std::vector<double> graded;
                const double h = (b - a) / P;
                for (int l = spec.grading_levels; l >= 1; --l) graded.push_back(a + h * std::pow(spec.grading_ratio, l));
                for (int l = 1; l <= spec.grading_levels; ++l) graded.push_back(b - h * std::pow(spec.grading_ratio, l));
                cuts.insert(cuts.end(), graded.begin(), graded.end());
                std::sort(cuts.begin(), cuts.end());
            }
            for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
                edges_.push_back(cuts[k]);
                interval_.push_back(static_cast<int>(iv));
            }
        }
        edges_.push_back(partition.back());
        const int np = panels();
        nodes_.resize(static_cast<std::size_t>(np) * m);
        weights_.resize(nodes_.size());
        for (int pi = 0; pi < np; ++pi) {
            const double c = 0.5 * (edges_[pi] + edges_[pi + 1]), h = 0.5 * (edges_[pi + 1] - edges_[pi]);
            for (int k = 0; k < m; ++k) {
                nodes_[pi * m + k] = c + h * ref_x_[k];
                weights_[pi * m + k] = h * ref_w_[k];
            }
        }
    }

    int size() const { return static_cast<int>(nodes_.size()); }
    int order() const { return spec_.order; }
    int panels() const { return static_cast<int>(edges_.size()) - 1; }
    const GridSpec& spec() const { return spec_; }
    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<double>& weights() const { return weights_; }
    const std::vector<double>& edges() const { return edges_; }
    double node(int i) const { return nodes_[i]; }
    int interval_of_node(int i) const { return interval_[i / spec_.order]; }
    int interval_of_panel(int pi) const { return interval_[pi]; }

    int locate_panel(double y) const {
        auto it = std::upper_bound(edges_.begin(), edges_.end(), y);
        int k = static_cast<int>(it - edges_.begin()) - 1;
        return std::clamp(k, 0, panels() - 1);
    }
    // Panel lookup that respects the partition interval a preimage belongs to.
    int locate_panel(double y, int interval) const {
        int k = locate_panel(y);
        while (k > 0 && interval_[k] > interval) --k;
        while (k + 1 < panels() && interval_[k] < interval) ++k;
        return k;
    }

    // Interpolation weights at y: fills row (size order) and returns the panel index.
    int interp(double y, double* row, int interval = -1) const {
        const int pi = interval < 0 ? locate_panel(y) : locate_panel(y, interval);
        const double a = edges_[pi], b = edges_[pi + 1];
        lagrange_row(ref_x_, bary_, (2 * y - a - b) / (b - a), row);
        return pi;
    }

    double evaluate(const Eigen::VectorXd& g, double y, int interval = -1) const {
        std::vector<double> row(spec_.order);
        const int pi = interp(y, row.data(), interval);
        double s = 0;
        for (int k = 0; k < spec_.order; ++k) s += row[k] * g[pi * spec_.order + k];
        return s;
    }

    double integrate(const Eigen::VectorXd& g) const {
        double s = 0;
        for (int i = 0; i < size(); ++i) s += weights_[i] * g[i];
        return s;
    }

    // (Psi g)(x_i) = int_0^{x_i} g for the interpolant of g.
    Eigen::VectorXd cumulative(const Eigen::VectorXd& g) const {
        const int m = spec_.order;
        Eigen::VectorXd out(size());
        double before = 0;
        for (int pi = 0; pi < panels(); ++pi) {
            const double h = 0.5 * (edges_[pi + 1] - edges_[pi]);
            for (int i = 0; i < m; ++i) {
                double s = 0;
                for (int k = 0; k < m; ++k) s += ref_partial_[i * m + k] * g[pi * m + k];
                out[pi * m + i] = before + h * s;
            }
            for (int k = 0; k < m; ++k) before += weights_[pi * m + k] * g[pi * m + k];
        }
        return out;
    }

    Eigen::MatrixXd cumulative_matrix() const {
        const int m = spec_.order, n = size();
        Eigen::MatrixXd C = Eigen::MatrixXd::Zero(n, n);
        for (int pi = 0; pi < panels(); ++pi) {
            const double h = 0.5 * (edges_[pi + 1] - edges_[pi]);
            for (int i = 0; i < m; ++i) {
                const int r = pi * m + i;
                for (int c = 0; c < pi * m; ++c) C(r, c) = weights_[c];
                for (int k = 0; k < m; ++k) C(r, pi * m + k) = h * ref_partial_[i * m + k];
            }
        }
        return C;
    }

    Eigen::VectorXd sample(const std::function<double(double)>& f) const {
        Eigen::VectorXd v(size());
        for (int i = 0; i < size(); ++i) v[i] = f(nodes_[i]);
        return v;
    }

private:
    GridSpec spec_;
    std::vector<double> ref_x_, bary_, ref_w_, ref_partial_;
    std::vector<double> edges_, nodes_, weights_;
    std::vector<int> interval_;
};

using SparseRM = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Weight 1/f'^k with the SRB convention |f'|^{-1} f'^{-(k-1)} for signed slopes.
inline double transfer_weight(double d, int k, WeightMode mode) {
    if (k == 0) return 1.0;
    if (mode == WeightMode::MME) return std::pow(d, -k);
    return std::pow(d, -(k - 1)) / std::abs(d);
}

// Assembled operator h -> sum_j w_k(g_j x) * extra(j, g_j x) * h(g_j x) on the grid nodes.
inline Eigen::SparseMatrix<double, Eigen::RowMajor> assemble_transfer(
    const PiecewiseMap& map, const PanelGrid& grid, int k, WeightMode mode = WeightMode::SRB,
    const std::function<double(int, double)>& extra = nullptr) {
    const int n = grid.size(), m = grid.order(), N = map.size();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n) * N * m);
    std::vector<double> row(m);
    for (int r = 0; r < n; ++r) {
        const double x = grid.node(r);
        const int i = grid.interval_of_node(r);
        for (int j = 0; j < N; ++j) {
            if (!map.adj(j, i)) continue;
            const double y = map.inverse(j, x);
            double w = transfer_weight(map.fprime(j, y), k, mode);
            if (extra) w *= extra(j, y);
            if (w == 0) continue;
            const int pi = grid.interp(y, row.data(), j);
            for (int c = 0; c < m; ++c)
                if (row[c] != 0) trip.emplace_back(r, pi * m + c, w * row[c]);
        }
    }
    Eigen::SparseMatrix<double, Eigen::RowMajor> L(n, n);
    L.setFromTriplets(trip.begin(), trip.end());
    return L;
}

// Pointwise transfer of a function given analytically: sum_j w(g_j x) h(g_j x).
inline double transfer_at(const PiecewiseMap& map, int k, WeightMode mode, const std::function<double(double)>& h,
                          double x) {
    const int i = locate_interval(map.p, x);
    double s = 0;
    for (int j = 0; j < map.size(); ++j) {
        if (!map.adj(j, i)) continue;
        const double y = map.inverse(j, x);
        s += transfer_weight(map.fprime(j, y), k, mode) * h(y);
    }
    return s;
}

} // namespace reslab

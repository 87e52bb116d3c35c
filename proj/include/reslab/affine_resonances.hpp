#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "map_model.hpp"
#include "spectrum.hpp"

namespace reslab {

inline double weight(double lam, int k, WeightMode mode) {
    if (k == 0) return 1.0;
    if (mode == WeightMode::MME) return std::pow(lam, -k);
    return std::pow(lam, -(k - 1)) / std::abs(lam);
}

// B_k[i,j] = w_k(lambda_j) A[j,i]
inline Eigen::MatrixXd build_Bk(const MarkovAffineMap& m, int k, WeightMode mode) {
    if (k < 0) throw std::invalid_argument("k must be nonnegative");
    const int n = m.size();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (m.A(j, i)) B(i, j) = weight(m.slope[j], k, mode);
    return B;
}

// Matrix of L_k on piecewise polynomials of degree <= r in the basis x^l 1_{I_j}, index l*N + j.
// Coefficient vectors are columns; L_k lowers degree, so block (m, l) vanishes for l < m.
struct BlockOperatorTkr {
    int k = 0, r = 0, N = 0;
    WeightMode mode = WeightMode::SRB;
    Eigen::MatrixXd T;

    auto block(int row_deg, int col_deg) const { return T.block(row_deg * N, col_deg * N, N, N); }
};

inline BlockOperatorTkr build_Tkr(const MarkovAffineMap& m, int k, int r, WeightMode mode) {
    if (k < 0) throw std::invalid_argument("k must be nonnegative");
    if (r < 0) throw std::invalid_argument("r must be nonnegative");
    const int n = m.size();
    BlockOperatorTkr op{k, r, n, mode, Eigen::MatrixXd::Zero(n * (r + 1), n * (r + 1))};
    for (int j = 0; j < n; ++j) {
        // g_j(x) = alpha x + beta
        const double alpha = 1.0 / m.slope[j];
        const double beta = m.p[j] - m.q[j] / m.slope[j];
        const double w = weight(m.slope[j], k, mode);
        for (int i = 0; i < n; ++i) {
            if (!m.A(j, i)) continue;
            for (int L = 0; L <= r; ++L) {
                double binom = 1;
                for (int mm = 0; mm <= L; ++mm) {
                    if (mm > 0) binom = binom * (L - mm + 1) / mm;
                    op.T(mm * n + i, L * n + j) += w * binom * std::pow(alpha, mm) * std::pow(beta, L - mm);
                }
            }
        }
    }
    return op;
}

// Coefficient vector (index l*N + j) of the piecewise polynomial sum_l c_l x^l on every interval.
inline Eigen::VectorXd poly_coefficients(const std::vector<double>& c, int N, int r) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(N * (r + 1));
    for (int l = 0; l < static_cast<int>(c.size()) && l <= r; ++l) v.segment(l * N, N).setConstant(c[l]);
    return v;
}

inline double eval_piecewise_poly(const Eigen::VectorXd& v, const std::vector<double>& p, double x) {
    const int N = static_cast<int>(p.size()) - 1;
    const int j = locate_interval(p, x);
    const int r = static_cast<int>(v.size()) / N - 1;
    double s = 0;
    for (int l = r; l >= 0; --l) s = s * x + v[l * N + j];
    return s;
}

inline double essential_bound(const MarkovAffineMap& m, int k, int r) {
    return std::pow(m.lambda_min(), -(k + r - 1));
}

struct ResonanceSet {
    SpectrumReport spectrum;  // union over blocks, trusted = at or above the essential bound
    WeightMode mode = WeightMode::SRB;
    int k = 0, r = 0;
    double cross_check = 0;  // matched distance between the union and the eigenvalues of T_{k,r}
};

// Merge spectra, adding multiplicities of coincident eigenvalues.
inline SpectrumReport merge_spectra(const std::vector<SpectrumReport>& parts, double bound) {
    SpectrumReport out;
    out.essential_bound = bound;
    double scale = 0;
    for (const auto& s : parts) {
        out.dim += s.dim;
        out.cluster_tol = std::max(out.cluster_tol, s.cluster_tol);
        for (const auto& e : s.eigenvalues) scale = std::max(scale, std::abs(e.value));
    }
    const double tol = std::max(out.cluster_tol, 1e-8 * scale);
    for (const auto& s : parts)
        for (const auto& e : s.eigenvalues) {
            Eigenvalue* hit = nullptr;
            for (auto& o : out.eigenvalues)
                if (std::abs(o.value - e.value) <= tol) hit = &o;
            if (hit) {
                hit->alg += e.alg;
                hit->geo += e.geo;
                hit->jordan.insert(hit->jordan.end(), e.jordan.begin(), e.jordan.end());
                std::sort(hit->jordan.rbegin(), hit->jordan.rend());
                hit->jordan_analyzed = hit->jordan_analyzed && e.jordan_analyzed;
            } else {
                out.eigenvalues.push_back(e);
            }
        }
    for (auto& e : out.eigenvalues) e.trusted = std::abs(e.value) >= bound * (1 - 1e-9);
    sort_spectrum(out.eigenvalues);
    return out;
}

// Eigenvalues repeated by algebraic multiplicity.
inline std::vector<cplx> expanded(const SpectrumReport& s) {
    std::vector<cplx> out;
    for (const auto& e : s.eigenvalues) out.insert(out.end(), e.alg, e.value);
    return out;
}

// Worst distance under a greedy one-to-one matching of the two multisets (infinite on size mismatch).
inline double spectral_distance(const SpectrumReport& a, const SpectrumReport& b) {
    const auto x = expanded(a);
    auto y = expanded(b);
    if (x.size() != y.size()) return std::numeric_limits<double>::infinity();
    std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> pairs;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) pairs.push_back({std::abs(x[i] - y[j]), {i, j}});
    std::sort(pairs.begin(), pairs.end());
    std::vector<char> ux(x.size(), 0), uy(y.size(), 0);
    double worst = 0;
    std::size_t left = x.size();
    for (const auto& [d, ij] : pairs) {
        if (ux[ij.first] || uy[ij.second]) continue;
        ux[ij.first] = uy[ij.second] = 1;
        worst = std::max(worst, d);
        if (--left == 0) break;
    }
    return worst;
}

inline ResonanceSet resonance_set(const MarkovAffineMap& m, WeightMode mode, int r) {
    const int k = mode == WeightMode::SRB ? 1 : 0;
    const double bound = essential_bound(m, k, r);
    std::vector<SpectrumReport> parts;
    for (int l = 0; l <= r; ++l) parts.push_back(spectrum_with_multiplicity(build_Bk(m, k + l, mode), bound));
    ResonanceSet rs;
    rs.mode = mode;
    rs.k = k;
    rs.r = r;
    rs.spectrum = merge_spectra(parts, bound);
    const auto full = spectrum_with_multiplicity(build_Tkr(m, k, r, mode).T, bound);
    rs.cross_check = spectral_distance(rs.spectrum, full);
    return rs;
}

// Full-branch closed form xi_l = sum_j w_{k+l}(lambda_j).
inline std::vector<double> full_branch_resonances(const MarkovAffineMap& m, WeightMode mode, int r) {
    const int k = mode == WeightMode::SRB ? 1 : 0;
    std::vector<double> xi;
    for (int l = 0; l <= r; ++l) {
        double s = 0;
        for (double lam : m.slope) s += weight(lam, k + l, mode);
        xi.push_back(s);
    }
    return xi;
}

// Perron root of a nonnegative irreducible matrix by power iteration on B + I.
inline double perron_root(const Eigen::MatrixXd& B, Eigen::VectorXd* vec = nullptr) {
    const int n = static_cast<int>(B.rows());
    Eigen::MatrixXd S = B + Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / n;
    double rho = 0;
    for (int it = 0; it < 100000; ++it) {
        Eigen::VectorXd w = S * v;
        const double nr = w.sum();
        w /= nr;
        const double diff = (w - v).cwiseAbs().maxCoeff();
        v = w;
        if (std::abs(nr - rho) <= 1e-15 * nr && diff <= 1e-15) {
            rho = nr;
            break;
        }
        rho = nr;
    }
    if (vec) *vec = v;
    return rho - 1.0;
}

inline double topological_entropy(const MarkovAffineMap& m) {
    const Eigen::MatrixXd B0 = build_Bk(m, 0, WeightMode::MME);
    const double rho = perron_root(B0);
    double rmax = 0;
    for (const auto& z : eigenvalues(B0)) rmax = std::max(rmax, std::abs(z));
    if (std::abs(rho - rmax) > 1e-10 * std::max(1.0, rmax))
        throw NumericError("power iteration and eigensolver disagree on the spectral radius of B_0");
    return std::log(rho);
}

} // namespace reslab

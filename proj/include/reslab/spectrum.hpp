#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>
#include <lapacke.h>

#include "error.hpp"

namespace reslab {

using cplx = std::complex<double>;

inline std::vector<cplx> eigenvalues(const Eigen::MatrixXd& M) {
    const int n = static_cast<int>(M.rows());
    if (n == 0) return {};
    Eigen::MatrixXd A = M;
    std::vector<double> wr(n), wi(n);
    const int info = LAPACKE_dgeev(LAPACK_COL_MAJOR, 'N', 'N', n, A.data(), n, wr.data(), wi.data(), nullptr, 1,
                                   nullptr, 1);
    if (info != 0) throw NumericError("eigensolver did not converge (dgeev info " + std::to_string(info) + ")");
    std::vector<cplx> out(n);
    for (int i = 0; i < n; ++i) out[i] = {wr[i], wi[i]};
    return out;
}

inline std::vector<cplx> eigenvalues(const Eigen::MatrixXcd& M) {
    const int n = static_cast<int>(M.rows());
    if (n == 0) return {};
    Eigen::MatrixXcd A = M;
    std::vector<lapack_complex_double> w(n);
    const int info = LAPACKE_zgeev(LAPACK_COL_MAJOR, 'N', 'N', n, reinterpret_cast<lapack_complex_double*>(A.data()),
                                   n, w.data(), nullptr, 1, nullptr, 1);
    if (info != 0) throw NumericError("eigensolver did not converge (zgeev info " + std::to_string(info) + ")");
    std::vector<cplx> out(n);
    for (int i = 0; i < n; ++i) out[i] = reinterpret_cast<cplx*>(w.data())[i];
    return out;
}

// Eigenvalues with their condition numbers |y||x|/|y^H x| from left and right eigenvectors.
inline std::vector<double> condition_from_vectors(const Eigen::MatrixXcd& VL, const Eigen::MatrixXcd& VR) {
    std::vector<double> kappa(VR.cols());
    for (int j = 0; j < VR.cols(); ++j) {
        const double d = std::abs(VL.col(j).dot(VR.col(j)));
        kappa[j] = VL.col(j).norm() * VR.col(j).norm() / std::max(d, 1e-300);
    }
    return kappa;
}

inline std::vector<cplx> eigenvalues_with_condition(const Eigen::MatrixXd& M, std::vector<double>& kappa) {
    const int n = static_cast<int>(M.rows());
    if (n == 0) return {};
    Eigen::MatrixXd A = M, vl(n, n), vr(n, n);
    std::vector<double> wr(n), wi(n);
    const int info = LAPACKE_dgeev(LAPACK_COL_MAJOR, 'V', 'V', n, A.data(), n, wr.data(), wi.data(), vl.data(), n,
                                   vr.data(), n);
    if (info != 0) throw NumericError("eigensolver did not converge (dgeev info " + std::to_string(info) + ")");
    Eigen::MatrixXcd L(n, n), R(n, n);
    std::vector<cplx> out(n);
    for (int j = 0; j < n; ++j) {
        out[j] = {wr[j], wi[j]};
        if (wi[j] == 0) {
            L.col(j) = vl.col(j).cast<cplx>();
            R.col(j) = vr.col(j).cast<cplx>();
        } else if (wi[j] > 0 && j + 1 < n) {
            L.col(j) = vl.col(j).cast<cplx>() + cplx(0, 1) * vl.col(j + 1).cast<cplx>();
            R.col(j) = vr.col(j).cast<cplx>() + cplx(0, 1) * vr.col(j + 1).cast<cplx>();
            L.col(j + 1) = L.col(j).conjugate();
            R.col(j + 1) = R.col(j).conjugate();
        }
    }
    kappa = condition_from_vectors(L, R);
    return out;
}

inline std::vector<cplx> eigenvalues_with_condition(const Eigen::MatrixXcd& M, std::vector<double>& kappa) {
    const int n = static_cast<int>(M.rows());
    if (n == 0) return {};
    Eigen::MatrixXcd A = M, vl(n, n), vr(n, n);
    std::vector<cplx> w(n);
    const int info = LAPACKE_zgeev(LAPACK_COL_MAJOR, 'V', 'V', n, reinterpret_cast<lapack_complex_double*>(A.data()),
                                   n, reinterpret_cast<lapack_complex_double*>(w.data()),
                                   reinterpret_cast<lapack_complex_double*>(vl.data()), n,
                                   reinterpret_cast<lapack_complex_double*>(vr.data()), n);
    if (info != 0) throw NumericError("eigensolver did not converge (zgeev info " + std::to_string(info) + ")");
    kappa = condition_from_vectors(vl, vr);
    return w;
}

struct Eigenvalue {
    cplx value;
    int alg = 1;
    int geo = 1;
    std::vector<int> jordan{1};
    bool trusted = true;  // at or above the essential bound
    bool jordan_analyzed = false;
};

struct SpectrumReport {
    std::vector<Eigenvalue> eigenvalues;
    double cluster_tol = 0;
    double essential_bound = 0;
    int dim = 0;

    int total_multiplicity() const {
        int s = 0;
        for (const auto& e : eigenvalues) s += e.alg;
        return s;
    }
    std::vector<Eigenvalue> trusted() const {
        std::vector<Eigenvalue> out;
        for (const auto& e : eigenvalues)
            if (e.trusted) out.push_back(e);
        return out;
    }
};

// Deterministic output order: modulus descending, then argument ascending.
inline bool spectral_order(const cplx& a, const cplx& b) {
    const double ma = std::abs(a), mb = std::abs(b);
    if (ma != mb) return ma > mb;
    return std::arg(a) < std::arg(b);
}

inline void sort_spectrum(std::vector<Eigenvalue>& v) {
    std::stable_sort(v.begin(), v.end(),
                     [](const Eigenvalue& a, const Eigenvalue& b) { return spectral_order(a.value, b.value); });
}

struct SpectrumOptions {
    double cluster_rel_tol = 1e-8;
    double rank_rel_cutoff = 1e-10;
    double sensitivity_factor = 100;
    double max_split_rel = 1e-4;  // cap on the splitting radius of a defective eigenvalue
    int jordan_max_dim = 400;  // full rank analysis up to this size; beyond, only trusted multiple clusters
    bool analyze_jordan = true;
};

namespace detail {

template <class Mat>
int numerical_nullity(const Mat& P, double cutoff) {
    const int n = static_cast<int>(P.rows());
    if (n <= 400) {
        Eigen::JacobiSVD<Mat> svd(P);
        const auto& s = svd.singularValues();
        int null = 0;
        for (int i = 0; i < s.size(); ++i)
            if (s[i] <= cutoff) ++null;
        return null;
    }
    Eigen::ColPivHouseholderQR<Mat> qr(P);
    qr.setThreshold(cutoff / std::max(P.cwiseAbs().maxCoeff(), 1e-300));
    return n - static_cast<int>(qr.rank());
}

// Nullities of (M - xi I)^j for j = 1.. until stable or reaching alg.
template <class Mat>
std::vector<int> nullity_sequence(const Mat& M, cplx xi, int alg, double scale, double rel_cutoff) {
    const int n = static_cast<int>(M.rows());
    Eigen::MatrixXcd S = M.template cast<cplx>();
    S.diagonal().array() -= xi;
    Eigen::MatrixXcd P = S;
    std::vector<int> nul;
    for (int j = 1; j <= alg; ++j) {
        if (j > 1) P = P * S;
        const double cutoff = rel_cutoff * std::pow(std::max(scale, 1e-300), j) * std::max(1, n / 50);
        const int v = std::min(alg, numerical_nullity(P, cutoff));
        if (!nul.empty() && v <= nul.back()) break;
        nul.push_back(v);
        if (v >= alg) break;
    }
    return nul;
}

inline std::vector<int> jordan_from_nullities(const std::vector<int>& nul) {
    // b[j] = number of blocks of size >= j+1
    std::vector<int> b(nul.size());
    for (std::size_t j = 0; j < nul.size(); ++j) b[j] = nul[j] - (j ? nul[j - 1] : 0);
    std::vector<int> sizes;
    for (std::size_t j = 0; j < b.size(); ++j) {
        const int next = j + 1 < b.size() ? b[j + 1] : 0;
        for (int c = 0; c < b[j] - next; ++c) sizes.push_back(static_cast<int>(j) + 1);
    }
    std::sort(sizes.rbegin(), sizes.rend());
    return sizes;
}

} // namespace detail

template <class Mat>
SpectrumReport spectrum_with_multiplicity(const Mat& M, double essential_bound, const SpectrumOptions& opt = {}) {
    if (M.rows() != M.cols()) throw std::invalid_argument("spectrum of a non-square matrix");
    if (!M.allFinite()) throw NumericError("matrix has non-finite entries");
    SpectrumReport rep;
    rep.dim = static_cast<int>(M.rows());
    rep.essential_bound = essential_bound;
    const int n = rep.dim;
    const bool rank_ok = opt.analyze_jordan && n <= opt.jordan_max_dim;
    std::vector<double> kappa;
    const std::vector<cplx> ev = rank_ok ? eigenvalues_with_condition(M, kappa) : eigenvalues(M);
    const double scale = std::max(M.cwiseAbs().rowwise().sum().maxCoeff(), 1e-300);
    const double tol = opt.cluster_rel_tol * scale;
    rep.cluster_tol = tol;
    constexpr bool is_real = std::is_same_v<typename Mat::Scalar, double>;

    // single-linkage clustering at the base tolerance
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> root = [&](int i) { return parent[i] == i ? i : parent[i] = root(parent[i]); };
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return ev[a].real() != ev[b].real() ? ev[a].real() < ev[b].real() : ev[a].imag() < ev[b].imag();
    });
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n && ev[order[b]].real() - ev[order[a]].real() <= tol; ++b)
            if (std::abs(ev[order[a]] - ev[order[b]]) <= tol) parent[root(order[a])] = root(order[b]);

    std::vector<std::vector<int>> groups;
    {
        std::vector<int> idx(n, -1);
        for (int i = 0; i < n; ++i) {
            const int r = root(i);
            if (idx[r] < 0) {
                idx[r] = static_cast<int>(groups.size());
                groups.emplace_back();
            }
            groups[idx[r]].push_back(i);
        }
    }
    auto centroid = [&](const std::vector<int>& g) {
        cplx s = 0;
        for (int i : g) s += ev[i];
        return s / static_cast<double>(g.size());
    };

    // Defective eigenvalues split far beyond the base tolerance, by about kappa * eps * |M| each.
    if (rank_ok && n > 1) {
        const double u = std::numeric_limits<double>::epsilon() * scale;
        std::vector<double> rad(n);
        for (int a = 0; a < n; ++a) rad[a] = std::min(opt.sensitivity_factor * u * kappa[a], opt.max_split_rel * scale);
        for (int a = 0; a < n; ++a)
            for (int b = a + 1; b < n; ++b)
                if (std::abs(ev[a] - ev[b]) <= 2 * std::min(rad[a], rad[b])) parent[root(a)] = root(b);
        groups.clear();
        std::vector<int> idx(n, -1);
        for (int a = 0; a < n; ++a) {
            const int r = root(a);
            if (idx[r] < 0) {
                idx[r] = static_cast<int>(groups.size());
                groups.emplace_back();
            }
            groups[idx[r]].push_back(a);
        }
    }

    for (const auto& g : groups) {
        Eigenvalue e;
        e.value = centroid(g);
        e.alg = static_cast<int>(g.size());
        if (is_real && std::abs(e.value.imag()) <= tol) e.value.imag(0.0);
        e.trusted = std::abs(e.value) >= essential_bound * (1 - 1e-9);
        e.geo = e.alg;
        e.jordan.assign(e.alg, 1);
        const bool analyze = opt.analyze_jordan && (rank_ok || (e.trusted && e.alg > 1 && n <= 4096));
        if (analyze && e.alg > 1) {
            auto nul = detail::nullity_sequence(M, e.value, e.alg, scale, opt.rank_rel_cutoff);
            if (!nul.empty() && nul.back() == e.alg) {
                e.jordan = detail::jordan_from_nullities(nul);
                e.geo = nul.front();
                e.jordan_analyzed = true;
            }
        } else if (e.alg == 1) {
            e.jordan_analyzed = true;
        }
        rep.eigenvalues.push_back(e);
    }

    if constexpr (is_real) {
        // make conjugate partners exact mirror images
        for (auto& e : rep.eigenvalues) {
            if (e.value.imag() <= 0) continue;
            Eigenvalue* best = nullptr;
            for (auto& f : rep.eigenvalues)
                if (f.value.imag() < 0 && f.alg == e.alg &&
                    (!best || std::abs(f.value - std::conj(e.value)) < std::abs(best->value - std::conj(e.value))))
                    best = &f;
            if (best && std::abs(best->value - std::conj(e.value)) <= 1e3 * tol + 1e-12 * std::abs(e.value)) {
                const cplx avg = 0.5 * (e.value + std::conj(best->value));
                e.value = avg;
                best->value = std::conj(avg);
            }
        }
    }
    sort_spectrum(rep.eigenvalues);
    return rep;
}

inline nlohmann::json to_json(const SpectrumReport& r) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : r.eigenvalues)
        arr.push_back({{"re", e.value.real()},
                       {"im", e.value.imag()},
                       {"abs", std::abs(e.value)},
                       {"alg", e.alg},
                       {"geo", e.geo},
                       {"jordan", e.jordan},
                       {"jordan_analyzed", e.jordan_analyzed},
                       {"trusted", e.trusted}});
    return {{"eigenvalues", arr},
            {"essential_bound", r.essential_bound},
            {"cluster_tol", r.cluster_tol},
            {"dim", r.dim}};
}

} // namespace reslab

#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "affine_resonances.hpp"
#include "expr.hpp"
#include "piecewise.hpp"

namespace reslab {

// ---------------- invariant density and conformal measure ----------------

// Affine Markov maps: h is piecewise constant, nu is given by its moments nu(x^l 1_{I_j}).
struct AffineDensity {
    WeightMode mode = WeightMode::SRB;
    int k = 1;
    double gamma = 1;
    Eigen::VectorXd h;        // per-interval values, nu(h) = 1
    Eigen::VectorXd moments;  // index l*N + j, l <= degree
    int degree = 0;

    int size() const { return static_cast<int>(h.size()); }
    // nu(g * psi) for piecewise polynomials g and psi (coefficients l*N + j)
    double pair(const Eigen::VectorXd& g, const Eigen::VectorXd& psi) const {
        const int N = size();
        const int rg = static_cast<int>(g.size()) / N - 1, rq = static_cast<int>(psi.size()) / N - 1;
        if (rg + rq > degree) throw std::invalid_argument("moment degree too small");
        double s = 0;
        for (int l = 0; l <= rg; ++l)
            for (int q = 0; q <= rq; ++q)
                for (int j = 0; j < N; ++j) s += g[l * N + j] * psi[q * N + j] * moments[(l + q) * N + j];
        return s;
    }
    // mu(psi) = nu(h psi)
    double mean(const Eigen::VectorXd& psi) const { return pair(h, psi); }
};

// Eigenvector of M for eigenvalue gamma from the smallest singular vector of M - gamma I.
inline Eigen::VectorXd null_vector(const Eigen::MatrixXd& M, double gamma) {
    Eigen::MatrixXd S = M - gamma * Eigen::MatrixXd::Identity(M.rows(), M.cols());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(S, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const int n = static_cast<int>(sv.size());
    if (n > 1 && sv[n - 2] <= 1e-9 * std::max(1.0, sv[0]))
        throw InputError("leading eigenvalue is not simple (map is not transitive)");
    return svd.matrixV().col(n - 1);
}

inline AffineDensity invariant_density(const MarkovAffineMap& m, WeightMode mode, int degree = 0) {
    AffineDensity d;
    d.mode = mode;
    d.k = mode == WeightMode::SRB ? 1 : 0;
    d.degree = degree;
    const int N = m.size();
    const Eigen::MatrixXd B = build_Bk(m, d.k, mode);
    d.gamma = mode == WeightMode::SRB ? 1.0 : perron_root(B);
    const auto rep = spectrum_with_multiplicity(B, 0.0);
    int on_circle = 0;
    for (const auto& e : rep.eigenvalues)
        if (std::abs(std::abs(e.value) - d.gamma) <= 1e-9 * d.gamma) on_circle += e.alg;
    if (on_circle != 1) throw InputError("leading eigenvalue is not simple (map is not transitive)");

    Eigen::VectorXd u = null_vector(B, d.gamma);
    if (u.sum() < 0) u = -u;
    const Eigen::MatrixXd T = build_Tkr(m, d.k, degree, mode).T;
    Eigen::VectorXd ell = null_vector(T.transpose(), d.gamma);
    const double mass = ell.head(N).sum();
    if (mass == 0) throw NumericError("conformal measure has zero mass");
    ell /= mass;
    d.moments = ell;
    // normalize nu(h) = 1
    double nh = 0;
    for (int j = 0; j < N; ++j) nh += u[j] * ell[j];
    d.h = u / nh;
    return d;
}

// Grid representation: h and the functional nu(v) = nu_w . v on the grid nodes.
struct GridDensity {
    WeightMode mode = WeightMode::SRB;
    int k = 1;
    double gamma = 1;
    PanelGrid grid;
    Eigen::SparseMatrix<double, Eigen::RowMajor> L;
    Eigen::VectorXd h;     // node values, nu(h) = 1
    Eigen::VectorXd nu_w;  // nu(v) ~ nu_w . v
    int iterations = 0;

    double nu(const Eigen::VectorXd& v) const { return nu_w.dot(v); }
    double mean(const std::function<double(double)>& f) const { return nu(h.cwiseProduct(grid.sample(f))); }
};

inline GridDensity invariant_density(const PiecewiseMap& map, WeightMode mode, const GridSpec& spec,
                                     int max_iter = 10000, double tol = 1e-13) {
    GridDensity d;
    d.mode = mode;
    d.k = mode == WeightMode::SRB ? 1 : 0;
    d.grid = PanelGrid(map.p, spec);
    d.L = assemble_transfer(map, d.grid, d.k, mode);
    const Eigen::VectorXd w(Eigen::Map<const Eigen::VectorXd>(d.grid.weights().data(), d.grid.size()));
    const Eigen::SparseMatrix<double, Eigen::RowMajor> Lt = d.L.transpose();

    Eigen::VectorXd h = Eigen::VectorXd::Ones(d.grid.size());
    Eigen::VectorXd nu = w;
    double gamma = 0;
    bool done = false;
    for (int it = 1; it <= max_iter; ++it) {
        Eigen::VectorXd h2 = d.L * h;
        Eigen::VectorXd nu2 = Lt * nu;
        const double g = w.dot(h2) / w.dot(h);
        h2 /= w.dot(h2);
        nu2 /= nu2.sum();
        const double dh = (h2 - h).cwiseAbs().maxCoeff() / std::max(h2.cwiseAbs().maxCoeff(), 1e-300);
        const double dn = (nu2 - nu).cwiseAbs().maxCoeff() / std::max(nu2.cwiseAbs().maxCoeff(), 1e-300);
        h = h2;
        nu = nu2;
        d.iterations = it;
        if (std::abs(g - gamma) <= tol * std::abs(g) && dh <= tol * 10 && dn <= tol * 10) {
            gamma = g;
            done = true;
            break;
        }
        gamma = g;
    }
    if (!done) throw NumericError("power iteration for the invariant density did not converge");
    if (h.minCoeff() < -1e-8 * h.cwiseAbs().maxCoeff())
        throw NumericError("invariant density is not positive on the grid");
    d.gamma = gamma;
    // nu(1) = 1, nu(h) = 1
    d.nu_w = nu / nu.sum();
    d.h = h / d.nu_w.dot(h);
    return d;
}

// ---------------- decay fitting ----------------

struct FitResult {
    double rho = std::numeric_limits<double>::quiet_NaN();
    int k = 0;
    double residual = 0;
    int n_lo = 0, n_hi = 0;
    int usable = 0;
};

// Fit |C(n)| ~ c rho^n n^k over the tail half of the usable window.
inline FitResult fit_decay(const std::vector<double>& absC, double floor_factor = 1e3) {
    FitResult fr;
    if (absC.empty()) throw NumericError("empty correlation sequence");
    const double floor = floor_factor * std::numeric_limits<double>::epsilon() * std::abs(absC[0]);
    int last = -1;
    for (int n = 0; n < static_cast<int>(absC.size()); ++n)
        if (std::abs(absC[n]) > floor && std::isfinite(absC[n])) last = n;
    if (last < 0) throw NumericError("all correlation values are below the noise floor");
    fr.usable = last + 1;
    if (fr.usable < 8) throw NumericError("fewer than 8 usable correlation values above the noise floor");
    fr.n_hi = last;
    fr.n_lo = std::max(1, last / 2);
    if (fr.n_hi - fr.n_lo + 1 < 4) fr.n_lo = std::max(1, fr.n_hi - 3);
    // local envelope smooths sign changes of oscillating sequences
    auto env = [&](int n) {
        double v = 0;
        for (int m = n; m <= std::min(last, n + 2); ++m) v = std::max(v, std::abs(absC[m]));
        return v;
    };
    double best_res[3];
    double best_rho[3];
    for (int k = 0; k <= 2; ++k) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int cnt = 0;
        std::vector<std::pair<double, double>> pts;
        for (int n = fr.n_lo; n <= fr.n_hi; ++n) {
            const double e = env(n);
            if (e <= floor) continue;
            const double y = std::log(e) - k * std::log(static_cast<double>(n));
            pts.emplace_back(n, y);
            sx += n;
            sy += y;
            sxx += static_cast<double>(n) * n;
            sxy += n * y;
            ++cnt;
        }
        if (cnt < 2) throw NumericError("not enough points in the fitting window");
        const double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
        const double icpt = (sy - slope * sx) / cnt;
        double res = 0;
        for (auto [x, y] : pts) res += std::pow(y - icpt - slope * x, 2);
        best_res[k] = std::sqrt(res / cnt);
        best_rho[k] = std::exp(slope);
    }
    double m = std::min({best_res[0], best_res[1], best_res[2]});
    int k = 0;
    while (k < 2 && best_res[k] > 1.5 * m + 1e-10) ++k;
    fr.k = k;
    fr.rho = best_rho[k];
    fr.residual = best_res[k];
    return fr;
}

inline FitResult fit_decay(const std::vector<cplx>& C, double floor_factor = 1e3) {
    std::vector<double> a;
    for (const auto& c : C) a.push_back(std::abs(c));
    return fit_decay(a, floor_factor);
}

// ---------------- correlation traces ----------------

struct CorrelationTrace {
    std::string phi, psi;
    std::string measure;  // srb | mme | haar
    std::string path;     // exact | quadrature | torus
    std::vector<cplx> C;         // int phi * psi o f^n dmu
    std::vector<cplx> centered;  // C(n) - mu(phi) mu(psi)
    cplx mean_phi = 0, mean_psi = 0;
    std::optional<FitResult> fit;
    double predicted_ratio = std::numeric_limits<double>::quiet_NaN();  // |xi_2| / gamma
    int predicted_jordan = 1;

    double predicted_bound(int n) const {
        if (!std::isfinite(predicted_ratio) || centered.empty()) return std::numeric_limits<double>::quiet_NaN();
        return std::abs(centered[0]) * std::pow(predicted_ratio, n) * std::pow(std::max(1, n), predicted_jordan - 1);
    }
};

inline constexpr int max_correlation_n = 60;
inline constexpr int max_observable_degree = 8;

// Largest eigenvalue modulus below gamma divided by gamma, and its Jordan size, on the
// invariant subspace of piecewise polynomials of degree <= r.
inline std::pair<double, int> predicted_decay(const MarkovAffineMap& m, WeightMode mode, int r) {
    const int k = mode == WeightMode::SRB ? 1 : 0;
    const auto rep = spectrum_with_multiplicity(build_Tkr(m, k, r, mode).T, 0.0);
    const auto& ev = rep.eigenvalues;
    if (ev.empty()) return {std::numeric_limits<double>::quiet_NaN(), 1};
    const double gamma = std::abs(ev[0].value);
    for (std::size_t i = 1; i < ev.size(); ++i)
        if (std::abs(ev[i].value) < gamma * (1 - 1e-9)) {
            if (std::abs(ev[i].value) <= 1e-12 * gamma) break;
            int J = 1;
            for (std::size_t j = i; j < ev.size(); ++j)
                if (std::abs(std::abs(ev[j].value) - std::abs(ev[i].value)) <= 1e-9) J = std::max(J, ev[j].jordan.front());
            return {std::abs(ev[i].value) / gamma, J};
        }
    return {std::numeric_limits<double>::quiet_NaN(), 1};
}

// Path (a): exact action of T_{k,r} on piecewise polynomial coefficient vectors.
// phi is given as coefficients (l*N + j) of degree rp, psi as a polynomial.
inline CorrelationTrace correlation_exact(const MarkovAffineMap& m, const Eigen::VectorXd& phi, const Eigen::VectorXd& psi,
                                          WeightMode mode, int n_max) {
    if (n_max < 0 || n_max > max_correlation_n) throw std::invalid_argument("n_max must be in [0, 60]");
    const int N = m.size();
    const int rp = static_cast<int>(phi.size()) / N - 1, rq = static_cast<int>(psi.size()) / N - 1;
    if (rp > max_observable_degree || rq > max_observable_degree)
        throw InputError("observable degree exceeds 8");
    const auto d = invariant_density(m, mode, rp + rq);
    const auto T = build_Tkr(m, d.k, rp, mode).T;

    Eigen::VectorXd hphi(phi.size());
    for (int l = 0; l <= rp; ++l)
        for (int j = 0; j < N; ++j) hphi[l * N + j] = d.h[j] * phi[l * N + j];
    Eigen::VectorXd hone = Eigen::VectorXd::Zero(phi.size());
    hone.head(N) = d.h;

    CorrelationTrace tr;
    tr.measure = mode == WeightMode::SRB ? "srb" : "mme";
    tr.path = "exact";
    tr.mean_phi = d.mean(phi);
    tr.mean_psi = d.mean(psi);
    Eigen::VectorXd g = hphi;
    Eigen::VectorXd gc = hphi - tr.mean_phi.real() * hone;
    for (int n = 0; n <= n_max; ++n) {
        if (n > 0) {
            g = T * g / d.gamma;
            gc = T * gc / d.gamma;
        }
        tr.C.emplace_back(d.pair(g, psi));
        tr.centered.emplace_back(d.pair(gc, psi));
    }
    std::tie(tr.predicted_ratio, tr.predicted_jordan) = predicted_decay(m, mode, rp);
    return tr;
}

inline std::vector<double> polynomial_of(const Expr& e, const std::string& name) {
    auto c = expr::to_polynomial(e, max_observable_degree);
    if (!c) throw InputError("observable " + name + " must be a polynomial of degree <= 8 for the exact path");
    if (c->empty()) c->push_back(0.0);
    return *c;
}

inline CorrelationTrace correlation_sequence(const MarkovAffineMap& m, const Expr& phi, const Expr& psi, WeightMode mode,
                                             int n_max) {
    const int N = m.size();
    const auto cp = polynomial_of(phi, "phi"), cq = polynomial_of(psi, "psi");
    auto tr = correlation_exact(m, poly_coefficients(cp, N, static_cast<int>(cp.size()) - 1),
                                poly_coefficients(cq, N, static_cast<int>(cq.size()) - 1), mode, n_max);
    tr.phi = expr::to_string(phi);
    tr.psi = expr::to_string(psi);
    return tr;
}

// Path (b): grid transfer via branch inverses with quadrature pairing.
inline CorrelationTrace correlation_quadrature(const GridDensity& d, const std::function<double(double)>& phi,
                                               const std::function<double(double)>& psi, int n_max) {
    if (n_max < 0 || n_max > max_correlation_n) throw std::invalid_argument("n_max must be in [0, 60]");
    const Eigen::VectorXd ph = d.grid.sample(phi), ps = d.grid.sample(psi);
    CorrelationTrace tr;
    tr.measure = d.mode == WeightMode::SRB ? "srb" : "mme";
    tr.path = "quadrature";
    Eigen::VectorXd g = d.h.cwiseProduct(ph);
    tr.mean_phi = d.nu(g);
    tr.mean_psi = d.nu(d.h.cwiseProduct(ps));
    Eigen::VectorXd gc = g - tr.mean_phi.real() * d.h;
    for (int n = 0; n <= n_max; ++n) {
        if (n > 0) {
            g = d.L * g / d.gamma;
            gc = d.L * gc / d.gamma;
        }
        tr.C.emplace_back(d.nu(g.cwiseProduct(ps)));
        tr.centered.emplace_back(d.nu(gc.cwiseProduct(ps)));
    }
    return tr;
}

inline GridSpec default_correlation_grid(bool affine) {
    GridSpec s;
    s.kind = NodeKind::Legendre;
    s.order = affine ? 20 : 24;
    s.panels_per_interval = affine ? 1 : 8;
    return s;
}

inline CorrelationTrace correlation_sequence(const PiecewiseMap& map, const Expr& phi, const Expr& psi, WeightMode mode,
                                             int n_max, const GridSpec& spec) {
    const auto d = invariant_density(map, mode, spec);
    auto tr = correlation_quadrature(
        d, [&](double x) { return expr::eval(phi, x); }, [&](double x) { return expr::eval(psi, x); }, n_max);
    tr.phi = expr::to_string(phi);
    tr.psi = expr::to_string(psi);
    return tr;
}

// ---------------- toral automorphisms ----------------

struct TorusAutomorphism {
    long long a = 2, b = 1, c = 1, d = 1;  // [[a, b], [c, d]]

    long long det() const { return a * d - b * c; }
    long long trace() const { return a + d; }
    bool hyperbolic() const {
        // no eigenvalue on the unit circle
        if (det() == 1) return std::abs(trace()) > 2;
        if (det() == -1) return trace() != 0;
        return false;
    }
};

using Freq = std::pair<long long, long long>;
using FourierPoly = std::map<Freq, cplx>;

struct TorusResult {
    CorrelationTrace trace;
    int n0 = 0;  // C(n) = 0 for every n >= n0
};

// C(n) = int phi * psi o T^n = sum_k psi_k phi_{-(T^t)^n k}, frequency 0 dropped.
inline TorusResult torus_correlation(const TorusAutomorphism& T, const FourierPoly& phi, const FourierPoly& psi,
                                     int n_max) {
    if (std::llabs(T.det()) != 1) throw InputError("torus matrix must have determinant +-1");
    if (!T.hyperbolic()) throw InputError("torus matrix is not hyperbolic");
    if (n_max < 0) throw std::invalid_argument("n_max must be nonnegative");
    long long R = 0;
    for (const auto& [k, v] : phi) R = std::max({R, std::llabs(k.first), std::llabs(k.second)});

    TorusResult out;
    out.trace.measure = "haar";
    out.trace.path = "torus";
    out.trace.C.assign(n_max + 1, 0.0);
    int last_hit = -1;
    const __int128 escape = static_cast<__int128>(1e30);
    for (const auto& [k, v] : psi) {
        if (k.first == 0 && k.second == 0) continue;
        __int128 x = k.first, y = k.second;
        int grown = 0;
        for (int n = 0;; ++n) {
            const __int128 ax = x < 0 ? -x : x, ay = y < 0 ? -y : y;
            if (ax <= R && ay <= R) {
                auto it = phi.find({static_cast<long long>(-x), static_cast<long long>(-y)});
                if (it != phi.end() && (it->first.first != 0 || it->first.second != 0)) {
                    if (n <= n_max) out.trace.C[n] += v * it->second;
                    last_hit = std::max(last_hit, n);
                }
            }
            // beyond the escape radius the orbit only grows
            if (ax > escape || ay > escape) break;
            if (ax > R || ay > R) ++grown;
            if (grown > 200 && n > n_max) break;
            const __int128 nx = T.a * x + T.c * y, ny = T.b * x + T.d * y;
            x = nx;
            y = ny;
        }
    }
    out.n0 = last_hit + 1;
    out.trace.centered = out.trace.C;
    return out;
}

} // namespace reslab

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>

#include "map_model.hpp"
#include "parallel.hpp"
#include "piecewise.hpp"
#include "quadrature.hpp"
#include "spectrum.hpp"

// Transfer operators of smooth full-branch maps, gap parameters, exclusion regions,
// the function Xi(z), discretized spectra and the finite-rank resolvent scan.

namespace reslab {

// ---------------- gap parameters ----------------

struct GapParams {
    int N = 0;
    double lambda = 0;    // min f'
    double Lambda = 0;    // max f'
    double Df_L1 = 0, Df_inf = 0, Dfp_L1 = 0;
    double tau = 0;       // 1/lambda + |D_f|_1
    double mu_star = 0;   // 1/f'(1)
    double Delta = 0;     // 1/f'(1) - 1/f'(0)
    double Gamma = 0;     // 1 - sum_i 1/f'(p_i)
    double mu2 = std::numeric_limits<double>::quiet_NaN();  // ESTIMATED
    bool concave_class = false;  // D_f >= 0, not identically 0, f' continuous at knots
    std::string class_detail;

    double essential_bound() const { return mu_star * mu_star; }
};

inline GapParams gap_params(const SmoothFullBranchMap& m) {
    GapParams g;
    g.N = m.size();
    g.lambda = std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    bool nonzero = false;
    for (int j = 0; j < m.size(); ++j) {
        const double a = m.p[j], b = m.p[j + 1];
        for (double x : branch_sample(a, b)) {
            const double d = m.fprime(j, x);
            g.lambda = std::min(g.lambda, d);
            g.Lambda = std::max(g.Lambda, d);
            const double D = m.distortion(j, x);
            g.Df_inf = std::max(g.Df_inf, std::abs(D));
            dmin = std::min(dmin, D);
            if (D != 0) nonzero = true;
        }
        const auto& br = m.branches[j];
        g.Df_L1 += integrate([&](double x) { return std::abs(eval_inward(br.D, x, a, b)); }, a, b, 1e-14);
        g.Dfp_L1 += integrate([&](double x) { return std::abs(eval_inward(br.Dp, x, a, b)); }, a, b, 1e-12);
    }
    const double f1 = m.fprime(m.size() - 1, m.p.back()), f0 = m.fprime(0, m.p.front());
    g.mu_star = 1.0 / f1;
    g.Delta = 1.0 / f1 - 1.0 / f0;
    g.Gamma = 1.0;
    for (int j = 0; j < m.size(); ++j) g.Gamma -= 1.0 / m.fprime(j, m.p[j]);

    double jump = 0;
    for (int j = 1; j < m.size(); ++j) jump = std::max(jump, std::abs(m.fprime(j - 1, m.p[j]) - m.fprime(j, m.p[j])));
    g.concave_class = dmin >= 0 && nonzero && jump <= 1e-8;
    if (dmin < 0) g.class_detail = "distortion takes negative values";
    else if (!nonzero) g.class_detail = "distortion vanishes identically";
    else if (jump > 1e-8) g.class_detail = "f' is discontinuous at a knot";
    // for the concave class the L1 norm of D_f telescopes to Delta
    g.tau = g.concave_class ? 2.0 / f1 - 1.0 / f0 : 1.0 / g.lambda + g.Df_L1;
    return g;
}

// ---------------- exclusion regions ----------------

struct RegionSet {
    GapParams p;

    bool in_A0(cplx z) const { return z.imag() == 0 && std::isfinite(p.mu2) && z.real() > p.mu2 && z.real() < 1; }
    bool in_A1(cplx z) const {
        const double a = z.real(), b = z.imag(), ms = p.mu_star, D = p.Delta;
        if (!(a > ms)) return false;
        const double c = 1 + p.Gamma / a;
        const double bound = (a - ms) * D / (2 * c) * (std::sqrt(1 + 4 * c * c * (a - ms) * (a - ms) / (D * D)) - 1);
        return b * b < bound;
    }
    bool in_A2(cplx z) const {
        const double a = z.real(), b = z.imag(), ms = p.mu_star, D = p.Delta;
        if (!(a < -ms)) return false;
        const double x = std::abs(a);
        const double bound = (x - ms) * (x - ms) * (a * a - ms * ms - D * x) / (a * a - ms * ms + D * x);
        return b * b < bound;
    }
    double A3_radius2() const {
        const double ms = p.mu_star, D = p.Delta;
        return ms * ms + ms * (D + std::sqrt(4 * ms * ms + D * D)) / 2;
    }
    bool in_A3(cplx z) const { return z.real() >= 0 && std::norm(z - p.mu_star) > A3_radius2(); }
    bool in_A4(cplx z) const {
        const double a = z.real(), b = z.imag(), ms = p.mu_star;
        if (!(a < 0)) return false;
        return b * b > ms * p.Delta + ms * ms + 2 * std::abs(a) * ms - a * a;
    }
    std::array<bool, 5> membership(cplx z) const { return {in_A0(z), in_A1(z), in_A2(z), in_A3(z), in_A4(z)}; }
    bool in_any(cplx z) const {
        for (bool b : membership(z))
            if (b) return true;
        return false;
    }
    // |b| where the boundaries of A_3 and A_4 cross the imaginary axis
    double A3_intercept() const { return std::sqrt(A3_radius2() - p.mu_star * p.mu_star); }
    double A4_intercept() const { return std::sqrt(p.mu_star * p.Delta + p.mu_star * p.mu_star); }
};

inline RegionSet exclusion_regions(const GapParams& p) {
    if (!p.concave_class)
        throw InputError("exclusion regions need D_f >= 0, D_f not identically 0 and f' continuous at the knots (" +
                         p.class_detail + ")");
    return RegionSet{p};
}

struct Polyline {
    std::string region;
    std::vector<std::pair<double, double>> pts;
};

// Boundary curves for plotting, clipped to the square [-window, window]^2.
inline std::vector<Polyline> region_boundaries(const RegionSet& R, int samples, double window = 1.1) {
    if (samples < 2) throw std::invalid_argument("need at least 2 samples per boundary");
    std::vector<Polyline> out;
    const double ms = R.p.mu_star, D = R.p.Delta;
    auto graph = [&](const std::string& name, double a0, double a1, auto&& b2) {
        Polyline up{name + "_upper", {}}, lo{name + "_lower", {}};
        for (int s = 0; s < samples; ++s) {
            const double a = a0 + (a1 - a0) * s / (samples - 1);
            const double v = b2(a);
            if (!std::isfinite(v) || v < 0) continue;
            const double b = std::min(std::sqrt(v), window);
            up.pts.emplace_back(a, b);
            lo.pts.emplace_back(a, -b);
        }
        out.push_back(up);
        out.push_back(lo);
    };
    if (std::isfinite(R.p.mu2)) out.push_back({"A0", {{R.p.mu2, 0.0}, {1.0, 0.0}}});
    graph("A1", ms + 1e-12, window, [&](double a) {
        const double c = 1 + R.p.Gamma / a;
        return (a - ms) * D / (2 * c) * (std::sqrt(1 + 4 * c * c * (a - ms) * (a - ms) / (D * D)) - 1);
    });
    graph("A2", -window, -ms - 1e-12, [&](double a) {
        const double x = std::abs(a);
        return (x - ms) * (x - ms) * (a * a - ms * ms - D * x) / (a * a - ms * ms + D * x);
    });
    {
        Polyline arc{"A3", {}};
        const double r = std::sqrt(R.A3_radius2());
        const double th = std::acos(std::clamp(-ms / r, -1.0, 1.0));
        for (int s = 0; s < samples; ++s) {
            const double t = -th + 2 * th * s / (samples - 1);
            arc.pts.emplace_back(ms + r * std::cos(t), r * std::sin(t));
        }
        out.push_back(arc);
    }
    graph("A4", -window, -1e-12, [&](double a) { return ms * D + ms * ms + 2 * std::abs(a) * ms - a * a; });
    auto circle = [&](const std::string& name, double r) {
        Polyline c{name, {}};
        for (int s = 0; s < samples; ++s) {
            const double t = 2 * M_PI * s / (samples - 1);
            c.pts.emplace_back(r * std::cos(t), r * std::sin(t));
        }
        out.push_back(c);
    };
    circle("essential", R.p.essential_bound());
    circle("mu_star", ms);
    circle("tau", R.p.tau);
    circle("unit", 1.0);
    return out;
}

// ---------------- grid operators ----------------

enum class OperatorTag { L0, L1, L2, L3, Star, Plus, Compact };

inline std::string to_string(OperatorTag t) {
    switch (t) {
    case OperatorTag::L0: return "L0";
    case OperatorTag::L1: return "L1";
    case OperatorTag::L2: return "L2";
    case OperatorTag::L3: return "L3";
    case OperatorTag::Star: return "star";
    case OperatorTag::Plus: return "plus";
    case OperatorTag::Compact: return "compact";
    }
    return "?";
}

inline OperatorTag parse_operator(const std::string& s) {
    for (auto t : {OperatorTag::L0, OperatorTag::L1, OperatorTag::L2, OperatorTag::L3, OperatorTag::Star,
                   OperatorTag::Plus, OperatorTag::Compact})
        if (to_string(t) == s) return t;
    throw InputError("unknown operator '" + s + "' (expected L0, L1, L2, L3, star, plus or compact)");
}


struct SmoothDiscretization {
    PiecewiseMap map;
    PanelGrid grid;
    std::array<SparseRM, 4> L;  // L_0 .. L_3, weights 1/|f'| f'^{-(k-1)}
    SparseRM L1D;               // h -> L_1(D_f h)
    Eigen::VectorXd w;          // quadrature weights
    Eigen::VectorXd w_phi;      // g -> int (1-y) g(y) dy
    Eigen::VectorXd L1Df;       // L_1 D_f on the nodes
    double self_check = 0;

    int size() const { return grid.size(); }
    Eigen::VectorXd psi(const Eigen::VectorXd& g) const { return grid.cumulative(g); }
    Eigen::VectorXd phi(const Eigen::VectorXd& g) const {
        return grid.cumulative(g) - Eigen::VectorXd::Constant(size(), w_phi.dot(g));
    }
    double integral(const Eigen::VectorXd& g) const { return w.dot(g); }

    Eigen::VectorXd apply(OperatorTag t, const Eigen::VectorXd& g) const {
        switch (t) {
        case OperatorTag::L0: return L[0] * g;
        case OperatorTag::L1: return L[1] * g;
        case OperatorTag::L2: return L[2] * g;
        case OperatorTag::L3: return L[3] * g;
        case OperatorTag::Plus: return L[2] * g + L1D * psi(g);
        case OperatorTag::Star: return L[2] * g + L1D * phi(g);
        case OperatorTag::Compact: return L1D * phi(g);
        }
        return {};
    }

    Eigen::MatrixXd matrix(OperatorTag t) const {
        switch (t) {
        case OperatorTag::L0: return Eigen::MatrixXd(L[0]);
        case OperatorTag::L1: return Eigen::MatrixXd(L[1]);
        case OperatorTag::L2: return Eigen::MatrixXd(L[2]);
        case OperatorTag::L3: return Eigen::MatrixXd(L[3]);
        default: break;
        }
        const Eigen::MatrixXd C = grid.cumulative_matrix();
        Eigen::MatrixXd K = L1D * C;
        if (t != OperatorTag::Plus) K -= L1Df * w_phi.transpose();
        if (t == OperatorTag::Compact) return K;
        return Eigen::MatrixXd(L[2]) + K;
    }
};

inline double conservation_error(const SmoothDiscretization& d) {
    double err = 0;
    for (auto f : {+[](double) { return 1.0; }, +[](double x) { return x * x - 0.3; },
                   +[](double x) { return std::sin(7 * x) + 0.5; }}) {
        const Eigen::VectorXd g = d.grid.sample(f);
        const double denom = std::max(1.0, d.grid.integrate(g.cwiseAbs()));
        err = std::max(err, std::abs(d.integral(d.L[1] * g) - d.integral(g)) / denom);
    }
    return err;
}

// Assemble on the given grid; panels are doubled until int L_1 g = int g holds to check_tol.
inline SmoothDiscretization discretize(const PiecewiseMap& map, GridSpec spec, double check_tol = 1e-11,
                                       int max_refine = 4) {
    for (int attempt = 0;; ++attempt) {
        SmoothDiscretization d;
        d.map = map;
        d.grid = PanelGrid(map.p, spec);
        for (int k = 0; k <= 3; ++k) d.L[k] = assemble_transfer(map, d.grid, k, WeightMode::SRB);
        d.L1D = assemble_transfer(map, d.grid, 1, WeightMode::SRB, map.distortion);
        d.w = Eigen::Map<const Eigen::VectorXd>(d.grid.weights().data(), d.grid.size());
        d.w_phi = d.w.cwiseProduct((1.0 - Eigen::Map<const Eigen::ArrayXd>(d.grid.nodes().data(), d.grid.size())).matrix());
        d.L1Df = d.L1D * Eigen::VectorXd::Ones(d.grid.size());
        d.self_check = conservation_error(d);
        if (d.self_check <= check_tol) return d;
        if (attempt >= max_refine)
            throw NumericError("grid too coarse: quadrature self-check error " + expr::format_number(d.self_check));
        spec.panels_per_interval *= 2;
    }
}

inline GridSpec chebyshev_layout(const PiecewiseMap& map, int size, int order = 16) {
    if (size < 1 || size > 4096) throw std::invalid_argument("basis size must be in [1, 4096]");
    GridSpec s;
    s.kind = NodeKind::Chebyshev;
    s.order = std::min(order, std::max(2, size / map.size()));
    s.panels_per_interval = std::max(1, static_cast<int>(std::lround(static_cast<double>(size) / (s.order * map.size()))));
    return s;
}

// ---------------- Ulam projection ----------------

// M(j,i) = |I_j|^{-1} int_{I_i cap f^{-1} I_j} |f'|^{1-k} on `cells` uniform cells.
inline Eigen::MatrixXd ulam_matrix(const PiecewiseMap& map, int cells, int k) {
    if (cells < 1 || cells > 4096) throw std::invalid_argument("basis size must be in [1, 4096]");
    const double h = 1.0 / cells;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(cells, cells);
    const Rule& gl = cached_gauss_legendre(8);
    const int N = map.size();
    for (int b = 0; b < N; ++b) {
        // image of branch b as a union of partition intervals
        double lo = 2, hi = -1;
        for (int i = 0; i < N; ++i)
            if (map.adj(b, i)) {
                lo = std::min(lo, map.p[i]);
                hi = std::max(hi, map.p[i + 1]);
            }
        if (hi < lo) continue;
        for (int j = 0; j < cells; ++j) {
            const double u = std::max(lo, j * h), v = std::min(hi, (j + 1) * h);
            if (v <= u) continue;
            double y0 = map.inverse(b, u), y1 = map.inverse(b, v);
            if (y0 > y1) std::swap(y0, y1);
            const int c0 = std::clamp(static_cast<int>(std::floor(y0 / h)), 0, cells - 1);
            const int c1 = std::clamp(static_cast<int>(std::floor(y1 / h)), 0, cells - 1);
            for (int i = c0; i <= c1; ++i) {
                const double a = std::max(y0, i * h), e = std::min(y1, (i + 1) * h);
                if (e <= a) continue;
                double s = 0;
                if (k == 1) s = e - a;
                else
                    for (std::size_t q = 0; q < gl.x.size(); ++q) {
                        const double y = 0.5 * (a + e) + 0.5 * (e - a) * gl.x[q];
                        s += 0.5 * (e - a) * gl.w[q] * std::pow(std::abs(map.fprime(b, y)), 1 - k);
                    }
                M(j, i) += s / h;
            }
        }
    }
    return M;
}

// ---------------- discretized spectra ----------------

enum class Basis { Ulam, Chebyshev };

inline Basis parse_basis(const std::string& s) {
    if (s == "ulam") return Basis::Ulam;
    if (s == "chebyshev") return Basis::Chebyshev;
    throw InputError("unknown basis '" + s + "' (expected ulam or chebyshev)");
}

inline Eigen::MatrixXd discretized_operator(const PiecewiseMap& map, OperatorTag op, Basis basis, int size,
                                            int order = 16) {
    if (basis == Basis::Ulam) {
        const int k = static_cast<int>(op);
        if (k > 3) throw InputError("the Ulam basis supports only L0..L3");
        return ulam_matrix(map, size, k);
    }
    return discretize(map, chebyshev_layout(map, size, order)).matrix(op);
}

struct DiscretizedSpectrum {
    std::string basis, op;
    int size = 0, size_fine = 0;
    SpectrumReport report;
    std::vector<double> drift;   // distance to the nearest eigenvalue at the doubled size
    std::vector<bool> converged;
};

inline DiscretizedSpectrum discretize_spectrum(const PiecewiseMap& map, OperatorTag op, Basis basis, int size,
                                               double essential_bound = 0.0, double drift_tol = 1e-4,
                                               int order = 16) {
    DiscretizedSpectrum out;
    out.basis = basis == Basis::Ulam ? "ulam" : "chebyshev";
    out.op = to_string(op);
    const Eigen::MatrixXd A = discretized_operator(map, op, basis, size, order);
    const Eigen::MatrixXd B = discretized_operator(map, op, basis, 2 * size, order);
    out.size = static_cast<int>(A.rows());
    out.size_fine = static_cast<int>(B.rows());
    // Jordan structure is not resolved for discretizations; clusters keep alg = geo
    SpectrumOptions so;
    so.analyze_jordan = false;
    out.report = spectrum_with_multiplicity(A, essential_bound, so);
    const auto fine = eigenvalues(B);
    for (const auto& e : out.report.eigenvalues) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& z : fine) best = std::min(best, std::abs(z - e.value));
        out.drift.push_back(best);
        out.converged.push_back(best <= drift_tol);
    }
    return out;
}

// ---------------- Xi(z) ----------------

struct XiValue {
    cplx value;
    double tail_bound = 0;
    int terms = 0;
};

// Coefficients a_n = int (1-y) L_+^n L_1 D_f (y) dy.
struct XiSeries {
    const SmoothDiscretization* d = nullptr;
    GapParams p;
    std::vector<double> a;

    void extend(int M) {
        if (static_cast<int>(a.size()) > M) return;
        Eigen::VectorXd v = d->L1Df;
        for (int n = 0; n < static_cast<int>(a.size()); ++n) v = d->apply(OperatorTag::Plus, v);
        while (static_cast<int>(a.size()) <= M) {
            a.push_back(d->w_phi.dot(v));
            v = d->apply(OperatorTag::Plus, v);
        }
    }

    XiValue operator()(cplx z, double tail_tol) {
        const double r = std::abs(z), ms = p.mu_star;
        if (r <= ms + 1e-6)
            throw NumericError("Xi series needs |z| > mu* (|z| = " + expr::format_number(r) + ")");
        XiValue out;
        int M = 0;
        if (p.Delta > 0) {
            const double target = tail_tol * (r - ms) / p.Delta;
            M = std::max(0, static_cast<int>(std::ceil(std::log(target) / std::log(ms / r))) - 1);
            if (M > 100000) throw NumericError("Xi series needs more than 100000 terms");
        }
        extend(M);
        cplx s = 0, zp = 1.0 / z;
        for (int n = 0; n <= M; ++n) {
            s += zp * a[n];
            zp /= z;
        }
        out.value = 1.0 + s;
        out.terms = M + 1;
        out.tail_bound = p.Delta * std::pow(ms / r, M + 1) / (r - ms);
        return out;
    }
};

inline XiValue xi_function(const SmoothDiscretization& d, const GapParams& p, cplx z, double tail_tol) {
    XiSeries s{&d, p, {}};
    return s(z, tail_tol);
}

// Xi(z) = 1 + w_phi . (z - L_+)^{-1} L_1 D_f by a direct solve; valid wherever z is not an eigenvalue of L_+.
inline cplx xi_resolvent(const Eigen::MatrixXd& plus, const SmoothDiscretization& d, cplx z) {
    Eigen::MatrixXcd S = -plus.cast<cplx>();
    S.diagonal().array() += z;
    const Eigen::VectorXcd x = S.partialPivLu().solve(d.L1Df.cast<cplx>());
    return 1.0 + d.w_phi.cast<cplx>().dot(x);
}

struct Mu2Estimate {
    double mu1 = 0;      // second eigenvalue modulus of discretized L_+
    double zero = std::numeric_limits<double>::quiet_NaN();  // largest real zero of Xi in (mu1, mu*)
    double drift = 0;    // change of the zero between the two grids
    double mu2 = 0;      // reported estimate
    double plus_leading = 0;
};

inline double largest_real_zero(const Eigen::MatrixXd& plus, const SmoothDiscretization& d, double lo, double hi,
                                int samples = 400) {
    auto F = [&](double z) {
        Eigen::MatrixXd S = -plus;
        S.diagonal().array() += z;
        return 1.0 + d.w_phi.dot(S.partialPivLu().solve(d.L1Df));
    };
    double best = std::numeric_limits<double>::quiet_NaN();
    double prev_z = lo + (hi - lo) / (samples + 1), prev = F(prev_z);
    for (int s = 2; s <= samples; ++s) {
        const double z = lo + (hi - lo) * s / (samples + 1);
        const double v = F(z);
        if ((prev > 0) != (v > 0) && std::isfinite(prev) && std::isfinite(v)) {
            double a = prev_z, b = z, fa = prev;
            for (int it = 0; it < 200 && b - a > 1e-15; ++it) {
                const double m = 0.5 * (a + b), fm = F(m);
                if ((fm > 0) == (fa > 0)) {
                    a = m;
                    fa = fm;
                } else
                    b = m;
            }
            best = 0.5 * (a + b);
        }
        prev = v;
        prev_z = z;
    }
    return best;
}

// mu_2: the largest real zero of Xi above mu_1, pushed up by its grid drift; mu_1 when there is none.
inline Mu2Estimate estimate_mu2(const PiecewiseMap& map, const GapParams& p, int size = 128) {
    Mu2Estimate e;
    double zeros[2];
    for (int pass = 0; pass < 2; ++pass) {
        const auto d = discretize(map, chebyshev_layout(map, size << pass));
        const Eigen::MatrixXd P = d.matrix(OperatorTag::Plus);
        auto ev = eigenvalues(P);
        std::sort(ev.begin(), ev.end(), [](cplx a, cplx b) { return spectral_order(a, b); });
        if (pass == 0) {
            e.plus_leading = ev[0].real();
            e.mu1 = ev.size() > 1 ? std::abs(ev[1]) : 0.0;
        }
        zeros[pass] = largest_real_zero(P, d, e.mu1, p.mu_star);
    }
    if (std::isfinite(zeros[0]) && std::isfinite(zeros[1])) {
        e.zero = zeros[1];
        e.drift = std::abs(zeros[0] - zeros[1]);
        e.mu2 = std::max(zeros[0], zeros[1]) + e.drift + 1e-10;
    } else {
        e.mu2 = e.mu1;
    }
    return e;
}

// ---------------- finite-rank resolvent scan ----------------

enum class ScanForm { MeanZero, Markov };

inline ScanForm parse_scan_form(const std::string& s) {
    if (s == "mean_zero") return ScanForm::MeanZero;
    if (s == "markov") return ScanForm::Markov;
    throw InputError("unknown scan form '" + s + "' (expected mean_zero or markov)");
}

// nu - L_star = (nu - L_2)(Id - (nu - L_2)^{-1} K); the state is split into the part acted on by L_2 and the rest.
struct ScanOperator {
    int fixed = 0;          // leading coordinates on which L_2 acts as zero
    Eigen::MatrixXd L2;     // acts on the trailing coordinates
    Eigen::MatrixXd K;      // full state
    double rho_L2 = 0;

    cplx test_eigenvalue(cplx nu) const {
        const int n = static_cast<int>(K.rows()), m = static_cast<int>(L2.rows());
        Eigen::MatrixXcd RK(n, n);
        RK.topRows(fixed) = K.topRows(fixed).cast<cplx>() / nu;
        Eigen::MatrixXcd S = -L2.cast<cplx>();
        S.diagonal().array() += nu;
        RK.bottomRows(m) = S.partialPivLu().solve(K.bottomRows(m).cast<cplx>());
        const auto ev = eigenvalues(Eigen::MatrixXcd(RK));
        cplx best = std::numeric_limits<double>::infinity();
        for (const auto& z : ev)
            if (std::abs(z - 1.0) < std::abs(best - 1.0)) best = z;
        return best;
    }
};

inline ScanOperator scan_operator(const PiecewiseMap& map, ScanForm form, int size) {
    const auto d = discretize(map, chebyshev_layout(map, size));
    const int n = d.size(), N = map.size();
    ScanOperator op;
    const Eigen::MatrixXd C = d.grid.cumulative_matrix();
    if (form == ScanForm::MeanZero) {
        if (!map.full_branch) throw InputError("the mean_zero scan form requires a full-branch map");
        op.fixed = 0;
        op.L2 = Eigen::MatrixXd(d.L[2]);
        op.K = d.matrix(OperatorTag::Compact);
    } else {
        // state (c, g): c_i = h(p_i^+), g = h'; h = c_i + int_{p_i}^x g on I_i
        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, N);
        Eigen::MatrixXd Cloc = C;  // cumulative restarted at each p_i
        for (int r = 0; r < n; ++r) {
            const int i = d.grid.interval_of_node(r);
            S(r, i) = 1;
            for (int c = 0; c < n; ++c)
                if (d.grid.interval_of_node(c) < i) Cloc(r, c) = 0;
        }
        op.fixed = N;
        op.L2 = Eigen::MatrixXd(d.L[2]);
        op.K = Eigen::MatrixXd::Zero(N + n, N + n);
        // c' = (L_1 h)(p_i^+)
        std::vector<double> row(d.grid.order());
        for (int i = 0; i < N; ++i) {
            const double x = map.p[i];
            for (int j = 0; j < N; ++j) {
                if (!map.adj(j, i)) continue;
                const double y = map.inverse(j, x);
                const double wgt = transfer_weight(map.fprime(j, y), 1, WeightMode::SRB);
                op.K(i, j) += wgt;
                // int_{p_j}^y g through the local cumulative interpolated at y
                const int pi = d.grid.interp(y, row.data(), j);
                for (int q = 0; q < d.grid.order(); ++q) {
                    const int node = pi * d.grid.order() + q;
                    op.K.block(i, N, 1, n) += wgt * row[q] * Cloc.row(node);
                }
            }
        }
        // g' = L_2 g + L_1(D_f h)
        op.K.block(N, 0, n, N) = d.L1D * S;
        op.K.block(N, N, n, n) = d.L1D * Cloc;
    }
    for (const auto& z : eigenvalues(op.L2)) op.rho_L2 = std::max(op.rho_L2, std::abs(z));
    return op;
}

struct ScanPoint {
    cplx nu;
    double distance = 0;  // |test eigenvalue - 1| at size N
    double drift = 0;     // |test eigenvalue(N) - test eigenvalue(2N)|
};

struct ScanCandidate {
    cplx nu;
    double distance = 0;
    double drift = 0;     // change of the refined location between N and 2N
};

struct ScanResult {
    std::string form;
    int size = 0;
    double tol = 1e-3;
    double inner = 0, outer = 1;  // annulus radii
    std::vector<ScanPoint> points;
    std::vector<ScanCandidate> candidates;
    double max_drift = 0;
    std::string error_scale = "C (|nu| - 1/lambda)^-1 N^-alpha with C, alpha not certified";
};

struct ScanGrid {
    double re0 = -1, re1 = 1, im0 = -1, im1 = 1;
    int nre = 41, nim = 41;
};

namespace detail {

// Newton iteration on t(nu) = 1 with a finite-difference derivative (t is analytic in nu).
inline bool refine_scan_root(const ScanOperator& op, cplx& nu, double inner, double outer) {
    for (int it = 0; it < 40; ++it) {
        const cplx t = op.test_eigenvalue(nu);
        if (std::abs(t - 1.0) < 1e-12) return true;
        const double h = 1e-7 * std::max(1.0, std::abs(nu));
        const cplx dt = (op.test_eigenvalue(nu + h) - op.test_eigenvalue(nu - h)) / (2 * h);
        if (std::abs(dt) < 1e-14) return false;
        cplx step = (t - 1.0) / dt;
        if (std::abs(step) > 0.1) step *= 0.1 / std::abs(step);
        nu -= step;
        if (std::abs(nu) <= inner || std::abs(nu) >= outer) return false;
        if (std::abs(step) < 1e-13 * std::abs(nu)) return std::abs(op.test_eigenvalue(nu) - 1.0) < 1e-8;
    }
    return false;
}

} // namespace detail

inline ScanResult resolvent_scan(const PiecewiseMap& map, ScanForm form, const ScanGrid& grid, int size,
                                 double tol_scan = 1e-3) {
    if (grid.nre < 1 || grid.nim < 1) throw std::invalid_argument("scan grid must be nonempty");
    ScanResult res;
    res.form = form == ScanForm::MeanZero ? "mean_zero" : "markov";
    res.size = size;
    res.tol = tol_scan;
    double lam = map.lambda_min();
    res.inner = 1.0 / lam;
    res.outer = 1.0;
    const auto A = scan_operator(map, form, size), B = scan_operator(map, form, 2 * size);
    const double rho = std::max(A.rho_L2, B.rho_L2);

    // lattice points strictly inside the annulus
    std::vector<cplx> nus;
    std::vector<int> index(static_cast<std::size_t>(grid.nre) * grid.nim, -1);
    for (int a = 0; a < grid.nre; ++a)
        for (int b = 0; b < grid.nim; ++b) {
            const double re = grid.nre == 1 ? grid.re0 : grid.re0 + (grid.re1 - grid.re0) * a / (grid.nre - 1);
            const double im = grid.nim == 1 ? grid.im0 : grid.im0 + (grid.im1 - grid.im0) * b / (grid.nim - 1);
            const cplx nu(re, im);
            if (std::abs(nu) <= res.inner || std::abs(nu) >= res.outer) continue;
            if (std::abs(nu) <= rho * (1 + 1e-9))
                throw NumericError("Neumann non-convergence: |nu| = " + expr::format_number(std::abs(nu)) +
                                   " does not exceed the spectral radius of L_2");
            index[a * grid.nim + b] = static_cast<int>(nus.size());
            nus.push_back(nu);
        }
    res.points.resize(nus.size());
    parallel_for(static_cast<int>(nus.size()), [&](int i) {
        const cplx ta = A.test_eigenvalue(nus[i]), tb = B.test_eigenvalue(nus[i]);
        res.points[i] = {nus[i], std::abs(ta - 1.0), std::abs(ta - tb)};
    });
    for (const auto& p : res.points) res.max_drift = std::max(res.max_drift, p.drift);

    // refine from local minima of the distance
    std::vector<cplx> starts;
    for (int a = 0; a < grid.nre; ++a)
        for (int b = 0; b < grid.nim; ++b) {
            const int i = index[a * grid.nim + b];
            if (i < 0) continue;
            bool minimum = true;
            for (int da = -1; da <= 1 && minimum; ++da)
                for (int db = -1; db <= 1; ++db) {
                    if (!da && !db) continue;
                    const int aa = a + da, bb = b + db;
                    if (aa < 0 || bb < 0 || aa >= grid.nre || bb >= grid.nim) continue;
                    const int j = index[aa * grid.nim + bb];
                    if (j >= 0 && res.points[j].distance < res.points[i].distance) {
                        minimum = false;
                        break;
                    }
                }
            if (minimum && res.points[i].distance < 0.5) starts.push_back(nus[i]);
        }
    for (cplx nu : starts) {
        if (!detail::refine_scan_root(A, nu, res.inner, res.outer)) continue;
        if (std::abs(nu) <= res.inner * (1 + 1e-9) || std::abs(nu) >= res.outer * (1 - 1e-9)) continue;
        const double dist = std::abs(A.test_eigenvalue(nu) - 1.0);
        if (dist >= tol_scan) continue;
        bool dup = false;
        for (const auto& c : res.candidates)
            if (std::abs(c.nu - nu) < 1e-6) dup = true;
        if (dup) continue;
        cplx nu_fine = nu;
        double drift = std::numeric_limits<double>::infinity();
        if (detail::refine_scan_root(B, nu_fine, res.inner, res.outer)) drift = std::abs(nu_fine - nu);
        res.candidates.push_back({nu, dist, drift});
    }
    std::sort(res.candidates.begin(), res.candidates.end(),
              [](const ScanCandidate& a, const ScanCandidate& b) { return spectral_order(a.nu, b.nu); });
    return res;
}

// ---------------- cohomological alpha ----------------

// sup |D_f - alpha/f' + alpha o f| over the branches.
inline double alpha_diagnostic(const SmoothFullBranchMap& m, const Expr& alpha) {
    double worst = 0;
    for (int j = 0; j < m.size(); ++j)
        for (double x : branch_sample(m.p[j], m.p[j + 1])) {
            const double v = m.distortion(j, x) - expr::eval(alpha, x) / m.fprime(j, x) +
                             expr::eval(alpha, expr::eval(m.branches[j].f, x));
            worst = std::max(worst, std::abs(v));
        }
    return worst;
}

} // namespace reslab

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "reslab/correlation.hpp"
#include "reslab/quadrature.hpp"
#include "reslab/random_maps.hpp"

using namespace reslab;

namespace {

MarkovAffineMap jordan_map() { return make_affine({0, 0.25, 0.5, 0.75, 1}, {3, 3, 2, 3}, {0.25, -0.75, -1, -2.25}); }
MarkovAffineMap doubling_map() { return make_affine({0, 0.5, 1}, {2, 2}, {0, -1}); }

double binom(int n, int k) {
    double r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// coefficients of phi o f, piece by piece: phi(s x + c) expanded binomially
Eigen::VectorXd compose_with_map(const MarkovAffineMap& m, const std::vector<double>& phi) {
    const int N = m.size(), r = static_cast<int>(phi.size()) - 1;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(N * (r + 1));
    for (int j = 0; j < N; ++j)
        for (int l = 0; l <= r; ++l)
            for (int i = 0; i <= l; ++i)
                v[i * N + j] += phi[l] * binom(l, i) * std::pow(m.slope[j], i) * std::pow(m.offset[j], l - i);
    return v;
}

Eigen::VectorXd random_coefficients(std::mt19937_64& rng, int N, int r) {
    std::uniform_real_distribution<double> u(-1, 1);
    Eigen::VectorXd v(N * (r + 1));
    for (auto& c : v) c = u(rng);
    return v;
}

GridSpec affine_grid() { return default_correlation_grid(true); }

} // namespace

TEST(InvariantDensity, JordanSrbDensity) {
    const auto d = invariant_density(jordan_map(), WeightMode::SRB, 0);
    EXPECT_DOUBLE_EQ(d.gamma, 1.0);
    const Eigen::Vector4d expect(9, 12, 8, 3);
    // normalized so that the Lebesgue integral is 1
    const Eigen::Vector4d h = expect / (expect.sum() / 4);
    EXPECT_LE((d.h - h).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(InvariantDensity, SrbConformalMeasureIsLebesgue) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 10; ++t) {
        const auto m = random_affine_markov(rng).to_double();
        const auto d = invariant_density(m, WeightMode::SRB, 4);
        for (int l = 0; l <= 4; ++l)
            for (int j = 0; j < m.size(); ++j) {
                const double leb = (std::pow(m.p[j + 1], l + 1) - std::pow(m.p[j], l + 1)) / (l + 1);
                EXPECT_NEAR(d.moments[l * m.size() + j], leb, 1e-12);
            }
    }
}

TEST(InvariantDensity, ConformalAndInvariant) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 10; ++t) {
        const auto m = random_affine_markov(rng).to_double();
        for (auto mode : {WeightMode::SRB, WeightMode::MME}) {
            const int r = 3;
            const auto d = invariant_density(m, mode, r);
            const int N = m.size();
            // nu(L phi) = gamma nu(phi)
            const Eigen::VectorXd phi = random_coefficients(rng, N, r);
            const Eigen::VectorXd one = poly_coefficients({1.0}, N, 0);
            const Eigen::VectorXd Lphi = build_Tkr(m, d.k, r, mode).T * phi;
            EXPECT_NEAR(d.pair(Lphi, one), d.gamma * d.pair(phi, one), 1e-8 * std::max(1.0, d.gamma));
            // mu(psi o f) = mu(psi)
            const std::vector<double> psi{0.3, -1.2, 0.7, 0.5};
            const double lhs = d.mean(compose_with_map(m, psi));
            const double rhs = d.mean(poly_coefficients(psi, N, 3));
            EXPECT_NEAR(lhs, rhs, 1e-8);
            EXPECT_NEAR(d.mean(one), 1.0, 1e-12);
            EXPECT_GT(d.h.minCoeff(), 0);
        }
    }
}

TEST(InvariantDensity, GridMatchesAffine) {
    std::mt19937_64 rng(41);
    for (int t = 0; t < 5; ++t) {
        const auto m = random_affine_markov(rng).to_double();
        for (auto mode : {WeightMode::SRB, WeightMode::MME}) {
            const auto a = invariant_density(m, mode, 0);
            const auto g = invariant_density(piecewise(m), mode, affine_grid());
            EXPECT_NEAR(g.gamma, a.gamma, 1e-10);
            for (int i = 0; i < g.grid.size(); i += 7)
                EXPECT_NEAR(g.h[i], a.h[locate_interval(m.p, g.grid.node(i))], 1e-8);
        }
    }
}

TEST(InvariantDensity, RejectsNonTransitiveMaps) {
    // two invariant halves
    const auto split = make_affine({0, 0.25, 0.5, 0.75, 1}, {2, 2, 2, 2}, {0, -0.5, -0.5, -1.0});
    EXPECT_THROW(invariant_density(split, WeightMode::SRB, 0), InputError);
    // period two
    const auto cyc = make_affine({0, 0.25, 0.5, 0.75, 1}, {2, 2, 2, 2}, {0.5, 0, -1, -1.5});
    EXPECT_THROW(invariant_density(cyc, WeightMode::MME, 0), InputError);
}

TEST(Correlation, DoublingMapClosedForm) {
    const auto phi = expr::parse("x - 1/2");
    const auto tr = correlation_sequence(doubling_map(), phi, phi, WeightMode::SRB, 40);
    for (int n = 0; n <= 40; ++n) {
        const double expect = std::pow(2.0, -n) / 12;
        EXPECT_NEAR(tr.C[n].real(), expect, 1e-10 * expect) << n;
        EXPECT_EQ(tr.C[n].imag(), 0.0);
    }
    const auto tq = correlation_sequence(piecewise(doubling_map()), phi, phi, WeightMode::SRB, 40, affine_grid());
    for (int n = 0; n <= 40; ++n) EXPECT_NEAR(tq.C[n].real(), std::pow(2.0, -n) / 12, 1e-10 * std::pow(2.0, -n) / 12);
    EXPECT_NEAR(tr.predicted_ratio, 0.5, 1e-10);
}

TEST(Correlation, DoublingMapBruteForceQuadrature) {
    // int (x - 1/2)((2^n x mod 1) - 1/2) dx cylinder by cylinder
    const auto phi = expr::parse("x - 1/2");
    const auto tr = correlation_sequence(doubling_map(), phi, phi, WeightMode::SRB, 10);
    for (int n = 0; n <= 10; ++n) {
        const double cells = std::ldexp(1.0, n);
        double s = 0;
        for (int c = 0; c < static_cast<int>(cells); ++c)
            s += integrate([&](double x) { return (x - 0.5) * (cells * x - c - 0.5); }, c / cells, (c + 1) / cells);
        EXPECT_NEAR(tr.C[n].real(), s, 1e-13);
    }
}

TEST(Correlation, ExactAndQuadraturePathsAgree) {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> deg(0, 3);
    for (int t = 0; t < 10; ++t) {
        const auto m = random_affine_markov(rng).to_double();
        const int N = m.size();
        for (auto mode : {WeightMode::SRB, WeightMode::MME}) {
            const Eigen::VectorXd phi = random_coefficients(rng, N, deg(rng));
            const Eigen::VectorXd psi = random_coefficients(rng, N, deg(rng));
            const auto a = correlation_exact(m, phi, psi, mode, 20);
            const auto d = invariant_density(piecewise(m), mode, affine_grid());
            const auto b = correlation_quadrature(
                d, [&](double x) { return eval_piecewise_poly(phi, m.p, x); },
                [&](double x) { return eval_piecewise_poly(psi, m.p, x); }, 20);
            for (int n = 0; n <= 20; ++n) {
                EXPECT_NEAR(a.C[n].real(), b.C[n].real(), 1e-9) << "map " << t << " n " << n;
                EXPECT_NEAR(a.centered[n].real(), b.centered[n].real(), 1e-9) << "map " << t << " n " << n;
            }
        }
    }
}

TEST(Correlation, ConstantObservableGivesMean) {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 5; ++t) {
        const auto m = random_affine_markov(rng).to_double();
        for (auto mode : {WeightMode::SRB, WeightMode::MME}) {
            const auto tr = correlation_sequence(m, expr::parse("1"), expr::parse("x^2 - x/3"), mode, 15);
            for (int n = 0; n <= 15; ++n) {
                EXPECT_NEAR(tr.C[n].real(), tr.mean_psi.real(), 1e-12);
                EXPECT_NEAR(tr.centered[n].real(), 0.0, 1e-12);
            }
        }
    }
}

TEST(Correlation, JordanMapPolynomialEnvelope) {
    // phi = 1 on I_0, -1 on I_3 projects on the Jordan chain of -1/3
    const auto m = jordan_map();
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(4), psi = Eigen::VectorXd::Zero(4);
    phi << 1, 0, 0, -1;
    psi << 0, 1, -1, 0.5;
    const auto tr = correlation_exact(m, phi, psi, WeightMode::SRB, 40);
    double K = 0;
    for (int n = 1; n <= 40; ++n) K = std::max(K, std::abs(tr.centered[n]) / (n * std::pow(1.0 / 3, n)));
    for (int n = 1; n <= 40; ++n) EXPECT_LE(std::abs(tr.centered[n]), K * n * std::pow(1.0 / 3, n) * (1 + 1e-12));
    // the sequence is not dominated by a pure geometric term: the ratio to 3^-n grows linearly
    EXPECT_GT(std::abs(tr.centered[30]) * std::pow(3.0, 30), 5 * std::abs(tr.centered[3]) * std::pow(3.0, 3));
    const auto fit = fit_decay(tr.centered);
    EXPECT_NEAR(fit.rho, 1.0 / 3, 1e-2);
    EXPECT_EQ(fit.k, 1);
    EXPECT_NEAR(tr.predicted_ratio, 1.0 / 3, 1e-6);
    EXPECT_EQ(tr.predicted_jordan, 2);
}

TEST(Correlation, RejectsLongSequencesAndNonPolynomials) {
    const auto phi = expr::parse("x");
    EXPECT_THROW(correlation_sequence(doubling_map(), phi, phi, WeightMode::SRB, 61), std::invalid_argument);
    EXPECT_THROW(correlation_sequence(doubling_map(), expr::parse("sin(x)"), phi, WeightMode::SRB, 5), InputError);
    EXPECT_THROW(correlation_sequence(doubling_map(), expr::parse("x^9"), phi, WeightMode::SRB, 5), InputError);
}

TEST(FitDecay, GeometricSequence) {
    std::vector<double> c;
    for (int n = 0; n <= 40; ++n) c.push_back(3 * std::pow(0.5, n));
    const auto f = fit_decay(c);
    EXPECT_NEAR(f.rho, 0.5, 1e-6);
    EXPECT_EQ(f.k, 0);
    EXPECT_LE(f.residual, 1e-10);
}

TEST(FitDecay, PolynomialTimesGeometric) {
    std::vector<double> c;
    for (int n = 0; n <= 40; ++n) c.push_back(n * std::pow(1.0 / 3, n));
    c[0] = 1.0 / 3;  // keep the noise floor meaningful
    const auto f = fit_decay(c);
    EXPECT_NEAR(f.rho, 1.0 / 3, 1e-3);
    EXPECT_EQ(f.k, 1);
}

TEST(FitDecay, NoiseFloorIsRespected) {
    std::vector<double> c;
    for (int n = 0; n <= 60; ++n) c.push_back(std::pow(0.5, n) + (n > 30 ? 1e-20 : 0.0));
    const auto f = fit_decay(c);
    EXPECT_LE(f.n_hi, 50);
    for (int n = f.n_lo; n <= f.n_hi; ++n) EXPECT_GT(c[n], 1e3 * std::numeric_limits<double>::epsilon() * c[0]);
    EXPECT_NEAR(f.rho, 0.5, 1e-6);
}

TEST(FitDecay, TooFewPoints) {
    EXPECT_THROW(fit_decay(std::vector<double>{1, 0, 0, 0, 0, 0, 0, 0, 0, 0}), NumericError);
    EXPECT_THROW(fit_decay(std::vector<double>{1, 0.1, 0.01, 1e-3, 1e-4}), NumericError);
    EXPECT_THROW(fit_decay(std::vector<double>{0, 0, 0}), NumericError);
}

TEST(Torus, CatMapCosine) {
    const TorusAutomorphism cat{2, 1, 1, 1};
    FourierPoly phi{{{1, 0}, 0.5}, {{-1, 0}, 0.5}};
    const auto res = torus_correlation(cat, phi, phi, 10);
    EXPECT_NEAR(res.trace.C[0].real(), 0.5, 1e-15);
    for (int n = 1; n <= 10; ++n) EXPECT_EQ(std::abs(res.trace.C[n]), 0.0);
    EXPECT_EQ(res.n0, 1);
}

TEST(Torus, MatchesTwoDimensionalQuadrature) {
    const TorusAutomorphism cat{2, 1, 1, 1};
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    FourierPoly phi, psi;
    for (int a = -3; a <= 3; ++a)
        for (int b = -3; b <= 3; ++b) {
            if (u(rng) > 0.2) phi[{a, b}] = {u(rng), u(rng)};
            if (u(rng) > 0.2) psi[{a, b}] = {u(rng), u(rng)};
        }
    phi.erase({0, 0});
    psi.erase({0, 0});
    const auto res = torus_correlation(cat, phi, psi, 30);
    auto eval = [](const FourierPoly& f, double x, double y) {
        cplx s = 0;
        for (const auto& [k, v] : f) s += v * std::exp(cplx(0, 2 * M_PI * (k.first * x + k.second * y)));
        return s;
    };
    // rectangle rule is exact for the trigonometric polynomials involved when n <= 3
    const int M = 256;
    for (int n = 0; n <= 3; ++n) {
        cplx s = 0;
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) {
                double x = static_cast<double>(i) / M, y = static_cast<double>(j) / M;
                double tx = x, ty = y;
                for (int s2 = 0; s2 < n; ++s2) {
                    const double nx = 2 * tx + ty, ny = tx + ty;
                    tx = nx - std::floor(nx);
                    ty = ny - std::floor(ny);
                }
                s += eval(phi, x, y) * eval(psi, tx, ty);
            }
        s /= static_cast<double>(M) * M;
        EXPECT_NEAR(std::abs(res.trace.C[n] - s), 0.0, 1e-10) << n;
    }
    EXPECT_LE(res.n0, 6);
    for (int n = res.n0; n <= 30; ++n) EXPECT_EQ(std::abs(res.trace.C[n]), 0.0);
}

TEST(Torus, ZeroFrequencyIsDropped) {
    FourierPoly one{{{0, 0}, 1.0}};
    const auto res = torus_correlation({2, 1, 1, 1}, one, one, 5);
    for (const auto& c : res.trace.C) EXPECT_EQ(c, res.trace.C[0]);
}

TEST(Torus, RejectsNonHyperbolic) {
    FourierPoly phi{{{1, 0}, 1.0}};
    EXPECT_THROW(torus_correlation({1, 1, 0, 1}, phi, phi, 5), InputError);
    EXPECT_THROW(torus_correlation({0, 1, -1, 0}, phi, phi, 5), InputError);
    EXPECT_THROW(torus_correlation({2, 0, 0, 1}, phi, phi, 5), InputError);
    // determinant -1 with nonzero trace is hyperbolic
    EXPECT_NO_THROW(torus_correlation({1, 1, 1, 0}, phi, phi, 5));
}

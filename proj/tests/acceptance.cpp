// One pass/fail line per acceptance criterion; nonzero exit if any fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "reslab/affine_resonances.hpp"
#include "reslab/correlation.hpp"
#include "reslab/exact.hpp"
#include "reslab/monotone_mme.hpp"
#include "reslab/random_maps.hpp"
#include "reslab/smooth_spectral.hpp"

using namespace reslab;
using exact::Rational;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream why;
    std::string info;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            why << " [" << what << "]";
        }
    }
};

int failures = 0;

void criterion(const std::string& name, double limit_s, const std::function<void(Outcome&)>& body) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.check(false, std::string("exception: ") + e.what());
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.check(dt < limit_s, "runtime " + std::to_string(dt) + " s over " + std::to_string(limit_s) + " s");
    if (!o.pass) ++failures;
    std::printf("%s  %-28s %8.3f s  %s%s\n", o.pass ? "PASS" : "FAIL", name.c_str(), dt, o.info.c_str(),
                o.why.str().c_str());
    std::fflush(stdout);
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

double maxabs(const Eigen::VectorXd& v) { return v.cwiseAbs().maxCoeff(); }

MarkovAffineMap jordan_map() { return make_affine({0, 0.25, 0.5, 0.75, 1}, {3, 3, 2, 3}, {0.25, -0.75, -1, -2.25}); }
MarkovAffineMap doubling_map() { return make_affine({0, 0.5, 1}, {2, 2}, {0, -1}); }
MarkovAffineMap markov4() { return make_affine({0, 0.25, 0.5, 0.75, 1}, {2, 2, 2, 2}, {0.5, -0.25, -1, -1.5}); }

SmoothFullBranchMap quad_map() {
    return checked(make_smooth({0, 2 - std::sqrt(3.0), 2 - std::sqrt(2.0), 1},
                               {expr::parse("4*x - x^2"), expr::parse("4*x - x^2 - 1"), expr::parse("4*x - x^2 - 2")}));
}

MonotoneFullBranchMap lsv() {
    return checked(make_monotone({0, 0.5, 1}, {expr::parse("x*(1 + 2^0.5*x^0.5)"), expr::parse("2*x - 1")}));
}

void jordan(Outcome& o) {
    const auto m = jordan_map();
    const Eigen::MatrixXd B = build_Bk(m, 1, WeightMode::SRB);
    Eigen::Vector4d a1(-1, 0, 0, 1), a2(3, 3, -6, 0), a3(0, -1, 0, 1), a4(9, 12, 8, 3);
    o.check(maxabs(B * a1 + a1 / 3) <= 1e-12, "B a1 = -a1/3");
    o.check(maxabs(B * a2 + a2 / 3 - a1) <= 1e-12, "(B + I/3) a2 = a1");
    o.check(maxabs(B * a3) <= 1e-12, "B a3 = 0");
    o.check(maxabs(B * a4 - a4) <= 1e-12, "B a4 = a4");

    const auto rep = spectrum_with_multiplicity(B, 0.0);
    bool one = false, third = false, zero = false;
    for (const auto& e : rep.eigenvalues) {
        if (std::abs(e.value - 1.0) < 1e-10) one = e.alg == 1;
        if (std::abs(e.value + 1.0 / 3) < 1e-7) third = e.alg == 2 && e.jordan == std::vector<int>{2};
        if (std::abs(e.value) < 1e-10) zero = e.alg == 1;
    }
    o.check(rep.eigenvalues.size() == 3 && one && third && zero, "spectrum {1, -1/3 (Jordan 2), 0}");

    const auto R = exact::make_rational({0, Rational(1, 4), Rational(1, 2), Rational(3, 4), 1}, {3, 3, 2, 3},
                                        {Rational(1, 4), Rational(-3, 4), -1, Rational(-9, 4)});
    const auto Bq = exact::build_Bk(R, 1, WeightMode::SRB);
    auto vec = [](std::initializer_list<int> v) { return std::vector<Rational>(v.begin(), v.end()); };
    const auto q1 = vec({-1, 0, 0, 1}), q2 = vec({3, 3, -6, 0}), q3 = vec({0, -1, 0, 1}), q4 = vec({9, 12, 8, 3});
    const auto b1 = exact::apply(Bq, q1), b2 = exact::apply(Bq, q2), b3 = exact::apply(Bq, q3), b4 = exact::apply(Bq, q4);
    bool exact_ok = true;
    for (int i = 0; i < 4; ++i)
        exact_ok = exact_ok && b1[i] == -q1[i] / 3 && b2[i] + q2[i] / 3 == q1[i] && b3[i] == 0 && b4[i] == q4[i];
    o.check(exact_ok, "rational relations");
    o.check(exact::jordan_blocks(Bq, Rational(-1, 3)) == std::vector<int>{2}, "rational Jordan block");
}

void doubling(Outcome& o) {
    const auto m = doubling_map();
    const auto rs = resonance_set(m, WeightMode::SRB, 4);
    const auto closed = full_branch_resonances(m, WeightMode::SRB, 4);
    std::vector<double> nonzero;
    int zeros = 0;
    for (const auto& e : rs.spectrum.eigenvalues) {
        if (std::abs(e.value) < 1e-10) {
            zeros += e.alg;
            continue;
        }
        o.check(std::abs(e.value.imag()) <= 1e-10 && e.alg == 1, "simple real resonances");
        nonzero.push_back(e.value.real());
    }
    o.check(nonzero.size() == 5, "five nonzero resonances");
    for (std::size_t l = 0; l < nonzero.size() && l < 5; ++l) {
        o.check(std::abs(nonzero[l] - std::pow(2.0, -static_cast<double>(l))) <= 1e-10, "2^-l");
        o.check(std::abs(nonzero[l] - closed[l]) <= 1e-10, "closed form");
    }
    o.check(zeros == 5, "zero with multiplicity 5");
    o.check(rs.cross_check <= 1e-10, "sigma(T_{1,4})");
    const auto mme = resonance_set(m, WeightMode::MME, 2);
    o.check(std::abs(mme.spectrum.eigenvalues.at(0).value - 2.0) <= 1e-10, "MME leads with 2");

    const auto T = exact::build_Tkr(exact::make_rational({0, Rational(1, 2), 1}, {2, 2}, {0, -1}), 1, 4, WeightMode::SRB);
    std::vector<Rational> expect{1};
    for (int l = 0; l <= 4; ++l) expect = exact::poly_mul(expect, exact::poly_mul({-exact::rpow(2, -l), 1}, {0, 1}));
    o.check(exact::charpoly(T) == expect, "rational charpoly");
}

// greedy one-to-one matching of two eigenvalue multisets
double match(std::vector<cplx> a, std::vector<cplx> b) {
    if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
    double worst = 0;
    for (const auto& z : a) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < b.size(); ++i)
            if (std::abs(b[i] - z) < std::abs(b[best] - z)) best = i;
        worst = std::max(worst, std::abs(b[best] - z));
        b.erase(b.begin() + static_cast<long>(best));
    }
    return worst;
}

std::vector<MarkovAffineMap> random_suite() {
    std::mt19937_64 rng(2024);
    std::vector<MarkovAffineMap> maps;
    for (int t = 0; t < 20; ++t) maps.push_back(random_affine_markov(rng).to_double());
    return maps;
}

void multiplicity(Outcome& o) {
    double worst = 0;
    int count_ok = 0, total = 0;
    for (const auto& m : random_suite())
        for (int k = 0; k <= 1; ++k)
            for (int r = 1; r <= 4; ++r) {
                const auto mode = k == 0 ? WeightMode::MME : WeightMode::SRB;
                std::vector<cplx> uni;
                for (int l = 0; l <= r; ++l) {
                    const auto ev = eigenvalues(build_Bk(m, k + l, mode));
                    uni.insert(uni.end(), ev.begin(), ev.end());
                }
                worst = std::max(worst, match(eigenvalues(build_Tkr(m, k, r, mode).T), uni));
                const auto rs = resonance_set(m, mode, r);
                ++total;
                if (rs.spectrum.total_multiplicity() == m.size() * (r + 1)) ++count_ok;
            }
    o.check(worst <= 1e-8, "eigenvalue match " + std::to_string(worst));
    o.info = "worst match " + sci(worst);
    o.check(count_ok == total, "total multiplicity");
}

void decay(Outcome& o) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1, 1);
    std::uniform_int_distribution<int> deg(0, 2);
    int t = 0, tested = 0;
    double worst = 0;
    for (const auto& m : random_suite()) {
        const int N = m.size();
        double best = std::numeric_limits<double>::infinity();
        // a random pair may sit near a cancellation; take the best of three
        for (int pair = 0; pair < 3; ++pair) {
            Eigen::VectorXd phi(N * (deg(rng) + 1)), psi(N * (deg(rng) + 1));
            for (auto& c : phi) c = u(rng);
            for (auto& c : psi) c = u(rng);
            const auto tr = correlation_exact(m, phi, psi, WeightMode::SRB, max_correlation_n);
            if (!std::isfinite(tr.predicted_ratio)) continue;
            try {
                const auto fit = fit_decay(tr.centered);
                best = std::min(best, std::abs(fit.rho - tr.predicted_ratio) / tr.predicted_ratio);
            } catch (const NumericError&) {
            }
        }
        if (std::isfinite(best)) {
            ++tested;
            worst = std::max(worst, best);
            o.check(best <= 0.05, "map " + std::to_string(t) + " off by " + std::to_string(best));
        }
        ++t;
    }
    o.check(tested >= 15, "maps with a fit " + std::to_string(tested));
    o.info = "maps " + std::to_string(tested) + ", worst relative error " + std::to_string(worst);
}

void quadratic(Outcome& o) {
    const auto m = quad_map();
    auto g = gap_params(m);
    o.check(std::abs(g.mu_star - 0.5) <= 1e-12, "mu*");
    o.check(std::abs(g.Delta - 0.25) <= 1e-12, "Delta");
    o.check(std::abs(g.tau - 0.75) <= 1e-12, "tau");
    o.check(std::abs(g.essential_bound() - 0.25) <= 1e-12, "essential bound");
    g.mu2 = estimate_mu2(piecewise(m), g).mu2;
    const auto R = exclusion_regions(g);
    o.check(std::abs(R.A3_intercept() - 0.5659) <= 1e-3, "A3 intercept");
    o.check(std::abs(R.A4_intercept() - 0.6124) <= 1e-3, "A4 intercept");

    const auto pm = piecewise(m);
    const auto l1 = discretize_spectrum(pm, OperatorTag::L1, Basis::Chebyshev, 1024, g.essential_bound());
    const auto& ev = l1.report.eigenvalues;
    o.check(!ev.empty() && std::abs(ev[0].value - 1.0) <= 1e-10 && ev[0].alg == 1, "L1 leads with a simple 1");
    int inside = 0;
    for (std::size_t i = 1; i < ev.size(); ++i) {
        o.check(std::abs(ev[i].value) <= g.tau + 1e-6, "|z| <= tau");
        if (l1.converged[i] && R.in_any(ev[i].value)) ++inside;
    }
    o.info = "size " + std::to_string(l1.size) + ", converged " +
             std::to_string(std::count(l1.converged.begin(), l1.converged.end(), true));
    o.check(inside == 0, "converged eigenvalues inside A_i: " + std::to_string(inside));
    const auto l0 = discretize_spectrum(pm, OperatorTag::L0, Basis::Chebyshev, 1024);
    o.check(std::abs(l0.report.eigenvalues.at(0).value - 3.0) <= 1e-8, "L0 leads with 3");
}

void xi_affine(Outcome& o) {
    GridSpec spec;
    spec.kind = NodeKind::Chebyshev;
    spec.order = 8;
    spec.panels_per_interval = 1;
    const std::vector<SmoothFullBranchMap> maps{
        checked(make_smooth({0, 0.5, 1}, {expr::parse("2*x"), expr::parse("2*x - 1")})),
        checked(make_smooth({0, 0.3, 1}, {expr::parse("x/0.3"), expr::parse("(x - 0.3)/0.7")})),
        checked(make_smooth({0, 0.25, 0.5, 1}, {expr::parse("4*x"), expr::parse("4*x - 1"), expr::parse("2*x - 1")}))};
    for (const auto& m : maps) {
        const auto d = discretize(piecewise(m), spec);
        const auto g = gap_params(m);
        for (cplx z : {cplx(0.9, 0), cplx(-1.5, 0.2), cplx(0.1, 1.2)})
            o.check(std::abs(xi_function(d, g, z, 1e-12).value - 1.0) <= 1e-12, "Xi = 1 for affine maps");
    }
}

void xi_quadratic(Outcome& o) {
    GridSpec spec;
    spec.kind = NodeKind::Chebyshev;
    spec.order = 16;
    spec.panels_per_interval = 4;
    const auto m = quad_map();
    const auto d = discretize(piecewise(m), spec);
    const auto g = gap_params(m);
    XiSeries xi{&d, g, {}};
    for (int i = 0; i < 100; ++i) {
        const double z = g.mu_star + 0.05 + (2 - g.mu_star - 0.05) * (i + 0.5) / 100;
        o.check(xi(z, 1e-12).value.real() > 1, "Xi > 1 at " + std::to_string(z));
    }
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> r(g.mu_star + 0.02, 2.0), th(-M_PI, M_PI);
    for (int i = 0; i < 200; ++i) {
        const cplx z = std::polar(r(rng), th(rng));
        o.check(std::abs(xi(z, 1e-12).value - 1.0) <= g.Delta / (std::abs(z) - g.mu_star) + 1e-10, "Xi bound");
    }
    std::uniform_real_distribution<double> c(-1, 1);
    for (int t = 0; t < 10; ++t) {
        const double a0 = c(rng), a1 = c(rng), a2 = c(rng), a3 = c(rng);
        const Eigen::VectorXd v = d.grid.sample([&](double x) { return a0 + x * (a1 + x * (a2 + x * a3)); });
        o.check(std::abs(d.integral(d.apply(OperatorTag::Plus, v)) - g.mu_star * d.integral(v)) <= 1e-9,
                "int L_+ g = mu* int g");
    }
    // leading pair by power iteration
    Eigen::VectorXd h = Eigen::VectorXd::Ones(d.size());
    double mu = 0;
    for (int it = 0; it < 400; ++it) {
        const Eigen::VectorXd n = d.apply(OperatorTag::Plus, h);
        mu = d.integral(n) / d.integral(h);
        h = n / d.integral(n);
    }
    o.check(std::abs(mu - g.mu_star) <= 1e-6, "leading eigenvalue mu*");
    o.check(h.minCoeff() > 0, "h_+ > 0");
    o.check(maxabs(d.apply(OperatorTag::Plus, h) - mu * h) <= 1e-6, "eigen-residual");
}

void scan(Outcome& o) {
    const auto m = markov4();
    // oracle: B_1 eigenvalues strictly inside 1/lambda < |z| < 1
    std::vector<cplx> known;
    for (const auto& e : resonance_set(m, WeightMode::SRB, 0).spectrum.eigenvalues)
        if (std::abs(e.value) > 0.5 + 1e-9 && std::abs(e.value) < 1 - 1e-9) known.push_back(e.value);
    o.check(known.size() == 1, "one oracle resonance in the annulus");
    const ScanGrid sg{-1, 1, -1, 1, 41, 41};
    const auto res = resolvent_scan(piecewise(m), ScanForm::Markov, sg, 64);
    const double h = 2.0 / 40;
    o.check(res.candidates.size() == known.size(), "candidate count " + std::to_string(res.candidates.size()));
    for (const auto& c : res.candidates) {
        bool near = false;
        for (const auto& z : known) near = near || std::abs(c.nu - z) <= h;
        o.check(near, "spurious candidate");
    }
    if (!res.candidates.empty()) {
        std::ostringstream ss;
        ss << "candidate " << res.candidates[0].nu.real() << "+" << res.candidates[0].nu.imag() << "i";
        o.info = ss.str() + ", max drift " + sci(res.max_drift);
    }
    o.check(res.max_drift < 1e-3, "N vs 2N drift " + std::to_string(res.max_drift));
}

void mixing(Outcome& o) {
    const auto m = lsv();
    const auto g = mme_grid(m);
    const std::vector<std::function<double(double)>> fs{
        [](double x) { return x; }, [](double x) { return std::cos(5 * x); }, [](double x) { return x * x - 0.3; }};
    std::vector<Eigen::VectorXd> phis{Eigen::VectorXd::Ones(g.grid.size())};
    for (const auto& f : fs) phis.push_back(g.grid.sample(f));
    for (const auto& f : fs) phis.push_back(g.grid.sample([&](double x) { return f(m(x)); }));
    const auto a = mme_iterate(g, phis, max_mme_iterations);
    o.check(a.converged, "mu_n converged");
    o.check(std::abs(a.history[0].back() - 1.0) <= 1e-12, "mu_n(1) -> 1");
    for (std::size_t i = 0; i < fs.size(); ++i)
        o.check(std::abs(a.pair(phis[1 + fs.size() + i]) - a.pair(phis[1 + i])) <= 1e-7, "mu(phi o f) = mu(phi)");

    const auto nu = mme_functional(g);
    std::mt19937_64 rng(7);
    for (const auto& w : random_words(rng, m.size(), 40, 14))
        o.check(cylinder_bound(m, g, nu, w).pass, "cylinder bound");
    const auto r = mixing_rate_check(g, nu, g.grid.sample([](double x) { return 0.1 + x - 2 * x * x; }),
                                     g.grid.sample([](double x) { return x * x * x - 0.5 * x; }), 60);
    o.check(r.fit.has_value(), "mixing fit " + r.note);
    o.info = "rate " + std::to_string(r.rate);
    o.check(r.rate <= 0.55, "mixing rate " + std::to_string(r.rate));
}

void torus(Outcome& o) {
    const TorusAutomorphism cat{2, 1, 1, 1};
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 10; ++t) {
        FourierPoly phi, psi;
        for (int a = -4; a <= 4; ++a)
            for (int b = -4; b <= 4; ++b) {
                if (u(rng) > 0.3) phi[{a, b}] = {u(rng), u(rng)};
                if (u(rng) > 0.3) psi[{a, b}] = {u(rng), u(rng)};
            }
        phi.erase({0, 0});
        psi.erase({0, 0});
        const auto res = torus_correlation(cat, phi, psi, 40);
        o.check(res.n0 >= 1 && res.n0 <= 40, "finite n0");
        for (int n = res.n0; n <= 40; ++n) o.check(res.trace.C[n] == cplx(0, 0), "C(n) = 0 beyond n0");
        if (res.n0 >= 1) o.check(res.trace.C[res.n0 - 1] != cplx(0, 0), "n0 is sharp");
    }
}

void suite(Outcome& o) {
#ifdef RESLAB_TESTS_PATH
    const std::string cmd = std::string(RESLAB_TESTS_PATH) + " --gtest_brief=1 > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    o.check(WIFEXITED(status) && WEXITSTATUS(status) == 0, "unit suite failed");
#else
    o.check(false, "unit suite path not configured");
#endif
}

} // namespace

int main() {
    criterion("jordan_example", 1, jordan);
    criterion("doubling_resonances", 1, doubling);
    criterion("multiplicity_identity", 30, multiplicity);
    criterion("correlation_decay", 60, decay);
    criterion("quadratic_map_n1024", 120, quadratic);
    criterion("xi_and_plus_operator", 60, [](Outcome& o) {
        xi_affine(o);
        xi_quadratic(o);
    });
    criterion("resolvent_scan", 120, scan);
    criterion("lsv_mme_mixing", 120, mixing);
    criterion("torus_finite_support", 1, torus);
    criterion("invariants_and_properties", 600, suite);
    std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}

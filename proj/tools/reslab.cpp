#include <cstdlib>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reslab/reslab.hpp"

using namespace reslab;
using nlohmann::json;

namespace {

constexpr int exit_validation = 2;
constexpr int exit_numeric = 3;

struct LoadedMap {
    MapSpec map;
    std::string hash;
    std::string type;
};

LoadedMap load_map(const std::string& path) {
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(std::string("invalid JSON in map spec: ") + e.what());
    }
    LoadedMap m{parse_map_spec(j), map_hash(j), j.value("type", "")};
    return m;
}

template <class T>
const T& require_map(const LoadedMap& m, const std::string& cmd, const std::string& kind) {
    if (const T* p = std::get_if<T>(&m.map)) return *p;
    throw InputError(cmd + " requires a " + kind + " map (got " + m.type + ")");
}

PiecewiseMap any_piecewise(const LoadedMap& m) {
    return std::visit([](const auto& x) { return piecewise(x); }, m.map);
}

WeightMode parse_mode(const std::string& s) {
    if (s == "srb") return WeightMode::SRB;
    if (s == "mme") return WeightMode::MME;
    throw InputError("unknown mode '" + s + "' (expected srb or mme)");
}

// "a:b:n" or a single value
struct Range {
    double lo = 0, hi = 0;
    int n = 1;
    double at(int i) const { return n == 1 ? lo : lo + (hi - lo) * i / (n - 1); }
};

Range parse_range(const std::string& s, const std::string& name) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
    auto num = [&](const std::string& t) {
        try {
            std::size_t pos = 0;
            const double v = std::stod(t, &pos);
            if (pos != t.size()) throw std::invalid_argument(t);
            return v;
        } catch (const std::exception&) {
            throw InputError("--" + name + ": cannot parse '" + t + "' as a number");
        }
    };
    if (parts.size() == 1) return {num(parts[0]), num(parts[0]), 1};
    if (parts.size() != 3) throw InputError("--" + name + " must be a value or lo:hi:count");
    const double c = num(parts[2]);
    if (c < 1 || c != std::floor(c) || c > 100000) throw InputError("--" + name + ": count must be an integer in [1, 100000]");
    return {num(parts[0]), num(parts[1]), static_cast<int>(c)};
}

json complex_json(cplx z) { return {{"re", z.real()}, {"im", z.imag()}}; }

struct Common {
    std::string map, out;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--map", c.map, "map spec JSON file")->required();
    sub->add_option("--out", c.out, "output file (default stdout)");
}

// ---------------- subcommands ----------------

std::string cmd_resonances(const Common& c, const std::string& mode_s, int r) {
    const auto lm = load_map(c.map);
    const auto& m = require_map<MarkovAffineMap>(lm, "resonances", "affine_markov");
    const auto mode = parse_mode(mode_s);
    if (r < 0 || r > 12) throw InputError("--r must be in [0, 12]");
    const auto rs = resonance_set(m, mode, r);
    if (rs.cross_check > 1e-6)
        throw NumericError("block union and T_{k,r} spectra disagree by " + csv_number(rs.cross_check));
    json body = to_json(rs.spectrum);
    body["mode"] = mode_s;
    body["k"] = rs.k;
    body["r"] = r;
    body["cross_check"] = rs.cross_check;
    Provenance p{"resonances", lm.hash, {{"mode", mode_s}, {"r", r}}};
    return json_document(p, body);
}

std::string cmd_regions(const Common& c, int samples, int mu2_size) {
    const auto lm = load_map(c.map);
    const auto& m = require_map<SmoothFullBranchMap>(lm, "regions", "smooth_full_branch");
    auto g = gap_params(m);
    const auto est = estimate_mu2(piecewise(m), g, mu2_size);
    g.mu2 = est.mu2;
    const auto R = exclusion_regions(g);
    Provenance p{"regions", lm.hash,
                 {{"grid", samples},
                  {"mu2_size", mu2_size},
                  {"mu_star", g.mu_star},
                  {"Delta", g.Delta},
                  {"Gamma", g.Gamma},
                  {"tau", g.tau},
                  {"essential_bound", g.essential_bound()},
                  {"mu2_estimated", g.mu2},
                  {"A3_intercept", R.A3_intercept()},
                  {"A4_intercept", R.A4_intercept()}}};
    CsvWriter w(p, {"region", "a", "b"});
    for (const auto& line : region_boundaries(R, samples))
        for (auto [a, b] : line.pts) w.row(line.region, a, b);
    return w.str();
}

std::string cmd_xi_scan(const Common& c, const std::string& re_s, const std::string& im_s, double tol, int size) {
    const auto lm = load_map(c.map);
    const auto& m = require_map<SmoothFullBranchMap>(lm, "xi-scan", "smooth_full_branch");
    if (!(tol > 0)) throw InputError("--tol must be positive");
    const auto re = parse_range(re_s, "re"), im = parse_range(im_s, "im");
    const auto g = gap_params(m);
    const auto d = discretize(piecewise(m), chebyshev_layout(piecewise(m), size));
    XiSeries xi{&d, g, {}};
    Provenance p{"xi-scan", lm.hash, {{"re", re_s}, {"im", im_s}, {"tol", tol}, {"size", d.size()}}};
    CsvWriter w(p, {"re", "im", "xi_re", "xi_im", "tail_bound"});
    for (int a = 0; a < re.n; ++a)
        for (int b = 0; b < im.n; ++b) {
            const cplx z(re.at(a), im.at(b));
            const auto v = xi(z, tol);
            w.row(z.real(), z.imag(), v.value.real(), v.value.imag(), v.tail_bound);
        }
    return w.str();
}

std::string cmd_scan(const Common& c, const std::string& form_s, const std::string& re_s, const std::string& im_s,
                     int N, double tol, const std::string& format) {
    const auto lm = load_map(c.map);
    if (std::holds_alternative<MonotoneFullBranchMap>(lm.map))
        throw InputError("scan requires an affine_markov or smooth_full_branch map");
    const auto form = parse_scan_form(form_s);
    const auto re = parse_range(re_s, "re"), im = parse_range(im_s, "im");
    ScanGrid sg{re.lo, re.hi, im.lo, im.hi, re.n, im.n};
    const auto res = resolvent_scan(any_piecewise(lm), form, sg, N, tol);
    Provenance p{"scan", lm.hash, {{"form", form_s}, {"re", re_s}, {"im", im_s}, {"N", N}, {"tol", tol}}};
    if (format == "csv") {
        CsvWriter w(p, {"nu_re", "nu_im", "test_eig_distance", "drift"});
        for (const auto& pt : res.points) w.row(pt.nu.real(), pt.nu.imag(), pt.distance, pt.drift);
        return w.str();
    }
    json cands = json::array(), pts = json::array();
    for (const auto& cd : res.candidates)
        cands.push_back({{"nu_re", cd.nu.real()}, {"nu_im", cd.nu.imag()}, {"test_eig_distance", cd.distance},
                         {"drift", cd.drift}});
    for (const auto& pt : res.points)
        pts.push_back({{"nu_re", pt.nu.real()}, {"nu_im", pt.nu.imag()}, {"test_eig_distance", pt.distance},
                       {"drift", pt.drift}});
    json body{{"form", res.form},       {"annulus", {res.inner, res.outer}}, {"candidates", cands},
              {"points", pts},          {"max_drift", res.max_drift},        {"error_scale", res.error_scale}};
    return json_document(p, body);
}

std::string cmd_correlate(const Common& c, const std::string& phi_s, const std::string& psi_s,
                          const std::string& measure, int n, const std::string& path, const std::string& format) {
    const auto lm = load_map(c.map);
    const auto mode = parse_mode(measure);
    const auto phi = expr::parse(phi_s), psi = expr::parse(psi_s);
    CorrelationTrace tr;
    const auto* affine = std::get_if<MarkovAffineMap>(&lm.map);
    std::string used = path;
    if (used == "auto") used = affine ? "exact" : "quadrature";
    if (used == "exact") {
        if (!affine) throw InputError("the exact path requires an affine_markov map");
        tr = correlation_sequence(*affine, phi, psi, mode, n);
    } else if (used == "quadrature") {
        tr = correlation_sequence(any_piecewise(lm), phi, psi, mode, n, default_correlation_grid(affine != nullptr));
        if (affine) {
            const auto pred = predicted_decay(*affine, mode, 0);
            tr.predicted_ratio = pred.first;
            tr.predicted_jordan = pred.second;
        }
    } else {
        throw InputError("unknown path '" + path + "' (expected auto, exact or quadrature)");
    }
    json fit = nullptr;
    std::string fit_note;
    try {
        const auto f = fit_decay(tr.centered);
        tr.fit = f;
        fit = {{"rho", f.rho}, {"k", f.k}, {"residual", f.residual}, {"n_lo", f.n_lo}, {"n_hi", f.n_hi}};
    } catch (const NumericError& e) {
        fit_note = e.what();
    }
    Provenance p{"correlate", lm.hash,
                 {{"phi", expr::to_string(phi)}, {"psi", expr::to_string(psi)}, {"measure", measure}, {"n", n},
                  {"path", used}}};
    if (format == "csv") {
        CsvWriter w(p, {"n", "C_re", "C_im", "abs", "centered_abs", "predicted_bound"});
        for (int k = 0; k <= n; ++k)
            w.row(k, tr.C[k].real(), tr.C[k].imag(), std::abs(tr.C[k]), std::abs(tr.centered[k]), tr.predicted_bound(k));
        return w.str();
    }
    json body{{"fit", fit},
              {"mean_phi", complex_json(tr.mean_phi)},
              {"mean_psi", complex_json(tr.mean_psi)},
              {"predicted_ratio", std::isfinite(tr.predicted_ratio) ? json(tr.predicted_ratio) : json(nullptr)},
              {"predicted_jordan", tr.predicted_jordan}};
    if (!fit_note.empty()) body["fit_note"] = fit_note;
    return json_document(p, body);
}

MonotoneFullBranchMap as_monotone(const LoadedMap& lm) {
    if (const auto* m = std::get_if<MonotoneFullBranchMap>(&lm.map)) return *m;
    if (const auto* s = std::get_if<SmoothFullBranchMap>(&lm.map)) {
        std::vector<Expr> f;
        for (const auto& b : s->branches) f.push_back(b.f);
        return make_monotone(s->p, f);
    }
    throw InputError("mme requires a monotone_full_branch or smooth_full_branch map");
}

std::string cmd_mme(const Common& c, const std::vector<std::string>& phis_s, int n, const std::string& mix_h,
                    const std::string& mix_phi, int cylinders, int max_len, unsigned seed, const std::string& format) {
    const auto lm = load_map(c.map);
    const auto m = as_monotone(lm);
    const auto g = mme_grid(m);
    std::vector<Expr> phis;
    std::vector<Eigen::VectorXd> samples;
    for (const auto& s : phis_s) {
        phis.push_back(expr::parse(s));
        samples.push_back(g.grid.sample([&](double x) { return expr::eval(phis.back(), x); }));
    }
    const auto a = mme_iterate(g, samples, n);
    json params{{"phi", phis_s}, {"n", n}};
    if (!mix_h.empty()) params["mixing"] = {mix_h, mix_phi};
    if (cylinders > 0) params["cylinders"] = {{"count", cylinders}, {"max_len", max_len}, {"seed", seed}};
    Provenance p{"mme", lm.hash, params};
    if (format == "csv") {
        std::vector<std::string> cols{"n"};
        for (std::size_t i = 0; i < phis.size(); ++i) cols.push_back("mu_" + std::to_string(i));
        CsvWriter w(p, cols);
        for (int k = 0; k <= a.n; ++k) {
            std::vector<std::string> row{std::to_string(k)};
            for (const auto& h : a.history) row.push_back(csv_number(h[k]));
            w.row_values(row);
        }
        return w.str();
    }
    json obs = json::array();
    for (std::size_t i = 0; i < phis.size(); ++i)
        obs.push_back({{"phi", expr::to_string(phis[i])}, {"mu", a.history[i].back()}});
    json body{{"converged", a.converged}, {"iterations", a.n}, {"tol", a.tol}, {"observables", obs},
              {"mass", a.mass.back()}, {"h_top", std::log(static_cast<double>(m.size()))}};
    if (!mix_h.empty() || cylinders > 0) {
        const auto nu = mme_functional(g);
        if (!mix_h.empty()) {
            if (mix_phi.empty()) throw InputError("--mix-h needs --mix-phi");
            const auto eh = expr::parse(mix_h), ep = expr::parse(mix_phi);
            const auto r = mixing_rate_check(g, nu, g.grid.sample([&](double x) { return expr::eval(eh, x); }),
                                             g.grid.sample([&](double x) { return expr::eval(ep, x); }), n);
            json mj{{"target", r.target}, {"rate", r.fit ? json(r.rate) : json(nullptr)}, {"pass", r.pass},
                    {"bound_constant", r.bound_constant}, {"identically_zero", r.identically_zero}};
            if (!r.note.empty()) mj["note"] = r.note;
            body["mixing"] = mj;
        }
        if (cylinders > 0) {
            if (max_len < 1 || max_len > 20) throw InputError("--max-len must be in [1, 20]");
            std::mt19937_64 rng(seed);
            json arr = json::array();
            bool all = true;
            for (const auto& w : random_words(rng, m.size(), cylinders, max_len)) {
                const auto cb = cylinder_bound(m, g, nu, w);
                all = all && cb.pass;
                arr.push_back({{"word", w}, {"a", cb.p.a}, {"b", cb.p.b}, {"measure", cb.measure},
                               {"bound", cb.bound}, {"pass", cb.pass}});
            }
            body["cylinders"] = {{"all_pass", all}, {"samples", arr}};
        }
    }
    return json_document(p, body);
}

std::string cmd_entropy(const Common& c) {
    const auto lm = load_map(c.map);
    json body;
    if (const auto* m = std::get_if<MarkovAffineMap>(&lm.map)) {
        body = {{"h_top", topological_entropy(*m)}, {"method", "log perron root of the transition matrix"}};
    } else {
        const int N = std::visit([](const auto& x) { return x.size(); }, lm.map);
        body = {{"h_top", std::log(static_cast<double>(N))}, {"method", "log N for full-branch maps"}};
    }
    return json_document({"entropy", lm.hash, json::object()}, body);
}

std::string cmd_discretize(const Common& c, const std::string& op_s, const std::string& basis_s, int N, int order,
                           double essential) {
    const auto lm = load_map(c.map);
    const auto op = parse_operator(op_s);
    const auto basis = parse_basis(basis_s);
    if (N < 1 || N > 4096) throw InputError("--N must be in [1, 4096]");
    const auto ds = discretize_spectrum(any_piecewise(lm), op, basis, N, essential, 1e-4, order);
    json body = to_json(ds.report);
    json conv = json::array();
    for (std::size_t i = 0; i < ds.drift.size(); ++i)
        conv.push_back({{"drift", ds.drift[i]}, {"converged", static_cast<bool>(ds.converged[i])}});
    body["convergence"] = conv;
    body["basis"] = ds.basis;
    body["operator"] = ds.op;
    body["size"] = ds.size;
    body["size_fine"] = ds.size_fine;
    Provenance p{"discretize", lm.hash,
                 {{"op", op_s}, {"basis", basis_s}, {"N", N}, {"order", order}, {"essential_bound", essential}}};
    return json_document(p, body);
}

int fail(int code, const std::string& kind, const std::string& msg, const json& extra = nullptr) {
    json e{{"error", msg}, {"kind", kind}, {"exit_code", code}};
    if (!extra.is_null()) e["details"] = extra;
    std::cerr << e.dump() << std::endl;
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transfer-operator resonances for one-dimensional maps"};
    app.set_version_flag("--version", std::string(tool_name) + " " + tool_version);
    app.require_subcommand(1);

    Common common;
    std::string mode, form = "mean_zero", re, im = "0", phi, psi, path = "auto", format, op, basis, mix_h, mix_phi;
    int r = -1, grid = 400, mu2_size = 128, N = 0, n = 0, order = 16, size = 128, cylinders = 0, max_len = 12;
    double tol = 1e-8, tol_scan = 1e-3, essential = 0.0;
    unsigned seed = 1;
    std::vector<std::string> phis;

    auto* res = app.add_subcommand("resonances", "resonance set of an affine Markov map");
    add_common(res, common);
    res->add_option("--mode", mode, "srb or mme")->required();
    res->add_option("--r", r, "number of degree blocks beyond the first")->required();

    auto* reg = app.add_subcommand("regions", "exclusion-region boundary polylines (CSV)");
    add_common(reg, common);
    reg->add_option("--grid", grid, "samples per boundary curve")->check(CLI::Range(2, 100000));
    reg->add_option("--mu2-size", mu2_size, "basis size for the mu_2 estimate")->check(CLI::Range(8, 2048));

    auto* xs = app.add_subcommand("xi-scan", "Xi(z) on a grid (CSV)");
    add_common(xs, common);
    xs->add_option("--re", re, "lo:hi:count or value")->required();
    xs->add_option("--im", im, "lo:hi:count or value");
    xs->add_option("--tol", tol, "tail bound target");
    xs->add_option("--size", size, "basis size of the discretized L_+")->check(CLI::Range(8, 4096));

    auto* sc = app.add_subcommand("scan", "finite-rank resolvent eigenvalue scan");
    add_common(sc, common);
    sc->add_option("--form", form, "mean_zero or markov");
    sc->add_option("--re", re, "lo:hi:count")->required();
    sc->add_option("--im", im, "lo:hi:count")->required();
    sc->add_option("--N", N, "basis size")->required()->check(CLI::Range(4, 2048));
    sc->add_option("--tol", tol_scan, "candidate threshold on |eig - 1|");
    sc->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

    auto* co = app.add_subcommand("correlate", "correlation sequence and decay fit");
    add_common(co, common);
    co->add_option("--phi", phi, "observable phi")->required();
    co->add_option("--psi", psi, "observable psi")->required();
    co->add_option("--measure", mode, "srb or mme")->required();
    co->add_option("--n", n, "last lag")->required()->check(CLI::Range(0, max_correlation_n));
    co->add_option("--path", path, "auto, exact or quadrature");
    co->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

    auto* mm = app.add_subcommand("mme", "measure of maximal entropy by iterating N^-n L_0^n");
    add_common(mm, common);
    mm->add_option("--phi", phis, "observable (repeatable)")->required();
    mm->add_option("--n", n, "maximal iteration")->required()->check(CLI::Range(1, max_mme_iterations));
    mm->add_option("--mix-h", mix_h, "h for the mixing-rate check");
    mm->add_option("--mix-phi", mix_phi, "phi for the mixing-rate check");
    mm->add_option("--cylinders", cylinders, "number of random cylinders to test")->check(CLI::Range(0, 1000));
    mm->add_option("--max-len", max_len, "maximal cylinder length");
    mm->add_option("--seed", seed, "seed for cylinder sampling");
    mm->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

    auto* en = app.add_subcommand("entropy", "topological entropy");
    add_common(en, common);

    auto* di = app.add_subcommand("discretize", "spectrum of a discretized transfer operator");
    add_common(di, common);
    di->add_option("--op", op, "L0, L1, L2, L3, star, plus or compact")->required();
    di->add_option("--basis", basis, "ulam or chebyshev")->required();
    di->add_option("--N", N, "basis size")->required();
    di->add_option("--order", order, "Chebyshev nodes per panel")->check(CLI::Range(2, 64));
    di->add_option("--essential", essential, "eigenvalues below this modulus are flagged untrusted");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(exit_validation, "usage", e.what());
    }

    try {
        std::string out;
        if (*res) out = cmd_resonances(common, mode, r);
        else if (*reg) out = cmd_regions(common, grid, mu2_size);
        else if (*xs) out = cmd_xi_scan(common, re, im, tol, size);
        else if (*sc) out = cmd_scan(common, form, re, im, N, tol_scan, format.empty() ? "csv" : format);
        else if (*co) out = cmd_correlate(common, phi, psi, mode, n, path, format.empty() ? "csv" : format);
        else if (*mm) out = cmd_mme(common, phis, n, mix_h, mix_phi, cylinders, max_len, seed, format.empty() ? "json" : format);
        else if (*en) out = cmd_entropy(common);
        else if (*di) out = cmd_discretize(common, op, basis, N, order, essential);
        write_output(common.out, out, std::cout);
    } catch (const ValidationError& e) {
        return fail(exit_validation, "validation", e.what(), to_json(e.report));
    } catch (const InputError& e) {
        return fail(exit_validation, "validation", e.what());
    } catch (const std::invalid_argument& e) {
        return fail(exit_validation, "validation", e.what());
    } catch (const std::exception& e) {
        return fail(exit_numeric, "numeric", e.what());
    }
    return 0;
}

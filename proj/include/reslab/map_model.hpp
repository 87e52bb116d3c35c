#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "error.hpp"
#include "expr.hpp"

namespace reslab {

inline constexpr double knot_tol = 1e-10;

// MME: weights lambda^{-k}; SRB: lambda^{-(k-1)} |lambda|^{-1}.
enum class WeightMode { MME, SRB };
inline constexpr int validation_grid = 1024;

struct ValidationCheck {
    std::string name;
    bool pass = true;
    bool required = true;
    double worst_point = std::numeric_limits<double>::quiet_NaN();
    double measured = std::numeric_limits<double>::quiet_NaN();
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;

    bool ok() const {
        return std::all_of(checks.begin(), checks.end(),
                           [](const ValidationCheck& c) { return c.pass || !c.required; });
    }
    std::vector<ValidationCheck> failures() const {
        std::vector<ValidationCheck> out;
        for (const auto& c : checks)
            if (!c.pass && c.required) out.push_back(c);
        return out;
    }
    const ValidationCheck* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
    void add(ValidationCheck c) { checks.push_back(std::move(c)); }
};

inline nlohmann::json to_json(const ValidationReport& r) {
    nlohmann::json arr = nlohmann::json::array();
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    for (const auto& c : r.checks)
        arr.push_back({{"check", c.name},
                       {"pass", c.pass},
                       {"required", c.required},
                       {"worst_point", num(c.worst_point)},
                       {"measured", num(c.measured)},
                       {"detail", c.detail}});
    return {{"ok", r.ok()}, {"checks", arr}};
}

class ValidationError : public InputError {
public:
    explicit ValidationError(ValidationReport r)
        : InputError(describe(r)), report(std::move(r)) {}
    ValidationReport report;

private:
    static std::string describe(const ValidationReport& r) {
        std::string s = "map validation failed:";
        for (const auto& c : r.failures()) {
            s += " " + c.name;
            if (std::isfinite(c.measured)) s += " (measured " + expr::format_number(c.measured) + ")";
            if (!c.detail.empty()) s += " [" + c.detail + "]";
            s += ";";
        }
        return s;
    }
};

// Index of the partition interval containing x, half-open [p_i, p_{i+1}) with the last closed.
inline int locate_interval(const std::vector<double>& p, double x) {
    const int n = static_cast<int>(p.size()) - 1;
    auto it = std::upper_bound(p.begin(), p.end(), x);
    int i = static_cast<int>(it - p.begin()) - 1;
    return std::clamp(i, 0, n - 1);
}

inline ValidationCheck check_partition(const std::vector<double>& p) {
    ValidationCheck c{"partition", true};
    c.measured = 0;
    if (p.size() < 2) {
        c.pass = false;
        c.detail = "need at least two points";
        return c;
    }
    if (std::abs(p.front()) > knot_tol || std::abs(p.back() - 1) > knot_tol) {
        c.pass = false;
        c.detail = "partition must start at 0 and end at 1";
    }
    for (std::size_t i = 0; i + 1 < p.size(); ++i)
        if (!(p[i] < p[i + 1])) {
            c.pass = false;
            c.worst_point = p[i];
            c.detail = "partition not strictly increasing";
        }
    return c;
}

// ---------------- piecewise affine Markov maps ----------------

struct MarkovAffineMap {
    std::vector<double> p;       // N+1 points
    std::vector<double> slope;   // lambda_j
    std::vector<double> offset;  // f(x) = slope_j x + offset_j on I_j
    std::vector<double> q;       // f(p_j^+)
    Eigen::MatrixXi A;           // A(i,j) = 1 iff I_j is inside f(I_i)

    int size() const { return static_cast<int>(slope.size()); }
    double length(int i) const { return p[i + 1] - p[i]; }
    int branch_of(double x) const { return locate_interval(p, x); }
    double operator()(double x) const {
        const int j = branch_of(x);
        return slope[j] * x + offset[j];
    }
    std::pair<double, double> image(int j) const {
        const double a = slope[j] * p[j] + offset[j], b = slope[j] * p[j + 1] + offset[j];
        return {std::min(a, b), std::max(a, b)};
    }
    double lambda_min() const {
        double m = std::numeric_limits<double>::infinity();
        for (double s : slope) m = std::min(m, std::abs(s));
        return m;
    }
    // g_j(y) = (y - q_j)/lambda_j + p_j
    double inverse(int j, double y) const {
        const auto [lo, hi] = image(j);
        if (y < lo - knot_tol || y > hi + knot_tol)
            throw std::out_of_range("point " + expr::format_number(y) + " outside image of branch " +
                                    std::to_string(j));
        return (y - q[j]) / slope[j] + p[j];
    }
};

inline MarkovAffineMap make_affine(std::vector<double> p, std::vector<double> slope,
                                   std::vector<double> offset) {
    MarkovAffineMap m;
    m.p = std::move(p);
    m.slope = std::move(slope);
    m.offset = std::move(offset);
    const int n = m.size();
    m.q.resize(n);
    m.A = Eigen::MatrixXi::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        m.q[j] = m.slope[j] * m.p[j] + m.offset[j];
        const auto [lo, hi] = m.image(j);
        for (int i = 0; i < n; ++i)
            if (m.p[i] >= lo - knot_tol && m.p[i + 1] <= hi + knot_tol) m.A(j, i) = 1;
    }
    return m;
}

inline ValidationReport validate_map(const MarkovAffineMap& m) {
    ValidationReport r;
    r.add(check_partition(m.p));
    const int n = m.size();

    ValidationCheck exp{"expansion"};
    exp.measured = m.lambda_min();
    for (int j = 0; j < n; ++j)
        if (std::abs(m.slope[j]) == exp.measured) exp.worst_point = m.p[j];
    exp.pass = exp.measured > 1.0;
    if (!exp.pass) exp.detail = "|slope| must exceed 1";
    r.add(exp);

    ValidationCheck inside{"image_in_unit_interval"};
    inside.measured = 0;
    for (int j = 0; j < n; ++j) {
        const auto [lo, hi] = m.image(j);
        const double excess = std::max(-lo, hi - 1.0);
        if (excess > inside.measured) {
            inside.measured = excess;
            inside.worst_point = m.p[j];
        }
    }
    inside.pass = inside.measured <= 1e-12;
    r.add(inside);

    ValidationCheck markov{"markov"};
    markov.measured = 0;
    for (int j = 0; j < n; ++j) {
        const auto [lo, hi] = m.image(j);
        for (double e : {lo, hi}) {
            double d = std::numeric_limits<double>::infinity();
            for (double pk : m.p) d = std::min(d, std::abs(e - pk));
            if (d > markov.measured) {
                markov.measured = d;
                markov.worst_point = m.p[j];
            }
        }
    }
    markov.pass = markov.measured <= knot_tol;
    if (!markov.pass) markov.detail = "branch image endpoint is not a partition point";
    r.add(markov);

    ValidationCheck book{"image_length"};
    book.measured = 0;
    for (int j = 0; j < n; ++j) {
        double covered = 0;
        for (int i = 0; i < n; ++i)
            if (m.A(j, i)) covered += m.length(i);
        const double err = std::abs(covered - std::abs(m.slope[j]) * m.length(j));
        if (err > book.measured) {
            book.measured = err;
            book.worst_point = m.p[j];
        }
    }
    book.pass = book.measured <= 1e-12 || !markov.pass;
    r.add(book);
    return r;
}

// ---------------- smooth and monotone full-branch maps ----------------

struct Branch {
    Expr f, fp, fpp;
    Expr D, Dp;  // distortion (1/f')' and its derivative
};

inline Branch make_branch(const Expr& f) {
    Branch b;
    b.f = f;
    b.fp = expr::derivative(f);
    b.fpp = expr::derivative(b.fp);
    b.D = expr::derivative(expr::div(expr::constant(1), b.fp));
    b.Dp = expr::derivative(b.D);
    return b;
}

// Value of e at x in [lo, hi]; an indeterminate value at a point is replaced by the one-sided limit.
inline double eval_inward(const Expr& e, double x, double lo, double hi) {
    double v = expr::eval(e, x);
    if (std::isfinite(v)) return v;
    const double mid = 0.5 * (lo + hi);
    for (double h : {1e-14, 1e-12, 1e-10}) {
        const double y = x + (mid - x) * h / std::max(std::abs(mid - x), 1e-300) * (hi - lo);
        v = expr::eval(e, y);
        if (std::isfinite(v)) return v;
    }
    return v;
}

// Safeguarded Newton for a strictly monotone branch on [lo, hi].
inline double invert_monotone(const Branch& b, double lo, double hi, double y) {
    double flo = expr::eval(b.f, lo) - y, fhi = expr::eval(b.f, hi) - y;
    if (flo == 0) return lo;
    if (fhi == 0) return hi;
    const double span = std::abs(flo - fhi);
    if (flo * fhi > 0) {
        if (std::min(std::abs(flo), std::abs(fhi)) <= knot_tol * std::max(1.0, span))
            return std::abs(flo) < std::abs(fhi) ? lo : hi;
        throw std::out_of_range("point " + expr::format_number(y) + " outside branch image");
    }
    const bool increasing = fhi > flo;
    double x = lo + (hi - lo) * (-flo) / (fhi - flo);
    for (int it = 0; it < 200; ++it) {
        const double fx = expr::eval(b.f, x) - y;
        if (fx == 0) return x;
        if ((fx > 0) == increasing) hi = x;
        else lo = x;
        const double d = expr::eval(b.fp, x);
        double nx = x - fx / d;
        if (!(nx > lo && nx < hi) || !std::isfinite(nx)) nx = 0.5 * (lo + hi);
        if (std::abs(nx - x) <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x)) ||
            hi - lo <= 4 * std::numeric_limits<double>::epsilon()) {
            x = nx;
            break;
        }
        x = nx;
    }
    if (std::abs(expr::eval(b.f, x) - y) > 1e-13)
        throw NumericError("branch inverse did not converge at y=" + expr::format_number(y));
    return x;
}

struct SmoothFullBranchMap {
    std::vector<double> p;
    std::vector<Branch> branches;
    bool full_branch = false;
    bool concavity_checked = false;  // D_f >= 0 and f' continuous at knots

    int size() const { return static_cast<int>(branches.size()); }
    int branch_of(double x) const { return locate_interval(p, x); }
    double operator()(double x) const { return expr::eval(branches[branch_of(x)].f, x); }
    double fprime(int j, double x) const { return eval_inward(branches[j].fp, x, p[j], p[j + 1]); }
    double distortion(int j, double x) const { return eval_inward(branches[j].D, x, p[j], p[j + 1]); }
    double inverse(int j, double y) const { return invert_monotone(branches[j], p[j], p[j + 1], y); }
};

struct MonotoneFullBranchMap {
    std::vector<double> p;
    std::vector<Branch> branches;
    std::vector<int> sign;  // +1 increasing, -1 decreasing
    double Lambda = 0;      // sup |f'|

    int size() const { return static_cast<int>(branches.size()); }
    int branch_of(double x) const { return locate_interval(p, x); }
    double operator()(double x) const { return expr::eval(branches[branch_of(x)].f, x); }
    double fprime(int j, double x) const { return eval_inward(branches[j].fp, x, p[j], p[j + 1]); }
    double inverse(int j, double y) const { return invert_monotone(branches[j], p[j], p[j + 1], y); }
};

inline std::vector<double> branch_sample(double a, double b, int n = validation_grid) {
    std::vector<double> xs;
    xs.reserve(n + 2);
    xs.push_back(a);
    for (int k = 0; k < n; ++k) xs.push_back(a + (b - a) * (k + 0.5) / n);
    xs.push_back(b);
    return xs;
}

inline ValidationCheck check_finite(const std::vector<double>& p, const std::vector<Branch>& br) {
    ValidationCheck c{"finite"};
    c.measured = 0;
    for (std::size_t j = 0; j < br.size(); ++j)
        for (double x : branch_sample(p[j], p[j + 1]))
            if (!std::isfinite(eval_inward(br[j].f, x, p[j], p[j + 1])) ||
                !std::isfinite(eval_inward(br[j].fp, x, p[j], p[j + 1]))) {
                c.pass = false;
                c.worst_point = x;
                c.detail = "branch or derivative not finite";
                return c;
            }
    return c;
}

inline ValidationReport validate_map(const SmoothFullBranchMap& m) {
    ValidationReport r;
    r.add(check_partition(m.p));
    if (!r.ok()) return r;
    r.add(check_finite(m.p, m.branches));
    if (!r.ok()) return r;

    ValidationCheck exp{"expansion"};
    exp.measured = std::numeric_limits<double>::infinity();
    double fmax = -exp.measured;
    for (int j = 0; j < m.size(); ++j)
        for (double x : branch_sample(m.p[j], m.p[j + 1])) {
            const double d = m.fprime(j, x);
            if (d < exp.measured) {
                exp.measured = d;
                exp.worst_point = x;
            }
            fmax = std::max(fmax, d);
        }
    exp.pass = exp.measured > 1.0;
    exp.detail = "f' range [" + expr::format_number(exp.measured) + ", " + expr::format_number(fmax) + "]";
    r.add(exp);

    ValidationCheck fb{"full_branch"};
    fb.measured = 0;
    for (int j = 0; j < m.size(); ++j) {
        const double e0 = std::abs(expr::eval(m.branches[j].f, m.p[j]));
        const double e1 = std::abs(expr::eval(m.branches[j].f, m.p[j + 1]) - 1.0);
        if (std::max(e0, e1) > fb.measured) {
            fb.measured = std::max(e0, e1);
            fb.worst_point = e0 > e1 ? m.p[j] : m.p[j + 1];
        }
    }
    fb.pass = fb.measured <= knot_tol;
    if (!fb.pass) fb.detail = "branches must map onto [0,1] preserving orientation";
    r.add(fb);

    ValidationCheck conc{"distortion_nonnegative", true, false};
    conc.measured = std::numeric_limits<double>::infinity();
    bool nonzero = false;
    for (int j = 0; j < m.size(); ++j)
        for (double x : branch_sample(m.p[j], m.p[j + 1])) {
            const double d = m.distortion(j, x);
            if (d < conc.measured) {
                conc.measured = d;
                conc.worst_point = x;
            }
            if (d != 0) nonzero = true;
        }
    conc.pass = conc.measured >= 0 && nonzero;
    if (!nonzero) conc.detail = "distortion vanishes identically";
    r.add(conc);

    ValidationCheck knots{"knot_derivative_continuity", true, false};
    knots.measured = 0;
    for (int j = 1; j < m.size(); ++j) {
        const double jump = std::abs(m.fprime(j - 1, m.p[j]) - m.fprime(j, m.p[j]));
        if (jump >= knots.measured) {
            knots.measured = jump;
            knots.worst_point = m.p[j];
        }
    }
    knots.pass = knots.measured <= 1e-8;
    r.add(knots);
    return r;
}

inline ValidationReport validate_map(const MonotoneFullBranchMap& m) {
    ValidationReport r;
    r.add(check_partition(m.p));
    if (!r.ok()) return r;
    r.add(check_finite(m.p, m.branches));
    if (!r.ok()) return r;

    ValidationCheck mono{"monotone"};
    mono.measured = std::numeric_limits<double>::infinity();
    for (int j = 0; j < m.size(); ++j) {
        const int s = expr::eval(m.branches[j].f, m.p[j + 1]) >= expr::eval(m.branches[j].f, m.p[j]) ? 1 : -1;
        for (double x : branch_sample(m.p[j], m.p[j + 1])) {
            const double d = s * m.fprime(j, x);
            if (d < mono.measured) {
                mono.measured = d;
                mono.worst_point = x;
            }
        }
    }
    mono.pass = mono.measured > 0;
    if (!mono.pass) mono.detail = "derivative changes sign or vanishes";
    r.add(mono);

    ValidationCheck fb{"full_branch"};
    fb.measured = 0;
    for (int j = 0; j < m.size(); ++j) {
        const double a = expr::eval(m.branches[j].f, m.p[j]), b = expr::eval(m.branches[j].f, m.p[j + 1]);
        const double err = std::max(std::abs(std::min(a, b)), std::abs(std::max(a, b) - 1.0));
        if (err > fb.measured) {
            fb.measured = err;
            fb.worst_point = m.p[j];
        }
    }
    fb.pass = fb.measured <= knot_tol;
    if (!fb.pass) fb.detail = "branch image must be (0,1)";
    r.add(fb);
    return r;
}

inline SmoothFullBranchMap make_smooth(std::vector<double> p, const std::vector<Expr>& f) {
    SmoothFullBranchMap m;
    m.p = std::move(p);
    for (const auto& e : f) m.branches.push_back(make_branch(e));
    return m;
}

inline MonotoneFullBranchMap make_monotone(std::vector<double> p, const std::vector<Expr>& f) {
    MonotoneFullBranchMap m;
    m.p = std::move(p);
    for (const auto& e : f) m.branches.push_back(make_branch(e));
    for (int j = 0; j < m.size(); ++j) {
        const bool inc = expr::eval(m.branches[j].f, m.p[j + 1]) >= expr::eval(m.branches[j].f, m.p[j]);
        m.sign.push_back(inc ? 1 : -1);
        for (double x : branch_sample(m.p[j], m.p[j + 1]))
            m.Lambda = std::max(m.Lambda, std::abs(m.fprime(j, x)));
    }
    return m;
}

// Validated constructors: throw ValidationError when a required check fails.
template <class Map>
Map checked(Map m) {
    auto r = validate_map(m);
    if (!r.ok()) throw ValidationError(std::move(r));
    if constexpr (std::is_same_v<Map, SmoothFullBranchMap>) {
        m.full_branch = true;
        m.concavity_checked = r.find("distortion_nonnegative")->pass &&
                              r.find("knot_derivative_continuity")->pass;
    }
    return m;
}

// ---------------- JSON map specs ----------------

using MapSpec = std::variant<MarkovAffineMap, SmoothFullBranchMap, MonotoneFullBranchMap>;

inline MapSpec parse_map_spec(const nlohmann::json& j) {
    if (!j.is_object()) throw InputError("map spec must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "type" && it.key() != "partition" && it.key() != "branches" && it.key() != "name")
            throw InputError("unknown field '" + it.key() + "'");
    for (const char* key : {"type", "partition", "branches"})
        if (!j.contains(key)) throw InputError(std::string("missing field '") + key + "'");
    if (!j["type"].is_string()) throw InputError("field 'type' must be a string");
    const std::string type = j["type"];
    if (type != "affine_markov" && type != "smooth_full_branch" && type != "monotone_full_branch")
        throw InputError("unknown map type '" + type + "'");

    if (!j["partition"].is_array()) throw InputError("field 'partition' must be an array");
    std::vector<double> p;
    for (const auto& v : j["partition"]) {
        if (!v.is_number()) throw InputError("partition entries must be numbers");
        p.push_back(v.get<double>());
    }
    if (p.size() < 2) throw InputError("partition needs at least two points");
    for (std::size_t i = 0; i + 1 < p.size(); ++i)
        if (!(p[i] < p[i + 1])) throw InputError("partition is not sorted");
    if (p.front() < -knot_tol || p.back() > 1 + knot_tol) throw InputError("partition must lie in [0,1]");

    if (!j["branches"].is_array()) throw InputError("field 'branches' must be an array");
    const auto& bj = j["branches"];
    if (bj.size() != p.size() - 1)
        throw InputError("branch count mismatch: " + std::to_string(bj.size()) + " branches for " +
                         std::to_string(p.size() - 1) + " intervals");

    std::vector<Expr> exprs;
    std::vector<double> slope, offset;
    for (std::size_t b = 0; b < bj.size(); ++b) {
        const auto& br = bj[b];
        if (!br.is_object()) throw InputError("branch " + std::to_string(b) + " must be an object");
        for (auto it = br.begin(); it != br.end(); ++it)
            if (it.key() != "slope" && it.key() != "offset" && it.key() != "expr")
                throw InputError("unknown field '" + it.key() + "' in branch " + std::to_string(b));
        if (br.contains("expr")) {
            if (br.contains("slope") || br.contains("offset"))
                throw InputError("branch " + std::to_string(b) + " mixes expr with slope/offset");
            if (!br["expr"].is_string()) throw InputError("branch expr must be a string");
            exprs.push_back(expr::parse(br["expr"].get<std::string>()));
        } else {
            if (!br.contains("slope") || !br["slope"].is_number())
                throw InputError("branch " + std::to_string(b) + " needs numeric 'slope' or 'expr'");
            const double s = br["slope"].get<double>();
            const double o = br.contains("offset") ? br["offset"].get<double>() : 0.0;
            exprs.push_back(expr::raw(Op::Add, expr::raw(Op::Mul, expr::constant(s), expr::var()),
                                      expr::constant(o)));
        }
    }

    if (type == "affine_markov") {
        for (const auto& e : exprs) {
            const auto d = expr::derivative(e);
            if (expr::depends_on_x(d)) throw InputError("affine branch expression is not affine: " + expr::to_string(e));
            slope.push_back(expr::eval(d, 0.0));
            offset.push_back(expr::eval(e, 0.0));
        }
        return checked(make_affine(p, slope, offset));
    }
    if (type == "smooth_full_branch") return checked(make_smooth(p, exprs));
    return checked(make_monotone(p, exprs));
}

inline MapSpec parse_map_spec(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(std::string("invalid JSON: ") + e.what());
    }
    return parse_map_spec(j);
}

inline ValidationReport validate_map(const MapSpec& m) {
    return std::visit([](const auto& x) { return validate_map(x); }, m);
}

} // namespace reslab

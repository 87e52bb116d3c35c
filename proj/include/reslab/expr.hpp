#pragma once

#include <charconv>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

// Arithmetic expressions in one variable x.
//
// Grammar:
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?          (right associative)
//   primary := number | 'x' | func '(' expr ')' | '(' expr ')'
//   func    := sin | cos | exp | log | sqrt

namespace reslab {

enum class Op { Const, Var, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Exp, Log, Sqrt };

struct Node;
using Expr = std::shared_ptr<const Node>;

struct Node {
    Op op;
    double value = 0.0;
    Expr a, b;
};

namespace expr {

inline bool is_unary_fn(Op op) {
    return op == Op::Sin || op == Op::Cos || op == Op::Exp || op == Op::Log || op == Op::Sqrt;
}

inline Expr raw(Op op, Expr a = nullptr, Expr b = nullptr) {
    return std::make_shared<const Node>(Node{op, 0.0, std::move(a), std::move(b)});
}

inline Expr constant(double v) {
    return std::make_shared<const Node>(Node{Op::Const, v, nullptr, nullptr});
}

inline Expr var() { return raw(Op::Var); }

inline bool is_const(const Expr& e, double v) { return e->op == Op::Const && e->value == v; }

inline bool depends_on_x(const Expr& e) {
    if (e->op == Op::Var) return true;
    if (e->op == Op::Const) return false;
    return (e->a && depends_on_x(e->a)) || (e->b && depends_on_x(e->b));
}

inline double eval(const Expr& e, double x) {
    switch (e->op) {
    case Op::Const: return e->value;
    case Op::Var: return x;
    case Op::Neg: return -eval(e->a, x);
    case Op::Add: return eval(e->a, x) + eval(e->b, x);
    case Op::Sub: return eval(e->a, x) - eval(e->b, x);
    case Op::Mul: return eval(e->a, x) * eval(e->b, x);
    case Op::Div: return eval(e->a, x) / eval(e->b, x);
    case Op::Pow: {
        const double base = eval(e->a, x);
        if (e->b->op == Op::Const) {
            const double p = e->b->value;
            if (p == 2.0) return base * base;
            if (p == 1.0) return base;
        }
        return std::pow(base, eval(e->b, x));
    }
    case Op::Sin: return std::sin(eval(e->a, x));
    case Op::Cos: return std::cos(eval(e->a, x));
    case Op::Exp: return std::exp(eval(e->a, x));
    case Op::Log: return std::log(eval(e->a, x));
    case Op::Sqrt: return std::sqrt(eval(e->a, x));
    }
    return std::nan("");
}

// Simplifying constructors, used by differentiation.
inline Expr fold_or(Op op, const Expr& a, const Expr& b, Expr fallback) {
    if (a->op == Op::Const && (!b || b->op == Op::Const)) {
        Node n{op, 0.0, a, b};
        const double v = eval(std::make_shared<const Node>(n), 0.0);
        if (std::isfinite(v)) return constant(v);
    }
    return fallback;
}

inline Expr neg(const Expr& a) {
    if (a->op == Op::Const) return constant(-a->value);
    if (a->op == Op::Neg) return a->a;
    return raw(Op::Neg, a);
}

inline Expr add(const Expr& a, const Expr& b) {
    if (is_const(a, 0)) return b;
    if (is_const(b, 0)) return a;
    if (b->op == Op::Neg) return fold_or(Op::Sub, a, b->a, raw(Op::Sub, a, b->a));
    return fold_or(Op::Add, a, b, raw(Op::Add, a, b));
}

inline Expr sub(const Expr& a, const Expr& b) {
    if (is_const(b, 0)) return a;
    if (is_const(a, 0)) return neg(b);
    if (b->op == Op::Neg) return add(a, b->a);
    return fold_or(Op::Sub, a, b, raw(Op::Sub, a, b));
}

inline Expr mul(const Expr& a, const Expr& b) {
    if (is_const(a, 0) || is_const(b, 0)) return constant(0);
    if (is_const(a, 1)) return b;
    if (is_const(b, 1)) return a;
    if (is_const(a, -1)) return neg(b);
    if (is_const(b, -1)) return neg(a);
    if (a->op == Op::Neg) return neg(mul(a->a, b));
    if (b->op == Op::Neg) return neg(mul(a, b->a));
    if (b->op == Op::Const && a->op != Op::Const) return mul(b, a);
    return fold_or(Op::Mul, a, b, raw(Op::Mul, a, b));
}

inline Expr div(const Expr& a, const Expr& b) {
    if (is_const(a, 0)) return constant(0);
    if (is_const(b, 1)) return a;
    if (a->op == Op::Neg) return neg(div(a->a, b));
    return fold_or(Op::Div, a, b, raw(Op::Div, a, b));
}

inline Expr pow(const Expr& a, const Expr& b) {
    if (is_const(b, 0)) return constant(1);
    if (is_const(b, 1)) return a;
    return fold_or(Op::Pow, a, b, raw(Op::Pow, a, b));
}

inline Expr fn(Op op, const Expr& a) { return fold_or(op, a, nullptr, raw(op, a)); }

inline Expr derivative(const Expr& e) {
    switch (e->op) {
    case Op::Const: return constant(0);
    case Op::Var: return constant(1);
    case Op::Neg: return neg(derivative(e->a));
    case Op::Add: return add(derivative(e->a), derivative(e->b));
    case Op::Sub: return sub(derivative(e->a), derivative(e->b));
    case Op::Mul:
        return add(mul(derivative(e->a), e->b), mul(e->a, derivative(e->b)));
    case Op::Div: {
        auto num = sub(mul(derivative(e->a), e->b), mul(e->a, derivative(e->b)));
        return div(num, pow(e->b, constant(2)));
    }
    case Op::Pow: {
        if (!depends_on_x(e->b)) {
            auto expo = e->b->op == Op::Const ? constant(e->b->value - 1) : sub(e->b, constant(1));
            return mul(mul(e->b, pow(e->a, expo)), derivative(e->a));
        }
        auto t = add(mul(derivative(e->b), fn(Op::Log, e->a)),
                     div(mul(e->b, derivative(e->a)), e->a));
        return mul(e, t);
    }
    case Op::Sin: return mul(fn(Op::Cos, e->a), derivative(e->a));
    case Op::Cos: return neg(mul(fn(Op::Sin, e->a), derivative(e->a)));
    case Op::Exp: return mul(e, derivative(e->a));
    case Op::Log: return div(derivative(e->a), e->a);
    case Op::Sqrt: return div(derivative(e->a), mul(constant(2), e));
    }
    return constant(0);
}

// ---- printing ----

inline int precedence(const Expr& e) {
    switch (e->op) {
    case Op::Add:
    case Op::Sub: return 1;
    case Op::Mul:
    case Op::Div: return 2;
    case Op::Neg: return 3;
    case Op::Pow: return 4;
    case Op::Const: return e->value < 0 || std::signbit(e->value) ? 3 : 5;
    default: return 5;
    }
}

inline std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline const char* fn_name(Op op) {
    switch (op) {
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    default: return "?";
    }
}

inline std::string to_string(const Expr& e);

inline std::string wrap(const Expr& e, bool parens) {
    return parens ? "(" + to_string(e) + ")" : to_string(e);
}

inline std::string to_string(const Expr& e) {
    const int p = precedence(e);
    switch (e->op) {
    case Op::Const: return format_number(e->value);
    case Op::Var: return "x";
    case Op::Neg: return "-" + wrap(e->a, precedence(e->a) < 4);
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
        const char* sym = e->op == Op::Add ? " + " : e->op == Op::Sub ? " - " : e->op == Op::Mul ? "*" : "/";
        return wrap(e->a, precedence(e->a) < p) + sym + wrap(e->b, precedence(e->b) <= p || precedence(e->b) == 3);
    }
    case Op::Pow: return wrap(e->a, precedence(e->a) <= 4) + "^" + wrap(e->b, precedence(e->b) < 5);
    default: return std::string(fn_name(e->op)) + "(" + to_string(e->a) + ")";
    }
}

// ---- parsing ----

class Parser {
public:
    explicit Parser(std::string_view text) : s_(text) {}

    Expr parse() {
        auto e = parse_expr();
        skip();
        if (i_ != s_.size()) throw ParseError("unexpected '" + std::string(1, s_[i_]) + "'", i_);
        return e;
    }

private:
    std::string_view s_;
    std::size_t i_ = 0;

    void skip() {
        while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
    }
    bool accept(char c) {
        skip();
        if (i_ < s_.size() && s_[i_] == c) {
            ++i_;
            return true;
        }
        return false;
    }

    Expr parse_expr() {
        auto e = parse_term();
        for (;;) {
            if (accept('+')) e = raw(Op::Add, e, parse_term());
            else if (accept('-')) e = raw(Op::Sub, e, parse_term());
            else return e;
        }
    }
    Expr parse_term() {
        auto e = parse_unary();
        for (;;) {
            if (accept('*')) e = raw(Op::Mul, e, parse_unary());
            else if (accept('/')) e = raw(Op::Div, e, parse_unary());
            else return e;
        }
    }
    Expr parse_unary() {
        if (accept('-')) {
            auto a = parse_unary();
            if (a->op == Op::Const) return constant(-a->value);
            return raw(Op::Neg, a);
        }
        return parse_power();
    }
    Expr parse_power() {
        auto base = parse_primary();
        if (accept('^')) return raw(Op::Pow, base, parse_unary());
        return base;
    }
    Expr parse_primary() {
        skip();
        if (i_ >= s_.size()) throw ParseError("unexpected end of expression", i_);
        const char c = s_[i_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (accept('(')) {
            auto e = parse_expr();
            if (!accept(')')) throw ParseError("expected ')'", i_);
            return e;
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            const std::size_t start = i_;
            while (i_ < s_.size() && std::isalpha(static_cast<unsigned char>(s_[i_]))) ++i_;
            const std::string_view name = s_.substr(start, i_ - start);
            if (name == "x") return var();
            Op op;
            if (name == "sin") op = Op::Sin;
            else if (name == "cos") op = Op::Cos;
            else if (name == "exp") op = Op::Exp;
            else if (name == "log") op = Op::Log;
            else if (name == "sqrt") op = Op::Sqrt;
            else throw ParseError("unknown identifier '" + std::string(name) + "'", start);
            if (!accept('(')) throw ParseError("expected '(' after " + std::string(name), i_);
            auto arg = parse_expr();
            if (!accept(')')) throw ParseError("expected ')'", i_);
            return raw(op, arg);
        }
        throw ParseError("unexpected '" + std::string(1, c) + "'", i_);
    }
    Expr parse_number() {
        const std::size_t start = i_;
        while (i_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[i_])) || s_[i_] == '.')) ++i_;
        if (i_ < s_.size() && (s_[i_] == 'e' || s_[i_] == 'E')) {
            std::size_t j = i_ + 1;
            if (j < s_.size() && (s_[j] == '+' || s_[j] == '-')) ++j;
            if (j < s_.size() && std::isdigit(static_cast<unsigned char>(s_[j]))) {
                i_ = j;
                while (i_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_]))) ++i_;
            }
        }
        double v = 0;
        auto res = std::from_chars(s_.data() + start, s_.data() + i_, v);
        if (res.ec != std::errc() || res.ptr != s_.data() + i_)
            throw ParseError("malformed number", start);
        return constant(v);
    }
};

inline Expr parse(std::string_view text) { return Parser(text).parse(); }

// Polynomial coefficients (ascending powers) when e is a polynomial in x.
inline std::optional<std::vector<double>> to_polynomial(const Expr& e, int max_degree = 16) {
    using Poly = std::vector<double>;
    auto trim = [](Poly p) {
        while (p.size() > 1 && p.back() == 0.0) p.pop_back();
        return p;
    };
    if (!depends_on_x(e)) return Poly{eval(e, 0.0)};
    auto lin = [&](const Poly& a, const Poly& b, double s) {
        Poly r(std::max(a.size(), b.size()), 0.0);
        for (std::size_t i = 0; i < a.size(); ++i) r[i] += a[i];
        for (std::size_t i = 0; i < b.size(); ++i) r[i] += s * b[i];
        return trim(r);
    };
    auto times = [](const Poly& a, const Poly& b) {
        Poly r(a.size() + b.size() - 1, 0.0);
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
        return r;
    };
    std::optional<Poly> pa, pb;
    switch (e->op) {
    case Op::Var: return Poly{0.0, 1.0};
    case Op::Neg:
        if (!(pa = to_polynomial(e->a, max_degree))) return std::nullopt;
        return lin(Poly{0.0}, *pa, -1.0);
    case Op::Add:
    case Op::Sub:
        pa = to_polynomial(e->a, max_degree);
        pb = to_polynomial(e->b, max_degree);
        if (!pa || !pb) return std::nullopt;
        return lin(*pa, *pb, e->op == Op::Add ? 1.0 : -1.0);
    case Op::Mul: {
        pa = to_polynomial(e->a, max_degree);
        pb = to_polynomial(e->b, max_degree);
        if (!pa || !pb) return std::nullopt;
        auto r = trim(times(*pa, *pb));
        if (static_cast<int>(r.size()) - 1 > max_degree) return std::nullopt;
        return r;
    }
    case Op::Div: {
        if (depends_on_x(e->b)) return std::nullopt;
        pa = to_polynomial(e->a, max_degree);
        if (!pa) return std::nullopt;
        const double d = eval(e->b, 0.0);
        for (double& c : *pa) c /= d;
        return pa;
    }
    case Op::Pow: {
        if (depends_on_x(e->b)) return std::nullopt;
        const double p = eval(e->b, 0.0);
        if (p < 0 || p != std::floor(p) || p > max_degree) return std::nullopt;
        pa = to_polynomial(e->a, max_degree);
        if (!pa) return std::nullopt;
        Poly r{1.0};
        for (int i = 0; i < static_cast<int>(p); ++i) r = trim(times(r, *pa));
        if (static_cast<int>(r.size()) - 1 > max_degree) return std::nullopt;
        return r;
    }
    default: return std::nullopt;
    }
}

} // namespace expr
} // namespace reslab

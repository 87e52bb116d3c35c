#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "reslab/expr.hpp"

using namespace reslab;

namespace {

double central_difference(const Expr& e, double x, double h = 1e-6) {
    return (expr::eval(e, x + h) - expr::eval(e, x - h)) / (2 * h);
}

} // namespace

TEST(Expr, ParsesAndEvaluates) {
    auto e = expr::parse("4*x - x^2");
    EXPECT_DOUBLE_EQ(expr::eval(e, 0.5), 1.75);
    EXPECT_DOUBLE_EQ(expr::eval(expr::parse("2^3^2"), 0), 512.0);
    EXPECT_DOUBLE_EQ(expr::eval(expr::parse("-x^2"), 3), -9.0);
    EXPECT_DOUBLE_EQ(expr::eval(expr::parse("2^-1"), 0), 0.5);
    EXPECT_DOUBLE_EQ(expr::eval(expr::parse("sqrt(x)*exp(0)+log(1)"), 4), 2.0);
    EXPECT_DOUBLE_EQ(expr::eval(expr::parse("1e-3*x"), 2), 2e-3);
}

TEST(Expr, SyntaxErrorsReportPosition) {
    try {
        expr::parse("4*x + * 2");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.position, 6u);
    }
    EXPECT_THROW(expr::parse("foo(x)"), ParseError);
    EXPECT_THROW(expr::parse("(x"), ParseError);
    EXPECT_THROW(expr::parse("x)"), ParseError);
    EXPECT_THROW(expr::parse(""), ParseError);
}

TEST(Expr, DerivativeOfQuadraticPrintsSimplified) {
    auto d = expr::derivative(expr::parse("4*x - x^2"));
    EXPECT_EQ(expr::to_string(d), "4 - 2*x");
    auto D = expr::derivative(expr::div(expr::constant(1), d));
    EXPECT_EQ(expr::to_string(D), "2/(4 - 2*x)^2");
    for (double x : {0.0, 0.3, 0.9}) EXPECT_NEAR(expr::eval(D, x), 2 / std::pow(4 - 2 * x, 2), 1e-15);
}

TEST(Expr, AffineBranchHasZeroDistortion) {
    auto d = expr::derivative(expr::parse("3*x"));
    EXPECT_EQ(expr::to_string(d), "3");
    auto D = expr::derivative(expr::div(expr::constant(1), d));
    EXPECT_EQ(expr::to_string(D), "0");
}

TEST(Expr, DerivativeMatchesFiniteDifferences) {
    const char* cases[] = {"x + x^2", "sin(3*x)*exp(x)", "log(1 + x)/(2 + x)", "sqrt(1 + x^3)",
                           "x^x", "cos(x)^2 - 1/(1 + x)", "2*x + 0.05*sin(6.283185307179586*x)"};
    for (const char* s : cases) {
        auto e = expr::parse(s);
        auto d = expr::derivative(e);
        for (int i = 0; i < 32; ++i) {
            const double x = 0.05 + 0.9 * i / 31.0;
            const double fd = central_difference(e, x);
            EXPECT_NEAR(expr::eval(d, x), fd, 1e-6 * std::max(1.0, std::abs(fd))) << s << " at " << x;
        }
    }
    EXPECT_EQ(expr::to_string(expr::derivative(expr::parse("x + x^2"))), "1 + 2*x");
}

TEST(Expr, PrintParseRoundTrip) {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    const char* cases[] = {"4*x - x^2 - 2", "x*(1 + 2^0.5*x^0.5)", "-(x - 1)^3/(2 - x)", "2^(-x)",
                           "x - (1 - x)", "x/(2*x + 1)", "exp(-x^2)*sin(x)", "(-2)^2*x", "x*-3.25e-7",
                           "1/(1/(1/x))"};
    for (const char* s : cases) {
        auto e = expr::parse(s);
        auto d = expr::derivative(e);
        for (const auto& t : {e, d}) {
            auto back = expr::parse(expr::to_string(t));
            for (int i = 0; i < 64; ++i) {
                const double x = u(rng);
                const double a = expr::eval(t, x), b = expr::eval(back, x);
                EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, std::abs(a))) << expr::to_string(t);
            }
        }
    }
}

TEST(Expr, PolynomialExtraction) {
    auto c = expr::to_polynomial(expr::parse("(x - 0.5)^2*3 + x/2"));
    ASSERT_TRUE(c.has_value());
    ASSERT_EQ(c->size(), 3u);
    EXPECT_DOUBLE_EQ((*c)[0], 0.75);
    EXPECT_DOUBLE_EQ((*c)[1], -2.5);
    EXPECT_DOUBLE_EQ((*c)[2], 3.0);
    EXPECT_FALSE(expr::to_polynomial(expr::parse("sin(x)")).has_value());
    EXPECT_FALSE(expr::to_polynomial(expr::parse("1/x")).has_value());
}

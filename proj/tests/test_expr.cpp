#include "doctest.h"

#include "formlab/expr.hpp"

#include <cmath>
#include <random>

using namespace formlab;

namespace {

Expr random_expr(std::mt19937& rng, int depth) {
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 9);
    std::uniform_int_distribution<int> var(1, 3);
    std::uniform_int_distribution<int> num(-4, 4);
    switch (pick(rng)) {
        case 0: return Expr(Rational(num(rng), 3));
        case 1: return Expr::var(var(rng));
        case 2: return random_expr(rng, depth - 1) + random_expr(rng, depth - 1);
        case 3: return random_expr(rng, depth - 1) - random_expr(rng, depth - 1);
        case 4: return random_expr(rng, depth - 1) * random_expr(rng, depth - 1);
        case 5: return random_expr(rng, depth - 1) / (Expr(3) + cos(random_expr(rng, depth - 1)));
        case 6: return pow(random_expr(rng, depth - 1), 2 + depth % 2);
        case 7: return sin(random_expr(rng, depth - 1));
        case 8: return exp(Rational(1, 3) * random_expr(rng, depth - 1));
        default: return sqrt(Expr(2) + sin(random_expr(rng, depth - 1)));
    }
}

}  // namespace

TEST_CASE("parser accepts the grammar") {
    const Expr e = parse("1 + x3^2*sin(x1)");
    CHECK(evaluate(e, std::vector<double>{0.5, 0.0, 2.0}) == doctest::Approx(1 + 4 * std::sin(0.5)));
    const Expr q = parse("(1+0.25*cos(x1))");
    CHECK(evaluate(q, std::vector<double>{0.0}) == doctest::Approx(1.25));
    CHECK(same(parse("0.25"), Expr(Rational(1, 4))));
    CHECK(evaluate(parse("2^3 - 8/4 + (0-x1)"), std::vector<double>{1.0}) == doctest::Approx(5.0));
    CHECK(evaluate(parse("exp(log(x2)) + sqrt(x1)"), std::vector<double>{4.0, 3.0}) == doctest::Approx(5.0));
}

TEST_CASE("parser errors carry offsets") {
    try {
        parse("x1 +");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 4);
    }
    CHECK_THROWS_AS(parse("y1 + 2"), ParseError);
    CHECK_THROWS_WITH(parse("foo(x1)"), doctest::Contains("unknown identifier"));
    CHECK_THROWS_AS(parse("(x1 + 2"), ParseError);
    CHECK_THROWS_AS(parse("x1 ^ x2"), ParseError);
    CHECK_THROWS_AS(parse("x1 2"), ParseError);
    CHECK_THROWS_AS(parse("-x1"), ParseError);
}

TEST_CASE("printer round trip") {
    std::mt19937 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const Expr e = random_expr(rng, 4);
        const std::string s = to_string(e);
        const Expr back = parse(s);
        CHECK(to_string(back) == s);
        const std::vector<double> x{0.3, -0.7, 1.1};
        const double a = evaluate(e, x);
        const double b = evaluate(back, x);
        if (std::isfinite(a)) CHECK(b == doctest::Approx(a).epsilon(1e-12));
    }
}

TEST_CASE("derivative examples") {
    CHECK(evaluate(differentiate(parse("x1^2"), 1), std::vector<double>{3.0}) == doctest::Approx(6.0));
    CHECK(differentiate(parse("sin(x1)"), 2).is_zero());
    const Expr d = differentiate(parse("1 + 0.5*x3^2"), 3);
    CHECK(evaluate(d, std::vector<double>{0, 0, 0.7}) == doctest::Approx(0.7));
}

TEST_CASE("derivatives agree with central differences") {
    std::mt19937 rng(1234);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const Expr e = random_expr(rng, 4);
        std::vector<double> x{u(rng), u(rng), u(rng)};
        for (int axis = 1; axis <= 3; ++axis) {
            double exact = 0.0;
            double fd = 0.0;
            try {
                exact = evaluate(differentiate(e, axis), x);
                const double h = 1e-5;
                auto xp = x;
                auto xm = x;
                xp[axis - 1] += h;
                xm[axis - 1] -= h;
                fd = (evaluate(e, xp) - evaluate(e, xm)) / (2 * h);
            } catch (const std::domain_error&) {
                continue;
            }
            if (!std::isfinite(exact) || std::abs(exact) > 1e6) continue;
            CHECK(std::abs(exact - fd) <= 1e-7 * std::max(1.0, std::abs(exact)));
            ++checked;
        }
    }
    CHECK(checked > 500);
}

TEST_CASE("product and chain rules on random trees") {
    std::mt19937 rng(77);
    const std::vector<double> x{0.2, 0.4, -0.3};
    for (int trial = 0; trial < 100; ++trial) {
        const Expr a = random_expr(rng, 3);
        const Expr b = random_expr(rng, 3);
        const double lhs = evaluate(differentiate(a * b, 2), x);
        const double rhs = evaluate(differentiate(a, 2) * b + a * differentiate(b, 2), x);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
        const double c1 = evaluate(differentiate(sin(a), 1), x);
        const double c2 = evaluate(cos(a) * differentiate(a, 1), x);
        CHECK(c1 == doctest::Approx(c2).epsilon(1e-10));
        const double l1 = evaluate(differentiate(Expr(3) * a - b, 3), x);
        const double l2 = evaluate(Expr(3) * differentiate(a, 3) - differentiate(b, 3), x);
        CHECK(l1 == doctest::Approx(l2).epsilon(1e-10));
    }
}

TEST_CASE("taylor coefficients in the normal variable") {
    auto t = taylor_in_normal(parse("(1+x3)^2"), 3, 2);
    REQUIRE(t.size() == 3);
    CHECK(same(t[0], Expr(1)));
    CHECK(same(t[1], Expr(2)));
    CHECK(same(t[2], Expr(1)));

    t = taylor_in_normal(parse("exp(x3)"), 3, 3);
    CHECK(same(t[0], Expr(1)));
    CHECK(same(t[1], Expr(1)));
    CHECK(same(t[2], Expr(Rational(1, 2))));
    CHECK(same(t[3], Expr(Rational(1, 6))));

    t = taylor_in_normal(parse("1 + (0.1*cos(x1))*x3^3"), 3, 3);
    CHECK(same(t[0], Expr(1)));
    CHECK(t[1].is_zero());
    CHECK(t[2].is_zero());
    CHECK(evaluate(t[3], std::vector<double>{0.5, 0, 0}) == doctest::Approx(0.1 * std::cos(0.5)));

    // polynomial of degree 4 reproduced exactly
    t = taylor_in_normal(parse("2 - x3 + 3*x3^2*x1 + x3^4/5"), 3, 6);
    CHECK(same(t[0], Expr(2)));
    CHECK(same(t[1], Expr(-1)));
    CHECK(evaluate(t[2], std::vector<double>{2.0}) == doctest::Approx(6.0));
    CHECK(t[3].is_zero());
    CHECK(same(t[4], Expr(Rational(1, 5))));
    CHECK(t[5].is_zero());
    CHECK(t[6].is_zero());

    CHECK_THROWS_AS(taylor_in_normal(parse("1/x3"), 3, 2), std::domain_error);
    CHECK_THROWS_AS(taylor_in_normal(parse("log(x3)"), 3, 1), std::domain_error);
}

TEST_CASE("evaluation domain errors") {
    CHECK_THROWS_AS(evaluate(parse("log(0-1)"), std::vector<double>{}), std::domain_error);
    CHECK_THROWS_AS(evaluate(parse("sqrt(x1)"), std::vector<double>{-1.0}), std::domain_error);
    CHECK_THROWS_AS(evaluate(parse("1/x1"), std::vector<double>{0.0}), std::domain_error);
}

TEST_CASE("structural queries") {
    const Expr e = parse("x1*x4 + sin(x2)");
    CHECK(max_variable(e) == 4);
    CHECK(depends_on(e, 2));
    CHECK_FALSE(depends_on(e, 3));
    const Expr s = substitute(e, 4, Expr(0));
    CHECK_FALSE(depends_on(s, 4));
    CHECK(node_count(parse("x1 + x1")) <= 3);
}

#include "doctest.h"
#include "test_support.hpp"

using namespace formlab;
using formlab::testing::random_form;
using formlab::testing::random_square_metric;

namespace {

FiberForm<Rational> dx(int n, std::vector<int> axes) { return FiberForm<Rational>::basis(MultiIndex(n, std::move(axes))); }

}  // namespace

TEST_CASE("multi-index validation") {
    CHECK_THROWS_AS(MultiIndex(3, {2, 1}), std::invalid_argument);
    CHECK_THROWS_AS(MultiIndex(3, {0}), std::invalid_argument);
    CHECK_THROWS_AS(MultiIndex(3, {4}), std::invalid_argument);
    CHECK(MultiIndex::all(5, 2).size() == 10);
    CHECK(MultiIndex(4, {2, 4}).str() == "(2,4)");
    const auto all = MultiIndex::all(4, 2);
    for (std::size_t r = 0; r < all.size(); ++r) CHECK(all[r].rank() == static_cast<int>(r));
}

TEST_CASE("complement") {
    auto c = complement(MultiIndex(3, {3}));
    CHECK(c.index == MultiIndex(3, {1, 2}));
    CHECK(c.sign == 1);
    c = complement(MultiIndex(3, {2}));
    CHECK(c.index == MultiIndex(3, {1, 3}));
    CHECK(c.sign == -1);
    c = complement(MultiIndex(4, {1, 2}));
    CHECK(c.index == MultiIndex(4, {3, 4}));
    CHECK(c.sign == 1);

    for (int n = 1; n <= 5; ++n) {
        for (int k = 0; k <= n; ++k) {
            for (const auto& i : MultiIndex::all(n, k)) {
                const auto a = complement(i);
                const auto b = complement(a.index);
                CHECK(b.index == i);
                CHECK(a.sign * b.sign == ((k * (n - k)) % 2 == 0 ? 1 : -1));
            }
        }
    }
}

TEST_CASE("wedge") {
    CHECK(wedge(dx(3, {1}), dx(3, {2})).coeff(MultiIndex(3, {1, 2})) == 1);
    CHECK(wedge(dx(3, {2}), dx(3, {1})).coeff(MultiIndex(3, {1, 2})) == -1);
    auto s = dx(3, {1}) + dx(3, {2});
    auto w = wedge(s, dx(3, {2}));
    CHECK(w.coeff(MultiIndex(3, {1, 2})) == 1);
    CHECK(w.terms().size() == 1);
    CHECK_THROWS_AS(wedge(dx(3, {1, 2}), dx(3, {1, 3})), std::invalid_argument);

    std::mt19937 rng(7);
    for (int n = 3; n <= 5; ++n) {
        for (int k = 0; k <= n; ++k) {
            for (int m = 0; k + m <= n; ++m) {
                auto a = random_form(n, k, rng);
                auto b = random_form(n, m, rng);
                auto ab = wedge(a, b);
                auto ba = wedge(b, a);
                if ((k * m) % 2 == 1) ba = Rational(-1) * ba;
                CHECK((ab - ba).is_zero());
            }
        }
    }
}

TEST_CASE("contraction") {
    std::vector<Rational> e1{1, 0, 0}, e2{0, 1, 0};
    auto w = dx(3, {1, 2});
    CHECK(contract(e1, w).coeff(MultiIndex(3, {2})) == 1);
    CHECK(contract(e2, w).coeff(MultiIndex(3, {1})) == -1);
    CHECK_THROWS_WITH(contract(e1, FiberForm<Rational>(3, 0)), "contract: cannot contract 0-form");

    std::mt19937 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 4;
        auto g = random_square_metric(n, rng);
        auto xi = random_form(n, 1, rng);
        std::vector<Rational> xv;
        for (int a = 1; a <= n; ++a) xv.push_back(xi.coeff(MultiIndex(n, {a})));
        auto xs = sharp(g, xv);
        auto om = random_form(n, 2, rng);
        auto lhs = contract(xs, wedge(xi, om)) + wedge(xi, contract(xs, om));
        CHECK((lhs - gram_inner(g, xi, xi) * om).is_zero());

        // antiderivation rule
        auto a = random_form(n, 1, rng);
        auto b = random_form(n, 2, rng);
        auto l = contract(xs, wedge(a, b));
        auto r = wedge(contract(xs, a), b) - wedge(a, contract(xs, b));
        CHECK((l - r).is_zero());
    }
}

TEST_CASE("gram inner product") {
    auto flat = PointMetric<Rational>::identity(3);
    CHECK(gram_inner(flat, dx(3, {1, 2}), dx(3, {1, 2})) == 1);
    CHECK(gram_inner(flat, dx(3, {1, 2}), dx(3, {1, 3})) == 0);
    const Rational s(2, 7);
    Matrix<Rational> g{{1, 0, 0}, {0, 1, 0}, {0, 0, 1 + s}};
    CHECK(gram_inner(PointMetric<Rational>(g), dx(3, {3}), dx(3, {3})) == Rational(7, 9));
    CHECK_THROWS_AS(gram_inner(flat, dx(3, {1}), dx(3, {1, 2})), std::invalid_argument);

    std::mt19937 rng(3);
    auto gm = random_square_metric(4, rng);
    for (int k = 0; k <= 4; ++k) {
        auto a = random_form(4, k, rng);
        auto b = random_form(4, k, rng);
        CHECK(gram_inner(gm, a, b) == gram_inner(gm, b, a));
        if (!a.is_zero()) CHECK(gram_inner(gm, a, a) > 0);
    }
}

TEST_CASE("hodge star defining relation and involution") {
    auto flat = PointMetric<Rational>::identity(3);
    auto s = hodge_star(flat, dx(3, {1}));
    CHECK(s.coeff(MultiIndex(3, {2, 3})) == 1);
    CHECK(s.terms().size() == 1);

    std::mt19937 rng(2024);
    for (int n = 3; n <= 5; ++n) {
        for (int trial = 0; trial < 3; ++trial) {
            auto g = random_square_metric(n, rng);
            for (int k = 0; k <= n; ++k) {
                auto w = random_form(n, k, rng);
                auto eta = random_form(n, k, rng);
                auto sw = hodge_star(g, w);
                auto top = wedge(eta, sw);
                CHECK(top.coeff(MultiIndex::full(n)) == gram_inner(g, eta, w) * g.sqrt_det());
                auto ss = hodge_star(g, sw);
                const Rational sign = (k * (n - k)) % 2 == 0 ? 1 : -1;
                CHECK((ss - sign * w).is_zero());
                CHECK(gram_inner(g, sw, hodge_star(g, eta)) == gram_inner(g, w, eta));
            }
        }
    }
}

TEST_CASE("hodge star rejects degenerate metrics") {
    Matrix<Rational> g{{1, 0}, {0, 0}};
    CHECK_THROWS_AS(PointMetric<Rational>{g}, std::domain_error);
    Matrix<Rational> neg{{1, 0}, {0, -4}};
    CHECK_THROWS_AS(PointMetric<Rational>{neg}, std::domain_error);
    Matrix<Rational> asym{{1, 1}, {0, 1}};
    CHECK_THROWS_AS(PointMetric<Rational>{asym}, std::invalid_argument);
}

TEST_CASE("tangential and normal projections") {
    CHECK((project_tangential(dx(3, {1, 2})) - dx(3, {1, 2})).is_zero());
    CHECK((project_normal(dx(3, {1, 3})) - dx(3, {1, 3})).is_zero());
    CHECK(project_normal(dx(3, {1, 2})).is_zero());

    std::mt19937 rng(5);
    const int n = 4;
    // block metric dx_n^2 + h with a perfect-square determinant
    Matrix<Rational> g{{Rational(9, 4), 0, 0, 0}, {0, Rational(9, 4), 0, 0}, {0, 0, Rational(9, 4), 0}, {0, 0, 0, 1}};
    g[0][1] = g[1][0] = Rational(1, 2);
    auto gm = PointMetric<Rational>(g);
    auto flat = PointMetric<Rational>::identity(n);
    for (int k = 0; k <= n; ++k) {
        auto w = random_form(n, k, rng);
        auto t = project_tangential(w);
        auto nn = project_normal(w);
        CHECK((t + nn - w).is_zero());
        CHECK(project_tangential(nn).is_zero());
        CHECK((project_tangential(t) - t).is_zero());
        CHECK(gram_inner(gm, t, nn) == 0);
        if (k == 2) CHECK((hodge_star(flat, project_normal(w)) - project_tangential(hodge_star(flat, w))).is_zero());
    }
}

TEST_CASE("boundary star matches the pulled-back star") {
    std::mt19937 rng(17);
    for (int n = 3; n <= 5; ++n) {
        Matrix<Rational> g(n, std::vector<Rational>(n, Rational(0)));
        for (int a = 0; a < n - 1; ++a) g[a][a] = Rational(9, 4);
        g[n - 1][n - 1] = 1;
        const auto gm = PointMetric<Rational>(g);
        const auto h = boundary_metric(gm);
        for (int k = 1; k <= n; ++k) {
            auto w = random_form(n, k, rng);
            auto lhs = pullback_boundary(hodge_star(gm, w));
            auto rhs = boundary_hodge_star(h, pullback_boundary(contract_axis(n, w)));
            CHECK((lhs - rhs).is_zero());
        }
    }
}

TEST_CASE("hodge power laws on the conformal family") {
    // g = dx_n^2 + s dx'^2 with s a rational square: *dx_I scales as s^{(n+1)/2-k}
    // (n in I) or s^{(n-1)/2-k} (n not in I), relative to the flat star.
    for (int n = 3; n <= 5; ++n) {
        for (const Rational root : {Rational(3, 2), Rational(2), Rational(5, 7)}) {
            const Rational s = root * root;
            Matrix<Rational> g(n, std::vector<Rational>(n, Rational(0)));
            for (int a = 0; a < n - 1; ++a) g[a][a] = s;
            g[n - 1][n - 1] = 1;
            const auto gm = PointMetric<Rational>(g);
            const auto flat = PointMetric<Rational>::identity(n);
            for (int k = 1; k < n; ++k) {
                for (const auto& i : MultiIndex::all(n, k)) {
                    const int twice = i.contains(n) ? n + 1 - 2 * k : n - 1 - 2 * k;
                    Rational factor = 1;
                    for (int e = 0; e < std::abs(twice); ++e) factor *= root;
                    if (twice < 0) factor = 1 / factor;
                    auto lhs = hodge_star(gm, dx(n, i.axes()));
                    auto rhs = factor * hodge_star(flat, dx(n, i.axes()));
                    CHECK((lhs - rhs).is_zero());
                }
            }
        }
    }
}

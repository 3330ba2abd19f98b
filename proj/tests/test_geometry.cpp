#include "doctest.h"
#include "test_support.hpp"

#include "formlab/geometry.hpp"

#include <cmath>
#include <random>

using namespace formlab;

namespace {

MetricBNF random_polynomial_metric(int n, std::mt19937& rng) {
    std::uniform_int_distribution<int> c(-3, 3);
    std::uniform_int_distribution<int> axis(1, n);
    Matrix<Expr> h(n - 1, std::vector<Expr>(n - 1, Expr(0)));
    for (int a = 0; a < n - 1; ++a) {
        for (int b = a; b < n - 1; ++b) {
            Expr e = a == b ? Expr(1) : Expr(0);
            for (int t = 0; t < 2; ++t) {
                e = e + Expr(Rational(c(rng), 20)) * Expr::var(axis(rng)) * Expr::var(axis(rng));
            }
            e = e + Expr(Rational(c(rng), 20)) * Expr::var(axis(rng));
            h[a][b] = e;
            h[b][a] = e;
        }
    }
    return MetricBNF(n, std::move(h));
}

double max_abs(const DiffOp<Expr>& op, const std::vector<double>& x) {
    double m = 0.0;
    for (const auto& [key, v] : evaluate_op(op, x)) m = std::max(m, std::abs(v));
    return m;
}

std::vector<double> random_point(int n, std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<double> x(n);
    for (auto& v : x) v = u(rng);
    return x;
}

}  // namespace

TEST_CASE("metric construction and JSON") {
    const auto j = nlohmann::json::parse(R"({"n": 3, "h": [["1+x3", "0"], ["0", "1+x3"]]})");
    const MetricBNF g = MetricBNF::from_json(j);
    CHECK(g.dim() == 3);
    CHECK(g.laterally_constant());
    const MetricBNF back = MetricBNF::from_json(g.to_json());
    CHECK(to_string(back.h()[0][0]) == to_string(g.h()[0][0]));
    CHECK_THROWS_AS(MetricBNF::from_json(nlohmann::json::parse(R"({"n": 3, "h": [["1", "x1"], ["0", "1"]]})")),
                    std::invalid_argument);
    CHECK_THROWS_AS(MetricBNF::from_json(nlohmann::json::parse(R"({"n": 3, "h": [["1"]]})")), std::invalid_argument);
    const MetricBNF bad = MetricBNF::conformal(3, parse("1 - 4*x3"));
    CHECK_NOTHROW(bad.check_positive_definite({{0.0, 0.0, 0.1}}));
    CHECK_THROWS_AS(bad.check_positive_definite({{0.0, 0.0, 0.1}, {0.0, 0.0, 0.5}}), std::domain_error);
    CHECK_FALSE(MetricBNF::conformal(3, parse("1 + cos(x1)/4")).laterally_constant());
}

TEST_CASE("christoffel symbols") {
    const Connection flat = christoffel(MetricBNF::flat(4));
    for (int k = 1; k <= 4; ++k) {
        for (int i = 1; i <= 4; ++i) {
            for (int j = 1; j <= 4; ++j) CHECK(flat(k, i, j).is_zero());
        }
    }
    const Connection c = christoffel(MetricBNF::conformal(3, parse("1 + x3")));
    for (double x3 : {0.0, 0.3, 1.7}) {
        const std::vector<double> x{0.1, 0.2, x3};
        CHECK(evaluate(c(1, 1, 3), x) == doctest::Approx(1.0 / (2.0 * (1.0 + x3))));
        CHECK(evaluate(c(1, 3, 1), x) == doctest::Approx(1.0 / (2.0 * (1.0 + x3))));
        CHECK(evaluate(c(3, 1, 1), x) == doctest::Approx(-0.5));
    }
    // h independent of x_n: Gamma vanishes when exactly one index is n
    Matrix<Expr> h{{parse("1 + x1^2/4"), parse("x2/5")}, {parse("x2/5"), parse("2 + x1*x2/7")}};
    const Connection p = christoffel(MetricBNF(3, h));
    for (int a = 1; a <= 3; ++a) {
        for (int b = 1; b <= 3; ++b) {
            for (int d = 1; d <= 3; ++d) {
                const int count = (a == 3) + (b == 3) + (d == 3);
                if (count == 1) CHECK(p(a, b, d).is_zero());
            }
        }
    }
}

TEST_CASE("curvature of a round sphere block") {
    // h = dx1^2 + sin(x1)^2 dx2^2, g = dx3^2 + h
    Matrix<Expr> h{{Expr(1), Expr(0)}, {Expr(0), pow(sin(Expr::var(1)), 2)}};
    const MetricBNF g(3, h);
    const Curvature c = curvature(g);
    std::mt19937 rng(4);
    std::uniform_real_distribution<double> u(0.3, 2.8);
    for (int s = 0; s < 10; ++s) {
        const std::vector<double> x{u(rng), u(rng), u(rng)};
        const double sin2 = std::pow(std::sin(x[0]), 2);
        // R_{1212} = g_11 R^1_{212}; sectional curvature R_{1212} / det h
        CHECK(evaluate(c.R(1, 2, 1, 2), x) / sin2 == doctest::Approx(1.0));
        CHECK(evaluate(c.Ric(1, 1), x) == doctest::Approx(1.0));
        CHECK(evaluate(c.Ric(2, 2), x) == doctest::Approx(sin2));
        CHECK(std::abs(evaluate(c.Ric(3, 3), x)) < 1e-14);
        CHECK(evaluate(c.RicMixed(2, 2), x) == doctest::Approx(1.0));
    }
    const Curvature zero = curvature(MetricBNF::flat(3));
    for (const auto& e : zero.riemann) CHECK(e.is_zero());
}

TEST_CASE("curvature symmetries on random metrics") {
    std::mt19937 rng(31);
    for (int trial = 0; trial < 2; ++trial) {
        const MetricBNF g = random_polynomial_metric(3, rng);
        const Curvature c = curvature(g);
        for (int s = 0; s < 3; ++s) {
            const auto x = random_point(3, rng);
            Evaluator ev(x);
            double bianchi = 0.0;
            double anti = 0.0;
            for (int i = 1; i <= 3; ++i) {
                for (int j = 1; j <= 3; ++j) {
                    for (int k = 1; k <= 3; ++k) {
                        for (int l = 1; l <= 3; ++l) {
                            anti = std::max(anti, std::abs(ev(c.R(i, j, k, l)) + ev(c.R(i, j, l, k))));
                            const double b = ev(c.R(i, j, k, l)) + ev(c.R(i, k, l, j)) + ev(c.R(i, l, j, k));
                            bianchi = std::max(bianchi, std::abs(b));
                        }
                    }
                }
            }
            CHECK(anti < 1e-12);
            CHECK(bianchi < 1e-10);
        }
    }
}

TEST_CASE("flat Laplacians are componentwise scalar") {
    for (int n = 3; n <= 4; ++n) {
        for (int k = 0; k <= n; ++k) {
            for (const auto& lap : {laplacian_dd(MetricBNF::flat(n), k), laplacian_weitzenbock(MetricBNF::flat(n), k)}) {
                const std::size_t dim = MultiIndex::all(n, k).size();
                CHECK(lap.op().terms().size() == dim * static_cast<std::size_t>(n));
                for (const auto& [key, c] : lap.op().terms()) {
                    CHECK(key.out == key.in);
                    REQUIRE(key.deriv.size() == 2);
                    CHECK(key.deriv[0] == key.deriv[1]);
                    CHECK(same(c, Expr(-1)));
                }
            }
        }
    }
    const OperatorBNF l = laplacian_dd(MetricBNF::flat(3), 1);
    for (const auto& row : l.normal_first()) {
        for (const auto& e : row) CHECK(e.is_zero());
    }
    for (int i = 1; i <= 2; ++i) {
        for (const auto& row : l.tangential_first(i)) {
            for (const auto& e : row) CHECK(e.is_zero());
        }
    }
}

TEST_CASE("Weitzenbock assembly agrees with d delta + delta d") {
    std::mt19937 rng(8);
    for (int n = 3; n <= 4; ++n) {
        const MetricBNF g = random_polynomial_metric(n, rng);
        const Connection conn = christoffel(g);
        const Curvature curv = curvature(g, conn);
        for (int k = 0; k <= n; ++k) {
            const DiffOp<Expr> diff = laplacian_dd(g, k).op() - laplacian_weitzenbock(g, k, conn, curv).op();
            for (int s = 0; s < 3; ++s) CHECK(max_abs(diff, random_point(n, rng)) < 1e-8);
        }
    }
}

TEST_CASE("principal symbol is g(xi, xi) times identity") {
    std::mt19937 rng(12);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const MetricBNF g = random_polynomial_metric(4, rng);
    for (int k = 0; k <= 4; ++k) {
        const OperatorBNF lap = laplacian_dd(g, k);
        CHECK_FALSE(lap.has_mixed_normal_terms());
        const auto x = random_point(4, rng);
        const std::vector<double> xi{u(rng), u(rng), u(rng), u(rng)};
        const PointMetric<double> gx = g.at(x);
        double q = 0.0;
        for (int a = 0; a < 4; ++a) {
            for (int b = 0; b < 4; ++b) q += gx.inv()[a][b] * xi[a] * xi[b];
        }
        const auto s = principal_symbol(lap.op(), x, xi);
        for (std::size_t r = 0; r < s.size(); ++r) {
            for (std::size_t c = 0; c < s.size(); ++c) CHECK(std::abs(s[r][c] - (r == c ? q : 0.0)) < 1e-12);
        }
    }
}

TEST_CASE("boundary normal decomposition") {
    // h independent of x_n gives E = 0
    Matrix<Expr> h{{parse("1 + x1^2/4"), parse("x2/5")}, {parse("x2/5"), parse("2 + x1*x2/7")}};
    const MetricBNF g(3, h);
    for (int k = 0; k <= 3; ++k) {
        const OperatorBNF lap = laplacian_dd(g, k);
        for (const auto& row : lap.normal_first()) {
            for (const auto& e : row) CHECK(vanishes(e, 3));
        }
        const auto a2 = lap.a2();
        for (std::size_t r = 0; r < a2.size(); ++r) {
            for (std::size_t c = 0; c < a2.size(); ++c) CHECK(vanishes(a2[r][c] - Expr(r == c ? 1 : 0), 3));
        }
    }
    // conformal perturbation of order l: first-order normal coefficient vanishes to order l-1
    for (int l = 1; l <= 3; ++l) {
        const Expr lam = parse("1/10 + x1/7");
        const MetricBNF g2 = MetricBNF::conformal(3, Expr(1) + lam * pow(Expr::var(3), l));
        for (int k = 0; k <= 3; ++k) {
            const OperatorBNF lap = laplacian_dd(g2, k);
            bool nonzero_at_l_minus_1 = false;
            for (const auto& row : lap.normal_first()) {
                for (const auto& e : row) {
                    const auto t = taylor_in_normal(e, 3, l - 1);
                    for (int j = 0; j < l - 1; ++j) CHECK(vanishes(t[j], 3));
                    if (!vanishes(t[l - 1], 3)) nonzero_at_l_minus_1 = true;
                }
            }
            if (k < 3) CHECK(nonzero_at_l_minus_1);
        }
    }
}

TEST_CASE("Hodge star intertwines Laplacians") {
    std::mt19937 rng(21);
    const MetricBNF g = random_polynomial_metric(3, rng);
    for (int k = 0; k <= 3; ++k) {
        const DiffOp<Expr> lhs = compose(hodge_op(g, k), laplacian_dd(g, k).op());
        const DiffOp<Expr> rhs = compose(laplacian_dd(g, 3 - k).op(), hodge_op(g, k));
        for (int s = 0; s < 3; ++s) CHECK(max_abs(lhs - rhs, random_point(3, rng)) < 1e-8);
    }
}

TEST_CASE("Helmholtz shift") {
    const OperatorBNF lap = laplacian_dd(MetricBNF::flat(3), 1);
    const OperatorBNF shifted = lap.helmholtz_shift(Rational(3, 2));
    const auto z = shifted.zeroth();
    CHECK(same(z[0][0], Expr(Rational(-3, 2))));
    CHECK(z[0][1].is_zero());
}

TEST_CASE("Green's identity") {
    const MetricBNF flat = MetricBNF::flat(3);
    const Box cube{{0, 0, 0}, {1, 1, 1}};
    SUBCASE("harmonic linear function") {
        std::map<MultiIndex, Expr> u{{MultiIndex::empty(3), parse("1 + 2*x1 - x2 + 3*x3")}};
        const GreensResult r = greens_pairing(flat, u, 0, cube, 2);
        CHECK(std::abs(r.lhs) < 1e-12);
        CHECK(std::abs(r.residual) < 1e-8);
        CHECK(r.du_norm2 == doctest::Approx(14.0));
    }
    SUBCASE("interior support") {
        const Expr bump = parse("(x1*(1-x1)*x2*(1-x2)*x3*(1-x3))^2");
        std::map<MultiIndex, Expr> u{{MultiIndex(3, {1}), bump}, {MultiIndex(3, {3}), Expr(2) * bump * Expr::var(1)}};
        const GreensResult r = greens_pairing(flat, u, 1, cube, 8);
        CHECK(std::abs(r.boundary_delta) < 1e-14);
        CHECK(std::abs(r.boundary_d) < 1e-14);
        CHECK(std::abs(r.lhs - r.du_norm2 - r.delta_norm2) < 1e-4 * (r.du_norm2 + r.delta_norm2));
    }
    SUBCASE("random polynomial one-form") {
        std::mt19937 rng(5);
        std::uniform_int_distribution<int> c(-3, 3);
        std::map<MultiIndex, Expr> u;
        for (const auto& i : MultiIndex::all(3, 1)) {
            Expr e;
            for (int t = 0; t < 4; ++t) {
                e = e + Expr(c(rng)) * pow(Expr::var(1 + t % 3), 1 + t % 2) * Expr::var(1 + (t + 1) % 3);
            }
            u[i] = e;
        }
        const GreensResult r = greens_pairing(flat, u, 1, cube, 2);
        CHECK(std::abs(r.residual) < 1e-6);
        CHECK(r.sign_delta_term == 1);
        CHECK(r.sign_d_term == -1);
    }
    SUBCASE("curved metric") {
        Matrix<Expr> h{{parse("1 + x3^2/3 + x1*x3/5"), parse("x2*x3/7")}, {parse("x2*x3/7"), parse("1 + x3/4")}};
        const MetricBNF g(3, h);
        std::map<MultiIndex, Expr> u{{MultiIndex(3, {1, 3}), parse("x1*x2 + x3^2")}, {MultiIndex(3, {2, 3}), parse("x1 - x3*x2")}};
        const GreensResult r = greens_pairing(g, u, 2, cube, 3);
        CHECK(std::abs(r.residual) < 1e-5 * std::max(1.0, std::abs(r.lhs)));
    }
}

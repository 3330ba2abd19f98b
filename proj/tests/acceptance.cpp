// Acceptance run: one PASS/FAIL line per criterion, tolerances and runtime
// budgets fixed below. Exit status 1 if any criterion fails.

#include "formlab/reconstruct.hpp"
#include "formlab/symbol.hpp"

#include <chrono>
#include <climits>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

using namespace formlab;

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

MetricBNF random_polynomial_metric(int n, std::mt19937& rng) {
    std::uniform_int_distribution<int> c(-3, 3);
    std::uniform_int_distribution<int> axis(1, n);
    Matrix<Expr> h(static_cast<std::size_t>(n - 1), std::vector<Expr>(static_cast<std::size_t>(n - 1), Expr(0)));
    for (std::size_t a = 0; a + 1 < static_cast<std::size_t>(n); ++a) {
        for (std::size_t b = a; b + 1 < static_cast<std::size_t>(n); ++b) {
            Expr e = a == b ? Expr(1) : Expr(0);
            for (int t = 0; t < 2; ++t) e = e + Expr(Rational(c(rng), 20)) * Expr::var(axis(rng)) * Expr::var(axis(rng));
            e = e + Expr(Rational(c(rng), 20)) * Expr::var(axis(rng));
            h[a][b] = e;
            h[b][a] = e;
        }
    }
    return MetricBNF(n, std::move(h));
}

std::vector<double> random_point(int n, std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = u(rng);
    return x;
}

// ---------------------------------------------------------------------------

Outcome c1_power_laws() {
    int rows = 0, bad = 0;
    for (int n = 3; n <= 5; ++n) {
        for (int k = 1; k < n; ++k) {
            for (bool normal : {true, false}) {
                ++rows;
                if (conformal_star_exponent(n, k, normal, 4) != Rational(normal ? n + 1 : n - 1, 2) - k) ++bad;
            }
        }
    }
    return {bad == 0, std::to_string(rows - bad) + "/" + std::to_string(rows) + " exponents exact"};
}

Outcome c2_principal_symbol() {
    constexpr double tol = 1e-10;
    std::mt19937 rng(2024);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int s = 0; s < 50; ++s) {
        const int n = 3 + s % 2;
        const MetricBNF g = random_polynomial_metric(n, rng);
        const int k = std::uniform_int_distribution<int>(0, n)(rng);
        const auto x = random_point(n, rng);
        std::vector<double> xi(static_cast<std::size_t>(n));
        for (auto& v : xi) v = 3.0 * u(rng);
        const auto basis = MultiIndex::all(n, k);
        std::vector<double> w(basis.size());
        for (auto& v : w) v = u(rng);
        const PointMetric<double> gx = g.at(x);
        double q = 0.0;
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) q += gx.inv()[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] * xi[static_cast<std::size_t>(a)] * xi[static_cast<std::size_t>(b)];
        }
        const auto sym = principal_symbol(laplacian_dd(g, k).op(), x, xi);
        double err = 0.0, norm = 0.0;
        for (std::size_t r = 0; r < basis.size(); ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < basis.size(); ++c) acc += sym[r][c] * w[c];
            err += (acc - q * w[r]) * (acc - q * w[r]);
            norm += q * q * w[r] * w[r];
        }
        worst = std::max(worst, std::sqrt(err / norm));
    }
    return {worst <= tol, "50 samples, worst relative error " + fmt(worst) + " (tol " + fmt(tol) + ")"};
}

Outcome c3_weitzenbock() {
    constexpr double tol = 1e-8;
    std::mt19937 rng(77);
    double worst = 0.0;
    int compared = 0;
    for (int m = 0; m < 5; ++m) {
        const int n = 3 + m % 2;
        const MetricBNF g = random_polynomial_metric(n, rng);
        const Connection conn = christoffel(g);
        const Curvature curv = curvature(g, conn);
        for (int k = 0; k <= n; ++k) {
            const DiffOp<Expr> a = laplacian_dd(g, k).op();
            const DiffOp<Expr> b = laplacian_weitzenbock(g, k, conn, curv).op();
            for (int s = 0; s < 3; ++s) {
                const auto x = random_point(n, rng);
                const auto ea = evaluate_op(a, x);
                const auto eb = evaluate_op(b, x);
                for (const auto& [key, v] : ea) {
                    const auto it = eb.find(key);
                    worst = std::max(worst, std::abs(v - (it == eb.end() ? 0.0 : it->second)));
                    ++compared;
                }
                for (const auto& [key, v] : eb) {
                    if (!ea.count(key)) worst = std::max(worst, std::abs(v));
                }
            }
        }
    }
    return {worst <= tol, std::to_string(compared) + " coefficients, worst difference " + fmt(worst) + " (tol " + fmt(tol) + ")"};
}

Outcome c4_factorization() {
    constexpr int J = 4;
    // curved (x_n-dependent) metric; lateral dependence swells the symbolic coefficients beyond the budget at J = 4
    Matrix<Expr> h{{parse("1 + x3/3"), Expr(0)}, {Expr(0), parse("1 + x3^2/4")}};
    const MetricBNF g(3, h);
    std::ostringstream os;
    const Factorization f = factorize(laplacian_dd(g, 0), g, J, {.residual_terms = J + 2});
    const int top = f.residual_top.back();
    // degrees 2 .. 2 - J are clean
    bool ok = top <= 1 - J;
    os << "curved k=0 residual top degree after " << J << " corrections " << (top == INT_MIN ? std::string("none") : std::to_string(top)) << "; ";
    for (int k = 0; k <= 3; ++k) {
        const MetricBNF flat = MetricBNF::flat(3);
        const Factorization f = factorize(laplacian_dd(flat, k), flat, J);
        const auto rho = HomSymbol<Expr>::scalar(f.b.context(), k, 1, SymbolElem<Expr>::rho_power(f.b.context(), 1));
        bool exact = (f.b.term(0) - rho).empty();
        for (int j = 1; j < f.b.size(); ++j) exact = exact && f.b.term(j).empty();
        ok = ok && exact;
        if (!exact) os << "flat k=" << k << " B != rho I; ";
    }
    os << "flat B = rho I";
    return {ok, os.str()};
}

Outcome c5_conformal() {
    // F and sigma_0(P_0) against 2il e lambda and l(l-1) e lambda, e = (n+1)/2 - k
    int cases = 0, f_match = 0, s_match = 0;
    std::ostringstream os;
    std::string example;
    for (int n = 3; n <= 5; ++n) {
        for (int l = 1; l <= 3; ++l) {
            for (int k = 1; k < n; ++k) {
                if (2 * k == n + 1) continue;
                const ConformalTerms t = conformal_difference(n, k, l, true);
                const Rational e = Rational(n + 1, 2) - k;
                ++cases;
                if (t.f_over_i == 2 * l * e) ++f_match;
                if (t.sigma0 == l * (l - 1) * e) ++s_match;
                if (example.empty() && l == 2) {
                    example = "n=" + std::to_string(n) + " k=" + std::to_string(k) + " l=2: F/i = " + t.f_over_i.str() + " (stated " +
                              Rational(2 * l * e).str() + "), sigma0 = " + t.sigma0.str() + " (stated " + Rational(l * (l - 1) * e).str() + ")";
                }
            }
        }
    }
    bool constants = true;
    for (int l = 1; l <= 5; ++l) {
        const FamilyConstants fc = family_constants(l);
        constants = constants && fc.K.re != 0 && fc.L.re != 0 && (l == 1 || fc.M.re != 0);
        if (l == 1) constants = constants && fc.K == CRational(Rational(-1, 4)) && fc.L == CRational(Rational(1, 2)) && fc.M == CRational(Rational(0));
    }
    os << "F matches " << f_match << "/" << cases << ", sigma0 matches " << s_match << "/" << cases << " [" << example << "]; constants K,L,M "
       << (constants ? "ok" : "WRONG") << " (K1=-1/4, L1=1/2, M1=0)";
    return {f_match == cases && s_match == cases && constants, os.str()};
}

Outcome c6_flat_dtn() {
    constexpr double tol = 1e-3;
    const SlabGrid grid(3, 64, 64, 0.125);
    std::vector<std::vector<int>> freqs;
    for (int a = -8; a <= 8; ++a) {
        for (int b = -8; b <= 8; ++b) {
            if ((a != 0 || b != 0) && a * a + b * b <= 64) freqs.push_back({a, b});
        }
    }
    double worst = 0.0, off = 0.0;
    for (int k : {0, 1}) {
        auto sys = assemble(MetricBNF::flat(3), k, grid);
        const auto est = probe_symbol(*sys, freqs);
        for (const auto& [key, v] : est.values) {
            const double exact = flat_dtn(grid.xi_norm(key.m), grid.thickness);
            if (key.in == key.out) {
                worst = std::max(worst, std::abs(v - exact) / std::abs(exact));
            } else {
                off = std::max(off, std::abs(v) / std::abs(exact));
            }
        }
    }
    // refinement 16 / 32 / 64 of the DtN error at a fixed mode
    std::vector<double> order;
    for (int k : {0, 1}) {
        std::vector<double> errs;
        for (int nn : {16, 32, 64}) {
            const SlabGrid g(3, 16, nn, 0.25);
            auto sys = assemble(MetricBNF::flat(3), k, g);
            const auto est = probe_symbol(*sys, {{2, 1}});
            const MultiIndex I = sys->basis().front();
            errs.push_back(std::abs(est.at({2, 1}, I, I) - flat_dtn(g.xi_norm({2, 1}), g.thickness)));
        }
        for (std::size_t i = 1; i < errs.size(); ++i) order.push_back(std::log2(errs[i - 1] / errs[i]));
    }
    bool order_ok = true;
    std::string orders;
    for (double o : order) {
        order_ok = order_ok && std::abs(o - 2.0) <= 0.2;
        orders += fmt(o) + " ";
    }
    return {worst <= tol && off <= tol && order_ok, std::to_string(freqs.size()) + " modes, worst relative error " + fmt(worst) + ", off-diagonal " +
                                                        fmt(off) + " (tol " + fmt(tol) + "); orders " + orders + "(2 +- 0.2)"};
}

// Shared by criteria 7 and 8: flat vs conformal estimates at 64^2 x 64.
struct PerturbationRun {
    int l = 0;
    PerturbationFit fit;
    double worst = 0.0;      // max |lambda_hat - lambda|
    double peak = 0.0;       // max |lambda|
};

const SlabGrid& big_grid() {
    static const SlabGrid g(3, 64, 64, 1.0, two_pi);
    return g;
}

const PerturbationRun& perturbation_run(int l) {
    static std::map<int, PerturbationRun> cache;
    auto it = cache.find(l);
    if (it != cache.end()) return it->second;
    const SlabGrid& grid = big_grid();
    const int k = l == 1 ? 0 : 1;
    const std::string factor = l == 1 ? "1 + x3/10" : "1 + cos(x1)*x3^2/10";
    auto s2 = assemble(MetricBNF::conformal(3, parse(factor)), k, grid);
    auto s1 = assemble(MetricBNF::flat(3), k, grid);
    ProbeOptions opts;
    opts.keep_local = true;
    opts.inputs = {conformal_index(3, k, k >= 1)};
    std::vector<std::vector<int>> freqs;
    for (int s : {4, 5, 6, 8, 10, 12, 14, 16}) {
        freqs.push_back({s, 0});
        freqs.push_back({0, s});
    }
    PerturbationRun r;
    r.l = l;
    r.fit = recover_perturbation(probe_symbol(*s2, freqs, opts), probe_symbol(*s1, freqs, opts), l, 3, k);
    for (std::size_t i = 0; i < r.fit.points.size(); ++i) {
        const double x1 = grid.lateral_point(r.fit.points[i])[0];
        const double lam = l == 1 ? 0.1 : 0.1 * std::cos(x1);
        r.worst = std::max(r.worst, std::abs(r.fit.lambda[i] - lam));
        r.peak = std::max(r.peak, std::abs(lam));
    }
    return cache.emplace(l, std::move(r)).first->second;
}

Outcome c7_decay() {
    constexpr double tol = 0.15;
    bool ok = true;
    std::ostringstream os;
    for (int l : {1, 2}) {
        const PerturbationRun& r = perturbation_run(l);
        ok = ok && std::abs(r.fit.slope - (1 - l)) <= tol;
        os << "l=" << l << " slope " << fmt(r.fit.slope) << " (expected " << 1 - l << "); ";
    }
    os << "tol " << tol;
    return {ok, os.str()};
}

Outcome c8_round_trip() {
    constexpr double h_tol = 0.03, l1_tol = 0.05, l2_tol = 0.08;
    const SlabGrid& grid = big_grid();
    auto sys = assemble(MetricBNF::conformal(3, parse("1 + cos(x1)/4")), 0, grid);
    std::vector<std::vector<int>> freqs;
    for (int s : {4, 6, 8, 11, 16}) {
        freqs.push_back({s, 0});
        freqs.push_back({0, s});
    }
    for (int s : {3, 5, 8, 11}) {
        freqs.push_back({s, s});
        freqs.push_back({s, -s});
    }
    ProbeOptions opts;
    opts.keep_local = true;
    const BoundaryMetricFit fit = fit_boundary_metric(probe_symbol(*sys, freqs, opts));
    double h_err = 0.0;
    for (std::size_t i = 0; i < fit.points.size(); ++i) {
        const double h = 1.0 + std::cos(grid.lateral_point(fit.points[i])[0]) / 4.0;
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < 2; ++c) h_err = std::max(h_err, std::abs(fit.h0[i](r, c) - (r == c ? h : 0.0)) / h);
        }
    }
    const PerturbationRun& r1 = perturbation_run(1);
    const PerturbationRun& r2 = perturbation_run(2);
    const double e1 = r1.fit.converted ? r1.worst / r1.peak : INFINITY;
    const double e2 = r2.fit.converted ? r2.worst / r2.peak : INFINITY;
    return {h_err <= h_tol && e1 <= l1_tol && e2 <= l2_tol, "h0 pointwise " + fmt(h_err) + " (tol " + fmt(h_tol) + "), lambda l=1 " + fmt(e1) +
                                                               " (tol " + fmt(l1_tol) + "), lambda l=2 " + fmt(e2) + " (tol " + fmt(l2_tol) +
                                                               ") relative to max |lambda|"};
}

MetricBNF wavy_metric() {
    Matrix<Expr> h{{parse("1 + cos(6.283185307179586*x1)/5 + x3/4"), parse("sin(6.283185307179586*x2)/10")},
                   {parse("sin(6.283185307179586*x2)/10"), parse("1 + x3^2/3")}};
    return MetricBNF(3, std::move(h));
}

Outcome c9_natural_data() {
    constexpr double tol = 1e-9;
    const SlabGrid grid(3, 16, 32, 0.5);
    double worst = 0.0;
    for (const MetricBNF& g : {MetricBNF::flat(3), wavy_metric(), MetricBNF::conformal(3, parse("1 + cos(6.283185307179586*x1)*x3^2/10"))}) {
        for (int k : {1, 2}) {
            auto sys = assemble(g, k, grid);
            BoundaryForm f(grid, 3, k);
            int seed = 1;
            for (auto& [I, v] : f.comps) {
                if (I.contains(3)) continue;
                v = fourier_probe(grid, k, {seed, 2 - seed}, I).at(I);
                ++seed;
            }
            const GridForm u = solve_dirichlet(*sys, f);
            const BoundaryForm rhs = star_tangential(g, normal_derivative(u));
            worst = std::max(worst, (natural_data(g, u).pull_star_d - rhs).max_abs() / (1.0 + rhs.max_abs()));
        }
    }
    // u -> *u on the flat slab
    double dual = 0.0;
    const int n = 3;
    const MetricBNF flat = MetricBNF::flat(n);
    const auto sgn = [](int e) { return e % 2 == 0 ? 1.0 : -1.0; };
    for (int k = 1; k <= 2; ++k) {
        auto su = assemble(flat, k, grid);
        auto sv = assemble(flat, n - k, grid);
        BoundaryForm f(grid, n, k);
        int seed = 1;
        for (auto& [I, v] : f.comps) {
            v = fourier_probe(grid, k, {seed, 2 - seed}, I).at(I);
            ++seed;
        }
        BoundaryForm fv(grid, n, n - k);
        const PointMetric<double> id = PointMetric<double>::identity(n);
        for (const auto& [I, v] : f.comps) {
            const FiberForm<double> s = hodge_star(id, FiberForm<double>::basis(I));
            for (const auto& [J, c] : s.terms()) {
                for (std::size_t p = 0; p < v.size(); ++p) fv.at(J)[p] += c * v[p];
            }
        }
        const NaturalData a = natural_data(flat, solve_dirichlet(*su, f));
        const NaturalData b = natural_data(flat, solve_dirichlet(*sv, fv));
        dual = std::max({dual, (b.pull - a.pull_star).max_abs(), (b.pull_star - sgn(k * (n - k)) * a.pull).max_abs(),
                         (b.pull_star_d - sgn(n * k + n + 1 + (n - k + 1) * (k - 1)) * a.pull_delta).max_abs(),
                         (b.pull_delta - sgn(n * (n - k) + n + 1 + k * (n - k)) * a.pull_star_d).max_abs()});
    }
    return {worst <= tol && dual <= tol, "identity worst " + fmt(worst) + " over flat and two curved metrics, duality worst " + fmt(dual) +
                                             " (tol " + fmt(tol) + ")"};
}

Outcome c10_greens() {
    const MetricBNF flat = MetricBNF::flat(3);
    const Box box{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
    std::vector<std::pair<int, std::map<MultiIndex, Expr>>> forms{
        {0, {{MultiIndex::empty(3), parse("exp(x1)*cos(x2)")}}},
        {1, {{MultiIndex(3, {1}), parse("exp(x1)*cos(x2)")}, {MultiIndex(3, {3}), parse("x1*x2 + sin(x3)*exp(x1)")}}}};
    bool ok = true;
    std::ostringstream os;
    for (const auto& [k, u] : forms) {
        std::vector<double> res;
        for (int cells : {4, 8, 16, 32}) res.push_back(std::abs(greens_pairing(flat, u, k, box, cells, Quadrature::Midpoint).residual));
        os << "k=" << k << " orders";
        for (std::size_t i = 1; i < res.size(); ++i) {
            const double o = std::log2(res[i - 1] / res[i]);
            ok = ok && std::abs(o - 2.0) <= 0.2;
            os << " " << fmt(o);
        }
        os << "; ";
    }
    os << "expected 2 +- 0.2";
    return {ok, os.str()};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget;   // seconds
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "Hodge power laws", 10, c1_power_laws},
        {2, "principal symbol", 30, c2_principal_symbol},
        {3, "Laplacian cross-assembly", 120, c3_weitzenbock},
        {4, "factorization", 60, c4_factorization},
        {5, "conformal symbol computation", 60, c5_conformal},
        {6, "flat-slab DtN oracle", 300, c6_flat_dtn},
        {7, "symbol-difference decay", 600, c7_decay},
        {8, "reconstruction round trip", 900, c8_round_trip},
        {9, "natural-data identity", 300, c9_natural_data},
        {10, "Green's identity", 120, c10_greens},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.budget;
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::cout << (pass ? "PASS" : "FAIL") << "  " << c.id << " " << c.name << ": " << o.detail << " [" << fmt(secs) << " s, budget "
                  << c.budget << " s" << (in_time ? "" : ", OVER BUDGET") << "]" << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria pass" : std::to_string(failed) + " criteria fail") << std::endl;
    return failed == 0 ? 0 : 1;
}

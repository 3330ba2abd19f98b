#include "doctest.h"

#include "formlab/reconstruct.hpp"
#include "formlab/symbol.hpp"

#include <cmath>
#include <numbers>

using namespace formlab;

namespace {

std::vector<std::vector<int>> star_frequencies(int dims, std::vector<int> mags) {
    std::vector<std::vector<int>> out;
    for (int s : mags) {
        for (int a = 0; a < dims; ++a) {
            std::vector<int> m(static_cast<std::size_t>(dims), 0);
            m[static_cast<std::size_t>(a)] = s;
            out.push_back(m);
            for (int b = a + 1; b < dims; ++b) {
                auto d = m;
                d[static_cast<std::size_t>(b)] = s;
                out.push_back(d);
            }
        }
    }
    return out;
}

double cometric_norm(const Eigen::MatrixXd& hinv, const std::vector<double>& xi) {
    double s = 0.0;
    for (std::size_t i = 0; i < xi.size(); ++i) {
        for (std::size_t j = 0; j < xi.size(); ++j) s += hinv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * xi[i] * xi[j];
    }
    return std::sqrt(s);
}

std::vector<double> xi_of(const SlabGrid& g, const std::vector<int>& m) {
    std::vector<double> xi;
    for (int a : m) xi.push_back(2.0 * std::numbers::pi * a / g.period);
    return xi;
}

// Closed-form DtN of a laterally and normally constant boundary metric h.
DtNEstimate synthetic_lambda(const SlabGrid& g, const Eigen::MatrixXd& h, const std::vector<std::vector<int>>& freqs) {
    DtNEstimate est;
    est.grid = g;
    est.k = 0;
    const MultiIndex I = MultiIndex::empty(g.n);
    const Eigen::MatrixXd hinv = h.inverse();
    for (const auto& m : freqs) est.values[{m, I, I}] = flat_dtn(cometric_norm(hinv, xi_of(g, m)), g.thickness);
    return est;
}

// Natural tangential map *_b Lambda_tt for constant h: -|xi|_h coth(|xi|_h T) *_b.
DtNEstimate synthetic_natural(const SlabGrid& g, int k, const Eigen::MatrixXd& h, const std::vector<std::vector<int>>& freqs) {
    const int m = g.n - 1;
    Matrix<double> hm(static_cast<std::size_t>(m), std::vector<double>(static_cast<std::size_t>(m)));
    for (int r = 0; r < m; ++r) {
        for (int c = 0; c < m; ++c) hm[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = h(r, c);
    }
    const PointMetric<double> pm(hm);
    DtNEstimate est;
    est.grid = g;
    est.k = k;
    est.map = ProbedMap::NaturalTT;
    const Eigen::MatrixXd hinv = h.inverse();
    for (const auto& fm : freqs) {
        const double lam = flat_dtn(cometric_norm(hinv, xi_of(g, fm)), g.thickness);
        for (const auto& I : MultiIndex::all(m, k)) {
            const FiberForm<double> s = boundary_hodge_star(pm, FiberForm<double>::basis(I));
            for (const auto& J : MultiIndex::all(m, m - k)) est.values[{fm, I, J}] = lam * s.coeff(J);
        }
    }
    return est;
}

}  // namespace

TEST_CASE("remove_coth inverts x coth(x T)") {
    for (double x : {0.5, 3.0, 12.0, 40.0}) {
        for (double T : {0.125, 1.0}) CHECK(remove_coth(x / std::tanh(x * T), T) == doctest::Approx(x).epsilon(1e-12));
    }
    CHECK(remove_coth(0.5, 1.0) == 0.0);
}

TEST_CASE("fit_boundary_metric on closed-form slab symbols") {
    const SlabGrid grid(3, 64, 64, 1.0, 2.0 * std::numbers::pi);
    const auto freqs = star_frequencies(2, {4, 6, 8, 11});
    SUBCASE("flat") {
        const auto fit = fit_boundary_metric(synthetic_lambda(grid, Eigen::MatrixXd::Identity(2, 2), freqs));
        REQUIRE(fit.h0.size() == 1);
        CHECK((fit.h0[0] - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-2);
    }
    SUBCASE("anisotropic diag(1, 1.21)") {
        Eigen::MatrixXd h = Eigen::MatrixXd::Identity(2, 2);
        h(1, 1) = 1.21;
        const auto fit = fit_boundary_metric(synthetic_lambda(grid, h, freqs));
        CHECK(std::abs(fit.h0[0](1, 1) - 1.21) < 1e-2 * 1.21);
        CHECK(std::abs(fit.h0[0](0, 0) - 1.0) < 1e-2);
        CHECK(std::abs(fit.h0[0](0, 1)) < 1e-2);
    }
    SUBCASE("sheared") {
        Eigen::MatrixXd h(2, 2);
        h << 1.3, 0.2, 0.2, 0.9;
        const auto fit = fit_boundary_metric(synthetic_lambda(grid, h, freqs));
        CHECK((fit.h0[0] - h).cwiseAbs().maxCoeff() < 1e-6);
    }
    SUBCASE("rank-deficient frequency set") {
        CHECK_THROWS_AS(fit_boundary_metric(synthetic_lambda(grid, Eigen::MatrixXd::Identity(2, 2), {{4, 0}, {8, 0}, {6, 0}})),
                        std::domain_error);
    }
}

TEST_CASE("fit_boundary_metric on a flat simulation") {
    const SlabGrid grid(3, 32, 48, 1.0, 2.0 * std::numbers::pi);
    auto sys = assemble(MetricBNF::flat(3), 0, grid);
    const auto est = probe_symbol(*sys, {{4, 0}, {6, 0}, {8, 0}, {0, 4}, {0, 6}, {0, 8}, {3, 3}, {4, 4}, {5, 5}});
    const auto fit = fit_boundary_metric(est);
    CHECK((fit.h0[0] - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("recover_alpha") {
    SUBCASE("flat n=3, k=0 from the simulated natural map") {
        const SlabGrid grid(3, 32, 48, 1.0, 2.0 * std::numbers::pi);
        auto sys = assemble(MetricBNF::flat(3), 0, grid);
        ProbeOptions opts;
        opts.map = ProbedMap::NaturalTT;
        const auto est = probe_symbol(*sys, {{4, 0}, {6, 0}, {8, 0}, {0, 4}, {0, 6}, {0, 8}, {3, 3}, {4, 4}, {5, 5}}, opts);
        const auto r = recover_alpha(est, 0, MultiIndex::empty(2), MultiIndex(2, {1, 2}));
        CHECK(r.alpha == doctest::Approx(1.0).epsilon(1e-2));
        CHECK((r.h - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 2e-2);
        CHECK(std::abs(std::abs(r.star(0, 0)) - 1.0) < 2e-2);
    }
    SUBCASE("flat n=3, k=1 = (n-1)/2 from the simulated natural map") {
        const SlabGrid grid(3, 32, 48, 1.0, 2.0 * std::numbers::pi);
        auto sys = assemble(MetricBNF::flat(3), 1, grid);
        ProbeOptions opts;
        opts.map = ProbedMap::NaturalTT;
        const auto est = probe_symbol(*sys, {{4, 0}, {6, 0}, {8, 0}, {0, 4}, {0, 6}, {0, 8}, {3, 3}, {4, 4}, {5, 5}}, opts);
        const auto r = recover_alpha(est, 1, MultiIndex(2, {1}), MultiIndex(2, {2}));
        CHECK(r.alpha == doctest::Approx(1.0).epsilon(1e-2));
        CHECK((r.h - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 2e-2);
        CHECK(std::abs(std::abs(r.star(1, 0)) - 1.0) < 2e-2);
        CHECK(std::abs(r.star(0, 0)) < 2e-2);
    }
    SUBCASE("scaled boundary metric c id, n=5, k=1: alpha = c^(2k+1-n)") {
        const double c = 1.1;
        const SlabGrid grid(5, 64, 64, 1.0, 2.0 * std::numbers::pi);
        const auto est = synthetic_natural(grid, 1, c * Eigen::MatrixXd::Identity(4, 4), star_frequencies(4, {4, 6, 8, 11}));
        const auto r = recover_alpha(est, 1, MultiIndex(4, {1}), MultiIndex(4, {2, 3, 4}));
        CHECK(std::abs(r.alpha - 1.0 / (c * c)) < 1e-6);
        CHECK((r.h - c * Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-6);
        // not the bare 1/c
        CHECK(std::abs(r.alpha - 1.0 / c) > 5e-2);
    }
    SUBCASE("excluded and degenerate cases") {
        const SlabGrid g4(4, 16, 16, 1.0);
        const auto est4 = synthetic_natural(g4, 1, Eigen::MatrixXd::Identity(3, 3), star_frequencies(3, {4}));
        CHECK_THROWS_WITH_AS(recover_alpha(est4, 1, MultiIndex(3, {1}), MultiIndex(3, {2, 3})), doctest::Contains("excluded case"),
                             std::domain_error);
        const SlabGrid g5(5, 32, 16, 1.0);
        // k = (n-1)/2 is fine for alpha; c^(2k+1-n) = 1
        const auto est5 = synthetic_natural(g5, 2, 1.1 * Eigen::MatrixXd::Identity(4, 4), star_frequencies(4, {4, 6, 8}));
        CHECK(recover_alpha(est5, 2, MultiIndex(4, {1, 2}), MultiIndex(4, {3, 4})).alpha == doctest::Approx(1.0).epsilon(1e-6));
        const auto est5b = synthetic_natural(g5, 1, Eigen::MatrixXd::Identity(4, 4), star_frequencies(4, {4, 6}));
        CHECK_THROWS_WITH_AS(recover_alpha(est5b, 1, MultiIndex(4, {1}), MultiIndex(4, {1, 2, 3})), doctest::Contains("vanishes"),
                             std::domain_error);
    }
}

TEST_CASE("perturbation gain from the family recursion") {
    // Riccati check for k = 0, l = 1: b_0 = -lambda/4 at x_n = 0
    CHECK(perturbation_gain(3, 0, 1, false) == doctest::Approx(-0.25));
    CHECK(perturbation_gain(3, 1, 2, true) == doctest::Approx(0.75));
    // k = 0, l = 1 by hand: -(n-2)/4
    for (int n : {3, 4, 5}) CHECK(perturbation_gain(n, 0, 1, false) == doctest::Approx(-(n - 2) / 4.0));
    CHECK_THROWS_AS(perturbation_gain(3, 2, 1, true), std::domain_error);
}

TEST_CASE("recover_perturbation") {
    const SlabGrid grid(3, 32, 48, 1.0, 2.0 * std::numbers::pi);
    std::vector<std::vector<int>> freqs;
    for (int s : {4, 5, 6, 7, 8}) {
        freqs.push_back({s, 0});
        freqs.push_back({0, s});
    }
    auto flat = assemble(MetricBNF::flat(3), 0, grid);
    const auto e1 = probe_symbol(*flat, freqs);
    SUBCASE("identical metrics") {
        const auto r = recover_perturbation(e1, e1, 1, 3, 0);
        CHECK(r.converted);
        CHECK(r.lambda == std::vector<double>{0.0});
        CHECK(r.message.find("noise floor") != std::string::npos);
    }
    SUBCASE("l = 1 constant lambda") {
        auto s2 = assemble(MetricBNF::conformal(3, parse("1 + x3/10")), 0, grid);
        const auto e2 = probe_symbol(*s2, freqs);
        const auto r = recover_perturbation(e2, e1, 1, 3, 0);
        REQUIRE(r.converted);
        CHECK(std::abs(r.slope) < 0.15);
        CHECK(std::abs(r.lambda[0] - 0.1) < 0.05 * 0.1);
        // wrong order is refused
        const auto bad = recover_perturbation(e2, e1, 2, 3, 0);
        CHECK_FALSE(bad.converted);
        CHECK(bad.message.find("exponent mismatch") != std::string::npos);
    }
    SUBCASE("component rules") {
        auto s2 = assemble(MetricBNF::flat(3), 2, grid);
        ProbeOptions o;
        o.inputs = {MultiIndex(3, {1, 3})};
        const auto e = probe_symbol(*s2, {{4, 0}, {5, 0}}, o);
        PerturbationOptions po;
        po.component = MultiIndex(3, {1, 3});
        CHECK_THROWS_WITH_AS(recover_perturbation(e, e, 1, 3, 2, po), doctest::Contains("n not in I"), std::invalid_argument);
    }
}

TEST_CASE("RecoveredMetric JSON") {
    const SlabGrid grid(3, 64, 64, 1.0, 2.0 * std::numbers::pi);
    RecoveredMetric rm;
    rm.metric = fit_boundary_metric(synthetic_lambda(grid, Eigen::MatrixXd::Identity(2, 2), star_frequencies(2, {4, 6, 8})));
    rm.verdicts["h0"] = "pass";
    const auto j = rm.to_json();
    CHECK(j["boundary_metric"]["samples"].size() == 1);
    CHECK(j["boundary_metric"]["samples"][0]["h0"][1][1].get<double>() == doctest::Approx(1.0).epsilon(1e-2));
    CHECK(j["verdicts"]["h0"] == "pass");
    CHECK_FALSE(j.contains("perturbation"));
}

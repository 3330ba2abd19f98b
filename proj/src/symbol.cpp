#include "formlab/symbol.hpp"

#include "formlab/jet.hpp"

#include <climits>

namespace formlab {

namespace {

using C = Cplx<Expr>;

// Exact value of an element of the flat rational ring at xi = (1, 0, ...), rho = 1.
CRational value_at_unit(const SymbolElem<Rational>& s) {
    CRational acc;
    auto sum = [&](const XiPoly<Rational>& p) {
        for (const auto& [e, c] : p.terms()) {
            bool on_axis = true;
            for (std::size_t i = 1; i < e.size(); ++i) on_axis = on_axis && e[i] == 0;
            if (on_axis) acc += c;
        }
    };
    sum(s.a());
    sum(s.b());
    return acc;
}

}  // namespace

FamilyConstants family_constants(int l, int coupling) {
    auto ctx = flat_context(3);
    using E = SymbolElem<Rational>;
    auto run = [&](const FamilyRhs<Rational>& rhs) { return value_at_unit(family_reduce(ctx, l, rhs, coupling).principal.back()); };
    const E zero(ctx);
    FamilyConstants kc;
    kc.l = l;
    kc.K = run({E::rho_power(ctx, 2), zero, CRational(), zero});
    kc.L = run({zero, E::rho_power(ctx, 1), CRational(), zero});
    kc.M = run({zero, zero, CRational(), E::constant(ctx, CRational(Rational(1)))});
    const CRational viaF = run({zero, zero, CRational(Rational(1)), zero});
    if (!(viaF == CRational::i() * kc.L)) throw std::logic_error("family_constants: F and sigma_1 channels disagree");
    return kc;
}

// ---------------------------------------------------------------------------

ClassicalSymbol<Expr> tangential_symbol(const OperatorBNF& op, const ContextPtr<Expr>& ctx) {
    const int n = op.dim();
    const int k = op.degree();
    ClassicalSymbol<Expr> s(ctx, k, k, 2, 3);
    for (const auto& [key, c] : op.op().terms()) {
        const Deriv& d = key.deriv;
        bool normal = false;
        for (int a : d) normal = normal || a == n;
        if (normal) continue;
        using Elem = SymbolElem<Expr>;
        if (d.size() == 2) {
            s.term(0).add(key.out, key.in, C(-c) * (Elem::xi(ctx, d[0]) * Elem::xi(ctx, d[1])));
        } else if (d.size() == 1) {
            s.term(1).add(key.out, key.in, C(Expr(0), c) * Elem::xi(ctx, d[0]));
        } else if (d.empty()) {
            s.term(2).add(key.out, key.in, Elem::constant(ctx, C(c)));
        } else {
            throw std::domain_error("tangential_symbol: operator order exceeds two");
        }
    }
    return s;
}

HomSymbol<Expr> normal_coefficient(const OperatorBNF& op, const ContextPtr<Expr>& ctx) {
    const int n = op.dim();
    HomSymbol<Expr> e(ctx, op.degree(), op.degree(), 0);
    for (const auto& [key, c] : op.op().terms()) {
        if (key.deriv == Deriv{n}) e.add(key.out, key.in, SymbolElem<Expr>::constant(ctx, C(Expr(0), c)));
    }
    return e;
}

ClassicalSymbol<Expr> factorization_residual(const ClassicalSymbol<Expr>& s, const HomSymbol<Expr>& e,
                                             const ClassicalSymbol<Expr>& b, int terms) {
    const auto& ctx = s.context();
    const int n = ctx->n;
    ClassicalSymbol<Expr> r = s.truncated(terms);
    r -= compose(b, b, terms);
    ClassicalSymbol<Expr> lower(ctx, b.k_in(), b.k_out(), 1, 0);
    for (int j = 0; j < b.size() && j + 1 < terms; ++j) {
        HomSymbol<Expr> t = C(Expr(0), Expr(1)) * (e * b.term(j));
        t += b.term(j).d_x(n);
        lower.push_term(std::move(t));
    }
    r += lower;
    r = r.truncated(terms);
    r.prune();
    return r;
}

Factorization factorize(const OperatorBNF& op, const MetricBNF& g, int J, const FactorizeOptions& opts) {
    if (J < 0) throw std::invalid_argument("factorize: J must be non-negative");
    if (op.dim() != g.dim()) throw std::invalid_argument("factorize: dimension mismatch");
    constexpr double tol = 1e-8;
    const int n = op.dim();
    const int k = op.degree();
    auto ctx = make_context(g);

    // principal part must be (D_n^2 + q) I
    const auto a2 = op.a2();
    for (std::size_t r = 0; r < a2.size(); ++r) {
        for (std::size_t c = 0; c < a2.size(); ++c) {
            const Expr want = r == c ? Expr(1) : Expr(0);
            if (!vanishes(a2[r][c] - want, n)) throw std::domain_error("factorize: non-elliptic input (D_n^2 coefficient is not the identity)");
        }
    }
    if (op.has_mixed_normal_terms()) throw std::domain_error("factorize: non-elliptic input (mixed normal derivatives)");
    const ClassicalSymbol<Expr> s = tangential_symbol(op, ctx);
    const HomSymbol<Expr> rho = HomSymbol<Expr>::scalar(ctx, k, 1, SymbolElem<Expr>::rho_power(ctx, 1));
    if ((s.term(0) - rho * rho).sample_norm() > tol)
        throw std::domain_error("factorize: non-elliptic input (principal symbol is not g(xi, xi) I)");
    const HomSymbol<Expr> e = normal_coefficient(op, ctx);

    Factorization out;
    out.b = ClassicalSymbol<Expr>(ctx, k, k, 1, 0);
    out.b.push_term(rho);
    const C half(Expr(Rational(1, 2)));
    for (int round = 0; round <= J; ++round) {
        const int terms = std::max(round + 2, opts.residual_terms);
        ClassicalSymbol<Expr> r = factorization_residual(s, e, out.b, terms);
        int top = INT_MIN;
        for (int j = 0; j < r.size(); ++j) {
            if (r.term(j).sample_norm() > tol) {
                top = r.term(j).degree();
                break;
            }
        }
        out.residual_top.push_back(top);
        if (round == J) {
            out.residual = std::move(r);
            break;
        }
        HomSymbol<Expr> next = half * r.at_degree(1 - round).times_rho(-1);
        next.prune();
        out.b.push_term(std::move(next));
    }
    return out;
}

// ---------------------------------------------------------------------------

MultiIndex conformal_index(int n, int k, bool normal) {
    std::vector<int> axes;
    if (normal) {
        if (k < 1) throw std::invalid_argument("conformal_index: normal forms need k >= 1");
        for (int a = 1; a < k; ++a) axes.push_back(a);
        axes.push_back(n);
    } else {
        if (k > n - 1) throw std::invalid_argument("conformal_index: tangential forms need k <= n-1");
        for (int a = 1; a <= k; ++a) axes.push_back(a);
    }
    return MultiIndex(n, axes);
}

namespace {

JetPoly conformal_factor(int n, int l, int order) {
    return JetPoly(1) + JetPoly::xn(n, order, l) * JetPoly::lambda(n);
}

PointMetric<JetPoly> conformal_metric(int n, int l, int order) {
    const JetPoly s = conformal_factor(n, l, order);
    Matrix<JetPoly> g(static_cast<std::size_t>(n), std::vector<JetPoly>(static_cast<std::size_t>(n), JetPoly(0)));
    for (int a = 0; a < n - 1; ++a) g[static_cast<std::size_t>(a)][static_cast<std::size_t>(a)] = s;
    g[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(n - 1)] = JetPoly(1);
    return PointMetric<JetPoly>(std::move(g));
}

// r when the x'-jet p equals r * lambda exactly.
std::optional<Rational> lambda_multiple(const JetPoly& p) {
    if (p.is_zero()) return Rational(0);
    if (p.terms().size() != 1) return std::nullopt;
    const auto& [mono, c] = *p.terms().begin();
    if (mono.power != 0 || mono.lambdas != std::vector<Deriv>{Deriv{}}) return std::nullopt;
    return c;
}

Rational require_lambda_multiple(const JetPoly& p, const char* what) {
    auto r = lambda_multiple(p);
    if (!r) throw std::logic_error(std::string("conformal_difference: ") + what + " is not a multiple of lambda: " + to_string(p));
    return *r;
}

}  // namespace

Rational conformal_star_exponent(int n, int k, bool normal, int order) {
    const MultiIndex I = conformal_index(n, k, normal);
    const auto g2 = conformal_metric(n, 1, order);
    const FiberForm<JetPoly> s2 = hodge_star(g2, FiberForm<JetPoly>::basis(I));
    const SignedIndex Ic = complement(I);
    const JetPoly c = s2.coeff(Ic.index);
    if (s2.terms().size() != 1) throw std::logic_error("conformal_star_exponent: *_2 is not diagonal on the basis form");
    const Rational c0 = Rational(Ic.sign);
    const Rational e = require_lambda_multiple(c.coefficient(1), "first-order star coefficient") / c0;
    const JetPoly expected = JetPoly(c0) * conformal_factor(n, 1, order).pow(e);
    if (!(c == expected)) throw std::logic_error("conformal_star_exponent: jet is not a pure power of the conformal factor");
    return e;
}

ConformalTerms conformal_difference(int n, int k, int l, bool normal) {
    if (n < 3) throw std::invalid_argument("conformal_difference: n must be > 2");
    if (l < 1) throw std::invalid_argument("conformal_difference: l must be >= 1");
    if (k < 0 || k > n) throw std::invalid_argument("conformal_difference: k outside [0, n]");
    ConformalTerms out;
    out.n = n;
    out.k = k;
    out.l = l;
    out.normal = normal;
    out.index = conformal_index(n, k, normal);
    out.star_exponent = conformal_star_exponent(n, k, normal);
    if (out.star_exponent == 0) {
        throw std::domain_error(normal ? "conformal_difference: excluded case k = (n+1)/2 with n in I"
                                       : "conformal_difference: excluded case k = (n-1)/2 with n not in I");
    }

    const int order = l + 2;
    const auto g2 = conformal_metric(n, l, order);
    const auto g1 = PointMetric<JetPoly>::identity(n);
    const DiffOp<JetPoly> diff = hodge_laplacian(g2, k) - hodge_laplacian(g1, k);
    const MultiIndex& I = out.index;

    bool ok = true;
    const JetPoly nn = diff.coeff(I, I, {n});
    ok = ok && nn.valuation() >= l - 1;
    out.f_over_i = require_lambda_multiple(nn.coefficient(l - 1), "D_n coefficient");

    const JetPoly z = diff.coeff(I, I, {});
    ok = ok && z.valuation() >= std::max(0, l - 2);
    out.sigma0 = l >= 2 ? require_lambda_multiple(z.coefficient(l - 2), "zeroth-order coefficient") : Rational(0);

    out.sigma1_zero = true;
    std::optional<Rational> second;
    for (int i = 1; i < n; ++i) {
        const JetPoly t = diff.coeff(I, I, {i});
        ok = ok && t.valuation() >= l - 1;
        out.sigma1_zero = out.sigma1_zero && t.coefficient(l - 1).is_zero();
        ok = ok && diff.coeff(I, I, {i, n}).is_zero();
        for (int j = i; j < n; ++j) {
            const JetPoly c = diff.coeff(I, I, {i, j});
            ok = ok && c.valuation() >= l;
            const Rational r = require_lambda_multiple(c.coefficient(l), "second-order coefficient");
            if (i != j) {
                ok = ok && r == 0;
            } else if (!second) {
                second = r;
            } else {
                ok = ok && *second == r;
            }
        }
    }
    ok = ok && diff.coeff(I, I, {n, n}).is_zero();
    // d_i d_i -> -xi_i^2
    out.ktilde = -*second;
    out.structure_ok = ok;
    return out;
}

}  // namespace formlab

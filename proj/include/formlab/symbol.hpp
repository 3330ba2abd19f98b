#pragma once

// Classical symbols on the boundary. Frequencies xi_1..xi_{n-1} and the
// formal generator rho with rho^2 = q(x, xi) = h^{ij}(x) xi_i xi_j. Every
// element is stored as rho^E (A + rho B) with A, B polynomials in xi and E
// even, so rho never needs a square root. Coefficients are complex over a
// differential ring T (Expr in x_1..x_n, or Rational for constant metrics).

#include "formlab/geometry.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <climits>
#include <complex>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace formlab {

template <>
struct Calculus<Rational> {
    static Rational partial(const Rational&, int) { return Rational(0); }
};

namespace detail {

inline double eval_coeff(const Expr& e, Evaluator& ev) { return ev(e); }
inline double eval_coeff(const Rational& r, Evaluator&) { return static_cast<double>(r); }
inline bool coeff_vanishes(const Expr& e, int n) { return e.is_zero() || vanishes(e, n); }
inline bool coeff_vanishes(const Rational& r, int) { return r == 0; }
inline std::string coeff_string(const Expr& e) { return to_string(e); }
inline std::string coeff_string(const Rational& r) { return r.str(); }

template <class T>
bool is_zero(const Cplx<T>& c) {
    return ScalarOps<T>::is_zero(c.re) && ScalarOps<T>::is_zero(c.im);
}

template <class T>
Cplx<T> partial(const Cplx<T>& c, int axis) {
    return Cplx<T>(Calculus<T>::partial(c.re, axis), Calculus<T>::partial(c.im, axis));
}

template <class T>
std::complex<double> eval(const Cplx<T>& c, Evaluator& ev) {
    return {eval_coeff(c.re, ev), eval_coeff(c.im, ev)};
}

template <class T>
std::string to_string(const Cplx<T>& c) {
    if (ScalarOps<T>::is_zero(c.im)) return coeff_string(c.re);
    if (ScalarOps<T>::is_zero(c.re)) return "i*(" + coeff_string(c.im) + ")";
    return coeff_string(c.re) + " + i*(" + coeff_string(c.im) + ")";
}

}  // namespace detail

template <class T>
struct SymbolContext {
    int n = 0;  // ambient dimension; there are n-1 frequencies
    Matrix<T> h;
    Matrix<T> hinv;
};

template <class T>
using ContextPtr = std::shared_ptr<const SymbolContext<T>>;

template <class T>
ContextPtr<T> make_context(int n, Matrix<T> h) {
    if (static_cast<int>(h.size()) != n - 1) throw std::invalid_argument("make_context: h must be (n-1)x(n-1)");
    auto ctx = std::make_shared<SymbolContext<T>>();
    ctx->n = n;
    const T det = determinant(h);
    if (ScalarOps<T>::sign(det) == 0) throw std::domain_error("make_context: singular boundary metric");
    ctx->hinv = inverse(h, det);
    ctx->h = std::move(h);
    return ctx;
}

inline ContextPtr<Expr> make_context(const MetricBNF& g) { return make_context(g.dim(), g.h()); }

inline ContextPtr<Rational> flat_context(int n) {
    Matrix<Rational> h(static_cast<std::size_t>(n - 1), std::vector<Rational>(static_cast<std::size_t>(n - 1), Rational(0)));
    for (int a = 0; a < n - 1; ++a) h[static_cast<std::size_t>(a)][static_cast<std::size_t>(a)] = 1;
    return make_context(n, std::move(h));
}

/// Polynomial in xi_1..xi_m with complex coefficients.
template <class T>
class XiPoly {
public:
    using Exps = std::vector<int>;
    using Coef = Cplx<T>;

    XiPoly() = default;
    explicit XiPoly(int m) : m_(m) {}

    static XiPoly constant(int m, const Coef& c) {
        XiPoly p(m);
        p.add(Exps(static_cast<std::size_t>(m), 0), c);
        return p;
    }
    /// xi_i, 1-based.
    static XiPoly xi(int m, int i) {
        Exps e(static_cast<std::size_t>(m), 0);
        e[static_cast<std::size_t>(i - 1)] = 1;
        XiPoly p(m);
        p.add(e, Coef(ScalarOps<T>::from_int(1)));
        return p;
    }

    int vars() const { return m_; }
    const std::map<Exps, Coef>& terms() const { return terms_; }
    bool is_zero() const { return terms_.empty(); }

    void add(const Exps& e, const Coef& c) {
        if (detail::is_zero(c)) return;
        auto it = terms_.find(e);
        if (it == terms_.end()) {
            terms_.emplace(e, c);
        } else {
            it->second += c;
            if (detail::is_zero(it->second)) terms_.erase(it);
        }
    }

    XiPoly& operator+=(const XiPoly& o) {
        if (m_ == 0) m_ = o.m_;
        for (const auto& [e, c] : o.terms_) add(e, c);
        return *this;
    }
    XiPoly& operator-=(const XiPoly& o) {
        if (m_ == 0) m_ = o.m_;
        for (const auto& [e, c] : o.terms_) add(e, -c);
        return *this;
    }
    friend XiPoly operator+(XiPoly a, const XiPoly& b) { return a += b; }
    friend XiPoly operator-(XiPoly a, const XiPoly& b) { return a -= b; }
    friend XiPoly operator*(const XiPoly& a, const XiPoly& b) {
        XiPoly out(std::max(a.m_, b.m_));
        for (const auto& [ea, ca] : a.terms_) {
            for (const auto& [eb, cb] : b.terms_) {
                Exps e = ea;
                for (std::size_t i = 0; i < e.size(); ++i) e[i] += eb[i];
                out.add(e, ca * cb);
            }
        }
        return out;
    }
    friend XiPoly operator*(const Coef& s, const XiPoly& a) {
        XiPoly out(a.m_);
        if (detail::is_zero(s)) return out;
        for (const auto& [e, c] : a.terms_) out.add(e, s * c);
        return out;
    }

    /// d/dxi_i.
    XiPoly d_xi(int i) const {
        XiPoly out(m_);
        const auto p = static_cast<std::size_t>(i - 1);
        for (const auto& [e, c] : terms_) {
            if (e[p] == 0) continue;
            Exps f = e;
            f[p] -= 1;
            out.add(f, Coef(ScalarOps<T>::from_int(e[p])) * c);
        }
        return out;
    }
    /// d/dx_a applied to the coefficients.
    XiPoly d_x(int a) const {
        XiPoly out(m_);
        for (const auto& [e, c] : terms_) out.add(e, detail::partial(c, a));
        return out;
    }

    /// Exact quotient by d (lex division on the leading term of d, which must
    /// have a real coefficient); nullopt when the remainder is nonzero.
    std::optional<XiPoly> divide(const XiPoly& d, int n) const {
        if (d.is_zero()) throw std::domain_error("XiPoly: division by zero");
        const auto& [dlead, dc] = *d.terms_.rbegin();
        if (!ScalarOps<T>::is_zero(dc.im)) throw std::invalid_argument("XiPoly: leading divisor coefficient must be real");
        XiPoly rest = *this, quot(m_);
        while (!rest.is_zero()) {
            const auto [lead, c] = *rest.terms_.rbegin();
            Exps t = lead;
            for (std::size_t i = 0; i < t.size(); ++i) {
                t[i] -= dlead[i];
                if (t[i] < 0) return std::nullopt;
            }
            const Coef f(c.re / dc.re, c.im / dc.re);
            quot.add(t, f);
            rest.terms_.erase(std::prev(rest.terms_.end()));
            for (const auto& [e, v] : d.terms_) {
                if (e == dlead) continue;
                Exps s = e;
                for (std::size_t i = 0; i < s.size(); ++i) s[i] += t[i];
                rest.add(s, -(f * v));
            }
            rest.prune(n);
        }
        return quot;
    }

    /// Drops coefficients that vanish numerically (Expr) or exactly.
    void prune(int n) {
        for (auto it = terms_.begin(); it != terms_.end();) {
            if (detail::coeff_vanishes(it->second.re, n) && detail::coeff_vanishes(it->second.im, n)) {
                it = terms_.erase(it);
            } else {
                ++it;
            }
        }
    }

    std::complex<double> evaluate(Evaluator& ev, const std::vector<double>& xi) const {
        std::complex<double> acc = 0.0;
        for (const auto& [e, c] : terms_) {
            double mono = 1.0;
            for (std::size_t i = 0; i < e.size(); ++i) {
                for (int r = 0; r < e[i]; ++r) mono *= xi[i];
            }
            acc += detail::eval(c, ev) * mono;
        }
        return acc;
    }

private:
    int m_ = 0;
    std::map<Exps, Coef> terms_;
};

/// Element rho^E (A + rho B) of the symbol ring.
template <class T>
class SymbolElem {
public:
    using Poly = XiPoly<T>;
    using Coef = Cplx<T>;

    SymbolElem() = default;
    explicit SymbolElem(ContextPtr<T> ctx) : ctx_(std::move(ctx)), a_(ctx_->n - 1), b_(ctx_->n - 1) {}
    SymbolElem(ContextPtr<T> ctx, int e, Poly a, Poly b) : ctx_(std::move(ctx)), e_(e), a_(std::move(a)), b_(std::move(b)) {
        if (e_ % 2 != 0) throw std::invalid_argument("SymbolElem: rho exponent of the normal form must be even");
    }

    static SymbolElem constant(ContextPtr<T> ctx, const Coef& c) {
        const int m = ctx->n - 1;
        return SymbolElem(ctx, 0, Poly::constant(m, c), Poly(m));
    }
    static SymbolElem poly(ContextPtr<T> ctx, Poly a) {
        const int m = ctx->n - 1;
        return SymbolElem(ctx, 0, std::move(a), Poly(m));
    }
    static SymbolElem xi(ContextPtr<T> ctx, int i) { return poly(ctx, Poly::xi(ctx->n - 1, i)); }
    /// rho^p for any integer p.
    static SymbolElem rho_power(ContextPtr<T> ctx, int p) {
        const int m = ctx->n - 1;
        const int e = p >= 0 ? p - (p % 2) : p - ((-p) % 2);
        Poly one = Poly::constant(m, Coef(ScalarOps<T>::from_int(1)));
        if (p % 2 == 0) return SymbolElem(ctx, e, one, Poly(m));
        return SymbolElem(ctx, e, Poly(m), one);
    }

    const ContextPtr<T>& context() const { return ctx_; }
    int rho_exponent() const { return e_; }
    const Poly& a() const { return a_; }
    const Poly& b() const { return b_; }
    bool is_zero() const { return a_.is_zero() && b_.is_zero(); }

    /// q = h^{ij} xi_i xi_j as a polynomial.
    Poly q() const {
        const int m = ctx_->n - 1;
        Poly out(m);
        for (int i = 1; i <= m; ++i) {
            for (int j = 1; j <= m; ++j) {
                const T& c = ctx_->hinv[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
                if (ScalarOps<T>::is_zero(c)) continue;
                out += Coef(c) * (Poly::xi(m, i) * Poly::xi(m, j));
            }
        }
        return out;
    }

    /// Same element with rho exponent lowered to `e` (e <= E, same parity).
    SymbolElem with_exponent(int e) const {
        if (e > e_ || (e_ - e) % 2 != 0) throw std::invalid_argument("SymbolElem: cannot raise the stored rho exponent");
        SymbolElem out = *this;
        const Poly qq = q();
        for (int t = 0; t < (e_ - e) / 2; ++t) {
            out.a_ = qq * out.a_;
            out.b_ = qq * out.b_;
        }
        out.e_ = e;
        return out;
    }

    /// Same element with the stored rho exponent raised to `e` by dividing
    /// A and B by powers of q; nullopt when they are not divisible.
    std::optional<SymbolElem> raised_to(int e) const {
        if (e <= e_) return with_exponent(e);
        if ((e - e_) % 2 != 0) throw std::invalid_argument("SymbolElem: exponent parity mismatch");
        SymbolElem out = *this;
        const Poly qq = q();
        for (int t = 0; t < (e - e_) / 2; ++t) {
            auto a = out.a_.divide(qq, ctx_->n);
            auto b = out.b_.divide(qq, ctx_->n);
            if (!a || !b) return std::nullopt;
            out.a_ = std::move(*a);
            out.b_ = std::move(*b);
        }
        out.e_ = e;
        return out;
    }

    SymbolElem& operator+=(const SymbolElem& o) { return combine(o, 1); }
    SymbolElem& operator-=(const SymbolElem& o) { return combine(o, -1); }
    friend SymbolElem operator+(SymbolElem a, const SymbolElem& b) { return a += b; }
    friend SymbolElem operator-(SymbolElem a, const SymbolElem& b) { return a -= b; }
    friend SymbolElem operator-(const SymbolElem& a) {
        return SymbolElem(a.ctx_, a.e_, Coef(ScalarOps<T>::from_int(-1)) * a.a_, Coef(ScalarOps<T>::from_int(-1)) * a.b_);
    }
    friend SymbolElem operator*(const SymbolElem& x, const SymbolElem& y) {
        check_ring(x, y);
        const Poly qq = x.q();
        return SymbolElem(x.ctx_, x.e_ + y.e_, x.a_ * y.a_ + qq * (x.b_ * y.b_), x.a_ * y.b_ + x.b_ * y.a_);
    }
    friend SymbolElem operator*(const Coef& s, const SymbolElem& x) {
        return SymbolElem(x.ctx_, x.e_, s * x.a_, s * x.b_);
    }
    /// Multiplication by rho^p.
    SymbolElem times_rho(int p) const {
        SymbolElem out = *this;
        const Poly qq = q();
        const int steps = p >= 0 ? p : -p;
        for (int s = 0; s < steps; ++s) {
            // rho (A + rho B) = q B + rho A; dividing by rho also lowers E by 2
            Poly na = qq * out.b_;
            out.b_ = out.a_;
            out.a_ = std::move(na);
            if (p < 0) out.e_ -= 2;
        }
        return out;
    }

    /// d/dxi_i.
    SymbolElem d_xi(int i) const {
        const int m = ctx_->n - 1;
        Poly w(m);
        for (int j = 1; j <= m; ++j) {
            const T& c = ctx_->hinv[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
            if (!ScalarOps<T>::is_zero(c)) w += Coef(c) * Poly::xi(m, j);
        }
        return chain(w, [i](const Poly& p) { return p.d_xi(i); });
    }
    /// d/dx_a (a in 1..n), including the x-dependence of rho.
    SymbolElem d_x(int a) const {
        const int m = ctx_->n - 1;
        Poly w(m);
        const T half = ScalarOps<T>::from_int(1) / ScalarOps<T>::from_int(2);
        for (int i = 1; i <= m; ++i) {
            for (int j = 1; j <= m; ++j) {
                T c = Calculus<T>::partial(ctx_->hinv[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)], a);
                if (ScalarOps<T>::is_zero(c)) continue;
                w += Coef(half * c) * (Poly::xi(m, i) * Poly::xi(m, j));
            }
        }
        if (w.is_zero()) return SymbolElem(ctx_, e_, a_.d_x(a), b_.d_x(a));
        return chain(w, [a](const Poly& p) { return p.d_x(a); });
    }

    void prune() {
        a_.prune(ctx_->n);
        b_.prune(ctx_->n);
    }

    /// Value at the point x (length n) and real frequency xi (length n-1).
    std::complex<double> evaluate(Evaluator& ev, const std::vector<double>& xi) const {
        const double qv = q().evaluate(ev, xi).real();
        const double rho = std::sqrt(qv);
        return std::pow(rho, e_) * (a_.evaluate(ev, xi) + rho * b_.evaluate(ev, xi));
    }
    std::complex<double> evaluate(const std::vector<double>& x, const std::vector<double>& xi) const {
        Evaluator ev(x);
        return evaluate(ev, xi);
    }

    /// JSON monomial list [{xi_exponents, rho_exponent, coeff_expr}].
    nlohmann::json monomials_json() const {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& [e, c] : a_.terms())
            out.push_back({{"xi_exponents", e}, {"rho_exponent", e_}, {"coeff_expr", detail::to_string(c)}});
        for (const auto& [e, c] : b_.terms())
            out.push_back({{"xi_exponents", e}, {"rho_exponent", e_ + 1}, {"coeff_expr", detail::to_string(c)}});
        return out;
    }

private:
    static void check_ring(const SymbolElem& x, const SymbolElem& y) {
        if (x.ctx_ != y.ctx_) throw std::invalid_argument("SymbolElem: ring mismatch");
    }

    SymbolElem& combine(const SymbolElem& o, int sign) {
        if (!ctx_) return *this = sign > 0 ? o : -o;
        if (!o.ctx_) return *this;
        check_ring(*this, o);
        const int e = std::min(e_, o.e_);
        SymbolElem x = with_exponent(e);
        SymbolElem y = o.with_exponent(e);
        if (sign > 0) {
            x.a_ += y.a_;
            x.b_ += y.b_;
        } else {
            x.a_ -= y.a_;
            x.b_ -= y.b_;
        }
        return *this = std::move(x);
    }

    // d(rho^E A + rho^{E+1} B) with d(rho^2) = 2w.
    template <class D>
    SymbolElem chain(const Poly& w, D&& dpoly) const {
        const Poly qq = q();
        const Coef ce(ScalarOps<T>::from_int(e_));
        const Coef ce1(ScalarOps<T>::from_int(e_ + 1));
        Poly na = ce * (w * a_) + qq * dpoly(a_);
        Poly nb = ce1 * (w * b_) + qq * dpoly(b_);
        return SymbolElem(ctx_, e_ - 2, std::move(na), std::move(nb));
    }

    ContextPtr<T> ctx_;
    int e_ = 0;
    Poly a_;
    Poly b_;
};

/// Matrix symbol homogeneous of a fixed degree, stored sparsely over pairs of
/// component indices (row = output, column = input).
template <class T>
class HomSymbol {
public:
    using Key = std::pair<MultiIndex, MultiIndex>;

    HomSymbol() = default;
    HomSymbol(ContextPtr<T> ctx, int k_in, int k_out, int degree)
        : ctx_(std::move(ctx)), k_in_(k_in), k_out_(k_out), degree_(degree) {}

    static HomSymbol scalar(ContextPtr<T> ctx, int k, int degree, const SymbolElem<T>& s) {
        HomSymbol out(ctx, k, k, degree);
        for (const auto& i : MultiIndex::all(ctx->n, k)) out.add(i, i, s);
        return out;
    }

    const ContextPtr<T>& context() const { return ctx_; }
    int dim() const { return ctx_->n; }
    int k_in() const { return k_in_; }
    int k_out() const { return k_out_; }
    int degree() const { return degree_; }
    const std::map<Key, SymbolElem<T>>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }

    SymbolElem<T> entry(const MultiIndex& row, const MultiIndex& col) const {
        auto it = entries_.find({row, col});
        return it == entries_.end() ? SymbolElem<T>(ctx_) : it->second;
    }

    void add(const MultiIndex& row, const MultiIndex& col, const SymbolElem<T>& v) {
        if (v.is_zero()) return;
        auto it = entries_.find({row, col});
        if (it == entries_.end()) {
            entries_.emplace(Key{row, col}, v);
        } else {
            it->second += v;
            if (it->second.is_zero()) entries_.erase(it);
        }
    }

    HomSymbol& operator+=(const HomSymbol& o) {
        check_shape(o);
        for (const auto& [key, v] : o.entries_) add(key.first, key.second, v);
        return *this;
    }
    HomSymbol& operator-=(const HomSymbol& o) {
        check_shape(o);
        for (const auto& [key, v] : o.entries_) add(key.first, key.second, -v);
        return *this;
    }
    friend HomSymbol operator+(HomSymbol a, const HomSymbol& b) { return a += b; }
    friend HomSymbol operator-(HomSymbol a, const HomSymbol& b) { return a -= b; }
    friend HomSymbol operator*(const HomSymbol& a, const HomSymbol& b) {
        if (a.ctx_ != b.ctx_) throw std::invalid_argument("HomSymbol: ring mismatch");
        if (a.k_in_ != b.k_out_) throw std::invalid_argument("HomSymbol: shape mismatch in product");
        HomSymbol out(a.ctx_, b.k_in_, a.k_out_, a.degree_ + b.degree_);
        std::map<MultiIndex, std::vector<std::pair<MultiIndex, const SymbolElem<T>*>>> rows_of_b;
        for (const auto& [key, v] : b.entries_) rows_of_b[key.first].emplace_back(key.second, &v);
        for (const auto& [ka, va] : a.entries_) {
            auto it = rows_of_b.find(ka.second);
            if (it == rows_of_b.end()) continue;
            for (const auto& [col, vb] : it->second) out.add(ka.first, col, va * *vb);
        }
        return out;
    }
    friend HomSymbol operator*(const Cplx<T>& s, const HomSymbol& a) {
        HomSymbol out(a.ctx_, a.k_in_, a.k_out_, a.degree_);
        for (const auto& [key, v] : a.entries_) out.add(key.first, key.second, s * v);
        return out;
    }

    template <class F>
    HomSymbol map(int degree, F&& f) const {
        HomSymbol out(ctx_, k_in_, k_out_, degree);
        for (const auto& [key, v] : entries_) out.add(key.first, key.second, f(v));
        return out;
    }
    HomSymbol d_xi(int i) const { return map(degree_ - 1, [i](const SymbolElem<T>& v) { return v.d_xi(i); }); }
    HomSymbol d_x(int a) const { return map(degree_, [a](const SymbolElem<T>& v) { return v.d_x(a); }); }
    HomSymbol times_rho(int p) const { return map(degree_ + p, [p](const SymbolElem<T>& v) { return v.times_rho(p); }); }

    void prune() {
        for (auto it = entries_.begin(); it != entries_.end();) {
            it->second.prune();
            it = it->second.is_zero() ? entries_.erase(it) : std::next(it);
        }
    }

    /// Dense evaluation over MultiIndex::all ranks.
    Eigen::MatrixXcd evaluate(const std::vector<double>& x, const std::vector<double>& xi) const {
        const int n = ctx_->n;
        Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(binomial(n, k_out_), binomial(n, k_in_));
        Evaluator ev(x);
        for (const auto& [key, v] : entries_) m(key.first.rank(), key.second.rank()) = v.evaluate(ev, xi);
        return m;
    }

    /// Largest entry magnitude over a fixed sample of points x in
    /// [-0.3, 0.3]^n and unit frequencies.
    double sample_norm(int samples = 4) const {
        std::mt19937 rng(7321);
        std::uniform_real_distribution<double> ux(-0.3, 0.3), uxi(-1.0, 1.0);
        const int n = ctx_->n;
        double best = 0.0;
        for (int s = 0; s < samples; ++s) {
            std::vector<double> x(static_cast<std::size_t>(n)), xi(static_cast<std::size_t>(n - 1));
            for (auto& v : x) v = ux(rng);
            double nrm = 0.0;
            for (auto& v : xi) {
                v = uxi(rng);
                nrm += v * v;
            }
            for (auto& v : xi) v /= std::sqrt(nrm);
            best = std::max(best, evaluate(x, xi).cwiseAbs().maxCoeff());
        }
        return entries_.empty() ? 0.0 : best;
    }

    nlohmann::json to_json() const {
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& [key, v] : entries_)
            entries.push_back({{"row_index", key.first.str()}, {"col_index", key.second.str()}, {"monomials", v.monomials_json()}});
        return {{"degree", degree_}, {"entries", entries}};
    }

private:
    void check_shape(const HomSymbol& o) const {
        if (o.ctx_ != ctx_) throw std::invalid_argument("HomSymbol: ring mismatch");
        if (o.k_in_ != k_in_ || o.k_out_ != k_out_ || o.degree_ != degree_)
            throw std::invalid_argument("HomSymbol: shape or degree mismatch");
    }

    ContextPtr<T> ctx_;
    int k_in_ = 0;
    int k_out_ = 0;
    int degree_ = 0;
    std::map<Key, SymbolElem<T>> entries_;
};

/// p ~ sum_j p_{m-j}; terms[j] has degree m - j (possibly empty).
template <class T>
class ClassicalSymbol {
public:
    ClassicalSymbol() = default;
    ClassicalSymbol(ContextPtr<T> ctx, int k_in, int k_out, int leading, int count)
        : ctx_(std::move(ctx)), k_in_(k_in), k_out_(k_out), leading_(leading) {
        for (int j = 0; j < count; ++j) terms_.emplace_back(ctx_, k_in, k_out, leading - j);
    }

    const ContextPtr<T>& context() const { return ctx_; }
    int k_in() const { return k_in_; }
    int k_out() const { return k_out_; }
    int leading_degree() const { return leading_; }
    int size() const { return static_cast<int>(terms_.size()); }
    const HomSymbol<T>& term(int j) const { return terms_[static_cast<std::size_t>(j)]; }
    HomSymbol<T>& term(int j) { return terms_[static_cast<std::size_t>(j)]; }
    /// Term of the given degree (empty symbol outside the stored range).
    HomSymbol<T> at_degree(int d) const {
        const int j = leading_ - d;
        if (j < 0 || j >= size()) return HomSymbol<T>(ctx_, k_in_, k_out_, d);
        return terms_[static_cast<std::size_t>(j)];
    }

    /// Appends the next lower-degree term.
    void push_term(HomSymbol<T> t) {
        if (t.degree() != leading_ - size()) throw std::invalid_argument("ClassicalSymbol: degrees must descend by one");
        terms_.push_back(std::move(t));
    }

    ClassicalSymbol truncated(int count) const {
        ClassicalSymbol out = *this;
        if (count < size()) out.terms_.resize(static_cast<std::size_t>(count));
        return out;
    }

    ClassicalSymbol& operator+=(const ClassicalSymbol& o) { return combine(o, 1); }
    ClassicalSymbol& operator-=(const ClassicalSymbol& o) { return combine(o, -1); }
    friend ClassicalSymbol operator+(ClassicalSymbol a, const ClassicalSymbol& b) { return a += b; }
    friend ClassicalSymbol operator-(ClassicalSymbol a, const ClassicalSymbol& b) { return a -= b; }

    void prune() {
        for (auto& t : terms_) t.prune();
    }

    nlohmann::json to_json() const {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& t : terms_) out.push_back(t.to_json());
        return out;
    }

private:
    ClassicalSymbol& combine(const ClassicalSymbol& o, int sign) {
        if (o.ctx_ != ctx_ || o.k_in_ != k_in_ || o.k_out_ != k_out_) throw std::invalid_argument("ClassicalSymbol: ring mismatch");
        const int top = std::max(leading_, o.leading_);
        const int bottom = std::min(leading_ - size() + 1, o.leading_ - o.size() + 1);
        ClassicalSymbol out(ctx_, k_in_, k_out_, top, top - bottom + 1);
        for (int d = top; d >= bottom; --d) {
            HomSymbol<T>& t = out.term(top - d);
            t += at_degree(d);
            if (sign > 0) {
                t += o.at_degree(d);
            } else {
                t -= o.at_degree(d);
            }
        }
        return *this = std::move(out);
    }

    ContextPtr<T> ctx_;
    int k_in_ = 0;
    int k_out_ = 0;
    int leading_ = 0;
    std::vector<HomSymbol<T>> terms_;
};

/// All multi-indices over m axes with |alpha| = order.
inline std::vector<std::vector<int>> multi_indices(int m, int order) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(static_cast<std::size_t>(m), 0);
    std::function<void(int, int)> rec = [&](int pos, int left) {
        if (pos == m - 1) {
            cur[static_cast<std::size_t>(pos)] = left;
            out.push_back(cur);
            return;
        }
        for (int v = left; v >= 0; --v) {
            cur[static_cast<std::size_t>(pos)] = v;
            rec(pos + 1, left - v);
        }
    };
    if (m > 0) rec(0, order);
    return out;
}

/// Asymptotic composition p # q = sum_alpha (1/alpha!) d_xi^alpha p (-i d_x')^alpha q,
/// keeping the first J homogeneous terms.
template <class T>
ClassicalSymbol<T> compose(const ClassicalSymbol<T>& p, const ClassicalSymbol<T>& q, int J) {
    if (p.context() != q.context()) throw std::invalid_argument("compose: ring mismatch");
    if (p.k_in() != q.k_out()) throw std::invalid_argument("compose: shape mismatch");
    const auto& ctx = p.context();
    const int m = ctx->n - 1;
    ClassicalSymbol<T> out(ctx, q.k_in(), p.k_out(), p.leading_degree() + q.leading_degree(), J);
    for (int i = 0; i < std::min(J, p.size()); ++i) {
        if (p.term(i).empty()) continue;
        for (int j = 0; i + j < J && j < q.size(); ++j) {
            if (q.term(j).empty()) continue;
            for (int order = 0; i + j + order < J; ++order) {
                for (const auto& alpha : multi_indices(m, order)) {
                    HomSymbol<T> dp = p.term(i);
                    HomSymbol<T> dq = q.term(j);
                    Integer fact = 1;
                    for (int a = 1; a <= m; ++a) {
                        for (int r = 0; r < alpha[static_cast<std::size_t>(a - 1)]; ++r) {
                            dp = dp.d_xi(a);
                            dq = dq.d_x(a);
                            fact *= (r + 1);
                        }
                    }
                    if (dp.empty() || dq.empty()) continue;
                    // (-i)^order / alpha!
                    const Rational mag = Rational(1) / Rational(fact);
                    Cplx<T> s;
                    switch (order % 4) {
                        case 0: s = Cplx<T>(T(mag), T(0)); break;
                        case 1: s = Cplx<T>(T(0), T(-mag)); break;
                        case 2: s = Cplx<T>(T(-mag), T(0)); break;
                        default: s = Cplx<T>(T(0), T(mag)); break;
                    }
                    out.term(i + j + order) += s * (dp * dq);
                }
            }
        }
    }
    return out;
}

/// x_n-family P = sum_j x_n^{r-j} P_j with ord P_j = m - j, represented by the
/// principal symbols c_j = sigma_{m-j}(P_j) at x_n = 0.
template <class T>
struct FamilySymbol {
    int m = 0;
    int r = 0;
    std::vector<SymbolElem<T>> principal;
};

/// Right-hand side of the c_j recursion for
/// Delta_2 - Delta_1 = x_n^l P_2 + x_n^{l-1} P_1 + x_n^{l-2} P_0 + x_n^{l-1} F D_n.
template <class T>
struct FamilyRhs {
    SymbolElem<T> p2;  // sigma_2(P_2)
    SymbolElem<T> p1;  // sigma_1(P_1)
    Cplx<T> f;         // F
    SymbolElem<T> p0;  // sigma_0(P_0)
};

/// Solves 2 rho c_0 = p2, 2 rho c_1 + s l c_0 = p1 + i rho F,
/// 2 rho c_2 + s (l-1) c_1 = p0 and 2 rho c_{m} + s (l-m+1) c_{m-1} = 0 for
/// 3 <= m <= l. The coupling sign s = +1 gives the relations as usually
/// written (D_n = +i d_n, B selecting x_n-growing modes); s = -1 is their form
/// for D_n = -i d_n with Lambda = -B.
template <class T>
FamilySymbol<T> family_reduce(const ContextPtr<T>& ctx, int l, const FamilyRhs<T>& rhs, int coupling = 1) {
    if (l < 1) throw std::invalid_argument("family_reduce: l must be >= 1");
    if (coupling != 1 && coupling != -1) throw std::invalid_argument("family_reduce: coupling sign must be +1 or -1");
    const Cplx<T> half(ScalarOps<T>::from_int(1) / ScalarOps<T>::from_int(2));
    auto solve = [&](const SymbolElem<T>& r) { return half * r.times_rho(-1); };
    auto zero_if_empty = [&](const SymbolElem<T>& s) { return s.context() ? s : SymbolElem<T>(ctx); };
    FamilySymbol<T> fam;
    fam.m = 1;
    fam.r = l;
    fam.principal.push_back(solve(zero_if_empty(rhs.p2)));
    for (int m = 1; m <= l; ++m) {
        SymbolElem<T> r(ctx);
        if (m == 1) {
            r = zero_if_empty(rhs.p1) + (Cplx<T>::i() * rhs.f) * SymbolElem<T>::rho_power(ctx, 1);
        } else if (m == 2) {
            r = zero_if_empty(rhs.p0);
        }
        const Cplx<T> coeff(ScalarOps<T>::from_int(static_cast<long>(coupling) * (l - m + 1)));
        r -= coeff * fam.principal.back();
        fam.principal.push_back(solve(r));
    }
    return fam;
}

struct FamilyConstants {
    int l = 0;
    CRational K;
    CRational L;
    CRational M;
};

/// K_l, L_l, M_l in c_l = K rho^{-l-1} Q + L rho^{-l} sigma_1(P_1) + i L rho^{1-l} F + M rho^{1-l} sigma_0(P_0),
/// by running the recursion on unit inputs in exact arithmetic.
FamilyConstants family_constants(int l, int coupling = 1);

// ---------------------------------------------------------------------------
// Factorization

struct FactorizeOptions {
    /// Terms kept when forming each intermediate residual; 0 means "just
    /// enough for the next correction".
    int residual_terms = 0;
};

struct Factorization {
    ClassicalSymbol<Expr> b;         // degrees 1, 0, ..., 1-J
    ClassicalSymbol<Expr> residual;  // final residual, degrees 2 .. 1-J
    /// residual_top[j]: highest degree with a nonzero residual term after j
    /// correction rounds (INT_MIN when the inspected window is clean).
    std::vector<int> residual_top;
};

/// Full symbol of the tangential part Delta' + H (degrees 2, 1, 0) and the
/// normal coefficient E, in the variables of `ctx`.
ClassicalSymbol<Expr> tangential_symbol(const OperatorBNF& op, const ContextPtr<Expr>& ctx);
HomSymbol<Expr> normal_coefficient(const OperatorBNF& op, const ContextPtr<Expr>& ctx);

/// Residual Delta' + H - (B # B - i E B - d_n B) through `terms` degrees from 2.
ClassicalSymbol<Expr> factorization_residual(const ClassicalSymbol<Expr>& s, const HomSymbol<Expr>& e,
                                             const ClassicalSymbol<Expr>& b, int terms);

/// Delta = (D_n + E + iB)(D_n - iB) modulo order 1-J, D = -i d. Throws
/// std::domain_error unless the principal part is g(xi, xi) I.
Factorization factorize(const OperatorBNF& op, const MetricBNF& g, int J, const FactorizeOptions& opts = {});

// ---------------------------------------------------------------------------
// Conformal family dx_n^2 + (1 + x_n^l lambda(x')) dx'^2 against the flat metric

struct ConformalTerms {
    int n = 0;
    int k = 0;
    int l = 0;
    bool normal = true;
    MultiIndex index;         // the diagonal component u_I dx_I examined
    Rational star_exponent;   // *_2 dx_I = (1 + x_n^l lambda)^{e} *_1 dx_I
    /// D_n coefficient at x_n^{l-1} is F = i * f_over_i * lambda.
    Rational f_over_i;
    /// sigma_0(P_0) = sigma0 * lambda.
    Rational sigma0;
    /// sigma_2(P_2) = ktilde * lambda * |xi'|^2.
    Rational ktilde;
    /// sigma_1(P_1) vanishes identically (including lambda-derivative terms).
    bool sigma1_zero = false;
    /// No terms of Delta_2 - Delta_1 below the orders x_n^l, x_n^{l-1}, x_n^{l-2}.
    bool structure_ok = false;
};

/// Normal (I = (1..k-1, n)) or tangential (I = (1..k)) component index.
MultiIndex conformal_index(int n, int k, bool normal);

/// Exponent e with *_2 = (1 + x_n^l lambda)^e *_1 on the basis form, read off
/// from the exact jet expansion; throws std::logic_error if the jet is not a
/// pure power through order `order`.
Rational conformal_star_exponent(int n, int k, bool normal, int order = 3);

/// Extracts F, sigma_0(P_0), sigma_1(P_1) and P_2 from the exact jet expansion
/// of the k-form Laplacians. Throws std::domain_error for the excluded cases
/// k = (n+1)/2 with n in I and k = (n-1)/2 with n not in I.
ConformalTerms conformal_difference(int n, int k, int l, bool normal);

// ---------------------------------------------------------------------------
// Inverting c_l

enum class KtildeMode { Explicit, Conformal, Unknown };

template <class T>
struct KtildeInput {
    KtildeMode mode = KtildeMode::Unknown;
    Cplx<T> f;       // Explicit: F
    Cplx<T> sigma0;  // Explicit: sigma_0(P_0)
    /// Conformal: F = f_per_lambda * lambda, sigma_0 = s_per_lambda * lambda and
    /// k~ = kappa * lambda * h^{-1}.
    Cplx<T> f_per_lambda;
    Cplx<T> s_per_lambda;
    Cplx<T> kappa;
};

template <class T>
struct KtildeResult {
    Matrix<Cplx<T>> ktilde;   // k~_{ij}, so that Q = k~_{ij} xi_i xi_j
    Cplx<T> combination;      // i L F + M sigma_0 (trace part for Unknown)
    Cplx<T> lambda;           // Conformal mode only
    bool sigma1_zero = true;
};

/// Splits c_l rho^{l+1} = K k~(xi, xi) + (i L F + M sigma_0) q + rho L sigma_1.
/// The rho-odd part must vanish (sigma_1(P_1) = 0); otherwise
/// std::invalid_argument ("inconsistent component data").
template <class T>
KtildeResult<T> recover_ktilde(const SymbolElem<T>& cl, int l, const FamilyConstants& kc, const KtildeInput<T>& in) {
    using C = Cplx<T>;
    const auto& ctx = cl.context();
    const int m = ctx->n - 1;
    auto raised = cl.times_rho(l + 1).raised_to(0);
    if (!raised) throw std::invalid_argument("recover_ktilde: inconsistent component data (not polynomial after rho^{l+1})");
    const SymbolElem<T>& num = *raised;
    if (!num.b().is_zero()) throw std::invalid_argument("recover_ktilde: inconsistent component data (sigma_1(P_1) part present)");
    auto lift = [](const CRational& z) { return C(T(z.re), T(z.im)); };
    const C K = lift(kc.K), L = lift(kc.L), M = lift(kc.M);
    if (detail::is_zero(K)) throw std::invalid_argument("recover_ktilde: K_l vanishes");
    // symmetric coefficient matrix of the quadratic form
    Matrix<C> a(static_cast<std::size_t>(m), std::vector<C>(static_cast<std::size_t>(m)));
    const T half = ScalarOps<T>::from_int(1) / ScalarOps<T>::from_int(2);
    for (const auto& [e, c] : num.a().terms()) {
        std::vector<int> axes;
        int deg = 0;
        for (int i = 0; i < m; ++i) {
            deg += e[static_cast<std::size_t>(i)];
            for (int r = 0; r < e[static_cast<std::size_t>(i)]; ++r) axes.push_back(i);
        }
        if (deg != 2) throw std::invalid_argument("recover_ktilde: inconsistent component data (not quadratic in xi)");
        const auto i = static_cast<std::size_t>(axes[0]);
        const auto j = static_cast<std::size_t>(axes[1]);
        if (i == j) {
            a[i][i] += c;
        } else {
            a[i][j] += C(half) * c;
            a[j][i] += C(half) * c;
        }
    }
    auto hinv = [&](std::size_t i, std::size_t j) { return C(ctx->hinv[i][j]); };
    // trace part t with a = t h^{-1} + a0, tr(h a0) = 0
    C tr;
    for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i)
        for (std::size_t j = 0; j < static_cast<std::size_t>(m); ++j) tr += C(ctx->h[j][i]) * a[i][j];
    const C t = C(ScalarOps<T>::from_int(1) / ScalarOps<T>::from_int(m)) * tr;

    KtildeResult<T> res;
    res.ktilde.assign(static_cast<std::size_t>(m), std::vector<C>(static_cast<std::size_t>(m)));
    if (!ScalarOps<T>::is_zero(K.im)) throw std::invalid_argument("recover_ktilde: complex K_l not supported");
    auto over_k = [&](const C& z) { return C(z.re / K.re, z.im / K.re); };
    C comb;
    if (in.mode == KtildeMode::Explicit) {
        comb = Cplx<T>::i() * L * in.f + M * in.sigma0;
    } else if (in.mode == KtildeMode::Unknown) {
        comb = t;
    } else {
        const C bracket = K * in.kappa + Cplx<T>::i() * L * in.f_per_lambda + M * in.s_per_lambda;
        if (ScalarOps<T>::sign(bracket.im) != 0 || ScalarOps<T>::sign(bracket.re) == 0)
            throw std::invalid_argument("recover_ktilde: conformal bracket must be a nonzero real constant");
        res.lambda = C(t.re / bracket.re, t.im / bracket.re);
        comb = Cplx<T>::i() * L * in.f_per_lambda * res.lambda + M * in.s_per_lambda * res.lambda;
    }
    res.combination = comb;
    for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i)
        for (std::size_t j = 0; j < static_cast<std::size_t>(m); ++j) res.ktilde[i][j] = over_k(a[i][j] - comb * hinv(i, j));
    return res;
}

}  // namespace formlab

#pragma once

// Linear differential operators acting on k-form component vectors:
//   (A u)_out = sum_{in, alpha} a_{out,in,alpha}(x) d^alpha u_in
// with coefficients in a differential ring C (symbolic Expr or jet
// polynomials). Composition applies the Leibniz rule exactly.

#include "formlab/forms.hpp"

#include <functional>
#include <map>
#include <tuple>
#include <vector>

namespace formlab {

/// Multiset of differentiation axes, kept sorted (mixed partials commute).
using Deriv = std::vector<int>;

inline Deriv merge_deriv(Deriv a, const Deriv& b) {
    a.insert(a.end(), b.begin(), b.end());
    std::sort(a.begin(), a.end());
    return a;
}

struct OpKey {
    MultiIndex out;
    MultiIndex in;
    Deriv deriv;
    auto operator<=>(const OpKey&) const = default;
    bool operator==(const OpKey&) const = default;
};

/// Differentiation of coefficients; specialized per ring.
template <class C>
struct Calculus;

template <class C>
class DiffOp {
public:
    DiffOp(int n, int k_in, int k_out) : n_(n), k_in_(k_in), k_out_(k_out) {}

    int dim() const { return n_; }
    int k_in() const { return k_in_; }
    int k_out() const { return k_out_; }
    const std::map<OpKey, C>& terms() const { return terms_; }

    void add(const MultiIndex& out, const MultiIndex& in, const Deriv& d, const C& c) {
        if (ScalarOps<C>::is_zero(c)) return;
        OpKey key{out, in, d};
        auto it = terms_.find(key);
        if (it == terms_.end()) {
            terms_.emplace(std::move(key), c);
        } else {
            it->second = it->second + c;
            if (ScalarOps<C>::is_zero(it->second)) terms_.erase(it);
        }
    }

    C coeff(const MultiIndex& out, const MultiIndex& in, const Deriv& d) const {
        auto it = terms_.find(OpKey{out, in, d});
        return it == terms_.end() ? ScalarOps<C>::from_int(0) : it->second;
    }

    int order() const {
        int o = 0;
        for (const auto& [key, c] : terms_) o = std::max(o, static_cast<int>(key.deriv.size()));
        return o;
    }

    static DiffOp identity(int n, int k) {
        DiffOp op(n, k, k);
        for (const auto& i : MultiIndex::all(n, k)) op.add(i, i, {}, ScalarOps<C>::from_int(1));
        return op;
    }

    /// Exterior derivative on k-forms with constant coefficients.
    static DiffOp exterior_derivative(int n, int k) {
        DiffOp op(n, k, k + 1);
        for (const auto& i : MultiIndex::all(n, k)) {
            for (int a = 1; a <= n; ++a) {
                if (i.contains(a)) continue;
                std::vector<int> axes{a};
                axes.insert(axes.end(), i.axes().begin(), i.axes().end());
                auto s = normalize_axes(n, std::move(axes));
                op.add(s->index, i, {a}, ScalarOps<C>::from_int(s->sign));
            }
        }
        return op;
    }

    /// Zeroth-order operator from a pointwise linear map given on basis forms.
    static DiffOp pointwise(int n, int k_in, int k_out, const std::function<FiberForm<C>(const MultiIndex&)>& image) {
        DiffOp op(n, k_in, k_out);
        for (const auto& i : MultiIndex::all(n, k_in)) {
            const FiberForm<C> img = image(i);
            for (const auto& [j, c] : img.terms()) op.add(j, i, {}, c);
        }
        return op;
    }

    /// Hodge star on k-forms for the (coefficient-valued) metric g.
    static DiffOp hodge(const PointMetric<C>& g, int k) {
        const int n = g.dim();
        return pointwise(n, k, n - k, [&](const MultiIndex& i) { return hodge_star(g, FiberForm<C>::basis(i)); });
    }

    DiffOp& operator+=(const DiffOp& o) {
        check_shape(o);
        for (const auto& [key, c] : o.terms_) add(key.out, key.in, key.deriv, c);
        return *this;
    }
    DiffOp& operator-=(const DiffOp& o) {
        check_shape(o);
        for (const auto& [key, c] : o.terms_) add(key.out, key.in, key.deriv, -c);
        return *this;
    }
    friend DiffOp operator+(DiffOp a, const DiffOp& b) { return a += b; }
    friend DiffOp operator-(DiffOp a, const DiffOp& b) { return a -= b; }
    friend DiffOp operator*(const C& s, const DiffOp& a) {
        DiffOp out(a.n_, a.k_in_, a.k_out_);
        for (const auto& [key, c] : a.terms_) out.add(key.out, key.in, key.deriv, s * c);
        return out;
    }

    template <class F>
    DiffOp transform(F&& f) const {
        DiffOp out(n_, k_in_, k_out_);
        for (const auto& [key, c] : terms_) out.add(key.out, key.in, key.deriv, f(key, c));
        return out;
    }

private:
    void check_shape(const DiffOp& o) const {
        if (o.n_ != n_ || o.k_in_ != k_in_ || o.k_out_ != k_out_) throw std::invalid_argument("DiffOp: shape mismatch");
    }

    int n_;
    int k_in_;
    int k_out_;
    std::map<OpKey, C> terms_;
};

/// d^deriv c for a coefficient.
template <class C>
C partial(const C& c, const Deriv& deriv) {
    C r = c;
    for (int a : deriv) {
        if (ScalarOps<C>::is_zero(r)) break;
        r = Calculus<C>::partial(r, a);
    }
    return r;
}

/// Composition (a o b) with the Leibniz rule applied to b's coefficients.
template <class C>
DiffOp<C> compose(const DiffOp<C>& a, const DiffOp<C>& b) {
    if (a.k_in() != b.k_out() || a.dim() != b.dim()) throw std::invalid_argument("compose: incompatible operators");
    DiffOp<C> out(a.dim(), b.k_in(), a.k_out());
    // index b's terms by their output component
    std::map<MultiIndex, std::vector<std::pair<OpKey, C>>> by_mid;
    for (const auto& [key, c] : b.terms()) by_mid[key.out].emplace_back(key, c);
    for (const auto& [ka, ca] : a.terms()) {
        auto it = by_mid.find(ka.in);
        if (it == by_mid.end()) continue;
        const auto& alpha = ka.deriv;
        const std::size_t m = alpha.size();
        for (const auto& [kb, cb] : it->second) {
            for (unsigned mask = 0; mask < (1u << m); ++mask) {
                Deriv on_coeff, on_field;
                for (std::size_t p = 0; p < m; ++p) ((mask >> p) & 1u ? on_coeff : on_field).push_back(alpha[p]);
                C db = on_coeff.empty() ? cb : partial(cb, on_coeff);
                if (ScalarOps<C>::is_zero(db)) continue;
                out.add(ka.out, kb.in, merge_deriv(on_field, kb.deriv), ca * db);
            }
        }
    }
    return out;
}

/// Applies the operator to a field given by one coefficient per input component.
template <class C>
std::map<MultiIndex, C> apply_op(const DiffOp<C>& op, const std::map<MultiIndex, C>& field) {
    std::map<MultiIndex, C> out;
    for (const auto& [key, c] : op.terms()) {
        auto it = field.find(key.in);
        if (it == field.end()) continue;
        C v = c * partial(it->second, key.deriv);
        if (ScalarOps<C>::is_zero(v)) continue;
        auto o = out.find(key.out);
        if (o == out.end()) {
            out.emplace(key.out, v);
        } else {
            o->second = o->second + v;
        }
    }
    return out;
}

/// Codifferential (-1)^{nk+n+1} * d * on k-forms, 1 <= k <= n.
template <class C>
DiffOp<C> codifferential(const PointMetric<C>& g, int k) {
    const int n = g.dim();
    if (k < 1 || k > n) throw std::invalid_argument("codifferential: degree must be in [1, n]");
    DiffOp<C> op = compose(DiffOp<C>::hodge(g, n - k + 1),
                           compose(DiffOp<C>::exterior_derivative(n, n - k), DiffOp<C>::hodge(g, k)));
    return (n * k + n + 1) % 2 == 0 ? op : ScalarOps<C>::from_int(-1) * op;
}

/// d delta + delta d on k-forms.
template <class C>
DiffOp<C> hodge_laplacian(const PointMetric<C>& g, int k) {
    const int n = g.dim();
    if (k < 0 || k > n) throw std::invalid_argument("hodge_laplacian: degree outside [0, n]");
    DiffOp<C> lap(n, k, k);
    if (k >= 1) lap += compose(DiffOp<C>::exterior_derivative(n, k - 1), codifferential(g, k));
    if (k < n) lap += compose(codifferential(g, k + 1), DiffOp<C>::exterior_derivative(n, k));
    return lap;
}

}  // namespace formlab

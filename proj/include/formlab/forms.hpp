#pragma once

// Pointwise exterior algebra: k-forms at a single point, generic over the
// coefficient ring (exact rationals, complex doubles, symbolic expressions).

#include "formlab/multi_index.hpp"
#include "formlab/scalar.hpp"

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace formlab {

template <class S>
using Matrix = std::vector<std::vector<S>>;

/// Determinant by cofactor expansion along the first row. Division free, so
/// it works over any commutative ring; fine for the n <= 5 matrices used here.
template <class S>
S determinant(const Matrix<S>& m) {
    const std::size_t n = m.size();
    if (n == 0) return ScalarOps<S>::from_int(1);
    if (n == 1) return m[0][0];
    if (n == 2) return m[0][0] * m[1][1] - m[0][1] * m[1][0];
    S acc = ScalarOps<S>::from_int(0);
    for (std::size_t c = 0; c < n; ++c) {
        if (ScalarOps<S>::is_zero(m[0][c])) continue;
        Matrix<S> minor;
        minor.reserve(n - 1);
        for (std::size_t r = 1; r < n; ++r) {
            std::vector<S> row;
            row.reserve(n - 1);
            for (std::size_t cc = 0; cc < n; ++cc) {
                if (cc != c) row.push_back(m[r][cc]);
            }
            minor.push_back(std::move(row));
        }
        S term = m[0][c] * determinant(minor);
        acc = (c % 2 == 0) ? acc + term : acc - term;
    }
    return acc;
}

/// Submatrix with the given (1-based) rows and columns.
template <class S>
Matrix<S> submatrix(const Matrix<S>& m, const std::vector<int>& rows, const std::vector<int>& cols) {
    Matrix<S> out;
    out.reserve(rows.size());
    for (int r : rows) {
        std::vector<S> row;
        row.reserve(cols.size());
        for (int c : cols) row.push_back(m[static_cast<std::size_t>(r - 1)][static_cast<std::size_t>(c - 1)]);
        out.push_back(std::move(row));
    }
    return out;
}

/// Inverse via adjugate / determinant.
template <class S>
Matrix<S> inverse(const Matrix<S>& m, const S& det) {
    const int n = static_cast<int>(m.size());
    Matrix<S> inv(static_cast<std::size_t>(n), std::vector<S>(static_cast<std::size_t>(n)));
    if (n == 1) {
        inv[0][0] = ScalarOps<S>::from_int(1) / det;
        return inv;
    }
    for (int r = 1; r <= n; ++r) {
        for (int c = 1; c <= n; ++c) {
            std::vector<int> rows, cols;
            for (int a = 1; a <= n; ++a) {
                if (a != c) rows.push_back(a);
                if (a != r) cols.push_back(a);
            }
            S cof = determinant(submatrix(m, rows, cols));
            if ((r + c) % 2 != 0) cof = -cof;
            inv[static_cast<std::size_t>(r - 1)][static_cast<std::size_t>(c - 1)] =
                ScalarOps<S>::is_zero(cof) ? cof : cof / det;
        }
    }
    return inv;
}

/// Symmetric positive-definite metric at a point together with its inverse
/// (the cometric g#) and volume factor sqrt(det g).
template <class S>
class PointMetric {
public:
    explicit PointMetric(Matrix<S> g) : g_(std::move(g)) {
        const std::size_t n = g_.size();
        for (const auto& row : g_) {
            if (row.size() != n) throw std::invalid_argument("PointMetric: matrix is not square");
        }
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = r + 1; c < n; ++c) {
                if (!ScalarOps<S>::is_zero(g_[r][c] - g_[c][r])) {
                    throw std::invalid_argument("PointMetric: matrix is not symmetric");
                }
            }
        }
        det_ = determinant(g_);
        const int s = ScalarOps<S>::sign(det_);
        if (s == 0 || s == -1) throw std::domain_error("PointMetric: degenerate metric (det <= 0)");
        inv_ = inverse(g_, det_);
        try {
            sqrt_det_ = ScalarOps<S>::sqrt(det_);
        } catch (const std::domain_error&) {
            // exact mode with a non-square determinant: inner products still work
        }
    }

    static PointMetric identity(int n) {
        Matrix<S> g(static_cast<std::size_t>(n), std::vector<S>(static_cast<std::size_t>(n), ScalarOps<S>::from_int(0)));
        for (int a = 0; a < n; ++a) g[static_cast<std::size_t>(a)][static_cast<std::size_t>(a)] = ScalarOps<S>::from_int(1);
        return PointMetric(std::move(g));
    }

    int dim() const { return static_cast<int>(g_.size()); }
    const Matrix<S>& g() const { return g_; }
    const Matrix<S>& inv() const { return inv_; }
    const S& det() const { return det_; }
    /// Throws std::domain_error in exact mode when det is not a rational square.
    const S& sqrt_det() const {
        if (!sqrt_det_) throw std::domain_error("PointMetric: volume factor is not exactly representable");
        return *sqrt_det_;
    }

private:
    Matrix<S> g_;
    Matrix<S> inv_;
    S det_;
    std::optional<S> sqrt_det_;
};

/// k-form at a point: sparse map MultiIndex -> coefficient (absent means zero).
template <class S>
class FiberForm {
public:
    FiberForm(int n, int k) : n_(n), k_(k) {
        if (k < 0 || k > n) throw std::invalid_argument("FiberForm: degree " + std::to_string(k) + " outside [0," + std::to_string(n) + "]");
    }

    static FiberForm basis(const MultiIndex& index, S coeff = ScalarOps<S>::from_int(1)) {
        FiberForm f(index.dim(), index.degree());
        f.add(index, coeff);
        return f;
    }
    /// The 1-form sum_i v_i dx_i.
    static FiberForm covector(const std::vector<S>& v) {
        const int n = static_cast<int>(v.size());
        FiberForm f(n, 1);
        for (int a = 1; a <= n; ++a) f.add(MultiIndex(n, {a}), v[static_cast<std::size_t>(a - 1)]);
        return f;
    }

    int dim() const { return n_; }
    int degree() const { return k_; }
    const std::map<MultiIndex, S>& terms() const { return terms_; }

    S coeff(const MultiIndex& index) const {
        auto it = terms_.find(index);
        return it == terms_.end() ? ScalarOps<S>::from_int(0) : it->second;
    }

    void add(const MultiIndex& index, const S& value) {
        if (index.dim() != n_ || index.degree() != k_) throw std::invalid_argument("FiberForm: index " + index.str() + " has wrong shape");
        if (ScalarOps<S>::is_zero(value)) return;
        auto it = terms_.find(index);
        if (it == terms_.end()) {
            terms_.emplace(index, value);
        } else {
            it->second = it->second + value;
            if (ScalarOps<S>::is_zero(it->second)) terms_.erase(it);
        }
    }

    FiberForm& operator+=(const FiberForm& o) {
        check_same_shape(o);
        for (const auto& [idx, v] : o.terms_) add(idx, v);
        return *this;
    }
    FiberForm& operator-=(const FiberForm& o) {
        check_same_shape(o);
        for (const auto& [idx, v] : o.terms_) add(idx, -v);
        return *this;
    }
    friend FiberForm operator+(FiberForm a, const FiberForm& b) { return a += b; }
    friend FiberForm operator-(FiberForm a, const FiberForm& b) { return a -= b; }
    friend FiberForm operator*(const S& s, const FiberForm& f) {
        FiberForm out(f.n_, f.k_);
        for (const auto& [idx, v] : f.terms_) out.add(idx, s * v);
        return out;
    }

    bool is_zero() const { return terms_.empty(); }

private:
    void check_same_shape(const FiberForm& o) const {
        if (o.n_ != n_ || o.k_ != k_) throw std::invalid_argument("FiberForm: shape mismatch");
    }

    int n_;
    int k_;
    std::map<MultiIndex, S> terms_;
};

/// Graded-anticommutative wedge product. Throws std::invalid_argument when the
/// resulting degree would exceed the dimension.
template <class S>
FiberForm<S> wedge(const FiberForm<S>& a, const FiberForm<S>& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("wedge: dimension mismatch");
    if (a.degree() + b.degree() > a.dim()) {
        throw std::invalid_argument("wedge: degree " + std::to_string(a.degree() + b.degree()) + " exceeds dimension " +
                                    std::to_string(a.dim()));
    }
    FiberForm<S> out(a.dim(), a.degree() + b.degree());
    for (const auto& [ia, va] : a.terms()) {
        for (const auto& [ib, vb] : b.terms()) {
            std::vector<int> axes = ia.axes();
            axes.insert(axes.end(), ib.axes().begin(), ib.axes().end());
            auto sorted = normalize_axes(a.dim(), std::move(axes));
            if (!sorted) continue;
            S v = va * vb;
            out.add(sorted->index, sorted->sign > 0 ? v : -v);
        }
    }
    return out;
}

/// Interior product with the vector X (components X^1..X^n).
template <class S>
FiberForm<S> contract(const std::vector<S>& x, const FiberForm<S>& w) {
    if (w.degree() == 0) throw std::invalid_argument("contract: cannot contract 0-form");
    if (static_cast<int>(x.size()) != w.dim()) throw std::invalid_argument("contract: vector has wrong dimension");
    FiberForm<S> out(w.dim(), w.degree() - 1);
    for (const auto& [idx, v] : w.terms()) {
        const auto& axes = idx.axes();
        for (std::size_t pos = 0; pos < axes.size(); ++pos) {
            const S& xa = x[static_cast<std::size_t>(axes[pos] - 1)];
            if (ScalarOps<S>::is_zero(xa)) continue;
            std::vector<int> rest;
            for (std::size_t q = 0; q < axes.size(); ++q) {
                if (q != pos) rest.push_back(axes[q]);
            }
            S term = xa * v;
            out.add(MultiIndex(w.dim(), std::move(rest)), pos % 2 == 0 ? term : -term);
        }
    }
    return out;
}

/// Contraction with the coordinate vector field d/dx_axis.
template <class S>
FiberForm<S> contract_axis(int axis, const FiberForm<S>& w) {
    std::vector<S> x(static_cast<std::size_t>(w.dim()), ScalarOps<S>::from_int(0));
    x[static_cast<std::size_t>(axis - 1)] = ScalarOps<S>::from_int(1);
    return contract(x, w);
}

/// Vector dual to a covector: (xi#)^i = g^{ij} xi_j.
template <class S>
std::vector<S> sharp(const PointMetric<S>& g, const std::vector<S>& xi) {
    const int n = g.dim();
    std::vector<S> out(static_cast<std::size_t>(n), ScalarOps<S>::from_int(0));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            out[static_cast<std::size_t>(i)] = out[static_cast<std::size_t>(i)] +
                                               g.inv()[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * xi[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

/// Metric pairing on k-forms: sum_{I,J} w_I v_J det[g#^{i_a j_b}].
template <class S>
S gram_inner(const PointMetric<S>& g, const FiberForm<S>& w, const FiberForm<S>& v) {
    if (w.degree() != v.degree()) throw std::invalid_argument("gram_inner: degree mismatch");
    if (w.dim() != g.dim() || v.dim() != g.dim()) throw std::invalid_argument("gram_inner: dimension mismatch");
    S acc = ScalarOps<S>::from_int(0);
    for (const auto& [i, wi] : w.terms()) {
        for (const auto& [j, vj] : v.terms()) {
            acc = acc + wi * vj * determinant(submatrix(g.inv(), i.axes(), j.axes()));
        }
    }
    return acc;
}

/// Hodge star defined by eta ^ *w = <eta, w>_g sqrt(det g) dx_1 ^ ... ^ dx_n.
template <class S>
FiberForm<S> hodge_star(const PointMetric<S>& g, const FiberForm<S>& w) {
    const int n = g.dim();
    if (w.dim() != n) throw std::invalid_argument("hodge_star: dimension mismatch");
    const int k = w.degree();
    FiberForm<S> out(n, n - k);
    const auto indices = MultiIndex::all(n, k);
    for (const auto& [i, wi] : w.terms()) {
        for (const auto& j : indices) {
            S minor = determinant(submatrix(g.inv(), j.axes(), i.axes()));
            if (ScalarOps<S>::is_zero(minor)) continue;
            const SignedIndex jc = complement(j);
            S term = wi * g.sqrt_det() * minor;
            out.add(jc.index, jc.sign > 0 ? term : -term);
        }
    }
    return out;
}

/// Tangential projection i_{d_n}(dx_n ^ w): drops components containing dx_n.
template <class S>
FiberForm<S> project_tangential(const FiberForm<S>& w) {
    const int n = w.dim();
    if (w.degree() == n) return FiberForm<S>(n, n);
    return contract_axis(n, wedge(FiberForm<S>::basis(MultiIndex(n, {n})), w));
}

/// Normal projection dx_n ^ (i_{d_n} w): keeps components containing dx_n.
template <class S>
FiberForm<S> project_normal(const FiberForm<S>& w) {
    const int n = w.dim();
    if (w.degree() == 0) return FiberForm<S>(n, 0);
    return wedge(FiberForm<S>::basis(MultiIndex(n, {n})), contract_axis(n, w));
}

/// Metric restricted to the first n-1 axes (the boundary block of a metric in
/// boundary normal form).
template <class S>
PointMetric<S> boundary_metric(const PointMetric<S>& g) {
    const std::size_t m = g.g().size() - 1;
    Matrix<S> h(m, std::vector<S>(m));
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < m; ++c) h[r][c] = g.g()[r][c];
    }
    return PointMetric<S>(std::move(h));
}

/// Boundary Hodge star in dimension n-1 for the boundary orientation that
/// makes i^*(*w) = *_b (i_{d_n} w) hold for metrics dx_n^2 + h: the coordinate
/// orientation dx_1 ^ ... ^ dx_{n-1} times (-1)^{n+1}.
template <class S>
FiberForm<S> boundary_hodge_star(const PointMetric<S>& h, const FiberForm<S>& w) {
    FiberForm<S> out = hodge_star(h, w);
    if (h.dim() % 2 != 0) return ScalarOps<S>::from_int(-1) * out;
    return out;
}

/// Embeds a form on the boundary (dimension n-1) into dimension n.
template <class S>
FiberForm<S> embed_boundary_form(const FiberForm<S>& w) {
    const int n = w.dim() + 1;
    FiberForm<S> out(n, w.degree());
    for (const auto& [idx, v] : w.terms()) out.add(MultiIndex(n, idx.axes()), v);
    return out;
}

/// Pullback to the boundary x_n = 0: drops components containing dx_n and
/// views the rest as a form in dimension n-1.
template <class S>
FiberForm<S> pullback_boundary(const FiberForm<S>& w) {
    const int n = w.dim();
    if (w.degree() == n) throw std::invalid_argument("pullback_boundary: n-form has no boundary pullback");
    FiberForm<S> out(n - 1, w.degree());
    for (const auto& [idx, v] : w.terms()) {
        if (!idx.contains(n)) out.add(MultiIndex(n - 1, idx.axes()), v);
    }
    return out;
}

}  // namespace formlab

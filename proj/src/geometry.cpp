#include "formlab/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace formlab {

namespace {

std::size_t uz(int v) { return static_cast<std::size_t>(v); }

}  // namespace

// ---------------------------------------------------------------------------
// MetricBNF

MetricBNF::MetricBNF(int n, Matrix<Expr> h) : n_(n), h_(std::move(h)) {
    if (n < 2) throw std::invalid_argument("MetricBNF: dimension must be >= 2");
    if (h_.size() != uz(n - 1)) throw std::invalid_argument("MetricBNF: h must be (n-1)x(n-1)");
    for (const auto& row : h_) {
        if (row.size() != uz(n - 1)) throw std::invalid_argument("MetricBNF: h must be (n-1)x(n-1)");
    }
    for (std::size_t r = 0; r < h_.size(); ++r) {
        for (std::size_t c = r + 1; c < h_.size(); ++c) {
            if (!same(h_[r][c], h_[c][r])) throw std::invalid_argument("MetricBNF: h is not symmetric");
            h_[c][r] = h_[r][c];
        }
    }
    symbolic_ = std::make_shared<PointMetric<Expr>>(full());
}

MetricBNF MetricBNF::flat(int n) { return conformal(n, Expr(1)); }

MetricBNF MetricBNF::conformal(int n, const Expr& factor) {
    Matrix<Expr> h(uz(n - 1), std::vector<Expr>(uz(n - 1), Expr(0)));
    for (int a = 0; a < n - 1; ++a) h[uz(a)][uz(a)] = factor;
    return MetricBNF(n, std::move(h));
}

MetricBNF MetricBNF::from_json(const nlohmann::json& j) {
    if (!j.contains("n") || !j.contains("h")) throw std::invalid_argument("metric JSON needs fields \"n\" and \"h\"");
    const int n = j.at("n").get<int>();
    Matrix<Expr> h;
    for (const auto& row : j.at("h")) {
        std::vector<Expr> r;
        for (const auto& cell : row) {
            if (cell.is_number_integer()) {
                r.emplace_back(cell.get<long>());
            } else {
                r.push_back(parse(cell.get<std::string>()));
            }
        }
        h.push_back(std::move(r));
    }
    return MetricBNF(n, std::move(h));
}

MetricBNF MetricBNF::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metric file " + path);
    return from_json(nlohmann::json::parse(in));
}

nlohmann::json MetricBNF::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : h_) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& e : row) r.push_back(to_string(e));
        rows.push_back(r);
    }
    return {{"n", n_}, {"h", rows}};
}

Matrix<Expr> MetricBNF::full() const {
    Matrix<Expr> g(uz(n_), std::vector<Expr>(uz(n_), Expr(0)));
    for (int r = 0; r < n_ - 1; ++r) {
        for (int c = 0; c < n_ - 1; ++c) g[uz(r)][uz(c)] = h_[uz(r)][uz(c)];
    }
    g[uz(n_ - 1)][uz(n_ - 1)] = Expr(1);
    return g;
}

Matrix<double> MetricBNF::h_at(const std::vector<double>& x) const {
    Evaluator ev(x);
    Matrix<double> out(h_.size(), std::vector<double>(h_.size()));
    for (std::size_t r = 0; r < h_.size(); ++r) {
        for (std::size_t c = 0; c < h_.size(); ++c) out[r][c] = ev(h_[r][c]);
    }
    return out;
}

PointMetric<double> MetricBNF::at(const std::vector<double>& x) const {
    Matrix<double> h = h_at(x);
    Matrix<double> g(uz(n_), std::vector<double>(uz(n_), 0.0));
    for (int r = 0; r < n_ - 1; ++r) {
        for (int c = 0; c < n_ - 1; ++c) g[uz(r)][uz(c)] = h[uz(r)][uz(c)];
    }
    g[uz(n_ - 1)][uz(n_ - 1)] = 1.0;
    return PointMetric<double>(std::move(g));
}

bool MetricBNF::laterally_constant() const {
    for (const auto& row : h_) {
        for (const auto& e : row) {
            for (int a = 1; a < n_; ++a) {
                if (depends_on(e, a)) return false;
            }
        }
    }
    return true;
}

void MetricBNF::check_positive_definite(const std::vector<std::vector<double>>& points) const {
    for (const auto& x : points) {
        Matrix<double> h = h_at(x);
        for (std::size_t m = 1; m <= h.size(); ++m) {
            Matrix<double> lead(m, std::vector<double>(m));
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < m; ++c) lead[r][c] = h[r][c];
            }
            if (!(determinant(lead) > 0.0)) {
                std::ostringstream os;
                os << "metric is not positive definite at (";
                for (std::size_t a = 0; a < x.size(); ++a) os << (a ? "," : "") << x[a];
                os << ")";
                throw std::domain_error(os.str());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Connection and curvature

Connection christoffel(const MetricBNF& g) {
    const int n = g.dim();
    const Matrix<Expr> gm = g.full();
    const Matrix<Expr>& ginv = g.symbolic().inv();
    // dg[a][b][c] = d_a g_bc
    std::vector<Matrix<Expr>> dg(uz(n), Matrix<Expr>(uz(n), std::vector<Expr>(uz(n))));
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            for (int c = b; c < n; ++c) {
                dg[uz(a)][uz(b)][uz(c)] = differentiate(gm[uz(b)][uz(c)], a + 1);
                dg[uz(a)][uz(c)][uz(b)] = dg[uz(a)][uz(b)][uz(c)];
            }
        }
    }
    Connection conn;
    conn.n = n;
    conn.gamma.assign(uz(n), std::vector<std::vector<Expr>>(uz(n), std::vector<Expr>(uz(n))));
    const Expr half = Expr(Rational(1, 2));
    for (int k = 0; k < n; ++k) {
        for (int i = 0; i < n; ++i) {
            for (int j = i; j < n; ++j) {
                Expr acc;
                for (int l = 0; l < n; ++l) {
                    const Expr& gi = ginv[uz(k)][uz(l)];
                    if (gi.is_zero()) continue;
                    Expr bracket = dg[uz(i)][uz(j)][uz(l)] + dg[uz(j)][uz(i)][uz(l)] - dg[uz(l)][uz(i)][uz(j)];
                    if (bracket.is_zero()) continue;
                    acc = acc + gi * bracket;
                }
                acc = half * acc;
                conn.gamma[uz(k)][uz(i)][uz(j)] = acc;
                conn.gamma[uz(k)][uz(j)][uz(i)] = acc;
            }
        }
    }
    return conn;
}

Curvature curvature(const MetricBNF& g, const Connection& conn) {
    const int n = g.dim();
    Curvature c;
    c.n = n;
    c.riemann.assign(uz(n * n * n * n), Expr(0));
    for (int i = 1; i <= n; ++i) {
        for (int j = 1; j <= n; ++j) {
            for (int k = 1; k <= n; ++k) {
                for (int l = k + 1; l <= n; ++l) {
                    Expr r = differentiate(conn(i, l, j), k) - differentiate(conn(i, k, j), l);
                    for (int m = 1; m <= n; ++m) {
                        const Expr& a1 = conn(i, k, m);
                        const Expr& b1 = conn(m, l, j);
                        if (!a1.is_zero() && !b1.is_zero()) r = r + a1 * b1;
                        const Expr& a2 = conn(i, l, m);
                        const Expr& b2 = conn(m, k, j);
                        if (!a2.is_zero() && !b2.is_zero()) r = r - a2 * b2;
                    }
                    c.riemann[c.idx4(i, j, k, l)] = r;
                    c.riemann[c.idx4(i, j, l, k)] = -r;
                }
            }
        }
    }
    const Matrix<Expr>& ginv = g.symbolic().inv();
    c.ricci.assign(uz(n * n), Expr(0));
    for (int j = 1; j <= n; ++j) {
        for (int l = 1; l <= n; ++l) {
            Expr acc;
            for (int i = 1; i <= n; ++i) acc = acc + c.R(i, j, i, l);
            c.ricci[c.idx2(j, l)] = acc;
        }
    }
    c.ricci_mixed.assign(uz(n * n), Expr(0));
    for (int up = 1; up <= n; ++up) {
        for (int down = 1; down <= n; ++down) {
            Expr acc;
            for (int m = 1; m <= n; ++m) {
                const Expr& gi = ginv[uz(up - 1)][uz(m - 1)];
                if (!gi.is_zero()) acc = acc + gi * c.Ric(m, down);
            }
            c.ricci_mixed[c.idx2(up, down)] = acc;
        }
    }
    c.raised.assign(uz(n * n * n * n), Expr(0));
    for (int i = 1; i <= n; ++i) {
        for (int j = 1; j <= n; ++j) {
            for (int k = 1; k <= n; ++k) {
                for (int l = 1; l <= n; ++l) {
                    Expr acc;
                    for (int m = 1; m <= n; ++m) {
                        const Expr& gi = ginv[uz(i - 1)][uz(m - 1)];
                        const Expr& r = c.R(j, m, k, l);
                        if (!gi.is_zero() && !r.is_zero()) acc = acc + gi * r;
                    }
                    c.raised[c.idx4(i, j, k, l)] = acc;
                }
            }
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Operators in boundary normal form

OperatorBNF::OperatorBNF(int n, int k, DiffOp<Expr> op) : n_(n), k_(k), op_(std::move(op)) {
    if (op_.k_in() != k || op_.k_out() != k) throw std::invalid_argument("OperatorBNF: operator must map k-forms to k-forms");
    if (op_.order() > 2) throw std::invalid_argument("OperatorBNF: operator order exceeds 2");
}

Matrix<Expr> OperatorBNF::coefficient(const Deriv& deriv) const {
    const auto basis = MultiIndex::all(n_, k_);
    Matrix<Expr> m(basis.size(), std::vector<Expr>(basis.size(), Expr(0)));
    Deriv sorted = deriv;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& [key, c] : op_.terms()) {
        if (key.deriv != sorted) continue;
        m[uz(key.out.rank())][uz(key.in.rank())] = c;
    }
    return m;
}

Matrix<Expr> OperatorBNF::a2() const {
    Matrix<Expr> m = coefficient({n_, n_});
    for (auto& row : m) {
        for (auto& e : row) e = -e;
    }
    return m;
}

bool OperatorBNF::has_mixed_normal_terms() const {
    for (const auto& [key, c] : op_.terms()) {
        if (key.deriv.size() == 2 && (key.deriv[0] == n_) != (key.deriv[1] == n_) && !vanishes(c, n_)) return true;
    }
    return false;
}

OperatorBNF OperatorBNF::helmholtz_shift(const Rational& omega2) const {
    DiffOp<Expr> op = op_;
    for (const auto& i : MultiIndex::all(n_, k_)) op.add(i, i, {}, Expr(Rational(-omega2)));
    return OperatorBNF(n_, k_, std::move(op));
}

DiffOp<Expr> exterior_derivative_op(int n, int k) { return DiffOp<Expr>::exterior_derivative(n, k); }

DiffOp<Expr> hodge_op(const MetricBNF& g, int k) { return DiffOp<Expr>::hodge(g.symbolic(), k); }

DiffOp<Expr> codifferential_op(const MetricBNF& g, int k) { return codifferential(g.symbolic(), k); }

OperatorBNF laplacian_dd(const MetricBNF& g, int k) { return OperatorBNF(g.dim(), k, hodge_laplacian(g.symbolic(), k)); }

// ---------------------------------------------------------------------------
// Weitzenbock assembly

namespace {

/// Linear combination sum c * d^deriv u_J over independent components.
using Row = std::map<std::pair<MultiIndex, Deriv>, Expr>;

void row_add(Row& r, const MultiIndex& j, const Deriv& d, const Expr& c) {
    if (c.is_zero()) return;
    auto key = std::make_pair(j, d);
    auto it = r.find(key);
    if (it == r.end()) {
        r.emplace(std::move(key), c);
    } else {
        it->second = it->second + c;
        if (it->second.is_zero()) r.erase(it);
    }
}

void row_axpy(Row& r, const Expr& s, const Row& x) {
    if (s.is_zero()) return;
    for (const auto& [key, c] : x) row_add(r, key.first, key.second, s * c);
}

Row row_partial(const Row& x, int axis) {
    Row out;
    for (const auto& [key, c] : x) {
        row_add(out, key.first, merge_deriv(key.second, {axis}), c);
        row_add(out, key.first, key.second, differentiate(c, axis));
    }
    return out;
}

class WeitzenbockBuilder {
public:
    WeitzenbockBuilder(const MetricBNF& g, int k, const Connection& conn, const Curvature& curv)
        : g_(g), n_(g.dim()), k_(k), conn_(conn), curv_(curv) {}

    DiffOp<Expr> build() {
        DiffOp<Expr> op(n_, k_, k_);
        const Matrix<Expr>& ginv = g_.symbolic().inv();
        for (const auto& out : MultiIndex::all(n_, k_)) {
            const std::vector<int>& t = out.axes();
            Row row;
            // rough Laplacian -g^{ij} u_{I;ij}
            for (int i = 1; i <= n_; ++i) {
                for (int j = 1; j <= n_; ++j) {
                    const Expr& gij = ginv[uz(i - 1)][uz(j - 1)];
                    if (gij.is_zero()) continue;
                    row_axpy(row, -gij, cov2(t, i, j));
                }
            }
            // Ricci term sum_alpha R^j_{i_alpha} u_{..j..}
            for (std::size_t a = 0; a < t.size(); ++a) {
                for (int j = 1; j <= n_; ++j) {
                    const Expr& ric = curv_.RicMixed(j, t[a]);
                    if (ric.is_zero()) continue;
                    std::vector<int> s = t;
                    s[a] = j;
                    row_axpy(row, ric, comp(s));
                }
            }
            // double curvature term 1/2 sum_{alpha != beta} R^{ij}_{i_beta i_alpha} u_{..j(alpha)..i(beta)..}
            const Expr half(Rational(1, 2));
            for (std::size_t a = 0; a < t.size(); ++a) {
                for (std::size_t b = 0; b < t.size(); ++b) {
                    if (a == b) continue;
                    for (int i = 1; i <= n_; ++i) {
                        for (int j = 1; j <= n_; ++j) {
                            const Expr& r = curv_.Rup(i, j, t[b], t[a]);
                            if (r.is_zero()) continue;
                            std::vector<int> s = t;
                            s[a] = j;
                            s[b] = i;
                            row_axpy(row, half * r, comp(s));
                        }
                    }
                }
            }
            for (const auto& [key, c] : row) op.add(out, key.first, key.second, c);
        }
        return op;
    }

private:
    Row comp(const std::vector<int>& t) const {
        Row r;
        auto s = normalize_axes(n_, t);
        if (s) row_add(r, s->index, {}, Expr(s->sign));
        return r;
    }

    /// u_{t;i}
    const Row& cov1(const std::vector<int>& t, int i) {
        auto key = std::make_pair(t, i);
        auto it = cov1_.find(key);
        if (it != cov1_.end()) return it->second;
        Row r = row_partial(comp(t), i);
        for (std::size_t a = 0; a < t.size(); ++a) {
            for (int m = 1; m <= n_; ++m) {
                const Expr& gam = conn_(m, i, t[a]);
                if (gam.is_zero()) continue;
                std::vector<int> s = t;
                s[a] = m;
                row_axpy(r, -gam, comp(s));
            }
        }
        return cov1_.emplace(std::move(key), std::move(r)).first->second;
    }

    /// u_{t;ij} = d_j u_{t;i} - Gamma^m_{ji} u_{t;m} - sum_alpha Gamma^m_{j t_alpha} u_{t(alpha->m);i}
    Row cov2(const std::vector<int>& t, int i, int j) {
        Row r = row_partial(cov1(t, i), j);
        for (int m = 1; m <= n_; ++m) {
            const Expr& gam = conn_(m, j, i);
            if (!gam.is_zero()) row_axpy(r, -gam, cov1(t, m));
        }
        for (std::size_t a = 0; a < t.size(); ++a) {
            for (int m = 1; m <= n_; ++m) {
                const Expr& gam = conn_(m, j, t[a]);
                if (gam.is_zero()) continue;
                std::vector<int> s = t;
                s[a] = m;
                row_axpy(r, -gam, cov1(s, i));
            }
        }
        return r;
    }

    const MetricBNF& g_;
    int n_;
    int k_;
    const Connection& conn_;
    const Curvature& curv_;
    std::map<std::pair<std::vector<int>, int>, Row> cov1_;
};

}  // namespace

OperatorBNF laplacian_weitzenbock(const MetricBNF& g, int k, const Connection& conn, const Curvature& curv) {
    if (k < 0 || k > g.dim()) throw std::invalid_argument("laplacian_weitzenbock: degree outside [0, n]");
    return OperatorBNF(g.dim(), k, WeitzenbockBuilder(g, k, conn, curv).build());
}

OperatorBNF laplacian_weitzenbock(const MetricBNF& g, int k) {
    const Connection conn = christoffel(g);
    const Curvature curv = curvature(g, conn);
    return laplacian_weitzenbock(g, k, conn, curv);
}

std::vector<std::vector<double>> principal_symbol(const DiffOp<Expr>& op, const std::vector<double>& x,
                                                  const std::vector<double>& xi) {
    const int n = op.dim();
    const auto rows = MultiIndex::all(n, op.k_out());
    const auto cols = MultiIndex::all(n, op.k_in());
    std::vector<std::vector<double>> s(rows.size(), std::vector<double>(cols.size(), 0.0));
    Evaluator ev(x);
    for (const auto& [key, c] : op.terms()) {
        if (key.deriv.size() != 2) continue;
        // (i xi_a)(i xi_b) = -xi_a xi_b
        s[uz(key.out.rank())][uz(key.in.rank())] -=
            ev(c) * xi[uz(key.deriv[0] - 1)] * xi[uz(key.deriv[1] - 1)];
    }
    return s;
}

std::map<OpKey, double> evaluate_op(const DiffOp<Expr>& op, const std::vector<double>& x) {
    std::map<OpKey, double> out;
    Evaluator ev(x);
    for (const auto& [key, c] : op.terms()) out.emplace(key, ev(c));
    return out;
}

// ---------------------------------------------------------------------------
// Green's identity

namespace {

struct Rule1D {
    std::vector<double> nodes;
    std::vector<double> weights;
};

Rule1D composite_rule(double lo, double hi, int cells, Quadrature rule) {
    Rule1D r;
    const double h = (hi - lo) / cells;
    for (int c = 0; c < cells; ++c) {
        const double a = lo + c * h;
        if (rule == Quadrature::Midpoint) {
            r.nodes.push_back(a + 0.5 * h);
            r.weights.push_back(h);
        } else {
            static const double gx[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
            static const double gw[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
            for (int q = 0; q < 3; ++q) {
                r.nodes.push_back(a + 0.5 * h * (1.0 + gx[q]));
                r.weights.push_back(0.5 * h * gw[q]);
            }
        }
    }
    return r;
}

/// Calls f(point, weight) over the tensor grid of the given per-axis rules.
template <class F>
void tensor_loop(const std::vector<Rule1D>& rules, F&& f) {
    const std::size_t d = rules.size();
    std::vector<std::size_t> idx(d, 0);
    std::vector<double> x(d);
    while (true) {
        double w = 1.0;
        for (std::size_t a = 0; a < d; ++a) {
            x[a] = rules[a].nodes[idx[a]];
            w *= rules[a].weights[idx[a]];
        }
        f(x, w);
        std::size_t a = 0;
        while (a < d) {
            if (++idx[a] < rules[a].nodes.size()) break;
            idx[a] = 0;
            ++a;
        }
        if (a == d) break;
    }
}

FiberForm<double> eval_form(Evaluator& ev, const std::map<MultiIndex, Expr>& field, int n, int k) {
    FiberForm<double> f(n, k);
    for (const auto& [idx, e] : field) f.add(idx, ev(e));
    return f;
}

}  // namespace

GreensResult greens_pairing(const MetricBNF& g, const std::map<MultiIndex, Expr>& u, int k, const Box& box, int cells,
                            Quadrature rule) {
    const int n = g.dim();
    if (static_cast<int>(box.lo.size()) != n || static_cast<int>(box.hi.size()) != n) {
        throw std::invalid_argument("greens_pairing: box dimension mismatch");
    }
    if (cells < 1) throw std::invalid_argument("greens_pairing: need at least one cell per axis");
    const OperatorBNF lap = laplacian_dd(g, k);
    std::map<MultiIndex, Expr> du, delta_u;
    if (k < n) du = apply_op(exterior_derivative_op(n, k), u);
    if (k > 0) delta_u = apply_op(codifferential_op(g, k), u);
    const std::map<MultiIndex, Expr> lap_u = apply_op(lap.op(), u);

    GreensResult res;
    std::vector<Rule1D> rules;
    for (int a = 0; a < n; ++a) rules.push_back(composite_rule(box.lo[uz(a)], box.hi[uz(a)], cells, rule));
    tensor_loop(rules, [&](const std::vector<double>& x, double w) {
        Evaluator ev(x);
        const PointMetric<double> gx = g.at(x);
        const double vol = gx.sqrt_det() * w;
        const FiberForm<double> uf = eval_form(ev, u, n, k);
        res.lhs += gram_inner(gx, uf, eval_form(ev, lap_u, n, k)) * vol;
        if (k < n) {
            const FiberForm<double> f = eval_form(ev, du, n, k + 1);
            res.du_norm2 += gram_inner(gx, f, f) * vol;
        }
        if (k > 0) {
            const FiberForm<double> f = eval_form(ev, delta_u, n, k - 1);
            res.delta_norm2 += gram_inner(gx, f, f) * vol;
        }
    });

    // Faces x_a = lo/hi; Stokes: int_M d(w) = sum_a (-1)^{a-1} [int_{hi} - int_{lo}] w_{(all but a)}
    for (int a = 1; a <= n; ++a) {
        std::vector<Rule1D> face_rules;
        for (int b = 1; b <= n; ++b) {
            if (b != a) face_rules.push_back(rules[uz(b - 1)]);
        }
        std::vector<int> rest;
        for (int b = 1; b <= n; ++b) {
            if (b != a) rest.push_back(b);
        }
        const MultiIndex face_index(n, rest);
        for (int side = 0; side < 2; ++side) {
            const double xa = side == 0 ? box.lo[uz(a - 1)] : box.hi[uz(a - 1)];
            const double orient = ((a - 1) % 2 == 0 ? 1.0 : -1.0) * (side == 0 ? -1.0 : 1.0);
            tensor_loop(face_rules, [&](const std::vector<double>& y, double w) {
                std::vector<double> x(uz(n));
                std::size_t q = 0;
                for (int b = 1; b <= n; ++b) x[uz(b - 1)] = (b == a) ? xa : y[q++];
                Evaluator ev(x);
                const PointMetric<double> gx = g.at(x);
                const FiberForm<double> uf = eval_form(ev, u, n, k);
                if (k > 0) {
                    const FiberForm<double> df = eval_form(ev, delta_u, n, k - 1);
                    res.boundary_delta += orient * w * wedge(df, hodge_star(gx, uf)).coeff(face_index);
                }
                if (k < n) {
                    const FiberForm<double> df = eval_form(ev, du, n, k + 1);
                    res.boundary_d += orient * w * wedge(uf, hodge_star(gx, df)).coeff(face_index);
                }
            });
        }
    }
    res.residual = res.lhs - res.du_norm2 - res.delta_norm2 - res.sign_delta_term * res.boundary_delta -
                   res.sign_d_term * res.boundary_d;
    return res;
}

}  // namespace formlab

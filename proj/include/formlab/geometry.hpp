#pragma once

// Metrics in boundary normal form g = dx_n^2 + h(x, dx'), their Levi-Civita
// connection and curvature, and the k-form Laplacian assembled two ways.

#include "formlab/diffop.hpp"
#include "formlab/expr.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace formlab {

template <>
struct Calculus<Expr> {
    static Expr partial(const Expr& e, int axis) { return differentiate(e, axis); }
};

class MetricBNF {
public:
    /// h is the (n-1)x(n-1) tangential block; throws unless square and
    /// structurally symmetric.
    MetricBNF(int n, Matrix<Expr> h);

    static MetricBNF flat(int n);
    /// h = factor * identity.
    static MetricBNF conformal(int n, const Expr& factor);
    /// {"n": int, "h": [[expr-string, ...], ...]}
    static MetricBNF from_json(const nlohmann::json& j);
    static MetricBNF from_file(const std::string& path);
    nlohmann::json to_json() const;

    int dim() const { return n_; }
    const Matrix<Expr>& h() const { return h_; }
    /// Full n x n metric with g_nn = 1, g_in = 0.
    Matrix<Expr> full() const;
    /// Symbolic point metric (inverse and volume factor as expressions).
    const PointMetric<Expr>& symbolic() const { return *symbolic_; }

    Matrix<double> h_at(const std::vector<double>& x) const;
    PointMetric<double> at(const std::vector<double>& x) const;
    /// True when every entry of h is independent of x_1..x_{n-1}.
    bool laterally_constant() const;
    /// Smallest eigenvalue sign check of h at the given points; throws
    /// std::domain_error naming the first bad point.
    void check_positive_definite(const std::vector<std::vector<double>>& points) const;

private:
    int n_;
    Matrix<Expr> h_;
    std::shared_ptr<PointMetric<Expr>> symbolic_;
};

/// Gamma^k_{ij} stored as gamma[k][i][j] (0-based storage, 1-based math).
struct Connection {
    int n = 0;
    std::vector<std::vector<std::vector<Expr>>> gamma;
    const Expr& operator()(int k, int i, int j) const {
        return gamma[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
    }
};

Connection christoffel(const MetricBNF& g);

/// R^i_{jkl} = d_k Gamma^i_{lj} - d_l Gamma^i_{kj} + Gamma^i_{km} Gamma^m_{lj} - Gamma^i_{lm} Gamma^m_{kj},
/// Ricci R_{jl} = R^i_{jil}, mixed Ricci R^j_i = g^{jm} R_{mi}, and
/// R^{ij}_{kl} = g^{im} R^j_{mkl}.
struct Curvature {
    int n = 0;
    std::vector<Expr> riemann;      // R^i_{jkl}
    std::vector<Expr> ricci;        // R_{jl}
    std::vector<Expr> ricci_mixed;  // R^j_i stored at [j][i]
    std::vector<Expr> raised;       // R^{ij}_{kl}

    const Expr& R(int i, int j, int k, int l) const { return riemann[idx4(i, j, k, l)]; }
    const Expr& Ric(int j, int l) const { return ricci[idx2(j, l)]; }
    const Expr& RicMixed(int up, int down) const { return ricci_mixed[idx2(up, down)]; }
    const Expr& Rup(int i, int j, int k, int l) const { return raised[idx4(i, j, k, l)]; }

    std::size_t idx2(int a, int b) const { return static_cast<std::size_t>((a - 1) * n + (b - 1)); }
    std::size_t idx4(int a, int b, int c, int d) const {
        return static_cast<std::size_t>((((a - 1) * n + (b - 1)) * n + (c - 1)) * n + (d - 1));
    }
};

Curvature curvature(const MetricBNF& g, const Connection& conn);
inline Curvature curvature(const MetricBNF& g) { return curvature(g, christoffel(g)); }

/// Second-order operator on k-form components written in partial
/// derivatives,
///   L u = -u_nn - sum h^{ij} u_ij + N u_n + sum_i T_i u_i + Z u + (mixed),
/// with the boundary-normal decomposition
///   L = (D_n^2 + Delta') I + E D_n + H(x, D_x'),   D = -i d,
/// so that A2 = -(coefficient of d_n^2), E = i N and H = i T.D + Z.
class OperatorBNF {
public:
    OperatorBNF(int n, int k, DiffOp<Expr> op);

    int dim() const { return n_; }
    int degree() const { return k_; }
    const DiffOp<Expr>& op() const { return op_; }

    /// Coefficient matrix (over the component basis) of d^deriv.
    Matrix<Expr> coefficient(const Deriv& deriv) const;
    /// Coefficient of D_n^2 (identity for Laplacians).
    Matrix<Expr> a2() const;
    /// Real part N of the first-order normal coefficient; E = i N.
    Matrix<Expr> normal_first() const { return coefficient({n_}); }
    /// Coefficient of d_i for tangential i.
    Matrix<Expr> tangential_first(int i) const { return coefficient({i}); }
    Matrix<Expr> zeroth() const { return coefficient({}); }
    /// Coefficients multiplying mixed d_n d_i (absent in boundary normal form).
    bool has_mixed_normal_terms() const;
    /// Adds -omega2 * identity (fixed-frequency Helmholtz operator).
    OperatorBNF helmholtz_shift(const Rational& omega2) const;

private:
    int n_;
    int k_;
    DiffOp<Expr> op_;
};

/// Hodge Laplacian d delta + delta d with delta = (-1)^{nk+n+1} * d *.
OperatorBNF laplacian_dd(const MetricBNF& g, int k);
/// Exterior derivative and codifferential as operators with Expr coefficients.
DiffOp<Expr> exterior_derivative_op(int n, int k);
DiffOp<Expr> codifferential_op(const MetricBNF& g, int k);
DiffOp<Expr> hodge_op(const MetricBNF& g, int k);

/// Weitzenbock form: -g^{ij} u_{I;ij} + Ricci term + double curvature term.
OperatorBNF laplacian_weitzenbock(const MetricBNF& g, int k);
OperatorBNF laplacian_weitzenbock(const MetricBNF& g, int k, const Connection& conn, const Curvature& curv);

/// Principal symbol sigma_2(L)(x, xi) = sum_{|alpha|=2} a_alpha (i xi)^alpha over
/// the component basis, evaluated numerically.
std::vector<std::vector<double>> principal_symbol(const DiffOp<Expr>& op, const std::vector<double>& x,
                                                  const std::vector<double>& xi);

/// Numerically evaluated coefficient table {key -> value} at x.
std::map<OpKey, double> evaluate_op(const DiffOp<Expr>& op, const std::vector<double>& x);

// ---------------------------------------------------------------------------
// Green's identity check

struct Box {
    std::vector<double> lo;
    std::vector<double> hi;
};

enum class Quadrature { Midpoint, Gauss3 };

struct GreensResult {
    double lhs = 0.0;           // <u, Delta u>
    double du_norm2 = 0.0;      // ||du||^2
    double delta_norm2 = 0.0;   // ||delta u||^2
    double boundary_delta = 0.0;  // int_{dM} delta u ^ *u
    double boundary_d = 0.0;      // int_{dM} u ^ *du
    double residual = 0.0;
    /// Signs used: residual = lhs - du - delta - s1*boundary_delta - s2*boundary_d.
    int sign_delta_term = 1;
    int sign_d_term = -1;
};

/// Evaluates <u, Delta u> - ||du||^2 - ||delta u||^2 - (boundary terms) on a
/// coordinate box by tensor-product quadrature with `cells` cells per axis.
/// Boundary integrals use Stokes orientation (outward normal first).
GreensResult greens_pairing(const MetricBNF& g, const std::map<MultiIndex, Expr>& u, int k, const Box& box, int cells,
                            Quadrature rule = Quadrature::Gauss3);

}  // namespace formlab

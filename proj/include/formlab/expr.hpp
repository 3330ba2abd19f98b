#pragma once

// Closed-form scalar expressions in x1..xn with exact rational constants.
//
// Grammar accepted by parse():
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := base ('^' integer)?
//   base   := number | ident | func '(' expr ')' | '(' expr ')'
//   ident  := 'x' digit+
//   func   := sin | cos | exp | log | sqrt
//
// Simplification is limited to constant folding and 0/1 identities.

#include "formlab/scalar.hpp"

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace formlab {

enum class Func { Sin, Cos, Exp, Log, Sqrt };

class Expr {
public:
    enum class Kind { Const, Var, Add, Sub, Mul, Div, Neg, Pow, Apply };
    struct Node;

    Expr();  // the constant 0
    Expr(int v);                // NOLINT(google-explicit-constructor)
    Expr(long v);               // NOLINT(google-explicit-constructor)
    Expr(const Rational& v);    // NOLINT(google-explicit-constructor)

    /// The coordinate x_axis (1-based).
    static Expr var(int axis);
    static Expr apply(Func f, const Expr& arg);

    Kind kind() const;
    bool is_const() const { return kind() == Kind::Const; }
    bool is_zero() const;
    bool is_one() const;
    /// Constant value; throws std::logic_error for non-constants.
    const Rational& value() const;
    /// Axis of a variable node.
    int axis() const;
    /// Exponent of a power node.
    int exponent() const;
    Func func() const;
    /// Operands (one for Neg/Pow/Apply, two for binary nodes).
    Expr lhs() const;
    Expr rhs() const;

    const Node* id() const { return node_.get(); }

    friend Expr operator+(const Expr& a, const Expr& b);
    friend Expr operator-(const Expr& a, const Expr& b);
    friend Expr operator*(const Expr& a, const Expr& b);
    friend Expr operator/(const Expr& a, const Expr& b);
    friend Expr operator-(const Expr& a);
    Expr& operator+=(const Expr& o) { return *this = *this + o; }
    Expr& operator-=(const Expr& o) { return *this = *this - o; }
    Expr& operator*=(const Expr& o) { return *this = *this * o; }

private:
    explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
    friend class ExprBuilder;
    std::shared_ptr<const Node> node_;
};

Expr pow(const Expr& base, int exponent);
Expr sin(const Expr& a);
Expr cos(const Expr& a);
Expr exp(const Expr& a);
Expr log(const Expr& a);
Expr sqrt(const Expr& a);

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

/// Parses the grammar above. Throws ParseError with the byte offset of the
/// offending token.
Expr parse(std::string_view text);

/// Canonical printer; parse(to_string(e)) prints identically.
std::string to_string(const Expr& e);

/// Exact symbolic derivative d/dx_axis. Shared subexpressions are
/// differentiated once.
Expr differentiate(const Expr& e, int axis);

/// Replaces x_axis by `value` everywhere.
Expr substitute(const Expr& e, int axis, const Expr& value);

bool depends_on(const Expr& e, int axis);
/// Largest variable index that occurs (0 for constants).
int max_variable(const Expr& e);
/// Number of distinct nodes in the DAG.
std::size_t node_count(const Expr& e);
/// Structural equality.
bool same(const Expr& a, const Expr& b);

/// Numerical zero test: |e| <= tol at a fixed set of pseudo-random points in
/// [-1/2, 1/2]^n (points where e cannot be evaluated are skipped).
bool vanishes(const Expr& e, int n, double tol = 1e-10);

/// Coefficients e_0..e_order of the expansion in x_axis about 0, each a
/// function of the remaining variables. Throws std::domain_error when e is
/// singular at x_axis = 0 (checked at sample points of the other variables).
std::vector<Expr> taylor_in_normal(const Expr& e, int axis, int order);

/// Evaluates expressions at a fixed point, caching shared subexpressions
/// across calls. Throws std::domain_error on invalid log/sqrt/division.
class Evaluator {
public:
    explicit Evaluator(std::vector<double> x);
    double operator()(const Expr& e);
    const std::vector<double>& point() const { return x_; }

private:
    double eval(const Expr::Node* n);
    std::vector<double> x_;
    std::unordered_map<const Expr::Node*, double> cache_;
    std::vector<Expr> roots_;
};

double evaluate(const Expr& e, std::span<const double> x);

template <>
struct ScalarOps<Expr> {
    static Expr from_int(long v) { return Expr(v); }
    static bool is_zero(const Expr& v) { return v.is_zero(); }
    static Expr sqrt(const Expr& v) { return formlab::sqrt(v); }
    static int sign(const Expr& v) {
        if (!v.is_const()) return 2;
        return v.value() < 0 ? -1 : (v.value() == 0 ? 0 : 1);
    }
};

}  // namespace formlab

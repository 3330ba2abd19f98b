#pragma once

// Jets in the normal variable x_n, truncated at a fixed order, whose
// coefficients are rational polynomials in a formal boundary function
// lambda(x') and its tangential derivatives lambda_alpha. This is the exact
// ring used for the conformal family dx_n^2 + (1 + x_n^l lambda) dx'^2.

#include "formlab/diffop.hpp"
#include "formlab/scalar.hpp"

#include <climits>
#include <map>
#include <string>
#include <vector>

namespace formlab {

struct JetMonomial {
    int power = 0;                 // exponent of x_n
    std::vector<Deriv> lambdas;    // sorted multiset of derivative labels
    auto operator<=>(const JetMonomial&) const = default;
    bool operator==(const JetMonomial&) const = default;
};

class JetPoly {
public:
    static constexpr int kExact = INT_MAX;

    JetPoly() = default;
    JetPoly(long v);             // NOLINT(google-explicit-constructor)
    JetPoly(const Rational& v);  // NOLINT(google-explicit-constructor)

    /// x_n^power known modulo x_n^{order+1}; `axis` is the index of x_n.
    static JetPoly xn(int axis, int order, int power = 1);
    /// lambda_alpha (alpha empty for lambda itself), as a function of x' only.
    static JetPoly lambda(int axis, const Deriv& alpha = {});

    int order() const { return order_; }
    int normal_axis() const { return axis_; }
    const std::map<JetMonomial, Rational>& terms() const { return terms_; }
    bool is_zero() const { return terms_.empty(); }

    /// Drops powers above `order` and lowers the recorded order.
    JetPoly truncated(int order) const;
    /// Coefficient of x_n^power (an exact jet of x' only).
    JetPoly coefficient(int power) const;
    /// Smallest x_n power present (kExact for zero).
    int valuation() const;
    /// Coefficient of x_n^0 with no lambda factors.
    Rational constant_term() const;
    /// True when every non-constant term carries a positive power of x_n.
    bool unit_nilpotent_split() const;

    JetPoly partial(int axis) const;
    /// (this)^r by the binomial series; the constant term must be 1, or a
    /// rational square when r is a half-integer.
    JetPoly pow(const Rational& r) const;
    JetPoly inverse() const { return pow(Rational(-1)); }
    JetPoly sqrt() const { return pow(Rational(1, 2)); }

    friend JetPoly operator+(const JetPoly& a, const JetPoly& b);
    friend JetPoly operator-(const JetPoly& a, const JetPoly& b);
    friend JetPoly operator*(const JetPoly& a, const JetPoly& b);
    friend JetPoly operator/(const JetPoly& a, const JetPoly& b) { return a * b.inverse(); }
    friend JetPoly operator-(const JetPoly& a);
    JetPoly& operator+=(const JetPoly& o) { return *this = *this + o; }
    JetPoly& operator-=(const JetPoly& o) { return *this = *this - o; }
    JetPoly& operator*=(const JetPoly& o) { return *this = *this * o; }
    /// Equality of the known parts (up to the smaller order).
    friend bool operator==(const JetPoly& a, const JetPoly& b);

private:
    void add_term(const JetMonomial& m, const Rational& c);
    static int merged_axis(const JetPoly& a, const JetPoly& b);

    std::map<JetMonomial, Rational> terms_;
    int order_ = kExact;
    int axis_ = 0;
};

std::string to_string(const JetPoly& p);

template <>
struct ScalarOps<JetPoly> {
    static JetPoly from_int(long v) { return JetPoly(v); }
    static bool is_zero(const JetPoly& v) { return v.is_zero(); }
    static JetPoly sqrt(const JetPoly& v) { return v.sqrt(); }
    static int sign(const JetPoly& v) {
        if (!v.unit_nilpotent_split()) return 2;
        const Rational c = v.constant_term();
        return c < 0 ? -1 : (c == 0 ? 0 : 1);
    }
};

template <>
struct Calculus<JetPoly> {
    static JetPoly partial(const JetPoly& c, int axis) { return c.partial(axis); }
};

}  // namespace formlab

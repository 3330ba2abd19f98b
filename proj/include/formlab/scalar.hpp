#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace formlab {

using Rational = boost::multiprecision::number<boost::multiprecision::cpp_rational_backend, boost::multiprecision::et_off>;
using Integer = boost::multiprecision::number<boost::multiprecision::cpp_int_backend<>, boost::multiprecision::et_off>;

/// Exact square root of a non-negative rational that is a perfect square.
/// Throws std::domain_error otherwise.
Rational exact_sqrt(const Rational& q);

/// Minimal complex number over an arbitrary ring (std::complex is only
/// specified for floating-point types).
template <class T>
struct Cplx {
    T re{};
    T im{};

    Cplx() = default;
    Cplx(T r) : re(std::move(r)), im() {}  // NOLINT(google-explicit-constructor)
    Cplx(T r, T i) : re(std::move(r)), im(std::move(i)) {}

    static Cplx i() { return Cplx(T(0), T(1)); }

    Cplx& operator+=(const Cplx& o) { re = re + o.re; im = im + o.im; return *this; }
    Cplx& operator-=(const Cplx& o) { re = re - o.re; im = im - o.im; return *this; }
    friend Cplx operator+(Cplx a, const Cplx& b) { return a += b; }
    friend Cplx operator-(Cplx a, const Cplx& b) { return a -= b; }
    friend Cplx operator-(const Cplx& a) { return Cplx(-a.re, -a.im); }
    friend Cplx operator*(const Cplx& a, const Cplx& b) {
        return Cplx(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re);
    }
    Cplx& operator*=(const Cplx& o) { return *this = *this * o; }
    Cplx conj() const { return Cplx(re, -im); }
};

using CRational = Cplx<Rational>;

inline bool operator==(const CRational& a, const CRational& b) { return a.re == b.re && a.im == b.im; }
inline CRational operator/(const CRational& a, const Rational& s) { return CRational(a.re / s, a.im / s); }
inline std::complex<double> to_complex(const CRational& z) {
    return {static_cast<double>(z.re), static_cast<double>(z.im)};
}
std::string to_string(const CRational& z);

/// Ring operations used by the generic exterior-algebra code. Every coefficient
/// type (exact rationals, doubles, complex doubles, symbolic expressions, jet
/// polynomials) provides a specialization.
template <class S>
struct ScalarOps;

template <>
struct ScalarOps<Rational> {
    static Rational from_int(long v) { return Rational(v); }
    static bool is_zero(const Rational& v) { return v == 0; }
    static Rational sqrt(const Rational& v) { return exact_sqrt(v); }
    /// -1: negative, 0: zero, 1: positive, 2: unknown sign
    static int sign(const Rational& v) { return v < 0 ? -1 : (v == 0 ? 0 : 1); }
};

template <>
struct ScalarOps<double> {
    static double from_int(long v) { return static_cast<double>(v); }
    static bool is_zero(double v) { return v == 0.0; }
    static double sqrt(double v) { return std::sqrt(v); }
    static int sign(double v) { return v < 0 ? -1 : (v == 0 ? 0 : 1); }
};

template <>
struct ScalarOps<std::complex<double>> {
    using C = std::complex<double>;
    static C from_int(long v) { return C(static_cast<double>(v), 0.0); }
    static bool is_zero(const C& v) { return v == C(0.0, 0.0); }
    static C sqrt(const C& v) { return std::sqrt(v); }
    static int sign(const C& v) {
        if (v.imag() != 0.0) return 2;
        return v.real() < 0 ? -1 : (v.real() == 0 ? 0 : 1);
    }
};

}  // namespace formlab

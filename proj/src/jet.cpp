#include "formlab/jet.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace formlab {

JetPoly::JetPoly(long v) : JetPoly(Rational(v)) {}

JetPoly::JetPoly(const Rational& v) {
    if (v != 0) terms_.emplace(JetMonomial{}, v);
}

JetPoly JetPoly::xn(int axis, int order, int power) {
    if (axis < 1 || order < 0 || power < 0) throw std::invalid_argument("JetPoly::xn: bad arguments");
    JetPoly p;
    p.axis_ = axis;
    p.order_ = order;
    if (power <= order) p.terms_.emplace(JetMonomial{power, {}}, Rational(1));
    return p;
}

JetPoly JetPoly::lambda(int axis, const Deriv& alpha) {
    JetPoly p;
    p.axis_ = axis;
    Deriv a = alpha;
    std::sort(a.begin(), a.end());
    for (int v : a) {
        if (v == axis) throw std::invalid_argument("JetPoly::lambda: lambda does not depend on x_n");
    }
    p.terms_.emplace(JetMonomial{0, {a}}, Rational(1));
    return p;
}

int JetPoly::merged_axis(const JetPoly& a, const JetPoly& b) {
    if (a.axis_ != 0 && b.axis_ != 0 && a.axis_ != b.axis_) throw std::invalid_argument("JetPoly: normal axis mismatch");
    return a.axis_ != 0 ? a.axis_ : b.axis_;
}

void JetPoly::add_term(const JetMonomial& m, const Rational& c) {
    if (c == 0 || m.power > order_) return;
    auto it = terms_.find(m);
    if (it == terms_.end()) {
        terms_.emplace(m, c);
    } else {
        it->second += c;
        if (it->second == 0) terms_.erase(it);
    }
}

JetPoly JetPoly::truncated(int order) const {
    JetPoly out;
    out.axis_ = axis_;
    out.order_ = std::min(order, order_);
    for (const auto& [m, c] : terms_) out.add_term(m, c);
    return out;
}

JetPoly JetPoly::coefficient(int power) const {
    if (power > order_) throw std::domain_error("JetPoly::coefficient: power beyond the known order");
    JetPoly out;
    out.axis_ = axis_;
    for (const auto& [m, c] : terms_) {
        if (m.power == power) out.add_term(JetMonomial{0, m.lambdas}, c);
    }
    return out;
}

int JetPoly::valuation() const {
    int v = kExact;
    for (const auto& [m, c] : terms_) v = std::min(v, m.power);
    return v;
}

Rational JetPoly::constant_term() const {
    auto it = terms_.find(JetMonomial{});
    return it == terms_.end() ? Rational(0) : it->second;
}

bool JetPoly::unit_nilpotent_split() const {
    for (const auto& [m, c] : terms_) {
        if (m.power == 0 && !m.lambdas.empty()) return false;
    }
    return true;
}

JetPoly operator+(const JetPoly& a, const JetPoly& b) {
    JetPoly out;
    out.axis_ = JetPoly::merged_axis(a, b);
    out.order_ = std::min(a.order_, b.order_);
    for (const auto& [m, c] : a.terms_) out.add_term(m, c);
    for (const auto& [m, c] : b.terms_) out.add_term(m, c);
    return out;
}

JetPoly operator-(const JetPoly& a) {
    JetPoly out = a;
    for (auto& [m, c] : out.terms_) c = -c;
    return out;
}

JetPoly operator-(const JetPoly& a, const JetPoly& b) { return a + (-b); }

JetPoly operator*(const JetPoly& a, const JetPoly& b) {
    JetPoly out;
    out.axis_ = JetPoly::merged_axis(a, b);
    // a known mod x^{oa+1}, b mod x^{ob+1}: the product is known mod
    // x^{min(oa + vb, ob + va) + 1}
    const long oa = a.order_, ob = b.order_;
    const long va = a.valuation(), vb = b.valuation();
    long o = std::min(oa == JetPoly::kExact ? JetPoly::kExact : oa + (vb == JetPoly::kExact ? 0 : vb),
                      ob == JetPoly::kExact ? JetPoly::kExact : ob + (va == JetPoly::kExact ? 0 : va));
    out.order_ = static_cast<int>(std::min<long>(o, JetPoly::kExact));
    for (const auto& [ma, ca] : a.terms_) {
        for (const auto& [mb, cb] : b.terms_) {
            JetMonomial m;
            m.power = ma.power + mb.power;
            if (m.power > out.order_) continue;
            m.lambdas = ma.lambdas;
            m.lambdas.insert(m.lambdas.end(), mb.lambdas.begin(), mb.lambdas.end());
            std::sort(m.lambdas.begin(), m.lambdas.end());
            out.add_term(m, ca * cb);
        }
    }
    return out;
}

bool operator==(const JetPoly& a, const JetPoly& b) {
    const int o = std::min(a.order_, b.order_);
    return (a - b).truncated(o).is_zero();
}

JetPoly JetPoly::partial(int axis) const {
    JetPoly out;
    out.axis_ = axis_;
    if (axis_ == 0) return out;
    if (axis == axis_) {
        out.order_ = order_ == kExact ? kExact : order_ - 1;
        for (const auto& [m, c] : terms_) {
            if (m.power == 0) continue;
            out.add_term(JetMonomial{m.power - 1, m.lambdas}, c * m.power);
        }
        return out;
    }
    out.order_ = order_;
    for (const auto& [m, c] : terms_) {
        for (std::size_t f = 0; f < m.lambdas.size(); ++f) {
            JetMonomial d = m;
            d.lambdas[f] = merge_deriv(d.lambdas[f], {axis});
            std::sort(d.lambdas.begin(), d.lambdas.end());
            out.add_term(d, c);
        }
    }
    return out;
}

JetPoly JetPoly::pow(const Rational& r) const {
    if (!unit_nilpotent_split()) throw std::domain_error("JetPoly::pow: constant part is not a rational number");
    const Rational c0 = constant_term();
    if (c0 == 0) throw std::domain_error("JetPoly::pow: zero constant term");
    if (is_zero()) return *this;
    // c0^r for integer or half-integer r
    const Integer twice = boost::multiprecision::numerator(Rational(2 * r));
    if (boost::multiprecision::denominator(Rational(2 * r)) != 1) {
        throw std::domain_error("JetPoly::pow: exponent must be a half-integer");
    }
    Rational base = twice % 2 == 0 ? c0 : exact_sqrt(c0);
    long e = static_cast<long>(twice % 2 == 0 ? twice / 2 : twice);
    Rational scale = 1;
    for (long j = 0; j < std::abs(e); ++j) scale *= base;
    if (e < 0) scale = 1 / scale;

    JetPoly eps = (*this) * JetPoly(1 / c0) - JetPoly(1);
    if (order_ == kExact && eps.valuation() != kExact) {
        throw std::domain_error("JetPoly::pow: infinite series for an exact jet");
    }
    JetPoly sum(1);
    sum.axis_ = axis_;
    sum.order_ = order_;
    JetPoly power(1);
    Rational binom = 1;
    for (int j = 1;; ++j) {
        power = power * eps;
        if (power.is_zero()) break;
        binom = binom * (r - (j - 1)) / j;
        sum = sum + JetPoly(binom) * power;
        if (j > order_) break;
    }
    return JetPoly(scale) * sum;
}

std::string to_string(const JetPoly& p) {
    if (p.is_zero()) return "0";
    std::ostringstream os;
    bool first = true;
    for (const auto& [m, c] : p.terms()) {
        os << (first ? "" : " + ") << (c < 0 ? "(" : "") << c << (c < 0 ? ")" : "");
        first = false;
        for (const auto& d : m.lambdas) {
            os << "*lambda";
            if (!d.empty()) {
                os << "_";
                for (int a : d) os << a;
            }
        }
        if (m.power > 0) os << "*xn^" << m.power;
    }
    if (p.order() != JetPoly::kExact) os << " + O(xn^" << p.order() + 1 << ")";
    return os.str();
}

}  // namespace formlab

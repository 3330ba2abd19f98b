#include "formlab/scalar.hpp"

#include <boost/multiprecision/integer.hpp>

namespace formlab {

namespace {

bool integer_sqrt(const Integer& v, Integer& root) {
    if (v < 0) return false;
    root = boost::multiprecision::sqrt(v);
    return root * root == v;
}

}  // namespace

Rational exact_sqrt(const Rational& q) {
    Integer num = boost::multiprecision::numerator(q);
    Integer den = boost::multiprecision::denominator(q);
    Integer rn, rd;
    if (!integer_sqrt(num, rn) || !integer_sqrt(den, rd)) {
        throw std::domain_error("exact_sqrt: " + q.str() + " is not a rational square");
    }
    return Rational(rn, rd);
}

std::string to_string(const CRational& z) {
    if (z.im == 0) return z.re.str();
    if (z.re == 0) return z.im.str() + "i";
    return z.re.str() + (z.im < 0 ? "" : "+") + z.im.str() + "i";
}

}  // namespace formlab

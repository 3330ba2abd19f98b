#include "formlab/expr.hpp"

#include <cctype>
#include <cmath>
#include <functional>
#include <random>
#include <unordered_set>

namespace formlab {

struct Expr::Node {
    Kind kind;
    Rational value;       // Const
    int index = 0;        // Var axis, Pow exponent
    Func func = Func::Sin;
    Expr a{std::shared_ptr<const Node>()};  // operands
    Expr b{std::shared_ptr<const Node>()};
};

class ExprBuilder {
public:
    static Expr make(Expr::Node n) { return Expr(std::make_shared<const Expr::Node>(std::move(n))); }
    static Expr constant(const Rational& v) {
        Expr::Node n;
        n.kind = Expr::Kind::Const;
        n.value = v;
        return make(std::move(n));
    }
    static Expr unary(Expr::Kind k, const Expr& a, int index = 0, Func f = Func::Sin) {
        Expr::Node n;
        n.kind = k;
        n.a = a;
        n.index = index;
        n.func = f;
        return make(std::move(n));
    }
    static Expr binary(Expr::Kind k, const Expr& a, const Expr& b) {
        Expr::Node n;
        n.kind = k;
        n.a = a;
        n.b = b;
        return make(std::move(n));
    }
};

namespace {

const Expr& zero_expr() {
    static const Expr z = ExprBuilder::constant(Rational(0));
    return z;
}

}  // namespace

Expr::Expr() : node_(zero_expr().node_) {}
Expr::Expr(int v) : Expr(Rational(v)) {}
Expr::Expr(long v) : Expr(Rational(v)) {}
Expr::Expr(const Rational& v) : node_(ExprBuilder::constant(v).node_) {}

Expr Expr::var(int axis) {
    if (axis < 1) throw std::invalid_argument("Expr::var: axis must be >= 1");
    Expr::Node n;
    n.kind = Kind::Var;
    n.index = axis;
    return ExprBuilder::make(std::move(n));
}

Expr::Kind Expr::kind() const { return node_->kind; }
bool Expr::is_zero() const { return node_->kind == Kind::Const && node_->value == 0; }
bool Expr::is_one() const { return node_->kind == Kind::Const && node_->value == 1; }

const Rational& Expr::value() const {
    if (node_->kind != Kind::Const) throw std::logic_error("Expr::value on non-constant");
    return node_->value;
}
int Expr::axis() const {
    if (node_->kind != Kind::Var) throw std::logic_error("Expr::axis on non-variable");
    return node_->index;
}
int Expr::exponent() const {
    if (node_->kind != Kind::Pow) throw std::logic_error("Expr::exponent on non-power");
    return node_->index;
}
Func Expr::func() const {
    if (node_->kind != Kind::Apply) throw std::logic_error("Expr::func on non-application");
    return node_->func;
}
Expr Expr::lhs() const { return node_->a; }
Expr Expr::rhs() const { return node_->b; }

Expr operator+(const Expr& a, const Expr& b) {
    if (a.is_const() && b.is_const()) return Expr(a.value() + b.value());
    if (a.is_zero()) return b;
    if (b.is_zero()) return a;
    return ExprBuilder::binary(Expr::Kind::Add, a, b);
}

Expr operator-(const Expr& a) {
    if (a.is_const()) return Expr(Rational(-a.value()));
    if (a.kind() == Expr::Kind::Neg) return a.lhs();
    return ExprBuilder::unary(Expr::Kind::Neg, a);
}

Expr operator-(const Expr& a, const Expr& b) {
    if (a.is_const() && b.is_const()) return Expr(a.value() - b.value());
    if (b.is_zero()) return a;
    if (a.is_zero()) return -b;
    if (a.id() == b.id()) return Expr(0);
    return ExprBuilder::binary(Expr::Kind::Sub, a, b);
}

Expr operator*(const Expr& a, const Expr& b) {
    if (a.is_const() && b.is_const()) return Expr(a.value() * b.value());
    if (a.is_zero() || b.is_zero()) return Expr(0);
    if (a.is_one()) return b;
    if (b.is_one()) return a;
    if (a.is_const() && a.value() == -1) return -b;
    if (b.is_const() && b.value() == -1) return -a;
    return ExprBuilder::binary(Expr::Kind::Mul, a, b);
}

Expr operator/(const Expr& a, const Expr& b) {
    if (b.is_zero()) throw std::domain_error("Expr: division by constant zero");
    if (a.is_const() && b.is_const()) return Expr(a.value() / b.value());
    if (a.is_zero()) return Expr(0);
    if (b.is_one()) return a;
    return ExprBuilder::binary(Expr::Kind::Div, a, b);
}

Expr pow(const Expr& base, int exponent) {
    if (exponent < 0) return Expr(1) / pow(base, -exponent);
    if (exponent == 0) return Expr(1);
    if (exponent == 1) return base;
    if (base.is_const()) {
        Rational r(1);
        for (int i = 0; i < exponent; ++i) r *= base.value();
        return Expr(r);
    }
    return ExprBuilder::unary(Expr::Kind::Pow, base, exponent);
}

Expr Expr::apply(Func f, const Expr& arg) {
    if (arg.is_const()) {
        const Rational& v = arg.value();
        if (v == 0) {
            if (f == Func::Sin || f == Func::Sqrt) return Expr(0);
            if (f == Func::Cos || f == Func::Exp) return Expr(1);
        }
        if (f == Func::Log && v == 1) return Expr(0);
        if (f == Func::Sqrt && v > 0) {
            try {
                return Expr(exact_sqrt(v));
            } catch (const std::domain_error&) {
                // irrational root stays symbolic
            }
        }
    }
    return ExprBuilder::unary(Kind::Apply, arg, 0, f);
}

Expr sin(const Expr& a) { return Expr::apply(Func::Sin, a); }
Expr cos(const Expr& a) { return Expr::apply(Func::Cos, a); }
Expr exp(const Expr& a) { return Expr::apply(Func::Exp, a); }
Expr log(const Expr& a) { return Expr::apply(Func::Log, a); }
Expr sqrt(const Expr& a) { return Expr::apply(Func::Sqrt, a); }

// ---------------------------------------------------------------------------
// Parser

namespace {

class Parser {
public:
    explicit Parser(std::string_view text) : s_(text) {}

    Expr parse_all() {
        Expr e = parse_expr();
        skip_ws();
        if (pos_ != s_.size()) throw ParseError("unexpected character '" + std::string(1, s_[pos_]) + "'", pos_);
        return e;
    }

private:
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool accept(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    Expr parse_expr() {
        Expr acc = parse_term();
        while (true) {
            if (accept('+')) {
                acc = acc + parse_term();
            } else if (accept('-')) {
                acc = acc - parse_term();
            } else {
                return acc;
            }
        }
    }

    Expr parse_term() {
        Expr acc = parse_factor();
        while (true) {
            if (accept('*')) {
                acc = acc * parse_factor();
            } else if (accept('/')) {
                const std::size_t at = pos_;
                Expr d = parse_factor();
                if (d.is_zero()) throw ParseError("division by zero", at);
                acc = acc / d;
            } else {
                return acc;
            }
        }
    }

    Expr parse_factor() {
        Expr base = parse_base();
        if (accept('^')) {
            skip_ws();
            const std::size_t start = pos_;
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            if (start == pos_) throw ParseError("expected integer exponent", start);
            return pow(base, std::stoi(std::string(s_.substr(start, pos_ - start))));
        }
        return base;
    }

    Expr parse_base() {
        skip_ws();
        if (pos_ >= s_.size()) throw ParseError("unexpected end of input", pos_);
        const char c = s_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (c == '(') {
            ++pos_;
            Expr e = parse_expr();
            if (!accept(')')) throw ParseError("expected ')'", pos_);
            return e;
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            const std::size_t start = pos_;
            while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            const std::string word(s_.substr(start, pos_ - start));
            if (word.size() > 1 && word[0] == 'x' &&
                word.find_first_not_of("0123456789", 1) == std::string::npos) {
                const int axis = std::stoi(word.substr(1));
                if (axis < 1) throw ParseError("variable index must be >= 1", start);
                return Expr::var(axis);
            }
            static const std::pair<const char*, Func> funcs[] = {
                {"sin", Func::Sin}, {"cos", Func::Cos}, {"exp", Func::Exp}, {"log", Func::Log}, {"sqrt", Func::Sqrt}};
            for (const auto& [name, f] : funcs) {
                if (word == name) {
                    if (!accept('(')) throw ParseError("expected '(' after " + word, pos_);
                    Expr arg = parse_expr();
                    if (!accept(')')) throw ParseError("expected ')'", pos_);
                    return Expr::apply(f, arg);
                }
            }
            throw ParseError("unknown identifier '" + word + "'", start);
        }
        throw ParseError("unexpected character '" + std::string(1, c) + "'", pos_);
    }

    Expr parse_number() {
        const std::size_t start = pos_;
        Integer whole = 0;
        Integer frac_num = 0;
        Integer frac_den = 1;
        bool digits = false;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
            whole = whole * 10 + (s_[pos_] - '0');
            ++pos_;
            digits = true;
        }
        if (pos_ < s_.size() && s_[pos_] == '.') {
            ++pos_;
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                frac_num = frac_num * 10 + (s_[pos_] - '0');
                frac_den *= 10;
                ++pos_;
                digits = true;
            }
        }
        if (!digits) throw ParseError("malformed number", start);
        return Expr(Rational(whole) + Rational(frac_num, frac_den));
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

}  // namespace

Expr parse(std::string_view text) { return Parser(text).parse_all(); }

// ---------------------------------------------------------------------------
// Printer

namespace {

int precedence(const Expr& e) {
    switch (e.kind()) {
        case Expr::Kind::Add:
        case Expr::Kind::Sub:
            return 1;
        case Expr::Kind::Mul:
        case Expr::Kind::Div:
            return 2;
        case Expr::Kind::Pow:
            return 3;
        default:
            return 4;  // atoms and self-parenthesized forms
    }
}

const char* func_name(Func f) {
    switch (f) {
        case Func::Sin: return "sin";
        case Func::Cos: return "cos";
        case Func::Exp: return "exp";
        case Func::Log: return "log";
        case Func::Sqrt: return "sqrt";
    }
    return "?";
}

std::string print_const(const Rational& v) {
    const Rational mag = v < 0 ? Rational(-v) : v;
    std::string body = mag.str();
    if (boost::multiprecision::denominator(mag) != 1) body = "(" + body + ")";
    if (v < 0) return "(0-" + body + ")";
    return body;
}

void print(const Expr& e, std::string& out);

void print_wrapped(const Expr& e, int min_prec, std::string& out) {
    if (precedence(e) < min_prec) {
        out += "(";
        print(e, out);
        out += ")";
    } else {
        print(e, out);
    }
}

void print(const Expr& e, std::string& out) {
    switch (e.kind()) {
        case Expr::Kind::Const:
            out += print_const(e.value());
            return;
        case Expr::Kind::Var:
            out += "x" + std::to_string(e.axis());
            return;
        case Expr::Kind::Add:
            print_wrapped(e.lhs(), 1, out);
            out += " + ";
            print_wrapped(e.rhs(), 2, out);
            return;
        case Expr::Kind::Sub:
            print_wrapped(e.lhs(), 1, out);
            out += " - ";
            print_wrapped(e.rhs(), 2, out);
            return;
        case Expr::Kind::Mul:
            print_wrapped(e.lhs(), 2, out);
            out += "*";
            print_wrapped(e.rhs(), 3, out);
            return;
        case Expr::Kind::Div:
            print_wrapped(e.lhs(), 2, out);
            out += "/";
            print_wrapped(e.rhs(), 3, out);
            return;
        case Expr::Kind::Neg:
            out += "(0 - ";
            print_wrapped(e.lhs(), 2, out);
            out += ")";
            return;
        case Expr::Kind::Pow:
            print_wrapped(e.lhs(), 4, out);
            out += "^" + std::to_string(e.exponent());
            return;
        case Expr::Kind::Apply:
            out += func_name(e.func());
            out += "(";
            print(e.lhs(), out);
            out += ")";
            return;
    }
}

}  // namespace

std::string to_string(const Expr& e) {
    std::string out;
    print(e, out);
    return out;
}

// ---------------------------------------------------------------------------
// Transformations

namespace {

using Memo = std::unordered_map<const Expr::Node*, Expr>;

Expr diff_rec(const Expr& e, int axis, Memo& memo) {
    auto it = memo.find(e.id());
    if (it != memo.end()) return it->second;
    Expr r;
    switch (e.kind()) {
        case Expr::Kind::Const:
            r = Expr(0);
            break;
        case Expr::Kind::Var:
            r = Expr(e.axis() == axis ? 1 : 0);
            break;
        case Expr::Kind::Add:
            r = diff_rec(e.lhs(), axis, memo) + diff_rec(e.rhs(), axis, memo);
            break;
        case Expr::Kind::Sub:
            r = diff_rec(e.lhs(), axis, memo) - diff_rec(e.rhs(), axis, memo);
            break;
        case Expr::Kind::Mul:
            r = diff_rec(e.lhs(), axis, memo) * e.rhs() + e.lhs() * diff_rec(e.rhs(), axis, memo);
            break;
        case Expr::Kind::Div: {
            const Expr da = diff_rec(e.lhs(), axis, memo);
            const Expr db = diff_rec(e.rhs(), axis, memo);
            if (db.is_zero()) {
                r = da / e.rhs();
            } else {
                r = (da * e.rhs() - e.lhs() * db) / pow(e.rhs(), 2);
            }
            break;
        }
        case Expr::Kind::Neg:
            r = -diff_rec(e.lhs(), axis, memo);
            break;
        case Expr::Kind::Pow:
            r = Expr(e.exponent()) * pow(e.lhs(), e.exponent() - 1) * diff_rec(e.lhs(), axis, memo);
            break;
        case Expr::Kind::Apply: {
            const Expr da = diff_rec(e.lhs(), axis, memo);
            if (da.is_zero()) {
                r = Expr(0);
                break;
            }
            switch (e.func()) {
                case Func::Sin: r = cos(e.lhs()) * da; break;
                case Func::Cos: r = -(sin(e.lhs()) * da); break;
                case Func::Exp: r = e * da; break;
                case Func::Log: r = da / e.lhs(); break;
                case Func::Sqrt: r = da / (Expr(2) * e); break;
            }
            break;
        }
    }
    memo.emplace(e.id(), r);
    return r;
}

Expr subst_rec(const Expr& e, int axis, const Expr& value, Memo& memo) {
    auto it = memo.find(e.id());
    if (it != memo.end()) return it->second;
    Expr r;
    switch (e.kind()) {
        case Expr::Kind::Const: r = e; break;
        case Expr::Kind::Var: r = e.axis() == axis ? value : e; break;
        case Expr::Kind::Add: r = subst_rec(e.lhs(), axis, value, memo) + subst_rec(e.rhs(), axis, value, memo); break;
        case Expr::Kind::Sub: r = subst_rec(e.lhs(), axis, value, memo) - subst_rec(e.rhs(), axis, value, memo); break;
        case Expr::Kind::Mul: r = subst_rec(e.lhs(), axis, value, memo) * subst_rec(e.rhs(), axis, value, memo); break;
        case Expr::Kind::Div: {
            const Expr den = subst_rec(e.rhs(), axis, value, memo);
            if (den.is_zero()) throw std::domain_error("substitute: denominator vanishes identically");
            r = subst_rec(e.lhs(), axis, value, memo) / den;
            break;
        }
        case Expr::Kind::Neg: r = -subst_rec(e.lhs(), axis, value, memo); break;
        case Expr::Kind::Pow: r = pow(subst_rec(e.lhs(), axis, value, memo), e.exponent()); break;
        case Expr::Kind::Apply: {
            const Expr arg = subst_rec(e.lhs(), axis, value, memo);
            if (arg.is_const() && ((e.func() == Func::Log && arg.value() <= 0) || (e.func() == Func::Sqrt && arg.value() < 0))) {
                throw std::domain_error("substitute: " + std::string(func_name(e.func())) + " of invalid constant");
            }
            r = Expr::apply(e.func(), arg);
            break;
        }
    }
    memo.emplace(e.id(), r);
    return r;
}

template <class F>
void visit_dag(const Expr& e, F&& f) {
    std::unordered_set<const Expr::Node*> seen;
    std::vector<Expr> stack{e};
    while (!stack.empty()) {
        Expr cur = stack.back();
        stack.pop_back();
        if (!seen.insert(cur.id()).second) continue;
        f(cur);
        switch (cur.kind()) {
            case Expr::Kind::Add:
            case Expr::Kind::Sub:
            case Expr::Kind::Mul:
            case Expr::Kind::Div:
                stack.push_back(cur.lhs());
                stack.push_back(cur.rhs());
                break;
            case Expr::Kind::Neg:
            case Expr::Kind::Pow:
            case Expr::Kind::Apply:
                stack.push_back(cur.lhs());
                break;
            default:
                break;
        }
    }
}

}  // namespace

Expr differentiate(const Expr& e, int axis) {
    Memo memo;
    return diff_rec(e, axis, memo);
}

Expr substitute(const Expr& e, int axis, const Expr& value) {
    Memo memo;
    return subst_rec(e, axis, value, memo);
}

bool depends_on(const Expr& e, int axis) {
    bool found = false;
    visit_dag(e, [&](const Expr& n) {
        if (n.kind() == Expr::Kind::Var && n.axis() == axis) found = true;
    });
    return found;
}

int max_variable(const Expr& e) {
    int m = 0;
    visit_dag(e, [&](const Expr& n) {
        if (n.kind() == Expr::Kind::Var) m = std::max(m, n.axis());
    });
    return m;
}

std::size_t node_count(const Expr& e) {
    std::size_t count = 0;
    visit_dag(e, [&](const Expr&) { ++count; });
    return count;
}

bool same(const Expr& a, const Expr& b) {
    if (a.id() == b.id()) return true;
    if (a.kind() != b.kind()) return false;
    switch (a.kind()) {
        case Expr::Kind::Const: return a.value() == b.value();
        case Expr::Kind::Var: return a.axis() == b.axis();
        case Expr::Kind::Add:
        case Expr::Kind::Sub:
        case Expr::Kind::Mul:
        case Expr::Kind::Div:
            return same(a.lhs(), b.lhs()) && same(a.rhs(), b.rhs());
        case Expr::Kind::Neg: return same(a.lhs(), b.lhs());
        case Expr::Kind::Pow: return a.exponent() == b.exponent() && same(a.lhs(), b.lhs());
        case Expr::Kind::Apply: return a.func() == b.func() && same(a.lhs(), b.lhs());
    }
    return false;
}

std::vector<Expr> taylor_in_normal(const Expr& e, int axis, int order) {
    if (order < 0) throw std::invalid_argument("taylor_in_normal: negative order");
    const int nvars = std::max(max_variable(e), axis);
    std::mt19937 rng(12345);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    std::vector<std::vector<double>> probes(3, std::vector<double>(static_cast<std::size_t>(nvars)));
    for (auto& p : probes) {
        for (auto& v : p) v = dist(rng);
        p[static_cast<std::size_t>(axis - 1)] = 0.0;
    }

    std::vector<Expr> out;
    out.reserve(static_cast<std::size_t>(order) + 1);
    Expr d = e;
    Rational factorial(1);
    for (int j = 0; j <= order; ++j) {
        if (j > 0) {
            d = differentiate(d, axis);
            factorial *= j;
        }
        Expr c;
        try {
            c = substitute(d, axis, Expr(0));
        } catch (const std::domain_error& err) {
            throw std::domain_error(std::string("taylor_in_normal: singular at x_n = 0: ") + err.what());
        }
        for (const auto& p : probes) {
            double v = 0.0;
            try {
                v = evaluate(c, p);
            } catch (const std::domain_error&) {
                v = NAN;
            }
            if (!std::isfinite(v)) throw std::domain_error("taylor_in_normal: expression is singular at x_n = 0");
        }
        out.push_back(factorial == 1 ? c : c / Expr(factorial));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

Evaluator::Evaluator(std::vector<double> x) : x_(std::move(x)) {}

double Evaluator::operator()(const Expr& e) {
    roots_.push_back(e);
    return eval(e.id());
}

double Evaluator::eval(const Expr::Node* n) {
    if (n->kind == Expr::Kind::Const) return static_cast<double>(n->value);
    if (n->kind == Expr::Kind::Var) {
        if (n->index > static_cast<int>(x_.size())) {
            throw std::out_of_range("evaluate: variable x" + std::to_string(n->index) + " not bound");
        }
        return x_[static_cast<std::size_t>(n->index - 1)];
    }
    auto it = cache_.find(n);
    if (it != cache_.end()) return it->second;
    double r = 0.0;
    switch (n->kind) {
        case Expr::Kind::Add: r = eval(n->a.id()) + eval(n->b.id()); break;
        case Expr::Kind::Sub: r = eval(n->a.id()) - eval(n->b.id()); break;
        case Expr::Kind::Mul: r = eval(n->a.id()) * eval(n->b.id()); break;
        case Expr::Kind::Div: {
            const double den = eval(n->b.id());
            if (den == 0.0) throw std::domain_error("evaluate: division by zero");
            r = eval(n->a.id()) / den;
            break;
        }
        case Expr::Kind::Neg: r = -eval(n->a.id()); break;
        case Expr::Kind::Pow: {
            const double b = eval(n->a.id());
            r = 1.0;
            for (int i = 0; i < n->index; ++i) r *= b;
            break;
        }
        case Expr::Kind::Apply: {
            const double a = eval(n->a.id());
            switch (n->func) {
                case Func::Sin: r = std::sin(a); break;
                case Func::Cos: r = std::cos(a); break;
                case Func::Exp: r = std::exp(a); break;
                case Func::Log:
                    if (a <= 0.0) throw std::domain_error("evaluate: log of non-positive value");
                    r = std::log(a);
                    break;
                case Func::Sqrt:
                    if (a < 0.0) throw std::domain_error("evaluate: sqrt of negative value");
                    r = std::sqrt(a);
                    break;
            }
            break;
        }
        default: break;
    }
    cache_.emplace(n, r);
    return r;
}

bool vanishes(const Expr& e, int n, double tol) {
    if (e.is_const()) return e.is_zero();
    std::mt19937 rng(20261016);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    int evaluated = 0;
    for (int s = 0; s < 6; ++s) {
        std::vector<double> x(static_cast<std::size_t>(std::max(n, max_variable(e))));
        for (auto& v : x) v = u(rng);
        double value = 0.0;
        try {
            value = evaluate(e, x);
        } catch (const std::domain_error&) {
            continue;
        }
        if (!(std::abs(value) <= tol)) return false;
        ++evaluated;
    }
    return evaluated > 0;
}

double evaluate(const Expr& e, std::span<const double> x) {
    Evaluator ev(std::vector<double>(x.begin(), x.end()));
    return ev(e);
}

}  // namespace formlab

#include "formlab/dtn.hpp"

#include <Eigen/Dense>
#include <fftw3.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace formlab {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

std::size_t uz(long v) { return static_cast<std::size_t>(v); }

// ---------------------------------------------------------------------------
// lateral FFTs over blocks of contiguous slices

struct PlanKey {
    int rank;
    int size;
    int howmany;
    int sign;
    auto operator<=>(const PlanKey&) const = default;
};

std::mutex plan_mutex;

fftw_plan lateral_plan(const SlabGrid& g, int howmany, int sign) {
    static std::map<PlanKey, fftw_plan> plans;
    const PlanKey key{g.lateral_axes(), g.lateral, howmany, sign};
    std::lock_guard lock(plan_mutex);
    auto it = plans.find(key);
    if (it != plans.end()) return it->second;
    const int rank = g.lateral_axes();
    std::vector<int> dims(uz(rank), g.lateral);
    const int dist = static_cast<int>(g.lateral_size());
    auto* buf = fftw_alloc_complex(uz(dist) * uz(howmany));
    fftw_plan p = fftw_plan_many_dft(rank, dims.data(), howmany, buf, nullptr, 1, dist, buf, nullptr, 1, dist, sign,
                                     FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(buf);
    if (!p) throw NumericalFailure("FFTW planning failed");
    plans.emplace(key, p);
    return p;
}

void fft_forward(const SlabGrid& g, std::vector<cd>& data) {
    const int howmany = static_cast<int>(data.size() / g.lateral_size());
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(lateral_plan(g, howmany, FFTW_FORWARD), ptr, ptr);
}

void fft_backward(const SlabGrid& g, std::vector<cd>& data) {
    const int howmany = static_cast<int>(data.size() / g.lateral_size());
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(lateral_plan(g, howmany, FFTW_BACKWARD), ptr, ptr);
    const double s = 1.0 / static_cast<double>(g.lateral_size());
    for (auto& v : data) v *= s;
}

// Fourier multiplier of d^lat (lateral axes only). A derivative of odd
// order along an axis is zero on that axis' Nyquist mode.
std::vector<cd> lateral_multiplier(const SlabGrid& g, const Deriv& lat) {
    std::vector<int> count(uz(g.n + 1), 0);
    for (int a : lat) ++count[uz(a)];
    std::vector<cd> out(g.lateral_size());
    for (std::size_t p = 0; p < out.size(); ++p) {
        const std::vector<int> m = g.mode_of(p);
        cd s = 1.0;
        for (int a = 1; a < g.n; ++a) {
            const int c = count[uz(a)];
            if (c == 0) continue;
            const int ma = m[uz(a - 1)];
            if (g.lateral % 2 == 0 && std::abs(ma) == g.lateral / 2 && c % 2 == 1) {
                s = 0.0;
                break;
            }
            const cd ixi(0.0, two_pi * ma / g.period);
            for (int r = 0; r < c; ++r) s *= ixi;
        }
        out[p] = s;
    }
    return out;
}

using CompMap = std::map<MultiIndex, std::vector<cd>>;

// d_a of a single lateral slice (a < n).
std::vector<cd> lateral_derivative(const SlabGrid& g, std::vector<cd> v, int a) {
    const auto mult = lateral_multiplier(g, Deriv{a});
    fft_forward(g, v);
    for (std::size_t p = 0; p < v.size(); ++p) v[p] *= mult[p];
    fft_backward(g, v);
    return v;
}

// slices[0..4] hold values on x_n = 0..4h.
std::vector<cd> one_sided(const std::vector<std::vector<cd>>& slices, double h) {
    std::vector<cd> out(slices[0].size());
    for (std::size_t p = 0; p < out.size(); ++p) {
        out[p] = (-25.0 * slices[0][p] + 48.0 * slices[1][p] - 36.0 * slices[2][p] + 16.0 * slices[3][p] - 3.0 * slices[4][p]) /
                 (12.0 * h);
    }
    return out;
}

// Component values of a form on slices 0..4.
using Stack = std::vector<CompMap>;

Stack boundary_stack(const GridForm& u) {
    const std::size_t L = u.grid.lateral_size();
    Stack st(5);
    for (int j = 0; j < 5; ++j) {
        for (const auto& [I, v] : u.comps) st[uz(j)][I] = std::vector<cd>(v.begin() + static_cast<long>(uz(j) * L), v.begin() + static_cast<long>(uz(j + 1) * L));
    }
    return st;
}

// d w at x_n = 0 from a stack of k-form components.
CompMap exterior_at_boundary(const SlabGrid& g, const Stack& w, int k) {
    const int n = g.n;
    CompMap out;
    for (const auto& J : MultiIndex::all(n, k + 1)) out[J] = std::vector<cd>(g.lateral_size());
    for (const auto& [I, v0] : w[0]) {
        for (int a = 1; a <= n; ++a) {
            if (I.contains(a)) continue;
            std::vector<int> axes{a};
            axes.insert(axes.end(), I.axes().begin(), I.axes().end());
            const auto s = normalize_axes(n, axes);
            std::vector<cd> dv;
            if (a == n) {
                std::vector<std::vector<cd>> sl;
                for (int j = 0; j < 5; ++j) sl.push_back(w[uz(j)].at(I));
                dv = one_sided(sl, g.hn());
            } else {
                dv = lateral_derivative(g, v0, a);
            }
            auto& o = out[s->index];
            for (std::size_t p = 0; p < o.size(); ++p) o[p] += static_cast<double>(s->sign) * dv[p];
        }
    }
    return out;
}

// Star matrix (out index, in index, value) of a point metric on k-forms.
std::vector<std::tuple<MultiIndex, MultiIndex, double>> star_entries(const PointMetric<double>& pm, int k, bool boundary) {
    std::vector<std::tuple<MultiIndex, MultiIndex, double>> out;
    for (const auto& I : MultiIndex::all(pm.dim(), k)) {
        const auto basis = FiberForm<double>::basis(I);
        const FiberForm<double> s = boundary ? boundary_hodge_star(pm, basis) : hodge_star(pm, basis);
        for (const auto& [J, v] : s.terms()) out.emplace_back(J, I, v);
    }
    return out;
}

// Applies a pointwise star to components living on slice x_n = xn.
CompMap star_on_slice(const MetricBNF& g, const SlabGrid& grid, double xn, int k, const CompMap& w, bool boundary) {
    const int n = grid.n;
    const int dim = boundary ? n - 1 : n;
    CompMap out;
    for (const auto& J : MultiIndex::all(dim, dim - k)) out[J] = std::vector<cd>(grid.lateral_size());
    const bool constant = g.laterally_constant();
    std::vector<std::tuple<MultiIndex, MultiIndex, double>> entries;
    for (std::size_t p = 0; p < grid.lateral_size(); ++p) {
        if (!constant || p == 0) {
            std::vector<double> x = grid.lateral_point(p);
            x.push_back(xn);
            const PointMetric<double> pm = g.at(x);
            entries = star_entries(boundary ? boundary_metric(pm) : pm, k, boundary);
        }
        for (const auto& [J, I, v] : entries) {
            auto it = w.find(I);
            if (it != w.end()) out[J][p] += v * it->second[p];
        }
    }
    return out;
}

BoundaryForm pullback(const SlabGrid& grid, int k, const CompMap& w) {
    const int n = grid.n;
    BoundaryForm out(grid, n - 1, k);
    for (const auto& [I, v] : w) {
        if (!I.contains(n)) out.at(MultiIndex(n - 1, I.axes())) = v;
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

SlabGrid::SlabGrid(int n_, int lateral_, int normal_, double thickness_, double period_)
    : n(n_), lateral(lateral_), normal(normal_), thickness(thickness_), period(period_) {}

void SlabGrid::validate() const {
    if (n < 2) throw std::invalid_argument("SlabGrid: n must be at least 2");
    if (lateral < 8) throw std::invalid_argument("SlabGrid: lateral resolution must be at least 8");
    if (normal < 8) throw std::invalid_argument("SlabGrid: normal resolution must be at least 8");
    if (!(thickness > 0.0)) throw std::invalid_argument("SlabGrid: thickness must be positive");
    if (!(period > 0.0)) throw std::invalid_argument("SlabGrid: period must be positive");
}

std::size_t SlabGrid::lateral_size() const {
    std::size_t s = 1;
    for (int a = 0; a < n - 1; ++a) s *= uz(lateral);
    return s;
}

std::vector<double> SlabGrid::lateral_point(std::size_t idx) const {
    std::vector<double> x(uz(n - 1));
    for (int a = n - 2; a >= 0; --a) {
        x[uz(a)] = static_cast<double>(idx % uz(lateral)) * hl();
        idx /= uz(lateral);
    }
    return x;
}

std::vector<int> SlabGrid::mode_of(std::size_t idx) const {
    std::vector<int> m(uz(n - 1));
    for (int a = n - 2; a >= 0; --a) {
        const int p = static_cast<int>(idx % uz(lateral));
        m[uz(a)] = p <= lateral / 2 ? p : p - lateral;
        idx /= uz(lateral);
    }
    return m;
}

std::size_t SlabGrid::index_of_mode(const std::vector<int>& m) const {
    if (static_cast<int>(m.size()) != n - 1) throw std::invalid_argument("SlabGrid: frequency has wrong length");
    std::size_t idx = 0;
    for (int ma : m) idx = idx * uz(lateral) + uz(((ma % lateral) + lateral) % lateral);
    return idx;
}

double SlabGrid::xi_norm(const std::vector<int>& m) const {
    double s = 0.0;
    for (int ma : m) s += static_cast<double>(ma) * ma;
    return two_pi * std::sqrt(s) / period;
}

std::string SlabGrid::id() const {
    std::ostringstream os;
    os << "n" << n << "_L" << lateral << "_N" << normal << "_T" << thickness << "_P" << period;
    return os.str();
}

nlohmann::json SlabGrid::to_json() const {
    return {{"n", n}, {"lateral", lateral}, {"normal", normal}, {"thickness", thickness}, {"period", period}, {"id", id()}};
}

GridForm::GridForm(const SlabGrid& g, int k) : grid(g), degree(k) {
    for (const auto& I : MultiIndex::all(g.n, k)) comps[I] = std::vector<cd>(g.node_count());
}

BoundaryForm::BoundaryForm(const SlabGrid& g, int dim_, int k) : grid(g), dim(dim_), degree(k) {
    if (k < 0 || k > dim) return;
    for (const auto& I : MultiIndex::all(dim, k)) comps[I] = std::vector<cd>(g.lateral_size());
}

double BoundaryForm::max_abs() const {
    double m = 0.0;
    for (const auto& [I, v] : comps) {
        for (const cd& z : v) m = std::max(m, std::abs(z));
    }
    return m;
}

BoundaryForm operator-(const BoundaryForm& a, const BoundaryForm& b) {
    if (a.dim != b.dim || a.degree != b.degree) throw std::invalid_argument("BoundaryForm: shape mismatch");
    BoundaryForm out = a;
    for (auto& [I, v] : out.comps) {
        const auto& w = b.at(I);
        for (std::size_t p = 0; p < v.size(); ++p) v[p] -= w[p];
    }
    return out;
}

BoundaryForm operator*(double s, const BoundaryForm& a) {
    BoundaryForm out = a;
    for (auto& [I, v] : out.comps) {
        for (auto& z : v) z *= s;
    }
    return out;
}

BoundaryForm fourier_probe(const SlabGrid& grid, int k, const std::vector<int>& m, const MultiIndex& index) {
    BoundaryForm f(grid, grid.n, k);
    auto& v = f.at(index);
    for (std::size_t p = 0; p < v.size(); ++p) {
        const auto x = grid.lateral_point(p);
        double phase = 0.0;
        for (std::size_t a = 0; a < x.size(); ++a) phase += two_pi * m[a] * x[a] / grid.period;
        v[p] = std::polar(1.0, phase);
    }
    return f;
}

double flat_dtn(double xi, double thickness) { return -xi / std::tanh(xi * thickness); }

int default_threads() {
    if (const char* s = std::getenv("FORMLAB_THREADS")) {
        const int t = std::atoi(s);
        if (t > 0) return t;
    }
    return 1;
}

// ---------------------------------------------------------------------------
// discretized system

struct SlabSystem::Impl {
    struct Term {
        int out;
        int in;
        int lat_id;      // index into lat_derivs
        int normal;      // 0, 1 or 2 derivatives in x_n
        bool full;       // per node; otherwise per slice
        std::vector<cd> coef;
        std::vector<cd> slice_mean;  // lateral average per slice (preconditioner)
    };

    SlabGrid grid;
    int C = 0;
    std::vector<Deriv> lat_derivs;
    std::vector<std::vector<cd>> multipliers;
    std::vector<Term> terms;

    cd coef_at(const Term& t, int j, std::size_t lat) const {
        return t.full ? t.coef[uz(j) * grid.lateral_size() + lat] : t.coef[uz(j)];
    }

    using Field = std::vector<cd>;  // C blocks of node_count values

    std::size_t block() const { return grid.node_count(); }

    // Interior rows of A u; boundary rows zero.
    Field apply(const Field& u) const {
        const std::size_t L = grid.lateral_size();
        const int Nn = grid.normal;
        const double h = grid.hn();
        Field out(uz(C) * block(), cd(0.0));
        std::vector<Field> hat(uz(C));
        for (int c = 0; c < C; ++c) {
            hat[uz(c)].assign(u.begin() + static_cast<long>(uz(c) * block()), u.begin() + static_cast<long>(uz(c + 1) * block()));
            fft_forward(grid, hat[uz(c)]);
        }
        std::map<std::pair<int, int>, std::vector<const Term*>> groups;
        for (const auto& t : terms) groups[{t.in, t.lat_id}].push_back(&t);
        Field tmp(block());
        for (const auto& [key, ts] : groups) {
            const auto [in, lid] = key;
            const auto& mult = multipliers[uz(lid)];
            const auto& src = hat[uz(in)];
            for (std::size_t q = 0; q < block(); ++q) tmp[q] = src[q] * mult[q % L];
            fft_backward(grid, tmp);
            for (const Term* t : ts) {
                cd* o = out.data() + uz(t->out) * block();
                for (int j = 1; j < Nn; ++j) {
                    const std::size_t base = uz(j) * L;
                    for (std::size_t p = 0; p < L; ++p) {
                        const std::size_t q = base + p;
                        cd d;
                        switch (t->normal) {
                            case 0: d = tmp[q]; break;
                            case 1: d = (tmp[q + L] - tmp[q - L]) / (2.0 * h); break;
                            default: d = (tmp[q + L] - 2.0 * tmp[q] + tmp[q - L]) / (h * h); break;
                        }
                        o[q] += coef_at(*t, j, p) * d;
                    }
                }
            }
        }
        return out;
    }

    // Block tridiagonal rows for one Fourier mode; L_j, D_j, U_j for j = 1..Nn-1.
    void mode_blocks(std::size_t mode, std::vector<Eigen::MatrixXcd>& Lb, std::vector<Eigen::MatrixXcd>& Db,
                     std::vector<Eigen::MatrixXcd>& Ub) const {
        const int Nn = grid.normal;
        const double h = grid.hn();
        for (auto* v : {&Lb, &Db, &Ub}) v->assign(uz(Nn + 1), Eigen::MatrixXcd::Zero(C, C));
        for (const auto& t : terms) {
            const cd s = multipliers[uz(t.lat_id)][mode];
            if (s == 0.0) continue;
            for (int j = 1; j < Nn; ++j) {
                const cd a = t.slice_mean[uz(j)] * s;
                switch (t.normal) {
                    case 0: Db[uz(j)](t.out, t.in) += a; break;
                    case 1:
                        Ub[uz(j)](t.out, t.in) += a / (2.0 * h);
                        Lb[uz(j)](t.out, t.in) -= a / (2.0 * h);
                        break;
                    default:
                        Ub[uz(j)](t.out, t.in) += a / (h * h);
                        Lb[uz(j)](t.out, t.in) += a / (h * h);
                        Db[uz(j)](t.out, t.in) -= 2.0 * a / (h * h);
                        break;
                }
            }
        }
    }

    // Solves the mode-wise system for Fourier-space rhs rows (in place).
    // rhs[j] is a C-vector for j = 1..Nn-1.
    void thomas(std::size_t mode, std::vector<Eigen::VectorXcd>& rhs) const {
        const int Nn = grid.normal;
        std::vector<Eigen::MatrixXcd> Lb, Db, Ub;
        mode_blocks(mode, Lb, Db, Ub);
        std::vector<Eigen::PartialPivLU<Eigen::MatrixXcd>> lu(uz(Nn + 1));
        for (int j = 1; j < Nn; ++j) {
            if (j > 1) {
                const Eigen::MatrixXcd W = Lb[uz(j)] * lu[uz(j - 1)].inverse();
                Db[uz(j)] -= W * Ub[uz(j - 1)];
                rhs[uz(j)] -= W * rhs[uz(j - 1)];
            }
            lu[uz(j)].compute(Db[uz(j)]);
            const double det = std::abs(lu[uz(j)].determinant());
            const double scale = std::pow(Db[uz(j)].cwiseAbs().maxCoeff(), C);
            if (!(det > 1e-13 * scale)) {
                std::ostringstream os;
                os << "singular mode system at Fourier index " << mode << ", slice " << j
                   << " (indefinite operator or resonant omega^2)";
                throw NumericalFailure(os.str());
            }
        }
        rhs[uz(Nn - 1)] = lu[uz(Nn - 1)].solve(rhs[uz(Nn - 1)]);
        for (int j = Nn - 2; j >= 1; --j) rhs[uz(j)] = lu[uz(j)].solve(rhs[uz(j)] - Ub[uz(j)] * rhs[uz(j + 1)]);
    }

    // Mode-wise inverse of the laterally averaged operator on interior rows.
    Field precondition(const Field& r) const {
        const std::size_t L = grid.lateral_size();
        const int Nn = grid.normal;
        std::vector<Field> hat(uz(C));
        for (int c = 0; c < C; ++c) {
            hat[uz(c)].assign(r.begin() + static_cast<long>(uz(c) * block()), r.begin() + static_cast<long>(uz(c + 1) * block()));
            fft_forward(grid, hat[uz(c)]);
        }
        std::vector<double> mode_max(L, 0.0);
        for (int c = 0; c < C; ++c) {
            for (int j = 1; j < Nn; ++j) {
                for (std::size_t p = 0; p < L; ++p) mode_max[p] = std::max(mode_max[p], std::abs(hat[uz(c)][uz(j) * L + p]));
            }
        }
        // modes at roundoff level are left at zero
        const double cutoff = 1e-15 * *std::max_element(mode_max.begin(), mode_max.end());
        std::vector<Eigen::VectorXcd> rows(uz(Nn + 1), Eigen::VectorXcd::Zero(C));
        for (std::size_t p = 0; p < L; ++p) {
            if (mode_max[p] <= cutoff) {
                for (int c = 0; c < C; ++c) {
                    for (int j = 1; j < Nn; ++j) hat[uz(c)][uz(j) * L + p] = 0.0;
                }
                continue;
            }
            for (int j = 1; j < Nn; ++j) {
                for (int c = 0; c < C; ++c) rows[uz(j)](c) = hat[uz(c)][uz(j) * L + p];
            }
            thomas(p, rows);
            for (int j = 1; j < Nn; ++j) {
                for (int c = 0; c < C; ++c) hat[uz(c)][uz(j) * L + p] = rows[uz(j)](c);
            }
        }
        Field out(uz(C) * block(), cd(0.0));
        for (int c = 0; c < C; ++c) {
            auto& h = hat[uz(c)];
            for (std::size_t p = 0; p < L; ++p) h[p] = h[uz(Nn) * L + p] = 0.0;
            fft_backward(grid, h);
            std::copy(h.begin(), h.end(), out.begin() + static_cast<long>(uz(c) * block()));
        }
        return out;
    }
};

namespace {

using Field = SlabSystem::Impl::Field;

cd dot(const Field& a, const Field& b) {
    cd s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return s;
}

double norm(const Field& a) { return std::sqrt(std::real(dot(a, a))); }

void axpy(Field& y, cd a, const Field& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace

SlabSystem::SlabSystem(const OperatorBNF& op, const SlabGrid& grid, std::optional<MetricBNF> metric, double shift)
    : grid_(grid), k_(op.degree()), basis_(MultiIndex::all(op.dim(), op.degree())), metric_(std::move(metric)),
      impl_(std::make_unique<Impl>()) {
    grid_.validate();
    if (op.dim() != grid_.n) throw std::invalid_argument("SlabSystem: operator dimension does not match the grid");
    if (op.op().order() > 2) throw std::invalid_argument("SlabSystem: operator order exceeds two");
    if (op.has_mixed_normal_terms()) throw std::domain_error("SlabSystem: mixed normal derivatives are not supported");
    const int n = grid_.n;
    Impl& im = *impl_;
    im.grid = grid_;
    im.C = static_cast<int>(basis_.size());
    const std::size_t L = grid_.lateral_size();

    auto lat_id = [&](const Deriv& lat) {
        for (std::size_t i = 0; i < im.lat_derivs.size(); ++i) {
            if (im.lat_derivs[i] == lat) return static_cast<int>(i);
        }
        im.lat_derivs.push_back(lat);
        im.multipliers.push_back(lateral_multiplier(grid_, lat));
        return static_cast<int>(im.lat_derivs.size() - 1);
    };

    auto add_term = [&](int out, int in, const Deriv& d, const Expr& c) {
        Impl::Term t;
        t.out = out;
        t.in = in;
        Deriv lat;
        t.normal = 0;
        for (int a : d) {
            if (a == n) {
                ++t.normal;
            } else {
                lat.push_back(a);
            }
        }
        t.lat_id = lat_id(lat);
        std::vector<bool> dep(uz(n + 1), false);
        bool lateral_dep = false;
        for (int a = 1; a <= n; ++a) {
            dep[uz(a)] = depends_on(c, a);
            if (a < n && dep[uz(a)]) lateral_dep = true;
        }
        t.full = lateral_dep;
        const int Nn = grid_.normal;
        if (!lateral_dep) {
            t.coef.resize(uz(Nn + 1));
            for (int j = 0; j <= Nn; ++j) {
                std::vector<double> x(uz(n), 0.0);
                x[uz(n - 1)] = grid_.xn(j);
                t.coef[uz(j)] = (!dep[uz(n)] && j > 0) ? t.coef[0] : cd(evaluate(c, x));
            }
            t.slice_mean = t.coef;
        } else {
            lateral_const_ = false;
            t.coef.resize(grid_.node_count());
            t.slice_mean.assign(uz(Nn + 1), 0.0);
            std::map<std::vector<double>, double> cache;
            for (int j = 0; j <= Nn; ++j) {
                for (std::size_t p = 0; p < L; ++p) {
                    std::vector<double> x = grid_.lateral_point(p);
                    x.push_back(dep[uz(n)] ? grid_.xn(j) : 0.0);
                    for (int a = 1; a < n; ++a) {
                        if (!dep[uz(a)]) x[uz(a - 1)] = 0.0;
                    }
                    auto it = cache.find(x);
                    if (it == cache.end()) it = cache.emplace(x, evaluate(c, x)).first;
                    t.coef[uz(j) * L + p] = it->second;
                    t.slice_mean[uz(j)] += it->second / static_cast<double>(L);
                }
            }
        }
        im.terms.push_back(std::move(t));
    };

    for (const auto& [key, c] : op.op().terms()) add_term(key.out.rank(), key.in.rank(), key.deriv, c);
    if (shift != 0.0) {
        for (int r = 0; r < im.C; ++r) {
            Impl::Term t{r, r, lat_id({}), 0, false, std::vector<cd>(uz(grid_.normal + 1), -shift), {}};
            t.slice_mean = t.coef;
            im.terms.push_back(std::move(t));
        }
    }
}

SlabSystem::~SlabSystem() = default;

cd SlabSystem::coefficient(const MultiIndex& out, const MultiIndex& in, const Deriv& d, int slice, std::size_t lat) const {
    const int n = grid_.n;
    Deriv lateral;
    int normal = 0;
    for (int a : d) {
        if (a == n) {
            ++normal;
        } else {
            lateral.push_back(a);
        }
    }
    cd s = 0.0;
    for (const auto& t : impl_->terms) {
        if (t.out == out.rank() && t.in == in.rank() && t.normal == normal && impl_->lat_derivs[uz(t.lat_id)] == lateral)
            s += impl_->coef_at(t, slice, lat);
    }
    return s;
}

GridForm SlabSystem::apply(const GridForm& u) const {
    Field f(uz(components()) * grid_.node_count());
    for (int c = 0; c < components(); ++c) std::copy(u.at(basis_[uz(c)]).begin(), u.at(basis_[uz(c)]).end(), f.begin() + static_cast<long>(uz(c) * grid_.node_count()));
    const Field r = impl_->apply(f);
    GridForm out(grid_, k_);
    for (int c = 0; c < components(); ++c)
        std::copy(r.begin() + static_cast<long>(uz(c) * grid_.node_count()), r.begin() + static_cast<long>(uz(c + 1) * grid_.node_count()), out.at(basis_[uz(c)]).begin());
    return out;
}

GridForm SlabSystem::solve(const BoundaryForm& f, SolveReport* report, const SolverOptions& opts) const {
    if (f.dim != grid_.n || f.degree != k_) throw std::invalid_argument("solve_dirichlet: boundary data has the wrong shape");
    const Impl& im = *impl_;
    const std::size_t L = grid_.lateral_size();
    const std::size_t B = grid_.node_count();
    const int C = components();
    const int Nn = grid_.normal;

    // lift: f on slice 0
    Field lift(uz(C) * B, cd(0.0));
    for (int c = 0; c < C; ++c) std::copy(f.at(basis_[uz(c)]).begin(), f.at(basis_[uz(c)]).end(), lift.begin() + static_cast<long>(uz(c) * B));
    Field b = im.apply(lift);
    for (auto& v : b) v = -v;
    const double bnorm = norm(b);

    SolveReport rep;
    Field x(uz(C) * B, cd(0.0));
    if (bnorm > 0.0) {
        if (lateral_const_) {
            x = im.precondition(b);
            rep.direct = true;
        } else {
            // right-preconditioned BiCGSTAB with periodic true-residual restarts
            for (int restart = 0; restart < 4 && rep.iterations < opts.max_iter; ++restart) {
                Field r = b;
                axpy(r, -1.0, im.apply(x));
                if (norm(r) <= opts.tol * bnorm) break;
                const Field rhat = r;
                Field p(r.size(), 0.0), v(r.size(), 0.0);
                cd rho = 1.0, alpha = 1.0, omega = 1.0;
                while (rep.iterations < opts.max_iter) {
                    ++rep.iterations;
                    const cd rho_new = dot(rhat, r);
                    if (std::abs(rho_new) == 0.0) break;
                    const cd beta = (rho_new / rho) * (alpha / omega);
                    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
                    const Field ph = im.precondition(p);
                    v = im.apply(ph);
                    alpha = rho_new / dot(rhat, v);
                    Field s = r;
                    axpy(s, -alpha, v);
                    if (norm(s) <= 0.5 * opts.tol * bnorm) {
                        axpy(x, alpha, ph);
                        break;
                    }
                    const Field sh = im.precondition(s);
                    const Field t = im.apply(sh);
                    omega = dot(t, s) / dot(t, t);
                    axpy(x, alpha, ph);
                    axpy(x, omega, sh);
                    r = s;
                    axpy(r, -omega, t);
                    rho = rho_new;
                    if (norm(r) <= 0.5 * opts.tol * bnorm) break;
                }
            }
        }
        Field r = b;
        axpy(r, -1.0, im.apply(x));
        rep.residual = norm(r) / bnorm;
    }
    if (report) *report = rep;
    if (rep.residual > opts.tol) {
        std::ostringstream os;
        os << "solver did not converge: relative residual " << rep.residual << " after " << rep.iterations
           << " iterations (tolerance " << opts.tol << ")";
        throw NumericalFailure(os.str());
    }
    GridForm u(grid_, k_);
    for (int c = 0; c < C; ++c) {
        auto& dst = u.at(basis_[uz(c)]);
        std::copy(x.begin() + static_cast<long>(uz(c) * B), x.begin() + static_cast<long>(uz(c + 1) * B), dst.begin());
        std::copy(f.at(basis_[uz(c)]).begin(), f.at(basis_[uz(c)]).end(), dst.begin());
        for (std::size_t p = 0; p < L; ++p) dst[uz(Nn) * L + p] = 0.0;
    }
    return u;
}

std::unique_ptr<SlabSystem> assemble(const MetricBNF& g, int k, const SlabGrid& grid, std::optional<double> omega2) {
    if (k < 0 || k > g.dim()) throw std::invalid_argument("assemble: degree outside [0, n]");
    return std::make_unique<SlabSystem>(laplacian_dd(g, k), grid, g, omega2.value_or(0.0));
}

GridForm solve_dirichlet(const SlabSystem& sys, const BoundaryForm& f, SolveReport* report, const SolverOptions& opts) {
    return sys.solve(f, report, opts);
}

BoundaryForm normal_derivative(const GridForm& u) {
    const Stack st = boundary_stack(u);
    BoundaryForm out(u.grid, u.grid.n, u.degree);
    for (auto& [I, v] : out.comps) {
        std::vector<std::vector<cd>> sl;
        for (int j = 0; j < 5; ++j) sl.push_back(st[uz(j)].at(I));
        v = one_sided(sl, u.grid.hn());
    }
    return out;
}

BoundaryForm lambda_apply(const SlabSystem& sys, const BoundaryForm& f, SolveReport* report) {
    return normal_derivative(sys.solve(f, report));
}

NaturalData natural_data(const MetricBNF& g, const GridForm& u) {
    const SlabGrid& grid = u.grid;
    const int n = grid.n;
    const int k = u.degree;
    if (g.dim() != n) throw std::invalid_argument("natural_data: metric dimension does not match the grid");
    const Stack st = boundary_stack(u);

    NaturalData nd{pullback(grid, k, st[0]), BoundaryForm(grid, n - 1, n - k), BoundaryForm(grid, n - 1, n - k - 1),
                   BoundaryForm(grid, n - 1, k - 1)};
    nd.pull_star = pullback(grid, n - k, star_on_slice(g, grid, 0.0, k, st[0], false));
    if (k < n) {
        const CompMap du = exterior_at_boundary(grid, st, k);
        nd.pull_star_d = pullback(grid, n - k - 1, star_on_slice(g, grid, 0.0, k + 1, du, false));
    }
    if (k >= 1) {
        Stack su(5);
        for (int j = 0; j < 5; ++j) su[uz(j)] = star_on_slice(g, grid, grid.xn(j), k, st[uz(j)], false);
        CompMap dsu = exterior_at_boundary(grid, su, n - k);
        CompMap delta = star_on_slice(g, grid, 0.0, n - k + 1, dsu, false);
        if ((n * k + n + 1) % 2 != 0) {
            for (auto& [I, v] : delta) {
                for (auto& z : v) z = -z;
            }
        }
        nd.pull_delta = pullback(grid, k - 1, delta);
    }
    return nd;
}

BoundaryForm star_tangential(const MetricBNF& g, const BoundaryForm& lambda) {
    const SlabGrid& grid = lambda.grid;
    const int n = grid.n;
    if (lambda.dim != n) throw std::invalid_argument("star_tangential: expected an ambient form");
    CompMap tang;
    for (const auto& [I, v] : lambda.comps) {
        if (!I.contains(n)) tang[MultiIndex(n - 1, I.axes())] = v;
    }
    BoundaryForm out(grid, n - 1, n - 1 - lambda.degree);
    out.comps = star_on_slice(g, grid, 0.0, lambda.degree, tang, true);
    return out;
}

// ---------------------------------------------------------------------------

cd DtNEstimate::at(const std::vector<int>& m, const MultiIndex& in, const MultiIndex& out) const {
    auto it = values.find(DtNKey{m, in, out});
    if (it == values.end()) throw std::out_of_range("DtNEstimate: no value for the requested frequency/component");
    return it->second;
}

std::vector<std::vector<int>> DtNEstimate::frequencies() const {
    std::vector<std::vector<int>> out;
    for (const auto& [key, v] : values) {
        if (out.empty() || out.back() != key.m) out.push_back(key.m);
    }
    return out;
}

nlohmann::json DtNEstimate::metadata() const {
    return {{"grid", grid.to_json()},
            {"k", k},
            {"map", map == ProbedMap::Lambda ? "Lambda" : "Pi_tt"},
            {"normal_derivative", "inward d/dx_n at x_n = 0, fourth-order one-sided"},
            {"far_boundary", "u = 0 at x_n = T"},
            {"probe", "exp(2 pi i m.x'/P) dx_in, value = e^{-i x.xi} (P f)_out at x' = 0"},
            {"entries", values.size()}};
}

void DtNEstimate::write_csv(std::ostream& os) const {
    for (int a = 1; a < grid.n; ++a) os << "m" << a << ",";
    os << "in_index,out_index,re,im,grid_id\n";
    os << std::setprecision(17);
    for (const auto& [key, v] : values) {
        for (int ma : key.m) os << ma << ",";
        os << key.in.str() << "," << key.out.str() << "," << v.real() << "," << v.imag() << "," << grid.id() << "\n";
    }
}

DtNEstimate probe_symbol(const SlabSystem& sys, const std::vector<std::vector<int>>& freqs, const ProbeOptions& opts) {
    const SlabGrid& grid = sys.grid();
    const int n = grid.n;
    const int k = sys.degree();
    for (const auto& m : freqs) {
        if (static_cast<int>(m.size()) != n - 1) throw std::invalid_argument("probe_symbol: frequency has wrong length");
        bool zero = true;
        for (int ma : m) zero = zero && ma == 0;
        if (zero) throw std::invalid_argument("probe_symbol: frequency zero is not a valid probe");
        for (int ma : m) {
            if (2 * std::abs(ma) >= grid.lateral) throw std::invalid_argument("probe_symbol: frequency at or beyond Nyquist");
        }
    }
    std::vector<MultiIndex> inputs = opts.inputs;
    if (opts.map == ProbedMap::NaturalTT) {
        if (!sys.metric()) throw std::invalid_argument("probe_symbol: natural data needs the metric");
        if (k > n - 1) throw std::invalid_argument("probe_symbol: no tangential components for k = n");
        if (inputs.empty()) inputs = MultiIndex::all(n - 1, k);
    } else if (inputs.empty()) {
        inputs = sys.basis();
    }

    for (const auto& I : inputs) {
        const int want_dim = opts.map == ProbedMap::NaturalTT ? n - 1 : n;
        if (I.dim() != want_dim || I.degree() != k) throw std::invalid_argument("probe_symbol: input component has the wrong shape");
    }

    struct Task {
        std::vector<int> m;
        MultiIndex in;
    };
    std::vector<Task> tasks;
    for (const auto& m : freqs) {
        for (const auto& I : inputs) tasks.push_back({m, I});
    }
    DtNEstimate est;
    est.grid = grid;
    est.k = k;
    est.map = opts.map;
    std::mutex out_mutex;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;

    auto worker = [&] {
        while (true) {
            const std::size_t t = next++;
            if (t >= tasks.size()) return;
            try {
                const Task& task = tasks[t];
                const MultiIndex ambient = opts.map == ProbedMap::NaturalTT ? MultiIndex(n, task.in.axes()) : task.in;
                const BoundaryForm f = fourier_probe(grid, k, task.m, ambient);
                const GridForm u = sys.solve(f);
                const BoundaryForm out = opts.map == ProbedMap::Lambda ? normal_derivative(u) : natural_data(*sys.metric(), u).pull_star_d;
                const auto& phase = f.at(ambient);
                std::lock_guard lock(out_mutex);
                for (const auto& [J, v] : out.comps) {
                    DtNKey key{task.m, task.in, J};
                    est.values[key] = v[0] / phase[0];
                    if (opts.keep_local) {
                        std::vector<cd> loc(v.size());
                        for (std::size_t p = 0; p < v.size(); ++p) loc[p] = v[p] / phase[p];
                        est.local[key] = std::move(loc);
                    }
                }
            } catch (...) {
                std::lock_guard lock(out_mutex);
                if (!failure) failure = std::current_exception();
                next = tasks.size();
            }
        }
    };
    const int threads = std::max(1, std::min<int>(opts.threads > 0 ? opts.threads : default_threads(), static_cast<int>(tasks.size())));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    return est;
}

}  // namespace formlab

#include "formlab/reconstruct.hpp"

#include "formlab/symbol.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace formlab {

namespace {

double lattice_norm(const std::vector<int>& m) {
    double s = 0.0;
    for (int a : m) s += static_cast<double>(a) * a;
    return std::sqrt(s);
}

std::vector<double> physical_xi(const SlabGrid& g, const std::vector<int>& m) {
    std::vector<double> xi;
    for (int a : m) xi.push_back(2.0 * std::numbers::pi * a / g.period);
    return xi;
}

// Least squares with a column-pivoting QR; returns the solution and rank.
template <class Mat, class Vec>
auto least_squares(const Mat& A, const Vec& b, Eigen::Index* rank = nullptr) {
    Eigen::ColPivHouseholderQR<Mat> qr(A);
    qr.setThreshold(1e-10);
    if (rank) *rank = qr.rank();
    return Eigen::Matrix<typename Mat::Scalar, Eigen::Dynamic, 1>(qr.solve(b));
}

Eigen::MatrixXd boundary_star_matrix(const Eigen::MatrixXd& h, int k) {
    const int m = static_cast<int>(h.rows());
    Matrix<double> hm(static_cast<std::size_t>(m), std::vector<double>(static_cast<std::size_t>(m)));
    for (int r = 0; r < m; ++r) {
        for (int c = 0; c < m; ++c) hm[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = 0.5 * (h(r, c) + h(c, r));
    }
    const PointMetric<double> pm(std::move(hm));
    const auto in = MultiIndex::all(m, k);
    const auto out = MultiIndex::all(m, m - k);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out.size()), static_cast<Eigen::Index>(in.size()));
    for (const auto& I : in) {
        const FiberForm<double> st = boundary_hodge_star(pm, FiberForm<double>::basis(I));
        for (const auto& [J, v] : st.terms()) s(J.rank(), I.rank()) = v;
    }
    return s;
}

bool is_spd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    return es.eigenvalues().minCoeff() > 0.0;
}

}  // namespace

bool FrequencyWindow::contains(const SlabGrid& g, const std::vector<int>& m) const {
    const double r = lattice_norm(m);
    return r >= lo - 1e-12 && r <= upper(g) + 1e-12;
}

std::vector<DirectionSamples> group_by_direction(const SlabGrid& g, const std::vector<std::pair<std::vector<int>, cd>>& samples) {
    std::vector<DirectionSamples> out;
    for (const auto& [m, v] : samples) {
        int d = 0;
        for (int a : m) d = std::gcd(d, std::abs(a));
        if (d == 0) throw std::invalid_argument("group_by_direction: zero frequency");
        std::vector<int> dir;
        for (int a : m) dir.push_back(a / d);
        auto it = std::find_if(out.begin(), out.end(), [&](const DirectionSamples& s) { return s.direction == dir; });
        if (it == out.end()) {
            out.push_back({dir, {}, {}});
            it = out.end() - 1;
        }
        it->t.push_back(g.xi_norm(m));
        it->values.push_back(v);
    }
    return out;
}

double remove_coth(double v, double thickness) {
    if (!(v > 1.0 / thickness)) return 0.0;
    double x = v;
    for (int it = 0; it < 60; ++it) {
        const double th = std::tanh(x * thickness);
        const double f = x / th - v;
        const double df = 1.0 / th - x * thickness * (1.0 - th * th) / (th * th);
        const double step = f / df;
        x -= step;
        if (std::abs(step) < 1e-15 * std::max(1.0, x)) break;
    }
    return x;
}

QuadraticFit fit_cometric(const SlabGrid& g, const std::vector<std::pair<std::vector<int>, cd>>& samples, bool coth_correction) {
    const int m = g.n - 1;
    const auto groups = group_by_direction(g, samples);
    std::vector<std::pair<Eigen::VectorXd, double>> slopes;  // unit direction, slope
    for (const auto& grp : groups) {
        const std::size_t s = grp.t.size();
        const int params = static_cast<int>(std::min<std::size_t>(4, s));
        Eigen::MatrixXd A(static_cast<Eigen::Index>(s), params);
        Eigen::VectorXd b(static_cast<Eigen::Index>(s));
        for (std::size_t i = 0; i < s; ++i) {
            const double t = grp.t[i];
            const double v = std::abs(grp.values[i]);
            b(static_cast<Eigen::Index>(i)) = coth_correction ? remove_coth(v, g.thickness) : v;
            // principal, normal-grid dispersion ~ t^3 h^2, then lower order
            const double basis[4] = {t, t * t * t, 1.0, 1.0 / t};
            for (int p = 0; p < params; ++p) A(static_cast<Eigen::Index>(i), p) = basis[p];
        }
        const Eigen::VectorXd c = least_squares(A, b);
        Eigen::VectorXd d(m);
        for (int a = 0; a < m; ++a) d(a) = grp.direction[static_cast<std::size_t>(a)];
        slopes.emplace_back(d.normalized(), c(0));
    }
    const int unknowns = m * (m + 1) / 2;
    Eigen::MatrixXd A(static_cast<Eigen::Index>(slopes.size()), unknowns);
    Eigen::VectorXd b(static_cast<Eigen::Index>(slopes.size()));
    for (std::size_t r = 0; r < slopes.size(); ++r) {
        const auto& [d, a] = slopes[r];
        int col = 0;
        for (int i = 0; i < m; ++i) {
            for (int j = i; j < m; ++j) A(static_cast<Eigen::Index>(r), col++) = (i == j ? 1.0 : 2.0) * d(i) * d(j);
        }
        b(static_cast<Eigen::Index>(r)) = a * a;
    }
    Eigen::Index rank = 0;
    const Eigen::VectorXd q = slopes.empty() ? Eigen::VectorXd() : least_squares(A, b, &rank);
    if (slopes.empty() || rank < unknowns) {
        std::ostringstream os;
        os << "rank-deficient frequency set: " << slopes.size() << " directions determine rank " << rank << " of " << unknowns;
        throw std::domain_error(os.str());
    }
    QuadraticFit out;
    out.directions = static_cast<int>(slopes.size());
    out.cometric.resize(m, m);
    int col = 0;
    for (int i = 0; i < m; ++i) {
        for (int j = i; j < m; ++j) out.cometric(i, j) = out.cometric(j, i) = q(col++);
    }
    double acc = 0.0;
    for (const auto& [d, a] : slopes) {
        const double pred = std::sqrt(std::max(0.0, d.dot(out.cometric * d)));
        acc += std::pow((pred - a) / a, 2);
    }
    out.residual = std::sqrt(acc / static_cast<double>(slopes.size()));
    return out;
}

BoundaryMetricFit fit_boundary_metric(const DtNEstimate& est, const MultiIndex& component, const FrequencyWindow& window) {
    const SlabGrid& g = est.grid;
    if (est.values.empty()) throw std::invalid_argument("fit_boundary_metric: empty estimate");
    BoundaryMetricFit out;
    out.window = window;
    out.component = component.dim() == 0 ? est.values.begin()->first.in : component;
    std::vector<std::vector<int>> freqs;
    bool local = true;
    for (const auto& m : est.frequencies()) {
        if (!window.contains(g, m)) continue;
        const DtNKey key{m, out.component, out.component};
        if (!est.values.count(key)) continue;
        freqs.push_back(m);
        local = local && est.local.count(key);
    }
    const std::size_t npts = local && !freqs.empty() ? g.lateral_size() : 1;
    for (std::size_t p = 0; p < npts; ++p) {
        std::vector<std::pair<std::vector<int>, cd>> samples;
        for (const auto& m : freqs) {
            const DtNKey key{m, out.component, out.component};
            samples.emplace_back(m, local ? est.local.at(key)[p] : est.values.at(key));
        }
        const QuadraticFit q = fit_cometric(g, samples, true);
        if (!is_spd(q.cometric)) throw std::domain_error("fit_boundary_metric: fitted quadratic form is not positive definite");
        out.points.push_back(p);
        out.h0.push_back(q.cometric.inverse());
        out.residuals.push_back(q.residual);
    }
    return out;
}

AlphaResult recover_alpha(const DtNEstimate& est, int k, const MultiIndex& I0, const MultiIndex& J0, const FrequencyWindow& window) {
    const SlabGrid& g = est.grid;
    const int n = g.n;
    if (2 * k == n - 2) throw std::domain_error("recover_alpha: excluded case k = (n-2)/2");
    if (k == n) throw std::domain_error("recover_alpha: excluded case k = n");
    if (k < 0 || k > n) throw std::invalid_argument("recover_alpha: k outside [0, n]");
    if (I0.dim() != n - 1 || I0.degree() != k || J0.dim() != n - 1 || J0.degree() != n - 1 - k)
        throw std::invalid_argument("recover_alpha: components must be boundary indices of degree k and n-1-k");
    std::vector<std::pair<std::vector<int>, cd>> samples;
    double peak = 0.0, scale = 0.0;
    for (const auto& [key, v] : est.values) {
        scale = std::max(scale, std::abs(v) / g.xi_norm(key.m));
        if (key.in != I0 || key.out != J0 || !window.contains(g, key.m)) continue;
        samples.emplace_back(key.m, v);
        peak = std::max(peak, std::abs(v) / g.xi_norm(key.m));
    }
    if (samples.empty()) throw std::invalid_argument("recover_alpha: no samples of the chosen component in the window");
    if (!(peak > 1e-8 * std::max(scale, 1e-300))) throw std::domain_error("recover_alpha: chosen component vanishes");
    AlphaResult out;
    const double expo = k - (n - 2) / 2.0;
    auto corrected = samples;
    // refit after dividing out coth(|xi|_h T) with the current h
    for (int pass = 0; pass < 6; ++pass) {
        const QuadraticFit q = fit_cometric(g, corrected, false);
        if (!is_spd(q.cometric)) throw std::domain_error("recover_alpha: fitted g0 is not positive definite");
        out.g0 = q.cometric;
        out.residual = q.residual;
        const Eigen::MatrixXd star0 = boundary_star_matrix(q.cometric.inverse(), k);
        const double c = std::abs(star0(J0.rank(), I0.rank()));
        if (!(c > 1e-12)) throw std::domain_error("recover_alpha: chosen component vanishes for g0");
        out.alpha = std::pow(c, -1.0 / expo);
        out.h = (out.alpha * out.g0).inverse();
        const Eigen::MatrixXd hinv = out.h.inverse();
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto xi = physical_xi(g, samples[i].first);
            const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(xi.data(), n - 1);
            const double x = std::sqrt(v.dot(hinv * v));
            corrected[i].second = samples[i].second * std::tanh(x * g.thickness);
        }
    }
    out.star = boundary_star_matrix(out.h, k);
    return out;
}

double perturbation_gain(int n, int k, int l, bool normal) {
    const ConformalTerms ct = conformal_difference(n, k, l, normal);
    if (!ct.sigma1_zero || !ct.structure_ok) throw std::logic_error("perturbation_gain: conformal difference has unexpected structure");
    auto ctx = flat_context(n);
    using E = SymbolElem<Rational>;
    FamilyRhs<Rational> rhs{CRational(ct.ktilde) * E::rho_power(ctx, 2), E(ctx), CRational(Rational(0), ct.f_over_i),
                            E::constant(ctx, CRational(ct.sigma0))};
    const auto fam = family_reduce(ctx, l, rhs, -1);
    std::vector<double> x(static_cast<std::size_t>(n), 0.0), xi(static_cast<std::size_t>(n - 1), 0.0);
    xi[0] = 1.0;
    return -fam.principal.back().evaluate(x, xi).real();
}

PerturbationFit recover_perturbation(const DtNEstimate& est2, const DtNEstimate& est1, int l, int n, int k, const PerturbationOptions& opts) {
    const SlabGrid& g = est1.grid;
    if (est2.grid.id() != g.id()) throw std::invalid_argument("recover_perturbation: estimates are on different grids");
    if (g.n != n || est1.k != k || est2.k != k) throw std::invalid_argument("recover_perturbation: n or k does not match the estimates");
    if (est1.frequencies() != est2.frequencies()) throw std::invalid_argument("recover_perturbation: frequency sets differ");
    if (l < 1) throw std::invalid_argument("recover_perturbation: l must be >= 1");

    PerturbationFit out;
    out.l = l;
    out.window = opts.window;
    bool normal = opts.normal.value_or(k >= 1 && 2 * k != n + 1);
    if (opts.component.dim() != 0) normal = opts.component.contains(n);
    if (2 * k == n + 1 && normal) throw std::invalid_argument("recover_perturbation: k = (n+1)/2 requires a component I with n not in I");
    if (2 * k == n - 1 && !normal) throw std::invalid_argument("recover_perturbation: k = (n-1)/2 requires a component I with n in I");
    out.component = opts.component.dim() != 0 ? opts.component : conformal_index(n, k, normal);
    out.gain = perturbation_gain(n, k, l, normal);

    const Eigen::MatrixXd R = opts.reference.value_or(Eigen::MatrixXd::Identity(n - 1, n - 1));
    auto t_of = [&](const std::vector<int>& m) {
        const auto xi = physical_xi(g, m);
        Eigen::VectorXd v(n - 1);
        for (int a = 0; a < n - 1; ++a) v(a) = xi[static_cast<std::size_t>(a)];
        return std::sqrt(v.dot(R * v));
    };

    const MultiIndex& I = out.component;
    std::vector<std::vector<int>> freqs;
    bool local = true;
    double scale = 0.0;
    for (const auto& m : est1.frequencies()) {
        const DtNKey key{m, I, I};
        if (!est1.values.count(key) || !est2.values.count(key)) throw std::invalid_argument("recover_perturbation: component not probed");
        scale = std::max(scale, std::abs(est1.values.at(key)));
        if (!opts.window.contains(g, m)) continue;
        freqs.push_back(m);
        local = local && est1.local.count(key) && est2.local.count(key);
    }
    if (freqs.size() < 2) throw std::invalid_argument("recover_perturbation: fewer than two frequencies in the window");
    const std::size_t npts = local ? g.lateral_size() : 1;
    // diff[f][p]
    std::vector<std::vector<cd>> diff(freqs.size(), std::vector<cd>(npts));
    double dmax = 0.0;
    for (std::size_t f = 0; f < freqs.size(); ++f) {
        const DtNKey key{freqs[f], I, I};
        for (std::size_t p = 0; p < npts; ++p) {
            diff[f][p] = local ? est2.local.at(key)[p] - est1.local.at(key)[p] : est2.values.at(key) - est1.values.at(key);
            dmax = std::max(dmax, std::abs(diff[f][p]));
        }
    }
    out.noise_floor = 1e-8 * scale;
    for (std::size_t p = 0; p < npts; ++p) out.points.push_back(p);
    if (dmax <= out.noise_floor) {
        out.converted = true;
        out.slope = std::nan("");
        out.message = "difference below the noise floor";
        out.lambda.assign(npts, 0.0);
        out.amplitude_imag.assign(npts, 0.0);
        return out;
    }

    // decay exponent from the rms over points
    {
        Eigen::MatrixXd A(static_cast<Eigen::Index>(freqs.size()), 2);
        Eigen::VectorXd b(static_cast<Eigen::Index>(freqs.size()));
        for (std::size_t f = 0; f < freqs.size(); ++f) {
            double acc = 0.0;
            for (const cd& z : diff[f]) acc += std::norm(z);
            A(static_cast<Eigen::Index>(f), 0) = std::log(t_of(freqs[f]));
            A(static_cast<Eigen::Index>(f), 1) = 1.0;
            b(static_cast<Eigen::Index>(f)) = 0.5 * std::log(acc / static_cast<double>(npts));
        }
        out.slope = least_squares(A, b)(0);
    }
    if (std::abs(out.slope - (1 - l)) > opts.slope_tolerance) {
        std::ostringstream os;
        os << "exponent mismatch: fitted decay " << out.slope << ", expected " << 1 - l;
        out.message = os.str();
        return out;
    }

    for (std::size_t p = 0; p < npts; ++p) {
        std::vector<std::pair<std::vector<int>, cd>> samples;
        for (std::size_t f = 0; f < freqs.size(); ++f) samples.emplace_back(freqs[f], diff[f][p]);
        const auto groups = group_by_direction(g, samples);
        cd amp = 0.0;
        for (const auto& grp : groups) {
            const std::size_t s = grp.t.size();
            // principal, subprincipal, normal-grid dispersion, far-boundary reflection
            const int params = static_cast<int>(std::min<std::size_t>(4, s));
            Eigen::MatrixXcd A(static_cast<Eigen::Index>(s), params);
            Eigen::VectorXcd b(static_cast<Eigen::Index>(s));
            for (std::size_t i = 0; i < s; ++i) {
                std::vector<int> m;
                for (int a : grp.direction) m.push_back(a);
                const double t = grp.t[i] * t_of(m) / g.xi_norm(m);
                const double basis[4] = {std::pow(t, 1 - l), std::pow(t, -l), std::pow(t, 3 - l), t * std::exp(-2.0 * t * g.thickness)};
                for (int q = 0; q < params; ++q) A(static_cast<Eigen::Index>(i), q) = basis[q];
                b(static_cast<Eigen::Index>(i)) = grp.values[i];
            }
            amp += least_squares(A, b)(0);
        }
        amp /= static_cast<double>(groups.size());
        out.lambda.push_back(amp.real() / out.gain);
        out.amplitude_imag.push_back(amp.imag());
    }
    out.converted = true;
    return out;
}

nlohmann::json RecoveredMetric::to_json() const {
    nlohmann::json j;
    nlohmann::json pts = nlohmann::json::array();
    for (std::size_t i = 0; i < metric.points.size(); ++i) {
        nlohmann::json h = nlohmann::json::array();
        for (Eigen::Index r = 0; r < metric.h0[i].rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < metric.h0[i].cols(); ++c) row.push_back(metric.h0[i](r, c));
            h.push_back(row);
        }
        pts.push_back({{"point", metric.points[i]}, {"h0", h}, {"fit_residual", metric.residuals[i]}});
    }
    j["boundary_metric"] = {{"component", metric.component.str()},
                            {"window", {metric.window.lo, metric.window.hi}},
                            {"samples", pts}};
    if (perturbation) {
        const auto& p = *perturbation;
        nlohmann::json lam = nlohmann::json::array();
        for (std::size_t i = 0; i < p.points.size(); ++i)
            lam.push_back({{"point", p.points[i]}, {"lambda", p.lambda.empty() ? 0.0 : p.lambda[i]}, {"amplitude_imag", p.amplitude_imag.empty() ? 0.0 : p.amplitude_imag[i]}});
        j["perturbation"] = {{"l", p.l},
                             {"converted", p.converted},
                             {"message", p.message},
                             {"slope", std::isnan(p.slope) ? nlohmann::json(nullptr) : nlohmann::json(p.slope)},
                             {"expected_slope", 1 - p.l},
                             {"gain", p.gain},
                             {"noise_floor", p.noise_floor},
                             {"component", p.component.str()},
                             {"window", {p.window.lo, p.window.hi}},
                             {"samples", lam}};
    }
    j["verdicts"] = verdicts;
    return j;
}

}  // namespace formlab

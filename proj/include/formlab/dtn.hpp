#pragma once

// Dirichlet problem for the k-form Laplacian on the slab T^{n-1} x [0, T]
// and the resulting Dirichlet-to-Neumann map. Lateral derivatives are
// Fourier-spectral, normal derivatives second-order centered differences;
// the boundary normal derivative uses a fourth-order one-sided stencil.
// x_n = 0 is the probed boundary, x_n = T carries zero Dirichlet data, and
// d_n is the inward normal derivative (flat DtN eigenvalues are negative).

#include "formlab/geometry.hpp"

#include <nlohmann/json.hpp>

#include <complex>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace formlab {

using cd = std::complex<double>;

class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SlabGrid {
    int n = 3;
    int lateral = 64;        // nodes per periodic axis
    int normal = 64;         // intervals along x_n (nodes 0..normal)
    double thickness = 1.0;
    double period = 1.0;     // lateral period on every axis

    SlabGrid() = default;
    SlabGrid(int n, int lateral, int normal, double thickness, double period = 1.0);

    /// Throws std::invalid_argument unless N' >= 8, N_n >= 8, T > 0.
    void validate() const;
    int lateral_axes() const { return n - 1; }
    std::size_t lateral_size() const;
    std::size_t node_count() const { return lateral_size() * static_cast<std::size_t>(normal + 1); }
    double hn() const { return thickness / normal; }
    double hl() const { return period / lateral; }
    double xn(int j) const { return j * hn(); }
    /// Lateral coordinates of a lateral node (row-major, axis 1 slowest).
    std::vector<double> lateral_point(std::size_t idx) const;
    /// Signed lateral mode numbers of a lateral node index in Fourier space.
    std::vector<int> mode_of(std::size_t idx) const;
    /// Fourier index of a mode vector (modes reduced mod N').
    std::size_t index_of_mode(const std::vector<int>& m) const;
    /// |2 pi m / period|.
    double xi_norm(const std::vector<int>& m) const;
    std::string id() const;
    nlohmann::json to_json() const;
};

/// Complex k-form components on every grid node; values laid out as
/// slice j (0..normal) major, lateral index minor.
struct GridForm {
    SlabGrid grid;
    int degree = 0;
    std::map<MultiIndex, std::vector<cd>> comps;

    GridForm(const SlabGrid& g, int k);
    std::vector<cd>& at(const MultiIndex& i) { return comps.at(i); }
    const std::vector<cd>& at(const MultiIndex& i) const { return comps.at(i); }
    cd value(const MultiIndex& i, int slice, std::size_t lat) const {
        return comps.at(i)[static_cast<std::size_t>(slice) * grid.lateral_size() + lat];
    }
};

/// Form components on the boundary slice. dim = n for restrictions of
/// ambient forms, n-1 for pullbacks.
struct BoundaryForm {
    SlabGrid grid;
    int dim = 0;
    int degree = 0;
    std::map<MultiIndex, std::vector<cd>> comps;

    BoundaryForm(const SlabGrid& g, int dim, int k);
    std::vector<cd>& at(const MultiIndex& i) { return comps.at(i); }
    const std::vector<cd>& at(const MultiIndex& i) const { return comps.at(i); }
    double max_abs() const;
    friend BoundaryForm operator-(const BoundaryForm& a, const BoundaryForm& b);
    friend BoundaryForm operator*(double s, const BoundaryForm& a);
};

/// e^{2 pi i m.x'/P} dx_I on the boundary (I in dimension n).
BoundaryForm fourier_probe(const SlabGrid& grid, int k, const std::vector<int>& m, const MultiIndex& index);

struct SolverOptions {
    double tol = 1e-10;
    int max_iter = 500;
};

struct SolveReport {
    int iterations = 0;
    double residual = 0.0;   // ||A u - b|| / ||b|| on interior rows
    bool direct = false;     // mode-wise direct solve (laterally constant)
};

/// Discretized component system (Delta - omega^2) u on interior slices with
/// Dirichlet rows at x_n = 0 and x_n = T. Immutable once built.
class SlabSystem {
public:
    /// Discretizes op - shift on the grid; metric is kept for natural data.
    SlabSystem(const OperatorBNF& op, const SlabGrid& grid, std::optional<MetricBNF> metric = std::nullopt, double shift = 0.0);
    ~SlabSystem();
    SlabSystem(const SlabSystem&) = delete;
    SlabSystem& operator=(const SlabSystem&) = delete;

    const SlabGrid& grid() const { return grid_; }
    int degree() const { return k_; }
    int components() const { return static_cast<int>(basis_.size()); }
    const std::vector<MultiIndex>& basis() const { return basis_; }
    const std::optional<MetricBNF>& metric() const { return metric_; }
    bool laterally_constant() const { return lateral_const_; }
    /// Coefficient of d^deriv from out <- in at a node, or 0.
    cd coefficient(const MultiIndex& out, const MultiIndex& in, const Deriv& d, int slice, std::size_t lat) const;

    /// Interior residual A u for a full field u (boundary slices included).
    GridForm apply(const GridForm& u) const;

    GridForm solve(const BoundaryForm& f, SolveReport* report = nullptr, const SolverOptions& opts = {}) const;

    struct Impl;

private:
    SlabGrid grid_;
    int k_;
    std::vector<MultiIndex> basis_;
    std::optional<MetricBNF> metric_;
    bool lateral_const_ = true;
    std::unique_ptr<Impl> impl_;
};

/// Builds the component system of the Hodge Laplacian of g (optionally
/// shifted by -omega2).
std::unique_ptr<SlabSystem> assemble(const MetricBNF& g, int k, const SlabGrid& grid, std::optional<double> omega2 = std::nullopt);

/// Solves Delta u = 0 with u = f at x_n = 0 and u = 0 at x_n = T. Throws
/// NumericalFailure when the solver does not reach the tolerance.
GridForm solve_dirichlet(const SlabSystem& sys, const BoundaryForm& f, SolveReport* report = nullptr, const SolverOptions& opts = {});

/// Fourth-order one-sided d_n of every component at x_n = 0.
BoundaryForm normal_derivative(const GridForm& u);

/// Lambda_g f = (d_n u)|_{x_n = 0} for the harmonic extension u of f.
BoundaryForm lambda_apply(const SlabSystem& sys, const BoundaryForm& f, SolveReport* report = nullptr);

struct NaturalData {
    BoundaryForm pull;          // i^* u
    BoundaryForm pull_star;     // i^* * u
    BoundaryForm pull_star_d;   // i^* * du
    BoundaryForm pull_delta;    // i^* delta u
};

/// Natural Dirichlet and Neumann data of a grid solution (metric needed for
/// the stars; derivatives as in the solver).
NaturalData natural_data(const MetricBNF& g, const GridForm& u);

/// *_b pi_t (lambda): tangential components viewed on the boundary, then the
/// boundary star of h(x', 0).
BoundaryForm star_tangential(const MetricBNF& g, const BoundaryForm& lambda);

enum class ProbedMap { Lambda, NaturalTT };

struct DtNKey {
    std::vector<int> m;
    MultiIndex in;
    MultiIndex out;
    auto operator<=>(const DtNKey&) const = default;
    bool operator==(const DtNKey&) const = default;
};

/// Symbol estimates e^{-i x.xi} P(e^{i x.xi} dx_in)_out.
struct DtNEstimate {
    SlabGrid grid;
    int k = 0;
    ProbedMap map = ProbedMap::Lambda;
    std::map<DtNKey, cd> values;                 // at the lateral origin
    std::map<DtNKey, std::vector<cd>> local;     // at every boundary node (optional)

    cd at(const std::vector<int>& m, const MultiIndex& in, const MultiIndex& out) const;
    std::vector<std::vector<int>> frequencies() const;
    nlohmann::json metadata() const;
    /// m1..m_{n-1}, in_index, out_index, re, im, grid_id
    void write_csv(std::ostream& os) const;
};

struct ProbeOptions {
    ProbedMap map = ProbedMap::Lambda;
    /// Input components (default: all basis indices; for NaturalTT the
    /// tangential ones, as boundary indices in dimension n-1).
    std::vector<MultiIndex> inputs;
    bool keep_local = false;
    /// Worker threads (0: FORMLAB_THREADS or 1).
    int threads = 0;
};

/// Probes the DtN (or natural tangential-tangential) map at each nonzero
/// integer frequency. Throws std::invalid_argument for m = 0.
DtNEstimate probe_symbol(const SlabSystem& sys, const std::vector<std::vector<int>>& freqs, const ProbeOptions& opts = {});

/// -|xi| coth(|xi| T), the flat slab DtN eigenvalue.
double flat_dtn(double xi, double thickness);

/// Worker count from FORMLAB_THREADS (at least 1).
int default_threads();

}  // namespace formlab

#pragma once

// Boundary metric recovery from probed DtN symbols: h at the boundary from
// the principal symbol, the star normalization alpha from the natural map,
// and the leading conformal Taylor coefficient from the decay of the
// difference of two DtN symbols.

#include "formlab/dtn.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <optional>
#include <vector>

namespace formlab {

/// Lattice-norm window |m| in [lo, hi]; hi = 0 means N'/4.
struct FrequencyWindow {
    double lo = 4.0;
    double hi = 0.0;
    double upper(const SlabGrid& g) const { return hi > 0.0 ? hi : g.lateral / 4.0; }
    bool contains(const SlabGrid& g, const std::vector<int>& m) const;
};

/// Samples (xi, value) along one lattice direction.
struct DirectionSamples {
    std::vector<int> direction;          // primitive lattice vector
    std::vector<double> t;               // Euclidean |xi|
    std::vector<cd> values;
};

/// Groups frequencies by primitive direction.
std::vector<DirectionSamples> group_by_direction(const SlabGrid& g, const std::vector<std::pair<std::vector<int>, cd>>& samples);

/// x with x coth(x T) = v (v >= 1/T); the principal part of a flat-slab
/// DtN magnitude.
double remove_coth(double v, double thickness);

struct QuadraticFit {
    Eigen::MatrixXd cometric;     // Q with Q(xi) ~ |value|^2 at high frequency
    double residual = 0.0;        // rms relative misfit of the slopes
    int directions = 0;
};

/// Fits |value(xi)| ~ sqrt(Q(xi)) + b + c/|xi| along each direction, then the
/// slopes squared against the quadratic form Q on unit directions.
/// Throws std::domain_error when the directions do not determine Q.
QuadraticFit fit_cometric(const SlabGrid& g, const std::vector<std::pair<std::vector<int>, cd>>& samples, bool coth_correction);

struct BoundaryMetricFit {
    std::vector<std::size_t> points;          // lateral node indices (0 = origin)
    std::vector<Eigen::MatrixXd> h0;          // metric at each point
    std::vector<double> residuals;
    MultiIndex component;
    FrequencyWindow window;
};

/// h at the boundary from |est(m, I, I)|. Uses per-node local estimates when
/// present. Throws std::domain_error for rank-deficient frequency sets.
BoundaryMetricFit fit_boundary_metric(const DtNEstimate& est, const MultiIndex& component = {}, const FrequencyWindow& window = {});

struct AlphaResult {
    double alpha = 0.0;
    Eigen::MatrixXd g0;      // cometric read off the chosen component
    Eigen::MatrixXd h;       // recovered boundary metric (alpha g0)^{-1}
    Eigen::MatrixXd star;    // boundary star on k-forms, rows/cols by rank
    double residual = 0.0;
};

/// alpha with g = alpha g0 from the natural-map component (J0 <- I0). Throws
/// std::domain_error for k = (n-2)/2, k = n and for a vanishing component.
/// k = (n-1)/2 is allowed here; only the Taylor-series step excludes it.
AlphaResult recover_alpha(const DtNEstimate& est, int k, const MultiIndex& I0, const MultiIndex& J0, const FrequencyWindow& window = {});

/// Lambda_2 - Lambda_1 ~ gain * lambda * |xi|^{1-l} at x_n = 0 for the conformal
/// family against the flat metric (I normal or tangential).
double perturbation_gain(int n, int k, int l, bool normal);

struct PerturbationOptions {
    FrequencyWindow window;
    MultiIndex component;                       // default: conformal_index
    std::optional<bool> normal;                 // default: the admissible class
    double slope_tolerance = 0.3;
    /// Cometric of the reference metric at the boundary (default identity).
    std::optional<Eigen::MatrixXd> reference;
};

struct PerturbationFit {
    int l = 0;
    bool converted = false;
    std::string message;
    double slope = 0.0;                         // fitted decay exponent
    double gain = 0.0;
    std::vector<std::size_t> points;
    std::vector<double> lambda;                 // lambda-hat per point
    std::vector<double> amplitude_imag;         // Im of the fitted amplitude
    double noise_floor = 0.0;
    MultiIndex component;
    FrequencyWindow window;
};

PerturbationFit recover_perturbation(const DtNEstimate& est2, const DtNEstimate& est1, int l, int n, int k,
                                     const PerturbationOptions& opts = {});

struct RecoveredMetric {
    BoundaryMetricFit metric;
    std::optional<PerturbationFit> perturbation;
    nlohmann::json verdicts = nlohmann::json::object();
    nlohmann::json to_json() const;
};

}  // namespace formlab

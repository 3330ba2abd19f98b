#pragma once

// Config-driven front end: one mode per run, CSV tables and a JSON verdict
// file in the output directory, exit code from the verdicts.

#include "formlab/geometry.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace formlab::cli {

enum class Mode { VerifySymbolic, Solve, Probe, Reconstruct, GreensCheck };

Mode parse_mode(const std::string& s);
std::string mode_name(Mode m);

/// Exit codes of run().
enum Exit : int { Pass = 0, ToleranceFail = 1, ConfigInvalid = 2, NumericalFail = 3 };

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    Mode mode = Mode::VerifySymbolic;
    int n = 3;
    int k = 0;
    int l = 1;
    /// Metric under test (flat when absent); reference for reconstruct.
    std::optional<MetricBNF> metric;
    std::optional<MetricBNF> reference;
    int lateral = 32;
    int normal = 32;
    double thickness = 1.0;
    double period = 1.0;
    std::vector<std::vector<int>> frequencies;   // empty: generated up to freq_max
    int freq_max = 0;                            // 0: N'/4
    std::optional<double> omega2;
    /// "normal" / "tangential"; reconstruct picks the admissible class if empty.
    std::string component_class;
    /// Input components for solve/probe (all when empty).
    std::vector<std::vector<int>> components;
    /// reconstruct: expected lambda(x') as an expression.
    std::optional<std::string> lambda;
    /// verify-symbolic
    int n_min = 3;
    int n_max = 5;
    int samples = 50;
    /// greens-check
    std::map<std::vector<int>, std::string> form;    // axes -> expression
    std::vector<int> cells{4, 8, 16};
    std::map<std::string, double> tolerances;
    std::string out = "formlab_out";
    unsigned seed = 1;
    int threads = 0;

    /// Reads a JSON config; relative metric paths resolve against base_dir.
    static ExperimentConfig from_json(const nlohmann::json& j, const std::string& base_dir = ".");
    static ExperimentConfig from_file(const std::string& path);
    /// Applies an "N'xN'xNn" grid string (lateral sizes must agree).
    void set_grid(const std::string& spec);
    /// Throws ConfigError naming the violated condition.
    void validate() const;
    double tolerance(const std::string& name) const;
    nlohmann::json to_json() const;
};

/// Default probing set: every lateral axis at |m| in {4, 5, 6, 8, 10, ...}
/// up to freq_max, plus the (s, s) and (s, -s) diagonals of each axis pair.
std::vector<std::vector<int>> default_frequencies(int n, int freq_max);

struct RunResult {
    int exit_code = Pass;
    nlohmann::json verdicts = nlohmann::json::object();
    std::vector<std::string> artifacts;
};

/// Validates, runs the mode and writes artifacts. Never throws for config or
/// numerical failures; those become exit codes with a message on `log`.
RunResult run(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace formlab::cli

#include "formlab/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace formlab::cli;

int main(int argc, char** argv) {
    CLI::App app{"formlab: Hodge Laplacian boundary symbols, DtN probing and boundary metric recovery"};
    std::string config_path, mode, out, grid;
    unsigned seed = 0;
    double thickness = 0.0, helmholtz = 0.0;
    int freq_max = 0;
    app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--mode", mode, "verify-symbolic | solve | probe | reconstruct | greens-check");
    app.add_option("--seed", seed, "seed for randomized checks");
    app.add_option("--out", out, "output directory");
    app.add_option("--grid", grid, "N'xN'xNn");
    app.add_option("--thickness", thickness, "slab thickness T");
    app.add_option("--freq-max", freq_max, "largest lateral mode in the generated frequency set");
    app.add_option("--helmholtz", helmholtz, "omega^2 for (Delta - omega^2)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Pass : ConfigInvalid;
    }

    ExperimentConfig cfg;
    try {
        if (!config_path.empty()) cfg = ExperimentConfig::from_file(config_path);
        if (!mode.empty()) cfg.mode = parse_mode(mode);
        if (app.count("--seed")) cfg.seed = seed;
        if (!out.empty()) cfg.out = out;
        if (!grid.empty()) cfg.set_grid(grid);
        if (app.count("--thickness")) cfg.thickness = thickness;
        if (app.count("--freq-max")) cfg.freq_max = freq_max;
        if (app.count("--helmholtz")) cfg.omega2 = helmholtz;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return ConfigInvalid;
    }
    if (config_path.empty() && mode.empty()) {
        std::cerr << "config error: give --config or --mode\n";
        return ConfigInvalid;
    }
    const RunResult r = run(cfg, std::cerr);
    for (const auto& a : r.artifacts) std::cout << a << "\n";
    return r.exit_code;
}

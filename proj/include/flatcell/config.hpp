#pragma once

#include "flatcell/family.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace flatcell {

/// Settings shared by all CLI commands, read from a TOML file.
struct RunConfig {
    double young = 1e6;
    double poisson = 0.45;
    InflatorSettings inflator;
    SolveSettings solve;

    /// homogenize: uniform schedule up to strain_max.
    double strain_step = 0.01;
    double strain_max = 0.5;
    int tiles = 1;

    double sigma_target = 0; ///< Pa; 0 when not set
    int samples = 5;
    double shear_weight = 1.0;

    OptimizeSettings optimize;
    RangeSettings range;

    std::vector<std::string> topologies; ///< catalog ids or JSON paths
    std::vector<double> targets;
    int jobs = 1;
    /// Coverage strains and tolerance.
    std::vector<double> coverage_strains{0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
    double coverage_tolerance = 0.10;

    std::filesystem::path output_dir = "flatcell_out";
    /// Seeds perturbation tests only; the pipeline itself is deterministic.
    unsigned seed = 0;

    Material material() const { return Material::from_young_poisson(young, poisson); }
    PipelineSettings pipeline() const;
    OptimizeSettings optimize_settings() const;
    SweepSettings sweep_settings() const;
};

/// Parses TOML text and applies "section.key=value" overrides (values in TOML
/// syntax) before reading; unknown keys are errors. Throws InvalidInput.
RunConfig parse_config(const std::string &toml_text, const std::vector<std::string> &overrides = {});
RunConfig load_config(const std::filesystem::path &path, const std::vector<std::string> &overrides = {});

/// Checks ranges shared by every command.
void validate_config(const RunConfig &config);

/// Catalog id (data/topologies) or path to a topology file.
CellTopology resolve_topology(const std::string &name);

} // namespace flatcell

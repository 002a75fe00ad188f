#pragma once

#include "flatcell/shape_opt.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace flatcell {

/// One accepted member of the family P(sigma_f).
struct FamilyEntry {
    std::string topology;
    std::vector<std::string> param_names;
    Eigen::VectorXd q;
    double sigma_target = 0;
    double alpha = 0;         ///< largest accepted eps_max
    double max_deviation = 0; ///< dense deviation at alpha
    std::string curve_file;   ///< relative to the database directory
    StressStrainCurve curve;  ///< dense verification curve (no states)

    bool operator==(const FamilyEntry &other) const;
};

struct FamilyFailure {
    std::string topology;
    double sigma_target = 0;
    std::string reason;

    bool operator==(const FamilyFailure &other) const = default;
};

struct FamilyDatabase {
    static constexpr int kVersion = 1;
    std::string config_hash;
    std::vector<FamilyEntry> entries;
    std::vector<FamilyFailure> failures;

    /// Writes family.json and curves/*.csv into dir (created if needed).
    void save(const std::filesystem::path &dir) const;
    static FamilyDatabase load(const std::filesystem::path &dir);

    bool operator==(const FamilyDatabase &other) const = default;
};

struct SweepSettings {
    OptimizeSettings optimize;
    RangeSettings range;
    int jobs = 1;
    /// Finished (topology, target) results are cached here and reused; empty disables caching.
    std::filesystem::path cache_dir;
    /// Per-task optimization traces (<task key>.jsonl); empty disables them.
    std::filesystem::path trace_dir;
};

/// Stable hash of everything in the settings that changes results.
std::string settings_hash(const SweepSettings &settings);

/// Cache key of one (topology, target) task.
std::string task_key(const CellTopology &topology, double sigma_target, const std::string &config_hash);

/// extend_range for every (topology, target) pair; entries and failures are
/// ordered by topology, then target, whatever the job count.
FamilyDatabase sweep(const std::vector<CellTopology> &topologies, const std::vector<double> &targets,
                     const SweepSettings &settings = {});

struct CoverageCell {
    bool covered = false;
    std::string topology; ///< best entry (smallest deviation), empty if none reaches the strain
    double deviation = std::numeric_limits<double>::infinity();
};

struct CoverageMap {
    std::vector<double> sigmas;
    std::vector<double> strains;
    std::vector<std::vector<CoverageCell>> cells; ///< [sigma][strain]

    /// sigma_target,strain,covered,topology,deviation
    void write_csv(std::ostream &out) const;
};

/// Grid over the database targets and the given strains. A cell is covered when
/// some entry's dense curve reaches the strain with max deviation <= tolerance on [lower, strain].
CoverageMap coverage(const FamilyDatabase &db, const std::vector<double> &strains = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7},
                     double tolerance = 0.10, double lower = 0.1);

/// sigma_f = m G / A.
double select_material(double mass, double area, double acceleration);

/// h = m g H / (alpha sigma_f A).
double required_thickness(double sigma_f, double alpha, double mass, double height, double area, double gravity);

/// alpha(sigma_f) from the database: exact target, else linear in log sigma between
/// neighbours, else the nearest target (with a warning).
double family_alpha(const FamilyDatabase &db, double sigma_f, std::string *warning = nullptr);

/// Optimal response of the min-max problem: the constant sigma_f on [0, 1].
struct IdealCurve {
    double sigma_f = 0;

    double stress(double strain) const;
    double max() const { return sigma_f; }
    double integral() const { return sigma_f; }
    /// strain,stress at the given spacing over [0, 1].
    void write_csv(std::ostream &out, double step = 0.01) const;
};

IdealCurve ideal_curve(double sigma_f);

} // namespace flatcell

#pragma once

#include "flatcell/contact.hpp"
#include "flatcell/linear_solver.hpp"

#include <iosfwd>
#include <memory>
#include <string>

namespace flatcell {

struct SolveSettings {
    double penalty_w0 = 1e4;
    double max_penalty = 1e12;
    /// Absolute gradient tolerance; 0 selects 1e-6 mu |V|.
    double tol_grad = 0;
    double tol_constraint = 1e-8;
    int max_newton_iterations = 100;
    /// Keep a raised initial weight for later strain increments.
    bool persist_penalty = false;
    bool contact = true;
    /// dhat = 0 selects ContactSettings::defaults of the mesh.
    ContactSettings contact_settings;
    /// Records wall time per sample; otherwise wall_ms is reported as 0.
    bool timing = false;
    /// Line-delimited JSON per Newton iteration.
    std::ostream *trace = nullptr;

    void validate() const;
};

struct CurveSample {
    double strain = 0;            ///< compressive strain, G11 = -strain
    Mat2 stress = Mat2::Zero();   ///< volume-averaged elastic stress
    double g00 = 0, g01 = 0;
    int newton_iterations = 0;
    double wall_ms = 0;
    HomogState state;

    /// Positive in compression.
    double compressive_stress() const { return -stress(1, 1); }
};

struct StressStrainCurve {
    std::vector<CurveSample> samples;

    std::vector<double> strains() const;
    std::vector<double> compressive_stress() const;
    /// strain,stress11,G00,G01,newton_iters,wall_ms with stress11 positive in compression.
    void write_csv(std::ostream &out) const;
    /// Reads write_csv output (states are not stored).
    static StressStrainCurve read_csv(std::istream &in);
};

/// Merit energy W + w (G11 - target)^2 with derivatives over all unknowns.
struct MeritEvaluation {
    double energy = 0;
    double elastic = 0;
    double contact = 0;
    double penalty = 0;
    Eigen::VectorXd grad;
    SparseMat hess;
    int active_pairs = 0;
    double min_distance = std::numeric_limits<double>::infinity();
};

/// Solver for the homogenization problem of one periodic mesh. Strains passed
/// to the solvers are compressive: the target is G11 = -strain.
class Homogenizer {
public:
    Homogenizer(PeriodicMesh mesh, Material material, SolveSettings settings = {});
    Homogenizer(const Homogenizer &) = delete;
    Homogenizer &operator=(const Homogenizer &) = delete;

    HomogState newton_solve(HomogState state, double strain, double weight, int *iterations = nullptr) const;
    HomogState constrained_newton_solve(HomogState state, double strain, int *iterations = nullptr) const;
    HomogState incremental_solve(const HomogState &prev, double strain, int *iterations = nullptr) const;
    /// Throws SolverFailure at the first failed strain unless failure is given, in
    /// which case the message is stored there and the samples solved so far are returned.
    StressStrainCurve solve_curve(const std::vector<double> &strains, std::string *failure = nullptr) const;

    /// weight 0 drops the penalty; order as in ElasticModel::evaluate.
    MeritEvaluation evaluate(const HomogState &state, double strain, double weight, int order) const;

    /// Hessian of W with the pinned slot and G11 eliminated (unit diagonal in their rows).
    SparseMat constrained_hessian(const HomogState &state) const;

    /// Largest admissible step along dir (inversion and collision bounds).
    double step_limit(const HomogState &state, const Eigen::VectorXd &dir) const;

    /// 1 for unknowns the solver updates; the pinned slot (and G11 when constrained) are 0.
    Eigen::VectorXd active_mask(bool g11_free) const;

    const PeriodicMesh &mesh() const { return *mesh_; }
    const PeriodicDofMap &dofs() const { return dofs_; }
    const ElasticModel &elastic() const { return *elastic_; }
    const TiledSurface &tiling() const { return *tiling_; }
    const ContactSettings &contact_settings() const { return contact_; }
    const SolveSettings &settings() const { return settings_; }
    bool contact_enabled() const { return settings_.contact && tiling_->num_segments() > 0; }
    double tol_grad() const { return tol_grad_; }

private:
    HomogState minimize(HomogState state, double strain, double weight, bool g11_free, int *iterations) const;

    std::unique_ptr<const PeriodicMesh> mesh_;
    PeriodicDofMap dofs_;
    std::unique_ptr<ElasticModel> elastic_;
    std::unique_ptr<TiledSurface> tiling_;
    ContactSettings contact_;
    SolveSettings settings_;
    double tol_grad_ = 0;
};

/// Reflection x -> a - x of a state on a mirror-symmetric mesh: fluctuations
/// are mirrored node-wise and G01 changes sign.
HomogState mirror_state(const PeriodicMesh &mesh, const PeriodicDofMap &dofs, const HomogState &state);

/// Strictly increasing schedule of nonnegative strains below 1.
void validate_schedule(const std::vector<double> &strains);

/// Uniform schedule step, 2 step, ... up to and including last (within roundoff).
std::vector<double> uniform_schedule(double step, double last);

StressStrainCurve solve_curve(const PeriodicMesh &mesh, const Material &material, const std::vector<double> &strains,
                              const SolveSettings &settings = {});

/// Solves on the n x n supercell (n in {1, 2}); contact defaults follow the single cell.
StressStrainCurve homogenize_tiled(const PeriodicMesh &mesh, int n, const Material &material,
                                   const std::vector<double> &strains, const SolveSettings &settings = {});

} // namespace flatcell

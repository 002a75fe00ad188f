#pragma once

#include "flatcell/homogenizer.hpp"
#include "flatcell/inflator.hpp"

#include <iosfwd>
#include <string>

namespace flatcell {

/// Flat-response target: compressive stress sigma_target over the strain samples.
struct ObjectiveSpec {
    double sigma_target = 0; ///< Pa, compared with the compressive stress -sigma11
    double shear_weight = 1.0;
    double shear_threshold = 0.05;
    std::vector<double> samples;

    /// count samples spread uniformly over [lower, eps_max].
    static ObjectiveSpec uniform(double sigma_target, double eps_max, int count = 5, double lower = 0.1);
    void validate() const;
    double strain_max() const { return samples.empty() ? 0.0 : samples.back(); }
};

struct ObjectiveValue {
    double J = 0;
    double stress_term = 0;
    double shear_term = 0;
    std::vector<double> deviations; ///< s_i / sigma* - 1 per sample
    std::vector<double> d_stress11; ///< dJ / d sigma11_i
    std::vector<double> d_g01;      ///< dJ / d G01_i
};

/// J = sum (s_i / sigma* - 1)^2 + w ((|G01_i| - threshold)_+)^2 with s_i = -sigma11_i.
/// Throws InvalidInput when the curve samples do not match spec.samples.
ObjectiveValue objective(const StressStrainCurve &curve, const ObjectiveSpec &spec);

/// dJ/dq (mesh parameter columns) from converged constrained states. curve holds
/// exactly the objective samples. Sets reduced_accuracy when an adjoint system
/// needed a diagonal shift.
Eigen::VectorXd adjoint_gradient(const Homogenizer &hom, const StressStrainCurve &curve, const ObjectiveValue &value,
                                 bool *reduced_accuracy = nullptr);

/// Everything that turns a parameter vector into a stress-strain curve.
struct PipelineSettings {
    Material material = Material::from_young_poisson(1e6, 0.45);
    InflatorSettings inflator;
    SolveSettings solve;
    /// Cells per side of the simulated block (1 or 2).
    int tiles = 1;
    /// Largest strain increment of the forward schedule.
    double ramp_step = 0.05;
};

/// Forward schedule: ramp_step increments merged with the samples.
std::vector<double> forward_schedule(const std::vector<double> &samples, double ramp_step);

struct PipelineEvaluation {
    double J = 0;
    Eigen::VectorXd grad; ///< dJ/dq, empty unless requested
    ObjectiveValue value;
    StressStrainCurve curve; ///< objective samples only
    bool reduced_accuracy = false;
};

/// Inflate -> solve -> objective (-> adjoint) for one topology. Contact
/// settings are frozen from the reference cell size.
class ShapePipeline {
public:
    ShapePipeline(const CellTopology &topology, ShapeParams reference, PipelineSettings settings);

    const CellTopology &topology() const { return topology_; }
    const ParamLayout &layout() const { return layout_; }
    const PipelineSettings &settings() const { return settings_; }
    const ShapeParams &reference() const { return reference_; }

    ShapeParams params(const Eigen::VectorXd &q) const;
    PeriodicMesh mesh(const Eigen::VectorXd &q) const;
    PipelineEvaluation evaluate(const Eigen::VectorXd &q, const ObjectiveSpec &spec, bool gradient) const;
    /// Curve at every strain of the schedule.
    StressStrainCurve curve(const Eigen::VectorXd &q, const std::vector<double> &strains) const;

private:
    CellTopology topology_;
    ShapeParams reference_;
    ParamLayout layout_;
    PipelineSettings settings_;
};

struct DenseVerification {
    StressStrainCurve curve;
    double max_deviation = std::numeric_limits<double>::infinity(); ///< over strains in [lower, eps_max]
    bool accepted = false;
    std::string failure; ///< forward solve error, if any
};

/// Samples every step up to eps_max and compares against sigma_target.
DenseVerification verify_dense(const ShapePipeline &pipeline, const Eigen::VectorXd &q, double sigma_target,
                               double eps_max, double step = 0.01, double lower = 0.1, double tolerance = 0.10);

struct OptimizeSettings {
    PipelineSettings pipeline;
    int max_iterations = 200;
    double tol_objective = 1e-8;
    /// Gradient tolerance relative to max(1, J0), in box-normalized variables.
    double tol_grad_relative = 1e-6;
    /// Stop once every sample deviates less than this.
    double pointwise_tolerance = 0.02;
    int max_halvings = 20;
    int lbfgs_memory = 10;
    /// Largest first step per variable, as a fraction of its box width.
    double initial_step = 0.1;
    bool verify = true;
    double verify_step = 0.01;
    double accept_tolerance = 0.10;
    /// Re-check accepted shapes on a 2x2 block and re-optimize there when the curves differ.
    bool recheck_tiled = false;
    /// Line-delimited JSON per iteration.
    std::ostream *trace = nullptr;
};

struct OptResult {
    Eigen::VectorXd q;
    ShapeParams params;
    ObjectiveSpec spec;
    std::vector<double> objective_trace;
    std::vector<double> grad_norm_trace;
    std::vector<double> deviations; ///< per objective sample at q
    int iterations = 0;
    std::string stop_reason;
    int tiles = 1;
    bool reduced_accuracy = false;
    ContactSettings contact; ///< barrier settings the curves were computed with

    bool accepted = false;
    double dense_max_deviation = std::numeric_limits<double>::infinity();
    double strain_min = 0.1;
    double strain_max = 0; ///< achieved range end (0 when rejected)
    StressStrainCurve dense_curve;
};

/// Box-constrained quasi-Newton descent on J from p0, then dense verification.
/// Throws SolverFailure when the forward solve fails at p0.
OptResult optimize(const CellTopology &topology, const ShapeParams &p0, const ObjectiveSpec &spec,
                   const ParamBounds &bounds, const OptimizeSettings &settings = {});

struct RangeSettings {
    double eps_start = 0.3;
    double eps_step = 0.1;
    double eps_last = 0.7;
    int samples = 5;
    double shear_weight = 1.0;
};

/// Optimizes for growing strain ranges, warm-started from each accepted shape;
/// stops at the first rejection (which is included).
std::vector<OptResult> extend_range(const CellTopology &topology, const ShapeParams &p0, double sigma_target,
                                    const ParamBounds &bounds, const OptimizeSettings &settings = {},
                                    const RangeSettings &range = {});

/// JSON bundle of a result; curve_file names the stored dense curve, if any.
void write_result_json(std::ostream &out, const OptResult &result, const CellTopology &topology,
                       const std::string &curve_file = "");

/// The parts of a result bundle needed to resume or re-check it.
struct ResultBundle {
    std::string topology;
    std::vector<std::pair<std::string, double>> q; ///< by parameter name
    ObjectiveSpec spec;
    bool accepted = false;
    double strain_max = 0;
    ContactSettings contact;

    /// q in layout order; throws InvalidInput when names do not match.
    Eigen::VectorXd q_vector(const ParamLayout &layout) const;
};

ResultBundle read_result_json(std::istream &in);

} // namespace flatcell

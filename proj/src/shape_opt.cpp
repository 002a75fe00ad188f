#include "flatcell/shape_opt.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>
#include <sstream>

namespace flatcell {

namespace {

constexpr double kStrainMatch = 1e-9;

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

} // namespace

ObjectiveSpec ObjectiveSpec::uniform(double sigma_target, double eps_max, int count, double lower) {
    if (count < 1) throw InvalidInput("objective: at least one strain sample is required");
    if (!(eps_max >= lower)) throw InvalidInput("objective: eps_max must not be below the lower strain");
    ObjectiveSpec spec;
    spec.sigma_target = sigma_target;
    if (count == 1) {
        spec.samples = {eps_max};
    } else {
        for (int i = 0; i < count; ++i) spec.samples.push_back(lower + (eps_max - lower) * i / (count - 1));
    }
    spec.validate();
    return spec;
}

void ObjectiveSpec::validate() const {
    if (!(sigma_target > 0)) throw InvalidInput("objective: sigma_target must be positive");
    if (!(shear_weight >= 0) || !(shear_threshold >= 0))
        throw InvalidInput("objective: shear weight and threshold must be nonnegative");
    if (samples.empty()) throw InvalidInput("objective: no strain samples");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!(samples[i] > 0 && samples[i] < 1)) throw InvalidInput("objective: strain samples must lie in (0, 1)");
        if (samples[i] < 0.1 - kStrainMatch) throw InvalidInput("objective: strain samples start at 0.1");
        if (i > 0 && !(samples[i] > samples[i - 1])) throw InvalidInput("objective: strain samples must increase");
    }
}

ObjectiveValue objective(const StressStrainCurve &curve, const ObjectiveSpec &spec) {
    spec.validate();
    if (curve.samples.size() != spec.samples.size())
        throw InvalidInput("objective: curve has " + std::to_string(curve.samples.size()) + " samples, spec has " +
                           std::to_string(spec.samples.size()));
    ObjectiveValue v;
    const double s_star = spec.sigma_target;
    for (std::size_t i = 0; i < spec.samples.size(); ++i) {
        const CurveSample &c = curve.samples[i];
        if (std::abs(c.strain - spec.samples[i]) > kStrainMatch)
            throw InvalidInput("objective: curve strain " + std::to_string(c.strain) + " does not match sample " +
                               std::to_string(spec.samples[i]));
        const double dev = c.compressive_stress() / s_star - 1;
        const double excess = std::max(0.0, std::abs(c.g01) - spec.shear_threshold);
        v.stress_term += dev * dev;
        v.shear_term += spec.shear_weight * excess * excess;
        v.deviations.push_back(dev);
        v.d_stress11.push_back(-2 * dev / s_star);
        v.d_g01.push_back(excess > 0 ? 2 * spec.shear_weight * excess * (c.g01 > 0 ? 1.0 : -1.0) : 0.0);
    }
    v.J = v.stress_term + v.shear_term;
    return v;
}

Eigen::VectorXd adjoint_gradient(const Homogenizer &hom, const StressStrainCurve &curve, const ObjectiveValue &value,
                                 bool *reduced_accuracy) {
    if (value.d_stress11.size() != curve.samples.size() || value.d_g01.size() != curve.samples.size())
        throw InvalidInput("adjoint_gradient: objective partials do not match the curve");
    const PeriodicMesh &mesh = hom.mesh();
    const ElasticModel &elastic = hom.elastic();
    const int g01 = hom.dofs().index_g01();
    const double area = mesh.cell_area();
    const Mat2 &L = mesh.lattice;
    const Eigen::MatrixXd &lv = mesh.lattice_velocity;
    // Signed area derivative; area = |det L| with det L > 0 for valid lattices.
    const Eigen::VectorXd d_area = (lv.row(0) * L(1, 1) + lv.row(3) * L(0, 0) - lv.row(1) * L(0, 1) -
                                    lv.row(2) * L(1, 0)).transpose() *
                                   (L.determinant() < 0 ? -1.0 : 1.0);
    const Eigen::VectorXd mask = hom.active_mask(false);

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(mesh.num_params());
    SparseCholesky chol;
    for (std::size_t i = 0; i < curve.samples.size(); ++i) {
        const double ds = value.d_stress11[i];
        const double dg = value.d_g01[i];
        if (ds == 0 && dg == 0) continue;
        const HomogState &state = curve.samples[i].state;
        const double s11 = curve.samples[i].stress(1, 1);

        Eigen::VectorXd djdv = Eigen::VectorXd::Zero(hom.dofs().size());
        if (ds != 0) {
            djdv += (ds / area) * elastic.stress_integral_gradient(state, 1, 1);
            grad += (ds / area) * (mesh.shape_velocity.transpose() * elastic.stress_integral_shape_gradient(state, 1, 1) -
                                   s11 * d_area);
        }
        djdv[g01] += dg;
        djdv = djdv.cwiseProduct(mask);

        const double beta = force_spd(hom.constrained_hessian(state), chol);
        if (beta > 0 && reduced_accuracy) *reduced_accuracy = true;
        const Eigen::VectorXd p = (-chol.solve(djdv)).cwiseProduct(mask);

        grad += mesh.shape_velocity.transpose() * elastic.force_shape_vjp(state, p);
        if (hom.contact_enabled())
            grad += tiled_rest_to_params(hom.tiling(), mesh, contact_rest_vjp(hom.tiling(), state, hom.contact_settings(), p));
    }
    return grad;
}

std::vector<double> forward_schedule(const std::vector<double> &samples, double ramp_step) {
    if (samples.empty()) return {};
    std::vector<double> out = samples;
    for (double e : uniform_schedule(ramp_step, samples.back()))
        if (std::none_of(samples.begin(), samples.end(), [&](double s) { return std::abs(s - e) < kStrainMatch; }))
            out.push_back(e);
    std::sort(out.begin(), out.end());
    return out;
}

ShapePipeline::ShapePipeline(const CellTopology &topology, ShapeParams reference, PipelineSettings settings)
    : topology_(topology), reference_(std::move(reference)), layout_(topology), settings_(std::move(settings)) {
    if (settings_.tiles != 1 && settings_.tiles != 2) throw InvalidInput("pipeline: tiles must be 1 or 2");
    if (!(settings_.ramp_step > 0)) throw InvalidInput("pipeline: ramp_step must be positive");
    settings_.material.validate();
    settings_.solve.validate();
    if (settings_.solve.contact_settings.dhat == 0)
        settings_.solve.contact_settings = ContactSettings::defaults(reference_.a, reference_.b, settings_.material);
}

ShapeParams ShapePipeline::params(const Eigen::VectorXd &q) const { return layout_.from_vector(q, reference_); }

PeriodicMesh ShapePipeline::mesh(const Eigen::VectorXd &q) const {
    PeriodicMesh m = inflate(topology_, params(q), settings_.inflator);
    if (settings_.tiles == 2) return make_supercell(m, 2);
    return m;
}

StressStrainCurve ShapePipeline::curve(const Eigen::VectorXd &q, const std::vector<double> &strains) const {
    return Homogenizer(mesh(q), settings_.material, settings_.solve).solve_curve(strains);
}

PipelineEvaluation ShapePipeline::evaluate(const Eigen::VectorXd &q, const ObjectiveSpec &spec, bool gradient) const {
    spec.validate();
    const Homogenizer hom(mesh(q), settings_.material, settings_.solve);
    const StressStrainCurve full = hom.solve_curve(forward_schedule(spec.samples, settings_.ramp_step));
    PipelineEvaluation ev;
    for (double s : spec.samples)
        for (const auto &c : full.samples)
            if (std::abs(c.strain - s) < kStrainMatch) {
                ev.curve.samples.push_back(c);
                break;
            }
    ev.value = objective(ev.curve, spec);
    ev.J = ev.value.J;
    if (gradient) ev.grad = adjoint_gradient(hom, ev.curve, ev.value, &ev.reduced_accuracy);
    return ev;
}

DenseVerification verify_dense(const ShapePipeline &pipeline, const Eigen::VectorXd &q, double sigma_target,
                               double eps_max, double step, double lower, double tolerance) {
    if (!(sigma_target > 0)) throw InvalidInput("verify: sigma_target must be positive");
    DenseVerification out;
    try {
        out.curve = pipeline.curve(q, uniform_schedule(step, eps_max + kStrainMatch));
    } catch (const Error &e) {
        out.failure = e.what();
        return out;
    }
    double worst = 0;
    for (const auto &s : out.curve.samples)
        if (s.strain >= lower - kStrainMatch)
            worst = std::max(worst, std::abs(s.compressive_stress() / sigma_target - 1));
    out.max_deviation = worst;
    out.accepted = worst <= tolerance;
    return out;
}

namespace {

/// Limited-memory inverse Hessian restricted to the free variables.
class Lbfgs {
public:
    explicit Lbfgs(int memory) : memory_(std::max(1, memory)) {}

    void clear() { pairs_.clear(); }
    bool empty() const { return pairs_.empty(); }

    void update(const Eigen::VectorXd &s, const Eigen::VectorXd &y) {
        const double sy = s.dot(y);
        if (!(sy > 1e-12 * s.norm() * y.norm())) return;
        pairs_.push_back({s, y});
        if (static_cast<int>(pairs_.size()) > memory_) pairs_.pop_front();
    }

    Eigen::VectorXd direction(const Eigen::VectorXd &g, const Eigen::VectorXd &free) const {
        Eigen::VectorXd q = g.cwiseProduct(free);
        std::vector<double> alpha(pairs_.size());
        for (int k = static_cast<int>(pairs_.size()) - 1; k >= 0; --k) {
            const Eigen::VectorXd s = pairs_[k].first.cwiseProduct(free), y = pairs_[k].second.cwiseProduct(free);
            const double sy = s.dot(y);
            if (!(sy > 0)) continue;
            alpha[k] = s.dot(q) / sy;
            q -= alpha[k] * y;
        }
        double gamma = 1;
        if (!pairs_.empty()) {
            const Eigen::VectorXd s = pairs_.back().first.cwiseProduct(free), y = pairs_.back().second.cwiseProduct(free);
            if (s.dot(y) > 0 && y.squaredNorm() > 0) gamma = s.dot(y) / y.squaredNorm();
        }
        q *= gamma;
        for (std::size_t k = 0; k < pairs_.size(); ++k) {
            const Eigen::VectorXd s = pairs_[k].first.cwiseProduct(free), y = pairs_[k].second.cwiseProduct(free);
            const double sy = s.dot(y);
            if (!(sy > 0)) continue;
            const double b = y.dot(q) / sy;
            q += (alpha[k] - b) * s;
        }
        return -q.cwiseProduct(free);
    }

private:
    int memory_;
    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs_;
};

/// Affine map between q and the unit box over the non-fixed entries.
struct UnitBox {
    std::vector<int> index;
    Eigen::VectorXd lower, width;
    Eigen::VectorXd base;

    UnitBox(const ParamBounds &bounds, const Eigen::VectorXd &q0) : base(q0) {
        if (bounds.lower.size() != q0.size() || bounds.upper.size() != q0.size())
            throw InvalidInput("optimize: bounds do not match the parameter vector");
        for (int i = 0; i < q0.size(); ++i) {
            if (!(bounds.lower[i] <= bounds.upper[i])) throw InvalidInput("optimize: lower bound above upper bound");
            const double slack = 1e-12 * std::max(1.0, std::abs(q0[i]));
            if (q0[i] < bounds.lower[i] - slack || q0[i] > bounds.upper[i] + slack)
                throw InvalidInput("optimize: initial parameters lie outside the bounds");
            if (bounds.upper[i] > bounds.lower[i]) index.push_back(i);
        }
        lower.resize(index.size());
        width.resize(index.size());
        for (std::size_t k = 0; k < index.size(); ++k) {
            lower[k] = bounds.lower[index[k]];
            width[k] = bounds.upper[index[k]] - bounds.lower[index[k]];
        }
    }

    int size() const { return static_cast<int>(index.size()); }

    Eigen::VectorXd to_unit(const Eigen::VectorXd &q) const {
        Eigen::VectorXd z(size());
        for (int k = 0; k < size(); ++k) z[k] = std::clamp((q[index[k]] - lower[k]) / width[k], 0.0, 1.0);
        return z;
    }

    Eigen::VectorXd to_params(const Eigen::VectorXd &z) const {
        Eigen::VectorXd q = base;
        for (int k = 0; k < size(); ++k) q[index[k]] = lower[k] + width[k] * z[k];
        return q;
    }

    Eigen::VectorXd unit_gradient(const Eigen::VectorXd &grad_q) const {
        Eigen::VectorXd g(size());
        for (int k = 0; k < size(); ++k) g[k] = grad_q[index[k]] * width[k];
        return g;
    }
};

double projected_gradient_norm(const Eigen::VectorXd &z, const Eigen::VectorXd &g) {
    double s = 0;
    for (int k = 0; k < z.size(); ++k) {
        const double d = z[k] - std::clamp(z[k] - g[k], 0.0, 1.0);
        s += d * d;
    }
    return std::sqrt(s);
}

double max_abs(const std::vector<double> &v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

void write_trace(std::ostream *out, const ObjectiveSpec &spec, int tiles, int iteration, const PipelineEvaluation &ev,
                 double grad_norm, double step, int trials) {
    if (!out) return;
    nlohmann::json line = {{"strain_max", spec.strain_max()},
                           {"tiles", tiles},
                           {"iteration", iteration},
                           {"J", ev.J},
                           {"grad_norm", grad_norm},
                           {"step", step},
                           {"trials", trials},
                           {"deviations", ev.value.deviations},
                           {"reduced_accuracy", ev.reduced_accuracy}};
    *out << line.dump() << std::endl;
}

OptResult run_descent(const ShapePipeline &pipeline, const Eigen::VectorXd &q0, const ObjectiveSpec &spec,
                      const ParamBounds &bounds, const OptimizeSettings &settings) {
    const UnitBox box(bounds, q0);
    Eigen::VectorXd z = box.to_unit(q0);
    Eigen::VectorXd q = box.to_params(z);

    OptResult r;
    r.spec = spec;
    r.tiles = pipeline.settings().tiles;
    PipelineEvaluation ev;
    try {
        ev = pipeline.evaluate(q, spec, true);
    } catch (const Error &e) {
        throw SolverFailure(std::string("optimize: forward solve failed at the initial shape: ") + e.what());
    }
    Eigen::VectorXd g = box.unit_gradient(ev.grad);
    const double tol_grad = settings.tol_grad_relative * std::max(1.0, ev.J);
    Lbfgs lbfgs(settings.lbfgs_memory);
    double last_step = 0;
    int last_trials = 0;

    for (int it = 0;; ++it) {
        const double gnorm = projected_gradient_norm(z, g);
        r.objective_trace.push_back(ev.J);
        r.grad_norm_trace.push_back(gnorm);
        r.reduced_accuracy = r.reduced_accuracy || ev.reduced_accuracy;
        write_trace(settings.trace, spec, r.tiles, it, ev, gnorm, last_step, last_trials);
        r.iterations = it;

        if (ev.J < settings.tol_objective) {
            r.stop_reason = "objective";
            break;
        }
        if (max_abs(ev.value.deviations) < settings.pointwise_tolerance && ev.value.shear_term == 0) {
            r.stop_reason = "pointwise";
            break;
        }
        if (gnorm < tol_grad) {
            r.stop_reason = "gradient";
            break;
        }
        if (it >= settings.max_iterations) {
            r.stop_reason = "iterations";
            break;
        }

        Eigen::VectorXd free = Eigen::VectorXd::Ones(z.size());
        for (int k = 0; k < z.size(); ++k)
            if ((z[k] <= 0 && g[k] > 0) || (z[k] >= 1 && g[k] < 0)) free[k] = 0;
        Eigen::VectorXd d = lbfgs.direction(g, free);
        if (!(d.dot(g) < 0)) {
            lbfgs.clear();
            d = -g.cwiseProduct(free);
        }
        const double dmax = d.cwiseAbs().maxCoeff();
        double alpha = lbfgs.empty() ? settings.initial_step / dmax : 1.0;
        alpha = std::min(alpha, 2.5 * settings.initial_step / dmax);

        bool accepted = false;
        int trials = 0;
        for (int h = 0; h <= settings.max_halvings; ++h, alpha *= 0.5) {
            const Eigen::VectorXd zt = (z + alpha * d).cwiseMax(0.0).cwiseMin(1.0);
            if ((zt - z).cwiseAbs().maxCoeff() == 0) break;
            ++trials;
            PipelineEvaluation trial;
            try {
                trial = pipeline.evaluate(box.to_params(zt), spec, true);
            } catch (const Error &) {
                continue;
            }
            if (trial.J <= ev.J + 1e-4 * g.dot(zt - z)) {
                const Eigen::VectorXd gt = box.unit_gradient(trial.grad);
                lbfgs.update(zt - z, gt - g);
                z = zt;
                g = gt;
                ev = std::move(trial);
                accepted = true;
                break;
            }
        }
        last_step = accepted ? alpha : 0;
        last_trials = trials;
        if (!accepted) {
            r.stop_reason = "line_search_failed";
            write_trace(settings.trace, spec, r.tiles, it + 1, ev, gnorm, 0, trials);
            break;
        }
    }

    r.q = box.to_params(z);
    r.params = pipeline.params(r.q);
    r.deviations = ev.value.deviations;
    return r;
}

void finish_verification(const ShapePipeline &pipeline, OptResult &r, const OptimizeSettings &settings) {
    if (!settings.verify) return;
    const DenseVerification dense = verify_dense(pipeline, r.q, r.spec.sigma_target, r.spec.strain_max(),
                                                 settings.verify_step, r.spec.samples.front(), settings.accept_tolerance);
    r.accepted = dense.accepted;
    r.dense_max_deviation = dense.max_deviation;
    r.dense_curve = dense.curve;
    r.strain_min = r.spec.samples.front();
    r.strain_max = r.accepted ? r.spec.strain_max() : 0;
    if (!dense.failure.empty()) r.stop_reason += "; verification failed: " + dense.failure;
}

} // namespace

OptResult optimize(const CellTopology &topology, const ShapeParams &p0, const ObjectiveSpec &spec,
                   const ParamBounds &bounds, const OptimizeSettings &settings) {
    spec.validate();
    if (settings.max_iterations < 0 || settings.max_halvings < 0 || !(settings.initial_step > 0))
        throw InvalidInput("optimize: invalid settings");
    const ShapePipeline pipeline(topology, p0, settings.pipeline);
    const Eigen::VectorXd q0 = pipeline.layout().to_vector(p0);
    OptResult r = run_descent(pipeline, q0, spec, bounds, settings);
    r.contact = pipeline.settings().solve.contact_settings;
    finish_verification(pipeline, r, settings);

    if (r.accepted && settings.recheck_tiled && settings.pipeline.tiles == 1) {
        PipelineSettings block = settings.pipeline;
        block.tiles = 2;
        const ShapePipeline tiled(topology, p0, block);
        const DenseVerification check = verify_dense(tiled, r.q, spec.sigma_target, spec.strain_max(),
                                                     settings.verify_step, spec.samples.front(), settings.accept_tolerance);
        bool same = check.failure.empty() && check.curve.samples.size() == r.dense_curve.samples.size();
        for (std::size_t i = 0; same && i < check.curve.samples.size(); ++i)
            same = std::abs(check.curve.samples[i].compressive_stress() - r.dense_curve.samples[i].compressive_stress()) <=
                   settings.accept_tolerance * spec.sigma_target;
        if (!same) {
            try {
                OptResult again = run_descent(tiled, r.q, spec, bounds, settings);
                again.contact = r.contact;
                finish_verification(tiled, again, settings);
                again.stop_reason = "tiled re-optimization: " + again.stop_reason;
                return again;
            } catch (const Error &e) {
                r.accepted = false;
                r.strain_max = 0;
                r.stop_reason += std::string("; tiled re-optimization failed: ") + e.what();
            }
        }
    }
    return r;
}

std::vector<OptResult> extend_range(const CellTopology &topology, const ShapeParams &p0, double sigma_target,
                                    const ParamBounds &bounds, const OptimizeSettings &settings,
                                    const RangeSettings &range) {
    if (!(range.eps_step > 0) || !(range.eps_start > 0) || !(range.eps_last < 1))
        throw InvalidInput("extend_range: invalid strain range settings");
    OptimizeSettings s = settings;
    s.verify = true;
    // Every stage uses the contact scale of the starting cell.
    if (s.pipeline.solve.contact_settings.dhat == 0)
        s.pipeline.solve.contact_settings = ContactSettings::defaults(p0.a, p0.b, s.pipeline.material);
    const ParamLayout layout(topology);
    std::vector<OptResult> results;
    ShapeParams p = p0;
    for (int k = 0;; ++k) {
        const double eps = range.eps_start + k * range.eps_step;
        if (eps > range.eps_last + kStrainMatch) break;
        ObjectiveSpec spec = ObjectiveSpec::uniform(sigma_target, eps, range.samples);
        spec.shear_weight = range.shear_weight;
        OptResult r;
        try {
            r = optimize(topology, p, spec, bounds, s);
        } catch (const SolverFailure &e) {
            r.q = layout.to_vector(p);
            r.params = p;
            r.spec = spec;
            r.contact = s.pipeline.solve.contact_settings;
            r.stop_reason = e.what();
        }
        results.push_back(std::move(r));
        if (!results.back().accepted) break;
        p = results.back().params;
    }
    return results;
}

void write_result_json(std::ostream &out, const OptResult &result, const CellTopology &topology,
                       const std::string &curve_file) {
    const ParamLayout layout(topology);
    nlohmann::json q = nlohmann::json::object();
    for (int i = 0; i < layout.size() && i < result.q.size(); ++i) q[layout.name(i)] = result.q[i];
    nlohmann::json positions = nlohmann::json::array();
    for (const auto &p : result.params.positions) positions.push_back({p.x(), p.y()});
    nlohmann::json j = {
        {"topology", topology.id},
        {"q", q},
        {"params", {{"positions", positions}, {"radii", result.params.radii}, {"a", result.params.a}, {"b", result.params.b}}},
        {"spec",
         {{"sigma_target", result.spec.sigma_target},
          {"shear_weight", result.spec.shear_weight},
          {"shear_threshold", result.spec.shear_threshold},
          {"samples", result.spec.samples}}},
        {"accepted", result.accepted},
        {"strain_range", {result.strain_min, result.strain_max}},
        {"dense_max_deviation", finite_or_null(result.dense_max_deviation)},
        {"deviations", result.deviations},
        {"objective_trace", result.objective_trace},
        {"iterations", result.iterations},
        {"stop_reason", result.stop_reason},
        {"tiles", result.tiles},
        {"contact", {{"dhat", result.contact.dhat}, {"kappa", result.contact.kappa}}},
        {"reduced_accuracy", result.reduced_accuracy},
        {"curve_file", curve_file.empty() ? nlohmann::json(nullptr) : nlohmann::json(curve_file)}};
    out << j.dump(2) << '\n';
}

Eigen::VectorXd ResultBundle::q_vector(const ParamLayout &layout) const {
    if (static_cast<int>(q.size()) != layout.size())
        throw InvalidInput("result bundle: parameter count does not match the topology");
    Eigen::VectorXd v(layout.size());
    for (int i = 0; i < layout.size(); ++i) {
        auto it = std::find_if(q.begin(), q.end(), [&](const auto &e) { return e.first == layout.name(i); });
        if (it == q.end()) throw InvalidInput("result bundle: missing parameter " + layout.name(i));
        v[i] = it->second;
    }
    return v;
}

ResultBundle read_result_json(std::istream &in) {
    ResultBundle b;
    try {
        const nlohmann::json j = nlohmann::json::parse(in);
        b.topology = j.at("topology").get<std::string>();
        for (const auto &[name, value] : j.at("q").items()) b.q.emplace_back(name, value.get<double>());
        const auto &spec = j.at("spec");
        b.spec.sigma_target = spec.at("sigma_target").get<double>();
        b.spec.shear_weight = spec.at("shear_weight").get<double>();
        b.spec.shear_threshold = spec.at("shear_threshold").get<double>();
        b.spec.samples = spec.at("samples").get<std::vector<double>>();
        b.accepted = j.at("accepted").get<bool>();
        b.strain_max = j.at("strain_range").at(1).get<double>();
        b.contact.dhat = j.at("contact").at("dhat").get<double>();
        b.contact.kappa = j.at("contact").at("kappa").get<double>();
    } catch (const nlohmann::json::exception &e) {
        throw InvalidInput(std::string("result bundle: ") + e.what());
    }
    b.spec.validate();
    return b;
}

} // namespace flatcell

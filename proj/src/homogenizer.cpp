#include "flatcell/homogenizer.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>

namespace flatcell {

void SolveSettings::validate() const {
    if (!(penalty_w0 > 0) || !(max_penalty >= penalty_w0)) throw InvalidInput("solve settings: bad penalty weights");
    if (!(tol_grad >= 0) || !(tol_constraint > 0)) throw InvalidInput("solve settings: tolerances must be positive");
    if (max_newton_iterations < 1) throw InvalidInput("solve settings: max_newton_iterations must be at least 1");
}

std::vector<double> StressStrainCurve::strains() const {
    std::vector<double> out;
    for (const auto &s : samples) out.push_back(s.strain);
    return out;
}

std::vector<double> StressStrainCurve::compressive_stress() const {
    std::vector<double> out;
    for (const auto &s : samples) out.push_back(s.compressive_stress());
    return out;
}

void StressStrainCurve::write_csv(std::ostream &out) const {
    const auto old = out.precision(17);
    out << "strain,stress11,G00,G01,newton_iters,wall_ms\n";
    for (const auto &s : samples)
        out << s.strain << ',' << s.compressive_stress() << ',' << s.g00 << ',' << s.g01 << ','
            << s.newton_iterations << ',' << s.wall_ms << '\n';
    out.precision(old);
}

StressStrainCurve StressStrainCurve::read_csv(std::istream &in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("strain,stress11", 0) != 0)
        throw InvalidInput("curve CSV: missing header");
    StressStrainCurve curve;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<std::string> cols;
        while (std::getline(row, cell, ',')) cols.push_back(cell);
        if (cols.size() != 6) throw InvalidInput("curve CSV: expected 6 columns in '" + line + "'");
        CurveSample s;
        try {
            s.strain = std::stod(cols[0]);
            s.stress(1, 1) = -std::stod(cols[1]);
            s.g00 = std::stod(cols[2]);
            s.g01 = std::stod(cols[3]);
            s.newton_iterations = std::stoi(cols[4]);
            s.wall_ms = std::stod(cols[5]);
        } catch (const std::logic_error &) {
            throw InvalidInput("curve CSV: malformed row '" + line + "'");
        }
        curve.samples.push_back(std::move(s));
    }
    return curve;
}

Homogenizer::Homogenizer(PeriodicMesh mesh, Material material, SolveSettings settings)
    : mesh_(std::make_unique<const PeriodicMesh>(std::move(mesh))), settings_(settings) {
    material.validate();
    settings_.validate();
    mesh_->validate();
    dofs_ = build_dof_map(*mesh_);
    elastic_ = std::make_unique<ElasticModel>(*mesh_, dofs_, material);
    tiling_ = std::make_unique<TiledSurface>(*mesh_, dofs_);
    contact_ = settings_.contact_settings;
    if (contact_.dhat == 0)
        contact_ = ContactSettings::defaults(mesh_->lattice.col(0).norm(), mesh_->lattice.col(1).norm(), material);
    tol_grad_ = settings_.tol_grad > 0 ? settings_.tol_grad : 1e-6 * material.mu * mesh_->cell_area();
}

Eigen::VectorXd Homogenizer::active_mask(bool g11_free) const {
    Eigen::VectorXd m = Eigen::VectorXd::Ones(dofs_.size());
    if (dofs_.pinned_slot >= 0) m.segment(2 * dofs_.pinned_slot, 2).setZero();
    if (!g11_free) m[dofs_.index_g11()] = 0;
    return m;
}

MeritEvaluation Homogenizer::evaluate(const HomogState &state, double strain, double weight, int order) const {
    MeritEvaluation r;
    auto el = elastic_->evaluate(state, order);
    r.elastic = el.energy;
    const double gap = state.g11() + strain;
    r.penalty = weight * gap * gap;
    if (order >= 1) r.grad = std::move(el.grad);
    if (order >= 2) r.hess = std::move(el.hess);
    if (contact_enabled()) {
        auto c = contact_energy(*tiling_, state, contact_, order);
        r.contact = c.energy;
        r.active_pairs = static_cast<int>(c.tiled.active.size());
        r.min_distance = c.tiled.min_distance;
        if (order >= 1) r.grad += c.grad;
        if (order >= 2) r.hess += c.hess;
    }
    r.energy = r.elastic + r.contact + r.penalty;
    const int g = dofs_.index_g11();
    if (order >= 1) r.grad[g] += 2 * weight * gap;
    if (order >= 2) {
        r.hess.makeCompressed();
        r.hess.coeffRef(g, g) += 2 * weight;
    }
    return r;
}

double Homogenizer::step_limit(const HomogState &state, const Eigen::VectorXd &dir) const {
    return flatcell::step_limit(*elastic_, contact_enabled() ? tiling_.get() : nullptr, state, dir);
}

namespace {

void mask_matrix(SparseMat &H, const Eigen::VectorXd &mask) {
    for (int k = 0; k < H.outerSize(); ++k)
        for (SparseMat::InnerIterator it(H, k); it; ++it)
            if (mask[it.row()] == 0 || mask[it.col()] == 0) it.valueRef() = it.row() == it.col() ? 1.0 : 0.0;
}

} // namespace

SparseMat Homogenizer::constrained_hessian(const HomogState &state) const {
    SparseMat H = evaluate(state, -state.g11(), 0.0, 2).hess;
    mask_matrix(H, active_mask(false));
    return H;
}

HomogState Homogenizer::minimize(HomogState state, double strain, double weight, bool g11_free,
                                 int *iterations) const {
    const Eigen::VectorXd mask = active_mask(g11_free);
    SparseCholesky chol;
    double beta_prev = 0;
    // The fixed-G11 solve takes one Newton step past the tolerance: the gradient
    // bound alone leaves stresses accurate to only about 1e-5 relative.
    bool polish = !g11_free;
    MeritEvaluation ev = evaluate(state, strain, weight, 2);
    for (int it = 0;; ++it) {
        const Eigen::VectorXd g = ev.grad.cwiseProduct(mask);
        const double gnorm = g.norm();
        const bool converged = gnorm <= tol_grad_;
        if (converged && (!polish || gnorm == 0)) {
            if (iterations) *iterations += it;
            return state;
        }
        if (converged) polish = false;
        if (!converged && it >= settings_.max_newton_iterations) {
            std::ostringstream msg;
            msg << "Newton iteration cap reached (gradient norm " << gnorm << ", tolerance " << tol_grad_ << ")";
            throw SolverFailure(msg.str());
        }
        SparseMat H = std::move(ev.hess);
        mask_matrix(H, mask);
        const double beta = force_spd(H, chol, beta_prev > 0 ? std::max(1e-8, beta_prev / 8) : 1e-8);
        beta_prev = beta;
        const Eigen::VectorXd p = (-chol.solve(g)).cwiseProduct(mask);

        const double alpha_max = step_limit(state, p);
        const double roundoff = 1e-13 * (std::abs(ev.elastic) + std::abs(ev.contact) + std::abs(ev.penalty));
        double alpha = alpha_max;
        bool accepted = false;
        HomogState trial;
        MeritEvaluation next;
        for (; alpha >= 1e-12; alpha *= 0.5) {
            trial.x = state.x + alpha * p;
            double e;
            try {
                e = evaluate(trial, strain, weight, 0).energy;
            } catch (const InadmissibleState &) {
                continue;
            }
            if (e <= ev.energy) {
                next = evaluate(trial, strain, weight, 2);
                accepted = true;
                break;
            }
            if (e - ev.energy <= roundoff) {
                // Energy differences are at roundoff level: accept when the gradient still drops.
                next = evaluate(trial, strain, weight, 2);
                if (next.grad.cwiseProduct(mask).norm() < gnorm) {
                    accepted = true;
                    break;
                }
            }
        }
        if (!accepted && converged) {
            if (iterations) *iterations += it;
            return state;
        }
        if (!accepted) {
            std::ostringstream msg;
            msg << "line search failed (gradient norm " << gnorm << ")";
            throw SolverFailure(msg.str());
        }
        if (settings_.trace) {
            nlohmann::json line = {{"strain", strain},
                                   {"phase", g11_free ? "penalty" : "constrained"},
                                   {"weight", weight},
                                   {"iteration", it},
                                   {"energy", ev.energy},
                                   {"grad_norm", gnorm},
                                   {"beta", beta},
                                   {"step_max", alpha_max},
                                   {"step", alpha},
                                   {"active_pairs", next.active_pairs},
                                   {"min_distance", std::isfinite(next.min_distance) ? nlohmann::json(next.min_distance)
                                                                                     : nlohmann::json(nullptr)}};
            *settings_.trace << line.dump() << '\n';
        }
        state = std::move(trial);
        ev = std::move(next);
    }
}

HomogState Homogenizer::newton_solve(HomogState state, double strain, double weight, int *iterations) const {
    if (!(weight > 0)) throw InvalidInput("newton_solve: penalty weight must be positive");
    return minimize(std::move(state), strain, weight, true, iterations);
}

HomogState Homogenizer::constrained_newton_solve(HomogState state, double strain, int *iterations) const {
    state.x[dofs_.index_g11()] = -strain;
    return minimize(std::move(state), strain, 0.0, false, iterations);
}

HomogState Homogenizer::incremental_solve(const HomogState &prev, double strain, int *iterations) const {
    if (prev.x.size() != dofs_.size()) throw InvalidInput("incremental_solve: state size does not match the mesh");
    double w0 = settings_.penalty_w0;
    const double e0 = std::abs(prev.g11() + strain);
    HomogState state = prev;
    if (e0 >= settings_.tol_constraint) {
        double w = w0;
        double e = e0;
        do {
            if (w > settings_.max_penalty) {
                std::ostringstream msg;
                msg << "penalty loop did not converge (constraint error " << e << ")";
                throw SolverFailure(msg.str());
            }
            state = newton_solve(state, strain, w, iterations);
            e = std::abs(state.g11() + strain);
            w *= 2;
            if (e > e0) {
                w0 = w;
                state = prev;
            }
        } while (e >= settings_.tol_constraint);
    }
    return constrained_newton_solve(std::move(state), strain, iterations);
}

StressStrainCurve Homogenizer::solve_curve(const std::vector<double> &strains, std::string *failure) const {
    validate_schedule(strains);
    StressStrainCurve curve;
    HomogState state = HomogState::zero(dofs_);
    for (double eps : strains) {
        const auto start = std::chrono::steady_clock::now();
        CurveSample s;
        s.strain = eps;
        try {
            state = incremental_solve(state, eps, &s.newton_iterations);
        } catch (const SolverFailure &e) {
            std::ostringstream msg;
            msg << "at strain " << eps << ": " << e.what();
            if (!failure) throw SolverFailure(msg.str());
            *failure = msg.str();
            break;
        }
        s.stress = elastic_->effective_stress(state);
        s.g00 = state.g00();
        s.g01 = state.g01();
        s.state = state;
        if (settings_.timing)
            s.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        curve.samples.push_back(std::move(s));
    }
    return curve;
}

HomogState mirror_state(const PeriodicMesh &mesh, const PeriodicDofMap &dofs, const HomogState &state) {
    if (state.x.size() != dofs.size()) throw InvalidInput("mirror_state: state size does not match the mesh");
    const auto map = mirror_node_map(mesh);
    HomogState m = HomogState::zero(dofs);
    for (int i = 0; i < mesh.num_nodes(); ++i) {
        if (!mesh.is_master(i)) continue;
        const int src = 2 * dofs.slot[i], dst = 2 * dofs.slot[map[i]];
        m.x[dst] = -state.x[src];
        m.x[dst + 1] = state.x[src + 1];
    }
    m.x[dofs.index_g00()] = state.g00();
    m.x[dofs.index_g01()] = -state.g01();
    m.x[dofs.index_g11()] = state.g11();
    return m;
}

void validate_schedule(const std::vector<double> &strains) {
    for (std::size_t i = 0; i < strains.size(); ++i) {
        if (!(strains[i] >= 0 && strains[i] < 1)) throw InvalidInput("strain schedule entries must lie in [0, 1)");
        if (i > 0 && !(strains[i] > strains[i - 1])) throw InvalidInput("strain schedule must be strictly increasing");
    }
}

std::vector<double> uniform_schedule(double step, double last) {
    if (!(step > 0) || !(last >= 0)) throw InvalidInput("uniform_schedule: step must be positive");
    std::vector<double> out;
    const int n = static_cast<int>(std::floor(last / step + 1e-9));
    for (int k = 1; k <= n; ++k) out.push_back(k * step);
    return out;
}

StressStrainCurve solve_curve(const PeriodicMesh &mesh, const Material &material, const std::vector<double> &strains,
                              const SolveSettings &settings) {
    return Homogenizer(mesh, material, settings).solve_curve(strains);
}

StressStrainCurve homogenize_tiled(const PeriodicMesh &mesh, int n, const Material &material,
                                   const std::vector<double> &strains, const SolveSettings &settings) {
    if (n != 1 && n != 2) throw InvalidInput("homogenize_tiled: tile count must be 1 or 2");
    SolveSettings s = settings;
    if (s.contact_settings.dhat == 0)
        s.contact_settings = ContactSettings::defaults(mesh.lattice.col(0).norm(), mesh.lattice.col(1).norm(), material);
    if (n == 1) return solve_curve(mesh, material, strains, s);
    return solve_curve(make_supercell(mesh, n), material, strains, s);
}

} // namespace flatcell

#include <doctest.h>

#include "flatcell/homogenizer.hpp"
#include "flatcell/inflator.hpp"

#include <boost/math/tools/roots.hpp>
#include <json.hpp>

#include <cmath>
#include <sstream>

using namespace flatcell;

namespace {

const Material kRubber = Material::from_young_poisson(1e6, 0.45);
constexpr double kCell = 0.01;

double free_lateral(double eps, const Material &m) {
    auto p00 = [&](double g) {
        Mat2 F;
        F << 1 + g, 0, 0, 1 - eps;
        return neo_hookean(F, m, false).P(0, 0);
    };
    boost::math::tools::eps_tolerance<double> tol(52);
    const auto [lo, hi] = boost::math::tools::bisect(p00, -0.5, 2.0, tol);
    return 0.5 * (lo + hi);
}

/// Single-point oracle for the homogeneous solid: P11 of diag(1 + g, 1 - eps) with g stress free.
double solid_stress11(double eps) {
    Mat2 F;
    F << 1 + free_lateral(eps, kRubber), 0, 0, 1 - eps;
    return neo_hookean(F, kRubber, false).P(1, 1);
}

PeriodicMesh solid() { return make_solid_cell_mesh(kCell, kCell, 6); }

/// Diamond frame connected across both periods.
PeriodicMesh frame_mesh() {
    static const CellTopology t = parse_topology(R"({"id": "frame",
        "nodes": [[0.5, 0.0], [0.0, 0.5], [1.0, 0.5], [0.5, 1.0]],
        "edges": [[0, 1], [0, 2], [1, 3], [2, 3]],
        "radius": 0.08})");
    InflatorSettings s;
    s.resolution = 48;
    return inflate(t, default_params(t), s);
}

PeriodicMesh slab() {
    static const CellTopology t =
        parse_topology(R"({"nodes": [[0.0, 0.5], [1.0, 0.5]], "edges": [[0, 1]], "radius": 0.3})");
    InflatorSettings s;
    s.resolution = 32;
    s.field.blend_exponent = 0;
    return inflate(t, default_params(t), s);
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

} // namespace

TEST_CASE("force_spd leaves SPD matrices unchanged") {
    SparseMat I(3, 3);
    I.setIdentity();
    double beta = -1;
    const SparseMat out = force_spd(I, &beta);
    CHECK(beta == 0.0);
    CHECK((Eigen::MatrixXd(out) - Eigen::MatrixXd(I)).norm() == 0.0);
}

TEST_CASE("force_spd shifts an indefinite matrix by the first doubling that exceeds its negative eigenvalue") {
    SparseMat H(2, 2);
    H.insert(0, 0) = 1;
    H.insert(1, 1) = -1;
    double beta = 0;
    const SparseMat out = force_spd(H, &beta);
    CHECK(beta == 1e-8 * std::ldexp(1.0, 27));
    CHECK(beta == doctest::Approx(1.342).epsilon(1e-3));
    CHECK(out.coeff(0, 0) == 1 + beta);
    CHECK(out.coeff(1, 1) == -1 + beta);
}

TEST_CASE("force_spd on the zero matrix returns the smallest shift") {
    SparseMat Z(4, 4);
    for (int i = 0; i < 4; ++i) Z.insert(i, i) = 0.0;
    double beta = 0;
    const SparseMat out = force_spd(Z, &beta);
    CHECK(beta == 1e-8);
    CHECK(out.coeff(2, 2) == 1e-8);
}

TEST_CASE("force_spd rejects matrices no shift can fix") {
    SparseMat H(1, 1);
    H.insert(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(force_spd(H), SolverFailure);
}

TEST_CASE("sparse Cholesky reuses the symbolic analysis") {
    SparseMat H(3, 3);
    for (int i = 0; i < 3; ++i) H.insert(i, i) = 2.0 + i;
    H.makeCompressed();
    SparseCholesky chol;
    REQUIRE(chol.factorize(H));
    H.coeffRef(1, 1) = 7;
    REQUIRE(chol.factorize(H));
    CHECK(chol.num_analyses() == 1);
    CHECK(chol.solve(Eigen::Vector3d(2, 7, 4))[1] == doctest::Approx(1.0));
}

TEST_CASE("newton_solve returns immediately at a minimizer") {
    Homogenizer h(solid(), kRubber);
    int iters = 0;
    const HomogState s = h.newton_solve(HomogState::zero(h.dofs()), 0.0, 1e4, &iters);
    CHECK(iters == 0);
    CHECK(s.x.norm() == 0.0);
}

TEST_CASE("penalized solve satisfies the penalty stationarity identity") {
    Homogenizer h(solid(), kRubber);
    int iters = 0;
    const double w = 1e4;
    const HomogState s = h.newton_solve(HomogState::zero(h.dofs()), 0.02, w, &iters);
    CHECK(iters > 0);
    const auto el = h.elastic().evaluate(s, 1);
    const double dW = el.grad[h.dofs().index_g11()];
    const double residual = std::abs(s.g11() + 0.02);
    CHECK(residual > 0);
    CHECK(residual <= (std::abs(dW) + h.tol_grad()) / (2 * w));
    CHECK(residual >= (std::abs(dW) - h.tol_grad()) / (2 * w));
}

TEST_CASE("constrained solve fixes G11 exactly and matches the homogeneous oracle") {
    Homogenizer h(solid(), kRubber);
    for (double eps : {0.01, 0.05, 0.1}) {
        HomogState start = HomogState::zero(h.dofs());
        const HomogState s = h.constrained_newton_solve(start, eps);
        CHECK(s.g11() == -eps);
        const auto ev = h.evaluate(s, eps, 0, 1);
        CHECK(ev.grad.cwiseProduct(h.active_mask(false)).norm() <= h.tol_grad());
        CHECK(rel(h.elastic().effective_stress(s)(1, 1), solid_stress11(eps)) < 1e-6);
        CHECK(rel(s.g00(), free_lateral(eps, kRubber)) < 1e-6);
        CHECK(std::abs(s.g01()) < 1e-10);
    }
}

TEST_CASE("incremental solve") {
    Homogenizer h(solid(), kRubber);
    const HomogState zero = HomogState::zero(h.dofs());

    SUBCASE("same strain succeeds immediately") {
        int iters = -1;
        iters = 0;
        const HomogState s = h.incremental_solve(zero, 0.0, &iters);
        CHECK(iters == 0);
        CHECK(s.x == zero.x);
    }
    SUBCASE("path independence in the convex case") {
        const HomogState one = h.incremental_solve(zero, 0.05);
        const HomogState two = h.incremental_solve(h.incremental_solve(zero, 0.02), 0.05);
        const double s1 = h.elastic().effective_stress(one)(1, 1);
        const double s2 = h.elastic().effective_stress(two)(1, 1);
        CHECK(rel(s1, s2) < 1e-10);
        CHECK(one.g11() == -0.05);
    }
    SUBCASE("warm start from a converged sample needs at most one iteration") {
        const HomogState s = h.incremental_solve(zero, 0.04);
        int iters = 0;
        h.incremental_solve(s, 0.04, &iters);
        CHECK(iters <= 1);
    }
    SUBCASE("state of another mesh is rejected") {
        CHECK_THROWS_AS(h.incremental_solve(HomogState{Eigen::VectorXd::Zero(5)}, 0.01), InvalidInput);
    }
}

TEST_CASE("solve_curve on the solid cell") {
    Homogenizer h(solid(), kRubber);
    CHECK(h.solve_curve({}).samples.empty());

    const auto schedule = uniform_schedule(0.01, 0.1);
    REQUIRE(schedule.size() == 10);
    const auto curve = h.solve_curve(schedule);
    REQUIRE(curve.samples.size() == 10);
    double prev = 0;
    for (const auto &s : curve.samples) {
        CHECK(s.compressive_stress() > prev);
        prev = s.compressive_stress();
        CHECK(s.state.g11() == -s.strain);
        CHECK(rel(s.stress(1, 1), solid_stress11(s.strain)) < 1e-6);
        CHECK(s.wall_ms == 0.0);
    }

    std::ostringstream csv;
    curve.write_csv(csv);
    CHECK(csv.str().rfind("strain,stress11,G00,G01,newton_iters,wall_ms\n", 0) == 0);

    CHECK_THROWS_AS(h.solve_curve({0.02, 0.01}), InvalidInput);
    CHECK_THROWS_AS(h.solve_curve({0.5, 1.0}), InvalidInput);

    std::istringstream written(csv.str());
    const auto reread = StressStrainCurve::read_csv(written);
    REQUIRE(reread.samples.size() == 10);
    CHECK(reread.samples[3].compressive_stress() == curve.samples[3].compressive_stress());
    std::istringstream bad("strain,stress\n0.1,2\n");
    CHECK_THROWS_AS(StressStrainCurve::read_csv(bad), InvalidInput);
}

TEST_CASE("solve_curve can return the solved prefix") {
    SolveSettings s;
    s.max_newton_iterations = 2;
    Homogenizer h(solid(), kRubber, s);
    CHECK_THROWS_AS(h.solve_curve({0.01, 0.2}), SolverFailure);
    std::string failure;
    const auto partial = h.solve_curve({0.01, 0.2}, &failure);
    CHECK(partial.samples.size() < 2);
    CHECK(failure.find("at strain") == 0);
}

TEST_CASE("rotated solid cell has the same response") {
    const auto base = solve_curve(solid(), kRubber, {0.05, 0.1});
    const auto rot = solve_curve(rotate_rest(solid(), 20.0 * M_PI / 180.0), kRubber, {0.05, 0.1});
    for (int i = 0; i < 2; ++i) CHECK(rel(rot.samples[i].stress(1, 1), base.samples[i].stress(1, 1)) < 1e-8);
}

TEST_CASE("2x2 supercell of the solid cell") {
    const auto mesh = solid();
    const auto one = homogenize_tiled(mesh, 1, kRubber, {0.03, 0.06});
    const auto two = homogenize_tiled(mesh, 2, kRubber, {0.03, 0.06});
    for (int i = 0; i < 2; ++i) {
        CHECK(rel(two.samples[i].stress(1, 1), one.samples[i].stress(1, 1)) < 1e-8);
        CHECK(std::abs(two.samples[i].g00 - one.samples[i].g00) < 1e-8);
    }
    const auto cell = build_dof_map(mesh);
    const auto super = build_dof_map(make_supercell(mesh, 2));
    CHECK(super.size() == 4 * cell.num_fluct() + 3);
    CHECK_THROWS_AS(homogenize_tiled(mesh, 3, kRubber, {0.01}), InvalidInput);
}

TEST_CASE("mirrored solution is equivalent") {
    const PeriodicMesh mesh = frame_mesh();
    Homogenizer h(mesh, kRubber);
    HomogState s = h.incremental_solve(HomogState::zero(h.dofs()), 0.08);
    REQUIRE(h.evaluate(s, 0.08, 0, 0).elastic > 1e-4);
    // Break the symmetry so the check is not trivial.
    s.x[h.dofs().index_g01()] += 1e-3;
    for (int i = 0; i < h.dofs().num_fluct(); ++i) s.x[i] += 1e-6 * std::sin(1.0 + i);
    const HomogState m = mirror_state(mesh, h.dofs(), s);

    const auto a = h.evaluate(s, 0.08, 0, 0);
    const auto b = h.evaluate(m, 0.08, 0, 0);
    CHECK(rel(b.energy, a.energy) < 1e-9);
    CHECK(rel(h.elastic().effective_stress(m)(1, 1), h.elastic().effective_stress(s)(1, 1)) < 1e-9);
    CHECK(m.g01() == -s.g01());
    CHECK(std::abs(s.g01()) > 1e-4);
}

TEST_CASE("collision-limited steps keep the slab intersection free") {
    const PeriodicMesh mesh = slab();
    std::ostringstream trace;
    SolveSettings settings;
    settings.trace = &trace;
    Homogenizer h(mesh, kRubber, settings);
    const HomogState start = HomogState::zero(h.dofs());
    const double e_start = h.evaluate(start, 0.5, 1e4, 0).energy;
    const HomogState s = h.newton_solve(start, 0.5, 1e4);

    std::istringstream lines(trace.str());
    std::string line;
    REQUIRE(std::getline(lines, line));
    const auto first = nlohmann::json::parse(line);
    CHECK(first["step_max"].get<double>() < 1.0);
    CHECK(first["step"].get<double>() <= first["step_max"].get<double>());

    double prev = e_start;
    bool limited = false;
    while (true) {
        const auto j = nlohmann::json::parse(line);
        limited = limited || j["step_max"].get<double>() < 1.0;
        if (!std::getline(lines, line)) break;
        const double e = nlohmann::json::parse(line)["energy"].get<double>();
        CHECK(e <= prev);
        prev = e;
    }
    CHECK(limited);
    const auto ev = h.evaluate(s, 0.5, 1e4, 0);
    CHECK(ev.energy < e_start);
    CHECK(ev.min_distance > 0);
    // The 0.4 b gap between layers closes before the target strain: the layers end in barrier contact.
    CHECK(ev.active_pairs > 0);
    CHECK(ev.min_distance < h.contact_settings().dhat);
    CHECK(h.elastic().min_det(s) > 0);
}

TEST_CASE("small-strain tangent equals the plane-strain uniaxial modulus") {
    const double E = 1e6, nu = 0.45, eps = 1e-3;
    const auto curve = solve_curve(solid(), kRubber, {eps});
    const double modulus = curve.samples[0].compressive_stress() / eps;
    CHECK(modulus == doctest::Approx(E / (1 - nu * nu)).epsilon(0.01));
}

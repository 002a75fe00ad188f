#include <doctest.h>

#include "flatcell/shape_opt.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>

using namespace flatcell;

namespace {

const Material kRubber = Material::from_young_poisson(1e6, 0.45);

const CellTopology &frame_topology() {
    static const CellTopology t = parse_topology(R"({"id": "frame",
        "nodes": [[0.5, 0.0], [0.0, 0.5], [1.0, 0.5], [0.5, 1.0]],
        "edges": [[0, 1], [0, 2], [1, 3], [2, 3]],
        "radius": 0.08})");
    return t;
}

/// Horizontal slab with a thin gap that closes near 6% strain.
const CellTopology &slab_topology() {
    static const CellTopology t =
        parse_topology(R"({"id": "slab", "nodes": [[0.0, 0.5], [1.0, 0.5]], "edges": [[0, 1]], "radius": 0.47})");
    return t;
}

/// Covers the whole cell.
const CellTopology &solid_topology() {
    static const CellTopology t =
        parse_topology(R"({"id": "solid", "nodes": [[0.0, 0.5], [1.0, 0.5]], "edges": [[0, 1]], "radius": 0.75})");
    return t;
}

PipelineSettings coarse(int resolution) {
    PipelineSettings s;
    s.material = kRubber;
    s.inflator.resolution = resolution;
    s.inflator.field.blend_exponent = 8;
    return s;
}

StressStrainCurve make_curve(const std::vector<std::array<double, 3>> &rows) {
    StressStrainCurve c;
    for (const auto &[strain, stress, g01] : rows) {
        CurveSample s;
        s.strain = strain;
        s.stress(1, 1) = -stress;
        s.g01 = g01;
        c.samples.push_back(s);
    }
    return c;
}

ObjectiveSpec spec_at(double sigma, std::vector<double> samples) {
    ObjectiveSpec s;
    s.sigma_target = sigma;
    s.samples = std::move(samples);
    return s;
}

void check_adjoint_matches_fd(const CellTopology &t, int resolution, const ObjectiveSpec &spec) {
    const ShapePipeline pipe(t, default_params(t), coarse(resolution));
    const Eigen::VectorXd q0 = pipe.layout().to_vector(default_params(t));
    const PipelineEvaluation ev = pipe.evaluate(q0, spec, true);
    REQUIRE(ev.J > 1e-3);
    for (int k = 0; k < q0.size(); ++k) {
        const double d = 1e-5 * (k >= pipe.layout().index_a() ? q0[k] : 1.0);
        Eigen::VectorXd qp = q0, qm = q0;
        qp[k] += d;
        qm[k] -= d;
        const double fd = (pipe.evaluate(qp, spec, false).J - pipe.evaluate(qm, spec, false).J) / (2 * d);
        INFO(pipe.layout().name(k) << " adjoint " << ev.grad[k] << " fd " << fd);
        CHECK(std::abs(ev.grad[k] - fd) <= 1e-3 * std::max(std::abs(fd), 1e-6 * ev.grad.cwiseAbs().maxCoeff()));
    }
}

} // namespace

TEST_CASE("objective arithmetic") {
    const ObjectiveSpec two = spec_at(1e4, {0.1, 0.2});
    CHECK(objective(make_curve({{0.1, 1e4, 0.0}, {0.2, 1e4, 0.05}}), two).J == 0.0);

    const ObjectiveSpec one = spec_at(1e4, {0.1});
    CHECK(objective(make_curve({{0.1, 1.1e4, 0.0}}), one).J == doctest::Approx(0.01).epsilon(1e-12));
    const ObjectiveValue shear = objective(make_curve({{0.1, 1e4, 0.15}}), one);
    CHECK(shear.J == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(shear.shear_term == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(shear.d_g01[0] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(objective(make_curve({{0.1, 1e4, -0.15}}), one).d_g01[0] == doctest::Approx(-0.2).epsilon(1e-12));

    SUBCASE("stress partial is the derivative in sigma11") {
        const ObjectiveValue v = objective(make_curve({{0.1, 1.3e4, 0.0}}), one);
        const double h = 1e-3;
        const double fd =
            (objective(make_curve({{0.1, 1.3e4 - h, 0.0}}), one).J - objective(make_curve({{0.1, 1.3e4 + h, 0.0}}), one).J) /
            (2 * h);
        CHECK(v.d_stress11[0] == doctest::Approx(fd).epsilon(1e-7));
        CHECK(v.deviations[0] == doctest::Approx(0.3));
    }

    SUBCASE("misaligned samples") {
        CHECK_THROWS_AS(objective(make_curve({{0.1, 1e4, 0.0}}), two), InvalidInput);
        CHECK_THROWS_AS(objective(make_curve({{0.1, 1e4, 0.0}, {0.25, 1e4, 0.0}}), two), InvalidInput);
    }

    SUBCASE("spec validation") {
        CHECK_THROWS_AS(spec_at(0, {0.1}).validate(), InvalidInput);
        CHECK_THROWS_AS(spec_at(1, {0.05}).validate(), InvalidInput);
        CHECK_THROWS_AS(spec_at(1, {0.2, 0.2}).validate(), InvalidInput);
        CHECK_THROWS_AS(spec_at(1, {0.5, 1.0}).validate(), InvalidInput);
        const ObjectiveSpec u = ObjectiveSpec::uniform(1e4, 0.3);
        REQUIRE(u.samples.size() == 5);
        CHECK(u.samples.front() == 0.1);
        CHECK(u.samples.back() == 0.3);
        CHECK(u.samples[2] == doctest::Approx(0.2));
    }
}

TEST_CASE("forward schedule merges ramp and samples") {
    const auto s = forward_schedule({0.1, 0.175, 0.25}, 0.05);
    const std::vector<double> expected{0.05, 0.1, 0.15, 0.175, 0.2, 0.25};
    REQUIRE(s.size() == expected.size());
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    CHECK(s[1] == 0.1);
    CHECK(s.back() == 0.25);
}

TEST_CASE("adjoint gradient matches end-to-end finite differences") {
    SUBCASE("frame, two ranges") {
        check_adjoint_matches_fd(frame_topology(), 32, spec_at(1e4, {0.1, 0.15}));
        check_adjoint_matches_fd(frame_topology(), 32, spec_at(8e3, {0.1, 0.2}));
    }
    SUBCASE("slab in contact") {
        const ShapePipeline pipe(slab_topology(), default_params(slab_topology()), coarse(16));
        const Homogenizer h(pipe.mesh(pipe.layout().to_vector(default_params(slab_topology()))), kRubber);
        const HomogState s = h.incremental_solve(h.incremental_solve(HomogState::zero(h.dofs()), 0.05), 0.1);
        REQUIRE(contact_energy(h.tiling(), s, h.contact_settings(), 0).tiled.active.size() > 0);
        check_adjoint_matches_fd(slab_topology(), 16, spec_at(1e5, {0.1, 0.12}));
    }
}

TEST_CASE("adjoint gradient vanishes at a zero objective") {
    const ShapePipeline pipe(frame_topology(), default_params(frame_topology()), coarse(24));
    const Eigen::VectorXd q0 = pipe.layout().to_vector(default_params(frame_topology()));
    const PipelineEvaluation probe = pipe.evaluate(q0, spec_at(1e4, {0.15}), false);
    const ObjectiveSpec exact = spec_at(probe.curve.samples[0].compressive_stress(), {0.15});
    const PipelineEvaluation ev = pipe.evaluate(q0, exact, true);
    CHECK(ev.J < 1e-24);
    const PipelineEvaluation off = pipe.evaluate(q0, spec_at(0.8 * exact.sigma_target, {0.15}), true);
    CHECK(ev.grad.norm() <= 1e-9 * off.grad.norm());

    SUBCASE("no contact term without active pairs") {
        const Homogenizer h(pipe.mesh(q0), kRubber);
        const HomogState rest = HomogState::zero(h.dofs());
        REQUIRE(contact_energy(h.tiling(), rest, h.contact_settings(), 0).tiled.active.empty());
        CHECK(contact_rest_vjp(h.tiling(), rest, h.contact_settings(),
                               Eigen::VectorXd::Ones(h.dofs().size()))
                  .norm() == 0.0);
    }
}

TEST_CASE("objective is invariant under solution reflection") {
    const PeriodicMesh mesh = ShapePipeline(frame_topology(), default_params(frame_topology()), coarse(32))
                                  .mesh(ParamLayout(frame_topology()).to_vector(default_params(frame_topology())));
    const Homogenizer h(mesh, kRubber);
    HomogState s = h.incremental_solve(HomogState::zero(h.dofs()), 0.1);
    s.x[h.dofs().index_g01()] = 0.08;
    s = h.constrained_newton_solve(s, 0.1);
    const HomogState m = mirror_state(mesh, h.dofs(), s);
    auto sample = [&](const HomogState &st) {
        CurveSample c;
        c.strain = 0.1;
        c.stress = h.elastic().effective_stress(st);
        c.g01 = st.g01();
        StressStrainCurve curve;
        curve.samples.push_back(c);
        return curve;
    };
    ObjectiveSpec spec = spec_at(2e4, {0.1});
    spec.shear_threshold = 0;
    const double a = objective(sample(s), spec).J, b = objective(sample(m), spec).J;
    CHECK(std::abs(a - b) <= 1e-9 * std::abs(a));
    CHECK(m.g01() == -s.g01());
}

TEST_CASE("optimize") {
    const CellTopology &t = frame_topology();
    const ShapeParams p0 = default_params(t);
    const ParamLayout layout(t);
    OptimizeSettings settings;
    settings.pipeline = coarse(24);

    SUBCASE("an optimal start returns after zero iterations") {
        const ShapePipeline pipe(t, p0, settings.pipeline);
        const double sigma = pipe.evaluate(layout.to_vector(p0), spec_at(1e4, {0.1}), false).curve.samples[0].compressive_stress();
        settings.verify = false;
        const OptResult r = optimize(t, p0, spec_at(sigma, {0.1}), default_bounds(layout, layout.to_vector(p0)), settings);
        CHECK(r.iterations == 0);
        CHECK(r.stop_reason == "objective");
        CHECK(r.q == layout.to_vector(p0));
        CHECK(r.objective_trace.size() == 1);
    }

    SUBCASE("accepted objective values never increase and the trace is JSON lines") {
        std::ostringstream trace;
        settings.trace = &trace;
        settings.max_iterations = 3;
        settings.verify = false;
        const OptResult r = optimize(t, p0, spec_at(5e3, {0.1, 0.15}), default_bounds(layout, layout.to_vector(p0)), settings);
        REQUIRE(r.objective_trace.size() >= 2);
        for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
            CHECK(r.objective_trace[i] <= r.objective_trace[i - 1]);
        CHECK(r.objective_trace.back() < r.objective_trace.front());
        const auto bounds = default_bounds(layout, layout.to_vector(p0));
        for (int i = 0; i < r.q.size(); ++i) {
            CHECK(r.q[i] >= bounds.lower[i]);
            CHECK(r.q[i] <= bounds.upper[i]);
        }
        CHECK(r.q[layout.index_b()] == p0.b);
        std::istringstream lines(trace.str());
        std::string line;
        int count = 0;
        while (std::getline(lines, line)) {
            const auto j = nlohmann::json::parse(line);
            CHECK(j.contains("J"));
            CHECK(j.contains("grad_norm"));
            CHECK(j.contains("step"));
            CHECK(j["deviations"].size() == 2);
            ++count;
        }
        CHECK(count >= static_cast<int>(r.objective_trace.size()));
    }

    SUBCASE("bounds must contain the start") {
        ParamBounds b = default_bounds(layout, layout.to_vector(p0));
        b.lower[0] = b.upper[0] = layout.to_vector(p0)[0] + 0.1;
        CHECK_THROWS_AS(optimize(t, p0, spec_at(1e4, {0.1}), b, settings), InvalidInput);
    }
}

TEST_CASE("extend_range rejects a solid cell with a low target") {
    const CellTopology &t = solid_topology();
    const ShapeParams p0 = default_params(t);
    const ParamLayout layout(t);
    ParamBounds bounds = default_bounds(layout, layout.to_vector(p0));
    for (int i = 0; i < layout.size(); ++i)
        if (layout.entries()[i].kind == ParamLayout::Kind::Radius) bounds.lower[i] = bounds.upper[i] = p0.radii[0];
    OptimizeSettings settings;
    settings.pipeline = coarse(16);
    settings.max_iterations = 5;
    const auto results = extend_range(t, p0, 1e3, bounds, settings);
    REQUIRE(results.size() == 1);
    CHECK_FALSE(results[0].accepted);
    CHECK(results[0].spec.strain_max() == doctest::Approx(0.3));
    CHECK(results[0].dense_max_deviation > 0.1);
    CHECK(results[0].strain_max == 0);

    std::ostringstream json;
    write_result_json(json, results[0], t, "curve.csv");
    const auto j = nlohmann::json::parse(json.str());
    CHECK(j["accepted"] == false);
    CHECK(j["curve_file"] == "curve.csv");
    CHECK(j["q"].contains("a"));

    std::istringstream in(json.str());
    const ResultBundle bundle = read_result_json(in);
    CHECK(bundle.topology == "solid");
    CHECK_FALSE(bundle.accepted);
    CHECK(bundle.spec.samples == results[0].spec.samples);
    CHECK(bundle.q_vector(layout) == results[0].q);
    ResultBundle truncated = bundle;
    truncated.q.pop_back();
    CHECK_THROWS_AS(truncated.q_vector(layout), InvalidInput);
    std::istringstream broken("{\"q\": 1}");
    CHECK_THROWS_AS(read_result_json(broken), InvalidInput);
}

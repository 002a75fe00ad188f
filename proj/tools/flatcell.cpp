// Command-line driver: homogenize, optimize, sweep, coverage, select, verify.
#include "flatcell/config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace flatcell;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitPartial = 2;

struct Globals {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::string> output;
    std::optional<int> resolution;
    bool trace = false;
    bool timing = false;
};

std::string to_text(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

RunConfig make_config(const Globals &g, std::vector<std::string> flags) {
    std::vector<std::string> all = g.overrides;
    if (g.output) all.push_back("output_dir=\"" + *g.output + "\"");
    if (g.resolution) all.push_back("inflator.resolution=" + std::to_string(*g.resolution));
    all.insert(all.end(), flags.begin(), flags.end());
    RunConfig c = g.config.empty() ? parse_config("", all) : load_config(g.config, all);
    c.solve.timing = g.timing;
    validate_config(c);
    return c;
}

std::ofstream open_output(const fs::path &path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    return out;
}

ResultBundle read_bundle(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open bundle " + path.string());
    return read_result_json(in);
}

/// Topology and starting parameters: --params bundle first, then --topology.
std::pair<CellTopology, ShapeParams> resolve_start(const std::string &topology, const std::string &params,
                                                   ResultBundle *bundle_out) {
    ResultBundle bundle;
    if (!params.empty()) bundle = read_bundle(params);
    const std::string name = !topology.empty() ? topology : bundle.topology;
    if (name.empty()) throw InvalidInput("a topology (--topology) or a result bundle (--params) is required");
    CellTopology t = resolve_topology(name);
    ShapeParams p = default_params(t);
    if (!params.empty()) p = ParamLayout(t).from_vector(bundle.q_vector(ParamLayout(t)), p);
    if (bundle_out) *bundle_out = bundle;
    return {std::move(t), std::move(p)};
}

/// "solid" names the fully solid 1 cm square (no catalog file needed).
PeriodicMesh homogenize_mesh(const RunConfig &c, const std::string &topology, const std::string &params) {
    if (topology == "solid" && params.empty())
        return make_solid_cell_mesh(0.01, 0.01, c.inflator.resolution);
    auto [t, p] = resolve_start(topology, params, nullptr);
    return inflate(t, p, c.inflator);
}

int cmd_homogenize(const RunConfig &c, const Globals &g, const std::string &topology, const std::string &params) {
    PeriodicMesh mesh = homogenize_mesh(c, topology, params);
    SolveSettings solve = c.solve;
    if (solve.contact_settings.dhat == 0)
        solve.contact_settings =
            ContactSettings::defaults(mesh.lattice.col(0).norm(), mesh.lattice.col(1).norm(), c.material());
    std::ofstream trace;
    if (g.trace) {
        trace = open_output(c.output_dir / "trace.jsonl");
        solve.trace = &trace;
    }
    if (c.tiles == 2) mesh = make_supercell(mesh, 2);
    const Homogenizer hom(std::move(mesh), c.material(), solve);
    std::string failure;
    const StressStrainCurve curve = hom.solve_curve(uniform_schedule(c.strain_step, c.strain_max), &failure);
    auto csv = open_output(c.output_dir / "curve.csv");
    curve.write_csv(csv);
    std::cout << "wrote " << (c.output_dir / "curve.csv").string() << " (" << curve.samples.size() << " strains)\n";
    if (!failure.empty()) {
        std::cerr << "partial curve: " << failure << '\n';
        return kExitPartial;
    }
    return kExitOk;
}

int cmd_optimize(RunConfig c, const Globals &g, const std::string &topology, const std::string &params,
                 bool range_given) {
    ResultBundle bundle;
    auto [t, p0] = resolve_start(topology, params, &bundle);
    if (c.sigma_target == 0 && !params.empty()) c.sigma_target = bundle.spec.sigma_target;
    if (!(c.sigma_target > 0)) throw InvalidInput("config: objective.sigma_target must be positive for optimize");
    if (!params.empty() && !range_given) c.range.eps_start = c.range.eps_last = bundle.spec.strain_max();
    if (!params.empty() && c.solve.contact_settings.dhat == 0 && bundle.contact.dhat > 0)
        c.solve.contact_settings = bundle.contact;

    std::ofstream trace;
    OptimizeSettings os = c.optimize_settings();
    if (g.trace) {
        trace = open_output(c.output_dir / "trace.jsonl");
        os.trace = &trace;
    }
    const SweepSettings ss = c.sweep_settings();
    const ParamLayout layout(t);
    const auto results = extend_range(t, p0, c.sigma_target, default_bounds(layout, layout.to_vector(p0)), os, ss.range);
    const OptResult *best = &results.front();
    for (const auto &r : results)
        if (r.accepted) best = &r;

    fs::create_directories(c.output_dir);
    auto csv = open_output(c.output_dir / "curve.csv");
    best->dense_curve.write_csv(csv);
    auto json = open_output(c.output_dir / "result.json");
    write_result_json(json, *best, t, "curve.csv");
    for (const auto &r : results)
        std::cout << "eps_max " << r.spec.strain_max() << ": " << (r.accepted ? "accepted" : "rejected") << " after "
                  << r.iterations << " iterations (" << r.stop_reason << "), dense deviation "
                  << r.dense_max_deviation << '\n';
    std::cout << "wrote " << (c.output_dir / "result.json").string() << '\n';
    return best->accepted ? kExitOk : kExitPartial;
}

int cmd_sweep(RunConfig c, const Globals &g, const std::vector<std::string> &topologies,
              const std::vector<double> &targets) {
    if (!topologies.empty()) c.topologies = topologies;
    if (!targets.empty()) c.targets = targets;
    if (c.topologies.empty() || c.targets.empty())
        throw InvalidInput("config: sweep needs sweep.topologies and sweep.targets");
    std::vector<CellTopology> topo;
    for (const auto &name : c.topologies) topo.push_back(resolve_topology(name));
    SweepSettings s = c.sweep_settings();
    s.cache_dir = c.output_dir / "cache";
    if (g.trace) s.trace_dir = c.output_dir / "traces";
    const FamilyDatabase db = sweep(topo, c.targets, s);
    db.save(c.output_dir);
    std::cout << db.entries.size() << " entries, " << db.failures.size() << " failures; wrote "
              << (c.output_dir / "family.json").string() << '\n';
    for (const auto &f : db.failures) std::cout << "  " << f.topology << " @ " << f.sigma_target << " Pa: " << f.reason << '\n';
    return kExitOk;
}

int cmd_coverage(const RunConfig &c, const std::string &db_dir) {
    const FamilyDatabase db = FamilyDatabase::load(db_dir.empty() ? c.output_dir : fs::path(db_dir));
    const CoverageMap map = coverage(db, c.coverage_strains, c.coverage_tolerance);
    auto csv = open_output(c.output_dir / "coverage.csv");
    map.write_csv(csv);
    std::cout << "wrote " << (c.output_dir / "coverage.csv").string() << '\n';
    return kExitOk;
}

int cmd_select(double mass, double area, double accel, std::optional<double> height, double gravity,
               const std::string &db_dir) {
    const double sigma = select_material(mass, area, accel);
    std::cout << "sigma_f = " << to_text(sigma) << " Pa\n";
    if (height) {
        if (db_dir.empty()) throw InvalidInput("select: --height needs a family database (--db)");
        std::string warning;
        const double alpha = family_alpha(FamilyDatabase::load(db_dir), sigma, &warning);
        if (!warning.empty()) std::cerr << "warning: " << warning << '\n';
        std::cout << "alpha = " << to_text(alpha) << '\n';
        std::cout << "h = " << to_text(required_thickness(sigma, alpha, mass, *height, area, gravity)) << " m\n";
    }
    return kExitOk;
}

int cmd_verify(RunConfig c, const std::string &bundle_path, const std::string &topology) {
    ResultBundle bundle;
    auto [t, p] = resolve_start(topology, bundle_path, &bundle);
    if (c.solve.contact_settings.dhat == 0 && bundle.contact.dhat > 0) c.solve.contact_settings = bundle.contact;
    const double eps = bundle.accepted ? bundle.strain_max : bundle.spec.strain_max();
    const ShapePipeline pipe(t, default_params(t), c.pipeline());
    const ParamLayout &layout = pipe.layout();
    const DenseVerification v = verify_dense(pipe, layout.to_vector(p), bundle.spec.sigma_target, eps,
                                             c.optimize.verify_step, bundle.spec.samples.front(),
                                             c.optimize.accept_tolerance);
    auto csv = open_output(c.output_dir / "verify_curve.csv");
    v.curve.write_csv(csv);
    std::cout << "eps_max " << eps << ": max deviation " << v.max_deviation << ", "
              << (v.accepted ? "accepted" : "rejected") << '\n';
    if (!v.failure.empty()) std::cerr << "solve failed: " << v.failure << '\n';
    return v.accepted ? kExitOk : kExitPartial;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Flat-response microstructure design"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("-c,--config", g.config, "TOML config file")->check(CLI::ExistingFile);
    app.add_option("--set", g.overrides, "Config override section.key=value (repeatable)");
    app.add_option("-o,--output", g.output, "Output directory (output_dir)");
    app.add_option("--resolution", g.resolution, "Marching-squares cells per side (inflator.resolution)");
    app.add_flag("--trace", g.trace, "Write per-iteration JSON logs");
    app.add_flag("--timing", g.timing, "Record wall time per curve sample");

    std::string topology, params, bundle, db_dir;
    std::optional<double> sigma, eps_max, strain_max, strain_step, height;
    std::optional<int> tiles, jobs;
    std::vector<std::string> sweep_topologies;
    std::vector<double> sweep_targets;
    double mass = 0, area = 0, accel = 0, gravity = 9.81;

    auto *hom = app.add_subcommand("homogenize", "Stress-strain curve of one cell");
    hom->add_option("-t,--topology", topology, "Catalog id, topology file or \"solid\"");
    hom->add_option("-p,--params", params, "Result bundle with parameters");
    hom->add_option("--strain-max", strain_max, "Last strain (homogenize.strain_max)");
    hom->add_option("--strain-step", strain_step, "Strain step (homogenize.strain_step)");
    hom->add_option("--tiles", tiles, "Cells per side, 1 or 2 (homogenize.tiles)");

    auto *opt = app.add_subcommand("optimize", "Optimize a topology for a flat response");
    opt->add_option("-t,--topology", topology, "Catalog id or topology file");
    opt->add_option("-p,--params", params, "Result bundle to warm-start from");
    opt->add_option("-s,--sigma", sigma, "Target stress in Pa (objective.sigma_target)");
    opt->add_option("--eps-max", eps_max, "Single strain range end (range.eps_start = range.eps_last)");

    auto *swp = app.add_subcommand("sweep", "Build a family database");
    swp->add_option("-t,--topology", sweep_topologies, "Topologies (sweep.topologies)");
    swp->add_option("--target", sweep_targets, "Target stresses (sweep.targets)");
    swp->add_option("-j,--jobs", jobs, "Worker threads (sweep.jobs)");

    auto *cov = app.add_subcommand("coverage", "Coverage map of a family database");
    cov->add_option("--db", db_dir, "Database directory (defaults to output_dir)");

    auto *sel = app.add_subcommand("select", "Material stress and thickness for a load case");
    sel->add_option("-m,--mass", mass, "Mass in kg")->required();
    sel->add_option("-A,--area", area, "Contact area in m^2")->required();
    sel->add_option("-G,--accel", accel, "Deceleration in m/s^2")->required();
    sel->add_option("-H,--height", height, "Drop height in m (needs --db)");
    sel->add_option("-g,--gravity", gravity, "Gravity in m/s^2");
    sel->add_option("--db", db_dir, "Family database for alpha");

    auto *ver = app.add_subcommand("verify", "Dense re-check of a result bundle");
    ver->add_option("-b,--bundle", bundle, "Result bundle")->required();
    ver->add_option("-t,--topology", topology, "Override the bundle's topology");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e) == 0 ? kExitOk : kExitError;
    }

    try {
        std::vector<std::string> flags;
        if (strain_max) flags.push_back("homogenize.strain_max=" + to_text(*strain_max));
        if (strain_step) flags.push_back("homogenize.strain_step=" + to_text(*strain_step));
        if (tiles) flags.push_back("homogenize.tiles=" + std::to_string(*tiles));
        if (sigma) flags.push_back("objective.sigma_target=" + to_text(*sigma));
        if (eps_max) {
            flags.push_back("range.eps_start=" + to_text(*eps_max));
            flags.push_back("range.eps_last=" + to_text(*eps_max));
        }
        if (jobs) flags.push_back("sweep.jobs=" + std::to_string(*jobs));
        if (sigma && !(*sigma > 0)) throw InvalidInput("config: objective.sigma_target must be positive");
        const RunConfig config = make_config(g, flags);

        if (*hom) return cmd_homogenize(config, g, topology, params);
        if (*opt) return cmd_optimize(config, g, topology, params, eps_max.has_value());
        if (*swp) return cmd_sweep(config, g, sweep_topologies, sweep_targets);
        if (*cov) return cmd_coverage(config, db_dir);
        if (*sel) return cmd_select(mass, area, accel, height, gravity, db_dir);
        if (*ver) return cmd_verify(config, bundle, topology);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}

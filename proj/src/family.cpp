#include "flatcell/family.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace flatcell {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a(const std::string &text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

bool same_curve(const StressStrainCurve &a, const StressStrainCurve &b) {
    if (a.samples.size() != b.samples.size()) return false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const CurveSample &x = a.samples[i], &y = b.samples[i];
        if (x.strain != y.strain || x.compressive_stress() != y.compressive_stress() || x.g00 != y.g00 ||
            x.g01 != y.g01 || x.newton_iterations != y.newton_iterations || x.wall_ms != y.wall_ms)
            return false;
    }
    return true;
}

json curve_rows(const StressStrainCurve &curve) {
    json rows = json::array();
    for (const auto &s : curve.samples)
        rows.push_back({s.strain, s.compressive_stress(), s.g00, s.g01, s.newton_iterations, s.wall_ms});
    return rows;
}

StressStrainCurve curve_from_rows(const json &rows) {
    StressStrainCurve c;
    for (const auto &r : rows) {
        CurveSample s;
        s.strain = r.at(0).get<double>();
        s.stress(1, 1) = -r.at(1).get<double>();
        s.g00 = r.at(2).get<double>();
        s.g01 = r.at(3).get<double>();
        s.newton_iterations = r.at(4).get<int>();
        s.wall_ms = r.at(5).get<double>();
        c.samples.push_back(std::move(s));
    }
    return c;
}

json entry_json(const FamilyEntry &e) {
    std::vector<double> q(e.q.data(), e.q.data() + e.q.size());
    return {{"topology", e.topology},     {"param_names", e.param_names},     {"q", q},
            {"sigma_target", e.sigma_target}, {"alpha", e.alpha}, {"max_deviation", e.max_deviation},
            {"curve_file", e.curve_file}};
}

FamilyEntry entry_from_json(const json &j) {
    FamilyEntry e;
    e.topology = j.at("topology").get<std::string>();
    e.param_names = j.at("param_names").get<std::vector<std::string>>();
    const auto q = j.at("q").get<std::vector<double>>();
    e.q = Eigen::Map<const Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
    e.sigma_target = j.at("sigma_target").get<double>();
    e.alpha = j.at("alpha").get<double>();
    e.max_deviation = j.at("max_deviation").get<double>();
    e.curve_file = j.at("curve_file").get<std::string>();
    return e;
}

std::string curve_file_name(const std::string &topology, double sigma) {
    std::ostringstream name;
    name << "curves/" << topology << '_' << std::setprecision(10) << sigma << ".csv";
    return name.str();
}

json topology_json(const CellTopology &t) {
    json nodes = json::array();
    for (const auto &n : t.nodes) nodes.push_back({n.x(), n.y()});
    return {{"id", t.id},
            {"nodes", nodes},
            {"edges", t.edges},
            {"radii", t.default_radii},
            {"a", t.default_a},
            {"b", t.default_b}};
}

/// Outcome of one (topology, target) task.
struct TaskResult {
    bool accepted = false;
    FamilyEntry entry;
    FamilyFailure failure;
};

json task_json(const TaskResult &r) {
    json j = {{"accepted", r.accepted}};
    if (r.accepted) {
        j["entry"] = entry_json(r.entry);
        j["curve"] = curve_rows(r.entry.curve);
    } else {
        j["failure"] = {{"topology", r.failure.topology},
                        {"sigma_target", r.failure.sigma_target},
                        {"reason", r.failure.reason}};
    }
    return j;
}

TaskResult task_from_json(const json &j) {
    TaskResult r;
    r.accepted = j.at("accepted").get<bool>();
    if (r.accepted) {
        r.entry = entry_from_json(j.at("entry"));
        r.entry.curve = curve_from_rows(j.at("curve"));
    } else {
        const json &f = j.at("failure");
        r.failure = {f.at("topology").get<std::string>(), f.at("sigma_target").get<double>(),
                     f.at("reason").get<std::string>()};
    }
    return r;
}

TaskResult run_task(const CellTopology &topology, double sigma, const SweepSettings &settings, std::ostream *trace) {
    TaskResult r;
    r.failure.topology = topology.id;
    r.failure.sigma_target = sigma;
    const ShapeParams p0 = default_params(topology);
    const ParamLayout layout(topology);
    OptimizeSettings os = settings.optimize;
    os.trace = trace;
    std::vector<OptResult> chain;
    try {
        chain = extend_range(topology, p0, sigma, default_bounds(layout, layout.to_vector(p0)), os, settings.range);
    } catch (const Error &e) {
        r.failure.reason = e.what();
        return r;
    }
    const OptResult *best = nullptr;
    for (const auto &res : chain)
        if (res.accepted) best = &res;
    if (!best) {
        std::ostringstream why;
        const OptResult &first = chain.front();
        why << "rejected at eps_max " << first.spec.strain_max() << " (" << first.stop_reason;
        if (std::isfinite(first.dense_max_deviation)) why << ", dense deviation " << first.dense_max_deviation;
        why << ")";
        r.failure.reason = why.str();
        return r;
    }
    r.accepted = true;
    FamilyEntry &e = r.entry;
    e.topology = topology.id;
    for (int i = 0; i < layout.size(); ++i) e.param_names.push_back(layout.name(i));
    e.q = best->q;
    e.sigma_target = sigma;
    e.alpha = best->strain_max;
    e.max_deviation = best->dense_max_deviation;
    e.curve_file = curve_file_name(topology.id, sigma);
    e.curve = best->dense_curve;
    for (auto &s : e.curve.samples) s.state = HomogState{};
    return r;
}

void write_file_atomically(const fs::path &path, const std::string &text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw InvalidInput("cannot write " + tmp.string());
        out << text;
    }
    fs::rename(tmp, path);
}

} // namespace

bool FamilyEntry::operator==(const FamilyEntry &o) const {
    return topology == o.topology && param_names == o.param_names && q.size() == o.q.size() && q == o.q &&
           sigma_target == o.sigma_target && alpha == o.alpha && max_deviation == o.max_deviation &&
           curve_file == o.curve_file && same_curve(curve, o.curve);
}

void FamilyDatabase::save(const fs::path &dir) const {
    fs::create_directories(dir / "curves");
    json entries_j = json::array(), failures_j = json::array();
    for (const auto &e : entries) {
        entries_j.push_back(entry_json(e));
        std::ofstream csv(dir / e.curve_file, std::ios::binary);
        if (!csv) throw InvalidInput("cannot write " + (dir / e.curve_file).string());
        e.curve.write_csv(csv);
    }
    for (const auto &f : failures)
        failures_j.push_back({{"topology", f.topology}, {"sigma_target", f.sigma_target}, {"reason", f.reason}});
    const json j = {{"version", kVersion},
                    {"metadata", {{"config_hash", config_hash}}},
                    {"entries", entries_j},
                    {"failures", failures_j}};
    write_file_atomically(dir / "family.json", j.dump(2) + "\n");
}

FamilyDatabase FamilyDatabase::load(const fs::path &dir) {
    std::ifstream in(dir / "family.json");
    if (!in) throw InvalidInput("cannot open " + (dir / "family.json").string());
    FamilyDatabase db;
    try {
        const json j = json::parse(in);
        if (j.at("version").get<int>() != kVersion) throw InvalidInput("family database: unsupported version");
        db.config_hash = j.at("metadata").at("config_hash").get<std::string>();
        for (const auto &e : j.at("entries")) {
            FamilyEntry entry = entry_from_json(e);
            std::ifstream csv(dir / entry.curve_file);
            if (!csv) throw InvalidInput("family database: missing curve " + entry.curve_file);
            entry.curve = StressStrainCurve::read_csv(csv);
            db.entries.push_back(std::move(entry));
        }
        for (const auto &f : j.at("failures"))
            db.failures.push_back({f.at("topology").get<std::string>(), f.at("sigma_target").get<double>(),
                                   f.at("reason").get<std::string>()});
    } catch (const json::exception &e) {
        throw InvalidInput(std::string("family database: ") + e.what());
    }
    return db;
}

std::string settings_hash(const SweepSettings &s) {
    const OptimizeSettings &o = s.optimize;
    const PipelineSettings &p = o.pipeline;
    const SolveSettings &v = p.solve;
    const json j = {
        {"material", {p.material.lambda, p.material.mu}},
        {"inflator",
         {p.inflator.resolution, p.inflator.snap_fraction, p.inflator.field.blend_exponent, p.inflator.field.blend_offset}},
        {"solve",
         {v.penalty_w0, v.max_penalty, v.tol_grad, v.tol_constraint, v.max_newton_iterations, v.contact,
          v.contact_settings.dhat, v.contact_settings.kappa, v.contact_settings.strict_tiling}},
        {"pipeline", {p.tiles, p.ramp_step}},
        {"optimize",
         {o.max_iterations, o.tol_objective, o.tol_grad_relative, o.pointwise_tolerance, o.max_halvings, o.lbfgs_memory,
          o.initial_step, o.verify_step, o.accept_tolerance, o.recheck_tiled}},
        {"range", {s.range.eps_start, s.range.eps_step, s.range.eps_last, s.range.samples, s.range.shear_weight}}};
    return fnv1a(j.dump());
}

std::string task_key(const CellTopology &topology, double sigma_target, const std::string &config_hash) {
    const json j = {{"topology", topology_json(topology)}, {"sigma_target", sigma_target}, {"config", config_hash}};
    return fnv1a(j.dump());
}

FamilyDatabase sweep(const std::vector<CellTopology> &topologies, const std::vector<double> &targets,
                     const SweepSettings &settings) {
    if (topologies.empty() || targets.empty()) throw InvalidInput("sweep: no topologies or no targets");
    for (double t : targets)
        if (!(t > 0)) throw InvalidInput("sweep: targets must be positive");
    if (settings.jobs < 1) throw InvalidInput("sweep: jobs must be at least 1");

    FamilyDatabase db;
    db.config_hash = settings_hash(settings);
    struct Task {
        const CellTopology *topology;
        double sigma;
        std::string key;
    };
    std::vector<Task> tasks;
    for (const auto &t : topologies)
        for (double sigma : targets) tasks.push_back({&t, sigma, task_key(t, sigma, db.config_hash)});
    if (!settings.cache_dir.empty()) fs::create_directories(settings.cache_dir);
    if (!settings.trace_dir.empty()) fs::create_directories(settings.trace_dir);

    std::vector<TaskResult> results(tasks.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr fatal;
    std::mutex fatal_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            try {
                const Task &task = tasks[i];
                const fs::path cached = settings.cache_dir.empty() ? fs::path() : settings.cache_dir / (task.key + ".json");
                if (!cached.empty() && fs::exists(cached)) {
                    std::ifstream in(cached);
                    results[i] = task_from_json(json::parse(in));
                    continue;
                }
                std::ofstream trace;
                if (!settings.trace_dir.empty()) trace.open(settings.trace_dir / (task.key + ".jsonl"));
                results[i] = run_task(*task.topology, task.sigma, settings, trace.is_open() ? &trace : nullptr);
                if (!cached.empty()) write_file_atomically(cached, task_json(results[i]).dump() + "\n");
            } catch (...) {
                std::lock_guard<std::mutex> lock(fatal_mutex);
                if (!fatal) fatal = std::current_exception();
            }
        }
    };
    const int n = std::min<int>(settings.jobs, static_cast<int>(tasks.size()));
    std::vector<std::thread> pool;
    for (int k = 1; k < n; ++k) pool.emplace_back(worker);
    worker();
    for (auto &t : pool) t.join();
    if (fatal) std::rethrow_exception(fatal);

    for (auto &r : results) {
        if (r.accepted)
            db.entries.push_back(std::move(r.entry));
        else
            db.failures.push_back(std::move(r.failure));
    }
    return db;
}

void CoverageMap::write_csv(std::ostream &out) const {
    const auto old = out.precision(17);
    out << "sigma_target,strain,covered,topology,deviation\n";
    for (std::size_t i = 0; i < sigmas.size(); ++i)
        for (std::size_t j = 0; j < strains.size(); ++j) {
            const CoverageCell &c = cells[i][j];
            out << sigmas[i] << ',' << strains[j] << ',' << (c.covered ? 1 : 0) << ',' << c.topology << ',';
            if (std::isfinite(c.deviation)) out << c.deviation;
            out << '\n';
        }
    out.precision(old);
}

CoverageMap coverage(const FamilyDatabase &db, const std::vector<double> &strains, double tolerance, double lower) {
    constexpr double kMatch = 1e-9;
    CoverageMap map;
    map.strains = strains;
    for (const auto &e : db.entries)
        if (std::find(map.sigmas.begin(), map.sigmas.end(), e.sigma_target) == map.sigmas.end())
            map.sigmas.push_back(e.sigma_target);
    std::sort(map.sigmas.begin(), map.sigmas.end());
    map.cells.assign(map.sigmas.size(), std::vector<CoverageCell>(strains.size()));
    for (std::size_t i = 0; i < map.sigmas.size(); ++i)
        for (std::size_t j = 0; j < strains.size(); ++j) {
            CoverageCell &cell = map.cells[i][j];
            for (const auto &e : db.entries) {
                if (e.sigma_target != map.sigmas[i] || e.curve.samples.empty()) continue;
                if (e.curve.samples.back().strain < strains[j] - kMatch) continue;
                double dev = 0;
                for (const auto &s : e.curve.samples)
                    if (s.strain >= lower - kMatch && s.strain <= strains[j] + kMatch)
                        dev = std::max(dev, std::abs(s.compressive_stress() / e.sigma_target - 1));
                if (dev < cell.deviation) {
                    cell.deviation = dev;
                    cell.topology = e.topology;
                }
            }
            cell.covered = cell.deviation <= tolerance;
        }
    return map;
}

double select_material(double mass, double area, double acceleration) {
    if (!(mass > 0) || !(area > 0) || !(acceleration > 0))
        throw InvalidInput("select_material: mass, area and acceleration must be positive");
    return mass * acceleration / area;
}

double required_thickness(double sigma_f, double alpha, double mass, double height, double area, double gravity) {
    if (!(sigma_f > 0) || !(alpha > 0) || !(mass > 0) || !(height > 0) || !(area > 0) || !(gravity > 0))
        throw InvalidInput("required_thickness: all inputs must be positive");
    return mass * gravity * height / (alpha * sigma_f * area);
}

double family_alpha(const FamilyDatabase &db, double sigma_f, std::string *warning) {
    if (!(sigma_f > 0)) throw InvalidInput("family_alpha: sigma_f must be positive");
    if (db.entries.empty()) throw InvalidInput("family_alpha: the database has no accepted entries");
    // Best alpha per target.
    std::vector<std::pair<double, double>> best;
    for (const auto &e : db.entries) {
        auto it = std::find_if(best.begin(), best.end(), [&](const auto &b) { return b.first == e.sigma_target; });
        if (it == best.end())
            best.emplace_back(e.sigma_target, e.alpha);
        else
            it->second = std::max(it->second, e.alpha);
    }
    std::sort(best.begin(), best.end());
    for (const auto &[s, a] : best)
        if (s == sigma_f) return a;
    auto upper = std::lower_bound(best.begin(), best.end(), std::make_pair(sigma_f, -1.0));
    if (upper == best.begin() || upper == best.end()) {
        const auto &nearest = upper == best.end() ? best.back() : best.front();
        if (warning) {
            std::ostringstream w;
            w << "sigma_f " << sigma_f << " is outside the family targets; using alpha of sigma_f " << nearest.first;
            *warning = w.str();
        }
        return nearest.second;
    }
    const auto lower = std::prev(upper);
    const double t = (std::log(sigma_f) - std::log(lower->first)) / (std::log(upper->first) - std::log(lower->first));
    if (warning) {
        std::ostringstream w;
        w << "sigma_f " << sigma_f << " has no family entry; alpha interpolated between " << lower->first << " and "
          << upper->first;
        *warning = w.str();
    }
    return lower->second + t * (upper->second - lower->second);
}

double IdealCurve::stress(double strain) const {
    if (!(strain >= 0 && strain <= 1)) throw InvalidInput("ideal curve: strain must lie in [0, 1]");
    return sigma_f;
}

void IdealCurve::write_csv(std::ostream &out, double step) const {
    const auto old = out.precision(17);
    out << "strain,stress\n";
    out << 0.0 << ',' << sigma_f << '\n';
    for (double e : uniform_schedule(step, 1.0 + 1e-12)) out << e << ',' << sigma_f << '\n';
    out.precision(old);
}

IdealCurve ideal_curve(double sigma_f) {
    if (!(sigma_f > 0)) throw InvalidInput("ideal_curve: sigma_f must be positive");
    return IdealCurve{sigma_f};
}

} // namespace flatcell

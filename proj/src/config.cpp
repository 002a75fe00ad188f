#include "flatcell/config.hpp"

#include <toml.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace flatcell {

namespace {

/// Reads keys out of a parsed table and remembers which ones were consumed.
class Reader {
public:
    explicit Reader(const toml::table &root) : root_(root) {}

    template <typename T> void get(const std::string &key, T &out) {
        const toml::node *node = find(key);
        if (!node) return;
        used_.insert(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!node->is_boolean()) fail(key, "a boolean");
            out = *node->value<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!node->is_integer()) fail(key, "an integer");
            out = static_cast<T>(*node->value<std::int64_t>());
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!node->is_number()) fail(key, "a number");
            out = *node->value<double>();
        } else if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, std::filesystem::path>) {
            if (!node->is_string()) fail(key, "a string");
            out = *node->value<std::string>();
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            const toml::array *a = node->as_array();
            if (!a) fail(key, "an array of numbers");
            out.clear();
            for (const auto &v : *a) {
                if (!v.is_number()) fail(key, "an array of numbers");
                out.push_back(*v.value<double>());
            }
        } else {
            static_assert(std::is_same_v<T, std::vector<std::string>>);
            const toml::array *a = node->as_array();
            if (!a) fail(key, "an array of strings");
            out.clear();
            for (const auto &v : *a) {
                if (!v.is_string()) fail(key, "an array of strings");
                out.push_back(*v.value<std::string>());
            }
        }
    }

    /// Throws on keys nobody asked for (typos would otherwise be ignored).
    void reject_unknown() const { walk(root_, ""); }

private:
    const toml::node *find(const std::string &key) const {
        const toml::node *node = &root_;
        std::istringstream parts(key);
        std::string part;
        while (std::getline(parts, part, '.')) {
            const toml::table *t = node->as_table();
            if (!t) return nullptr;
            node = t->get(part);
            if (!node) return nullptr;
        }
        return node;
    }

    void walk(const toml::table &table, const std::string &prefix) const {
        for (const auto &[k, v] : table) {
            const std::string key = prefix + std::string(k.str());
            if (const toml::table *t = v.as_table(); t && !used_.count(key))
                walk(*t, key + ".");
            else if (!used_.count(key))
                throw InvalidInput("config: unknown key " + key);
        }
    }

    [[noreturn]] static void fail(const std::string &key, const char *what) {
        throw InvalidInput("config: " + key + " must be " + what);
    }

    const toml::table &root_;
    std::set<std::string> used_;
};

void apply_override(toml::table &root, const std::string &assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidInput("config override must be key=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    toml::table parsed;
    try {
        parsed = toml::parse("v = " + value);
    } catch (const toml::parse_error &) {
        // Bare words are taken as strings.
        parsed = toml::table{{"v", value}};
    }
    toml::table *table = &root;
    std::istringstream parts(key);
    std::string part, next;
    std::getline(parts, part, '.');
    while (std::getline(parts, next, '.')) {
        toml::node *child = table->get(part);
        if (!child) child = &table->insert_or_assign(part, toml::table{}).first->second;
        table = child->as_table();
        if (!table) throw InvalidInput("config override: " + part + " is not a table");
        part = next;
    }
    table->insert_or_assign(part, *parsed.get("v"));
}

} // namespace

PipelineSettings RunConfig::pipeline() const {
    PipelineSettings p;
    p.material = material();
    p.inflator = inflator;
    p.solve = solve;
    p.tiles = tiles;
    p.ramp_step = optimize.pipeline.ramp_step;
    return p;
}

OptimizeSettings RunConfig::optimize_settings() const {
    OptimizeSettings o = optimize;
    o.pipeline = pipeline();
    return o;
}

SweepSettings RunConfig::sweep_settings() const {
    SweepSettings s;
    s.optimize = optimize_settings();
    s.range = range;
    s.range.samples = samples;
    s.range.shear_weight = shear_weight;
    s.jobs = jobs;
    return s;
}

RunConfig parse_config(const std::string &toml_text, const std::vector<std::string> &overrides) {
    toml::table root;
    try {
        root = toml::parse(toml_text);
    } catch (const toml::parse_error &e) {
        std::ostringstream msg;
        msg << "config: " << e.description() << " (line " << e.source().begin.line << ")";
        throw InvalidInput(msg.str());
    }
    for (const auto &o : overrides) apply_override(root, o);

    RunConfig c;
    Reader r(root);
    r.get("output_dir", c.output_dir);
    r.get("seed", c.seed);
    r.get("material.young", c.young);
    r.get("material.poisson", c.poisson);
    r.get("inflator.resolution", c.inflator.resolution);
    r.get("inflator.blend_exponent", c.inflator.field.blend_exponent);
    r.get("inflator.blend_offset", c.inflator.field.blend_offset);
    r.get("inflator.snap_fraction", c.inflator.snap_fraction);
    r.get("contact.enabled", c.solve.contact);
    r.get("contact.dhat", c.solve.contact_settings.dhat);
    r.get("contact.kappa", c.solve.contact_settings.kappa);
    r.get("contact.strict_tiling", c.solve.contact_settings.strict_tiling);
    r.get("solver.penalty_w0", c.solve.penalty_w0);
    r.get("solver.max_penalty", c.solve.max_penalty);
    r.get("solver.tol_grad", c.solve.tol_grad);
    r.get("solver.tol_constraint", c.solve.tol_constraint);
    r.get("solver.max_newton_iterations", c.solve.max_newton_iterations);
    r.get("solver.persist_penalty", c.solve.persist_penalty);
    r.get("homogenize.strain_step", c.strain_step);
    r.get("homogenize.strain_max", c.strain_max);
    r.get("homogenize.tiles", c.tiles);
    r.get("objective.sigma_target", c.sigma_target);
    r.get("objective.samples", c.samples);
    r.get("objective.shear_weight", c.shear_weight);
    r.get("optimize.max_iterations", c.optimize.max_iterations);
    r.get("optimize.tol_objective", c.optimize.tol_objective);
    r.get("optimize.tol_grad_relative", c.optimize.tol_grad_relative);
    r.get("optimize.pointwise_tolerance", c.optimize.pointwise_tolerance);
    r.get("optimize.max_halvings", c.optimize.max_halvings);
    r.get("optimize.lbfgs_memory", c.optimize.lbfgs_memory);
    r.get("optimize.initial_step", c.optimize.initial_step);
    r.get("optimize.ramp_step", c.optimize.pipeline.ramp_step);
    r.get("optimize.verify_step", c.optimize.verify_step);
    r.get("optimize.accept_tolerance", c.optimize.accept_tolerance);
    r.get("optimize.recheck_tiled", c.optimize.recheck_tiled);
    r.get("range.eps_start", c.range.eps_start);
    r.get("range.eps_step", c.range.eps_step);
    r.get("range.eps_last", c.range.eps_last);
    r.get("sweep.topologies", c.topologies);
    r.get("sweep.targets", c.targets);
    r.get("sweep.jobs", c.jobs);
    r.get("coverage.strains", c.coverage_strains);
    r.get("coverage.tolerance", c.coverage_tolerance);
    r.reject_unknown();
    return c;
}

RunConfig load_config(const std::filesystem::path &path, const std::vector<std::string> &overrides) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), overrides);
}

void validate_config(const RunConfig &c) {
    auto require = [](bool ok, const char *message) {
        if (!ok) throw InvalidInput(std::string("config: ") + message);
    };
    require(c.young > 0 && c.poisson > -1 && c.poisson < 0.5, "material needs young > 0 and poisson in (-1, 0.5)");
    c.material().validate();
    c.solve.validate();
    require(c.inflator.resolution >= 16 && c.inflator.resolution % 2 == 0,
            "inflator.resolution must be even and at least 16");
    require(c.inflator.field.blend_exponent > 0, "inflator.blend_exponent must be positive");
    require(c.inflator.snap_fraction >= 0 && c.inflator.snap_fraction < 0.5, "inflator.snap_fraction must lie in [0, 0.5)");
    require(c.strain_step > 0 && c.strain_max > 0 && c.strain_max < 1, "homogenize strains must lie in (0, 1)");
    require(c.tiles == 1 || c.tiles == 2, "homogenize.tiles must be 1 or 2");
    require(c.sigma_target >= 0, "objective.sigma_target must not be negative");
    require(c.samples >= 1, "objective.samples must be at least 1");
    require(c.shear_weight >= 0, "objective.shear_weight must not be negative");
    require(c.optimize.max_iterations >= 0 && c.optimize.max_halvings >= 1 && c.optimize.lbfgs_memory >= 1,
            "optimize iteration limits must be positive");
    require(c.optimize.initial_step > 0 && c.optimize.initial_step <= 1, "optimize.initial_step must lie in (0, 1]");
    require(c.optimize.pipeline.ramp_step > 0, "optimize.ramp_step must be positive");
    require(c.optimize.verify_step > 0 && c.optimize.accept_tolerance > 0, "optimize verification settings must be positive");
    require(c.range.eps_start > 0.1 && c.range.eps_start <= c.range.eps_last && c.range.eps_last < 1 &&
                c.range.eps_step > 0,
            "range must satisfy 0.1 < eps_start <= eps_last < 1 with a positive step");
    require(c.jobs >= 1, "sweep.jobs must be at least 1");
    for (double t : c.targets) require(t > 0, "sweep.targets must be positive");
    require(c.coverage_tolerance > 0, "coverage.tolerance must be positive");
    require(!c.output_dir.empty(), "output_dir must not be empty");
}

CellTopology resolve_topology(const std::string &name) {
    const std::filesystem::path p(name);
    if (p.extension() == ".json" || name.find('/') != std::string::npos) return load_topology(p);
    return load_bundled_topology(name);
}

} // namespace flatcell

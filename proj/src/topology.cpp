#include "flatcell/topology.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#ifndef FLATCELL_DATA_DIR
#define FLATCELL_DATA_DIR "data"
#endif

namespace flatcell {

namespace {

constexpr double kTol = 1e-9;

bool is_integer(double v) { return std::abs(v - std::round(v)) < kTol; }

bool on_value(double v, double target) { return std::abs(v - target) < kTol; }

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    }
    void unite(int a, int b) {
        a = find(a), b = find(b);
        if (a == b) return;
        if (a < b) parent[b] = a;
        else parent[a] = b;
    }
};

bool periodic_partner(const Vec2 &p, const Vec2 &q) {
    return is_integer(q.x() - p.x()) && is_integer(q.y() - p.y());
}

bool mirror_partner(const Vec2 &p, const Vec2 &q) {
    return is_integer(q.x() + p.x()) && is_integer(q.y() - p.y());
}

} // namespace

void finalize_topology(CellTopology &t) {
    const int n = t.num_nodes();
    if (n == 0) throw InvalidInput("topology '" + t.id + "': no nodes");
    for (int i = 0; i < n; ++i) {
        const Vec2 &p = t.nodes[i];
        if (!(p.x() > -kTol && p.x() < 1 + kTol && p.y() > -kTol && p.y() < 1 + kTol))
            throw InvalidInput("topology '" + t.id + "': node " + std::to_string(i) + " outside the unit square");
    }

    std::set<std::pair<int, int>> seen;
    for (const auto &e : t.edges) {
        if (e[0] < 0 || e[1] < 0 || e[0] >= n || e[1] >= n)
            throw InvalidInput("topology '" + t.id + "': edge endpoint out of range");
        if (e[0] == e[1]) throw InvalidInput("topology '" + t.id + "': self-loop edge");
        const auto key = std::minmax(e[0], e[1]);
        if (!seen.insert(key).second) throw InvalidInput("topology '" + t.id + "': duplicate edge");
    }

    // Periodic consistency: boundary nodes need partners on the opposite side.
    for (int i = 0; i < n; ++i) {
        const Vec2 &p = t.nodes[i];
        auto require = [&](const Vec2 &target) {
            for (int j = 0; j < n; ++j)
                if ((t.nodes[j] - target).norm() < kTol) return;
            std::ostringstream msg;
            msg << "topology '" << t.id << "': boundary node " << i << " has no periodic partner at ("
                << target.x() << ", " << target.y() << ")";
            throw InvalidInput(msg.str());
        };
        if (on_value(p.x(), 0)) require({1.0, p.y()});
        if (on_value(p.x(), 1)) require({0.0, p.y()});
        if (on_value(p.y(), 0)) require({p.x(), 1.0});
        if (on_value(p.y(), 1)) require({p.x(), 0.0});
    }

    // Mirror consistency of the node set.
    for (int i = 0; i < n; ++i) {
        const Vec2 m(1.0 - t.nodes[i].x(), t.nodes[i].y());
        bool found = false;
        for (int j = 0; j < n && !found; ++j) found = (t.nodes[j] - m).norm() < kTol;
        if (!found)
            throw InvalidInput("topology '" + t.id + "': node " + std::to_string(i) +
                               " has no mirror image about x=0.5");
    }

    // Mirror consistency of the edge set, modulo periodic translation.
    std::vector<int> canon(n);
    for (int i = 0; i < n; ++i) {
        canon[i] = i;
        for (int j = 0; j < i; ++j)
            if (periodic_partner(t.nodes[i], t.nodes[j])) {
                canon[i] = canon[j];
                break;
            }
    }
    auto edge_class = [&](const Vec2 &p, const Vec2 &q) {
        // Class of a segment on the torus: canonical endpoints plus relative lattice offset.
        auto locate = [&](const Vec2 &x) -> std::pair<int, Vec2i> {
            for (int j = 0; j < n; ++j)
                if (periodic_partner(t.nodes[j], x)) {
                    const Vec2 d = x - t.nodes[canon[j]];
                    return {canon[j], Vec2i(int(std::lround(d.x())), int(std::lround(d.y())))};
                }
            return {-1, Vec2i::Zero()};
        };
        auto [ci, oi] = locate(p);
        auto [cj, oj] = locate(q);
        Vec2i rel = oj - oi;
        if (ci > cj || (ci == cj && (rel.x() < 0 || (rel.x() == 0 && rel.y() < 0)))) {
            std::swap(ci, cj);
            rel = -rel;
        }
        return std::make_tuple(ci, cj, rel.x(), rel.y());
    };
    std::set<std::tuple<int, int, int, int>> classes;
    for (const auto &e : t.edges) classes.insert(edge_class(t.nodes[e[0]], t.nodes[e[1]]));
    for (const auto &e : t.edges) {
        const Vec2 p(1.0 - t.nodes[e[0]].x(), t.nodes[e[0]].y());
        const Vec2 q(1.0 - t.nodes[e[1]].x(), t.nodes[e[1]].y());
        if (!classes.count(edge_class(p, q)))
            throw InvalidInput("topology '" + t.id + "': edge set is not mirror symmetric about x=0.5");
    }

    UnionFind uf(n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (periodic_partner(t.nodes[i], t.nodes[j]) || mirror_partner(t.nodes[i], t.nodes[j])) uf.unite(i, j);

    t.orbits.clear();
    t.orbit_of.assign(n, -1);
    std::map<int, int> root_to_orbit;
    for (int i = 0; i < n; ++i) {
        const int r = uf.find(i);
        auto it = root_to_orbit.find(r);
        if (it == root_to_orbit.end()) {
            it = root_to_orbit.emplace(r, int(t.orbits.size())).first;
            t.orbits.emplace_back();
        }
        t.orbits[it->second].push_back(i);
        t.orbit_of[i] = it->second;
    }

    t.mirror_sign.assign(n, 1);
    t.node_offset.assign(n, Vec2::Zero());
    for (const auto &orbit : t.orbits) {
        const Vec2 rep = t.nodes[orbit.front()];
        for (int i : orbit) {
            const Vec2 &p = t.nodes[i];
            if (periodic_partner(rep, p)) {
                t.mirror_sign[i] = 1;
                t.node_offset[i] = p - rep;
            } else {
                t.mirror_sign[i] = -1;
                t.node_offset[i] = Vec2(p.x() + rep.x(), p.y() - rep.y());
            }
            t.node_offset[i] = t.node_offset[i].array().round();
        }
    }

    if (t.default_radii.size() != t.orbits.size()) t.default_radii.assign(t.orbits.size(), 0.05);
}

CellTopology parse_topology(const std::string &json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error &e) {
        throw InvalidInput(std::string("topology parse error: ") + e.what());
    }

    CellTopology t;
    try {
        t.id = j.value("id", std::string("unnamed"));
        if (!j.contains("nodes") || !j["nodes"].is_array()) throw InvalidInput("topology parse error: missing 'nodes'");
        for (const auto &p : j["nodes"]) {
            if (!p.is_array() || p.size() != 2) throw InvalidInput("topology parse error: node must be [x, y]");
            t.nodes.emplace_back(p[0].get<double>(), p[1].get<double>());
        }
        if (j.contains("edges"))
            for (const auto &e : j["edges"]) {
                if (!e.is_array() || e.size() != 2) throw InvalidInput("topology parse error: edge must be [i, j]");
                t.edges.push_back({e[0].get<int>(), e[1].get<int>()});
            }
        const std::string axis = j.value("mirror_axis", std::string("x=0.5"));
        if (axis != "x=0.5") throw InvalidInput("topology parse error: unsupported mirror_axis '" + axis + "'");
        if (j.contains("cell")) {
            t.default_a = j["cell"][0].get<double>();
            t.default_b = j["cell"][1].get<double>();
        }
    } catch (const nlohmann::json::exception &e) {
        throw InvalidInput(std::string("topology parse error: ") + e.what());
    }

    finalize_topology(t);

    if (j.contains("orbits")) {
        // Explicit orbits must agree with the computed ones.
        std::set<std::set<int>> given, computed;
        for (const auto &o : j["orbits"]) given.insert(o.get<std::set<int>>());
        for (const auto &o : t.orbits) computed.insert(std::set<int>(o.begin(), o.end()));
        if (given != computed) throw InvalidInput("topology '" + t.id + "': listed orbits disagree with symmetry");
    }

    std::vector<double> node_radii(t.nodes.size(), j.value("radius", 0.05));
    if (j.contains("radii")) {
        const auto r = j["radii"].get<std::vector<double>>();
        if (r.size() != t.nodes.size()) throw InvalidInput("topology '" + t.id + "': radii must list one value per node");
        node_radii = r;
    }
    t.default_radii.assign(t.orbits.size(), 0.0);
    for (int o = 0; o < t.num_orbits(); ++o) {
        const double r = node_radii[t.orbits[o].front()];
        for (int i : t.orbits[o])
            if (std::abs(node_radii[i] - r) > kTol)
                throw InvalidInput("topology '" + t.id + "': radii differ within a symmetry orbit");
        t.default_radii[o] = r;
    }
    return t;
}

CellTopology load_topology(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open topology file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_topology(ss.str());
}

std::filesystem::path bundled_topology_dir() { return std::filesystem::path(FLATCELL_DATA_DIR) / "topologies"; }

CellTopology load_bundled_topology(const std::string &id) {
    return load_topology(bundled_topology_dir() / (id + ".json"));
}

ShapeParams default_params(const CellTopology &topology) {
    ShapeParams p;
    for (const auto &orbit : topology.orbits) p.positions.push_back(topology.nodes[orbit.front()]);
    p.radii = topology.default_radii;
    p.a = topology.default_a;
    p.b = topology.default_b;
    return p;
}

ExpandedParams expand_symmetry(const CellTopology &topology, const ShapeParams &params) {
    if (params.positions.size() != topology.orbits.size() || params.radii.size() != topology.orbits.size())
        throw InvalidInput("shape parameters list " + std::to_string(params.radii.size()) + " orbits, topology '" +
                           topology.id + "' has " + std::to_string(topology.orbits.size()));
    ExpandedParams out;
    out.positions.resize(topology.nodes.size());
    out.radii.resize(topology.nodes.size());
    for (int i = 0; i < topology.num_nodes(); ++i) {
        const int o = topology.orbit_of[i];
        const Vec2 &rep = params.positions[o];
        out.positions[i] = Vec2(topology.mirror_sign[i] * rep.x() + topology.node_offset[i].x(),
                                rep.y() + topology.node_offset[i].y());
        out.radii[i] = params.radii[o];
    }
    return out;
}

ParamLayout::ParamLayout(const CellTopology &topology) {
    for (int o = 0; o < topology.num_orbits(); ++o) {
        const Vec2 &rep = topology.nodes[topology.orbits[o].front()];
        const bool pin_x = on_value(rep.x(), 0) || on_value(rep.x(), 0.5) || on_value(rep.x(), 1);
        const bool pin_y = on_value(rep.y(), 0) || on_value(rep.y(), 1);
        if (!pin_x) entries_.push_back({Kind::X, o});
        if (!pin_y) entries_.push_back({Kind::Y, o});
        entries_.push_back({Kind::Radius, o});
    }
    entries_.push_back({Kind::A, -1});
    entries_.push_back({Kind::B, -1});
}

std::string ParamLayout::name(int i) const {
    const Entry &e = entries_.at(i);
    switch (e.kind) {
    case Kind::X: return "x" + std::to_string(e.orbit);
    case Kind::Y: return "y" + std::to_string(e.orbit);
    case Kind::Radius: return "r" + std::to_string(e.orbit);
    case Kind::A: return "a";
    case Kind::B: return "b";
    }
    return "?";
}

Eigen::VectorXd ParamLayout::to_vector(const ShapeParams &params) const {
    Eigen::VectorXd q(size());
    for (int i = 0; i < size(); ++i) {
        const Entry &e = entries_[i];
        switch (e.kind) {
        case Kind::X: q[i] = params.positions.at(e.orbit).x(); break;
        case Kind::Y: q[i] = params.positions.at(e.orbit).y(); break;
        case Kind::Radius: q[i] = params.radii.at(e.orbit); break;
        case Kind::A: q[i] = params.a; break;
        case Kind::B: q[i] = params.b; break;
        }
    }
    return q;
}

ShapeParams ParamLayout::from_vector(const Eigen::VectorXd &q, const ShapeParams &pinned) const {
    if (q.size() != size())
        throw InvalidInput("parameter vector has " + std::to_string(q.size()) + " entries, expected " +
                           std::to_string(size()));
    ShapeParams p = pinned;
    for (int i = 0; i < size(); ++i) {
        const Entry &e = entries_[i];
        switch (e.kind) {
        case Kind::X: p.positions.at(e.orbit).x() = q[i]; break;
        case Kind::Y: p.positions.at(e.orbit).y() = q[i]; break;
        case Kind::Radius: p.radii.at(e.orbit) = q[i]; break;
        case Kind::A: p.a = q[i]; break;
        case Kind::B: p.b = q[i]; break;
        }
    }
    return p;
}

Eigen::MatrixXd ParamLayout::node_jacobian(const CellTopology &topology) const {
    const int n = topology.num_nodes();
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * n, num_shape());
    for (int k = 0; k < num_shape(); ++k) {
        const Entry &e = entries_[k];
        for (int i : topology.orbits[e.orbit]) {
            switch (e.kind) {
            case Kind::X: jac(3 * i + 0, k) = topology.mirror_sign[i]; break;
            case Kind::Y: jac(3 * i + 1, k) = 1.0; break;
            case Kind::Radius: jac(3 * i + 2, k) = 1.0; break;
            default: break;
            }
        }
    }
    return jac;
}

ParamBounds default_bounds(const ParamLayout &layout, const Eigen::VectorXd &q0) {
    ParamBounds b{Eigen::VectorXd(layout.size()), Eigen::VectorXd(layout.size())};
    for (int i = 0; i < layout.size(); ++i) {
        switch (layout.entries()[i].kind) {
        case ParamLayout::Kind::X:
        case ParamLayout::Kind::Y:
            b.lower[i] = std::max(0.02, q0[i] - 0.2);
            b.upper[i] = std::min(0.98, q0[i] + 0.2);
            break;
        case ParamLayout::Kind::Radius:
            b.lower[i] = 0.004;
            b.upper[i] = std::max(0.2, q0[i]);
            break;
        case ParamLayout::Kind::A:
            b.lower[i] = 0.5 * q0[i];
            b.upper[i] = 2.0 * q0[i];
            break;
        case ParamLayout::Kind::B:
            b.lower[i] = q0[i];
            b.upper[i] = q0[i];
            break;
        }
    }
    return b;
}

} // namespace flatcell

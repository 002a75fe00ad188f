#include "flatcell/mesh.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <tuple>
#include <unordered_map>

namespace flatcell {

double PeriodicMesh::min_signed_area() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto &t : triangles) {
        const Vec2 e1 = node(t[1]) - node(t[0]);
        const Vec2 e2 = node(t[2]) - node(t[0]);
        m = std::min(m, 0.5 * (e1.x() * e2.y() - e1.y() * e2.x()));
    }
    return m;
}

void PeriodicMesh::validate() const {
    const int n = num_nodes();
    if (int(master.size()) != n || int(offset.size()) != n) throw MeshingError("periodic pairing size mismatch");
    for (const auto &t : triangles)
        for (int v : t)
            if (v < 0 || v >= n) throw MeshingError("triangle references a missing node");
    if (!triangles.empty() && min_signed_area() <= 0) throw MeshingError("triangle with non-positive signed area");

    const double scale = std::max(lattice.col(0).norm(), lattice.col(1).norm());
    for (int i = 0; i < n; ++i) {
        const int m = master[i];
        if (m < 0 || m >= n) throw MeshingError("periodic master out of range");
        if (master[m] != m) throw MeshingError("inconsistent pairing: master of node " + std::to_string(i) +
                                               " is itself a slave");
        if (m == i && offset[i] != Vec2i::Zero()) throw MeshingError("master node with nonzero offset");
        const Vec2 expected = node(m) + lattice * offset[i].cast<double>();
        if ((expected - node(i)).norm() > 1e-12 * scale)
            throw MeshingError("periodic pair position mismatch at node " + std::to_string(i));
    }
    for (const auto &e : boundary_edges)
        for (int v : e)
            if (v < 0 || v >= n) throw MeshingError("boundary edge references a missing node");
    if (shape_velocity.rows() != 2 * n) throw MeshingError("shape velocity has wrong row count");
    if (lattice_velocity.rows() != 4 || lattice_velocity.cols() != shape_velocity.cols())
        throw MeshingError("lattice velocity has wrong shape");
}

namespace {

using EdgeClass = std::tuple<int, int, int, int>;

/// Torus class of a segment between two nodes plus the offset of its normalized first endpoint.
std::pair<EdgeClass, Vec2i> edge_class(const PeriodicMesh &mesh, int p, int q) {
    int mp = mesh.master[p], mq = mesh.master[q];
    Vec2i op = mesh.offset[p], oq = mesh.offset[q];
    Vec2i rel = oq - op;
    if (mp > mq || (mp == mq && (rel.x() < 0 || (rel.x() == 0 && rel.y() < 0)))) {
        std::swap(mp, mq);
        std::swap(op, oq);
        rel = -rel;
    }
    return {{mp, mq, rel.x(), rel.y()}, op};
}

bool offset_less(const Vec2i &a, const Vec2i &b) {
    const int sa = a.x() + a.y(), sb = b.x() + b.y();
    if (sa != sb) return sa < sb;
    return std::make_pair(a.x(), a.y()) < std::make_pair(b.x(), b.y());
}

} // namespace

void finish_p2_mesh(PeriodicMesh &mesh) {
    const int nv = static_cast<int>(mesh.nodes.rows());
    mesh.num_vertices = nv;
    const int np = static_cast<int>(mesh.shape_velocity.cols());

    std::map<std::pair<int, int>, int> mid_of;
    std::vector<std::pair<int, int>> mid_edges;
    for (auto &t : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int p = t[k], q = t[(k + 1) % 3];
            const auto key = std::minmax(p, q);
            auto it = mid_of.find(key);
            if (it == mid_of.end()) {
                it = mid_of.emplace(key, nv + int(mid_edges.size())).first;
                mid_edges.push_back(key);
            }
            t[3 + k] = it->second;
        }
    }

    const int nm = static_cast<int>(mid_edges.size());
    Eigen::MatrixX2d nodes(nv + nm, 2);
    nodes.topRows(nv) = mesh.nodes;
    Eigen::MatrixXd vel(2 * (nv + nm), np);
    vel.topRows(2 * nv) = mesh.shape_velocity;
    for (int k = 0; k < nm; ++k) {
        const auto [p, q] = mid_edges[k];
        nodes.row(nv + k) = 0.5 * (mesh.nodes.row(p) + mesh.nodes.row(q));
        vel.middleRows(2 * (nv + k), 2) = 0.5 * (mesh.shape_velocity.middleRows(2 * p, 2) +
                                                 mesh.shape_velocity.middleRows(2 * q, 2));
    }

    // Midpoint pairing: the member of each torus edge class with the smallest
    // base offset is the master.
    std::map<EdgeClass, std::pair<Vec2i, int>> class_master;
    std::vector<std::pair<EdgeClass, Vec2i>> mid_class(nm);
    for (int k = 0; k < nm; ++k) {
        mid_class[k] = edge_class(mesh, mid_edges[k].first, mid_edges[k].second);
        auto it = class_master.find(mid_class[k].first);
        if (it == class_master.end() || offset_less(mid_class[k].second, it->second.first))
            class_master[mid_class[k].first] = {mid_class[k].second, nv + k};
    }
    mesh.master.resize(nv + nm);
    mesh.offset.resize(nv + nm);
    for (int k = 0; k < nm; ++k) {
        const auto &[base, m] = class_master.at(mid_class[k].first);
        mesh.master[nv + k] = m;
        mesh.offset[nv + k] = mid_class[k].second - base;
    }
    mesh.nodes = std::move(nodes);
    mesh.shape_velocity = std::move(vel);

    // Surface edges: torus edge classes used by exactly one triangle.
    std::map<EdgeClass, int> count;
    for (const auto &t : mesh.triangles)
        for (int k = 0; k < 3; ++k) ++count[edge_class(mesh, t[k], t[(k + 1) % 3]).first];
    mesh.boundary_edges.clear();
    for (const auto &t : mesh.triangles)
        for (int k = 0; k < 3; ++k)
            if (count[edge_class(mesh, t[k], t[(k + 1) % 3]).first] == 1)
                mesh.boundary_edges.push_back({t[k], t[3 + k], t[(k + 1) % 3]});
}

PeriodicMesh make_solid_cell_mesh(double a, double b, int n) {
    if (n < 2 || n % 2) throw InvalidInput("solid cell resolution must be even and >= 2");
    PeriodicMesh mesh;
    const int side = n + 1;
    mesh.nodes.resize(side * side, 2);
    mesh.shape_velocity = Eigen::MatrixXd::Zero(2 * side * side, 2);
    mesh.master.resize(side * side);
    mesh.offset.resize(side * side);
    auto id = [&](int i, int j) { return j * side + i; };
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i) {
            const int v = id(i, j);
            const double xh = double(i) / n, yh = double(j) / n;
            mesh.nodes.row(v) << a * xh, b * yh;
            mesh.shape_velocity(2 * v, 0) = xh;
            mesh.shape_velocity(2 * v + 1, 1) = yh;
            mesh.master[v] = id(i % n, j % n);
            mesh.offset[v] = Vec2i(i / n, j / n);
        }
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            const int bl = id(i, j), br = id(i + 1, j), tr = id(i + 1, j + 1), tl = id(i, j + 1);
            if (i < n / 2) {
                mesh.triangles.push_back({bl, br, tr, 0, 0, 0});
                mesh.triangles.push_back({bl, tr, tl, 0, 0, 0});
            } else {
                mesh.triangles.push_back({bl, br, tl, 0, 0, 0});
                mesh.triangles.push_back({br, tr, tl, 0, 0, 0});
            }
        }
    mesh.lattice << a, 0, 0, b;
    mesh.lattice_velocity = Eigen::MatrixXd::Zero(4, 2);
    mesh.lattice_velocity(0, 0) = 1.0;
    mesh.lattice_velocity(3, 1) = 1.0;
    finish_p2_mesh(mesh);
    return mesh;
}

PeriodicMesh rotate_rest(const PeriodicMesh &mesh, double theta) {
    constexpr double limit = 20.0 * std::numbers::pi / 180.0;
    if (std::abs(theta) > limit + 1e-15) throw InvalidInput("rotation angle exceeds 20 degrees");
    PeriodicMesh out = mesh;
    if (theta == 0.0) return out;
    Mat2 rot;
    rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    const Vec2 center = 0.5 * (mesh.lattice.col(0) + mesh.lattice.col(1));
    // d(center)/dq from the lattice velocity.
    const Eigen::MatrixXd dcenter =
        0.5 * (mesh.lattice_velocity.topRows(2) + mesh.lattice_velocity.bottomRows(2));
    const Mat2 shift = Mat2::Identity() - rot;
    for (int i = 0; i < mesh.num_nodes(); ++i) {
        out.nodes.row(i) = (rot * (mesh.node(i) - center) + center).transpose();
        out.shape_velocity.middleRows(2 * i, 2) = rot * mesh.shape_velocity.middleRows(2 * i, 2) + shift * dcenter;
    }
    out.lattice = rot * mesh.lattice;
    out.lattice_velocity.topRows(2) = rot * mesh.lattice_velocity.topRows(2);
    out.lattice_velocity.bottomRows(2) = rot * mesh.lattice_velocity.bottomRows(2);
    return out;
}

PeriodicMesh make_supercell(const PeriodicMesh &mesh, int n) {
    if (n < 1) throw InvalidInput("supercell size must be positive");
    if (n == 1) return mesh;
    PeriodicMesh out;
    const int nv = mesh.num_vertices;
    const int np = mesh.num_params();
    const Vec2 A1 = mesh.lattice.col(0), A2 = mesh.lattice.col(1);
    const Eigen::MatrixXd dA1 = mesh.lattice_velocity.topRows(2), dA2 = mesh.lattice_velocity.bottomRows(2);

    auto floor_div = [](int v, int m) { return (v >= 0) ? v / m : -((-v + m - 1) / m); };
    std::map<std::tuple<int, int, int>, int> key_to_id;
    std::vector<std::tuple<int, int, int>> keys;
    auto vertex_id = [&](int v, int ci, int cj) {
        const int m = mesh.master[v];
        const std::tuple<int, int, int> key{m, ci + mesh.offset[v].x(), cj + mesh.offset[v].y()};
        auto it = key_to_id.find(key);
        if (it != key_to_id.end()) return it->second;
        const int id = int(keys.size());
        key_to_id.emplace(key, id);
        keys.push_back(key);
        return id;
    };
    for (int cj = 0; cj < n; ++cj)
        for (int ci = 0; ci < n; ++ci)
            for (const auto &t : mesh.triangles)
                out.triangles.push_back({vertex_id(t[0], ci, cj), vertex_id(t[1], ci, cj), vertex_id(t[2], ci, cj), 0,
                                         0, 0});
    // Every master copy (m, k, l) with k, l in [0, n) exists, so slaves can point at them.
    for (int cj = 0; cj < n; ++cj)
        for (int ci = 0; ci < n; ++ci)
            for (int v = 0; v < nv; ++v)
                if (mesh.is_master(v)) vertex_id(v, ci, cj);

    const int total = int(keys.size());
    out.nodes.resize(total, 2);
    out.shape_velocity.resize(2 * total, np);
    out.master.resize(total);
    out.offset.resize(total);
    for (int id = 0; id < total; ++id) {
        const auto [m, k, l] = keys[id];
        out.nodes.row(id) = (mesh.node(m) + k * A1 + l * A2).transpose();
        out.shape_velocity.middleRows(2 * id, 2) = mesh.shape_velocity.middleRows(2 * m, 2) + k * dA1 + l * dA2;
        const int km = ((k % n) + n) % n, lm = ((l % n) + n) % n;
        out.master[id] = key_to_id.at({m, km, lm});
        out.offset[id] = Vec2i(floor_div(k, n), floor_div(l, n));
    }
    out.lattice = n * mesh.lattice;
    out.lattice_velocity = n * mesh.lattice_velocity;
    out.warnings = mesh.warnings;
    finish_p2_mesh(out);
    return out;
}

std::vector<int> mirror_node_map(const PeriodicMesh &mesh, double tol) {
    const double width = mesh.lattice(0, 0);
    if (std::abs(mesh.lattice(1, 0)) > 1e-14 || std::abs(mesh.lattice(0, 1)) > 1e-14)
        throw MeshingError("mirror map requires an axis-aligned lattice");
    const double cell = std::max(tol * 10, 1e-12);
    auto key = [&](double x, double y) { return std::make_pair(std::llround(x / cell), std::llround(y / cell)); };
    std::map<std::pair<long long, long long>, std::vector<int>> buckets;
    for (int i = 0; i < mesh.num_nodes(); ++i) buckets[key(mesh.nodes(i, 0), mesh.nodes(i, 1))].push_back(i);
    std::vector<int> map(mesh.num_nodes(), -1);
    for (int i = 0; i < mesh.num_nodes(); ++i) {
        const Vec2 target(width - mesh.nodes(i, 0), mesh.nodes(i, 1));
        const auto [kx, ky] = key(target.x(), target.y());
        for (long long dx = -1; dx <= 1 && map[i] < 0; ++dx)
            for (long long dy = -1; dy <= 1 && map[i] < 0; ++dy) {
                auto it = buckets.find({kx + dx, ky + dy});
                if (it == buckets.end()) continue;
                for (int j : it->second)
                    if ((mesh.node(j) - target).norm() <= tol * std::max(1.0, width)) {
                        map[i] = j;
                        break;
                    }
            }
        if (map[i] < 0) throw MeshingError("mesh is not mirror symmetric at node " + std::to_string(i));
    }
    return map;
}

void write_mesh(const PeriodicMesh &mesh, const std::filesystem::path &obj_path) {
    std::ofstream obj(obj_path);
    if (!obj) throw InvalidInput("cannot write " + obj_path.string());
    obj.precision(17);
    obj << "# flatcell periodic P2 mesh: " << mesh.num_vertices << " corners, " << mesh.num_nodes() << " nodes\n";
    for (int i = 0; i < mesh.num_nodes(); ++i) obj << "v " << mesh.nodes(i, 0) << ' ' << mesh.nodes(i, 1) << " 0\n";
    for (const auto &t : mesh.triangles) obj << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';

    nlohmann::json side;
    side["num_vertices"] = mesh.num_vertices;
    side["lattice"] = {{mesh.lattice(0, 0), mesh.lattice(1, 0)}, {mesh.lattice(0, 1), mesh.lattice(1, 1)}};
    side["triangles"] = mesh.triangles;
    nlohmann::json pairs = nlohmann::json::array();
    for (int i = 0; i < mesh.num_nodes(); ++i)
        if (!mesh.is_master(i)) pairs.push_back({i, mesh.master[i], mesh.offset[i].x(), mesh.offset[i].y()});
    side["periodic_pairs"] = pairs;
    side["boundary_edges"] = mesh.boundary_edges;
    nlohmann::json vel = nlohmann::json::array();
    for (int r = 0; r < mesh.shape_velocity.rows(); ++r) {
        std::vector<double> row(mesh.shape_velocity.cols());
        for (int c = 0; c < mesh.shape_velocity.cols(); ++c) row[c] = mesh.shape_velocity(r, c);
        vel.push_back(row);
    }
    side["shape_velocity"] = vel;
    side["warnings"] = mesh.warnings;
    auto sidecar = obj_path;
    sidecar.replace_extension(".json");
    std::ofstream js(sidecar);
    js << side.dump(1) << '\n';
}

} // namespace flatcell

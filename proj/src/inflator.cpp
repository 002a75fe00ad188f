#include "flatcell/inflator.hpp"

#include <cmath>
#include <map>
#include <numeric>

namespace flatcell {

namespace {

struct GridNode {
    double f = 0;
    Eigen::VectorXd df;
    int sign = 0;
    bool snapped = false;
    int dir = 0;   ///< 0: moves along x, 1: along y
    int step = 0;  ///< +1 / -1 toward the neighbor it snapped onto
    double t = 0;  ///< fraction of the grid edge travelled
    Eigen::VectorXd dt;
};

struct MeshVertex {
    Vec2 pos;               ///< unit-square coordinates, unwrapped
    Eigen::MatrixXd vel;    ///< 2 x num_shape
    long long torus_key;
    Vec2i offset;
};

class Builder {
public:
    Builder(const ImplicitField &field, const Eigen::MatrixXd &node_jac, int n, double tau)
        : field_(field), jac_(node_jac), n_(n), tau_(tau), num_shape_(int(node_jac.cols())) {}

    void sample() {
        grid_.resize(n_ * n_);
        Eigen::VectorXd g;
        for (int j = 0; j < n_; ++j)
            for (int i = 0; i < n_; ++i) {
                GridNode &node = grid_[idx(i, j)];
                node.f = field_.value_and_node_gradient(Vec2(double(i) / n_, double(j) / n_), g);
                node.df = jac_.transpose() * g;
            }
        // Average mirror pairs so the grid is exactly symmetric.
        for (int j = 0; j < n_; ++j)
            for (int i = 1; i < n_ / 2; ++i) {
                GridNode &l = grid_[idx(i, j)];
                GridNode &r = grid_[idx(n_ - i, j)];
                const double f = 0.5 * (l.f + r.f);
                const Eigen::VectorXd df = 0.5 * (l.df + r.df);
                l.f = r.f = f;
                l.df = r.df = df;
            }
        bool any_neg = false, any_pos = false;
        for (auto &node : grid_) {
            node.sign = (node.f < 0) ? -1 : (node.f > 0 ? 1 : 0);
            any_neg |= node.f < 0;
            any_pos |= node.f > 0;
        }
        if (!any_neg) throw MeshingError("empty solid: the field is nonnegative on the whole grid");
        if (!any_pos) throw MeshingError("empty void region: the field is negative on the whole grid");
    }

    void snap() {
        // Decide on the left half including the axis, mirror onto the right half.
        std::vector<GridNode> decided = grid_;
        for (int j = 0; j < n_; ++j)
            for (int i = 0; i <= n_ / 2; ++i) {
                const GridNode &node = grid_[idx(i, j)];
                if (node.sign == 0) continue;
                const bool along_x = !(i == 0 || i == n_ / 2);
                const bool along_y = j != 0;
                double best = tau_;
                int best_dir = -1, best_step = 0;
                const int dirs[4][2] = {{0, 1}, {0, -1}, {1, 1}, {1, -1}};
                for (const auto &d : dirs) {
                    if ((d[0] == 0 && !along_x) || (d[0] == 1 && !along_y)) continue;
                    const GridNode &m = (d[0] == 0) ? grid_[idx(i + d[1], j)] : grid_[idx(i, j + d[1])];
                    if (node.sign * m.sign >= 0) continue;
                    const double ratio = std::abs(node.f) / (std::abs(node.f) + std::abs(m.f));
                    if (ratio < best) {
                        best = ratio;
                        best_dir = d[0];
                        best_step = d[1];
                    }
                }
                if (best_dir < 0) continue;
                const GridNode &m = (best_dir == 0) ? grid_[idx(i + best_step, j)] : grid_[idx(i, j + best_step)];
                GridNode &out = decided[idx(i, j)];
                out.snapped = true;
                out.dir = best_dir;
                out.step = best_step;
                out.t = node.f / (node.f - m.f);
                out.dt = (-node.df * m.f + node.f * m.df) / ((node.f - m.f) * (node.f - m.f));
            }
        for (int j = 0; j < n_; ++j)
            for (int i = n_ / 2 + 1; i < n_; ++i) {
                const GridNode &src = decided[idx(n_ - i, j)];
                GridNode &dst = decided[idx(i, j)];
                dst.snapped = src.snapped;
                if (!src.snapped) continue;
                dst.dir = src.dir;
                dst.step = (src.dir == 0) ? -src.step : src.step;
                dst.t = src.t;
                dst.dt = src.dt;
            }
        for (auto &node : decided)
            if (node.snapped) node.sign = 0;
        grid_ = std::move(decided);
    }

    void triangulate() {
        for (int j = 0; j < n_; ++j)
            for (int i = 0; i < n_; ++i) triangulate_cell(i, j);
    }

    PeriodicMesh finish(double a, double b) {
        PeriodicMesh mesh;
        const int nv = int(verts_.size());
        const int np = num_shape_ + 2;
        mesh.nodes.resize(nv, 2);
        mesh.shape_velocity = Eigen::MatrixXd::Zero(2 * nv, np);
        for (int v = 0; v < nv; ++v) {
            const MeshVertex &mv = verts_[v];
            mesh.nodes.row(v) << a * mv.pos.x(), b * mv.pos.y();
            mesh.shape_velocity.block(2 * v, 0, 1, num_shape_) = a * mv.vel.row(0);
            mesh.shape_velocity.block(2 * v + 1, 0, 1, num_shape_) = b * mv.vel.row(1);
            mesh.shape_velocity(2 * v, num_shape_) = mv.pos.x();
            mesh.shape_velocity(2 * v + 1, num_shape_ + 1) = mv.pos.y();
        }
        mesh.lattice << a, 0, 0, b;
        mesh.lattice_velocity = Eigen::MatrixXd::Zero(4, np);
        mesh.lattice_velocity(0, num_shape_) = 1.0;
        mesh.lattice_velocity(3, num_shape_ + 1) = 1.0;

        // Master of each torus class: the used copy with the smallest offset.
        std::map<long long, int> master_of;
        for (int v = 0; v < nv; ++v) {
            auto it = master_of.find(verts_[v].torus_key);
            if (it == master_of.end()) {
                master_of.emplace(verts_[v].torus_key, v);
                continue;
            }
            const Vec2i &o = verts_[v].offset, &cur = verts_[it->second].offset;
            if (o.sum() < cur.sum() || (o.sum() == cur.sum() && std::make_pair(o.x(), o.y()) <
                                                                     std::make_pair(cur.x(), cur.y())))
                it->second = v;
        }
        mesh.master.resize(nv);
        mesh.offset.resize(nv);
        for (int v = 0; v < nv; ++v) {
            const int m = master_of.at(verts_[v].torus_key);
            mesh.master[v] = m;
            mesh.offset[v] = verts_[v].offset - verts_[m].offset;
        }
        for (const auto &t : tris_) mesh.triangles.push_back({t[0], t[1], t[2], 0, 0, 0});

        if (count_components(mesh) > 1)
            mesh.warnings.push_back("disconnected solid: the periodic solid has several components");
        finish_p2_mesh(mesh);
        return mesh;
    }

private:
    int idx(int i, int j) const { return ((j % n_ + n_) % n_) * n_ + ((i % n_ + n_) % n_); }

    /// Corner vertex for unwrapped grid node (I, J), I, J in [0, n].
    int corner(int I, int J) {
        const long long key = (static_cast<long long>(J) * (n_ + 1) + I) * 3 + 2;
        auto it = vert_of_.find(key);
        if (it != vert_of_.end()) return it->second;
        const GridNode &g = grid_[idx(I, J)];
        MeshVertex mv;
        mv.pos = Vec2(double(I) / n_, double(J) / n_);
        mv.vel = Eigen::MatrixXd::Zero(2, num_shape_);
        if (g.snapped) {
            mv.pos[g.dir] += g.step * g.t / n_;
            mv.vel.row(g.dir) = (g.step / double(n_)) * g.dt.transpose();
        }
        mv.torus_key = static_cast<long long>(idx(I, J)) * 3 + 2;
        mv.offset = Vec2i(I / n_, J / n_);
        return add_vertex(key, std::move(mv));
    }

    /// Crossing vertex on the grid edge leaving (I, J) along dir.
    int crossing(int I, int J, int dir) {
        const long long key = (static_cast<long long>(J) * (n_ + 1) + I) * 3 + dir;
        auto it = vert_of_.find(key);
        if (it != vert_of_.end()) return it->second;
        const GridNode &p = grid_[idx(I, J)];
        const GridNode &q = (dir == 0) ? grid_[idx(I + 1, J)] : grid_[idx(I, J + 1)];
        const double t = p.f / (p.f - q.f);
        MeshVertex mv;
        mv.pos = Vec2(double(I) / n_, double(J) / n_);
        mv.pos[dir] += t / n_;
        mv.vel = Eigen::MatrixXd::Zero(2, num_shape_);
        mv.vel.row(dir) = ((-p.df * q.f + p.f * q.df) / ((p.f - q.f) * (p.f - q.f) * n_)).transpose();
        mv.torus_key = static_cast<long long>(idx(I, J)) * 3 + dir;
        mv.offset = (dir == 0) ? Vec2i(0, J / n_) : Vec2i(I / n_, 0);
        return add_vertex(key, std::move(mv));
    }

    int add_vertex(long long key, MeshVertex mv) {
        const int id = int(verts_.size());
        verts_.push_back(std::move(mv));
        vert_of_.emplace(key, id);
        return id;
    }

    void triangulate_cell(int i, int j) {
        // Slots counter-clockwise from the bottom-left corner: corners at even
        // positions, edge crossings at odd positions.
        const int ci[4][2] = {{i, j}, {i + 1, j}, {i + 1, j + 1}, {i, j + 1}};
        int s[4];
        int negatives = 0;
        for (int k = 0; k < 4; ++k) {
            s[k] = grid_[idx(ci[k][0], ci[k][1])].sign;
            negatives += s[k] < 0;
        }
        if (negatives == 0) return;
        bool cross[4];
        for (int k = 0; k < 4; ++k) cross[k] = s[k] * s[(k + 1) % 4] < 0;

        auto slot_vertex = [&](int slot) {
            if (slot % 2 == 0) return corner(ci[slot / 2][0], ci[slot / 2][1]);
            switch (slot / 2) {
            case 0: return crossing(i, j, 0);
            case 1: return crossing(i + 1, j, 1);
            case 2: return crossing(i, j + 1, 0);
            default: return crossing(i, j, 1);
            }
        };
        auto kept = [&](int slot) { return slot % 2 == 0 ? s[slot / 2] <= 0 : cross[slot / 2]; };

        const bool saddle = s[0] != 0 && s[1] != 0 && s[0] == s[2] && s[1] == s[3] && s[0] != s[1];
        if (saddle) {
            const Vec2 c((i + 0.5) / n_, (j + 0.5) / n_);
            const double fc = 0.5 * (field_.value(c) + field_.value(Vec2(1.0 - c.x(), c.y())));
            if (fc >= 0) {
                for (int k = 0; k < 4; ++k) {
                    if (s[k] > 0) continue;
                    const int slot = 2 * k;
                    tris_.push_back({slot_vertex((slot + 7) % 8), slot_vertex(slot), slot_vertex(slot + 1)});
                }
                return;
            }
        }

        // Left half walks counter-clockwise from the bottom-left corner; the
        // right half mirrors it (clockwise from bottom-right, then reversed).
        std::vector<int> poly;
        if (i < n_ / 2) {
            for (int slot = 0; slot < 8; ++slot)
                if (kept(slot)) poly.push_back(slot);
        } else {
            const int cw[8] = {2, 1, 0, 7, 6, 5, 4, 3};
            for (int slot : cw)
                if (kept(slot)) poly.push_back(slot);
            std::reverse(poly.begin() + 1, poly.end());
        }
        if (poly.size() < 3) return;
        std::vector<int> ids;
        for (int slot : poly) ids.push_back(slot_vertex(slot));
        for (size_t k = 1; k + 1 < ids.size(); ++k) tris_.push_back({ids[0], ids[k], ids[k + 1]});
    }

    int count_components(const PeriodicMesh &mesh) const {
        std::vector<int> parent(mesh.master.size());
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](int x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        for (const auto &t : tris_)
            for (int k = 0; k < 3; ++k) parent[find(mesh.master[t[k]])] = find(mesh.master[t[(k + 1) % 3]]);
        int count = 0;
        for (size_t v = 0; v < parent.size(); ++v)
            if (mesh.master[v] == int(v) && find(int(v)) == int(v)) ++count;
        return count;
    }

    const ImplicitField &field_;
    const Eigen::MatrixXd &jac_;
    int n_;
    double tau_;
    int num_shape_;
    std::vector<GridNode> grid_;
    std::vector<MeshVertex> verts_;
    std::map<long long, int> vert_of_;
    std::vector<std::array<int, 3>> tris_;
};

} // namespace

PeriodicMesh inflate(const CellTopology &topology, const ShapeParams &params, const InflatorSettings &settings) {
    const int n = settings.resolution;
    if (n < 16) throw InvalidInput("inflator resolution must be at least 16");
    if (n % 2) throw InvalidInput("inflator resolution must be even");
    if (!(params.a > 0) || !(params.b > 0)) throw InvalidInput("cell dimensions must be positive");
    for (double r : params.radii)
        if (!(r > 0)) throw InvalidInput("radii must be positive");

    const ExpandedParams expanded = expand_symmetry(topology, params);
    const ImplicitField field(topology, expanded, settings.field);
    const Eigen::MatrixXd jac = ParamLayout(topology).node_jacobian(topology);

    Builder builder(field, jac, n, settings.snap_fraction);
    builder.sample();
    builder.snap();
    builder.triangulate();
    PeriodicMesh mesh = builder.finish(params.a, params.b);
    mesh.validate();
    return mesh;
}

} // namespace flatcell

#include "flatcell/contact.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <tuple>
#include <unordered_map>

namespace flatcell {

ContactSettings ContactSettings::defaults(double a, double b, const Material &material) {
    ContactSettings s;
    s.dhat = 1e-3 * std::min(a, b);
    s.kappa = 1e3 * material.mu;
    return s;
}

TiledSurface::TiledSurface(const PeriodicMesh &mesh, const PeriodicDofMap &dofs) : lattice(mesh.lattice) {
    std::set<int> surface;
    for (const auto &e : mesh.boundary_edges) surface.insert(e.begin(), e.end());
    num_cell_surface_nodes = static_cast<int>(surface.size());

    std::map<std::tuple<int, int, int>, int> id_of;
    std::vector<Vec2> pos;
    auto vertex = [&](int node, const Vec2i &t) {
        const int m = mesh.master[node];
        const Vec2i off = mesh.offset[node] + t;
        const auto key = std::make_tuple(m, off.x(), off.y());
        auto it = id_of.find(key);
        if (it != id_of.end()) return it->second;
        const int id = static_cast<int>(pos.size());
        id_of.emplace(key, id);
        pos.push_back(mesh.node(node) + mesh.lattice * t.cast<double>());
        cell_node.push_back(node);
        tag.push_back(t);
        slot.push_back(dofs.slot[node]);
        total_offset.push_back(off);
        return id;
    };
    const Vec2i tags[4] = {Vec2i(0, 0), Vec2i(1, 0), Vec2i(0, 1), Vec2i(1, 1)};
    std::set<std::array<int, 2>> seen;
    for (const auto &t : tags) {
        for (int node : surface) vertex(node, t);
        for (const auto &e : mesh.boundary_edges)
            for (int k = 0; k < 2; ++k) {
                const std::array<int, 2> s{vertex(e[k], t), vertex(e[k + 1], t)};
                if (seen.insert(s).second) segments.push_back(s);
            }
    }
    rest.resize(int(pos.size()), 2);
    for (int j = 0; j < int(pos.size()); ++j) rest.row(j) = pos[j].transpose();

    neighbors_.assign(pos.size(), {});
    for (const auto &s : segments) {
        neighbors_[s[0]].push_back(s[1]);
        neighbors_[s[1]].push_back(s[0]);
    }

    num_unknowns_ = dofs.size();
    std::vector<Triplet> trip;
    for (int j = 0; j < num_vertices(); ++j) {
        const Vec2 x = pos[j];
        trip.emplace_back(2 * j, 2 * slot[j], 1.0);
        trip.emplace_back(2 * j + 1, 2 * slot[j] + 1, 1.0);
        trip.emplace_back(2 * j, dofs.index_g00(), x.x());
        trip.emplace_back(2 * j, dofs.index_g01(), x.y());
        trip.emplace_back(2 * j + 1, dofs.index_g01(), x.x());
        trip.emplace_back(2 * j + 1, dofs.index_g11(), x.y());
    }
    jacobian_.resize(2 * num_vertices(), num_unknowns_);
    jacobian_.setFromTriplets(trip.begin(), trip.end());
}

Eigen::MatrixX2d TiledSurface::displacement(const HomogState &state) const {
    if (state.x.size() != num_unknowns_) throw InvalidInput("state does not belong to the tiled mesh");
    const Mat2 G = state.G();
    Eigen::MatrixX2d u(num_vertices(), 2);
    for (int j = 0; j < num_vertices(); ++j)
        u.row(j) = (Vec2(state.x[2 * slot[j]], state.x[2 * slot[j] + 1]) + G * rest.row(j).transpose()).transpose();
    return u;
}

bool TiledSurface::excluded(int p, int s) const {
    const int a = segments[s][0], b = segments[s][1];
    if (p == a || p == b) return true;
    for (int n : neighbors_[p])
        if (n == a || n == b) return true;
    return false;
}

double barrier(double d, double dhat) {
    if (d >= dhat) return 0.0;
    return -(d - dhat) * (d - dhat) * std::log(d / dhat);
}

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat26 = Eigen::Matrix<double, 2, 6>;

/// Selection matrices over z = (p, a, b): e = b - a, w = p - a.
const Mat26 &select_e() {
    static const Mat26 m = [] {
        Mat26 r = Mat26::Zero();
        r.block<2, 2>(0, 2) = -Mat2::Identity();
        r.block<2, 2>(0, 4) = Mat2::Identity();
        return r;
    }();
    return m;
}
const Mat26 &select_w(int endpoint) {
    static const std::array<Mat26, 2> m = [] {
        std::array<Mat26, 2> r;
        for (int k = 0; k < 2; ++k) {
            r[k].setZero();
            r[k].block<2, 2>(0, 0) = Mat2::Identity();
            r[k].block<2, 2>(0, 2 + 2 * k) = -Mat2::Identity();
        }
        return r;
    }();
    return m[endpoint];
}

} // namespace

double point_segment_distance2(const Vec2 &p, const Vec2 &a, const Vec2 &b, Vec6 *grad, Mat6 *hess) {
    Vec6 z;
    z << p, a, b;
    const Vec2 e = b - a;
    const double L = e.squaredNorm();
    const double t = (L > 0) ? (p - a).dot(e) / L : 0.0;
    if (t <= 0 || t >= 1) {
        // Point-point branch against the nearer endpoint.
        const Mat26 &D = select_w(t <= 0 ? 0 : 1);
        const Mat6 DtD = D.transpose() * D;
        const Vec2 w = D * z;
        if (grad) *grad = 2 * DtD * z;
        if (hess) *hess = 2 * DtD;
        return w.squaredNorm();
    }
    // Line branch: s = c^2 / L with c = e x w bilinear.
    const Mat26 &E = select_e();
    const Mat26 &W = select_w(0);
    Mat2 R;
    R << 0, 1, -1, 0;
    const Mat6 Hc = E.transpose() * R * W + W.transpose() * R.transpose() * E;
    const Mat6 HL = 2 * E.transpose() * E;
    const Vec6 gc = Hc * z;
    const Vec6 gL = HL * z;
    const double c = 0.5 * z.dot(gc);
    const double s = c * c / L;
    if (grad) *grad = 2 * c * gc / L - c * c * gL / (L * L);
    if (hess)
        *hess = 2 * gc * gc.transpose() / L + 2 * c * Hc / L - 2 * c * (gc * gL.transpose() + gL * gc.transpose()) / (L * L) -
                c * c * HL / (L * L) + 2 * c * c * gL * gL.transpose() / (L * L * L);
    return s;
}

namespace {

/// Uniform hash grid over segment boxes inflated by radius; returns candidate
/// (point, segment) pairs whose boxes overlap, sorted.
std::vector<std::pair<int, int>> candidates(const Eigen::MatrixX2d &y, const Eigen::MatrixX2d *dy,
                                            const std::vector<std::array<int, 2>> &segments, double radius) {
    const int M = static_cast<int>(y.rows());
    auto box_of_point = [&](int j, Vec2 &lo, Vec2 &hi) {
        lo = hi = y.row(j).transpose();
        if (dy) {
            const Vec2 end = lo + dy->row(j).transpose();
            lo = lo.cwiseMin(end);
            hi = hi.cwiseMax(end);
        }
    };
    double mean_len = 0;
    for (const auto &s : segments) mean_len += (y.row(s[0]) - y.row(s[1])).norm();
    mean_len /= std::max<size_t>(1, segments.size());
    const double cell = std::max({mean_len, 2 * radius, 1e-300});

    std::unordered_map<long long, std::vector<int>> grid;
    auto key = [](long long i, long long j) { return (i << 32) ^ (j & 0xffffffffLL); };
    std::vector<Vec2> plo(M), phi(M);
    for (int j = 0; j < M; ++j) box_of_point(j, plo[j], phi[j]);
    for (int s = 0; s < int(segments.size()); ++s) {
        const Vec2 lo = plo[segments[s][0]].cwiseMin(plo[segments[s][1]]).array() - radius;
        const Vec2 hi = phi[segments[s][0]].cwiseMax(phi[segments[s][1]]).array() + radius;
        const long long i0 = std::floor(lo.x() / cell), i1 = std::floor(hi.x() / cell);
        const long long j0 = std::floor(lo.y() / cell), j1 = std::floor(hi.y() / cell);
        if ((i1 - i0 + 1) * (j1 - j0 + 1) > 1000000) throw SolverFailure("contact broad phase: step too large");
        for (long long i = i0; i <= i1; ++i)
            for (long long j = j0; j <= j1; ++j) grid[key(i, j)].push_back(s);
    }
    std::vector<std::pair<int, int>> out;
    std::vector<int> local;
    for (int p = 0; p < M; ++p) {
        local.clear();
        const long long i0 = std::floor(plo[p].x() / cell), i1 = std::floor(phi[p].x() / cell);
        const long long j0 = std::floor(plo[p].y() / cell), j1 = std::floor(phi[p].y() / cell);
        for (long long i = i0; i <= i1; ++i)
            for (long long j = j0; j <= j1; ++j) {
                auto it = grid.find(key(i, j));
                if (it != grid.end()) local.insert(local.end(), it->second.begin(), it->second.end());
            }
        std::sort(local.begin(), local.end());
        local.erase(std::unique(local.begin(), local.end()), local.end());
        for (int s : local) out.emplace_back(p, s);
    }
    return out;
}

using PairKey = std::array<int, 7>;

PairKey pair_key(const TiledSurface &t, int p, int s) {
    const int a = t.segments[s][0], b = t.segments[s][1];
    const Vec2i da = t.total_offset[a] - t.total_offset[p];
    const Vec2i db = t.total_offset[b] - t.total_offset[p];
    return {t.slot[p], t.slot[a], da.x(), da.y(), t.slot[b], db.x(), db.y()};
}

} // namespace

TiledBarrier barrier_energy(const TiledSurface &tiling, const Eigen::MatrixX2d &ut, const ContactSettings &settings,
                            int order) {
    if (!(settings.dhat > 0) || !(settings.kappa > 0)) throw InvalidInput("contact: dhat and kappa must be positive");
    const int M = tiling.num_vertices();
    if (ut.rows() != M) throw InvalidInput("tiled displacement does not match the tiling");
    const Eigen::MatrixX2d y = tiling.rest + ut;
    const double dhat = settings.dhat, dhat2 = dhat * dhat;

    // Translation-equivalent pairs are counted once.
    std::map<PairKey, std::pair<int, int>> unique;
    for (const auto &[p, s] : candidates(y, nullptr, tiling.segments, dhat)) {
        if (tiling.excluded(p, s)) continue;
        const int a = tiling.segments[s][0], b = tiling.segments[s][1];
        const double d2 = point_segment_distance2(y.row(p), y.row(a), y.row(b), nullptr, nullptr);
        if (d2 >= dhat2) continue;
        unique.emplace(pair_key(tiling, p, s), std::make_pair(p, s));
    }

    TiledBarrier r;
    if (order >= 1) r.grad = Eigen::VectorXd::Zero(2 * M);
    std::vector<Triplet> trip;
    for (const auto &[key, ps] : unique) {
        const auto [p, s] = ps;
        const int a = tiling.segments[s][0], b = tiling.segments[s][1];
        Vec6 g;
        Mat6 H;
        const double d2 = point_segment_distance2(y.row(p), y.row(a), y.row(b), order >= 1 ? &g : nullptr,
                                                  order >= 2 ? &H : nullptr);
        const double d = std::sqrt(d2);
        if (!(d > 0)) throw InadmissibleState("contact: surface self-intersection (zero distance)");
        r.min_distance = std::min(r.min_distance, d);
        r.active.push_back({p, s, d});
        for (int k = 0; k < 2; ++k)
            if ((tiling.total_offset[tiling.segments[s][k]] - tiling.total_offset[p]).cwiseAbs().maxCoeff() >= 2)
                ++r.far_pairs;
        r.energy += settings.kappa * barrier(d, dhat);
        if (order < 1) continue;
        const double lg = std::log(d / dhat);
        const double b1 = -2 * (d - dhat) * lg - (d - dhat) * (d - dhat) / d;
        const double B1 = settings.kappa * b1 / (2 * d);
        const int idx[6] = {2 * p, 2 * p + 1, 2 * a, 2 * a + 1, 2 * b, 2 * b + 1};
        for (int k = 0; k < 6; ++k) r.grad[idx[k]] += B1 * g[k];
        if (order < 2) continue;
        const double b2 = -2 * lg - 4 * (d - dhat) / d + (d - dhat) * (d - dhat) / d2;
        const double B2 = settings.kappa * (b2 - b1 / d) / (4 * d2);
        const Mat6 Hl = B2 * g * g.transpose() + B1 * H;
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) trip.emplace_back(idx[i], idx[j], Hl(i, j));
    }
    if (order >= 2) {
        r.hess.resize(2 * M, 2 * M);
        r.hess.setFromTriplets(trip.begin(), trip.end());
    }
    if (settings.strict_tiling && r.far_pairs > 0)
        throw SolverFailure("contact spans more than one cell: the 2x2 tiling is insufficient");
    return r;
}

ContactEnergy chain_to_v(const TiledSurface &tiling, TiledBarrier tiled, int order) {
    ContactEnergy c;
    c.energy = tiled.energy;
    const SparseMat &J = tiling.jacobian();
    if (order >= 1) c.grad = J.transpose() * tiled.grad;
    if (order >= 2) c.hess = SparseMat(J.transpose() * tiled.hess * J);
    c.tiled = std::move(tiled);
    return c;
}

ContactEnergy contact_energy(const TiledSurface &tiling, const HomogState &state, const ContactSettings &settings,
                             int order) {
    return chain_to_v(tiling, barrier_energy(tiling, tiling.displacement(state), settings, order), order);
}

double min_surface_distance(const TiledSurface &tiling, const HomogState &state, double cutoff) {
    const Eigen::MatrixX2d y = tiling.positions(state);
    double best = std::numeric_limits<double>::infinity();
    for (const auto &[p, s] : candidates(y, nullptr, tiling.segments, cutoff)) {
        if (tiling.excluded(p, s)) continue;
        const int a = tiling.segments[s][0], b = tiling.segments[s][1];
        const double d = std::sqrt(point_segment_distance2(y.row(p), y.row(a), y.row(b), nullptr, nullptr));
        if (d < cutoff) best = std::min(best, d);
    }
    return best;
}

double contact_step_limit(const TiledSurface &tiling, const HomogState &state, const Eigen::VectorXd &dir) {
    const Eigen::MatrixX2d y = tiling.positions(state);
    const Eigen::VectorXd dflat = tiling.jacobian() * dir;
    Eigen::MatrixX2d dy(y.rows(), 2);
    for (int j = 0; j < y.rows(); ++j) dy.row(j) << dflat[2 * j], dflat[2 * j + 1];
    if (dy.cwiseAbs().maxCoeff() == 0.0) return 1.0;

    // Sweeps longer than half the tiled block are cut first; near-singular
    // directions would otherwise flood the broad phase.
    const double extent = (y.colwise().maxCoeff() - y.colwise().minCoeff()).maxCoeff();
    const double speed = dy.rowwise().norm().maxCoeff();
    const double cap = std::min(1.0, 0.5 * extent / speed);
    dy *= cap;

    double alpha_min = 1.0;
    for (const auto &[p, s] : candidates(y, &dy, tiling.segments, 0.0)) {
        if (tiling.excluded(p, s)) continue;
        const int a = tiling.segments[s][0], b = tiling.segments[s][1];
        auto dist = [&](double t) {
            return std::sqrt(point_segment_distance2(y.row(p) + t * dy.row(p), y.row(a) + t * dy.row(a),
                                                     y.row(b) + t * dy.row(b), nullptr, nullptr));
        };
        const double d0 = dist(0.0);
        if (d0 <= 0) return 0.0;
        // Distance decreases no faster than the largest endpoint-relative speed.
        const double lp = std::max((dy.row(a) - dy.row(p)).norm(), (dy.row(b) - dy.row(p)).norm());
        if (lp <= 0 || d0 - lp > 0.1 * d0) continue;
        double alpha = 0;
        for (int it = 0; it < 100 && alpha < alpha_min; ++it) {
            const double step = (dist(alpha) - 0.1 * d0) / lp;
            if (step <= 1e-12 * std::max(alpha, 1e-3)) break;
            alpha += step;
        }
        alpha_min = std::min(alpha_min, alpha);
    }
    return cap * std::max(alpha_min, 0.0);
}

double step_limit(const ElasticModel &elastic, const TiledSurface *tiling, const HomogState &state,
                  const Eigen::VectorXd &dir) {
    double alpha = elastic.inversion_step_limit(state, dir);
    if (tiling) alpha = std::min(alpha, contact_step_limit(*tiling, state, dir));
    return std::min(alpha, 1.0);
}

Eigen::MatrixX2d contact_rest_vjp(const TiledSurface &tiling, const HomogState &state, const ContactSettings &settings,
                                  const Eigen::VectorXd &p) {
    const int M = tiling.num_vertices();
    Eigen::MatrixX2d r = Eigen::MatrixX2d::Zero(M, 2);
    const TiledBarrier tb = barrier_energy(tiling, tiling.displacement(state), settings, 2);
    if (tb.active.empty()) return r;
    const Eigen::VectorXd jp = tiling.jacobian() * p;
    const Eigen::VectorXd hjp = tb.hess * jp;
    const int n = int(p.size());
    Mat2 PG;
    PG << p[n - 3], p[n - 2], p[n - 2], p[n - 1];
    const Mat2 FG = Mat2::Identity() + state.G();
    for (int j = 0; j < M; ++j) {
        const Vec2 g(tb.grad[2 * j], tb.grad[2 * j + 1]);
        const Vec2 h(hjp[2 * j], hjp[2 * j + 1]);
        r.row(j) = (PG * g + FG.transpose() * h).transpose();
    }
    return r;
}

Eigen::VectorXd tiled_rest_to_params(const TiledSurface &tiling, const PeriodicMesh &mesh,
                                     const Eigen::MatrixX2d &rest_derivative) {
    const int np = mesh.num_params();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(np);
    if (rest_derivative.rows() == 0) return out;
    if (rest_derivative.rows() != tiling.num_vertices())
        throw InvalidInput("tiled_rest_to_params: one row per tiled vertex expected");
    for (int j = 0; j < tiling.num_vertices(); ++j) {
        const Vec2 r = rest_derivative.row(j).transpose();
        if (r.x() == 0 && r.y() == 0) continue;
        const int node = tiling.cell_node[j];
        out += mesh.shape_velocity.middleRows(2 * node, 2).transpose() * r;
        const Vec2i t = tiling.tag[j];
        if (t.x()) out += mesh.lattice_velocity.topRows(2).transpose() * r;
        if (t.y()) out += mesh.lattice_velocity.bottomRows(2).transpose() * r;
    }
    return out;
}

void write_contact_trace(std::ostream &out, int iteration, const TiledSurface &tiling, const TiledBarrier &tiled) {
    const auto old = out.precision(17);
    for (const auto &pair : tiled.active)
        out << iteration << ',' << pair.point << ',' << tiling.segments[pair.segment][0] << ','
            << tiling.segments[pair.segment][1] << ',' << pair.distance << '\n';
    out.precision(old);
}

} // namespace flatcell

#include "flatcell/implicit_field.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <tuple>

namespace flatcell {

namespace {

using Deriv6 = Eigen::Matrix<double, 6, 1>;
using AD = Eigen::AutoDiffScalar<Deriv6>;

template <class T>
T capsule_distance_t(const Vec2 &p, const T &ax, const T &ay, const T &bx, const T &by, const T &ra, const T &rb) {
    using std::sqrt;
    const T dx = bx - ax, dy = by - ay;
    const T len2 = dx * dx + dy * dy;
    T t = T(0.0);
    if (len2 > 1e-30) {
        t = ((p.x() - ax) * dx + (p.y() - ay) * dy) / len2;
        if (t < 0.0) t = T(0.0);
        else if (t > 1.0) t = T(1.0);
    }
    const T cx = ax + t * dx - p.x();
    const T cy = ay + t * dy - p.y();
    const T dist2 = cx * cx + cy * cy;
    const T r = ra + t * (rb - ra);
    if (dist2 < 1e-28) return -r;
    return sqrt(dist2) - r;
}

bool is_integer(double v) { return std::abs(v - std::round(v)) < 1e-9; }

} // namespace

double capsule_distance(const Vec2 &p, const Vec2 &a, const Vec2 &b, double ra, double rb) {
    return capsule_distance_t<double>(p, a.x(), a.y(), b.x(), b.y(), ra, rb);
}

ImplicitField::ImplicitField(const CellTopology &topology, const ExpandedParams &params, FieldSettings settings)
    : topology_(&topology), params_(params), settings_(settings) {
    const int n = topology.num_nodes();
    if (int(params.positions.size()) != n || int(params.radii.size()) != n)
        throw InvalidInput("expanded parameters do not match topology '" + topology.id + "'");

    // Canonical torus node per node (periodic partners collapse), with lattice offset.
    std::vector<int> canon(n);
    std::vector<Vec2i> offset(n, Vec2i::Zero());
    for (int i = 0; i < n; ++i) {
        canon[i] = i;
        for (int j = 0; j < i; ++j) {
            const Vec2 d = topology.nodes[i] - topology.nodes[j];
            if (is_integer(d.x()) && is_integer(d.y()) && canon[j] == j) {
                canon[i] = j;
                offset[i] = Vec2i(int(std::lround(d.x())), int(std::lround(d.y())));
                break;
            }
        }
    }

    std::set<std::tuple<int, int, int, int>> seen;
    std::vector<bool> has_edge(n, false);
    for (const auto &e : topology.edges) {
        int ci = canon[e[0]], cj = canon[e[1]];
        Vec2i rel = offset[e[1]] - offset[e[0]];
        if (ci > cj || (ci == cj && (rel.x() < 0 || (rel.x() == 0 && rel.y() < 0)))) {
            std::swap(ci, cj);
            rel = -rel;
        }
        has_edge[canon[e[0]]] = has_edge[canon[e[1]]] = true;
        if (seen.insert({ci, cj, rel.x(), rel.y()}).second) primitives_.push_back({e[0], e[1]});
    }
    for (int i = 0; i < n; ++i)
        if (canon[i] == i && !has_edge[i]) primitives_.push_back({i, i});
}

template <class Visitor>
double ImplicitField::blend(const Vec2 &p, Visitor &&visit) const {
    // Gathers shifted distances s_k = d_k + R over primitives and their 3x3 images.
    const double R = settings_.blend_offset;
    const double exponent = settings_.blend_exponent;
    double smin = std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    thread_local std::vector<double> dist;
    dist.clear();
    for (const auto &prim : primitives_)
        for (int oy = -1; oy <= 1; ++oy)
            for (int ox = -1; ox <= 1; ++ox) {
                const Vec2 q = p - Vec2(ox, oy);
                const double d = capsule_distance(q, params_.positions[prim.node_a], params_.positions[prim.node_b],
                                                  params_.radii[prim.node_a], params_.radii[prim.node_b]);
                dist.push_back(d);
                dmin = std::min(dmin, d);
                smin = std::min(smin, d + R);
            }

    const bool hard = exponent <= 0 || smin <= 1e-6 * R;
    double f;
    if (hard) {
        f = dmin;
    } else {
        double sum = 0;
        for (double d : dist) sum += std::pow(smin / (d + R), exponent);
        f = smin * std::pow(sum, -1.0 / exponent) - R;
    }

    // Blend weights: df/dd_k = ((f + R) / s_k)^(p + 1).
    int k = 0;
    for (const auto &prim : primitives_)
        for (int oy = -1; oy <= 1; ++oy)
            for (int ox = -1; ox <= 1; ++ox, ++k) {
                double weight;
                if (hard) weight = (dist[k] == dmin) ? 1.0 : 0.0;
                else weight = std::pow((f + R) / (dist[k] + R), exponent + 1);
                if (weight > 1e-300) visit(prim, Vec2(p.x() - ox, p.y() - oy), weight);
            }
    return f;
}

double ImplicitField::value(const Vec2 &p) const {
    return blend(p, [](const Primitive &, const Vec2 &, double) {});
}

double ImplicitField::value_and_node_gradient(const Vec2 &p, Eigen::VectorXd &grad) const {
    grad.setZero(3 * topology_->num_nodes());
    return blend(p, [&](const Primitive &prim, const Vec2 &q, double weight) {
        const Vec2 &a = params_.positions[prim.node_a];
        const Vec2 &b = params_.positions[prim.node_b];
        AD ax(a.x(), 6, 0), ay(a.y(), 6, 1), bx(b.x(), 6, 2), by(b.y(), 6, 3);
        AD ra(params_.radii[prim.node_a], 6, 4), rb(params_.radii[prim.node_b], 6, 5);
        const AD d = capsule_distance_t<AD>(q, ax, ay, bx, by, ra, rb);
        const Deriv6 &g = d.derivatives();
        grad[3 * prim.node_a + 0] += weight * g[0];
        grad[3 * prim.node_a + 1] += weight * g[1];
        grad[3 * prim.node_a + 2] += weight * g[4];
        grad[3 * prim.node_b + 0] += weight * g[2];
        grad[3 * prim.node_b + 1] += weight * g[3];
        grad[3 * prim.node_b + 2] += weight * g[5];
    });
}

} // namespace flatcell

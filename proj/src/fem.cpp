#include "flatcell/fem.hpp"

#include <cmath>
#include <ostream>

namespace flatcell {

Material Material::from_young_poisson(double young, double poisson) {
    if (!(young > 0) || !(poisson > -1 && poisson < 0.5))
        throw InvalidInput("Young's modulus must be positive and Poisson's ratio in (-1, 0.5)");
    Material m;
    m.lambda = young * poisson / ((1 + poisson) * (1 - 2 * poisson));
    m.mu = young / (2 * (1 + poisson));
    return m;
}

void Material::validate() const {
    if (!(mu > 0)) throw InvalidInput("material: mu must be positive");
    if (!(lambda >= 0)) throw InvalidInput("material: lambda must be nonnegative");
}

NeoHookeanResult neo_hookean(const Mat2 &F, const Material &m, bool with_tangent) {
    const double J = F.determinant();
    if (!(J > 0)) throw InadmissibleState("inverted deformation gradient (det F = " + std::to_string(J) + ")");
    const double logJ = std::log(J);
    Mat2 Finv;
    Finv << F(1, 1) / J, -F(0, 1) / J, -F(1, 0) / J, F(0, 0) / J;
    const Mat2 FinvT = Finv.transpose();

    NeoHookeanResult r;
    r.w = 0.5 * m.mu * (F.squaredNorm() - 2 - 2 * logJ) + 0.5 * m.lambda * logJ * logJ;
    r.P = m.mu * (F - FinvT) + m.lambda * logJ * FinvT;
    if (!with_tangent) return r;
    const double c = m.mu - m.lambda * logJ;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k)
                for (int l = 0; l < 2; ++l)
                    r.C(2 * i + j, 2 * k + l) = (i == k && j == l ? m.mu : 0.0) + c * Finv(l, i) * Finv(j, k) +
                                                m.lambda * FinvT(i, j) * FinvT(k, l);
    return r;
}

const std::array<Eigen::Vector3d, TriangleQuadrature::size> &TriangleQuadrature::points() {
    static const std::array<Eigen::Vector3d, size> pts = [] {
        const double a = 0.445948490915965, b = 0.108103018168070;
        const double c = 0.091576213509771, d = 0.816847572980459;
        return std::array<Eigen::Vector3d, size>{Eigen::Vector3d(a, a, b), Eigen::Vector3d(a, b, a),
                                                 Eigen::Vector3d(b, a, a), Eigen::Vector3d(c, c, d),
                                                 Eigen::Vector3d(c, d, c), Eigen::Vector3d(d, c, c)};
    }();
    return pts;
}

const std::array<double, TriangleQuadrature::size> &TriangleQuadrature::weights() {
    static const std::array<double, size> w{0.223381589678011, 0.223381589678011, 0.223381589678011,
                                            0.109951743655322, 0.109951743655322, 0.109951743655322};
    return w;
}

double p2_gradients(const std::array<Vec2, 3> &x, const Eigen::Vector3d &L, Eigen::Matrix<double, 6, 2> &grad) {
    Mat2 J;
    J.col(0) = x[1] - x[0];
    J.col(1) = x[2] - x[0];
    const double det = J.determinant();
    const Mat2 Jinv = J.inverse();
    Eigen::Matrix<double, 3, 2> dL;
    dL.row(1) = Jinv.row(0);
    dL.row(2) = Jinv.row(1);
    dL.row(0) = -dL.row(1) - dL.row(2);
    for (int i = 0; i < 3; ++i) grad.row(i) = (4 * L[i] - 1) * dL.row(i);
    grad.row(3) = 4 * (L[1] * dL.row(0) + L[0] * dL.row(1));
    grad.row(4) = 4 * (L[2] * dL.row(1) + L[1] * dL.row(2));
    grad.row(5) = 4 * (L[0] * dL.row(2) + L[2] * dL.row(0));
    return 0.5 * det;
}

Eigen::Matrix<double, 6, 1> p2_values(const Eigen::Vector3d &L) {
    Eigen::Matrix<double, 6, 1> v;
    for (int i = 0; i < 3; ++i) v[i] = L[i] * (2 * L[i] - 1);
    v[3] = 4 * L[0] * L[1];
    v[4] = 4 * L[1] * L[2];
    v[5] = 4 * L[2] * L[0];
    return v;
}

PeriodicDofMap build_dof_map(const PeriodicMesh &mesh, bool pin_translation) {
    const int n = mesh.num_nodes();
    if (int(mesh.master.size()) != n) throw MeshingError("inconsistent pairing: master list size mismatch");
    PeriodicDofMap d;
    d.slot.assign(n, -1);
    for (int i = 0; i < n; ++i) {
        const int m = mesh.master[i];
        if (m < 0 || m >= n || mesh.master[m] != m)
            throw MeshingError("inconsistent pairing: master of node " + std::to_string(i) + " is itself a slave");
        if (m == i) d.slot[i] = d.num_masters++;
    }
    for (int i = 0; i < n; ++i) d.slot[i] = d.slot[mesh.master[i]];
    if (pin_translation && d.num_masters > 0) d.pinned_slot = 0;
    return d;
}

Eigen::MatrixX2d reconstruct(const PeriodicMesh &mesh, const PeriodicDofMap &dofs, const HomogState &state) {
    const Mat2 G = state.G();
    Eigen::MatrixX2d u(mesh.num_nodes(), 2);
    for (int i = 0; i < mesh.num_nodes(); ++i) {
        const int s = dofs.slot[i];
        u.row(i) = (Vec2(state.x[2 * s], state.x[2 * s + 1]) + G * mesh.node(i)).transpose();
    }
    return u;
}

Eigen::Matrix<double, 4, 15> ElasticModel::b_matrix(const Eigen::Matrix<double, 6, 2> &grad) {
    Eigen::Matrix<double, 4, 15> B = Eigen::Matrix<double, 4, 15>::Zero();
    for (int a = 0; a < 6; ++a)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) B(2 * i + j, 2 * a + i) = grad(a, j);
    B(0, 12) = 1.0;
    B(1, 13) = 1.0;
    B(2, 13) = 1.0;
    B(3, 14) = 1.0;
    return B;
}

ElasticModel::ElasticModel(const PeriodicMesh &mesh, const PeriodicDofMap &dofs, Material material)
    : mesh_(&mesh), dofs_(dofs), material_(material) {
    material_.validate();
    const int ne = int(mesh.triangles.size());
    qp_.resize(ne * TriangleQuadrature::size);
    for (int e = 0; e < ne; ++e) {
        const auto &t = mesh.triangles[e];
        const std::array<Vec2, 3> x{mesh.node(t[0]), mesh.node(t[1]), mesh.node(t[2])};
        for (int q = 0; q < TriangleQuadrature::size; ++q) {
            QuadPoint &qp = qp_[e * TriangleQuadrature::size + q];
            const double area = p2_gradients(x, TriangleQuadrature::points()[q], qp.grad);
            if (!(area > 0)) throw MeshingError("element " + std::to_string(e) + " has non-positive area");
            qp.weight = area * TriangleQuadrature::weights()[q];
        }
    }

    std::vector<Triplet> trip;
    trip.reserve(size_t(ne) * 225);
    for (int e = 0; e < ne; ++e) {
        const auto idx = element_indices(e);
        for (int r : idx)
            for (int c : idx) trip.emplace_back(r, c, 1.0);
    }
    pattern_.resize(dofs_.size(), dofs_.size());
    pattern_.setFromTriplets(trip.begin(), trip.end());
    pattern_.makeCompressed();
    scatter_.resize(size_t(ne) * 225);
    for (int e = 0; e < ne; ++e) {
        const auto idx = element_indices(e);
        for (int c = 0; c < 15; ++c) {
            const int col = idx[c];
            const int *begin = pattern_.innerIndexPtr() + pattern_.outerIndexPtr()[col];
            const int *end = pattern_.innerIndexPtr() + pattern_.outerIndexPtr()[col + 1];
            for (int r = 0; r < 15; ++r) {
                const int *pos = std::lower_bound(begin, end, idx[r]);
                scatter_[size_t(e) * 225 + c * 15 + r] = int(pos - pattern_.innerIndexPtr());
            }
        }
    }
}

std::array<int, 15> ElasticModel::element_indices(int e) const {
    const auto &t = mesh_->triangles[e];
    std::array<int, 15> idx;
    for (int a = 0; a < 6; ++a) {
        const int s = dofs_.slot[t[a]];
        idx[2 * a] = 2 * s;
        idx[2 * a + 1] = 2 * s + 1;
    }
    idx[12] = dofs_.index_g00();
    idx[13] = dofs_.index_g01();
    idx[14] = dofs_.index_g11();
    return idx;
}

Mat2 ElasticModel::gradient_of(int e, int q, const Eigen::VectorXd &x) const {
    const auto &t = mesh_->triangles[e];
    const QuadPoint &qp = qp_[e * TriangleQuadrature::size + q];
    Mat2 F;
    F << x[dofs_.index_g00()], x[dofs_.index_g01()], x[dofs_.index_g01()], x[dofs_.index_g11()];
    for (int a = 0; a < 6; ++a) {
        const int s = dofs_.slot[t[a]];
        F += Vec2(x[2 * s], x[2 * s + 1]) * qp.grad.row(a);
    }
    return F;
}

Mat2 ElasticModel::fluctuation_gradient(int e, int q, const Eigen::VectorXd &x) const {
    const auto &t = mesh_->triangles[e];
    const QuadPoint &qp = qp_[e * TriangleQuadrature::size + q];
    Mat2 U = Mat2::Zero();
    for (int a = 0; a < 6; ++a) {
        const int s = dofs_.slot[t[a]];
        U += Vec2(x[2 * s], x[2 * s + 1]) * qp.grad.row(a);
    }
    return U;
}

Mat2 ElasticModel::deformation(int e, int q, const HomogState &state) const {
    return Mat2::Identity() + gradient_of(e, q, state.x);
}

ElasticModel::Result ElasticModel::evaluate(const HomogState &state, int order) const {
    if (state.x.size() != dofs_.size()) throw InvalidInput("state size does not match the DOF map");
    Result r;
    if (order >= 1) r.grad = Eigen::VectorXd::Zero(dofs_.size());
    if (order >= 2) {
        r.hess = pattern_;
        std::fill(r.hess.valuePtr(), r.hess.valuePtr() + r.hess.nonZeros(), 0.0);
    }
    const int ne = int(mesh_->triangles.size());
    for (int e = 0; e < ne; ++e) {
        Eigen::Matrix<double, 15, 1> g = Eigen::Matrix<double, 15, 1>::Zero();
        Eigen::Matrix<double, 15, 15> H = Eigen::Matrix<double, 15, 15>::Zero();
        for (int q = 0; q < TriangleQuadrature::size; ++q) {
            const QuadPoint &qp = qp_[e * TriangleQuadrature::size + q];
            const Mat2 F = deformation(e, q, state);
            const NeoHookeanResult nh = neo_hookean(F, material_, order >= 2);
            r.energy += qp.weight * nh.w;
            if (order < 1) continue;
            const auto B = b_matrix(qp.grad);
            const Eigen::Vector4d p(nh.P(0, 0), nh.P(0, 1), nh.P(1, 0), nh.P(1, 1));
            g.noalias() += qp.weight * B.transpose() * p;
            if (order >= 2) H.noalias() += qp.weight * B.transpose() * nh.C * B;
        }
        if (order < 1) continue;
        const auto idx = element_indices(e);
        for (int k = 0; k < 15; ++k) r.grad[idx[k]] += g[k];
        if (order >= 2) {
            const int *pos = scatter_.data() + size_t(e) * 225;
            double *val = r.hess.valuePtr();
            for (int c = 0; c < 15; ++c)
                for (int k = 0; k < 15; ++k) val[pos[c * 15 + k]] += H(k, c);
        }
    }
    return r;
}

Mat2 ElasticModel::effective_stress(const HomogState &state) const {
    Mat2 sum = Mat2::Zero();
    for (int e = 0; e < int(mesh_->triangles.size()); ++e)
        for (int q = 0; q < TriangleQuadrature::size; ++q)
            sum += qp_[e * TriangleQuadrature::size + q].weight * neo_hookean(deformation(e, q, state), material_, false).P;
    return sum / mesh_->cell_area();
}

Eigen::VectorXd ElasticModel::stress_integral_gradient(const HomogState &state, int i, int j) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dofs_.size());
    for (int e = 0; e < int(mesh_->triangles.size()); ++e) {
        Eigen::Matrix<double, 15, 1> ge = Eigen::Matrix<double, 15, 1>::Zero();
        for (int q = 0; q < TriangleQuadrature::size; ++q) {
            const QuadPoint &qp = qp_[e * TriangleQuadrature::size + q];
            const auto nh = neo_hookean(deformation(e, q, state), material_, true);
            ge.noalias() += qp.weight * b_matrix(qp.grad).transpose() * nh.C.row(2 * i + j).transpose();
        }
        const auto idx = element_indices(e);
        for (int k = 0; k < 15; ++k) g[idx[k]] += ge[k];
    }
    return g;
}

// Moving the rest corners by a field linear on each element with gradient D
// changes the element measure by tr(D), basis gradients by -D^T grad(phi) and
// the fluctuation gradient U by -U D. For a corner c and coordinate m,
// D = e_m grad(lambda_c)^T.
template <class Weights>
Eigen::VectorXd ElasticModel::shape_vjp(const HomogState &state, Weights weights) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(2 * mesh_->num_nodes());
    for (int e = 0; e < int(mesh_->triangles.size()); ++e) {
        const auto &t = mesh_->triangles[e];
        const Vec2 x0 = mesh_->node(t[0]), x1 = mesh_->node(t[1]), x2 = mesh_->node(t[2]);
        const double twice_area = (x1 - x0).x() * (x2 - x0).y() - (x1 - x0).y() * (x2 - x0).x();
        const std::array<Vec2, 3> dl{Vec2(x1.y() - x2.y(), x2.x() - x1.x()) / twice_area,
                                     Vec2(x2.y() - x0.y(), x0.x() - x2.x()) / twice_area,
                                     Vec2(x0.y() - x1.y(), x1.x() - x0.x()) / twice_area};
        std::array<Vec2, 3> r{Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
        for (int q = 0; q < TriangleQuadrature::size; ++q) {
            const QuadPoint &qp = qp_[e * TriangleQuadrature::size + q];
            const Mat2 U = fluctuation_gradient(e, q, state.x);
            const auto nh = neo_hookean(deformation(e, q, state), material_, true);
            Mat2 Qf, Q;
            weights(e, qp.grad, Qf, Q);
            const Eigen::Vector4d vq(Q(0, 0), Q(0, 1), Q(1, 0), Q(1, 1));
            const Eigen::Vector4d cq = nh.C.transpose() * vq;
            Mat2 M;
            M << cq[0], cq[1], cq[2], cq[3];
            const double s0 = (nh.P.array() * Q.array()).sum();
            const Mat2 K = U.transpose() * M + Qf.transpose() * nh.P;
            for (int c = 0; c < 3; ++c) r[c] += qp.weight * (s0 * dl[c] - K * dl[c]);
        }
        for (int c = 0; c < 3; ++c) out.segment<2>(2 * t[c]) += r[c];
    }
    return out;
}

Eigen::VectorXd ElasticModel::stress_integral_shape_gradient(const HomogState &state, int i, int j) const {
    return shape_vjp(state, [&](int, const Eigen::Matrix<double, 6, 2> &, Mat2 &Qf, Mat2 &Q) {
        Qf.setZero();
        Q.setZero();
        Q(i, j) = 1.0;
    });
}

Eigen::VectorXd ElasticModel::force_shape_vjp(const HomogState &state, const Eigen::VectorXd &p) const {
    if (p.size() != dofs_.size()) throw InvalidInput("force_shape_vjp: vector size does not match the DOF map");
    Mat2 Qg;
    Qg << p[dofs_.index_g00()], p[dofs_.index_g01()], p[dofs_.index_g01()], p[dofs_.index_g11()];
    return shape_vjp(state, [&](int e, const Eigen::Matrix<double, 6, 2> &grad, Mat2 &Qf, Mat2 &Q) {
        const auto &t = mesh_->triangles[e];
        Qf.setZero();
        for (int a = 0; a < 6; ++a) {
            const int s = dofs_.slot[t[a]];
            Qf += Vec2(p[2 * s], p[2 * s + 1]) * grad.row(a);
        }
        Q = Qf + Qg;
    });
}

double ElasticModel::min_det(const HomogState &state) const {
    double m = std::numeric_limits<double>::infinity();
    for (int e = 0; e < int(mesh_->triangles.size()); ++e)
        for (int q = 0; q < TriangleQuadrature::size; ++q) m = std::min(m, deformation(e, q, state).determinant());
    return m;
}

double ElasticModel::inversion_step_limit(const HomogState &state, const Eigen::VectorXd &dir) const {
    double alpha = 1.0;
    for (int e = 0; e < int(mesh_->triangles.size()); ++e)
        for (int q = 0; q < TriangleQuadrature::size; ++q) {
            const Mat2 F = deformation(e, q, state);
            const Mat2 dF = gradient_of(e, q, dir);
            // det(F + t dF) - 0.1 det F = c0 + c1 t + c2 t^2
            const double c0 = 0.9 * F.determinant();
            const double c1 = F(0, 0) * dF(1, 1) + dF(0, 0) * F(1, 1) - F(0, 1) * dF(1, 0) - dF(0, 1) * F(1, 0);
            const double c2 = dF.determinant();
            double root = std::numeric_limits<double>::infinity();
            if (std::abs(c2) < 1e-14 * (std::abs(c1) + std::abs(c0))) {
                if (c1 < 0) root = -c0 / c1;
            } else {
                const double disc = c1 * c1 - 4 * c2 * c0;
                if (disc >= 0) {
                    const double sq = std::sqrt(disc);
                    // Numerically stable pair of roots.
                    const double tmp = -0.5 * (c1 + std::copysign(sq, c1));
                    for (double r : {tmp / c2, c0 / tmp})
                        if (r > 0) root = std::min(root, r);
                }
            }
            alpha = std::min(alpha, root);
        }
    return std::max(alpha, 0.0);
}

void ElasticModel::write_element_csv(const HomogState &state, std::ostream &out) const {
    out << "element,energy,min_det\n";
    out.precision(17);
    for (int e = 0; e < int(mesh_->triangles.size()); ++e) {
        double energy = 0, det = std::numeric_limits<double>::infinity();
        for (int q = 0; q < TriangleQuadrature::size; ++q) {
            const Mat2 F = deformation(e, q, state);
            det = std::min(det, F.determinant());
            if (det > 0) energy += qp_[e * TriangleQuadrature::size + q].weight * neo_hookean(F, material_, false).w;
        }
        out << e << ',' << (det > 0 ? energy : std::numeric_limits<double>::infinity()) << ',' << det << '\n';
    }
}

} // namespace flatcell

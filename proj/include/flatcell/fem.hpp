#pragma once

#include "flatcell/mesh.hpp"

#include <array>
#include <iosfwd>

namespace flatcell {

struct Material {
    double lambda = 0;
    double mu = 0;

    /// Plane-strain Lamé parameters from Young's modulus and Poisson's ratio.
    static Material from_young_poisson(double young, double poisson);
    void validate() const;
};

using Tangent = Eigen::Matrix4d; ///< C(2i+j, 2k+l) = d P_ij / d F_kl

struct NeoHookeanResult {
    double w = 0;
    Mat2 P = Mat2::Zero();
    Tangent C = Tangent::Zero();
};

/// Compressible Neo-Hookean density, its first Piola stress and tangent.
/// Throws InadmissibleState for det F <= 0.
NeoHookeanResult neo_hookean(const Mat2 &F, const Material &material, bool with_tangent = true);

/// Six-point degree-4 triangle rule; barycentric points and weights summing to 1.
struct TriangleQuadrature {
    static constexpr int size = 6;
    static const std::array<Eigen::Vector3d, size> &points();
    static const std::array<double, size> &weights();
};

/// Gradients of the six P2 basis functions at a barycentric point of the
/// straight triangle with the given corners; returns the signed area.
double p2_gradients(const std::array<Vec2, 3> &corners, const Eigen::Vector3d &bary,
                    Eigen::Matrix<double, 6, 2> &grad);
/// P2 basis values at a barycentric point.
Eigen::Matrix<double, 6, 1> p2_values(const Eigen::Vector3d &bary);

/// Unknown layout: two fluctuation components per periodic master node, then
/// G00, G01 and G11. One master node is pinned to remove rigid translation.
struct PeriodicDofMap {
    std::vector<int> slot;   ///< per mesh node: index of its master among masters
    int num_masters = 0;
    int pinned_slot = -1;    ///< -1 when no translation is pinned

    int num_fluct() const { return 2 * num_masters; }
    int index_g00() const { return num_fluct(); }
    int index_g01() const { return num_fluct() + 1; }
    int index_g11() const { return num_fluct() + 2; }
    int size() const { return num_fluct() + 3; }
    /// Number of unconstrained fluctuation unknowns.
    int num_free_fluct() const { return num_fluct() - (pinned_slot >= 0 ? 2 : 0); }
};

PeriodicDofMap build_dof_map(const PeriodicMesh &mesh, bool pin_translation = true);

/// Unknowns: x = [fluctuation per master; G00; G01; G11].
struct HomogState {
    Eigen::VectorXd x;

    static HomogState zero(const PeriodicDofMap &dofs) { return {Eigen::VectorXd::Zero(dofs.size())}; }
    double g00() const { return x[x.size() - 3]; }
    double g01() const { return x[x.size() - 2]; }
    double g11() const { return x[x.size() - 1]; }
    Mat2 G() const {
        Mat2 g;
        g << g00(), g01(), g01(), g11();
        return g;
    }
};

/// Nodal displacement u_i = fluct(master(i)) + G x_i.
Eigen::MatrixX2d reconstruct(const PeriodicMesh &mesh, const PeriodicDofMap &dofs, const HomogState &state);

/// Elastic energy of one cell with gradient and Hessian over the full unknown
/// vector. Pinned entries are left in place; solvers mask them.
class ElasticModel {
public:
    ElasticModel(const PeriodicMesh &mesh, const PeriodicDofMap &dofs, Material material);

    struct Result {
        double energy = 0;
        Eigen::VectorXd grad;
        SparseMat hess;
    };

    /// order 0: energy only, 1: plus gradient, 2: plus Hessian.
    Result evaluate(const HomogState &state, int order = 2) const;
    double energy(const HomogState &state) const { return evaluate(state, 0).energy; }

    /// Volume-averaged first Piola stress over the box |V| = det(lattice).
    Mat2 effective_stress(const HomogState &state) const;

    /// Smallest det F over all quadrature points.
    double min_det(const HomogState &state) const;

    /// Largest step in (0, 1] along dir keeping det F above 10% of its
    /// current value on every quadrature point (det F is quadratic in the step).
    double inversion_step_limit(const HomogState &state, const Eigen::VectorXd &dir) const;

    /// Gradient over the unknowns of the stress integral S_ij = |V| sigma_bar_ij.
    Eigen::VectorXd stress_integral_gradient(const HomogState &state, int i, int j) const;

    /// d S_ij / d(rest corner positions), two entries per mesh node (midpoints stay zero).
    Eigen::VectorXd stress_integral_shape_gradient(const HomogState &state, int i, int j) const;

    /// d/dx of p . dW/dv over rest corner positions, two entries per mesh node.
    Eigen::VectorXd force_shape_vjp(const HomogState &state, const Eigen::VectorXd &p) const;

    /// Per-element energy and min det F as CSV (element,energy,min_det).
    void write_element_csv(const HomogState &state, std::ostream &out) const;

    const PeriodicMesh &mesh() const { return *mesh_; }
    const PeriodicDofMap &dofs() const { return dofs_; }
    const Material &material() const { return material_; }

    /// Local-to-global unknown indices of a triangle: 12 fluctuation entries then G00, G01, G11.
    std::array<int, 15> element_indices(int element) const;

    /// Local B matrix mapping the 15 element unknowns to vec(F) for basis gradients grad.
    static Eigen::Matrix<double, 4, 15> b_matrix(const Eigen::Matrix<double, 6, 2> &grad);

private:
    struct QuadPoint {
        Eigen::Matrix<double, 6, 2> grad;
        double weight;
    };
    Mat2 deformation(int element, int q, const HomogState &state) const;
    Mat2 gradient_of(int element, int q, const Eigen::VectorXd &x) const;
    Mat2 fluctuation_gradient(int element, int q, const Eigen::VectorXd &x) const;
    /// Shared shape derivative of sum_q w P:Q_q, where Q_q = Qf_q + Qg and Qf_q = sum_a p_a grad(phi_a)^T.
    template <class Weights>
    Eigen::VectorXd shape_vjp(const HomogState &state, Weights weights) const;

    const PeriodicMesh *mesh_;
    PeriodicDofMap dofs_;
    Material material_;
    std::vector<QuadPoint> qp_;      ///< element-major, TriangleQuadrature::size each
    SparseMat pattern_;              ///< full symmetric sparsity, lower and upper
    std::vector<int> scatter_;       ///< per element, 15 x 15 positions into pattern_ values
};

} // namespace flatcell

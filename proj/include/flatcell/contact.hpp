#pragma once

#include "flatcell/fem.hpp"

#include <iosfwd>

namespace flatcell {

struct ContactSettings {
    double dhat = 0;  ///< barrier activation distance, meters
    double kappa = 0; ///< barrier stiffness, Pa
    /// Fail when an active pair spans more than one cell (the 2x2 tiling would be too small).
    bool strict_tiling = false;

    /// dhat = 1e-3 min(a, b), kappa = 1e3 mu.
    static ContactSettings defaults(double a, double b, const Material &material);
};

/// Surface nodes of the cell (corners and midpoints of surface edges) copied
/// into a 2x2 block of cells. Copies that coincide through periodicity are merged.
class TiledSurface {
public:
    TiledSurface(const PeriodicMesh &mesh, const PeriodicDofMap &dofs);

    int num_vertices() const { return static_cast<int>(rest.rows()); }
    int num_segments() const { return static_cast<int>(segments.size()); }

    Eigen::MatrixX2d rest;        ///< tiled rest positions
    std::vector<int> cell_node;   ///< mesh node this vertex copies
    std::vector<Vec2i> tag;       ///< tile (alpha, beta) in {0, 1}^2
    std::vector<int> slot;        ///< master slot in the DOF map
    std::vector<Vec2i> total_offset; ///< lattice offset from the master position
    std::vector<std::array<int, 2>> segments; ///< half surface edges, solid on the left
    int num_cell_surface_nodes = 0;

    /// u^t_j = fluct(I(j)) + G x^t_j.
    Eigen::MatrixX2d displacement(const HomogState &state) const;
    Eigen::MatrixX2d positions(const HomogState &state) const { return rest + displacement(state); }

    /// d u^t / d x as a sparse (2M x unknowns) matrix; constant for a mesh.
    const SparseMat &jacobian() const { return jacobian_; }

    /// True when the point and the segment are too close along the surface to interact.
    bool excluded(int point, int segment) const;

    /// Lattice vectors of the cell (for diagnostics and shape derivatives).
    Mat2 lattice;

private:
    SparseMat jacobian_;
    std::vector<std::vector<int>> neighbors_;
    int num_unknowns_ = 0;
};

struct ContactPair {
    int point = 0;
    int segment = 0;
    double distance = 0;
};

/// Barrier energy of the tiled surface over tiled displacements.
struct TiledBarrier {
    double energy = 0;
    Eigen::VectorXd grad;           ///< 2M, interleaved (x, y) per tiled vertex
    SparseMat hess;                 ///< 2M x 2M
    std::vector<ContactPair> active;
    double min_distance = std::numeric_limits<double>::infinity();
    int far_pairs = 0;              ///< active pairs spanning more than one cell
};

/// b(d) = -(d - dhat)^2 log(d / dhat) for d < dhat, zero beyond.
double barrier(double d, double dhat);

/// Squared point-segment distance with gradient and Hessian over (p, a, b).
double point_segment_distance2(const Vec2 &p, const Vec2 &a, const Vec2 &b, Eigen::Matrix<double, 6, 1> *grad,
                               Eigen::Matrix<double, 6, 6> *hess);

TiledBarrier barrier_energy(const TiledSurface &tiling, const Eigen::MatrixX2d &ut, const ContactSettings &settings,
                            int order = 2);

struct ContactEnergy {
    double energy = 0;
    Eigen::VectorXd grad;
    SparseMat hess;
    TiledBarrier tiled;
};

/// Pulls tiled derivatives back to the homogenization unknowns (the map is linear).
ContactEnergy chain_to_v(const TiledSurface &tiling, TiledBarrier tiled, int order = 2);

/// Barrier energy of a state with derivatives over the unknowns.
ContactEnergy contact_energy(const TiledSurface &tiling, const HomogState &state, const ContactSettings &settings,
                             int order = 2);

/// Smallest point-segment distance among non-excluded pairs closer than cutoff (infinity if none).
double min_surface_distance(const TiledSurface &tiling, const HomogState &state, double cutoff);

/// Conservative collision bound along dir: every pair keeps at least 10% of
/// its current distance. Returns 1 when nothing can collide.
double contact_step_limit(const TiledSurface &tiling, const HomogState &state, const Eigen::VectorXd &dir);

/// min(1, collision bound, element inversion bound).
double step_limit(const ElasticModel &elastic, const TiledSurface *tiling, const HomogState &state,
                  const Eigen::VectorXd &dir);

/// d/dx^t of p . dW_c/dv over the tiled rest positions, one row per tiled vertex.
/// Covers both the barrier Hessian term and the x^t dependence of d u^t / dG.
Eigen::MatrixX2d contact_rest_vjp(const TiledSurface &tiling, const HomogState &state, const ContactSettings &settings,
                                  const Eigen::VectorXd &p);

/// Pulls per-tiled-vertex rest derivatives back to the mesh parameters through
/// x^t_j = x_{I(j)} + lattice tag_j.
Eigen::VectorXd tiled_rest_to_params(const TiledSurface &tiling, const PeriodicMesh &mesh,
                                     const Eigen::MatrixX2d &rest_derivative);

/// Appends active pairs as CSV rows: iteration,point,seg_a,seg_b,distance.
void write_contact_trace(std::ostream &out, int iteration, const TiledSurface &tiling, const TiledBarrier &tiled);

} // namespace flatcell

#pragma once

#include "flatcell/common.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace flatcell {

/// Periodic quadratic (P2, straight-edged) triangle mesh of the solid part of
/// one cell. Nodes [0, num_vertices) are triangle corners; the rest are
/// edge midpoints.
struct PeriodicMesh {
    Eigen::MatrixX2d nodes;
    int num_vertices = 0;
    /// Corners 0..2 (counter-clockwise), then midpoints of edges 01, 12, 20.
    std::vector<std::array<int, 6>> triangles;

    /// Columns are the lattice vectors A1 = (a, 0) and A2 = (0, b) before any rotation.
    Mat2 lattice = Mat2::Identity();

    /// Periodic identification: nodes[i] = nodes[master[i]] + lattice * offset[i].
    /// Masters map to themselves with zero offset.
    std::vector<int> master;
    std::vector<Vec2i> offset;

    /// Surface edges (corner, midpoint, corner) with the solid on the left.
    std::vector<std::array<int, 3>> boundary_edges;

    /// d(node position)/dq, rows (2i, 2i+1) per node, one column per parameter.
    Eigen::MatrixXd shape_velocity;
    /// d(A1, A2)/dq stacked as rows (A1x, A1y, A2x, A2y).
    Eigen::MatrixXd lattice_velocity;

    std::vector<std::string> warnings;

    int num_nodes() const { return static_cast<int>(nodes.rows()); }
    int num_params() const { return static_cast<int>(shape_velocity.cols()); }
    Vec2 node(int i) const { return nodes.row(i).transpose(); }
    double cell_area() const { return std::abs(lattice.determinant()); }
    bool is_master(int i) const { return master[i] == i; }

    /// Throws MeshingError naming the first violated invariant.
    void validate() const;
    double min_signed_area() const;
};

/// Structured mesh of a completely solid a x b cell with n x n squares
/// (mirror-symmetric diagonals). Shape velocity columns are (a, b).
PeriodicMesh make_solid_cell_mesh(double a, double b, int n);

/// Appends P2 midpoint nodes, periodic pairing and surface edges to a mesh
/// that only has corners, triangles (first three entries) and vertex pairing.
/// Corner shape velocities must be set; midpoint velocities are averaged.
void finish_p2_mesh(PeriodicMesh &mesh);

/// Rest shape rotated by theta (radians) about the cell center. |theta| <= 20 deg.
PeriodicMesh rotate_rest(const PeriodicMesh &mesh, double theta);

/// n x n periodic supercell; lattice and shape velocities follow.
PeriodicMesh make_supercell(const PeriodicMesh &mesh, int n);

/// Node permutation realizing the mirror x -> A1.x - x (unrotated meshes).
/// Throws MeshingError if the mesh is not mirror symmetric to tol.
std::vector<int> mirror_node_map(const PeriodicMesh &mesh, double tol = 1e-9);

/// OBJ (corner triangles) plus a sidecar JSON with pairing, boundary and velocities.
void write_mesh(const PeriodicMesh &mesh, const std::filesystem::path &obj_path);

} // namespace flatcell

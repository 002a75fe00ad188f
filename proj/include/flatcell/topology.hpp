#pragma once

#include "flatcell/common.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace flatcell {

/// Graph describing a cell family. Node positions live in the unit square;
/// nodes on the box boundary come with explicit partners on the opposite side.
struct CellTopology {
    std::string id;
    std::vector<Vec2> nodes;
    std::vector<std::array<int, 2>> edges;

    /// Equivalence classes of nodes under the mirror x -> 1 - x and periodic
    /// translation. The first entry of every orbit is its representative.
    std::vector<std::vector<int>> orbits;
    std::vector<int> orbit_of;

    /// Node = (mirror_sign[i] * rep.x + node_offset[i].x, rep.y + node_offset[i].y).
    std::vector<int> mirror_sign;
    std::vector<Vec2> node_offset;

    /// Default radii per orbit (used when no parameters are given).
    std::vector<double> default_radii;
    double default_a = 0.01;
    double default_b = 0.01;

    int num_nodes() const { return static_cast<int>(nodes.size()); }
    int num_orbits() const { return static_cast<int>(orbits.size()); }
};

/// Parses and validates a topology file (JSON, see README for the schema).
CellTopology load_topology(const std::filesystem::path &path);
CellTopology parse_topology(const std::string &json_text);

/// Validates invariants and computes orbits/transforms; throws InvalidInput.
void finalize_topology(CellTopology &topology);

/// Per-orbit shape parameters plus the physical cell size in meters.
struct ShapeParams {
    std::vector<Vec2> positions; ///< representative node position per orbit (unit square)
    std::vector<double> radii;   ///< one radius per orbit, unit-square units
    double a = 0.01;
    double b = 0.01;
};

struct ExpandedParams {
    std::vector<Vec2> positions;
    std::vector<double> radii;
};

ShapeParams default_params(const CellTopology &topology);

/// Mirror-expands orbit parameters to every node.
ExpandedParams expand_symmetry(const CellTopology &topology, const ShapeParams &params);

/// Flat parameter vector q. Orbits on x in {0, 0.5, 1} have their x pinned,
/// orbits on y in {0, 1} have their y pinned; the last two entries are (a, b).
class ParamLayout {
public:
    enum class Kind { X, Y, Radius, A, B };
    struct Entry {
        Kind kind;
        int orbit; ///< -1 for A/B
    };

    ParamLayout() = default;
    explicit ParamLayout(const CellTopology &topology);

    int size() const { return static_cast<int>(entries_.size()); }
    const std::vector<Entry> &entries() const { return entries_; }
    int index_a() const { return size() - 2; }
    int index_b() const { return size() - 1; }
    int num_shape() const { return size() - 2; }
    std::string name(int i) const;

    Eigen::VectorXd to_vector(const ShapeParams &params) const;
    ShapeParams from_vector(const Eigen::VectorXd &q, const ShapeParams &pinned) const;

    /// d(node x, node y, node r)/dq for q entries that are shape parameters:
    /// a (3 * num_nodes) x num_shape() matrix.
    Eigen::MatrixXd node_jacobian(const CellTopology &topology) const;

private:
    std::vector<Entry> entries_;
};

struct ParamBounds {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

/// Positions may move 0.2 around q0 inside [0.02, 0.98], radii stay in
/// [0.004, max(0.2, r0)], a in [0.5 a0, 2 a0] and b is held fixed.
ParamBounds default_bounds(const ParamLayout &layout, const Eigen::VectorXd &q0);

/// Bundled catalog directory (data/topologies) as configured at build time.
std::filesystem::path bundled_topology_dir();
CellTopology load_bundled_topology(const std::string &id);

} // namespace flatcell

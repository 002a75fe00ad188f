#pragma once

#include "flatcell/topology.hpp"

#include <vector>

namespace flatcell {

struct FieldSettings {
    /// Exponent of the p-norm smooth minimum; 0 selects the hard minimum.
    double blend_exponent = 8.0;
    /// Shift added to every primitive distance before blending. Sets the size
    /// of the joint fillets; must exceed the largest radius to keep the blend smooth.
    double blend_offset = 0.3;
};

/// Periodic signed field of a cell graph on the unit torus: a smooth union of
/// capsules (one per torus edge, radius linearly interpolated between its
/// endpoints) and disks for isolated nodes. Negative inside the solid.
class ImplicitField {
public:
    ImplicitField(const CellTopology &topology, const ExpandedParams &params, FieldSettings settings = {});

    double value(const Vec2 &p) const;

    /// Value plus the derivative with respect to every node's (x, y, r),
    /// stored as 3 * num_nodes entries.
    double value_and_node_gradient(const Vec2 &p, Eigen::VectorXd &grad) const;

    int num_primitives() const { return static_cast<int>(primitives_.size()); }

private:
    struct Primitive {
        int node_a;
        int node_b; ///< equals node_a for a disk
    };

    template <class Visitor>
    double blend(const Vec2 &p, Visitor &&visit) const;

    const CellTopology *topology_;
    ExpandedParams params_;
    FieldSettings settings_;
    std::vector<Primitive> primitives_;
};

/// Signed distance to a capsule with linearly varying radius (exposed for tests).
double capsule_distance(const Vec2 &p, const Vec2 &a, const Vec2 &b, double ra, double rb);

} // namespace flatcell

#pragma once

#include "flatcell/implicit_field.hpp"
#include "flatcell/mesh.hpp"

namespace flatcell {

struct InflatorSettings {
    int resolution = 96; ///< marching-squares cells per side; even, at least 16
    FieldSettings field;
    /// Grid nodes closer than this fraction of an edge to the contour are moved onto it.
    double snap_fraction = 0.2;
};

/// Meshes the solid of a cell graph: marching squares on the periodic grid,
/// convex per-cell polygons fanned into triangles, P2 midpoints appended.
/// Shape velocity columns follow ParamLayout(topology).
PeriodicMesh inflate(const CellTopology &topology, const ShapeParams &params, const InflatorSettings &settings = {});

} // namespace flatcell

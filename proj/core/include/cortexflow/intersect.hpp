#pragma once

#include "cortexflow/mesh.hpp"

#include <vector>

namespace cortexflow {

/// Distances below this (mm) classify a vertex as lying on the other triangle's plane.
inline constexpr double kCoplanarEpsilon = 1e-10;

/// Exact triangle-triangle intersection test (touching counts as intersecting).
bool triangles_intersect(const Vec3& a0, const Vec3& a1, const Vec3& a2,
                         const Vec3& b0, const Vec3& b1, const Vec3& b2);

bool faces_share_vertex(const Face& a, const Face& b);

/// Per-face flag: true if the face intersects a face it shares no vertex with.
std::vector<bool> self_intersecting_faces(const Mesh& m);

/// Fraction of faces flagged by self_intersecting_faces, in [0, 1].
double count_self_intersecting_faces(const Mesh& m);

}  // namespace cortexflow

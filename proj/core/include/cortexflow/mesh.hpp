#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cortexflow {

using Vec3 = Eigen::Vector3d;
using Face = std::array<std::int32_t, 3>;
using EdgeKey = std::array<std::int32_t, 2>;  // sorted (a < b)

/// Closed triangle surface. Vertices are world-space positions in mm.
/// `level` counts midpoint subdivisions applied since the base template.
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    int level = 0;

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t face_count() const { return faces.size(); }
};

/// Points sampled on a mesh, with the face and barycentric weights each came from.
struct SurfaceSamples {
    std::vector<Vec3> points;
    std::vector<std::int32_t> face_ids;
    std::vector<Vec3> barycentric;

    std::size_t size() const { return points.size(); }
};

/// Vertex one-ring adjacency in compressed-row form.
struct VertexAdjacency {
    std::vector<std::int32_t> offsets;  // size V+1
    std::vector<std::int32_t> neighbors;

    std::span<const std::int32_t> of(std::size_t v) const {
        return {neighbors.data() + offsets[v], neighbors.data() + offsets[v + 1]};
    }
    std::size_t vertex_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

// Unique undirected edges, sorted lexicographically.
std::vector<EdgeKey> unique_edges(const Mesh& m);

// Pairs of face indices sharing an edge; one entry per interior edge.
std::vector<std::array<std::int32_t, 2>> edge_face_pairs(const Mesh& m);

VertexAdjacency vertex_adjacency(const Mesh& m);

int euler_characteristic(const Mesh& m);

/// Throws std::invalid_argument unless every face is in range and non-degenerate and
/// every edge is shared by exactly two faces with opposite winding.
void validate_closed_manifold(const Mesh& m);

/// Throws std::invalid_argument unless every face is in range and non-degenerate,
/// every edge is shared by exactly two faces with opposite winding, and V - E + F = 2.
void validate_closed_genus0(const Mesh& m);

bool is_closed_genus0(const Mesh& m);

/// Convex hull of an `n_vertices`-point Fibonacci lattice on the unit sphere.
Mesh build_template(int n_vertices);

/// Result of one midpoint subdivision. New vertex `V + e` sits on `edge_parents[e]`.
struct Subdivision {
    Mesh mesh;
    std::vector<EdgeKey> edge_parents;
};

Subdivision subdivide_with_map(const Mesh& m);
Mesh subdivide(const Mesh& m);

std::vector<double> face_areas(const Mesh& m);

/// Unit normals, right-hand winding. Throws on a zero-area face, naming its index.
std::vector<Vec3> face_normals(const Mesh& m);

/// Area-weighted vertex normals (unit length).
std::vector<Vec3> vertex_normals(const Mesh& m);

SurfaceSamples sample_surface(const Mesh& m, std::size_t count, std::uint64_t seed);

/// Same as sample_surface but only from faces with `face_mask[f] == true`.
SurfaceSamples sample_surface_masked(const Mesh& m, std::span<const bool> face_mask,
                                     std::size_t count, std::uint64_t seed);

double mean_edge_length(const Mesh& m);
double max_edge_length(const Mesh& m);

Mesh scaled(const Mesh& m, double s);
Mesh translated(const Mesh& m, const Vec3& t);

}  // namespace cortexflow

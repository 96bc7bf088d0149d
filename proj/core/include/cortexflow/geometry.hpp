#pragma once

#include "cortexflow/mesh.hpp"
#include "cortexflow/volume.hpp"

#include <span>
#include <vector>

namespace cortexflow {

/// Per-vertex mean curvature (1/mm) from the cotangent Laplace-Beltrami operator over
/// mixed Voronoi areas. Positive where the surface is convex (e.g. everywhere on a sphere).
/// Throws std::invalid_argument on open meshes or vertices with zero mixed area.
std::vector<double> mean_curvature(const Mesh& m);

/// Mixed Voronoi area per vertex (obtuse triangles split A/2 and A/4).
std::vector<double> mixed_voronoi_areas(const Mesh& m);

/// Alternating lambda (shrink) / mu (inflate) uniform Laplacian smoothing.
/// Each iteration applies one lambda step followed by one mu step.
Mesh taubin_smooth(const Mesh& m, double lambda, double mu, int iterations);

struct SignedDistanceResult {
    Volume sdf;                 // mm, positive inside the surface
    bool mesh_outside_grid = false;
};

/// Exact distance to the nearest triangle per voxel of `grid`'s lattice; sign by ray parity.
SignedDistanceResult signed_distance_volume(const Mesh& m, const Volume& grid);

/// Symmetric chamfer distance (mm^2): mean squared nearest-neighbour distance in each direction, summed.
double chamfer_distance(std::span<const Vec3> px, std::span<const Vec3> py);
double chamfer_distance(const SurfaceSamples& px, const SurfaceSamples& py);

/// Unsigned distances from `n_samples` area-uniform points on `from` to the surface `to`.
/// When `face_mask` is non-empty only flagged faces of `from` are sampled.
std::vector<double> point_to_surface_distances(const Mesh& from, const Mesh& to, std::size_t n_samples,
                                               std::uint64_t seed, std::span<const bool> face_mask = {});

inline constexpr std::uint64_t kMetricSeed = 0x5eed5eedULL;

/// Mean of the two directed mean point-to-surface distances (mm).
double symmetric_surface_distance(const Mesh& mx, const Mesh& my, std::size_t n_samples,
                                  std::uint64_t seed = kMetricSeed);

/// q-th percentile (0 < q <= 100) of the pooled point-to-surface distances of both directions.
double hausdorff_percentile(const Mesh& mx, const Mesh& my, double q, std::size_t n_samples,
                            std::uint64_t seed = kMetricSeed);

/// Per-WM-vertex thickness: half the sum of the WM-to-GM distance and the distance from that
/// nearest GM point back to the WM surface.
std::vector<double> cortical_thickness(const Mesh& wm, const Mesh& gm);

/// Quantile with linear interpolation between closest order statistics (q in [0, 1]).
double quantile(std::span<const double> values, double q);
double quantile_sorted(std::span<const double> sorted, double q);

/// Clamp to [quantile(lo), quantile(hi)] of the same array.
std::vector<double> clip_to_percentiles(std::span<const double> values, double lo, double hi);

struct QuadraticFit {
    double c0 = 0, c1 = 0, c2 = 0;
    std::vector<double> residuals;
    double residual_sum_of_squares = 0;

    double operator()(double x) const { return c0 + c1 * x + c2 * x * x; }
};

/// Least squares y ~ c0 + c1 x + c2 x^2. Throws on a rank-deficient design.
QuadraticFit fit_quadratic_trend(std::span<const double> x, std::span<const double> y);

/// Barycentric interpolation of a per-vertex field at surface samples.
std::vector<double> interpolate_at_samples(const Mesh& m, std::span<const double> vertex_values,
                                           const SurfaceSamples& samples);

}  // namespace cortexflow

#pragma once

#include "cortexflow/geometry.hpp"
#include "cortexflow/mesh.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cortexflow {

struct EvalOptions {
    std::size_t samples = 100000;  // per surface and direction
    std::uint64_t seed = kMetricSeed;
    double hausdorff_q = 90;
};

/// Metrics of one predicted WM/GM pair against ground truth (distances in mm).
struct MetricRecord {
    double ssd_wm = 0, ssd_gm = 0;
    double hd90_wm = 0, hd90_gm = 0;
    double thickness_error = 0;  // mean |pred - gt| thickness at gt WM vertices
    double thickness_mean = 0;   // mean predicted thickness at gt WM vertices
    double sif_wm = 0, sif_gm = 0;

    static constexpr std::array<const char*, 8> names = {"ssd_wm", "ssd_gm", "hd90_wm", "hd90_gm",
                                                         "thickness_error", "thickness_mean", "sif_wm", "sif_gm"};
    std::array<double, 8> values() const;
};

/// `mask` (optional, one flag per gt vertex, true = evaluated) drops faces touching an excluded
/// vertex from sampling on gt, and on pred too when pred shares the gt vertex count.
MetricRecord evaluate_pair(const Mesh& pred_wm, const Mesh& pred_gm, const Mesh& gt_wm, const Mesh& gt_gm,
                           std::span<const bool> mask = {}, const EvalOptions& options = {});

/// Point-to-surface distances both ways from the same seed, so swapping the meshes only swaps the halves.
struct DistancePair {
    std::vector<double> forward, backward;
    double mean() const;
    double percentile(double q) const;
};
DistancePair surface_distances(const Mesh& a, const Mesh& b, std::size_t samples, std::uint64_t seed,
                               std::span<const bool> mask_a = {}, std::span<const bool> mask_b = {});

/// Faces whose three vertices are all flagged.
std::vector<bool> face_mask_from_vertices(const Mesh& m, std::span<const bool> vertex_mask);

/// Per-vertex field of `source` evaluated at the closest surface point of `source` to each query.
std::vector<double> transfer_by_closest_point(const Mesh& source, std::span<const double> field,
                                              std::span<const Vec3> queries);

struct SubjectMetrics {
    std::string id;
    double age = 0;
    MetricRecord metrics;
};

/// Quadratic trend of mean thickness against age.
struct CohortTrend {
    QuadraticFit fit;
    std::vector<double> ages, thickness;
};
/// Throws std::invalid_argument with fewer than 3 distinct ages.
CohortTrend cohort_trend(std::span<const SubjectMetrics> records);

std::string to_json(const SubjectMetrics& r);
std::string to_json(const CohortTrend& t);
std::string csv_header();
std::string csv_row(const SubjectMetrics& r);

}  // namespace cortexflow

#pragma once

#include "cortexflow/autodiff.hpp"
#include "cortexflow/mesh.hpp"
#include "cortexflow/spatial.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cortexflow {

/// Connectivity shared by every mesh of one subdivision level.
struct Topology {
    std::vector<Face> faces;
    std::vector<EdgeKey> edges;
    std::vector<std::array<std::int32_t, 2>> face_pairs;
    int vertex_count = 0;

    static Topology of(const Mesh& m);
};

struct CurvatureOptions {
    double taubin_lambda = 0.5;
    double taubin_mu = -0.53;
    int taubin_iterations = 5;
    double clip_lo = 0.001;
    double clip_hi = 0.999;

    static CurvatureOptions white() { return {}; }
    static CurvatureOptions gray() {
        CurvatureOptions o;
        o.clip_lo = 0.01;
        o.clip_hi = 0.99;
        return o;
    }
};

/// Fixed target: sample points, their kd-tree, and the smoothed and clipped curvature at each sample.
struct TargetSurface {
    Mesh mesh;
    std::vector<Vec3> points;
    std::vector<double> curvature;
    KdTree tree;
};
TargetSurface prepare_target(const Mesh& target, std::size_t n_samples, std::uint64_t seed, const CurvatureOptions& options);

/// Points of `samples` expressed as a differentiable function of `vertices`.
ad::Tensor sample_points(const ad::Tensor& vertices, const std::vector<Face>& faces, const SurfaceSamples& samples);

/// Differentiable per-vertex mean curvature; matches geometry's mean_curvature in value.
ad::Tensor mean_curvature(const ad::Tensor& vertices, const Topology& topo);

// Differentiable losses w.r.t. predicted vertex positions.
ad::Tensor chamfer_loss(const ad::Tensor& points, const TargetSurface& target);
ad::Tensor matched_loss(const ad::Tensor& vertices, const std::vector<Vec3>& target);
ad::Tensor curvature_loss(const ad::Tensor& vertices, const Topology& topo, const SurfaceSamples& samples,
                          const TargetSurface& target);
ad::Tensor spring_loss(const ad::Tensor& vertices, const Topology& topo);
ad::Tensor edge_loss(const ad::Tensor& vertices, const Topology& topo);
/// Mean of (l / mean(l) - 1)^2.
ad::Tensor normalized_edge_variance(const ad::Tensor& lengths);

// Value-only forms on meshes.
double chamfer_loss(const Mesh& mx, const Mesh& my, std::size_t n_samples, std::uint64_t seed);
double matched_loss(const Mesh& mx, const Mesh& my);
double curvature_loss(const Mesh& mx, const Mesh& my, std::size_t n_samples, std::uint64_t seed,
                      const CurvatureOptions& options);
double spring_loss(const Mesh& m);
double edge_loss(const Mesh& m);

struct LossWeights {
    double chamfer = 0, matched = 0, curvature = 0, spring = 0, edge = 0;
};

struct LossSchedule {
    LossWeights start{1.0, 1.0, 40.0, 100.0, 1.0};
    LossWeights end{1.0, 0.0, 2.5, 0.0, 1.0};
    double horizon = 1250;  // iterations

    void validate() const;
};

/// w(i) = w_start + (w_end - w_start) * min(i / horizon, 1).
LossWeights scheduled_weights(const LossSchedule& schedule, double iteration);

/// The five terms for one surface.
struct LossTerms {
    ad::Tensor chamfer, matched, curvature, spring, edge;
};
LossTerms surface_losses(const ad::Tensor& vertices, const Topology& topo, const TargetSurface& target,
                         std::size_t n_samples, std::uint64_t seed);
ad::Tensor weighted_sum(const LossTerms& terms, const LossWeights& w);

inline const std::array<std::string, 5> kLossNames{"chamfer", "matched", "curvature", "spring", "edge"};

}  // namespace cortexflow

#pragma once

#include "cortexflow/mesh.hpp"
#include "cortexflow/synth.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cortexflow {

/// In-silico subject: nested star-shaped WM/GM surfaces around `center`.
/// `TwoSphere` uses constant radii; `Blob` adds a random low-order harmonic radial perturbation.
struct PhantomSpec {
    enum class Kind { TwoSphere, Blob };
    Kind kind = Kind::TwoSphere;
    double wm_radius = 8.0;   // mm
    double gm_radius = 10.5;  // mm
    double amplitude = 0.0;   // mm, peak radial perturbation of the blob
    std::uint64_t shape_seed = 0;
    Vec3 center = Vec3::Zero();
    int grid = 32;            // voxels per axis, 1 mm
    int mesh_level = 3;       // subdivision level of the ground-truth meshes
    int template_vertices = 62;
    double template_scale = 0.8;  // template radius relative to wm_radius
    double csf_thickness = 2.0;   // mm of CSF outside the GM surface
    int nonbrain_classes = 3;
};

/// Parses e.g. "two-sphere r=8,10.5" or "blob r=8,10.5 amp=1 seed=3 center=0.5,0,-1 grid=32 level=3".
PhantomSpec parse_phantom_spec(std::string_view text);

/// Radial distance of the WM (or GM) surface along unit direction `dir`.
double phantom_radius(const PhantomSpec& spec, const Vec3& dir, bool gray);

/// Template mesh at `level` with vertices projected onto the phantom surfaces.
std::array<Mesh, 2> phantom_surfaces(const PhantomSpec& spec, const Mesh& template_mesh);

/// Builds labels, SDFs, non-brain k-means classes and ground-truth meshes.
SubjectSample make_phantom(const PhantomSpec& spec, std::uint64_t seed = 0);

/// Random specs mixing two-sphere and blob phantoms.
struct PhantomCohortConfig {
    int grid = 32;
    int mesh_level = 3;
    double blob_fraction = 0.5;
    double wm_radius_lo = 7.0, wm_radius_hi = 9.0;
    double thickness_lo = 2.0, thickness_hi = 3.0;
    double amplitude_hi = 1.0;
    double center_jitter = 1.0;
};
std::vector<PhantomSpec> sample_phantom_specs(const PhantomCohortConfig& config, int count, std::uint64_t seed);

}  // namespace cortexflow

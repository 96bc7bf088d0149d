#pragma once

#include "cortexflow/autodiff.hpp"
#include "cortexflow/mesh.hpp"
#include "cortexflow/nn.hpp"
#include "cortexflow/volume.hpp"

#include <Eigen/Dense>

#include <array>
#include <vector>

namespace cortexflow {

/// f(I): per-voxel features on the 1 mm input grid, [nz, ny, nx, C].
struct FeatureVolume {
    ad::Tensor features;
    Affine affine = Affine::Identity();  // voxel -> world
    Eigen::Matrix4d world_to_voxel() const { return affine.inverse(); }
    int channels() const { return features.dim(3); }
};

/// Volume as a [nz, ny, nx, 1] constant tensor.
ad::Tensor image_tensor(const Volume& img);

/// Runs the feature UNet. Sizes not divisible by 16 are zero-padded and the output cropped back.
/// Throws std::invalid_argument unless the input is 1 mm isotropic.
FeatureVolume unet_features(const Network& net, const Volume& img);

/// Template vertices mapped through `template_affine`, as a constant [62, 3] tensor.
ad::Tensor positioned_template(const Network& net, const Affine& template_affine);

/// Forward Euler through every WM level: K steps of V += h g_n(s[f, V]) with h = 1/K, then
/// midpoint subdivision before the next level. Returns the deformed vertices of each level.
std::vector<ad::Tensor> deform_white(const Network& net, const ad::Tensor& template_vertices, const FeatureVolume& feat);

/// K_gm Euler steps of the GM block starting from the WM vertices.
ad::Tensor deform_gray(const Network& net, const ad::Tensor& wm_vertices, const FeatureVolume& feat);

/// Mesh-level wrappers. `template_mesh` must be level 0 and positioned in the image frame.
std::vector<Mesh> deform_white(const Network& net, const Mesh& template_mesh, const FeatureVolume& feat);
Mesh deform_gray(const Network& net, const Mesh& wm, const FeatureVolume& feat);

/// Faces of level `level` with the given vertex positions.
Mesh mesh_from_tensor(const Network& net, int level, const ad::Tensor& vertices);

/// Resample to 1 mm isotropic when needed, then min-max normalize to [0, 1].
Volume prepare_input(const Volume& img);

struct Reconstruction {
    Mesh wm;
    Mesh gm;
};
/// prepare_input, unet_features, deform_white, deform_gray; no tape is recorded.
Reconstruction reconstruct(const Network& net, const Volume& img, const Affine& template_affine);

}  // namespace cortexflow

#pragma once

#include "cortexflow/mesh.hpp"

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

namespace cortexflow {

using Affine = Eigen::Matrix4d;

/// Scalar 3D grid. Voxel (i, j, k) is stored at i + nx * (j + ny * k) and sits at
/// world position `affine * (i, j, k, 1)` (mm).
struct Volume {
    std::array<int, 3> dims{0, 0, 0};
    Affine affine = Affine::Identity();
    std::vector<float> data;

    Volume() = default;
    Volume(std::array<int, 3> d, const Affine& a, float fill = 0.0f);

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
    }
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
    }
    float& at(int i, int j, int k) { return data[index(i, j, k)]; }
    float at(int i, int j, int k) const { return data[index(i, j, k)]; }

    /// Per-axis voxel size in mm (column norms of the affine).
    Vec3 spacing() const;
    Vec3 world(double i, double j, double k) const;
    Vec3 to_voxel(const Vec3& world) const;
    bool same_grid(const Volume& other, double tol = 1e-6) const;
};

/// Affine with diagonal spacing and the given world position of voxel (0,0,0).
Affine make_affine(const Vec3& spacing, const Vec3& origin);

/// Grid of `dims` 1 mm voxels whose center lies at world `center`.
Affine centered_affine(std::array<int, 3> dims, const Vec3& center, double spacing = 1.0);

/// Trilinear interpolation at continuous voxel coordinates, clamped to the border.
double sample_trilinear(const Volume& v, const Vec3& voxel);

bool is_isotropic(const Volume& v, double spacing, double tol = 1e-6);

/// Resample onto a grid with the given isotropic spacing covering the same field of view.
Volume resample_isotropic(const Volume& v, double spacing);

/// Separable Gaussian blur; `sigma_voxels` per axis, zero means no blur along that axis.
Volume gaussian_blur(const Volume& v, const Vec3& sigma_voxels);

/// Rescale to [0, 1]; constant volumes map to 0.
void minmax_normalize(Volume& v);

std::array<float, 2> value_range(const Volume& v);

/// 4x4 affine as four whitespace-separated rows of text.
Affine read_affine(const std::filesystem::path& path);
void write_affine(const Affine& a, const std::filesystem::path& path);

}  // namespace cortexflow

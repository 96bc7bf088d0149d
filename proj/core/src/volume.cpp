#include "cortexflow/volume.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace cortexflow {

Volume::Volume(std::array<int, 3> d, const Affine& a, float fill) : dims(d), affine(a) {
    if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0) throw std::invalid_argument("Volume: dimensions must be positive");
    data.assign(voxel_count(), fill);
}

Vec3 Volume::spacing() const {
    return Vec3(affine.block<3, 1>(0, 0).norm(), affine.block<3, 1>(0, 1).norm(), affine.block<3, 1>(0, 2).norm());
}

Vec3 Volume::world(double i, double j, double k) const {
    return affine.block<3, 3>(0, 0) * Vec3(i, j, k) + affine.block<3, 1>(0, 3);
}

Vec3 Volume::to_voxel(const Vec3& w) const {
    return affine.block<3, 3>(0, 0).inverse() * (w - affine.block<3, 1>(0, 3));
}

bool Volume::same_grid(const Volume& other, double tol) const {
    return dims == other.dims && (affine - other.affine).cwiseAbs().maxCoeff() <= tol;
}

Affine make_affine(const Vec3& spacing, const Vec3& origin) {
    Affine a = Affine::Identity();
    a(0, 0) = spacing[0];
    a(1, 1) = spacing[1];
    a(2, 2) = spacing[2];
    a.block<3, 1>(0, 3) = origin;
    return a;
}

Affine centered_affine(std::array<int, 3> dims, const Vec3& center, double spacing) {
    const Vec3 half((dims[0] - 1) * 0.5, (dims[1] - 1) * 0.5, (dims[2] - 1) * 0.5);
    return make_affine(Vec3::Constant(spacing), center - spacing * half);
}

double sample_trilinear(const Volume& v, const Vec3& voxel) {
    double c[3];
    int i0[3], i1[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
        c[a] = std::clamp(voxel[a], 0.0, static_cast<double>(v.dims[a] - 1));
        i0[a] = static_cast<int>(std::floor(c[a]));
        i1[a] = std::min(i0[a] + 1, v.dims[a] - 1);
        t[a] = c[a] - i0[a];
    }
    double acc = 0;
    for (int dz = 0; dz < 2; ++dz) {
        const double wz = dz ? t[2] : 1 - t[2];
        const int k = dz ? i1[2] : i0[2];
        for (int dy = 0; dy < 2; ++dy) {
            const double wy = dy ? t[1] : 1 - t[1];
            const int j = dy ? i1[1] : i0[1];
            for (int dx = 0; dx < 2; ++dx) {
                const double wx = dx ? t[0] : 1 - t[0];
                const int i = dx ? i1[0] : i0[0];
                acc += wx * wy * wz * v.at(i, j, k);
            }
        }
    }
    return acc;
}

bool is_isotropic(const Volume& v, double spacing, double tol) {
    const Vec3 s = v.spacing();
    return std::abs(s[0] - spacing) <= tol && std::abs(s[1] - spacing) <= tol && std::abs(s[2] - spacing) <= tol;
}

Volume resample_isotropic(const Volume& v, double spacing) {
    if (!(spacing > 0)) throw std::invalid_argument("resample_isotropic: spacing must be positive");
    const Vec3 s = v.spacing();
    std::array<int, 3> dims{};
    Affine a = v.affine;
    for (int ax = 0; ax < 3; ++ax) {
        const double extent = (v.dims[ax] - 1) * s[ax];
        dims[ax] = static_cast<int>(std::floor(extent / spacing + 1e-9)) + 1;
        a.block<3, 1>(0, ax) = v.affine.block<3, 1>(0, ax) / s[ax] * spacing;
    }
    Volume out(dims, a);
    const Eigen::Matrix4d to_src = v.affine.inverse() * a;
    for (int k = 0; k < dims[2]; ++k) {
        for (int j = 0; j < dims[1]; ++j) {
            for (int i = 0; i < dims[0]; ++i) {
                const Eigen::Vector4d src = to_src * Eigen::Vector4d(i, j, k, 1);
                out.at(i, j, k) = static_cast<float>(sample_trilinear(v, src.head<3>()));
            }
        }
    }
    return out;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& w : k) w /= sum;
    return k;
}

}  // namespace

Volume gaussian_blur(const Volume& v, const Vec3& sigma_voxels) {
    Volume cur = v;
    for (int axis = 0; axis < 3; ++axis) {
        const double sigma = sigma_voxels[axis];
        if (!(sigma > 1e-6)) continue;
        const auto kernel = gaussian_kernel(sigma);
        const int radius = static_cast<int>(kernel.size() / 2);
        Volume next = cur;
        const int n = v.dims[axis];
        for (int k = 0; k < v.dims[2]; ++k) {
            for (int j = 0; j < v.dims[1]; ++j) {
                for (int i = 0; i < v.dims[0]; ++i) {
                    int idx[3] = {i, j, k};
                    const int center = idx[axis];
                    double acc = 0;
                    for (int t = -radius; t <= radius; ++t) {
                        idx[axis] = std::clamp(center + t, 0, n - 1);  // replicate border
                        acc += kernel[t + radius] * cur.at(idx[0], idx[1], idx[2]);
                    }
                    next.at(i, j, k) = static_cast<float>(acc);
                }
            }
        }
        cur = std::move(next);
    }
    return cur;
}

std::array<float, 2> value_range(const Volume& v) {
    if (v.data.empty()) return {0, 0};
    const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
    return {*lo, *hi};
}

void minmax_normalize(Volume& v) {
    const auto [lo, hi] = value_range(v);
    const double span = static_cast<double>(hi) - lo;
    for (auto& x : v.data) x = span > 0 ? static_cast<float>((x - static_cast<double>(lo)) / span) : 0.0f;
}

Affine read_affine(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open affine " + path.string());
    Affine a;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            if (!(in >> a(r, c))) throw std::runtime_error("affine " + path.string() + ": expected 16 numbers");
    std::string extra;
    if (in >> extra) throw std::runtime_error("affine " + path.string() + ": trailing content '" + extra + "'");
    if (std::abs(a(3, 0)) + std::abs(a(3, 1)) + std::abs(a(3, 2)) + std::abs(a(3, 3) - 1) > 1e-9) {
        throw std::runtime_error("affine " + path.string() + ": last row must be 0 0 0 1");
    }
    return a;
}

void write_affine(const Affine& a, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write affine " + path.string());
    out << std::setprecision(17);
    for (int r = 0; r < 4; ++r) out << a(r, 0) << ' ' << a(r, 1) << ' ' << a(r, 2) << ' ' << a(r, 3) << '\n';
}

}  // namespace cortexflow

#include "cortexflow/model.hpp"

#include <stdexcept>

namespace cortexflow {

using ad::Tensor;

Tensor image_tensor(const Volume& img) {
    std::vector<double> v(img.data.begin(), img.data.end());
    return Tensor::constant({img.dims[2], img.dims[1], img.dims[0], 1}, std::move(v));
}

FeatureVolume unet_features(const Network& net, const Volume& img) {
    if (!is_isotropic(img, 1.0, 1e-4)) throw std::invalid_argument("unet_features: input must be 1 mm isotropic");
    std::array<int, 3> padded{};
    bool pad = false;
    for (int a = 0; a < 3; ++a) {
        padded[a] = (img.dims[a] + 15) / 16 * 16;
        pad = pad || padded[a] != img.dims[a];
    }
    FeatureVolume out;
    out.affine = img.affine;
    if (!pad) {
        out.features = net.unet(image_tensor(img));
        return out;
    }
    const auto [nx, ny, nz] = img.dims;
    std::vector<double> v(static_cast<std::size_t>(padded[0]) * padded[1] * padded[2], 0.0);
    std::vector<std::int32_t> keep;
    keep.reserve(img.voxel_count());
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i) {
                const std::size_t p = i + static_cast<std::size_t>(padded[0]) * (j + static_cast<std::size_t>(padded[1]) * k);
                v[p] = img.at(i, j, k);
                keep.push_back(static_cast<std::int32_t>(p));
            }
    const Tensor f = net.unet(Tensor::constant({padded[2], padded[1], padded[0], 1}, std::move(v)));
    const int C = f.dim(3);
    const Tensor flat = ad::reshape(f, {padded[2] * padded[1] * padded[0], C});
    out.features = ad::reshape(ad::gather_rows(flat, keep), {nz, ny, nx, C});
    return out;
}

Tensor positioned_template(const Network& net, const Affine& template_affine) {
    const auto& base = net.hierarchy().meshes.front().vertices;
    std::vector<Vec3> pts(base.size());
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = (template_affine * base[i].homogeneous()).head<3>();
    return Tensor::from_points(pts);
}

std::vector<Tensor> deform_white(const Network& net, const Tensor& template_vertices, const FeatureVolume& feat) {
    const auto& H = net.hierarchy();
    if (template_vertices.rows() != static_cast<int>(H.meshes.front().vertices.size())) {
        throw std::invalid_argument("deform_white: template must be the level-0 mesh");
    }
    const Eigen::Matrix4d w2v = feat.world_to_voxel();
    const int K = net.config().k_wm;
    const double h = 1.0 / K;
    std::vector<Tensor> levels;
    Tensor v = template_vertices;
    for (int n = 0; n <= net.config().levels; ++n) {
        if (n > 0) v = ad::subdivide_rows(v, H.edge_parents[n - 1]);
        for (int k = 0; k < K; ++k) {
            const Tensor s = ad::trilinear_sample(feat.features, v, w2v);
            v = ad::add(v, ad::scale(net.graph_unet(n, s), h));
        }
        levels.push_back(v);
    }
    return levels;
}

Tensor deform_gray(const Network& net, const Tensor& wm_vertices, const FeatureVolume& feat) {
    const Eigen::Matrix4d w2v = feat.world_to_voxel();
    const int K = net.config().k_gm;
    const double h = 1.0 / K;
    Tensor v = wm_vertices;
    for (int k = 0; k < K; ++k) {
        const Tensor s = ad::trilinear_sample(feat.features, v, w2v);
        v = ad::add(v, ad::scale(net.gm_block(s), h));
    }
    return v;
}

Mesh mesh_from_tensor(const Network& net, int level, const Tensor& vertices) {
    const auto& H = net.hierarchy();
    if (level < 0 || level > H.levels()) throw std::out_of_range("mesh_from_tensor: level out of range");
    Mesh m;
    m.faces = H.meshes[level].faces;
    m.level = level;
    m.vertices = vertices.to_points();
    if (m.vertices.size() != H.meshes[level].vertices.size()) {
        throw std::invalid_argument("mesh_from_tensor: vertex count does not match level " + std::to_string(level));
    }
    return m;
}

std::vector<Mesh> deform_white(const Network& net, const Mesh& template_mesh, const FeatureVolume& feat) {
    if (template_mesh.level != 0) throw std::invalid_argument("deform_white: template level must be 0");
    const auto levels = deform_white(net, Tensor::from_points(template_mesh.vertices), feat);
    std::vector<Mesh> out;
    for (std::size_t n = 0; n < levels.size(); ++n) out.push_back(mesh_from_tensor(net, static_cast<int>(n), levels[n]));
    return out;
}

Mesh deform_gray(const Network& net, const Mesh& wm, const FeatureVolume& feat) {
    Mesh out = wm;
    out.vertices = deform_gray(net, Tensor::from_points(wm.vertices), feat).to_points();
    return out;
}

Volume prepare_input(const Volume& img) {
    Volume v = is_isotropic(img, 1.0, 1e-4) ? img : resample_isotropic(img, 1.0);
    minmax_normalize(v);
    return v;
}

Reconstruction reconstruct(const Network& net, const Volume& img, const Affine& template_affine) {
    ad::NoGradGuard no_grad;
    const Volume input = prepare_input(img);
    const FeatureVolume feat = unet_features(net, input);
    const auto white = deform_white(net, positioned_template(net, template_affine), feat);
    const Tensor gray = deform_gray(net, white.back(), feat);
    const int L = net.config().levels;
    return {mesh_from_tensor(net, L, white.back()), mesh_from_tensor(net, L, gray)};
}

}  // namespace cortexflow

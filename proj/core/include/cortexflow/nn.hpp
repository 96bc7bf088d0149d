#pragma once

#include "cortexflow/autodiff.hpp"
#include "cortexflow/mesh.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cortexflow {

/// Architecture hyperparameters. `desk()` quarters the channel plan and stops at level 3.
struct ModelConfig {
    std::string profile = "full";
    std::vector<int> encoder{16, 32, 64, 96, 128};
    std::vector<int> decoder{96, 64, 64, 32};
    int levels = 6;  // deepest WM mesh level (template is level 0)
    int graph_channels = 64;
    int graph_depth = 4;
    int k_wm = 2;
    int k_gm = 10;
    int gm_hidden = 32;
    int template_vertices = 62;
    double prelu_init = 0.25;

    static ModelConfig full();
    static ModelConfig desk();
    static ModelConfig from_profile(const std::string& name);
    int feature_channels() const { return decoder.back(); }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// Topology of the template and each of its subdivisions, plus the maps between levels.
struct MeshHierarchy {
    std::vector<Mesh> meshes;                     // level 0..L; level-0 positions are the unit template
    std::vector<std::vector<EdgeKey>> edge_parents;  // [l]: new vertices of level l + 1
    std::vector<VertexAdjacency> adjacency;
    // [l] for l >= 1: CSR groups of level-l vertices pooled onto each level-(l-1) vertex.
    std::vector<std::vector<std::int32_t>> pool_offsets, pool_members;

    static MeshHierarchy build(int template_vertices, int levels);
    int levels() const { return static_cast<int>(meshes.size()) - 1; }
};

/// Named learnable tensors in creation order.
class ParameterSet {
public:
    ad::Tensor add(const std::string& name, std::vector<int> shape, std::vector<double> values);
    const ad::Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    const std::vector<ad::Tensor>& all() const { return params_; }
    std::size_t scalar_count() const;

private:
    std::vector<ad::Tensor> params_;
    std::map<std::string, std::size_t> index_;
};

/// y = [x, mean of 1-ring neighbours of x] W + b
ad::Tensor graph_conv(const ad::Tensor& x, const VertexAdjacency& adj, const ad::Tensor& w, const ad::Tensor& b);

/// Feature UNet, per-level graph UNets for WM deformation, and the GM block.
class Network {
public:
    Network(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const MeshHierarchy& hierarchy() const { return hierarchy_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

    /// [nz, ny, nx, 1] -> [nz, ny, nx, feature_channels]; spatial sizes divisible by 16.
    ad::Tensor unet(const ad::Tensor& image) const;
    /// Displacement [V, 3] for mesh level `level` from sampled features [V, C].
    ad::Tensor graph_unet(int level, const ad::Tensor& features) const;
    /// Displacement [V, 3] from sampled features [V, C].
    ad::Tensor gm_block(const ad::Tensor& features) const;

    /// Sets the displacement output layers (WM per level and GM) to zero.
    void zero_output_layers();

private:
    ModelConfig config_;
    MeshHierarchy hierarchy_;
    ParameterSet params_;
};

}  // namespace cortexflow

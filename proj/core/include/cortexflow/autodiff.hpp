#pragma once

#include "cortexflow/mesh.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cortexflow::ad {

/// Node of the reverse-mode tape. Values are held in double precision.
struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until touched by backward
    bool requires_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

/// Handle to a tape node. Copies share the node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor constant(std::vector<int> shape, std::vector<double> values);
    static Tensor zeros(std::vector<int> shape);
    static Tensor parameter(std::vector<int> shape, std::vector<double> values, std::string name);
    static Tensor scalar(double v) { return constant({1}, {v}); }

    bool defined() const { return static_cast<bool>(node_); }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape.at(i); }
    int rows() const { return node_->shape.at(0); }
    int cols() const { return node_->shape.size() < 2 ? 1 : node_->shape.back(); }
    std::size_t size() const { return node_->value.size(); }
    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& mutable_values() { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    std::vector<double>& mutable_grad() { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& name() const { return node_->name; }
    double item() const { return node_->value.at(0); }
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

    /// Rows as Vec3 (requires a trailing dimension of 3).
    std::vector<Vec3> to_points() const;
    static Tensor from_points(const std::vector<Vec3>& pts);

    /// Constant copy detached from the tape.
    Tensor detach() const;

private:
    std::shared_ptr<Node> node_;
};

/// Disables tape recording in the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
bool grad_enabled();

/// Reverse pass from a scalar. Each reachable node is visited once in reverse topological order.
void backward(const Tensor& loss);
/// Zeroes the accumulated gradients of `params`.
void zero_grad(const std::vector<Tensor>& params);

/// Worker threads used by the volumetric kernels (1 = serial). Reductions are ordered by
/// thread index so results only depend on the thread count.
void set_num_threads(int n);
int num_threads();

// Elementwise and reductions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Broadcast a one-element tensor to `shape`.
Tensor expand(const Tensor& s, std::vector<int> shape);
/// Multiplies every row of a [N, C] tensor by the matching entry of a [N] tensor.
Tensor mul_rows(const Tensor& a, const Tensor& w);
/// Constant-mask multiply: y = a * mask (mask not differentiated).
Tensor mask(const Tensor& a, std::vector<double> m);
Tensor reshape(const Tensor& a, std::vector<int> shape);

// Row operations on [N, C] tensors.
Tensor gather_rows(const Tensor& a, const std::vector<std::int32_t>& idx);
Tensor scatter_add_rows(const Tensor& a, const std::vector<std::int32_t>& idx, int out_rows);
/// out[r] = sum_k w[r*k_per_row + k] * a[idx[r*k_per_row + k]]
Tensor weighted_gather(const Tensor& a, const std::vector<std::int32_t>& idx, const std::vector<double>& w,
                       int per_row);
Tensor row_dot(const Tensor& a, const Tensor& b);
Tensor row_norm(const Tensor& a);
Tensor cross(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor column(const Tensor& a, int c);

// Dense layers.
Tensor matmul(const Tensor& x, const Tensor& w);                   // [N, Cin] x [Cin, Cout]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // + bias [Cout]
Tensor prelu(const Tensor& x, const Tensor& slope);                // slope shape [1]

// Volumetric ops on channel-last [nz, ny, nx, C] tensors.
/// 3x3x3 convolution with zero padding. Weight [27 * Cin, Cout], tap-major (dz, dy, dx).
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor maxpool3d2(const Tensor& x);
Tensor upsample3d2(const Tensor& x);
Tensor instance_norm(const Tensor& x, double eps = 1e-5);
/// Concatenation along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Trilinear sampling at world points [N, 3]; `world_to_voxel` maps mm to (i, j, k).
/// Coordinates outside the grid clamp to the border voxel.
Tensor trilinear_sample(const Tensor& vol, const Tensor& pts, const Eigen::Matrix4d& world_to_voxel);

// Mesh ops.
/// Mean of 1-ring neighbour rows. Throws on an isolated vertex.
Tensor neighbor_mean(const Tensor& x, const VertexAdjacency& adj);
/// Appends one row per edge equal to the mean of its two endpoint rows (midpoint subdivision).
Tensor subdivide_rows(const Tensor& x, const std::vector<EdgeKey>& edge_parents);
/// Max over each coarse vertex's fine neighbourhood (`groups` in CSR form).
Tensor group_max(const Tensor& x, const std::vector<std::int32_t>& offsets, const std::vector<std::int32_t>& members);

}  // namespace cortexflow::ad

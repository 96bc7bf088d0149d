#include "cortexflow/nn.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace cortexflow {

using ad::Tensor;

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.profile = "desk";
    c.encoder = {4, 8, 16, 24, 32};
    c.decoder = {24, 16, 16, 8};
    c.levels = 3;
    c.graph_channels = 16;
    return c;
}

ModelConfig ModelConfig::from_profile(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "full") return full();
    throw std::invalid_argument("unknown profile '" + name + "' (expected desk or full)");
}

void ModelConfig::validate() const {
    if (encoder.size() != 5 || decoder.size() != 4) throw std::invalid_argument("model: expected 5 encoder and 4 decoder stages");
    for (int c : encoder)
        if (c <= 0) throw std::invalid_argument("model: channel counts must be positive");
    for (int c : decoder)
        if (c <= 0) throw std::invalid_argument("model: channel counts must be positive");
    if (levels < 0 || levels > 7) throw std::invalid_argument("model: levels must be in [0, 7]");
    if (graph_channels <= 0 || graph_depth <= 0 || gm_hidden <= 0) throw std::invalid_argument("model: bad graph network size");
    if (k_wm <= 0 || k_gm <= 0) throw std::invalid_argument("model: step counts must be positive");
}

MeshHierarchy MeshHierarchy::build(int template_vertices, int levels) {
    MeshHierarchy h;
    h.meshes.push_back(build_template(template_vertices));
    for (int l = 0; l < levels; ++l) {
        auto s = subdivide_with_map(h.meshes.back());
        h.meshes.push_back(std::move(s.mesh));
        h.edge_parents.push_back(std::move(s.edge_parents));
    }
    for (const auto& m : h.meshes) h.adjacency.push_back(vertex_adjacency(m));
    h.pool_offsets.resize(h.meshes.size());
    h.pool_members.resize(h.meshes.size());
    for (int l = 1; l <= levels; ++l) {
        const int coarse = static_cast<int>(h.meshes[l - 1].vertices.size());
        const auto& parents = h.edge_parents[l - 1];
        std::vector<std::vector<std::int32_t>> groups(coarse);
        for (int c = 0; c < coarse; ++c) groups[c].push_back(c);
        for (std::size_t e = 0; e < parents.size(); ++e) {
            groups[parents[e][0]].push_back(coarse + static_cast<std::int32_t>(e));
            groups[parents[e][1]].push_back(coarse + static_cast<std::int32_t>(e));
        }
        auto& off = h.pool_offsets[l];
        auto& mem = h.pool_members[l];
        off.push_back(0);
        for (const auto& g : groups) {
            mem.insert(mem.end(), g.begin(), g.end());
            off.push_back(static_cast<std::int32_t>(mem.size()));
        }
    }
    return h;
}

Tensor ParameterSet::add(const std::string& name, std::vector<int> shape, std::vector<double> values) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    Tensor t = Tensor::parameter(std::move(shape), std::move(values), name);
    index_[name] = params_.size();
    params_.push_back(t);
    return t;
}

const Tensor& ParameterSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return params_[it->second];
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

Tensor graph_conv(const Tensor& x, const VertexAdjacency& adj, const Tensor& w, const Tensor& b) {
    return ad::linear(ad::concat_cols(x, ad::neighbor_mean(x, adj)), w, b);
}

namespace {

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(n);
    for (auto& x : v) x = static_cast<float>(dist(rng));
    return v;
}

std::string key(const std::string& prefix, int i, const char* leaf) { return prefix + std::to_string(i) + "." + leaf; }

}  // namespace

Network::Network(const ModelConfig& config, std::uint64_t seed)
    : config_(config), hierarchy_(MeshHierarchy::build(config.template_vertices, config.levels)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const double a = config_.prelu_init;
    const double gain = std::sqrt(6.0 / (1.0 + a * a));
    auto slope = [&](const std::string& name) { params_.add(name, {1}, {a}); };
    auto weight = [&](const std::string& name, int fan_in, int cout) {
        params_.add(name, {fan_in, cout}, uniform(rng, static_cast<std::size_t>(fan_in) * cout, gain / std::sqrt(fan_in)));
    };

    int cin = 1;
    for (int i = 0; i < 5; ++i) {
        weight(key("unet.enc", i, "w"), 27 * cin, config_.encoder[i]);
        slope(key("unet.enc", i, "a"));
        cin = config_.encoder[i];
    }
    for (int j = 0; j < 4; ++j) {
        const int skip = config_.encoder[3 - j];
        weight(key("unet.dec", j, "w"), 27 * (cin + skip), config_.decoder[j]);
        slope(key("unet.dec", j, "a"));
        cin = config_.decoder[j];
    }

    const int C = config_.graph_channels;
    const int F = config_.feature_channels();
    for (int n = 0; n <= config_.levels; ++n) {
        const std::string p = "gcn" + std::to_string(n);
        const int depth = std::min(config_.graph_depth, n + 1);
        for (int i = 0; i < depth; ++i) {
            const int in = i == 0 ? F : C;
            weight(key(p + ".enc", i, "w"), 2 * in, C);
            params_.add(key(p + ".enc", i, "b"), {C}, std::vector<double>(C, 0.0));
            slope(key(p + ".enc", i, "a"));
        }
        for (int i = depth - 1; i >= 1; --i) {
            weight(key(p + ".dec", i, "w"), 4 * C, C);
            params_.add(key(p + ".dec", i, "b"), {C}, std::vector<double>(C, 0.0));
            slope(key(p + ".dec", i, "a"));
        }
        params_.add(p + ".out.w", {2 * C, 3}, std::vector<double>(2 * C * 3, 0.0));
        params_.add(p + ".out.b", {3}, std::vector<double>(3, 0.0));
    }
    const int H = config_.gm_hidden;
    weight("gm.fc1.w", F, H);
    params_.add("gm.fc1.b", {H}, std::vector<double>(H, 0.0));
    slope("gm.a");
    params_.add("gm.fc2.w", {H, 3}, std::vector<double>(H * 3, 0.0));
    params_.add("gm.fc2.b", {3}, std::vector<double>(3, 0.0));
}

Tensor Network::unet(const Tensor& image) const {
    if (image.shape().size() != 4 || image.dim(3) != 1) throw std::invalid_argument("unet: expected a [nz, ny, nx, 1] image");
    for (int a = 0; a < 3; ++a)
        if (image.dim(a) % 16) throw std::invalid_argument("unet: spatial sizes must be divisible by 16");
    auto block = [&](const Tensor& x, const std::string& prefix, int i) {
        const Tensor y = ad::conv3d(x, params_.get(key(prefix, i, "w")), Tensor());
        return ad::prelu(ad::instance_norm(y), params_.get(key(prefix, i, "a")));
    };
    std::vector<Tensor> skips;
    Tensor h = image;
    for (int i = 0; i < 5; ++i) {
        if (i > 0) h = ad::maxpool3d2(h);
        h = block(h, "unet.enc", i);
        skips.push_back(h);
    }
    for (int j = 0; j < 4; ++j) {
        h = ad::concat_channels(ad::upsample3d2(h), skips[3 - j]);
        h = block(h, "unet.dec", j);
    }
    return h;
}

Tensor Network::graph_unet(int level, const Tensor& features) const {
    if (level < 0 || level > config_.levels) throw std::out_of_range("graph_unet: level out of range");
    const auto& H = hierarchy_;
    const std::string p = "gcn" + std::to_string(level);
    const int depth = std::min(config_.graph_depth, level + 1);
    auto conv = [&](const Tensor& x, int l, const std::string& stage, int i) {
        const Tensor y = graph_conv(x, H.adjacency[l], params_.get(key(p + stage, i, "w")), params_.get(key(p + stage, i, "b")));
        return ad::prelu(y, params_.get(key(p + stage, i, "a")));
    };
    std::vector<Tensor> skips;
    Tensor x = conv(features, level, ".enc", 0);
    skips.push_back(x);
    for (int i = 1; i < depth; ++i) {
        const int fine = level - i + 1;
        x = ad::group_max(x, H.pool_offsets[fine], H.pool_members[fine]);
        x = conv(x, level - i, ".enc", i);
        skips.push_back(x);
    }
    for (int i = depth - 1; i >= 1; --i) {
        const int fine = level - i + 1;
        x = ad::subdivide_rows(x, H.edge_parents[fine - 1]);
        x = conv(ad::concat_cols(x, skips[i - 1]), fine, ".dec", i);
    }
    return graph_conv(x, H.adjacency[level], params_.get(p + ".out.w"), params_.get(p + ".out.b"));
}

Tensor Network::gm_block(const Tensor& features) const {
    Tensor h = ad::linear(features, params_.get("gm.fc1.w"), params_.get("gm.fc1.b"));
    h = ad::prelu(h, params_.get("gm.a"));
    return ad::linear(h, params_.get("gm.fc2.w"), params_.get("gm.fc2.b"));
}

void Network::zero_output_layers() {
    for (auto& t : params_.all()) {
        const auto& n = t.name();
        const bool out = n.ends_with(".out.w") || n.ends_with(".out.b") || n.starts_with("gm.fc2.");
        if (out) std::fill(t.node()->value.begin(), t.node()->value.end(), 0.0);
    }
}

}  // namespace cortexflow

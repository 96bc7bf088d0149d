#pragma once

#include "cortexflow/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cortexflow {

struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;  // stored as little-endian float32
};

/// One file: a magic line, a one-line JSON header (architecture, iteration, tensor table,
/// free-form state), then the float32 blobs in table order.
struct CheckpointData {
    ModelConfig model;
    std::uint64_t init_seed = 0;
    std::int64_t iteration = 0;
    std::string state_json = "{}";
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
/// Throws std::runtime_error naming the path when it cannot be read or is malformed.
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Parameters of `net` as "param/<name>" arrays.
CheckpointData snapshot(const Network& net, std::uint64_t init_seed);
/// Rebuilds the network described by the header and loads its parameters.
/// Throws std::invalid_argument when a stored shape does not match the architecture.
Network load_network(const CheckpointData& data);

std::string to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace cortexflow

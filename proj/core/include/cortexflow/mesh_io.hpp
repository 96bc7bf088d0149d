#pragma once

#include "cortexflow/mesh.hpp"

#include <filesystem>

namespace cortexflow {

// Binary little-endian PLY: float32 x,y,z per vertex; uchar count + int32 indices per face.
void write_ply(const Mesh& m, const std::filesystem::path& path);
Mesh read_ply(const std::filesystem::path& path);

void write_off(const Mesh& m, const std::filesystem::path& path);
Mesh read_off(const std::filesystem::path& path);

/// Dispatches on extension (.ply / .off).
Mesh read_mesh(const std::filesystem::path& path);
void write_mesh(const Mesh& m, const std::filesystem::path& path);

}  // namespace cortexflow

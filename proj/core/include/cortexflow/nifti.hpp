#pragma once

#include "cortexflow/volume.hpp"

#include <cstdint>
#include <filesystem>

namespace cortexflow {

enum class NiftiDatatype : std::int16_t {
    uint8 = 2,
    int16 = 4,
    float32 = 16,
};

/// Reads a single-file NIfTI-1 volume ("n+1"), gzip-compressed or not.
/// Supports uint8/int16/float32 data in little-endian byte order only.
Volume read_volume(const std::filesystem::path& path);

/// Writes NIfTI-1 with an sform affine. A ".gz" suffix selects gzip compression.
void write_volume(const Volume& v, const std::filesystem::path& path,
                  NiftiDatatype datatype = NiftiDatatype::float32);

}  // namespace cortexflow

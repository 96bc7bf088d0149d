#include "cortexflow/nifti.hpp"

#include <zlib.h>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cortexflow {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

struct GzCloser {
    void operator()(gzFile f) const {
        if (f) gzclose(f);
    }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

std::runtime_error nifti_error(const std::filesystem::path& path, const std::string& what) {
    return std::runtime_error(path.string() + ": " + what);
}

template <typename T>
T get(const std::vector<unsigned char>& buf, std::size_t offset) {
    T v;
    std::memcpy(&v, buf.data() + offset, sizeof(T));
    return v;
}

template <typename T>
void put(std::vector<unsigned char>& buf, std::size_t offset, T v) {
    std::memcpy(buf.data() + offset, &v, sizeof(T));
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    // gzread passes uncompressed files through unchanged.
    GzHandle f(gzopen(path.string().c_str(), "rb"));
    if (!f) throw nifti_error(path, "cannot open for reading");
    std::vector<unsigned char> out;
    std::vector<unsigned char> chunk(1 << 16);
    for (;;) {
        const int n = gzread(f.get(), chunk.data(), static_cast<unsigned>(chunk.size()));
        if (n < 0) throw nifti_error(path, "read error");
        if (n == 0) break;
        out.insert(out.end(), chunk.begin(), chunk.begin() + n);
    }
    return out;
}

bool has_gz_suffix(const std::filesystem::path& path) {
    const auto s = path.string();
    return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

Affine qform_affine(const std::vector<unsigned char>& h, const Vec3& pixdim, float qfac) {
    const double b = get<float>(h, 256), c = get<float>(h, 260), d = get<float>(h, 264);
    const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
    Eigen::Quaterniond q(a, b, c, d);
    Eigen::Matrix3d r = q.toRotationMatrix();
    Affine out = Affine::Identity();
    Vec3 scale = pixdim;
    scale[2] *= (qfac < 0 ? -1.0 : 1.0);
    out.block<3, 3>(0, 0) = r * scale.asDiagonal();
    out(0, 3) = get<float>(h, 268);
    out(1, 3) = get<float>(h, 272);
    out(2, 3) = get<float>(h, 276);
    return out;
}

}  // namespace

Volume read_volume(const std::filesystem::path& path) {
    const auto buf = read_all(path);
    if (buf.size() < kHeaderSize) throw nifti_error(path, "file shorter than a NIfTI-1 header");
    const auto sizeof_hdr = get<std::int32_t>(buf, 0);
    if (sizeof_hdr != kHeaderSize) {
        std::int32_t swapped = static_cast<std::int32_t>(__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr)));
        if (swapped == kHeaderSize) throw nifti_error(path, "big-endian NIfTI files are unsupported");
        throw nifti_error(path, "not a NIfTI-1 file (sizeof_hdr=" + std::to_string(sizeof_hdr) + ")");
    }
    if (std::memcmp(buf.data() + 344, "n+1\0", 4) != 0) {
        throw nifti_error(path, "unsupported NIfTI magic (only single-file \"n+1\" is supported)");
    }
    std::array<int, 3> dims{};
    const auto ndim = get<std::int16_t>(buf, 40);
    if (ndim < 1 || ndim > 7) throw nifti_error(path, "invalid dim[0]=" + std::to_string(ndim));
    for (int a = 0; a < 3; ++a) dims[a] = a < ndim ? get<std::int16_t>(buf, 42 + 2 * a) : 1;
    for (int a = 3; a < ndim; ++a) {
        if (get<std::int16_t>(buf, 42 + 2 * a) != 1) throw nifti_error(path, "only 3D volumes are supported");
    }
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0) throw nifti_error(path, "non-positive dimension in header");
    }

    const auto datatype = get<std::int16_t>(buf, 70);
    std::size_t bytes_per_voxel = 0;
    switch (datatype) {
        case static_cast<std::int16_t>(NiftiDatatype::uint8): bytes_per_voxel = 1; break;
        case static_cast<std::int16_t>(NiftiDatatype::int16): bytes_per_voxel = 2; break;
        case static_cast<std::int16_t>(NiftiDatatype::float32): bytes_per_voxel = 4; break;
        default: throw nifti_error(path, "unsupported NIfTI datatype code " + std::to_string(datatype));
    }

    Vec3 pixdim(get<float>(buf, 80), get<float>(buf, 84), get<float>(buf, 88));
    for (int a = 0; a < 3; ++a) {
        if (!(pixdim[a] > 0)) pixdim[a] = 1.0;
    }
    Affine affine = Affine::Identity();
    const auto qform_code = get<std::int16_t>(buf, 252);
    const auto sform_code = get<std::int16_t>(buf, 254);
    if (sform_code > 0) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) affine(r, c) = get<float>(buf, 280 + 16 * r + 4 * c);
        }
    } else if (qform_code > 0) {
        affine = qform_affine(buf, pixdim, get<float>(buf, 76));
    } else {
        affine = make_affine(pixdim, Vec3::Zero());
    }

    const auto vox_offset = static_cast<std::size_t>(get<float>(buf, 108));
    Volume v(dims, affine);
    const std::size_t expected = v.voxel_count() * bytes_per_voxel;
    if (vox_offset < kHeaderSize || buf.size() < vox_offset || buf.size() - vox_offset != expected) {
        throw nifti_error(path, "data length does not match header dimensions (expected " + std::to_string(expected) +
                                    " bytes after offset " + std::to_string(vox_offset) + ", found " +
                                    std::to_string(buf.size() >= vox_offset ? buf.size() - vox_offset : 0) + ")");
    }
    float slope = get<float>(buf, 112);
    float inter = get<float>(buf, 116);
    const bool scale = slope != 0.0f && !(slope == 1.0f && inter == 0.0f);
    const unsigned char* p = buf.data() + vox_offset;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        float x = 0;
        switch (bytes_per_voxel) {
            case 1: x = p[i]; break;
            case 2: {
                std::int16_t s;
                std::memcpy(&s, p + 2 * i, 2);
                x = s;
                break;
            }
            default: std::memcpy(&x, p + 4 * i, 4); break;
        }
        v.data[i] = scale ? x * slope + inter : x;
    }
    return v;
}

void write_volume(const Volume& v, const std::filesystem::path& path, NiftiDatatype datatype) {
    std::vector<unsigned char> buf(kVoxOffset, 0);
    put<std::int32_t>(buf, 0, kHeaderSize);
    put<std::int16_t>(buf, 40, 3);
    for (int a = 0; a < 3; ++a) put<std::int16_t>(buf, 42 + 2 * a, static_cast<std::int16_t>(v.dims[a]));
    for (int a = 3; a < 7; ++a) put<std::int16_t>(buf, 42 + 2 * a, 1);
    put<std::int16_t>(buf, 70, static_cast<std::int16_t>(datatype));
    const std::int16_t bitpix = datatype == NiftiDatatype::uint8 ? 8 : datatype == NiftiDatatype::int16 ? 16 : 32;
    put<std::int16_t>(buf, 72, bitpix);
    const Vec3 s = v.spacing();
    put<float>(buf, 76, 1.0f);
    for (int a = 0; a < 3; ++a) put<float>(buf, 80 + 4 * a, static_cast<float>(s[a]));
    put<float>(buf, 108, static_cast<float>(kVoxOffset));
    put<float>(buf, 112, 1.0f);
    put<float>(buf, 116, 0.0f);
    buf[123] = 2;  // xyzt_units: mm
    put<std::int16_t>(buf, 252, 0);
    put<std::int16_t>(buf, 254, 1);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) put<float>(buf, 280 + 16 * r + 4 * c, static_cast<float>(v.affine(r, c)));
    }
    std::memcpy(buf.data() + 344, "n+1\0", 4);

    const std::size_t header_size = buf.size();
    const std::size_t bpv = bitpix / 8;
    buf.resize(header_size + v.data.size() * bpv);
    unsigned char* p = buf.data() + header_size;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const float x = v.data[i];
        switch (datatype) {
            case NiftiDatatype::uint8: p[i] = static_cast<unsigned char>(std::clamp(std::lround(x), 0L, 255L)); break;
            case NiftiDatatype::int16: {
                const auto s16 = static_cast<std::int16_t>(std::clamp(std::lround(x), -32768L, 32767L));
                std::memcpy(p + 2 * i, &s16, 2);
                break;
            }
            case NiftiDatatype::float32: std::memcpy(p + 4 * i, &x, 4); break;
        }
    }

    if (has_gz_suffix(path)) {
        GzHandle f(gzopen(path.string().c_str(), "wb6"));
        if (!f) throw nifti_error(path, "cannot open for writing");
        std::size_t written = 0;
        while (written < buf.size()) {
            const auto chunk = static_cast<unsigned>(std::min<std::size_t>(buf.size() - written, 1u << 30));
            if (gzwrite(f.get(), buf.data() + written, chunk) != static_cast<int>(chunk)) {
                throw nifti_error(path, "gzip write failed");
            }
            written += chunk;
        }
    } else {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw nifti_error(path, "cannot open for writing");
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!out) throw nifti_error(path, "write failed");
    }
}

}  // namespace cortexflow

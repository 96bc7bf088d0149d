#include "cortexflow/nifti.hpp"
#include "cortexflow/volume.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

using namespace cortexflow;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
    const auto dir = fs::temp_directory_path() / "cortexflow_volume_io";
    fs::create_directories(dir);
    return dir;
}

Volume random_volume() {
    Affine a = make_affine(Vec3(1.0, 1.5, 2.0), Vec3(-10, 4.25, 3));
    Volume v({7, 5, 3}, a);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(-3, 3);
    for (auto& x : v.data) x = u(rng);
    return v;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out << bytes;
}

}  // namespace

TEST_CASE("float32 NIfTI round trip") {
    const Volume v = random_volume();
    for (const char* name : {"v.nii", "v.nii.gz"}) {
        write_volume(v, scratch() / name);
        const Volume r = read_volume(scratch() / name);
        CHECK(r.dims == v.dims);
        CHECK(r.data == v.data);
        CHECK(r.affine.matrix().isApprox(v.affine.matrix(), 1e-7));
        CHECK((r.spacing() - Vec3(1.0, 1.5, 2.0)).norm() < 1e-6);
    }
}

TEST_CASE("integer NIfTI datatypes") {
    Volume v({4, 4, 4}, Affine::Identity());
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i % 5);
    write_volume(v, scratch() / "u8.nii.gz", NiftiDatatype::uint8);
    write_volume(v, scratch() / "i16.nii", NiftiDatatype::int16);
    CHECK(read_volume(scratch() / "u8.nii.gz").data == v.data);
    CHECK(read_volume(scratch() / "i16.nii").data == v.data);
}

TEST_CASE("malformed NIfTI input is rejected") {
    const Volume v = random_volume();
    write_volume(v, scratch() / "plain.nii");
    const std::string bytes = slurp(scratch() / "plain.nii");

    std::string big = bytes;
    std::swap(big[0], big[3]);
    std::swap(big[1], big[2]);
    dump(scratch() / "big.nii", big);
    try {
        read_volume(scratch() / "big.nii");
        FAIL("expected an exception");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("big-endian") != std::string::npos);
    }

    dump(scratch() / "short.nii", bytes.substr(0, bytes.size() - 4));
    try {
        read_volume(scratch() / "short.nii");
        FAIL("expected an exception");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("data length") != std::string::npos);
    }

    dump(scratch() / "tiny.nii", bytes.substr(0, 100));
    CHECK_THROWS(read_volume(scratch() / "tiny.nii"));
    CHECK_THROWS(read_volume(scratch() / "absent.nii"));
}

TEST_CASE("affine text files") {
    const Affine a = random_volume().affine;
    write_affine(a, scratch() / "a.txt");
    CHECK(read_affine(scratch() / "a.txt").matrix() == a.matrix());
    dump(scratch() / "bad_row.txt", "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 1 1\n");
    CHECK_THROWS(read_affine(scratch() / "bad_row.txt"));
    dump(scratch() / "few.txt", "1 0 0 0\n0 1 0 0\n");
    CHECK_THROWS(read_affine(scratch() / "few.txt"));
    dump(scratch() / "extra.txt", "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n7\n");
    CHECK_THROWS(read_affine(scratch() / "extra.txt"));
}

TEST_CASE("grid helpers") {
    const Volume v({9, 9, 9}, centered_affine({9, 9, 9}, Vec3(1, 2, 3)));
    CHECK((v.world(4, 4, 4) - Vec3(1, 2, 3)).norm() < 1e-12);
    CHECK((v.to_voxel(Vec3(1, 2, 3)) - Vec3(4, 4, 4)).norm() < 1e-12);

    Volume r({2, 2, 2}, Affine::Identity());
    r.data = {0, 1, 2, 3, 4, 5, 6, 7};
    CHECK(sample_trilinear(r, Vec3(1, 1, 1)) == 7.0);
    CHECK(sample_trilinear(r, Vec3(0.5, 0.5, 0.5)) == doctest::Approx(3.5));
    CHECK(sample_trilinear(r, Vec3(0.5, 0, 0)) == doctest::Approx(0.5));

    Volume aniso({8, 8, 4}, make_affine(Vec3(1, 1, 2), Vec3::Zero()), 2.0f);
    const Volume iso = resample_isotropic(aniso, 1.0);
    CHECK(is_isotropic(iso, 1.0));
    CHECK_FALSE(is_isotropic(aniso, 1.0));
    for (float x : iso.data) CHECK(x == doctest::Approx(2.0f));

    Volume n = r;
    minmax_normalize(n);
    CHECK(value_range(n) == std::array<float, 2>{0.0f, 1.0f});
    const Volume b = gaussian_blur(Volume({5, 5, 5}, Affine::Identity(), 3.0f), Vec3(1, 1, 1));
    for (float x : b.data) CHECK(x == doctest::Approx(3.0f));
}

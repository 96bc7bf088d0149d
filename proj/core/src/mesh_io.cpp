#include "cortexflow/mesh_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cortexflow {

static_assert(std::endian::native == std::endian::little, "mesh IO assumes a little-endian host");

namespace {

std::runtime_error io_error(const std::filesystem::path& path, const std::string& what) {
    return std::runtime_error(path.string() + ": " + what);
}

std::string lowercase_extension(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

}  // namespace

void write_ply(const Mesh& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error(path, "cannot open for writing");
    out << "ply\nformat binary_little_endian 1.0\n"
        << "comment cortexflow level " << m.level << "\n"
        << "element vertex " << m.vertices.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "element face " << m.faces.size() << "\n"
        << "property list uchar int vertex_indices\n"
        << "end_header\n";
    std::vector<char> buf;
    buf.reserve(m.vertices.size() * 12 + m.faces.size() * 13);
    auto put = [&](const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf.insert(buf.end(), c, c + n);
    };
    for (const auto& v : m.vertices) {
        const float xyz[3] = {static_cast<float>(v[0]), static_cast<float>(v[1]), static_cast<float>(v[2])};
        put(xyz, sizeof xyz);
    }
    for (const auto& f : m.faces) {
        const std::uint8_t count = 3;
        put(&count, 1);
        put(f.data(), sizeof(std::int32_t) * 3);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error(path, "write failed");
}

Mesh read_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error(path, "cannot open for reading");
    std::string line;
    std::getline(in, line);
    if (line != "ply") throw io_error(path, "not a PLY file");

    std::size_t n_vertices = 0, n_faces = 0;
    std::vector<std::string> vertex_props;
    std::string current;
    std::string face_count_type, face_index_type;
    Mesh m;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt != "binary_little_endian") throw io_error(path, "unsupported PLY format '" + fmt + "'");
        } else if (word == "comment") {
            std::string tag, key;
            ss >> tag >> key;
            if (tag == "cortexflow" && key == "level") ss >> m.level;
        } else if (word == "element") {
            ss >> current;
            std::size_t n = 0;
            ss >> n;
            if (current == "vertex") n_vertices = n;
            else if (current == "face") n_faces = n;
            else throw io_error(path, "unsupported PLY element '" + current + "'");
        } else if (word == "property") {
            std::string type;
            ss >> type;
            if (current == "vertex") {
                std::string name;
                ss >> name;
                if (type != "float" && type != "float32") throw io_error(path, "vertex property must be float");
                vertex_props.push_back(name);
            } else if (current == "face") {
                if (type != "list") throw io_error(path, "face property must be a list");
                ss >> face_count_type >> face_index_type;
            }
        } else if (word == "end_header") {
            break;
        }
    }
    if (vertex_props.size() < 3 || vertex_props[0] != "x" || vertex_props[1] != "y" || vertex_props[2] != "z") {
        throw io_error(path, "vertex properties must start with x y z");
    }
    if (n_faces > 0 && !((face_count_type == "uchar" || face_count_type == "uint8") &&
                         (face_index_type == "int" || face_index_type == "int32" || face_index_type == "uint" ||
                          face_index_type == "uint32"))) {
        throw io_error(path, "face list must be uchar count + int32 indices");
    }

    const std::size_t stride = vertex_props.size();
    std::vector<float> vbuf(n_vertices * stride);
    in.read(reinterpret_cast<char*>(vbuf.data()), static_cast<std::streamsize>(vbuf.size() * sizeof(float)));
    if (!in) throw io_error(path, "truncated vertex data");
    m.vertices.resize(n_vertices);
    for (std::size_t i = 0; i < n_vertices; ++i) {
        m.vertices[i] = Vec3(vbuf[i * stride], vbuf[i * stride + 1], vbuf[i * stride + 2]);
    }
    m.faces.resize(n_faces);
    for (std::size_t i = 0; i < n_faces; ++i) {
        std::uint8_t count = 0;
        in.read(reinterpret_cast<char*>(&count), 1);
        if (!in) throw io_error(path, "truncated face data");
        if (count != 3) throw io_error(path, "face " + std::to_string(i) + " is not a triangle");
        in.read(reinterpret_cast<char*>(m.faces[i].data()), sizeof(std::int32_t) * 3);
        if (!in) throw io_error(path, "truncated face data");
    }
    return m;
}

void write_off(const Mesh& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error(path, "cannot open for writing");
    out.precision(17);
    out << "OFF\n" << m.vertices.size() << ' ' << m.faces.size() << " 0\n";
    for (const auto& v : m.vertices) out << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
    for (const auto& f : m.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    if (!out) throw io_error(path, "write failed");
}

Mesh read_off(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error(path, "cannot open for reading");
    std::string magic;
    in >> magic;
    if (magic != "OFF") throw io_error(path, "not an OFF file");
    std::size_t nv = 0, nf = 0, ne = 0;
    in >> nv >> nf >> ne;
    if (!in) throw io_error(path, "bad OFF header");
    Mesh m;
    m.vertices.resize(nv);
    for (auto& v : m.vertices) in >> v[0] >> v[1] >> v[2];
    m.faces.resize(nf);
    for (std::size_t i = 0; i < nf; ++i) {
        int count = 0;
        in >> count;
        if (count != 3) throw io_error(path, "face " + std::to_string(i) + " is not a triangle");
        in >> m.faces[i][0] >> m.faces[i][1] >> m.faces[i][2];
    }
    if (!in) throw io_error(path, "truncated OFF data");
    return m;
}

Mesh read_mesh(const std::filesystem::path& path) {
    const auto ext = lowercase_extension(path);
    if (ext == ".ply") return read_ply(path);
    if (ext == ".off") return read_off(path);
    throw io_error(path, "unknown mesh extension '" + ext + "'");
}

void write_mesh(const Mesh& m, const std::filesystem::path& path) {
    const auto ext = lowercase_extension(path);
    if (ext == ".ply") return write_ply(m, path);
    if (ext == ".off") return write_off(m, path);
    throw io_error(path, "unknown mesh extension '" + ext + "'");
}

}  // namespace cortexflow

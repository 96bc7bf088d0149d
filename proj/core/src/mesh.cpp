#include "cortexflow/mesh.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace cortexflow {

namespace {

std::uint64_t directed_key(std::int32_t a, std::int32_t b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

std::vector<std::uint64_t> sorted_directed_edges(const Mesh& m) {
    std::vector<std::uint64_t> keys;
    keys.reserve(m.faces.size() * 3);
    for (const auto& f : m.faces) {
        for (int k = 0; k < 3; ++k) keys.push_back(directed_key(f[k], f[(k + 1) % 3]));
    }
    std::sort(keys.begin(), keys.end());
    return keys;
}

}  // namespace

std::vector<EdgeKey> unique_edges(const Mesh& m) {
    std::vector<std::uint64_t> keys;
    keys.reserve(m.faces.size() * 3);
    for (const auto& f : m.faces) {
        for (int k = 0; k < 3; ++k) {
            auto a = f[k], b = f[(k + 1) % 3];
            if (a > b) std::swap(a, b);
            keys.push_back(directed_key(a, b));
        }
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    std::vector<EdgeKey> edges(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        edges[i] = {static_cast<std::int32_t>(keys[i] >> 32),
                    static_cast<std::int32_t>(keys[i] & 0xffffffffu)};
    }
    return edges;
}

std::vector<std::array<std::int32_t, 2>> edge_face_pairs(const Mesh& m) {
    std::unordered_map<std::uint64_t, std::int32_t> owner;
    owner.reserve(m.faces.size() * 3);
    for (std::size_t fi = 0; fi < m.faces.size(); ++fi) {
        const auto& f = m.faces[fi];
        for (int k = 0; k < 3; ++k) owner[directed_key(f[k], f[(k + 1) % 3])] = static_cast<std::int32_t>(fi);
    }
    std::vector<std::array<std::int32_t, 2>> pairs;
    for (const auto& e : unique_edges(m)) {
        auto it_ab = owner.find(directed_key(e[0], e[1]));
        auto it_ba = owner.find(directed_key(e[1], e[0]));
        if (it_ab == owner.end() || it_ba == owner.end()) continue;  // boundary edge
        pairs.push_back({it_ab->second, it_ba->second});
    }
    return pairs;
}

VertexAdjacency vertex_adjacency(const Mesh& m) {
    const auto edges = unique_edges(m);
    const std::size_t n = m.vertices.size();
    VertexAdjacency adj;
    adj.offsets.assign(n + 1, 0);
    for (const auto& e : edges) {
        ++adj.offsets[e[0] + 1];
        ++adj.offsets[e[1] + 1];
    }
    for (std::size_t i = 0; i < n; ++i) adj.offsets[i + 1] += adj.offsets[i];
    adj.neighbors.resize(adj.offsets[n]);
    std::vector<std::int32_t> fill(adj.offsets.begin(), adj.offsets.end() - 1);
    for (const auto& e : edges) {
        adj.neighbors[fill[e[0]]++] = e[1];
        adj.neighbors[fill[e[1]]++] = e[0];
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::sort(adj.neighbors.begin() + adj.offsets[i], adj.neighbors.begin() + adj.offsets[i + 1]);
    }
    return adj;
}

int euler_characteristic(const Mesh& m) {
    return static_cast<int>(m.vertices.size()) - static_cast<int>(unique_edges(m).size()) +
           static_cast<int>(m.faces.size());
}

void validate_closed_manifold(const Mesh& m) {
    const auto n = static_cast<std::int32_t>(m.vertices.size());
    for (std::size_t fi = 0; fi < m.faces.size(); ++fi) {
        const auto& f = m.faces[fi];
        for (auto v : f) {
            if (v < 0 || v >= n) {
                throw std::invalid_argument("face " + std::to_string(fi) + " has out-of-range vertex index " +
                                            std::to_string(v));
            }
        }
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
            throw std::invalid_argument("face " + std::to_string(fi) + " is degenerate (repeated vertex)");
        }
    }
    const auto keys = sorted_directed_edges(m);
    for (std::size_t i = 1; i < keys.size(); ++i) {
        if (keys[i] == keys[i - 1]) {
            throw std::invalid_argument("non-manifold or inconsistently wound edge (" +
                                        std::to_string(keys[i] >> 32) + "," +
                                        std::to_string(keys[i] & 0xffffffffu) + ")");
        }
    }
    for (auto k : keys) {
        auto a = static_cast<std::int32_t>(k >> 32);
        auto b = static_cast<std::int32_t>(k & 0xffffffffu);
        if (!std::binary_search(keys.begin(), keys.end(), directed_key(b, a))) {
            throw std::invalid_argument("open boundary edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
        }
    }
}

void validate_closed_genus0(const Mesh& m) {
    validate_closed_manifold(m);
    const int chi = euler_characteristic(m);
    if (chi != 2) throw std::invalid_argument("Euler characteristic is " + std::to_string(chi) + ", expected 2");
}

bool is_closed_genus0(const Mesh& m) {
    try {
        validate_closed_genus0(m);
        return true;
    } catch (const std::invalid_argument&) {
        return false;
    }
}

namespace {

struct HullFace {
    std::int32_t a, b, c;
    Vec3 normal;
    double offset;  // normal . a
};

HullFace make_hull_face(const std::vector<Vec3>& p, std::int32_t a, std::int32_t b, std::int32_t c) {
    Vec3 n = (p[b] - p[a]).cross(p[c] - p[a]);
    const double len = n.norm();
    if (len > 0) n /= len;
    return {a, b, c, n, n.dot(p[a])};
}

// Incremental convex hull; returns outward-oriented triangles over all input points.
std::vector<Face> convex_hull(const std::vector<Vec3>& p) {
    const auto n = static_cast<std::int32_t>(p.size());
    constexpr double eps = 1e-12;

    std::int32_t i0 = 0, i1 = -1, i2 = -1, i3 = -1;
    double best = 0;
    for (std::int32_t i = 1; i < n; ++i) {
        double d = (p[i] - p[i0]).squaredNorm();
        if (d > best) best = d, i1 = i;
    }
    if (i1 < 0 || best < eps) throw std::runtime_error("convex hull: all points coincide");
    best = 0;
    for (std::int32_t i = 0; i < n; ++i) {
        double d = (p[i1] - p[i0]).cross(p[i] - p[i0]).squaredNorm();
        if (d > best) best = d, i2 = i;
    }
    if (i2 < 0 || best < eps) throw std::runtime_error("convex hull: points are collinear");
    const Vec3 plane_n = (p[i1] - p[i0]).cross(p[i2] - p[i0]).normalized();
    best = 0;
    for (std::int32_t i = 0; i < n; ++i) {
        double d = std::abs(plane_n.dot(p[i] - p[i0]));
        if (d > best) best = d, i3 = i;
    }
    if (i3 < 0 || best < eps) throw std::runtime_error("convex hull: points are coplanar");

    std::vector<HullFace> faces;
    const Vec3 centroid = (p[i0] + p[i1] + p[i2] + p[i3]) / 4.0;
    auto add_oriented = [&](std::int32_t a, std::int32_t b, std::int32_t c) {
        HullFace f = make_hull_face(p, a, b, c);
        if (f.normal.dot(centroid) - f.offset > 0) f = make_hull_face(p, a, c, b);
        faces.push_back(f);
    };
    add_oriented(i0, i1, i2);
    add_oriented(i0, i1, i3);
    add_oriented(i0, i2, i3);
    add_oriented(i1, i2, i3);

    std::vector<char> used(n, 0);
    used[i0] = used[i1] = used[i2] = used[i3] = 1;
    for (std::int32_t pi = 0; pi < n; ++pi) {
        if (used[pi]) continue;
        std::vector<char> visible(faces.size(), 0);
        bool any = false;
        for (std::size_t fi = 0; fi < faces.size(); ++fi) {
            if (faces[fi].normal.dot(p[pi]) - faces[fi].offset > eps) visible[fi] = 1, any = true;
        }
        if (!any) continue;  // interior point
        used[pi] = 1;
        std::vector<std::uint64_t> vis_edges;
        for (std::size_t fi = 0; fi < faces.size(); ++fi) {
            if (!visible[fi]) continue;
            const auto& f = faces[fi];
            vis_edges.push_back(directed_key(f.a, f.b));
            vis_edges.push_back(directed_key(f.b, f.c));
            vis_edges.push_back(directed_key(f.c, f.a));
        }
        std::sort(vis_edges.begin(), vis_edges.end());
        std::vector<HullFace> next;
        next.reserve(faces.size() + 8);
        for (std::size_t fi = 0; fi < faces.size(); ++fi) {
            if (!visible[fi]) next.push_back(faces[fi]);
        }
        for (auto k : vis_edges) {
            auto a = static_cast<std::int32_t>(k >> 32);
            auto b = static_cast<std::int32_t>(k & 0xffffffffu);
            if (!std::binary_search(vis_edges.begin(), vis_edges.end(), directed_key(b, a))) {
                next.push_back(make_hull_face(p, a, b, pi));
            }
        }
        faces = std::move(next);
    }
    for (std::int32_t i = 0; i < n; ++i) {
        if (!used[i]) throw std::runtime_error("convex hull: point " + std::to_string(i) + " is not extreme");
    }
    std::vector<Face> out;
    out.reserve(faces.size());
    for (const auto& f : faces) out.push_back({f.a, f.b, f.c});
    return out;
}

}  // namespace

Mesh build_template(int n_vertices) {
    if (n_vertices < 12) throw std::invalid_argument("build_template: need at least 12 vertices");
    const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
    Mesh m;
    m.vertices.reserve(n_vertices);
    // Offset lattice keeps the polar rings close to regular.
    const double offset = 1.33;
    for (int i = 0; i < n_vertices; ++i) {
        const double z = 1.0 - 2.0 * (i + offset) / (n_vertices - 1 + 2 * offset);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden_angle * i;
        m.vertices.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    }
    m.faces = convex_hull(m.vertices);
    m.level = 0;
    validate_closed_genus0(m);
    return m;
}

Subdivision subdivide_with_map(const Mesh& m) {
    validate_closed_genus0(m);
    Subdivision out;
    out.edge_parents = unique_edges(m);
    const auto n = static_cast<std::int32_t>(m.vertices.size());
    std::unordered_map<std::uint64_t, std::int32_t> index;
    index.reserve(out.edge_parents.size() * 2);
    out.mesh.vertices = m.vertices;
    out.mesh.vertices.reserve(m.vertices.size() + out.edge_parents.size());
    for (std::size_t e = 0; e < out.edge_parents.size(); ++e) {
        const auto [a, b] = out.edge_parents[e];
        index[directed_key(a, b)] = n + static_cast<std::int32_t>(e);
        out.mesh.vertices.push_back(0.5 * (m.vertices[a] + m.vertices[b]));
    }
    auto mid = [&](std::int32_t a, std::int32_t b) {
        if (a > b) std::swap(a, b);
        return index.at(directed_key(a, b));
    };
    out.mesh.faces.reserve(m.faces.size() * 4);
    for (const auto& f : m.faces) {
        const auto ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
        out.mesh.faces.push_back({f[0], ab, ca});
        out.mesh.faces.push_back({f[1], bc, ab});
        out.mesh.faces.push_back({f[2], ca, bc});
        out.mesh.faces.push_back({ab, bc, ca});
    }
    out.mesh.level = m.level + 1;
    return out;
}

Mesh subdivide(const Mesh& m) { return subdivide_with_map(m).mesh; }

std::vector<double> face_areas(const Mesh& m) {
    std::vector<double> areas(m.faces.size());
    for (std::size_t i = 0; i < m.faces.size(); ++i) {
        const auto& f = m.faces[i];
        areas[i] = 0.5 * (m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]).norm();
    }
    return areas;
}

std::vector<Vec3> face_normals(const Mesh& m) {
    std::vector<Vec3> normals(m.faces.size());
    for (std::size_t i = 0; i < m.faces.size(); ++i) {
        const auto& f = m.faces[i];
        Vec3 n = (m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]);
        const double len = n.norm();
        if (!(len > 0)) throw std::invalid_argument("face_normals: face " + std::to_string(i) + " has zero area");
        normals[i] = n / len;
    }
    return normals;
}

std::vector<Vec3> vertex_normals(const Mesh& m) {
    std::vector<Vec3> acc(m.vertices.size(), Vec3::Zero());
    for (const auto& f : m.faces) {
        // Cross product magnitude is twice the area: area weighting for free.
        const Vec3 n = (m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]);
        for (auto v : f) acc[v] += n;
    }
    for (auto& n : acc) {
        const double len = n.norm();
        if (len > 0) n /= len;
    }
    return acc;
}

namespace {

SurfaceSamples sample_from_weights(const Mesh& m, const std::vector<double>& weights, std::size_t count,
                                   std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("sample_surface: count must be >= 1");
    std::vector<double> cumulative(weights.size());
    double total = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        total += weights[i];
        cumulative[i] = total;
    }
    if (!(total > 0)) throw std::invalid_argument("sample_surface: mesh has no area to sample");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SurfaceSamples s;
    s.points.reserve(count);
    s.face_ids.reserve(count);
    s.barycentric.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double u = unit(rng) * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        auto fi = static_cast<std::int32_t>(std::min<std::ptrdiff_t>(it - cumulative.begin(),
                                                                     static_cast<std::ptrdiff_t>(weights.size()) - 1));
        while (weights[fi] <= 0 && fi > 0) --fi;
        const double r1 = unit(rng), r2 = unit(rng);
        const double sr = std::sqrt(r1);
        const Vec3 bary(1.0 - sr, sr * (1.0 - r2), sr * r2);
        const auto& f = m.faces[fi];
        s.points.push_back(bary[0] * m.vertices[f[0]] + bary[1] * m.vertices[f[1]] + bary[2] * m.vertices[f[2]]);
        s.face_ids.push_back(fi);
        s.barycentric.push_back(bary);
    }
    return s;
}

}  // namespace

SurfaceSamples sample_surface(const Mesh& m, std::size_t count, std::uint64_t seed) {
    return sample_from_weights(m, face_areas(m), count, seed);
}

SurfaceSamples sample_surface_masked(const Mesh& m, std::span<const bool> face_mask, std::size_t count,
                                     std::uint64_t seed) {
    if (face_mask.size() != m.faces.size()) throw std::invalid_argument("sample_surface_masked: mask size mismatch");
    auto w = face_areas(m);
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!face_mask[i]) w[i] = 0;
    }
    return sample_from_weights(m, w, count, seed);
}

double mean_edge_length(const Mesh& m) {
    const auto edges = unique_edges(m);
    if (edges.empty()) return 0;
    double sum = 0;
    for (const auto& e : edges) sum += (m.vertices[e[0]] - m.vertices[e[1]]).norm();
    return sum / static_cast<double>(edges.size());
}

double max_edge_length(const Mesh& m) {
    double best = 0;
    for (const auto& e : unique_edges(m)) best = std::max(best, (m.vertices[e[0]] - m.vertices[e[1]]).norm());
    return best;
}

Mesh scaled(const Mesh& m, double s) {
    Mesh out = m;
    for (auto& v : out.vertices) v *= s;
    return out;
}

Mesh translated(const Mesh& m, const Vec3& t) {
    Mesh out = m;
    for (auto& v : out.vertices) v += t;
    return out;
}

}  // namespace cortexflow

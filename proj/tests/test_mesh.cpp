#include "cortexflow/intersect.hpp"
#include "cortexflow/mesh.hpp"
#include "cortexflow/mesh_io.hpp"
#include "cortexflow/spatial.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

using namespace cortexflow;

namespace {

Mesh tetrahedron() {
    return {{Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)}, {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}}};
}

double all_pairs_sif(const Mesh& m) {
    std::vector<bool> hit(m.faces.size(), false);
    for (std::size_t a = 0; a < m.faces.size(); ++a)
        for (std::size_t b = a + 1; b < m.faces.size(); ++b) {
            if (faces_share_vertex(m.faces[a], m.faces[b])) continue;
            const auto& fa = m.faces[a];
            const auto& fb = m.faces[b];
            if (triangles_intersect(m.vertices[fa[0]], m.vertices[fa[1]], m.vertices[fa[2]], m.vertices[fb[0]],
                                    m.vertices[fb[1]], m.vertices[fb[2]]))
                hit[a] = hit[b] = true;
        }
    return static_cast<double>(std::count(hit.begin(), hit.end(), true)) / static_cast<double>(m.faces.size());
}

}  // namespace

TEST_CASE("template counts follow the genus-0 identities") {
    for (auto [v, e, f] : {std::array{62, 180, 120}, std::array{12, 30, 20}, std::array{17, 45, 30}}) {
        const Mesh m = build_template(v);
        CHECK(m.vertices.size() == static_cast<std::size_t>(v));
        CHECK(unique_edges(m).size() == static_cast<std::size_t>(e));
        CHECK(m.faces.size() == static_cast<std::size_t>(f));
        CHECK(is_closed_genus0(m));
        for (const auto& p : m.vertices) CHECK(p.norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS(build_template(11));
}

TEST_CASE("subdivision keeps the vertex prefix and places midpoints") {
    const Mesh m = build_template(62);
    const Subdivision s = subdivide_with_map(m);
    CHECK(s.mesh.vertices.size() == 242);
    CHECK(s.mesh.level == 1);
    for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK(s.mesh.vertices[i] == m.vertices[i]);
    for (std::size_t e = 0; e < s.edge_parents.size(); ++e) {
        const auto [a, b] = s.edge_parents[e];
        CHECK((s.mesh.vertices[m.vertices.size() + e] - 0.5 * (m.vertices[a] + m.vertices[b])).norm() < 1e-15);
    }
    CHECK(euler_characteristic(s.mesh) == 2);
    validate_closed_genus0(s.mesh);

    const Mesh t = subdivide(tetrahedron());
    CHECK(t.vertices.size() == 10);
    CHECK(t.faces.size() == 16);

    Mesh x = m;
    std::vector<std::size_t> counts;
    for (int i = 0; i < 4; ++i) {
        const std::size_t v = x.vertices.size();
        x = subdivide(x);
        CHECK(x.vertices.size() == 4 * v - 6);
    }
    CHECK(x.vertices.size() == 15362);
}

TEST_CASE("subdivision rejects non-manifold input") {
    Mesh open = tetrahedron();
    open.faces.pop_back();
    CHECK_THROWS_AS(subdivide(open), std::invalid_argument);
}

TEST_CASE("face normals") {
    const Mesh tri{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {{0, 1, 2}}};
    const auto n = face_normals(tri);
    CHECK((n[0] - Vec3(0, 0, 1)).norm() < 1e-15);

    const Mesh m = subdivide(build_template(62));
    const auto normals = face_normals(m);
    for (std::size_t f = 0; f < m.faces.size(); ++f) {
        const Vec3 c = (m.vertices[m.faces[f][0]] + m.vertices[m.faces[f][1]] + m.vertices[m.faces[f][2]]) / 3.0;
        CHECK(std::abs(normals[f].norm() - 1.0) < 1e-12);
        CHECK(normals[f].dot(c) > 0);
    }

    const Mesh flat{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)}, {{0, 1, 2}}};
    try {
        face_normals(flat);
        FAIL("expected an exception");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find('0') != std::string::npos);
    }
}

TEST_CASE("surface sampling is area-proportional and seeded") {
    const Mesh tri{{Vec3(0, 0, 0), Vec3(std::sqrt(2.0), 0, 0), Vec3(0, std::sqrt(2.0), 0)}, {{0, 1, 2}}};
    const auto s = sample_surface(tri, 3, 1);
    REQUIRE(s.size() == 3);
    for (const auto& b : s.barycentric) {
        CHECK(b.minCoeff() >= 0);
        CHECK(b.sum() == doctest::Approx(1.0));
    }

    // Areas 1 and 3.
    const Mesh two{{Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), Vec3(6, 0, 1), Vec3(0, 1, 1)},
                   {{0, 1, 2}, {3, 4, 5}}};
    const auto many = sample_surface(two, 40000, 7);
    const auto second = std::count(many.face_ids.begin(), many.face_ids.end(), 1);
    CHECK(std::abs(second - 30000) <= 500);

    const auto again = sample_surface(two, 40000, 7);
    CHECK(again.points == many.points);
}

TEST_CASE("kd-tree agrees with a linear scan") {
    KdTree single({Vec3(0, 0, 0)});
    CHECK(single.nearest(Vec3(1, 1, 1)).squared_distance == 3.0);
    CHECK_THROWS_AS(KdTree().nearest(Vec3::Zero()), std::logic_error);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-5, 5);
    std::vector<Vec3> pts(500);
    for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
    const KdTree tree(pts);
    CHECK(tree.nearest(pts[17]).squared_distance == 0.0);
    for (int q = 0; q < 100; ++q) {
        const Vec3 x(u(rng), u(rng), u(rng));
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : pts) best = std::min(best, (p - x).squaredNorm());
        CHECK(tree.nearest(x).squared_distance == best);
    }
}

TEST_CASE("triangle BVH closest point matches brute force") {
    const Mesh m = subdivide(build_template(62));
    const TriangleBvh bvh(m);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int q = 0; q < 50; ++q) {
        const Vec3 x(u(rng), u(rng), u(rng));
        double best = std::numeric_limits<double>::infinity();
        for (const auto& f : m.faces)
            best = std::min(best, (closest_point_on_triangle(x, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]).point - x).squaredNorm());
        CHECK(bvh.closest_point(x).squared_distance == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("self-intersection fraction") {
    CHECK(count_self_intersecting_faces(tetrahedron()) == 0.0);
    Mesh m = build_template(62);
    for (int i = 0; i < 3; ++i) m = subdivide(m);
    CHECK(count_self_intersecting_faces(m) == 0.0);

    Mesh bad = build_template(62);
    bad.vertices[5] = -bad.vertices[5];
    const double frac = count_self_intersecting_faces(bad);
    CHECK(frac > 0);
    CHECK(frac == all_pairs_sif(bad));

    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 0.08);
    Mesh s = subdivide(build_template(62));
    for (auto& v : s.vertices) v += Vec3(n(rng), n(rng), n(rng));
    CHECK(count_self_intersecting_faces(s) == all_pairs_sif(s));
}

TEST_CASE("PLY and OFF round trips") {
    const auto dir = std::filesystem::temp_directory_path() / "cortexflow_mesh_io";
    std::filesystem::create_directories(dir);
    Mesh m = subdivide(build_template(62));
    for (auto& v : m.vertices)
        for (int a = 0; a < 3; ++a) v[a] = static_cast<float>(v[a]);
    write_ply(m, dir / "m.ply");
    const Mesh r = read_ply(dir / "m.ply");
    CHECK(r.vertices == m.vertices);
    CHECK(r.faces == m.faces);
    write_off(m, dir / "m.off");
    const Mesh o = read_mesh(dir / "m.off");
    CHECK(o.faces == m.faces);
    for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK((o.vertices[i] - m.vertices[i]).norm() < 1e-6);
    CHECK_THROWS(read_mesh(dir / "missing.ply"));
}

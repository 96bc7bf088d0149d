#include "cortexflow/intersect.hpp"

#include "cortexflow/spatial.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>

namespace cortexflow {

namespace {

using Vec2 = Eigen::Vector2d;

double orient2d(const Vec2& a, const Vec2& b, const Vec2& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

bool on_segment(const Vec2& a, const Vec2& b, const Vec2& p) {
    return std::min(a.x(), b.x()) <= p.x() && p.x() <= std::max(a.x(), b.x()) &&
           std::min(a.y(), b.y()) <= p.y() && p.y() <= std::max(a.y(), b.y());
}

bool segments_intersect_2d(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2) {
    const double d1 = orient2d(q1, q2, p1), d2 = orient2d(q1, q2, p2);
    const double d3 = orient2d(p1, p2, q1), d4 = orient2d(p1, p2, q2);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
    if (d1 == 0 && on_segment(q1, q2, p1)) return true;
    if (d2 == 0 && on_segment(q1, q2, p2)) return true;
    if (d3 == 0 && on_segment(p1, p2, q1)) return true;
    if (d4 == 0 && on_segment(p1, p2, q2)) return true;
    return false;
}

bool point_in_triangle_2d(const Vec2& p, const std::array<Vec2, 3>& t) {
    const double s0 = orient2d(t[0], t[1], p), s1 = orient2d(t[1], t[2], p), s2 = orient2d(t[2], t[0], p);
    const bool has_neg = s0 < 0 || s1 < 0 || s2 < 0;
    const bool has_pos = s0 > 0 || s1 > 0 || s2 > 0;
    return !(has_neg && has_pos);
}

bool coplanar_intersect(const std::array<Vec3, 3>& a, const std::array<Vec3, 3>& b, const Vec3& normal) {
    int drop = 0;
    if (std::abs(normal[1]) > std::abs(normal[drop])) drop = 1;
    if (std::abs(normal[2]) > std::abs(normal[drop])) drop = 2;
    const int u = (drop + 1) % 3, v = (drop + 2) % 3;
    std::array<Vec2, 3> a2, b2;
    for (int i = 0; i < 3; ++i) {
        a2[i] = Vec2(a[i][u], a[i][v]);
        b2[i] = Vec2(b[i][u], b[i][v]);
    }
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            if (segments_intersect_2d(a2[i], a2[(i + 1) % 3], b2[j], b2[(j + 1) % 3])) return true;
        }
    }
    return point_in_triangle_2d(a2[0], b2) || point_in_triangle_2d(b2[0], a2);
}

// Signed distances of `t` to the plane through `p` with unit normal `n`, snapped to zero within epsilon.
std::array<double, 3> plane_distances(const std::array<Vec3, 3>& t, const Vec3& n, const Vec3& p) {
    std::array<double, 3> d{};
    for (int i = 0; i < 3; ++i) {
        d[i] = n.dot(t[i] - p);
        if (std::abs(d[i]) < kCoplanarEpsilon) d[i] = 0;
    }
    return d;
}

bool same_side(const std::array<double, 3>& d) {
    return (d[0] > 0 && d[1] > 0 && d[2] > 0) || (d[0] < 0 && d[1] < 0 && d[2] < 0);
}

// Interval covered by the part of triangle `t` lying on the other plane, projected onto `dir`.
std::array<double, 2> plane_section_interval(const std::array<Vec3, 3>& t, const std::array<double, 3>& d,
                                             const Vec3& dir) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    auto push = [&](const Vec3& p) {
        const double s = dir.dot(p);
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    };
    for (int i = 0; i < 3; ++i) {
        if (d[i] == 0) push(t[i]);
        const int j = (i + 1) % 3;
        if ((d[i] > 0 && d[j] < 0) || (d[i] < 0 && d[j] > 0)) {
            const double s = d[i] / (d[i] - d[j]);
            push(t[i] + s * (t[j] - t[i]));
        }
    }
    return {lo, hi};
}

}  // namespace

bool triangles_intersect(const Vec3& a0, const Vec3& a1, const Vec3& a2, const Vec3& b0, const Vec3& b1,
                         const Vec3& b2) {
    const std::array<Vec3, 3> a{a0, a1, a2}, b{b0, b1, b2};
    Vec3 nb = (b1 - b0).cross(b2 - b0);
    Vec3 na = (a1 - a0).cross(a2 - a0);
    const double lb = nb.norm(), la = na.norm();
    if (!(lb > 0) || !(la > 0)) return false;  // degenerate triangles are never reported
    nb /= lb;
    na /= la;

    const auto da = plane_distances(a, nb, b0);
    if (same_side(da)) return false;
    const auto db = plane_distances(b, na, a0);
    if (same_side(db)) return false;

    const bool coplanar = da[0] == 0 && da[1] == 0 && da[2] == 0;
    const Vec3 dir = na.cross(nb);
    // Nearly parallel planes that still straddle each other are treated as coplanar.
    if (coplanar || dir.squaredNorm() < 1e-24) return coplanar_intersect(a, b, nb);
    const auto ia = plane_section_interval(a, da, dir);
    const auto ib = plane_section_interval(b, db, dir);
    return std::max(ia[0], ib[0]) <= std::min(ia[1], ib[1]);
}

bool faces_share_vertex(const Face& a, const Face& b) {
    for (auto u : a) {
        for (auto v : b) {
            if (u == v) return true;
        }
    }
    return false;
}

std::vector<bool> self_intersecting_faces(const Mesh& m) {
    std::vector<bool> flagged(m.faces.size(), false);
    if (m.faces.empty()) return flagged;
    const TriangleBvh bvh(m);
    const auto nf = static_cast<std::int32_t>(m.faces.size());
    for (std::int32_t i = 0; i < nf; ++i) {
        const Face& fi = m.faces[i];
        Aabb box = bvh.face_box(i);
        box.lo.array() -= kCoplanarEpsilon;
        box.hi.array() += kCoplanarEpsilon;
        bvh.query_overlaps(box, [&](std::int32_t j) {
            if (j <= i) return;
            const Face& fj = m.faces[j];
            if (faces_share_vertex(fi, fj)) return;
            if (flagged[i] && flagged[j]) return;
            if (triangles_intersect(m.vertices[fi[0]], m.vertices[fi[1]], m.vertices[fi[2]], m.vertices[fj[0]],
                                    m.vertices[fj[1]], m.vertices[fj[2]])) {
                flagged[i] = true;
                flagged[j] = true;
            }
        });
    }
    return flagged;
}

double count_self_intersecting_faces(const Mesh& m) {
    if (m.faces.empty()) return 0.0;
    const auto flags = self_intersecting_faces(m);
    const auto n = std::count(flags.begin(), flags.end(), true);
    return static_cast<double>(n) / static_cast<double>(m.faces.size());
}

}  // namespace cortexflow

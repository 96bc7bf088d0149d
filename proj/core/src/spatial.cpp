#include "cortexflow/spatial.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace cortexflow {

namespace {
constexpr std::int32_t kLeafSize = 8;

int widest_axis(const Aabb& b) {
    const Vec3 ext = b.hi - b.lo;
    int axis = 0;
    if (ext[1] > ext[axis]) axis = 1;
    if (ext[2] > ext[axis]) axis = 2;
    return axis;
}
}  // namespace

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!points_.empty()) {
        nodes_.reserve(2 * points_.size() / kLeafSize + 2);
        build(0, static_cast<std::int32_t>(points_.size()));
    }
}

std::int32_t KdTree::build(std::int32_t begin, std::int32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();
    Aabb box;
    for (auto i = begin; i < end; ++i) box.expand(points_[order_[i]]);
    nodes_[id].box = box;
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    if (end - begin <= kLeafSize) return id;

    const int axis = widest_axis(box);
    const auto mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::int32_t a, std::int32_t b) {
                         if (points_[a][axis] != points_[b][axis]) return points_[a][axis] < points_[b][axis];
                         return a < b;
                     });
    const auto left = build(begin, mid);
    const auto right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

void KdTree::search(std::int32_t node, const Vec3& q, NearestPoint& best) const {
    const Node& n = nodes_[node];
    if (n.left < 0) {
        for (auto i = n.begin; i < n.end; ++i) {
            const auto idx = order_[i];
            const double d = (points_[idx] - q).squaredNorm();
            if (d < best.squared_distance || (d == best.squared_distance && idx < best.index)) {
                best.squared_distance = d;
                best.index = idx;
            }
        }
        return;
    }
    const double dl = nodes_[n.left].box.squared_distance(q);
    const double dr = nodes_[n.right].box.squared_distance(q);
    const auto first = dl <= dr ? n.left : n.right;
    const auto second = dl <= dr ? n.right : n.left;
    const double d_first = std::min(dl, dr), d_second = std::max(dl, dr);
    if (d_first <= best.squared_distance) search(first, q, best);
    if (d_second <= best.squared_distance) search(second, q, best);
}

NearestPoint KdTree::nearest(const Vec3& query) const {
    if (points_.empty()) throw std::logic_error("KdTree::nearest: empty index");
    NearestPoint best;
    best.squared_distance = std::numeric_limits<double>::infinity();
    search(0, query, best);
    best.point = points_[best.index];
    return best;
}

// Ericson, Real-Time Collision Detection, 5.1.5.
TrianglePoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0) return {a, Vec3(1, 0, 0)};

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) return {b, Vec3(0, 1, 0)};

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        const double v = d1 / (d1 - d3);
        return {a + v * ab, Vec3(1 - v, v, 0)};
    }

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6) return {c, Vec3(0, 0, 1)};

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) {
        const double w = d2 / (d2 - d6);
        return {a + w * ac, Vec3(1 - w, 0, w)};
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return {b + w * (c - b), Vec3(0, 1 - w, w)};
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return {a + ab * v + ac * w, Vec3(1 - v - w, v, w)};
}

TriangleBvh::TriangleBvh(const Mesh& m) : mesh_(m) {
    const auto nf = static_cast<std::int32_t>(m.faces.size());
    faces_.resize(nf);
    std::iota(faces_.begin(), faces_.end(), 0);
    boxes_.resize(nf);
    centroids_.resize(nf);
    for (std::int32_t i = 0; i < nf; ++i) {
        for (auto v : m.faces[i]) boxes_[i].expand(m.vertices[v]);
        centroids_[i] = (m.vertices[m.faces[i][0]] + m.vertices[m.faces[i][1]] + m.vertices[m.faces[i][2]]) / 3.0;
    }
    if (nf > 0) {
        nodes_.reserve(2 * nf);
        build(0, nf);
    }
}

std::int32_t TriangleBvh::build(std::int32_t begin, std::int32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();
    Aabb box, cbox;
    for (auto i = begin; i < end; ++i) {
        box.expand(boxes_[faces_[i]]);
        cbox.expand(centroids_[faces_[i]]);
    }
    nodes_[id].box = box;
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    if (end - begin <= 4) return id;
    const int axis = widest_axis(cbox);
    const auto mid = begin + (end - begin) / 2;
    std::nth_element(faces_.begin() + begin, faces_.begin() + mid, faces_.begin() + end,
                     [&](std::int32_t a, std::int32_t b) {
                         if (centroids_[a][axis] != centroids_[b][axis]) return centroids_[a][axis] < centroids_[b][axis];
                         return a < b;
                     });
    const auto left = build(begin, mid);
    const auto right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

void TriangleBvh::closest(std::int32_t node, const Vec3& q, SurfacePoint& best) const {
    const Node& n = nodes_[node];
    if (n.left < 0) {
        for (auto i = n.begin; i < n.end; ++i) {
            const auto fi = faces_[i];
            const auto& f = mesh_.faces[fi];
            const auto tp = closest_point_on_triangle(q, mesh_.vertices[f[0]], mesh_.vertices[f[1]], mesh_.vertices[f[2]]);
            const double d = (tp.point - q).squaredNorm();
            if (d < best.squared_distance || (d == best.squared_distance && fi < best.face)) {
                best.squared_distance = d;
                best.face = fi;
                best.point = tp.point;
                best.barycentric = tp.barycentric;
            }
        }
        return;
    }
    const double dl = nodes_[n.left].box.squared_distance(q);
    const double dr = nodes_[n.right].box.squared_distance(q);
    const auto first = dl <= dr ? n.left : n.right;
    const auto second = dl <= dr ? n.right : n.left;
    if (std::min(dl, dr) <= best.squared_distance) closest(first, q, best);
    if (std::max(dl, dr) <= best.squared_distance) closest(second, q, best);
}

SurfacePoint TriangleBvh::closest_point(const Vec3& query) const {
    if (faces_.empty()) throw std::logic_error("TriangleBvh::closest_point: empty mesh");
    SurfacePoint best;
    best.squared_distance = std::numeric_limits<double>::infinity();
    closest(0, query, best);
    return best;
}

void TriangleBvh::query_overlaps(const Aabb& box, const std::function<void(std::int32_t)>& visit) const {
    if (nodes_.empty()) return;
    std::vector<std::int32_t> stack{0};
    while (!stack.empty()) {
        const auto id = stack.back();
        stack.pop_back();
        const Node& n = nodes_[id];
        if (!n.box.overlaps(box)) continue;
        if (n.left < 0) {
            for (auto i = n.begin; i < n.end; ++i) {
                if (boxes_[faces_[i]].overlaps(box)) visit(faces_[i]);
            }
        } else {
            stack.push_back(n.right);
            stack.push_back(n.left);
        }
    }
}

}  // namespace cortexflow

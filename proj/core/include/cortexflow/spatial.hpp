#pragma once

#include "cortexflow/mesh.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace cortexflow {

struct Aabb {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

    void expand(const Vec3& p) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    void expand(const Aabb& b) {
        lo = lo.cwiseMin(b.lo);
        hi = hi.cwiseMax(b.hi);
    }
    bool overlaps(const Aabb& b) const {
        return (lo.array() <= b.hi.array()).all() && (b.lo.array() <= hi.array()).all();
    }
    double squared_distance(const Vec3& p) const {
        const Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(Vec3::Zero());
        return d.squaredNorm();
    }
};

struct NearestPoint {
    std::int32_t index = -1;
    Vec3 point = Vec3::Zero();
    double squared_distance = 0;
};

/// Exact nearest-neighbour index over a fixed point set (kd-tree).
/// Immutable after construction; queries are safe from multiple threads.
class KdTree {
public:
    KdTree() = default;
    explicit KdTree(std::vector<Vec3> points);

    bool empty() const { return points_.empty(); }
    std::size_t size() const { return points_.size(); }
    const std::vector<Vec3>& points() const { return points_; }

    /// Throws std::logic_error on an empty index.
    NearestPoint nearest(const Vec3& query) const;

private:
    struct Node {
        Aabb box;
        std::int32_t begin = 0, end = 0;  // range into order_
        std::int32_t left = -1, right = -1;
    };
    std::int32_t build(std::int32_t begin, std::int32_t end);
    void search(std::int32_t node, const Vec3& q, NearestPoint& best) const;

    std::vector<Vec3> points_;
    std::vector<std::int32_t> order_;
    std::vector<Node> nodes_;
};

/// Closest point on triangle (a, b, c) to p, with barycentric coordinates of the result.
struct TrianglePoint {
    Vec3 point;
    Vec3 barycentric;
};
TrianglePoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct SurfacePoint {
    std::int32_t face = -1;
    Vec3 point = Vec3::Zero();
    Vec3 barycentric = Vec3::Zero();
    double squared_distance = 0;
};

/// Bounding-volume hierarchy over the faces of a mesh. Holds a copy of the geometry.
class TriangleBvh {
public:
    TriangleBvh() = default;
    explicit TriangleBvh(const Mesh& m);

    bool empty() const { return faces_.empty(); }
    const Mesh& mesh() const { return mesh_; }

    /// Exact closest surface point. Throws std::logic_error on an empty mesh.
    SurfacePoint closest_point(const Vec3& query) const;

    /// Calls `visit(face)` for every face whose box overlaps `box`.
    void query_overlaps(const Aabb& box, const std::function<void(std::int32_t)>& visit) const;

    const Aabb& face_box(std::int32_t f) const { return boxes_[f]; }

private:
    struct Node {
        Aabb box;
        std::int32_t begin = 0, end = 0;
        std::int32_t left = -1, right = -1;
    };
    std::int32_t build(std::int32_t begin, std::int32_t end);
    void closest(std::int32_t node, const Vec3& q, SurfacePoint& best) const;

    Mesh mesh_;
    std::vector<std::int32_t> faces_;
    std::vector<Aabb> boxes_;
    std::vector<Vec3> centroids_;
    std::vector<Node> nodes_;
};

}  // namespace cortexflow

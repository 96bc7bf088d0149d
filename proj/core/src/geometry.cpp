#include "cortexflow/geometry.hpp"

#include "cortexflow/spatial.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cortexflow {

namespace {

double cot_at(const Vec3& corner, const Vec3& a, const Vec3& b) {
    const Vec3 u = a - corner, v = b - corner;
    const double s = u.cross(v).norm();
    if (!(s > 0)) throw std::invalid_argument("mean_curvature: zero-area triangle");
    return u.dot(v) / s;
}

}  // namespace

std::vector<double> mixed_voronoi_areas(const Mesh& m) {
    std::vector<double> area(m.vertices.size(), 0.0);
    for (const auto& f : m.faces) {
        const Vec3& p0 = m.vertices[f[0]];
        const Vec3& p1 = m.vertices[f[1]];
        const Vec3& p2 = m.vertices[f[2]];
        const double tri = 0.5 * (p1 - p0).cross(p2 - p0).norm();
        const std::array<const Vec3*, 3> p{&p0, &p1, &p2};
        std::array<double, 3> dots{};
        for (int c = 0; c < 3; ++c) dots[c] = (*p[(c + 1) % 3] - *p[c]).dot(*p[(c + 2) % 3] - *p[c]);
        const bool obtuse = dots[0] < 0 || dots[1] < 0 || dots[2] < 0;
        for (int c = 0; c < 3; ++c) {
            if (obtuse) {
                area[f[c]] += dots[c] < 0 ? tri / 2 : tri / 4;
            } else {
                const int a = (c + 1) % 3, b = (c + 2) % 3;
                // Voronoi region of corner c: edges c-a and c-b weighted by cot of the opposite angles.
                const double cot_b = cot_at(*p[b], *p[c], *p[a]);
                const double cot_a = cot_at(*p[a], *p[c], *p[b]);
                area[f[c]] += ((*p[a] - *p[c]).squaredNorm() * cot_b + (*p[b] - *p[c]).squaredNorm() * cot_a) / 8.0;
            }
        }
    }
    return area;
}

std::vector<double> mean_curvature(const Mesh& m) {
    validate_closed_manifold(m);
    const auto areas = mixed_voronoi_areas(m);
    std::vector<Vec3> lap(m.vertices.size(), Vec3::Zero());
    for (const auto& f : m.faces) {
        for (int c = 0; c < 3; ++c) {
            const auto i = f[c], j = f[(c + 1) % 3], k = f[(c + 2) % 3];
            const double w = cot_at(m.vertices[i], m.vertices[j], m.vertices[k]);  // opposite edge j-k
            const Vec3 d = m.vertices[k] - m.vertices[j];
            lap[j] += w * d;
            lap[k] -= w * d;
        }
    }
    const auto normals = vertex_normals(m);
    std::vector<double> h(m.vertices.size());
    for (std::size_t v = 0; v < h.size(); ++v) {
        if (!(areas[v] > 0)) {
            throw std::invalid_argument("mean_curvature: vertex " + std::to_string(v) + " has zero mixed area");
        }
        const Vec3 k = lap[v] / (2.0 * areas[v]);
        const double mag = 0.5 * k.norm();
        h[v] = k.dot(normals[v]) > 0 ? -mag : mag;
    }
    return h;
}

Mesh taubin_smooth(const Mesh& m, double lambda, double mu, int iterations) {
    if (iterations < 0) throw std::invalid_argument("taubin_smooth: iterations must be >= 0");
    Mesh out = m;
    if (iterations == 0) return out;
    if (!(lambda > 0) || !(mu < 0) || !(-mu > lambda)) {
        throw std::invalid_argument("taubin_smooth: expected 0 < lambda < -mu");
    }
    const auto adj = vertex_adjacency(m);
    std::vector<Vec3> next(m.vertices.size());
    auto step = [&](double factor) {
        for (std::size_t v = 0; v < out.vertices.size(); ++v) {
            const auto nb = adj.of(v);
            if (nb.empty()) {
                next[v] = out.vertices[v];
                continue;
            }
            Vec3 mean = Vec3::Zero();
            for (auto u : nb) mean += out.vertices[u];
            mean /= static_cast<double>(nb.size());
            next[v] = out.vertices[v] + factor * (mean - out.vertices[v]);
        }
        out.vertices.swap(next);
    };
    for (int it = 0; it < iterations; ++it) {
        step(lambda);
        step(mu);
    }
    return out;
}

SignedDistanceResult signed_distance_volume(const Mesh& m, const Volume& grid) {
    if (m.faces.empty()) throw std::invalid_argument("signed_distance_volume: empty mesh");
    SignedDistanceResult result;
    result.sdf = Volume(grid.dims, grid.affine, 0.0f);
    Volume& sdf = result.sdf;
    const auto& dims = grid.dims;

    std::vector<Vec3> vox(m.vertices.size());
    for (std::size_t i = 0; i < vox.size(); ++i) {
        vox[i] = grid.to_voxel(m.vertices[i]);
        for (int a = 0; a < 3; ++a) {
            if (vox[i][a] < -0.5 || vox[i][a] > dims[a] - 0.5) result.mesh_outside_grid = true;
        }
    }

    // Parity along +i rows. The row lines are nudged off the lattice so they never graze an edge.
    constexpr double dj = 1.2345678e-7, dk = 2.3456789e-7;
    const std::size_t rows = static_cast<std::size_t>(dims[1]) * dims[2];
    std::vector<std::vector<double>> hits(rows);
    for (const auto& f : m.faces) {
        const Vec3 &a = vox[f[0]], &b = vox[f[1]], &c = vox[f[2]];
        const int j0 = std::max(0, static_cast<int>(std::ceil(std::min({a[1], b[1], c[1]}) - dj)));
        const int j1 = std::min(dims[1] - 1, static_cast<int>(std::floor(std::max({a[1], b[1], c[1]}) - dj)));
        const int k0 = std::max(0, static_cast<int>(std::ceil(std::min({a[2], b[2], c[2]}) - dk)));
        const int k1 = std::min(dims[2] - 1, static_cast<int>(std::floor(std::max({a[2], b[2], c[2]}) - dk)));
        const double det = (b[1] - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (b[2] - a[2]);
        if (det == 0) continue;
        for (int k = k0; k <= k1; ++k) {
            for (int j = j0; j <= j1; ++j) {
                const double y = j + dj, z = k + dk;
                const double wb = ((y - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (z - a[2])) / det;
                const double wc = ((b[1] - a[1]) * (z - a[2]) - (y - a[1]) * (b[2] - a[2])) / det;
                const double wa = 1.0 - wb - wc;
                if (wa < 0 || wb < 0 || wc < 0) continue;
                hits[static_cast<std::size_t>(k) * dims[1] + j].push_back(wa * a[0] + wb * b[0] + wc * c[0]);
            }
        }
    }

    const TriangleBvh bvh(m);
    for (int k = 0; k < dims[2]; ++k) {
        for (int j = 0; j < dims[1]; ++j) {
            auto& row = hits[static_cast<std::size_t>(k) * dims[1] + j];
            std::sort(row.begin(), row.end());
            for (int i = 0; i < dims[0]; ++i) {
                const auto beyond = row.end() - std::upper_bound(row.begin(), row.end(), static_cast<double>(i));
                const bool inside = (beyond % 2) == 1;
                const double d = std::sqrt(bvh.closest_point(grid.world(i, j, k)).squared_distance);
                sdf.at(i, j, k) = static_cast<float>(inside ? d : -d);
            }
        }
    }
    return result;
}

double chamfer_distance(std::span<const Vec3> px, std::span<const Vec3> py) {
    if (px.empty() || py.empty()) throw std::invalid_argument("chamfer_distance: empty point set");
    const KdTree tx(std::vector<Vec3>(px.begin(), px.end()));
    const KdTree ty(std::vector<Vec3>(py.begin(), py.end()));
    double fwd = 0, bwd = 0;
    for (const auto& x : px) fwd += ty.nearest(x).squared_distance;
    for (const auto& y : py) bwd += tx.nearest(y).squared_distance;
    return fwd / static_cast<double>(px.size()) + bwd / static_cast<double>(py.size());
}

double chamfer_distance(const SurfaceSamples& px, const SurfaceSamples& py) {
    return chamfer_distance(std::span<const Vec3>(px.points), std::span<const Vec3>(py.points));
}

std::vector<double> point_to_surface_distances(const Mesh& from, const Mesh& to, std::size_t n_samples,
                                               std::uint64_t seed, std::span<const bool> face_mask) {
    const auto samples = face_mask.empty() ? sample_surface(from, n_samples, seed)
                                           : sample_surface_masked(from, face_mask, n_samples, seed);
    const TriangleBvh bvh(to);
    std::vector<double> d(samples.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::sqrt(bvh.closest_point(samples.points[i]).squared_distance);
    return d;
}

double symmetric_surface_distance(const Mesh& mx, const Mesh& my, std::size_t n_samples, std::uint64_t seed) {
    const auto dxy = point_to_surface_distances(mx, my, n_samples, seed);
    const auto dyx = point_to_surface_distances(my, mx, n_samples, seed + 1);
    const double mxy = std::accumulate(dxy.begin(), dxy.end(), 0.0) / static_cast<double>(dxy.size());
    const double myx = std::accumulate(dyx.begin(), dyx.end(), 0.0) / static_cast<double>(dyx.size());
    return 0.5 * (mxy + myx);
}

double hausdorff_percentile(const Mesh& mx, const Mesh& my, double q, std::size_t n_samples, std::uint64_t seed) {
    if (!(q > 0) || q > 100) throw std::invalid_argument("hausdorff_percentile: q must be in (0, 100]");
    auto d = point_to_surface_distances(mx, my, n_samples, seed);
    const auto dyx = point_to_surface_distances(my, mx, n_samples, seed + 1);
    d.insert(d.end(), dyx.begin(), dyx.end());
    return quantile(d, q / 100.0);
}

std::vector<double> cortical_thickness(const Mesh& wm, const Mesh& gm) {
    const TriangleBvh gm_index(gm);
    const TriangleBvh wm_index(wm);
    std::vector<double> t(wm.vertices.size());
    for (std::size_t v = 0; v < t.size(); ++v) {
        const auto to_gm = gm_index.closest_point(wm.vertices[v]);
        const auto back = wm_index.closest_point(to_gm.point);
        t[v] = 0.5 * (std::sqrt(to_gm.squared_distance) + std::sqrt(back.squared_distance));
    }
    return t;
}

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("quantile: empty array");
    if (q < 0 || q > 1) throw std::invalid_argument("quantile: q must be in [0, 1]");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::span<const double> values, double q) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    return quantile_sorted(sorted, q);
}

std::vector<double> clip_to_percentiles(std::span<const double> values, double lo, double hi) {
    if (values.empty()) throw std::invalid_argument("clip_to_percentiles: empty array");
    if (!(lo >= 0 && lo < hi && hi <= 1)) throw std::invalid_argument("clip_to_percentiles: need 0 <= lo < hi <= 1");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double a = quantile_sorted(sorted, lo), b = quantile_sorted(sorted, hi);
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(values[i], a, b);
    return out;
}

QuadraticFit fit_quadratic_trend(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("fit_quadratic_trend: x and y differ in length");
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::MatrixXd design(n, 3);
    Eigen::VectorXd rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        design(i, 0) = 1.0;
        design(i, 1) = x[i];
        design(i, 2) = x[i] * x[i];
        rhs[i] = y[i];
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (n < 3 || qr.rank() < 3) throw std::invalid_argument("fit_quadratic_trend: rank-deficient design (need >= 3 distinct x)");
    const Eigen::Vector3d c = qr.solve(rhs);
    QuadraticFit fit{c[0], c[1], c[2], {}, 0.0};
    fit.residuals.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        fit.residuals[i] = y[i] - fit(x[i]);
        fit.residual_sum_of_squares += fit.residuals[i] * fit.residuals[i];
    }
    return fit;
}

std::vector<double> interpolate_at_samples(const Mesh& m, std::span<const double> vertex_values,
                                           const SurfaceSamples& samples) {
    if (vertex_values.size() != m.vertices.size()) throw std::invalid_argument("interpolate_at_samples: size mismatch");
    std::vector<double> out(samples.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& f = m.faces[samples.face_ids[i]];
        const auto& b = samples.barycentric[i];
        out[i] = b[0] * vertex_values[f[0]] + b[1] * vertex_values[f[1]] + b[2] * vertex_values[f[2]];
    }
    return out;
}

}  // namespace cortexflow

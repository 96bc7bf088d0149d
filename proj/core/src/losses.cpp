#include "cortexflow/losses.hpp"

#include "cortexflow/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace cortexflow {

using ad::Tensor;

namespace {

std::vector<std::int32_t> corner(const std::vector<Face>& faces, int c) {
    std::vector<std::int32_t> idx(faces.size());
    for (std::size_t f = 0; f < faces.size(); ++f) idx[f] = faces[f][c];
    return idx;
}

Tensor reciprocal(const Tensor& x) {
    return ad::div(Tensor::constant(x.shape(), std::vector<double>(x.size(), 1.0)), x);
}

Tensor constant_points(const std::vector<Vec3>& pts, const std::vector<std::int32_t>& idx) {
    std::vector<double> v(idx.size() * 3);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (int a = 0; a < 3; ++a) v[3 * i + a] = pts[idx[i]][a];
    return Tensor::constant({static_cast<int>(idx.size()), 3}, std::move(v));
}

// Mean over rows of the squared row norm of a [N, 3] difference.
Tensor mean_sq_rows(const Tensor& d) { return ad::scale(ad::sum(ad::square(d)), 1.0 / d.rows()); }

Tensor sampled_field(const Tensor& field, const std::vector<Face>& faces, const SurfaceSamples& s) {
    std::vector<std::int32_t> idx(3 * s.size());
    std::vector<double> w(3 * s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            idx[3 * i + c] = faces[s.face_ids[i]][c];
            w[3 * i + c] = s.barycentric[i][c];
        }
    return ad::weighted_gather(field, idx, w, 3);
}

Tensor face_normals_tensor(const Tensor& v, const Topology& topo) {
    const Tensor p0 = ad::gather_rows(v, corner(topo.faces, 0));
    const Tensor p1 = ad::gather_rows(v, corner(topo.faces, 1));
    const Tensor p2 = ad::gather_rows(v, corner(topo.faces, 2));
    const Tensor c = ad::cross(ad::sub(p1, p0), ad::sub(p2, p0));
    const Tensor len = ad::row_norm(c);
    for (std::size_t f = 0; f < len.size(); ++f) {
        if (!(len.values()[f] > 0)) throw std::invalid_argument("spring_loss: zero-area face " + std::to_string(f));
    }
    return ad::mul_rows(c, reciprocal(len));
}

void require_vertices(const Tensor& v, const Topology& topo, const char* op) {
    if (v.cols() != 3 || v.rows() != topo.vertex_count) {
        throw std::invalid_argument(std::string(op) + ": vertex tensor does not match the topology");
    }
}

}  // namespace

Topology Topology::of(const Mesh& m) {
    Topology t;
    t.faces = m.faces;
    t.edges = unique_edges(m);
    t.face_pairs = edge_face_pairs(m);
    t.vertex_count = static_cast<int>(m.vertices.size());
    return t;
}

TargetSurface prepare_target(const Mesh& target, std::size_t n_samples, std::uint64_t seed, const CurvatureOptions& options) {
    TargetSurface t;
    t.mesh = target;
    const SurfaceSamples s = sample_surface(target, n_samples, seed);
    t.points = s.points;
    const Mesh smooth = taubin_smooth(target, options.taubin_lambda, options.taubin_mu, options.taubin_iterations);
    const auto h = mean_curvature(smooth);
    const auto clipped = clip_to_percentiles(h, options.clip_lo, options.clip_hi);
    t.curvature = interpolate_at_samples(target, clipped, s);
    t.tree = KdTree(t.points);
    return t;
}

Tensor sample_points(const Tensor& vertices, const std::vector<Face>& faces, const SurfaceSamples& samples) {
    return sampled_field(vertices, faces, samples);
}

Tensor mean_curvature(const Tensor& v, const Topology& topo) {
    require_vertices(v, topo, "mean_curvature");
    const int V = topo.vertex_count;
    const int F = static_cast<int>(topo.faces.size());
    std::array<std::vector<std::int32_t>, 3> idx{corner(topo.faces, 0), corner(topo.faces, 1), corner(topo.faces, 2)};
    std::array<Tensor, 3> p{ad::gather_rows(v, idx[0]), ad::gather_rows(v, idx[1]), ad::gather_rows(v, idx[2])};

    // cot of the interior angle at each corner
    std::array<Tensor, 3> cot;
    Tensor twice_area;
    for (int c = 0; c < 3; ++c) {
        const Tensor u = ad::sub(p[(c + 1) % 3], p[c]);
        const Tensor w = ad::sub(p[(c + 2) % 3], p[c]);
        const Tensor s = ad::row_norm(ad::cross(u, w));
        for (int f = 0; f < F; ++f)
            if (!(s.values()[f] > 0)) throw std::invalid_argument("mean_curvature: zero-area triangle");
        cot[c] = ad::div(ad::row_dot(u, w), s);
        if (c == 0) twice_area = s;
    }

    Tensor lap = Tensor::zeros({V, 3});
    for (int c = 0; c < 3; ++c) {
        const int j = (c + 1) % 3, k = (c + 2) % 3;
        const Tensor cd = ad::mul_rows(ad::sub(p[k], p[j]), cot[c]);
        lap = ad::add(lap, ad::sub(ad::scatter_add_rows(cd, idx[j], V), ad::scatter_add_rows(cd, idx[k], V)));
    }

    // Mixed Voronoi areas; the obtuse/non-obtuse branch is fixed by the current geometry.
    std::vector<double> non_obtuse(F);
    std::array<std::vector<double>, 3> obtuse_share;
    for (auto& o : obtuse_share) o.assign(F, 0.0);
    for (int f = 0; f < F; ++f) {
        std::array<double, 3> dots{};
        for (int c = 0; c < 3; ++c) {
            Vec3 a, b, o;
            for (int q = 0; q < 3; ++q) {
                o[q] = p[c].values()[3 * f + q];
                a[q] = p[(c + 1) % 3].values()[3 * f + q];
                b[q] = p[(c + 2) % 3].values()[3 * f + q];
            }
            dots[c] = (a - o).dot(b - o);
        }
        const bool obtuse = dots[0] < 0 || dots[1] < 0 || dots[2] < 0;
        non_obtuse[f] = obtuse ? 0.0 : 1.0;
        for (int c = 0; c < 3; ++c) obtuse_share[c][f] = obtuse ? (dots[c] < 0 ? 0.25 : 0.125) : 0.0;
    }
    Tensor area = Tensor::zeros({V});
    for (int c = 0; c < 3; ++c) {
        const int a = (c + 1) % 3, b = (c + 2) % 3;
        const Tensor la = ad::row_dot(ad::sub(p[a], p[c]), ad::sub(p[a], p[c]));
        const Tensor lb = ad::row_dot(ad::sub(p[b], p[c]), ad::sub(p[b], p[c]));
        const Tensor voronoi = ad::scale(ad::add(ad::mul(la, cot[b]), ad::mul(lb, cot[a])), 1.0 / 8.0);
        const Tensor share = ad::add(ad::mask(voronoi, non_obtuse), ad::mask(twice_area, obtuse_share[c]));
        area = ad::add(area, ad::scatter_add_rows(share, idx[c], V));
    }
    for (int i = 0; i < V; ++i) {
        if (!(area.values()[i] > 0)) {
            throw std::invalid_argument("mean_curvature: vertex " + std::to_string(i) + " has zero mixed area");
        }
    }
    const Tensor k = ad::mul_rows(lap, reciprocal(ad::scale(area, 2.0)));
    Mesh m;
    m.faces = topo.faces;
    m.vertices = v.to_points();
    const auto normals = vertex_normals(m);
    std::vector<double> sign(V);
    for (int i = 0; i < V; ++i) {
        const Vec3 kv(k.values()[3 * i], k.values()[3 * i + 1], k.values()[3 * i + 2]);
        sign[i] = kv.dot(normals[i]) > 0 ? -0.5 : 0.5;
    }
    return ad::mask(ad::row_norm(k), sign);
}

Tensor chamfer_loss(const Tensor& points, const TargetSurface& target) {
    if (points.cols() != 3 || points.rows() == 0 || target.points.empty()) {
        throw std::invalid_argument("chamfer_loss: empty or malformed point set");
    }
    const auto px = points.to_points();
    std::vector<std::int32_t> to_y(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) to_y[i] = target.tree.nearest(px[i]).index;
    const KdTree tx(px);
    std::vector<std::int32_t> to_x(target.points.size());
    for (std::size_t i = 0; i < target.points.size(); ++i) to_x[i] = tx.nearest(target.points[i]).index;
    std::vector<std::int32_t> all(target.points.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int32_t>(i);

    const Tensor fwd = mean_sq_rows(ad::sub(points, constant_points(target.points, to_y)));
    const Tensor bwd = mean_sq_rows(ad::sub(constant_points(target.points, all), ad::gather_rows(points, to_x)));
    return ad::add(fwd, bwd);
}

Tensor matched_loss(const Tensor& vertices, const std::vector<Vec3>& target) {
    if (vertices.rows() != static_cast<int>(target.size()) || vertices.cols() != 3) {
        throw std::invalid_argument("matched_loss: vertex counts differ (" + std::to_string(vertices.rows()) + " vs " +
                                    std::to_string(target.size()) + ")");
    }
    return mean_sq_rows(ad::sub(vertices, Tensor::from_points(target)));
}

Tensor curvature_loss(const Tensor& vertices, const Topology& topo, const SurfaceSamples& samples,
                      const TargetSurface& target) {
    if (samples.size() == 0 || target.points.empty()) throw std::invalid_argument("curvature_loss: no samples");
    const Tensor h = mean_curvature(vertices, topo);
    const Tensor hx = sampled_field(h, topo.faces, samples);
    const Tensor px = sample_points(vertices, topo.faces, samples);
    const auto pts = px.to_points();

    std::vector<double> hy_near(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) hy_near[i] = target.curvature[target.tree.nearest(pts[i]).index];
    const KdTree tx(pts);
    std::vector<std::int32_t> to_x(target.points.size());
    for (std::size_t i = 0; i < to_x.size(); ++i) to_x[i] = tx.nearest(target.points[i]).index;

    const Tensor fwd = ad::mean(ad::square(ad::sub(hx, Tensor::constant({hx.rows()}, std::move(hy_near)))));
    const Tensor hy = Tensor::constant({static_cast<int>(target.curvature.size())}, target.curvature);
    const Tensor bwd = ad::mean(ad::square(ad::sub(hy, ad::gather_rows(hx, to_x))));
    return ad::add(fwd, bwd);
}

Tensor spring_loss(const Tensor& vertices, const Topology& topo) {
    require_vertices(vertices, topo, "spring_loss");
    if (topo.face_pairs.empty()) throw std::invalid_argument("spring_loss: no edge-sharing face pairs");
    const Tensor n = face_normals_tensor(vertices, topo);
    std::vector<std::int32_t> a(topo.face_pairs.size()), b(topo.face_pairs.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = topo.face_pairs[i][0], b[i] = topo.face_pairs[i][1];
    return mean_sq_rows(ad::sub(ad::gather_rows(n, a), ad::gather_rows(n, b)));
}

Tensor normalized_edge_variance(const Tensor& lengths) {
    const Tensor m = ad::mean(lengths);
    if (!(m.item() > 0)) throw std::invalid_argument("edge_loss: zero mean edge length");
    const Tensor ratio = ad::div(lengths, ad::expand(m, lengths.shape()));
    return ad::mean(ad::square(ad::add_scalar(ratio, -1.0)));
}

Tensor edge_loss(const Tensor& vertices, const Topology& topo) {
    require_vertices(vertices, topo, "edge_loss");
    std::vector<std::int32_t> a(topo.edges.size()), b(topo.edges.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = topo.edges[i][0], b[i] = topo.edges[i][1];
    return normalized_edge_variance(ad::row_norm(ad::sub(ad::gather_rows(vertices, a), ad::gather_rows(vertices, b))));
}

double chamfer_loss(const Mesh& mx, const Mesh& my, std::size_t n_samples, std::uint64_t seed) {
    return chamfer_distance(sample_surface(mx, n_samples, seed), sample_surface(my, n_samples, seed + 1));
}

double matched_loss(const Mesh& mx, const Mesh& my) {
    ad::NoGradGuard g;
    return matched_loss(Tensor::from_points(mx.vertices), my.vertices).item();
}

double curvature_loss(const Mesh& mx, const Mesh& my, std::size_t n_samples, std::uint64_t seed,
                      const CurvatureOptions& options) {
    ad::NoGradGuard g;
    const TargetSurface target = prepare_target(my, n_samples, seed + 1, options);
    const SurfaceSamples s = sample_surface(mx, n_samples, seed);
    return curvature_loss(Tensor::from_points(mx.vertices), Topology::of(mx), s, target).item();
}

double spring_loss(const Mesh& m) {
    ad::NoGradGuard g;
    return spring_loss(Tensor::from_points(m.vertices), Topology::of(m)).item();
}

double edge_loss(const Mesh& m) {
    ad::NoGradGuard g;
    return edge_loss(Tensor::from_points(m.vertices), Topology::of(m)).item();
}

void LossSchedule::validate() const {
    for (const auto* w : {&start, &end}) {
        for (double x : {w->chamfer, w->matched, w->curvature, w->spring, w->edge}) {
            if (!std::isfinite(x) || x < 0) throw std::invalid_argument("loss schedule: weights must be finite and >= 0");
        }
    }
    if (!(horizon > 0)) throw std::invalid_argument("loss schedule: horizon must be positive");
}

LossWeights scheduled_weights(const LossSchedule& s, double iteration) {
    if (iteration < 0) throw std::invalid_argument("scheduled_weights: negative iteration");
    const double t = std::min(iteration / s.horizon, 1.0);
    auto lerp = [t](double a, double b) { return a + (b - a) * t; };
    return {lerp(s.start.chamfer, s.end.chamfer), lerp(s.start.matched, s.end.matched),
            lerp(s.start.curvature, s.end.curvature), lerp(s.start.spring, s.end.spring),
            lerp(s.start.edge, s.end.edge)};
}

LossTerms surface_losses(const Tensor& vertices, const Topology& topo, const TargetSurface& target,
                         std::size_t n_samples, std::uint64_t seed) {
    Mesh current;
    current.faces = topo.faces;
    current.vertices = vertices.to_points();
    const SurfaceSamples samples = sample_surface(current, n_samples, seed);
    LossTerms t;
    t.chamfer = chamfer_loss(sample_points(vertices, topo.faces, samples), target);
    t.matched = matched_loss(vertices, target.mesh.vertices);
    t.curvature = curvature_loss(vertices, topo, samples, target);
    t.spring = spring_loss(vertices, topo);
    t.edge = edge_loss(vertices, topo);
    return t;
}

Tensor weighted_sum(const LossTerms& t, const LossWeights& w) {
    Tensor total = Tensor::scalar(0.0);
    const std::array<std::pair<const Tensor*, double>, 5> parts{
        {{&t.chamfer, w.chamfer}, {&t.matched, w.matched}, {&t.curvature, w.curvature}, {&t.spring, w.spring}, {&t.edge, w.edge}}};
    for (const auto& [term, weight] : parts)
        if (weight != 0) total = ad::add(total, ad::scale(*term, weight));
    return total;
}

}  // namespace cortexflow

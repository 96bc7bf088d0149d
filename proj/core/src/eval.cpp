#include "cortexflow/eval.hpp"

#include "cortexflow/intersect.hpp"
#include "cortexflow/spatial.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace cortexflow {

using nlohmann::json;

std::array<double, 8> MetricRecord::values() const {
    return {ssd_wm, ssd_gm, hd90_wm, hd90_gm, thickness_error, thickness_mean, sif_wm, sif_gm};
}

double DistancePair::mean() const {
    auto avg = [](const std::vector<double>& d) { return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size()); };
    return 0.5 * (avg(forward) + avg(backward));
}

double DistancePair::percentile(double q) const {
    std::vector<double> pooled = forward;
    pooled.insert(pooled.end(), backward.begin(), backward.end());
    return quantile(pooled, q / 100.0);
}

DistancePair surface_distances(const Mesh& a, const Mesh& b, std::size_t samples, std::uint64_t seed,
                               std::span<const bool> mask_a, std::span<const bool> mask_b) {
    return {point_to_surface_distances(a, b, samples, seed, mask_a), point_to_surface_distances(b, a, samples, seed, mask_b)};
}

std::vector<bool> face_mask_from_vertices(const Mesh& m, std::span<const bool> vertex_mask) {
    if (vertex_mask.size() != m.vertices.size()) {
        throw std::invalid_argument("vertex mask has " + std::to_string(vertex_mask.size()) + " entries, mesh has " +
                                    std::to_string(m.vertices.size()) + " vertices");
    }
    std::vector<bool> faces(m.faces.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const auto& t = m.faces[f];
        faces[f] = vertex_mask[t[0]] && vertex_mask[t[1]] && vertex_mask[t[2]];
    }
    if (std::none_of(faces.begin(), faces.end(), [](bool b) { return b; })) {
        throw std::invalid_argument("vertex mask excludes every face");
    }
    return faces;
}

std::vector<double> transfer_by_closest_point(const Mesh& source, std::span<const double> field,
                                              std::span<const Vec3> queries) {
    if (field.size() != source.vertices.size()) throw std::invalid_argument("transfer: field size differs from vertex count");
    const TriangleBvh index(source);
    std::vector<double> out(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const SurfacePoint p = index.closest_point(queries[i]);
        const auto& f = source.faces[p.face];
        out[i] = p.barycentric[0] * field[f[0]] + p.barycentric[1] * field[f[1]] + p.barycentric[2] * field[f[2]];
    }
    return out;
}

MetricRecord evaluate_pair(const Mesh& pred_wm, const Mesh& pred_gm, const Mesh& gt_wm, const Mesh& gt_gm,
                           std::span<const bool> mask, const EvalOptions& o) {
    std::vector<bool> gt_faces, pred_faces;
    if (!mask.empty()) {
        gt_faces = face_mask_from_vertices(gt_wm, mask);
        if (pred_wm.vertices.size() == gt_wm.vertices.size() && pred_wm.faces == gt_wm.faces) pred_faces = gt_faces;
    }
    // std::vector<bool> is not contiguous, spans need plain bool storage.
    auto bits = [](const std::vector<bool>& v) {
        auto b = std::make_unique<bool[]>(v.size());
        std::copy(v.begin(), v.end(), b.get());
        return b;
    };
    const auto gt_bits = bits(gt_faces), pred_bits = bits(pred_faces);
    const std::span<const bool> gt_span(gt_bits.get(), gt_faces.size());
    const std::span<const bool> pred_span(pred_bits.get(), pred_faces.size());

    MetricRecord r;
    const auto wm = surface_distances(pred_wm, gt_wm, o.samples, o.seed, pred_span, gt_span);
    const auto gm = surface_distances(pred_gm, gt_gm, o.samples, o.seed, pred_span, gt_span);
    r.ssd_wm = wm.mean();
    r.ssd_gm = gm.mean();
    r.hd90_wm = wm.percentile(o.hausdorff_q);
    r.hd90_gm = gm.percentile(o.hausdorff_q);

    const auto gt_thick = cortical_thickness(gt_wm, gt_gm);
    const auto pred_thick = transfer_by_closest_point(pred_wm, cortical_thickness(pred_wm, pred_gm), gt_wm.vertices);
    double err = 0, sum = 0;
    std::size_t n = 0;
    for (std::size_t v = 0; v < gt_thick.size(); ++v) {
        if (!mask.empty() && !mask[v]) continue;
        err += std::abs(pred_thick[v] - gt_thick[v]);
        sum += pred_thick[v];
        ++n;
    }
    if (n == 0) throw std::invalid_argument("evaluate_pair: mask excludes every vertex");
    r.thickness_error = err / static_cast<double>(n);
    r.thickness_mean = sum / static_cast<double>(n);
    r.sif_wm = count_self_intersecting_faces(pred_wm);
    r.sif_gm = count_self_intersecting_faces(pred_gm);
    return r;
}

CohortTrend cohort_trend(std::span<const SubjectMetrics> records) {
    CohortTrend t;
    std::set<double> distinct;
    for (const auto& r : records) {
        t.ages.push_back(r.age);
        t.thickness.push_back(r.metrics.thickness_mean);
        distinct.insert(r.age);
    }
    if (distinct.size() < 3) throw std::invalid_argument("cohort_trend: need at least 3 distinct ages");
    t.fit = fit_quadratic_trend(t.ages, t.thickness);
    return t;
}

std::string to_json(const SubjectMetrics& r) {
    json j{{"id", r.id}, {"age", r.age}};
    const auto v = r.metrics.values();
    for (std::size_t i = 0; i < v.size(); ++i) j[MetricRecord::names[i]] = v[i];
    return j.dump();
}

std::string to_json(const CohortTrend& t) {
    return json{{"metric", "thickness_mean"},
                {"coefficients", {t.fit.c0, t.fit.c1, t.fit.c2}},
                {"residual_sum_of_squares", t.fit.residual_sum_of_squares},
                {"age", t.ages},
                {"value", t.thickness},
                {"residuals", t.fit.residuals}}
        .dump();
}

std::string csv_header() {
    std::string h = "id,age";
    for (const char* n : MetricRecord::names) h += std::string(",") + n;
    return h;
}

std::string csv_row(const SubjectMetrics& r) {
    std::ostringstream out;
    out << std::setprecision(10) << r.id << ',' << r.age;
    for (double v : r.metrics.values()) out << ',' << v;
    return out.str();
}

}  // namespace cortexflow

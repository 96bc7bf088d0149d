#include "cortexflow/eval.hpp"

#include <doctest.h>

#include <json.hpp>

#include <memory>

using namespace cortexflow;

namespace {

Mesh sphere(int level, double r) {
    Mesh m = build_template(62);
    for (int i = 0; i < level; ++i) m = subdivide(m);
    for (auto& v : m.vertices) v = v.normalized() * r;
    return m;
}

EvalOptions fast() {
    EvalOptions o;
    o.samples = 5000;
    return o;
}

}  // namespace

TEST_CASE("perfect prediction") {
    const Mesh wm = sphere(3, 8.0), gm = sphere(3, 10.5);
    const MetricRecord r = evaluate_pair(wm, gm, wm, gm, {}, fast());
    CHECK(r.ssd_wm < 1e-9);
    CHECK(r.ssd_gm < 1e-9);
    CHECK(r.hd90_wm < 1e-9);
    CHECK(r.hd90_gm < 1e-9);
    CHECK(r.thickness_error < 1e-9);
    CHECK(r.thickness_mean == doctest::Approx(2.5).epsilon(0.03));
    CHECK(r.sif_wm == 0.0);
    CHECK(r.sif_gm == 0.0);
}

TEST_CASE("offset surfaces") {
    const Mesh wm = sphere(4, 8.0), gm = sphere(4, 10.5);
    const MetricRecord r = evaluate_pair(sphere(4, 8.3), gm, wm, gm, {}, fast());
    CHECK(r.ssd_wm == doctest::Approx(0.3).epsilon(0.02));
    CHECK(r.hd90_wm == doctest::Approx(0.3).epsilon(0.02));
    CHECK(r.ssd_gm < 1e-9);
    CHECK(r.thickness_error == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("swapping prediction and ground truth") {
    Mesh a = sphere(3, 8.0);
    a.vertices[10] *= 1.1;
    const Mesh b = sphere(3, 8.5);
    const auto ab = surface_distances(a, b, 3000, 9);
    const auto ba = surface_distances(b, a, 3000, 9);
    CHECK(ab.forward == ba.backward);
    CHECK(ab.backward == ba.forward);
    CHECK(ab.mean() == ba.mean());
    CHECK(ab.percentile(90) == ba.percentile(90));
    const Mesh g = sphere(3, 11.0);
    const MetricRecord x = evaluate_pair(a, g, b, g, {}, fast());
    const MetricRecord y = evaluate_pair(b, g, a, g, {}, fast());
    CHECK(x.ssd_wm == y.ssd_wm);
    CHECK(x.hd90_wm == y.hd90_wm);
}

TEST_CASE("vertex masks") {
    const Mesh wm = sphere(3, 8.0), gm = sphere(3, 10.5);
    Mesh bad = wm;
    std::vector<bool> keep(wm.vertices.size(), true);
    for (std::size_t i = 0; i < wm.vertices.size(); ++i)
        if (wm.vertices[i].z() > 6.0) {
            bad.vertices[i] *= 1.2;
            keep[i] = false;
        }
    const auto flags = std::make_unique<bool[]>(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) flags[i] = keep[i];
    const std::span<const bool> mask(flags.get(), keep.size());
    CHECK(evaluate_pair(bad, gm, wm, gm, {}, fast()).ssd_wm > 0.05);
    CHECK(evaluate_pair(bad, gm, wm, gm, mask, fast()).ssd_wm < 0.05);

    const auto faces = face_mask_from_vertices(wm, mask);
    CHECK(faces.size() == wm.faces.size());
    CHECK(std::count(faces.begin(), faces.end(), false) > 0);
    CHECK_THROWS(face_mask_from_vertices(wm, mask.subspan(1)));
    const auto none = std::make_unique<bool[]>(keep.size());
    CHECK_THROWS(face_mask_from_vertices(wm, std::span<const bool>(none.get(), keep.size())));
}

TEST_CASE("metric record") {
    CHECK(MetricRecord::names.size() == 8);
    MetricRecord r;
    r.ssd_wm = 1;
    r.sif_gm = 8;
    CHECK(r.values()[0] == 1);
    CHECK(r.values()[7] == 8);
    const SubjectMetrics s{"sub-01", 70.5, r};
    const auto j = nlohmann::json::parse(to_json(s));
    CHECK(j["id"] == "sub-01");
    for (const char* n : MetricRecord::names) CHECK(j.contains(n));
    const std::string header = csv_header();
    CHECK(std::count(header.begin(), header.end(), ',') == 9);
    const std::string row = csv_row(s);
    CHECK(std::count(row.begin(), row.end(), ',') == 9);
    CHECK(row.rfind("sub-01,", 0) == 0);
}

TEST_CASE("cohort trend") {
    std::vector<SubjectMetrics> records;
    for (int age = 60; age <= 90; age += 5) {
        SubjectMetrics s;
        s.id = "s" + std::to_string(age);
        s.age = age;
        s.metrics.thickness_mean = 3.0 - 0.02 * (age - 60) - 0.0005 * (age - 60) * (age - 60);
        records.push_back(s);
    }
    const CohortTrend t = cohort_trend(records);
    CHECK(t.ages.size() == records.size());
    for (double a : {62.0, 75.0, 88.0}) {
        const double expected = 3.0 - 0.02 * (a - 60) - 0.0005 * (a - 60) * (a - 60);
        CHECK(t.fit.c0 + t.fit.c1 * a + t.fit.c2 * a * a == doctest::Approx(expected).epsilon(1e-9));
    }
    CHECK(t.fit.residual_sum_of_squares < 1e-12);
    CHECK(nlohmann::json::parse(to_json(t))["coefficients"].size() == 3);
    records.resize(2);
    CHECK_THROWS_AS(cohort_trend(records), std::invalid_argument);
}

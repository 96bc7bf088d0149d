#include "cortexflow/geometry.hpp"
#include "cortexflow/mesh.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace cortexflow;

namespace {

Mesh sphere(int level, double r = 1.0) {
    Mesh m = build_template(62);
    for (int i = 0; i < level; ++i) m = subdivide(m);
    for (auto& v : m.vertices) v = v.normalized() * r;
    return m;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double max_relative_error(const std::vector<double>& h, double expected) {
    double e = 0;
    for (double x : h) e = std::max(e, std::abs(x - expected) / expected);
    return e;
}

double rms_relative_error(const std::vector<double>& h, double expected) {
    double e = 0;
    for (double x : h) e += (x - expected) * (x - expected) / (expected * expected);
    return std::sqrt(e / static_cast<double>(h.size()));
}

}  // namespace

TEST_CASE("mean curvature of spheres") {
    const auto h2 = mean_curvature(sphere(4, 2.0));
    CHECK(max_relative_error(h2, 0.5) < 0.05);
    CHECK(max_relative_error(mean_curvature(sphere(4)), 1.0) < 0.05);

    const Mesh m = sphere(3);
    const auto h = mean_curvature(m);
    const auto h3 = mean_curvature(scaled(m, 3.0));
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(h3[i] == doctest::Approx(h[i] / 3.0).epsilon(1e-10));

    double previous = 1e9;
    for (int level = 2; level <= 5; ++level) {
        const double err = rms_relative_error(mean_curvature(sphere(level)), 1.0);
        CHECK(err < previous);
        previous = err;
    }

    Mesh open = sphere(1);
    open.faces.pop_back();
    CHECK_THROWS_AS(mean_curvature(open), std::invalid_argument);
}

TEST_CASE("taubin smoothing") {
    const Mesh m = sphere(3);
    CHECK(taubin_smooth(m, 0.5, -0.53, 0).vertices == m.vertices);

    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 0.02);
    Mesh noisy = m;
    for (auto& v : noisy.vertices) v *= 1.0 + n(rng);
    auto deviation = [](const Mesh& x) {
        std::vector<double> r;
        for (const auto& v : x.vertices) r.push_back(v.norm());
        const double mr = mean(r);
        double d = 0;
        for (double x2 : r) d += std::abs(x2 - mr);
        return std::pair{d / static_cast<double>(r.size()), mr};
    };
    const Mesh smooth = taubin_smooth(noisy, 0.5, -0.53, 10);
    CHECK(smooth.faces == noisy.faces);
    CHECK(deviation(smooth).first < deviation(noisy).first);
    CHECK(std::abs(deviation(smooth).second - 1.0) < 0.02);
}

TEST_CASE("signed distance volume") {
    const Mesh m = sphere(3, 10.0);
    const Volume grid({25, 25, 25}, centered_affine({25, 25, 25}, Vec3::Zero()));
    const auto res = signed_distance_volume(m, grid);
    CHECK_FALSE(res.mesh_outside_grid);
    CHECK(std::abs(res.sdf.at(12, 12, 12) - 10.0) < 0.5 * std::sqrt(3.0));
    int flips = 0;
    for (int i = 1; i < 25; ++i)
        if ((res.sdf.at(i, 12, 12) > 0) != (res.sdf.at(i - 1, 12, 12) > 0)) ++flips;
    CHECK(flips == 2);
    for (int i = 0; i < 25; ++i) {
        const double r = grid.world(i, 12, 12).norm();
        CHECK(std::abs(res.sdf.at(i, 12, 12) - (10.0 - r)) < max_edge_length(m));
    }
    const Volume small({8, 8, 8}, centered_affine({8, 8, 8}, Vec3::Zero()));
    CHECK(signed_distance_volume(m, small).mesh_outside_grid);
}

TEST_CASE("chamfer distance") {
    const std::vector<Vec3> px{Vec3(0, 0, 0), Vec3(1, 0, 0)};
    const std::vector<Vec3> py{Vec3(0, 0, 0), Vec3(0, 1, 0)};
    CHECK(chamfer_distance(px, py) == 1.0);
    CHECK(chamfer_distance(px, px) == 0.0);
    CHECK(chamfer_distance(px, py) == chamfer_distance(py, px));
    CHECK_THROWS(chamfer_distance(px, std::vector<Vec3>{}));

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Vec3> a(300), b(400);
    for (auto& p : a) p = Vec3(u(rng), u(rng), u(rng));
    for (auto& p : b) p = Vec3(u(rng), u(rng), u(rng));
    auto directed = [](const std::vector<Vec3>& x, const std::vector<Vec3>& y) {
        double s = 0;
        for (const auto& p : x) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : y) best = std::min(best, (p - q).squaredNorm());
            s += best;
        }
        return s / static_cast<double>(x.size());
    };
    CHECK(std::abs(chamfer_distance(a, b) - (directed(a, b) + directed(b, a))) < 1e-12);
}

TEST_CASE("surface distances and Hausdorff percentiles") {
    const Mesh s1 = sphere(4, 1.0);
    CHECK(symmetric_surface_distance(s1, s1, 5000) < 1e-9);
    CHECK(hausdorff_percentile(s1, s1, 90, 5000) < 1e-9);
    CHECK(symmetric_surface_distance(s1, sphere(4, 1.2), 20000) == doctest::Approx(0.2).epsilon(0.02));
    const Mesh s15 = sphere(4, 1.5);
    CHECK(hausdorff_percentile(s1, s15, 90, 20000) == doctest::Approx(0.5).epsilon(0.02));

    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 0.05);
    Mesh bumpy = sphere(3);
    for (auto& v : bumpy.vertices) v *= 1.0 + n(rng);
    const double h100 = hausdorff_percentile(s1, bumpy, 100, 5000);
    const double h90 = hausdorff_percentile(s1, bumpy, 90, 5000);
    const double h50 = hausdorff_percentile(s1, bumpy, 50, 5000);
    CHECK(h100 >= h90);
    CHECK(h90 >= h50);
    CHECK(h100 >= symmetric_surface_distance(s1, bumpy, 5000));
    CHECK_THROWS(hausdorff_percentile(s1, bumpy, 0, 10));

    // Plane patch moved along its normal.
    Mesh plane;
    const int n_side = 20;
    for (int j = 0; j <= n_side; ++j)
        for (int i = 0; i <= n_side; ++i) plane.vertices.emplace_back(i, j, 0);
    for (int j = 0; j < n_side; ++j)
        for (int i = 0; i < n_side; ++i) {
            const int a = j * (n_side + 1) + i;
            plane.faces.push_back({a, a + 1, a + n_side + 2});
            plane.faces.push_back({a, a + n_side + 2, a + n_side + 1});
        }
    const Mesh moved = translated(plane, Vec3(0, 0, 0.3));
    const auto d = point_to_surface_distances(plane, moved, 2000, 4);
    for (double x : d) CHECK(x == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("cortical thickness on shells") {
    const Mesh wm = sphere(4, 8.0);
    const Mesh gm = sphere(4, 10.5);
    CHECK(mean(cortical_thickness(wm, gm)) == doctest::Approx(2.5).epsilon(0.02));
    for (double t : cortical_thickness(wm, wm)) CHECK(t == 0.0);
    const double t1 = mean(cortical_thickness(sphere(3, 8.0), sphere(3, 10.5)));
    const double t2 = mean(cortical_thickness(sphere(3, 16.0), sphere(3, 21.0)));
    CHECK(t2 == doctest::Approx(2 * t1).epsilon(1e-9));
}

TEST_CASE("quantiles and percentile clipping") {
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 0.0);
    const auto c = clip_to_percentiles(v, 0.01, 0.99);
    CHECK(*std::min_element(c.begin(), c.end()) == doctest::Approx(0.99));
    CHECK(*std::max_element(c.begin(), c.end()) == doctest::Approx(98.01));
    CHECK(clip_to_percentiles(v, 0, 1) == v);
    CHECK(clip_to_percentiles(std::vector<double>(5, 2.0), 0.1, 0.9) == std::vector<double>(5, 2.0));
    for (std::size_t i = 1; i < c.size(); ++i) CHECK(c[i] >= c[i - 1]);
    // Idempotent when the bounds land on order statistics (101 values, 1% steps).
    std::vector<double> w(101);
    std::mt19937_64 rng(4);
    for (auto& x : w) x = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto once = clip_to_percentiles(w, 0.01, 0.99);
    CHECK(clip_to_percentiles(once, 0.01, 0.99) == once);
    CHECK_THROWS(clip_to_percentiles({}, 0, 1));
    CHECK(quantile(std::vector<double>{3, 1, 2}, 0.5) == 2.0);
}

TEST_CASE("quadratic trend fit") {
    std::vector<double> x, y, flat;
    for (int i = 0; i <= 10; ++i) {
        x.push_back(i);
        y.push_back(2 + 3 * i - 0.5 * i * i);
        flat.push_back(5);
    }
    const auto f = fit_quadratic_trend(x, y);
    CHECK(std::abs(f.c0 - 2) < 1e-9);
    CHECK(std::abs(f.c1 - 3) < 1e-9);
    CHECK(std::abs(f.c2 + 0.5) < 1e-9);
    const auto g = fit_quadratic_trend(x, flat);
    CHECK(std::abs(g.c0 - 5) < 1e-9);
    CHECK(std::abs(g.c1) < 1e-9);
    CHECK(std::abs(g.c2) < 1e-9);
    CHECK_THROWS(fit_quadratic_trend(std::vector<double>{1, 1, 2}, std::vector<double>{1, 2, 3}));

    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    std::vector<double> noisy;
    for (double xi : x) noisy.push_back(1 + 0.2 * xi + 0.05 * xi * xi + n(rng));
    const auto h = fit_quadratic_trend(x, noisy);
    auto rss = [&](double a, double b, double c) {
        double s = 0;
        for (std::size_t i = 0; i < x.size(); ++i) s += std::pow(noisy[i] - (a + b * x[i] + c * x[i] * x[i]), 2);
        return s;
    };
    CHECK(h.residual_sum_of_squares == doctest::Approx(rss(h.c0, h.c1, h.c2)));
    for (double d : {-0.01, 0.01}) {
        CHECK(rss(h.c0 + d, h.c1, h.c2) >= h.residual_sum_of_squares);
        CHECK(rss(h.c0, h.c1 + d, h.c2) >= h.residual_sum_of_squares);
        CHECK(rss(h.c0, h.c1, h.c2 + d) >= h.residual_sum_of_squares);
    }
}

TEST_CASE("barycentric interpolation of vertex fields") {
    const Mesh m = sphere(2);
    std::vector<double> f(m.vertices.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = m.vertices[i].x();
    const auto s = sample_surface(m, 200, 6);
    const auto vals = interpolate_at_samples(m, f, s);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(vals[i] == doctest::Approx(s.points[i].x()).epsilon(1e-12));
}

#include "cortexflow/geometry.hpp"
#include "cortexflow/phantom.hpp"
#include "cortexflow/synth.hpp"

#include <doctest.h>

#include <numeric>
#include <random>

using namespace cortexflow;

namespace {

const SubjectSample& shell() {
    static const SubjectSample s = make_phantom(parse_phantom_spec("two-sphere r=8,10.5"), 1);
    return s;
}

Volume ramp(int n) {
    Volume v({n, n, n}, Affine::Identity());
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) v.at(i, j, k) = static_cast<float>(i + 2 * j + 3 * k) / (6.0f * (n - 1));
    return v;
}

}  // namespace

TEST_CASE("partial volume sigmoid") {
    CHECK(pv_fraction(0.0, 3.0) == 0.5);
    CHECK(pv_fraction(1.0, 5.0) == doctest::Approx(0.993307).epsilon(1e-6));
    for (double d : {-2.0, -0.3, 0.7, 4.0}) CHECK(pv_fraction(d, 4.0) + pv_fraction(-d, 4.0) == doctest::Approx(1.0).epsilon(1e-15));
    for (double dwm : {-3.0, -1.0, 0.0, 0.5})
        for (double dgm : {dwm, dwm + 0.5, dwm + 2.0}) {
            const auto w = pv_weights(dwm, dgm, 5.0);
            CHECK(w.wm + w.gm + w.csf == doctest::Approx(1.0).epsilon(1e-15));
            for (double x : {w.wm, w.gm, w.csf}) CHECK((x >= 0 && x <= 1));
        }
}

TEST_CASE("k-means labels") {
    Volume img({10, 10, 2}, Affine::Identity()), mask({10, 10, 2}, Affine::Identity(), 1.0f);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 0.01);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((i % 2 ? 0.9 : 0.1) + n(rng));
    std::vector<double> trace;
    const Volume lab = kmeans_labels(img, mask, 2, 3, &trace);
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(lab.data[i] == (i % 2 ? 2.0f : 1.0f));
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1]);
    CHECK(kmeans_labels(img, mask, 2, 3).data == lab.data);

    const Volume one = kmeans_labels(img, mask, 1, 3);
    for (float x : one.data) CHECK(x == 1.0f);
    Volume flat({4, 4, 4}, Affine::Identity(), 0.5f), m4({4, 4, 4}, Affine::Identity(), 1.0f);
    CHECK_THROWS(kmeans_labels(flat, m4, 2, 1));
    CHECK_THROWS(kmeans_labels(flat, Volume({4, 4, 4}, Affine::Identity()), 1, 1));
}

TEST_CASE("contrast sampling") {
    SynthConfig c;
    const auto x = sample_contrast(c, {0, 1, 2, 3}, 5);
    const double wm = x.at(1).mean, gm = x.at(2).mean, csf = x.at(3).mean;
    CHECK(std::abs(wm - gm) >= 0.1);
    CHECK(std::abs(gm - csf) >= 0.1);
    CHECK(std::abs(wm - csf) >= 0.1);
    for (const auto& [label, lc] : x) {
        CHECK((lc.mean >= 0 && lc.mean <= 1));
        CHECK((lc.std >= 0.01 && lc.std <= 0.10));
    }
    const auto y = sample_contrast(c, {0, 1, 2, 3}, 5);
    CHECK(y.at(2).mean == gm);

    SynthConfig zero = c;
    zero.min_contrast = 0;
    zero.max_contrast_retries = 1;
    CHECK_NOTHROW(sample_contrast(zero, {1, 2, 3}, 9));

    SynthConfig impossible = c;
    impossible.min_contrast = 0.6;
    CHECK_THROWS_AS(sample_contrast(impossible, {1, 2, 3}, 9), std::runtime_error);
    CHECK_THROWS(sample_contrast(c, {1, 2}, 9));
}

TEST_CASE("mean image composition") {
    const auto& s = shell();
    Contrast c{{labels::background, {0.0, 0.01}}, {labels::wm, {0.9, 0.01}}, {labels::gm, {0.5, 0.01}}, {labels::csf, {0.1, 0.01}}};
    for (int l = labels::first_extra; l < labels::first_extra + 3; ++l) c[l] = {0.3, 0.01};
    const Volume img = compose_mean_image(s, c, 8.0);
    const int mid = s.labels.dims[0] / 2;
    CHECK(img.at(mid, mid, mid) == doctest::Approx(0.9).epsilon(1e-3));

    // A voxel near the WM surface blends towards the WM/GM midpoint.
    double best = 1e9;
    std::size_t at = 0;
    for (std::size_t i = 0; i < s.wm_sdf.data.size(); ++i)
        if (std::abs(s.wm_sdf.data[i]) < best) {
            best = std::abs(s.wm_sdf.data[i]);
            at = i;
        }
    const auto w = pv_weights(s.wm_sdf.data[at], s.gm_sdf.data[at], 8.0);
    CHECK(img.data[at] == doctest::Approx(w.wm * 0.9 + w.gm * 0.5 + w.csf * 0.1).epsilon(1e-6));
    CHECK(w.wm == doctest::Approx(pv_fraction(s.wm_sdf.data[at], 8.0)));

    const auto exact = pv_weights(0.0, 5.0, 8.0);
    CHECK(exact.wm * 0.9 + exact.gm * 0.5 + exact.csf * 0.1 == doctest::Approx(0.5 * 0.9 + 0.5 * 0.5).epsilon(1e-6));
}

TEST_CASE("sharper partial volume steepens the boundary") {
    const auto& s = shell();
    Contrast c{{labels::background, {0.0, 0.0}}, {labels::wm, {0.9, 0.0}}, {labels::gm, {0.4, 0.0}}, {labels::csf, {0.1, 0.0}}};
    for (int l = labels::first_extra; l < labels::first_extra + 3; ++l) c[l] = {0.3, 0.0};
    double previous = -1;
    for (double rho : {2.0, 4.0, 6.0, 10.0}) {
        const Volume img = compose_mean_image(s, c, rho);
        const int mid = s.labels.dims[0] / 2;
        // Straddle the WM surface (r = 8) along +x by 2 mm.
        const Vec3 inside = s.labels.to_voxel(s.labels.world(mid, mid, mid) + Vec3(7, 0, 0));
        const Vec3 outside = s.labels.to_voxel(s.labels.world(mid, mid, mid) + Vec3(9, 0, 0));
        const double diff = sample_trilinear(img, inside) - sample_trilinear(img, outside);
        CHECK(diff >= previous);
        previous = diff;
    }
}

TEST_CASE("gamma transform") {
    const Volume r = ramp(8);
    const Volume g1 = apply_gamma(r, 1.0);
    for (std::size_t i = 0; i < r.data.size(); ++i) CHECK(std::abs(g1.data[i] - r.data[i]) < 1e-6);
    Volume three({3, 1, 1}, Affine::Identity());
    three.data = {0.0f, 0.5f, 1.0f};
    CHECK(apply_gamma(three, 2.0).data[1] == doctest::Approx(0.25));
    const Volume g = apply_gamma(r, 0.7);
    for (std::size_t i = 1; i < r.data.size(); ++i)
        if (r.data[i] > r.data[i - 1]) CHECK(g.data[i] >= g.data[i - 1]);
    Volume flat({3, 3, 3}, Affine::Identity(), 0.4f);
    CHECK(apply_gamma(flat, 2.0).data == flat.data);
}

TEST_CASE("bias field") {
    const Volume r = ramp(16);
    const BiasField zero = make_bias_field(r, 4, std::vector<double>(64, 0.0));
    CHECK(apply_bias_field(r, zero).data == r.data);

    SynthConfig c;
    const Volume big({64, 64, 64}, Affine::Identity(), 1.0f);
    const BiasField f = sample_bias_field(big, c, 11);
    const Volume out = apply_bias_field(big, f);
    double max_step = 0, max_control_step = 0;
    for (std::size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] > 0);
    for (int k = 0; k < 64; ++k)
        for (int j = 0; j < 64; ++j)
            for (int i = 1; i < 64; ++i)
                max_step = std::max(max_step, static_cast<double>(std::abs(std::log(out.at(i, j, k)) - std::log(out.at(i - 1, j, k)))));
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 4; ++j)
            for (int i = 1; i < 4; ++i)
                max_control_step = std::max(max_control_step, std::abs(f.controls[i + 4 * (j + 4 * k)] - f.controls[i - 1 + 4 * (j + 4 * k)]));
    // Trilinear upsampling spreads each control difference over 63/3 voxels.
    CHECK(max_step <= max_control_step / 21.0 + 1e-5);
    CHECK(apply_bias_field(big, c, 11).data == out.data);
}

TEST_CASE("resolution simulation") {
    const Volume r = ramp(12);
    const Volume same = simulate_resolution(r, Vec3::Ones());
    Volume expected = r;
    minmax_normalize(expected);
    for (std::size_t i = 0; i < r.data.size(); ++i) CHECK(same.data[i] == doctest::Approx(expected.data[i]).epsilon(1e-6));

    for (const Vec3& sp : {Vec3(2, 2, 2), Vec3(1, 1, 5), Vec3(3, 1, 1)}) {
        const Volume low = simulate_resolution(r, sp);
        CHECK(is_isotropic(low, 1.0));
        const auto [lo, hi] = value_range(low);
        CHECK(lo == 0.0f);
        CHECK(hi == 1.0f);
    }
    CHECK_THROWS(simulate_resolution(r, Vec3(0.5, 1, 1)));
}

TEST_CASE("generation is seeded and well-formed") {
    const auto& s = shell();
    SynthConfig c;
    const auto a = generate(s, c, 42);
    const auto b = generate(s, c, 42);
    CHECK(a.image.data == b.image.data);
    CHECK(a.image.same_grid(s.labels));
    CHECK(a.wm.vertices == s.wm.vertices);
    int gamma = 0, bias = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto g = generate(s, c, seed);
        gamma += g.report.gamma_applied;
        bias += g.report.bias_applied;
        CHECK(is_isotropic(g.image, 1.0));
        const auto [lo, hi] = value_range(g.image);
        CHECK(lo == 0.0f);
        CHECK(hi == 1.0f);
    }
    CHECK(std::abs(gamma - 66) <= 20);
    CHECK(std::abs(bias - 150) <= 18);
}

TEST_CASE("synth config JSON") {
    const SynthConfig d = synth_config_from_json("{}");
    CHECK(d.gamma_probability == 0.33);
    CHECK(d.bias_probability == 0.75);
    CHECK(d.min_contrast == 0.10);
    const SynthConfig e = synth_config_from_json(R"({"gamma_probability": 0.5, "pv_rho": [3, 4]})");
    CHECK(e.gamma_probability == 0.5);
    CHECK(e.pv_rho.lo == 3);
    const SynthConfig round = synth_config_from_json(to_json(e));
    CHECK(round.gamma_probability == 0.5);
    CHECK(round.pv_rho.hi == 4);
    try {
        synth_config_from_json("{\n  \"gamma_probability\": ,\n}");
        FAIL("expected a parse error");
    } catch (const std::invalid_argument& ex) {
        CHECK(std::string(ex.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS(synth_config_from_json(R"({"gamma_probability": 1.5})"));
}

TEST_CASE("phantoms") {
    const auto& s = shell();
    s.validate();
    CHECK(is_closed_genus0(s.wm));
    CHECK(s.wm.faces == s.gm.faces);
    const auto t = cortical_thickness(s.wm, s.gm);
    CHECK(std::accumulate(t.begin(), t.end(), 0.0) / t.size() == doctest::Approx(2.5).epsilon(0.03));

    const PhantomSpec blob = parse_phantom_spec("blob r=8,10.5 amp=1 seed=3 center=0.5,0,-1 grid=32 level=2");
    CHECK(blob.kind == PhantomSpec::Kind::Blob);
    CHECK(blob.center == Vec3(0.5, 0, -1));
    const SubjectSample b = make_phantom(blob, 2);
    CHECK(b.wm.vertices.size() == 962);
    for (std::size_t i = 0; i < b.wm.vertices.size(); ++i) CHECK((b.gm.vertices[i] - b.wm.vertices[i]).norm() == doctest::Approx(2.5).epsilon(1e-9));
    CHECK_THROWS(parse_phantom_spec("cube r=1"));
    CHECK_THROWS(parse_phantom_spec("two-sphere r=8"));

    PhantomCohortConfig cohort;
    const auto specs = sample_phantom_specs(cohort, 20, 4);
    CHECK(specs.size() == 20);
    const auto again = sample_phantom_specs(cohort, 20, 4);
    for (std::size_t i = 0; i < specs.size(); ++i) CHECK(specs[i].wm_radius == again[i].wm_radius);
}

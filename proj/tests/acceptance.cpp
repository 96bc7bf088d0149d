#include "cortexflow/eval.hpp"
#include "cortexflow/geometry.hpp"
#include "cortexflow/gradcheck.hpp"
#include "cortexflow/intersect.hpp"
#include "cortexflow/losses.hpp"
#include "cortexflow/mesh.hpp"
#include "cortexflow/mesh_io.hpp"
#include "cortexflow/model.hpp"
#include "cortexflow/spatial.hpp"
#include "cortexflow/synth.hpp"
#include "cortexflow/trainer.hpp"
#include "support/gradient_cases.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace cortexflow;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Mesh sphere(int level, double r) {
    Mesh m = build_template(62);
    for (int i = 0; i < level; ++i) m = subdivide(m);
    for (auto& v : m.vertices) v = v.normalized() * r;
    return m;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome subdivision_scale() {
    const auto t0 = Clock::now();
    Mesh m = build_template(62);
    for (int i = 0; i < 6; ++i) m = subdivide(m);
    const double t = seconds_since(t0);
    const bool ok = m.vertices.size() == 245762 && euler_characteristic(m) == 2 && t < 10.0;
    return {ok, fmt("level 6 has %zu vertices, %zu faces, built in %.2f s", m.vertices.size(), m.faces.size(), t)};
}

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    double worst = 0;
    std::string worst_name;
    std::size_t n = 0, kinks = 0;
    for (const auto& c : testing::all_gradient_cases()) {
        const auto r = gradient_check(c.fn, c.inputs, 1e-4, c.options);
        ++n;
        for (const auto& g : r.groups) kinks += g.kinks;
        if (r.max_relative_error >= worst) {
            worst = r.max_relative_error;
            worst_name = c.name;
        }
    }
    const double t = seconds_since(t0);
    return {worst < 1e-4 && t < 300.0,
            fmt("%zu cases, worst relative error %.2e (%s), %zu kinked entries redrawn, %.1f s", n, worst, worst_name.c_str(),
                kinks, t)};
}

double all_pairs_sif(const Mesh& m) {
    std::vector<bool> hit(m.faces.size(), false);
    for (std::size_t a = 0; a < m.faces.size(); ++a)
        for (std::size_t b = a + 1; b < m.faces.size(); ++b) {
            const auto& fa = m.faces[a];
            const auto& fb = m.faces[b];
            if (faces_share_vertex(fa, fb)) continue;
            if (triangles_intersect(m.vertices[fa[0]], m.vertices[fa[1]], m.vertices[fa[2]], m.vertices[fb[0]],
                                    m.vertices[fb[1]], m.vertices[fb[2]]))
                hit[a] = hit[b] = true;
        }
    return static_cast<double>(std::count(hit.begin(), hit.end(), true)) / static_cast<double>(m.faces.size());
}

Outcome spatial_oracles() {
    std::mt19937_64 rng(2024);
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
    const double chamfer_err = std::abs(chamfer_distance(a, b) - (directed(a, b) + directed(b, a)));

    const KdTree tree(b);
    int nn_mismatch = 0;
    for (int q = 0; q < 100; ++q) {
        const Vec3 x(u(rng), u(rng), u(rng));
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : b) best = std::min(best, (p - x).squaredNorm());
        if (tree.nearest(x).squared_distance != best) ++nn_mismatch;
    }

    int sif_mismatch = 0, with_hits = 0;
    std::normal_distribution<double> noise(0, 1);
    for (int i = 0; i < 20; ++i) {
        Mesh m = sphere(1, 1.0);
        const double sigma = 0.01 * i;
        for (auto& v : m.vertices) v += sigma * Vec3(noise(rng), noise(rng), noise(rng));
        const double fast = count_self_intersecting_faces(m);
        if (fast != all_pairs_sif(m)) ++sif_mismatch;
        if (fast > 0) ++with_hits;
    }
    const bool ok = chamfer_err < 1e-12 && nn_mismatch == 0 && sif_mismatch == 0;
    return {ok, fmt("chamfer |diff| %.1e, nearest-neighbour mismatches %d/100, SIF mismatches %d/20 (%d meshes intersect)",
                    chamfer_err, nn_mismatch, sif_mismatch, with_hits)};
}

Outcome geometry_values() {
    const auto h = mean_curvature(sphere(4, 2.0));
    double worst = 0;
    for (double x : h) worst = std::max(worst, std::abs(x - 0.5) / 0.5);
    const auto t = cortical_thickness(sphere(4, 8.0), sphere(4, 10.5));
    const double thick = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
    const double ssd = symmetric_surface_distance(sphere(4, 1.0), sphere(4, 1.2), 100000);
    const bool ok = worst < 0.05 && std::abs(thick - 2.5) / 2.5 < 0.02 && std::abs(ssd - 0.2) / 0.2 < 0.02;
    return {ok, fmt("curvature max rel. error %.3f, mean thickness %.4f mm, SSD %.4f mm", worst, thick, ssd)};
}

Outcome synth_statistics() {
    const SubjectSample s = make_phantom(parse_phantom_spec("blob r=8,10.5 amp=1 seed=5"), 3);
    const SynthConfig c;
    int gamma = 0, bias = 0, bad = 0;
    for (std::uint64_t i = 0; i < 1000; ++i) {
        const auto g = generate(s, c, derive_seed(77, i));
        gamma += g.report.gamma_applied;
        bias += g.report.bias_applied;
        const auto [lo, hi] = value_range(g.image);
        if (!is_isotropic(g.image, 1.0) || lo < 0.0f || hi > 1.0f) ++bad;
    }
    const bool ok = std::abs(gamma - 330) <= 45 && std::abs(bias - 750) <= 41 && pv_fraction(0.0, 5.0) == 0.5 && bad == 0;
    return {ok, fmt("gamma applied %d/1000, bias applied %d/1000, PV(0) = %.3f, %d malformed outputs", gamma, bias,
                    pv_fraction(0.0, 5.0), bad)};
}

Outcome loss_properties() {
    Mesh m = sphere(2, 1.0);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0, 0.03);
    for (auto& v : m.vertices) v *= 1.0 + n(rng);
    CurvatureOptions off;
    off.taubin_iterations = 0;
    off.clip_lo = 0;
    off.clip_hi = 1;
    const LossTerms t = surface_losses(ad::Tensor::from_points(m.vertices), Topology::of(m), prepare_target(m, 5000, 3, off), 5000, 3);

    Mesh flat;
    for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) flat.vertices.emplace_back(i, j, 0);
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) {
            const int a = 4 * j + i;
            flat.faces.push_back({a, a + 1, a + 5});
            flat.faces.push_back({a, a + 5, a + 4});
        }
    const Mesh tet{{Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)}, {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}}};
    const Mesh pair{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}, {{0, 1, 2}, {1, 0, 3}}};

    const double zeros = std::max({t.chamfer.item(), t.matched.item(), t.curvature.item(), spring_loss(flat), edge_loss(tet)});
    const double scale_err = std::abs(edge_loss(scaled(m, 7.0)) - edge_loss(m));
    const double spring = spring_loss(pair);
    const bool ok = zeros <= 1e-6 && t.chamfer.item() == 0 && t.matched.item() == 0 && scale_err < 1e-12 &&
                    std::abs(spring - 2.0) < 1e-12;
    return {ok, fmt("largest identity-case loss %.1e, edge-loss scale change %.1e, perpendicular spring loss %.15g", zeros,
                    scale_err, spring)};
}

struct DeskRun {
    bool ran = false;
    CheckpointData best;
    TrainConfig config;
};

Outcome desk_training(DeskRun& run, const fs::path& work) {
    const TrainConfig c = TrainConfig::for_profile("desk");
    const auto t0 = Clock::now();
    const auto train = make_phantom_subjects(c.cohort, c.train_subjects, c.loss_samples, derive_seed(c.seed, 1));
    const auto val = make_phantom_subjects(c.cohort, c.validation_subjects, c.loss_samples, derive_seed(c.seed, 2));
    TrainRunOptions o;
    o.checkpoint_path = work / "desk.ckpt";
    o.log_path = work / "desk.ndjson";
    const TrainResult r = run_training(c, train, val, o);
    const double minutes = seconds_since(t0) / 60.0;
    run = {true, r.best, c};

    const Network net = load_network(r.best);
    const auto test = make_phantom_subjects(c.cohort, 10, 1000, derive_seed(c.seed, 3));
    double ssd_wm = 0, ssd_gm = 0, sif = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const Volume img = generate(test[i].sample, c.synth, derive_seed(c.seed, 50 + i)).image;
        const Reconstruction rec = reconstruct(net, img, test[i].sample.template_affine);
        const MetricRecord m = evaluate_pair(rec.wm, rec.gm, test[i].sample.wm, test[i].sample.gm);
        ssd_wm += m.ssd_wm / 10.0;
        ssd_gm += m.ssd_gm / 10.0;
        sif = std::max({sif, m.sif_wm, m.sif_gm});
    }
    const double ratio = r.best_validation / r.initial_validation;
    const bool ok = r.iterations <= 5000 && ratio < 0.25 && ssd_wm < 0.5 && ssd_gm < 0.5 && sif < 0.01 && minutes <= 60.0;
    return {ok, fmt("%lld iterations, validation chamfer %.3f -> %.3f (%.1f%%), held-out SSD WM %.3f mm GM %.3f mm, "
                    "max SIF %.2f%%, %.1f min",
                    static_cast<long long>(r.iterations), r.initial_validation, r.best_validation, 100 * ratio, ssd_wm,
                    ssd_gm, 100 * sif, minutes)};
}

Outcome determinism(const DeskRun& run, const fs::path& work) {
    // Reconstruction from a checkpoint file, twice, through separate network instances.
    CheckpointData ckpt = run.ran ? run.best : snapshot(Network(ModelConfig::desk(), 21), 21);
    write_checkpoint(work / "det.ckpt", ckpt);
    const SubjectSample s = make_phantom(parse_phantom_spec("blob r=8,10.5 amp=1 seed=9"), 4);
    const Volume img = generate(s, SynthConfig{}, 5).image;
    for (int k = 0; k < 2; ++k) {
        const Network net = load_network(read_checkpoint(work / "det.ckpt"));
        const Reconstruction r = reconstruct(net, img, s.template_affine);
        write_ply(r.wm, work / ("det" + std::to_string(k) + ".wm.ply"));
        write_ply(r.gm, work / ("det" + std::to_string(k) + ".gm.ply"));
    }
    const bool same = slurp(work / "det0.wm.ply") == slurp(work / "det1.wm.ply") &&
                      slurp(work / "det0.gm.ply") == slurp(work / "det1.gm.ply");

    // Interrupted and resumed training against an uninterrupted run.
    TrainConfig c = TrainConfig::for_profile("desk");
    c.loss_samples = 500;
    c.max_iterations = 6;
    c.validation_interval = 2;
    c.train_subjects = 3;
    c.validation_subjects = 1;
    c.seed = 4242;
    const auto train = make_phantom_subjects(c.cohort, c.train_subjects, c.loss_samples, derive_seed(c.seed, 1));
    const auto val = make_phantom_subjects(c.cohort, c.validation_subjects, c.loss_samples, derive_seed(c.seed, 2));
    const TrainResult full = run_training(c, train, val);
    TrainRunOptions first;
    first.stop_at = 3;
    first.checkpoint_path = work / "resume.ckpt";
    run_training(c, train, val, first);
    TrainRunOptions second;
    second.checkpoint_path = first.checkpoint_path;
    second.resume = read_checkpoint(work / "resume.ckpt.last");
    const TrainResult resumed = run_training(c, train, val, second);
    std::size_t differing = 0;
    for (std::size_t i = 0; i < full.last.arrays.size(); ++i)
        if (i >= resumed.last.arrays.size() || resumed.last.arrays[i].values != full.last.arrays[i].values) ++differing;
    const bool exact = differing == 0 && full.last.arrays.size() == resumed.last.arrays.size() &&
                       resumed.final_validation == full.final_validation;
    return {same && exact, fmt("repeat reconstruction %s, resumed run differs in %zu of %zu arrays", same ? "byte-identical" : "differs",
                               differing, full.last.arrays.size())};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cortexflow acceptance suite"};
    fs::path work = fs::temp_directory_path() / "cortexflow_acceptance";
    std::vector<int> only;
    app.add_option("--work", work, "Scratch directory");
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);
    ad::set_num_threads(1);

    const std::set<int> selected(only.begin(), only.end());
    auto wanted = [&](int k) { return selected.empty() || selected.count(k) > 0; };
    DeskRun desk;
    int failures = 0;
    auto report = [&](int k, const char* title, const std::function<Outcome()>& fn) {
        if (!wanted(k)) return;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::printf("criterion %d %s: %s: %s\n", k, o.pass ? "PASS" : "FAIL", title, o.detail.c_str());
        std::fflush(stdout);
    };

    report(1, "subdivision to level 6", subdivision_scale);
    report(2, "gradient check suite", gradient_suite);
    report(3, "chamfer, nearest neighbour and SIF oracles", spatial_oracles);
    report(4, "curvature, thickness and SSD on spheres", geometry_values);
    report(5, "augmentation statistics", synth_statistics);
    report(6, "loss identities and invariances", loss_properties);
    report(7, "desk-profile training", [&] { return desk_training(desk, work); });
    report(8, "deterministic reconstruction and resume", [&] { return determinism(desk, work); });
    return failures == 0 ? 0 : 1;
}

#include "cortexflow/autodiff.hpp"
#include "cortexflow/checkpoint.hpp"
#include "cortexflow/eval.hpp"
#include "cortexflow/geometry.hpp"
#include "cortexflow/intersect.hpp"
#include "cortexflow/mesh_io.hpp"
#include "cortexflow/model.hpp"
#include "cortexflow/nifti.hpp"
#include "cortexflow/phantom.hpp"
#include "cortexflow/synth.hpp"
#include "cortexflow/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;
using namespace cortexflow;
using nlohmann::json;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    std::string config;
    std::string profile = "desk";
    bool json = false;
    int threads = 0;
    bool reproducible = false;
};

// Raised for a missing input file; maps to exit code 2.
struct MissingInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw MissingInput(std::string(what) + " not found: " + p.string());
}

std::string slurp(const fs::path& p) {
    require_file(p, "file");
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void apply_threads(const Globals& g) {
    int n = g.threads;
    if (n <= 0) {
        if (const char* env = std::getenv("CORTEXFLOW_THREADS")) n = std::atoi(env);
    }
    if (g.reproducible) n = 1;
    if (n > 0) ad::set_num_threads(n);
}

void report(const Globals& g, const json& out, const std::string& human) {
    if (g.json)
        std::cout << out.dump() << '\n';
    else
        std::cout << human << '\n';
}

std::vector<bool> read_mask(const fs::path& p) {
    std::istringstream in(slurp(p));
    std::vector<bool> mask;
    int v;
    while (in >> v) mask.push_back(v != 0);
    if (!in.eof()) throw std::runtime_error("mask " + p.string() + ": expected whitespace-separated 0/1 values");
    return mask;
}

json metrics_json(const MetricRecord& m) {
    json j;
    const auto v = m.values();
    for (std::size_t i = 0; i < v.size(); ++i) j[MetricRecord::names[i]] = v[i];
    return j;
}

int cmd_synth(const Globals& g, const std::string& phantom, const fs::path& prefix) {
    SynthConfig cfg = g.config.empty() ? SynthConfig{} : synth_config_from_json(slurp(g.config));
    const PhantomSpec spec = parse_phantom_spec(phantom);
    const SubjectSample subject = make_phantom(spec, derive_seed(g.seed, 1));
    const SyntheticScan scan = generate(subject, cfg, g.seed);
    const std::string p = prefix.string();
    write_volume(scan.image, p + ".nii.gz");
    write_ply(subject.wm, p + ".wm.ply");
    write_ply(subject.gm, p + ".gm.ply");
    write_affine(subject.template_affine, p + ".affine.txt");
    std::ofstream(p + ".config.json") << to_json(cfg) << '\n';
    const auto thick = cortical_thickness(subject.wm, subject.gm);
    const double mean_thickness = std::accumulate(thick.begin(), thick.end(), 0.0) / static_cast<double>(thick.size());
    report(g,
           {{"command", "synth"}, {"prefix", p}, {"seed", g.seed}, {"vertices", subject.wm.vertices.size()},
            {"mean_thickness", mean_thickness}},
           "wrote " + p + ".{nii.gz,wm.ply,gm.ply,affine.txt,config.json}");
    return 0;
}

int cmd_train(const Globals& g, const fs::path& out, const fs::path& log, bool resume, std::int64_t stop_at) {
    TrainConfig cfg = g.config.empty() ? TrainConfig::for_profile(g.profile) : train_config_from_json(slurp(g.config));
    if (!g.config.empty() && cfg.profile != g.profile && g.profile != "desk") {
        throw std::invalid_argument("--profile " + g.profile + " disagrees with config profile " + cfg.profile);
    }
    if (g.seed) cfg.seed = g.seed;
    cfg.validate();
    TrainRunOptions opt;
    opt.checkpoint_path = out;
    opt.log_path = log;
    opt.stop_at = stop_at;
    if (resume) {
        const fs::path last = out.string() + ".last";
        require_file(last, "checkpoint");
        opt.resume = read_checkpoint(last);
    }
    if (!g.json) opt.on_log = [](const std::string& line) { std::cerr << line << '\n'; };
    const auto train = make_phantom_subjects(cfg.cohort, cfg.train_subjects, cfg.loss_samples, derive_seed(cfg.seed, 1));
    const auto val = make_phantom_subjects(cfg.cohort, cfg.validation_subjects, cfg.loss_samples, derive_seed(cfg.seed, 2));
    const TrainResult r = run_training(cfg, train, val, opt);
    std::ostringstream human;
    human << "trained " << r.iterations << " iterations; validation chamfer " << r.initial_validation << " -> "
          << r.best_validation << " (best), checkpoint " << out.string();
    report(g,
           {{"command", "train"}, {"iterations", r.iterations}, {"initial_validation", r.initial_validation},
            {"best_validation", r.best_validation}, {"final_validation", r.final_validation},
            {"plateaued", r.plateaued}, {"checkpoint", out.string()}},
           human.str());
    return 0;
}

int cmd_reconstruct(const Globals& g, const fs::path& volume, const fs::path& ckpt, const fs::path& affine,
                    const fs::path& prefix) {
    require_file(ckpt, "checkpoint");
    require_file(volume, "volume");
    const Network net = load_network(read_checkpoint(ckpt));
    const Volume img = read_volume(volume);
    Affine a = Affine::Identity();
    if (!affine.empty()) {
        require_file(affine, "affine");
        a = read_affine(affine);
    }
    const Reconstruction rec = reconstruct(net, img, a);
    const std::string p = prefix.string();
    write_ply(rec.wm, p + ".wm.ply");
    write_ply(rec.gm, p + ".gm.ply");
    report(g,
           {{"command", "reconstruct"}, {"wm", p + ".wm.ply"}, {"gm", p + ".gm.ply"}, {"vertices", rec.wm.vertices.size()},
            {"euler_wm", euler_characteristic(rec.wm)}, {"euler_gm", euler_characteristic(rec.gm)}},
           "wrote " + p + ".wm.ply and " + p + ".gm.ply");
    return 0;
}

struct EvalArgs {
    fs::path pred_wm, pred_gm, gt_wm, gt_gm, mask, records, csv, trend;
    std::string id = "subject";
    double age = 0;
    std::size_t samples = 100000;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
    if (!a.records.empty()) {
        std::vector<SubjectMetrics> rows;
        std::istringstream in(slurp(a.records));
        for (std::string line; std::getline(in, line);) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            SubjectMetrics s;
            s.id = j.at("id").get<std::string>();
            s.age = j.at("age").get<double>();
            auto v = s.metrics.values();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = j.at(MetricRecord::names[i]).get<double>();
            s.metrics = {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
            rows.push_back(s);
        }
        if (!a.csv.empty()) {
            std::ofstream out(a.csv);
            out << csv_header() << '\n';
            for (const auto& r : rows) out << csv_row(r) << '\n';
        }
        const CohortTrend t = cohort_trend(rows);
        if (!a.trend.empty()) std::ofstream(a.trend) << to_json(t) << '\n';
        std::ostringstream human;
        human << rows.size() << " subjects; thickness ~ " << t.fit.c0 << " + " << t.fit.c1 << " age + " << t.fit.c2 << " age^2";
        report(g, json::parse(to_json(t)), human.str());
        return 0;
    }
    for (const auto* p : {&a.pred_wm, &a.pred_gm, &a.gt_wm, &a.gt_gm})
        if (p->empty()) throw std::invalid_argument("eval needs --pred-wm, --pred-gm, --gt-wm and --gt-gm (or --records)");
    for (const auto* p : {&a.pred_wm, &a.pred_gm, &a.gt_wm, &a.gt_gm}) require_file(*p, "mesh");
    std::vector<bool> mask;
    if (!a.mask.empty()) mask = read_mask(a.mask);
    const auto mask_buf = std::make_unique<bool[]>(mask.size());
    std::copy(mask.begin(), mask.end(), mask_buf.get());
    EvalOptions opt;
    opt.samples = a.samples;
    opt.seed = derive_seed(kMetricSeed, g.seed);
    SubjectMetrics s;
    s.id = a.id;
    s.age = a.age;
    s.metrics = evaluate_pair(read_mesh(a.pred_wm), read_mesh(a.pred_gm), read_mesh(a.gt_wm), read_mesh(a.gt_gm),
                              std::span<const bool>(mask_buf.get(), mask.size()), opt);
    if (!a.csv.empty()) {
        const bool fresh = !fs::exists(a.csv);
        std::ofstream out(a.csv, std::ios::app);
        if (fresh) out << csv_header() << '\n';
        out << csv_row(s) << '\n';
    }
    std::ostringstream human;
    const auto v = s.metrics.values();
    for (std::size_t i = 0; i < v.size(); ++i) human << MetricRecord::names[i] << ' ' << v[i] << (i + 1 < v.size() ? "\n" : "");
    report(g, json::parse(to_json(s)), human.str());
    return 0;
}

int cmd_subdivide(const Globals& g, const fs::path& in, const fs::path& out, int levels, int template_vertices) {
    Mesh m;
    if (in.empty()) {
        m = build_template(template_vertices);
    } else {
        require_file(in, "mesh");
        m = read_mesh(in);
    }
    for (int i = 0; i < levels; ++i) m = subdivide(m);
    write_mesh(m, out);
    report(g,
           {{"command", "subdivide"}, {"vertices", m.vertices.size()}, {"faces", m.faces.size()},
            {"euler", euler_characteristic(m)}, {"output", out.string()}},
           "V=" + std::to_string(m.vertices.size()) + " F=" + std::to_string(m.faces.size()) + " -> " + out.string());
    return 0;
}

int cmd_metrics(const Globals& g, const fs::path& a, const fs::path& b, std::size_t samples) {
    require_file(a, "mesh");
    const Mesh ma = read_mesh(a);
    json out{{"command", "metrics"},
             {"vertices", ma.vertices.size()},
             {"faces", ma.faces.size()},
             {"euler", euler_characteristic(ma)},
             {"genus0", is_closed_genus0(ma)},
             {"sif", count_self_intersecting_faces(ma)},
             {"mean_edge_length", mean_edge_length(ma)}};
    if (is_closed_genus0(ma)) {
        const auto h = mean_curvature(ma);
        out["mean_curvature"] = std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size());
    }
    if (!b.empty()) {
        require_file(b, "mesh");
        const Mesh mb = read_mesh(b);
        const std::uint64_t seed = derive_seed(kMetricSeed, g.seed);
        out["ssd"] = symmetric_surface_distance(ma, mb, samples, seed);
        out["hd90"] = hausdorff_percentile(ma, mb, 90, samples, seed);
        out["chamfer"] = chamfer_distance(sample_surface(ma, samples, seed), sample_surface(mb, samples, seed + 1));
        const auto t = cortical_thickness(ma, mb);
        out["thickness_mean"] = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
    }
    std::ostringstream human;
    for (const auto& [k, v] : out.items())
        if (k != "command") human << k << ' ' << v.dump() << '\n';
    std::string h = human.str();
    if (!h.empty()) h.pop_back();
    report(g, out, h);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cortexflow: template-deformation cortical surface reconstruction"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "random seed")->capture_default_str();
    app.add_option("--config", g.config, "JSON configuration file");
    app.add_option("--profile", g.profile, "model profile")->check(CLI::IsMember({"desk", "full"}))->capture_default_str();
    app.add_flag("--json", g.json, "print a JSON record to stdout");
    app.add_option("--threads", g.threads, "worker threads (default: CORTEXFLOW_THREADS or hardware)");
    app.add_flag("--reproducible", g.reproducible, "single-threaded, bit-stable execution");

    std::string phantom = "two-sphere r=8,10.5";
    fs::path synth_out;
    auto* synth = app.add_subcommand("synth", "generate a synthetic phantom scan with ground-truth surfaces");
    synth->add_option("--phantom", phantom, "phantom spec")->capture_default_str();
    synth->add_option("-o,--out", synth_out, "output prefix")->required();

    fs::path train_out, train_log;
    bool resume = false;
    std::int64_t stop_at = -1;
    auto* train = app.add_subcommand("train", "train on synthetic phantoms");
    train->add_option("-o,--out", train_out, "best checkpoint path")->required();
    train->add_option("--log", train_log, "NDJSON progress log");
    train->add_flag("--resume", resume, "continue from <out>.last");
    train->add_option("--stop-at", stop_at, "halt after this many total iterations");

    fs::path rec_volume, rec_ckpt, rec_affine, rec_out;
    auto* rec = app.add_subcommand("reconstruct", "reconstruct WM and GM surfaces from a scan");
    rec->add_option("volume", rec_volume, "input NIfTI volume")->required();
    rec->add_option("-c,--checkpoint", rec_ckpt, "trained checkpoint")->required();
    rec->add_option("--affine", rec_affine, "4x4 template affine (identity when omitted)");
    rec->add_option("-o,--out", rec_out, "output prefix")->required();

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "surface metrics of a prediction, or a cohort summary");
    eval->add_option("--pred-wm", ev.pred_wm);
    eval->add_option("--pred-gm", ev.pred_gm);
    eval->add_option("--gt-wm", ev.gt_wm);
    eval->add_option("--gt-gm", ev.gt_gm);
    eval->add_option("--mask", ev.mask, "per-vertex 0/1 file on the gt topology");
    eval->add_option("--id", ev.id)->capture_default_str();
    eval->add_option("--age", ev.age);
    eval->add_option("--samples", ev.samples)->capture_default_str();
    eval->add_option("--records", ev.records, "NDJSON metric records for the cohort trend");
    eval->add_option("--csv", ev.csv, "CSV summary table (appended for a single pair)");
    eval->add_option("--trend", ev.trend, "write the quadratic thickness trend as JSON");

    fs::path sub_in, sub_out;
    int sub_levels = 1, sub_template = 62;
    auto* sub = app.add_subcommand("subdivide", "midpoint-subdivide a mesh (or the template)");
    sub->add_option("input", sub_in, "input mesh; the template when omitted");
    sub->add_option("-o,--out", sub_out, "output mesh")->required();
    sub->add_option("-n,--levels", sub_levels)->check(CLI::Range(0, 8))->capture_default_str();
    sub->add_option("--template-vertices", sub_template)->capture_default_str();

    fs::path met_a, met_b;
    std::size_t met_samples = 100000;
    auto* met = app.add_subcommand("metrics", "mesh statistics, and distances to a second mesh");
    met->add_option("mesh", met_a)->required();
    met->add_option("other", met_b);
    met->add_option("--samples", met_samples)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        apply_threads(g);
        if (*synth) return cmd_synth(g, phantom, synth_out);
        if (*train) return cmd_train(g, train_out, train_log, resume, stop_at);
        if (*rec) return cmd_reconstruct(g, rec_volume, rec_ckpt, rec_affine, rec_out);
        if (*eval) return cmd_eval(g, ev);
        if (*sub) return cmd_subdivide(g, sub_in, sub_out, sub_levels, sub_template);
        if (*met) return cmd_metrics(g, met_a, met_b, met_samples);
    } catch (const MissingInput& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

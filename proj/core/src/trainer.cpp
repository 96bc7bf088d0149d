#include "cortexflow/trainer.hpp"

#include "cortexflow/geometry.hpp"
#include "cortexflow/model.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace cortexflow {

using ad::Tensor;
using nlohmann::json;

void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::int64_t step, double lr, const AdamWOptions& o, const std::string& name) {
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
        throw std::invalid_argument("adamw: shape mismatch for '" + name + "'");
    }
    if (step < 1) throw std::invalid_argument("adamw: step index must be >= 1");
    for (double g : grad)
        if (!std::isfinite(g)) throw std::invalid_argument("adamw: non-finite gradient in '" + name + "'");
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
    const double decay = 1.0 - lr * o.weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = o.beta1 * m[i] + (1 - o.beta1) * grad[i];
        v[i] = o.beta2 * v[i] + (1 - o.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        param[i] = param[i] * decay - lr * mhat / (std::sqrt(vhat) + o.eps);
    }
}

void adamw_step(const std::vector<Tensor>& params, AdamWState& state, double lr, const AdamWOptions& options) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    ++state.step;
    std::vector<double> zeros;
    for (std::size_t p = 0; p < params.size(); ++p) {
        ad::Node& n = *params[p].node();
        if (state.m[p].size() != n.value.size()) {
            state.m[p].assign(n.value.size(), 0.0);
            state.v[p].assign(n.value.size(), 0.0);
        }
        std::span<const double> g = n.grad;
        if (n.grad.size() != n.value.size()) {
            zeros.assign(n.value.size(), 0.0);
            g = zeros;
        }
        adamw_update(n.value, g, state.m[p], state.v[p], state.step, lr, options, n.name);
    }
}

namespace {

void round_to_float(std::vector<double>& v) {
    for (auto& x : v) x = static_cast<float>(x);
}

json schedule_json(const LossSchedule& s) {
    auto w = [](const LossWeights& x) {
        return json{{"chamfer", x.chamfer}, {"matched", x.matched}, {"curvature", x.curvature}, {"spring", x.spring}, {"edge", x.edge}};
    };
    return json{{"start", w(s.start)}, {"end", w(s.end)}, {"horizon", s.horizon}};
}

void read_weights(const json& j, LossWeights& w) {
    w.chamfer = j.value("chamfer", w.chamfer);
    w.matched = j.value("matched", w.matched);
    w.curvature = j.value("curvature", w.curvature);
    w.spring = j.value("spring", w.spring);
    w.edge = j.value("edge", w.edge);
}

std::uint64_t step_seed(const TrainConfig& c, std::int64_t it, std::uint64_t stream) {
    return derive_seed(derive_seed(c.seed, 0x7a11 + stream), static_cast<std::uint64_t>(it));
}

}  // namespace

TrainConfig TrainConfig::for_profile(const std::string& profile) {
    TrainConfig c;
    c.profile = profile;
    if (profile == "desk") {
        c.loss_samples = 3000;
        c.lr_initial = 1e-3;
        c.lr_final = 1e-4;
        c.max_iterations = 1500;
        c.validation_interval = 250;
        c.train_subjects = 24;
        c.validation_subjects = 4;
    } else if (profile == "full") {
        c.cohort.grid = 160;
        c.cohort.mesh_level = 6;
        c.cohort.wm_radius_lo = 50;
        c.cohort.wm_radius_hi = 60;
        c.cohort.amplitude_hi = 6;
        c.max_iterations = 160000;
    } else {
        throw std::invalid_argument("unknown profile '" + profile + "' (expected desk or full)");
    }
    return c;
}

ModelConfig TrainConfig::model() const { return ModelConfig::from_profile(profile); }

void TrainConfig::validate() const {
    if (!(lr_initial > 0) || !(lr_final > 0) || lr_final > lr_initial) {
        throw std::invalid_argument("train config: need 0 < lr_final <= lr_initial");
    }
    if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
    if (max_iterations < 0 || validation_interval < 1) throw std::invalid_argument("train config: bad iteration counts");
    if (loss_samples == 0) throw std::invalid_argument("train config: loss_samples must be positive");
    if (train_subjects < 1 || validation_subjects < 1) throw std::invalid_argument("train config: subject sets must be non-empty");
    if (cohort.mesh_level != model().levels) {
        throw std::invalid_argument("train config: phantom mesh level must equal the model's deepest level");
    }
    effective_schedule().validate();
    synth.validate();
}

double TrainConfig::learning_rate(double iteration) const {
    const double t = max_iterations > 0 ? std::clamp(iteration / max_iterations, 0.0, 1.0) : 0.0;
    return (1.0 - t) * lr_initial + t * lr_final;
}

LossSchedule TrainConfig::effective_schedule() const {
    LossSchedule s = schedule;
    if (schedule_horizon_auto) s.horizon = std::max(1.0, 0.25 * max_iterations);
    return s;
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("train config: ") + e.what());
    }
    TrainConfig c = TrainConfig::for_profile(j.value("profile", std::string("desk")));
    try {
        c.lr_initial = j.value("lr_initial", c.lr_initial);
        c.lr_final = j.value("lr_final", c.lr_final);
        if (j.contains("adamw")) {
            const auto& a = j["adamw"];
            c.adamw.beta1 = a.value("beta1", c.adamw.beta1);
            c.adamw.beta2 = a.value("beta2", c.adamw.beta2);
            c.adamw.eps = a.value("eps", c.adamw.eps);
            c.adamw.weight_decay = a.value("weight_decay", c.adamw.weight_decay);
        }
        c.max_iterations = j.value("max_iterations", c.max_iterations);
        c.validation_interval = j.value("validation_interval", c.validation_interval);
        c.patience = j.value("patience", c.patience);
        c.min_delta = j.value("min_delta", c.min_delta);
        c.seed = j.value("seed", c.seed);
        if (j.contains("schedule")) {
            const auto& s = j["schedule"];
            if (s.contains("start")) read_weights(s["start"], c.schedule.start);
            if (s.contains("end")) read_weights(s["end"], c.schedule.end);
            if (s.contains("horizon")) {
                c.schedule.horizon = s["horizon"].get<double>();
                c.schedule_horizon_auto = false;
            }
        }
        c.loss_samples = j.value("loss_samples", c.loss_samples);
        c.train_subjects = j.value("train_subjects", c.train_subjects);
        c.validation_subjects = j.value("validation_subjects", c.validation_subjects);
        c.prefetch = j.value("prefetch", c.prefetch);
        c.log_interval = j.value("log_interval", c.log_interval);
        if (j.contains("synth")) c.synth = synth_config_from_json(j["synth"].dump());
        if (j.contains("cohort")) {
            const auto& k = j["cohort"];
            auto& p = c.cohort;
            p.grid = k.value("grid", p.grid);
            p.mesh_level = k.value("mesh_level", p.mesh_level);
            p.blob_fraction = k.value("blob_fraction", p.blob_fraction);
            p.wm_radius_lo = k.value("wm_radius_lo", p.wm_radius_lo);
            p.wm_radius_hi = k.value("wm_radius_hi", p.wm_radius_hi);
            p.thickness_lo = k.value("thickness_lo", p.thickness_lo);
            p.thickness_hi = k.value("thickness_hi", p.thickness_hi);
            p.amplitude_hi = k.value("amplitude_hi", p.amplitude_hi);
            p.center_jitter = k.value("center_jitter", p.center_jitter);
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string to_json(const TrainConfig& c) {
    const auto& p = c.cohort;
    json j{{"profile", c.profile},
           {"lr_initial", c.lr_initial},
           {"lr_final", c.lr_final},
           {"adamw", {{"beta1", c.adamw.beta1}, {"beta2", c.adamw.beta2}, {"eps", c.adamw.eps}, {"weight_decay", c.adamw.weight_decay}}},
           {"max_iterations", c.max_iterations},
           {"validation_interval", c.validation_interval},
           {"patience", c.patience},
           {"min_delta", c.min_delta},
           {"seed", c.seed},
           {"schedule", schedule_json(c.effective_schedule())},
           {"loss_samples", c.loss_samples},
           {"train_subjects", c.train_subjects},
           {"validation_subjects", c.validation_subjects},
           {"prefetch", c.prefetch},
           {"log_interval", c.log_interval},
           {"synth", json::parse(to_json(c.synth))},
           {"cohort",
            {{"grid", p.grid}, {"mesh_level", p.mesh_level}, {"blob_fraction", p.blob_fraction},
             {"wm_radius_lo", p.wm_radius_lo}, {"wm_radius_hi", p.wm_radius_hi}, {"thickness_lo", p.thickness_lo},
             {"thickness_hi", p.thickness_hi}, {"amplitude_hi", p.amplitude_hi}, {"center_jitter", p.center_jitter}}}};
    return j.dump(2);
}

TrainingSubject prepare_subject(SubjectSample sample, std::size_t samples, std::uint64_t seed) {
    TrainingSubject s;
    s.wm_target = prepare_target(sample.wm, samples, derive_seed(seed, 1), CurvatureOptions::white());
    s.gm_target = prepare_target(sample.gm, samples, derive_seed(seed, 2), CurvatureOptions::gray());
    s.sample = std::move(sample);
    return s;
}

std::vector<TrainingSubject> make_phantom_subjects(const PhantomCohortConfig& cohort, int count, std::size_t samples,
                                                   std::uint64_t seed) {
    const auto specs = sample_phantom_specs(cohort, count, seed);
    std::vector<TrainingSubject> out;
    out.reserve(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        SubjectSample s = make_phantom(specs[i], derive_seed(seed, 100 + i));
        s.id = "phantom-" + std::to_string(seed) + "-" + std::to_string(i);
        out.push_back(prepare_subject(std::move(s), samples, derive_seed(seed, 200 + i)));
    }
    return out;
}

Trainer::Trainer(const TrainConfig& config, std::uint64_t init_seed)
    : config_(config), init_seed_(init_seed), net_(config.model(), init_seed) {
    config_.validate();
    topology_ = Topology::of(net_.hierarchy().meshes.back());
}

Trainer::Trainer(const CheckpointData& resume)
    : config_(TrainConfig::for_profile(resume.model.profile)), init_seed_(resume.init_seed), net_(load_network(resume)) {
    const json state = json::parse(resume.state_json);
    if (state.contains("train_config")) config_ = train_config_from_json(state["train_config"].dump());
    topology_ = Topology::of(net_.hierarchy().meshes.back());
    adam_.step = state.value("adam_step", std::int64_t{0});
    const auto& params = net_.params().all();
    adam_.m.resize(params.size());
    adam_.v.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto* m = resume.find("adam.m/" + params[p].name());
        const auto* v = resume.find("adam.v/" + params[p].name());
        if (m && v) {
            adam_.m[p] = m->values;
            adam_.v[p] = v->values;
        }
    }
}

LossReport Trainer::forward(const Volume& image, const TrainingSubject& subject, std::int64_t iteration, Tensor* total) const {
    const FeatureVolume feat = unet_features(net_, image);
    const auto white = deform_white(net_, positioned_template(net_, subject.sample.template_affine), feat);
    const Tensor gray = deform_gray(net_, white.back(), feat);
    const std::size_t n = config_.loss_samples;
    const LossTerms wm = surface_losses(white.back(), topology_, subject.wm_target, n, step_seed(config_, iteration, 1));
    const LossTerms gm = surface_losses(gray, topology_, subject.gm_target, n, step_seed(config_, iteration, 2));
    const LossWeights w = scheduled_weights(config_.effective_schedule(), static_cast<double>(iteration));
    const Tensor t = ad::add(weighted_sum(wm, w), weighted_sum(gm, w));

    LossReport r;
    r.iteration = iteration;
    r.lr = config_.learning_rate(static_cast<double>(iteration));
    r.total = t.item();
    for (const auto& [surface, terms] : {std::pair{"wm", &wm}, std::pair{"gm", &gm}}) {
        const std::string s = surface;
        r.terms[s + ".chamfer"] = terms->chamfer.item();
        r.terms[s + ".matched"] = terms->matched.item();
        r.terms[s + ".curvature"] = terms->curvature.item();
        r.terms[s + ".spring"] = terms->spring.item();
        r.terms[s + ".edge"] = terms->edge.item();
    }
    if (!std::isfinite(r.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at iteration " << iteration << " (seed " << config_.seed << "):";
        for (const auto& [k, v] : r.terms) msg << ' ' << k << '=' << v;
        throw std::runtime_error(msg.str());
    }
    if (total) *total = t;
    return r;
}

LossReport Trainer::train_step(const Volume& image, const TrainingSubject& subject, std::int64_t iteration) {
    const auto& params = net_.params().all();
    ad::zero_grad(params);
    Tensor total;
    LossReport r = forward(image, subject, iteration, &total);
    ad::backward(total);
    adamw_step(params, adam_, r.lr, config_.adamw);
    // Parameters and moments live in float32 so checkpoints restore the exact state.
    for (std::size_t p = 0; p < params.size(); ++p) {
        round_to_float(params[p].node()->value);
        round_to_float(adam_.m[p]);
        round_to_float(adam_.v[p]);
    }
    return r;
}

LossReport Trainer::evaluate_loss(const Volume& image, const TrainingSubject& subject, std::int64_t iteration) const {
    ad::NoGradGuard no_grad;
    return forward(image, subject, iteration, nullptr);
}

double Trainer::validation_chamfer(const std::vector<TrainingSubject>& subjects, const std::vector<Volume>& images) const {
    if (subjects.empty() || subjects.size() != images.size()) throw std::invalid_argument("validation: subjects and images differ");
    double acc = 0;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const Reconstruction rec = reconstruct(net_, images[i], subjects[i].sample.template_affine);
        const auto& wt = subjects[i].wm_target;
        const auto& gt = subjects[i].gm_target;
        acc += chamfer_distance(sample_surface(rec.wm, wt.points.size(), kMetricSeed).points, wt.points);
        acc += chamfer_distance(sample_surface(rec.gm, gt.points.size(), kMetricSeed + 1).points, gt.points);
    }
    return acc / static_cast<double>(subjects.size());
}

CheckpointData Trainer::checkpoint(std::int64_t iteration, const std::string& state_json) const {
    CheckpointData d = snapshot(net_, init_seed_);
    d.iteration = iteration;
    json state = json::parse(state_json);
    state["adam_step"] = adam_.step;
    state["train_config"] = json::parse(to_json(config_));
    d.state_json = state.dump();
    const auto& params = net_.params().all();
    for (std::size_t p = 0; p < params.size() && p < adam_.m.size(); ++p) {
        if (adam_.m[p].empty()) continue;
        d.arrays.push_back({"adam.m/" + params[p].name(), params[p].shape(), adam_.m[p]});
        d.arrays.push_back({"adam.v/" + params[p].name(), params[p].shape(), adam_.v[p]});
    }
    return d;
}

std::vector<Volume> validation_images(const std::vector<TrainingSubject>& subjects, const SynthConfig& synth,
                                      std::uint64_t seed) {
    std::vector<Volume> out;
    for (std::size_t i = 0; i < subjects.size(); ++i) out.push_back(generate(subjects[i].sample, synth, derive_seed(seed, i)).image);
    return out;
}

namespace {

struct Sample {
    std::int64_t iteration = 0;
    std::size_t subject = 0;
    Volume image;
};

// Single-producer, single-consumer FIFO with a capacity bound.
class SampleQueue {
public:
    explicit SampleQueue(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}
    bool push(Sample s) {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
        if (closed_) return false;
        items_.push_back(std::move(s));
        not_empty_.notify_one();
        return true;
    }
    std::optional<Sample> pop() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return !items_.empty() || closed_ || error_; });
        if (error_) std::rethrow_exception(error_);
        if (items_.empty()) return std::nullopt;
        Sample s = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return s;
    }
    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        not_full_.notify_all();
        not_empty_.notify_all();
    }
    void fail(std::exception_ptr e) {
        std::lock_guard lock(mu_);
        error_ = e;
        not_empty_.notify_all();
    }

private:
    std::size_t capacity_;
    std::deque<Sample> items_;
    bool closed_ = false;
    std::exception_ptr error_;
    std::mutex mu_;
    std::condition_variable not_full_, not_empty_;
};

Sample synthesize(const TrainConfig& c, const std::vector<TrainingSubject>& train, std::int64_t it) {
    Sample s;
    s.iteration = it;
    s.subject = static_cast<std::size_t>(step_seed(c, it, 3) % train.size());
    s.image = generate(train[s.subject].sample, c.synth, step_seed(c, it, 4)).image;
    return s;
}

}  // namespace

TrainResult run_training(const TrainConfig& config, const std::vector<TrainingSubject>& train,
                         const std::vector<TrainingSubject>& validation, const TrainRunOptions& options) {
    config.validate();
    if (train.empty() || validation.empty()) throw std::invalid_argument("run_training: empty train or validation set");
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    Trainer trainer = options.resume ? Trainer(*options.resume) : Trainer(config, derive_seed(config.seed, 11));
    trainer.config() = config;
    const auto val_images = validation_images(validation, config.synth, derive_seed(config.seed, 12));

    std::ofstream log_file;
    if (!options.log_path.empty()) {
        log_file.open(options.log_path, options.resume ? std::ios::app : std::ios::trunc);
        if (!log_file) throw std::runtime_error("cannot open log " + options.log_path.string());
    }
    auto emit = [&](const json& rec) {
        const std::string line = rec.dump();
        if (log_file) log_file << line << '\n' << std::flush;
        if (options.on_log) options.on_log(line);
    };

    TrainResult result;
    std::int64_t it = 0;
    double plateau_best = std::numeric_limits<double>::infinity();
    int bad = 0;
    std::int64_t validated_at = -1;
    result.best_validation = std::numeric_limits<double>::infinity();
    if (options.resume) {
        const json st = json::parse(options.resume->state_json);
        it = options.resume->iteration;
        plateau_best = st.value("plateau_best", plateau_best);
        bad = st.value("bad", 0);
        validated_at = st.value("validated_at", std::int64_t{-1});
        result.initial_validation = st.value("initial_validation", 0.0);
        result.best_validation = st.value("best_validation", result.best_validation);
        for (const auto& v : st.value("validations", json::array())) result.validations.push_back({v.at(0), v.at(1)});
        if (!options.checkpoint_path.empty() && std::filesystem::exists(options.checkpoint_path)) {
            result.best = read_checkpoint(options.checkpoint_path);
        }
    }
    auto state_json = [&] {
        json v = json::array();
        for (const auto& r : result.validations) v.push_back({r.iteration, r.chamfer});
        return json{{"plateau_best", plateau_best}, {"bad", bad}, {"validated_at", validated_at},
                    {"initial_validation", result.initial_validation}, {"best_validation", result.best_validation},
                    {"validations", v}}
            .dump();
    };

    auto validate = [&]() -> bool {
        const double v = trainer.validation_chamfer(validation, val_images);
        validated_at = it;
        if (result.validations.empty()) result.initial_validation = v;
        result.validations.push_back({it, v});
        result.final_validation = v;
        if (v < result.best_validation || result.best.arrays.empty()) {
            result.best_validation = std::min(result.best_validation, v);
            result.best = trainer.checkpoint(it, state_json());
            if (!options.checkpoint_path.empty()) write_checkpoint(options.checkpoint_path, result.best);
        }
        if (plateau_best - v > config.min_delta) {
            plateau_best = v;
            bad = 0;
        } else {
            ++bad;
        }
        emit({{"type", "validation"}, {"iteration", it}, {"chamfer", v}, {"best", result.best_validation},
              {"wall_time", elapsed()}});
        return bad >= config.patience;
    };

    const std::int64_t end = options.stop_at >= 0 ? std::min<std::int64_t>(options.stop_at, config.max_iterations)
                                                   : config.max_iterations;
    SampleQueue queue(static_cast<std::size_t>(std::max(1, config.prefetch)));
    std::thread producer;
    if (config.prefetch > 0 && it < end) {
        producer = std::thread([&, start = it] {
            try {
                for (std::int64_t k = start; k < end; ++k)
                    if (!queue.push(synthesize(config, train, k))) return;
                queue.close();
            } catch (...) {
                queue.fail(std::current_exception());
            }
        });
    }
    auto next_sample = [&]() -> Sample {
        if (!producer.joinable()) return synthesize(config, train, it);
        auto s = queue.pop();
        if (!s || s->iteration != it) throw std::logic_error("sample queue out of order");
        return std::move(*s);
    };

    try {
        for (;;) {
            if (it % config.validation_interval == 0 && validated_at != it) {
                if (validate()) {
                    result.plateaued = true;
                    break;
                }
            }
            if (it >= end) break;
            const Sample s = next_sample();
            const LossReport r = trainer.train_step(s.image, train[s.subject], it);
            ++it;
            if (config.log_interval > 0 && (it % config.log_interval == 0 || it == end)) {
                emit({{"type", "step"}, {"iteration", r.iteration}, {"lr", r.lr}, {"total", r.total}, {"losses", r.terms},
                      {"subject", train[s.subject].sample.id}, {"wall_time", elapsed()}});
            }
        }
        if (it >= config.max_iterations && validated_at != it && !result.plateaued) validate();
    } catch (...) {
        queue.close();
        if (producer.joinable()) producer.join();
        throw;
    }
    queue.close();
    if (producer.joinable()) producer.join();

    result.iterations = it;
    result.last = trainer.checkpoint(it, state_json());
    if (!options.checkpoint_path.empty()) {
        write_checkpoint(options.checkpoint_path.string() + ".last", result.last);
        if (result.best.arrays.empty()) write_checkpoint(options.checkpoint_path, result.last);
    }
    return result;
}

}  // namespace cortexflow

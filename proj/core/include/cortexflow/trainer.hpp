#pragma once

#include "cortexflow/autodiff.hpp"
#include "cortexflow/checkpoint.hpp"
#include "cortexflow/losses.hpp"
#include "cortexflow/nn.hpp"
#include "cortexflow/phantom.hpp"
#include "cortexflow/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cortexflow {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    std::int64_t step = 0;
    std::vector<std::vector<double>> m, v;  // one per parameter, lazily sized
};

/// One decoupled-weight-decay Adam update of a single array (`step` is the 1-based step index).
/// Throws std::invalid_argument naming `name` on a non-finite gradient.
void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::int64_t step, double lr, const AdamWOptions& options, const std::string& name = "param");

/// Updates every parameter from its accumulated gradient (missing gradients count as zero).
void adamw_step(const std::vector<ad::Tensor>& params, AdamWState& state, double lr, const AdamWOptions& options);

struct TrainConfig {
    std::string profile = "desk";
    double lr_initial = 1e-4;
    double lr_final = 5e-5;
    AdamWOptions adamw;
    int max_iterations = 5000;
    int validation_interval = 500;
    int patience = 5;
    double min_delta = 1e-4;
    std::uint64_t seed = 0;
    LossSchedule schedule;
    bool schedule_horizon_auto = true;  // horizon = 25% of max_iterations
    std::size_t loss_samples = 100000;
    int train_subjects = 32;
    int validation_subjects = 4;
    int prefetch = 2;  // bounded sample queue; 0 synthesizes inline
    int log_interval = 10;
    SynthConfig synth;
    PhantomCohortConfig cohort;

    static TrainConfig for_profile(const std::string& profile);
    ModelConfig model() const;
    void validate() const;
    double learning_rate(double iteration) const;
    LossSchedule effective_schedule() const;
};

/// Parses JSON over the defaults of the profile named in the document ("desk" when absent).
TrainConfig train_config_from_json(const std::string& text);
std::string to_json(const TrainConfig& c);

/// A training subject with its precomputed loss targets.
struct TrainingSubject {
    SubjectSample sample;
    TargetSurface wm_target;
    TargetSurface gm_target;
};
TrainingSubject prepare_subject(SubjectSample sample, std::size_t samples, std::uint64_t seed);
std::vector<TrainingSubject> make_phantom_subjects(const PhantomCohortConfig& cohort, int count, std::size_t samples,
                                                   std::uint64_t seed);

struct LossReport {
    std::int64_t iteration = 0;
    double lr = 0;
    double total = 0;
    std::map<std::string, double> terms;  // "<surface>.<loss>"
};

/// Parameters, optimizer state and the loss-target topology for one run.
class Trainer {
public:
    Trainer(const TrainConfig& config, std::uint64_t init_seed);
    explicit Trainer(const CheckpointData& resume);

    /// Forward, scheduled loss, reverse pass and AdamW update on one synthesized image.
    /// Throws std::runtime_error with a diagnostic on a non-finite loss.
    LossReport train_step(const Volume& image, const TrainingSubject& subject, std::int64_t iteration);
    /// Same forward pass and loss without an update.
    LossReport evaluate_loss(const Volume& image, const TrainingSubject& subject, std::int64_t iteration) const;
    /// Mean WM + GM chamfer over the subjects and their fixed images.
    double validation_chamfer(const std::vector<TrainingSubject>& subjects, const std::vector<Volume>& images) const;

    CheckpointData checkpoint(std::int64_t iteration, const std::string& state_json = "{}") const;

    const Network& network() const { return net_; }
    Network& network() { return net_; }
    const TrainConfig& config() const { return config_; }
    TrainConfig& config() { return config_; }
    const AdamWState& optimizer() const { return adam_; }

private:
    LossReport forward(const Volume& image, const TrainingSubject& subject, std::int64_t iteration, ad::Tensor* total) const;

    TrainConfig config_;
    std::uint64_t init_seed_ = 0;
    Network net_;
    Topology topology_;
    AdamWState adam_;
};

struct ValidationRecord {
    std::int64_t iteration = 0;
    double chamfer = 0;
};

struct TrainResult {
    CheckpointData best;
    CheckpointData last;
    double initial_validation = 0;
    double best_validation = 0;
    double final_validation = 0;
    std::int64_t iterations = 0;  // completed optimizer steps
    bool plateaued = false;
    std::vector<ValidationRecord> validations;
};

struct TrainRunOptions {
    std::optional<CheckpointData> resume;      // continue from a "last" checkpoint
    std::int64_t stop_at = -1;                  // halt after this many total steps (< 0: no limit)
    std::filesystem::path checkpoint_path;      // best checkpoint; "<path>.last" holds the resume state
    std::filesystem::path log_path;             // newline-delimited JSON progress
    std::function<void(const std::string&)> on_log;  // receives every log line
};

/// Iterates train_step over freshly synthesized images of `train`, validates every
/// `validation_interval` steps and stops on a plateau or at max_iterations.
TrainResult run_training(const TrainConfig& config, const std::vector<TrainingSubject>& train,
                         const std::vector<TrainingSubject>& validation, const TrainRunOptions& options = {});

/// Fixed validation images, one per subject.
std::vector<Volume> validation_images(const std::vector<TrainingSubject>& subjects, const SynthConfig& synth,
                                      std::uint64_t seed);

}  // namespace cortexflow

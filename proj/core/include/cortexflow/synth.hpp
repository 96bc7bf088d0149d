#pragma once

#include "cortexflow/mesh.hpp"
#include "cortexflow/volume.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cortexflow {

/// Label codes used in synthetic label volumes. Codes >= kFirstExtraLabel are
/// non-brain classes (k-means clusters).
namespace labels {
inline constexpr int background = 0;
inline constexpr int wm = 1;
inline constexpr int gm = 2;
inline constexpr int csf = 3;
inline constexpr int first_extra = 4;
}  // namespace labels

struct Range {
    double lo = 0, hi = 0;
};

/// Every knob of the domain randomization. All fields have defaults and can be
/// overridden from JSON.
struct SynthConfig {
    std::uint64_t seed = 0;
    Range label_mean{0.0, 1.0};
    Range label_std{0.01, 0.10};
    double min_contrast = 0.10;
    int max_contrast_retries = 1000;
    Range smoothing_std{0.0, 1.0};  // voxels
    Range pv_rho{2.0, 10.0};        // 1/mm
    double gamma_probability = 0.33;
    Range gamma_log{std::log(0.5), std::log(2.0)};
    double bias_probability = 0.75;
    int bias_grid = 4;
    double bias_log_std = 0.3;
    double anisotropic_probability = 0.5;
    Range isotropic_spacing{1.0, 3.0};   // mm
    Range anisotropic_spacing{1.0, 8.0};  // mm, one axis

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

/// Parses JSON; absent fields keep their defaults. Malformed JSON throws
/// std::invalid_argument with the line and column of the error.
SynthConfig synth_config_from_json(std::string_view text);
std::string to_json(const SynthConfig& c);

/// Generative precursors of one synthetic scan. All volumes share one grid.
struct SubjectSample {
    std::string id;
    double age = 0;
    Volume labels;
    Volume wm_sdf;  // mm, positive inside
    Volume gm_sdf;
    Mesh wm;        // ground truth in template topology
    Mesh gm;
    Affine template_affine = Affine::Identity();  // places the unit-sphere template in world space
    std::optional<Volume> intensity;
    std::optional<Volume> brain_mask;

    void validate() const;
};

/// Lloyd's algorithm on the scalar intensities inside `mask` (non-zero voxels).
/// Output holds cluster index + 1 inside the mask (clusters ordered by centroid), 0 elsewhere.
Volume kmeans_labels(const Volume& intensity, const Volume& mask, int k, std::uint64_t seed,
                     std::vector<double>* sse_trace = nullptr);

/// Partial-volume fraction 1 / (1 + exp(-rho d)).
inline double pv_fraction(double d, double rho) { return 1.0 / (1.0 + std::exp(-rho * d)); }

struct PvWeights {
    double wm = 0, gm = 0, csf = 0;
};
PvWeights pv_weights(double d_wm, double d_gm, double rho);

struct LabelContrast {
    double mean = 0, std = 0;
};
using Contrast = std::map<int, LabelContrast>;

/// Draws per-label means/stds, redrawing until WM/GM/CSF means are pairwise at least
/// `min_contrast` apart. Throws std::runtime_error after `max_contrast_retries` attempts.
Contrast sample_contrast(const SynthConfig& config, const std::vector<int>& label_set, std::uint64_t seed);

/// Label-lookup mean image with sigmoid partial-volume blending inside the brain (before smoothing and noise).
Volume compose_mean_image(const SubjectSample& subject, const Contrast& contrast, double rho);

struct ComposeReport {
    double rho = 0;
    double smoothing_std = 0;
};

/// Mean image, Gaussian smoothing with random width, then per-label Gaussian noise.
Volume compose_image(const SubjectSample& subject, const Contrast& contrast, const SynthConfig& config,
                     std::uint64_t seed, ComposeReport* report = nullptr);

/// ((x - min) / (max - min))^gamma mapped back to [min, max]. Constant images are returned unchanged.
Volume apply_gamma(const Volume& img, double gamma);

struct BiasField {
    int grid = 0;
    std::vector<double> controls;  // grid^3 log-gain values, x fastest
    Volume log_field;              // trilinear upsampling of the controls onto the image grid
};
BiasField make_bias_field(const Volume& like, int grid, std::vector<double> controls);
BiasField sample_bias_field(const Volume& like, const SynthConfig& config, std::uint64_t seed);
Volume apply_bias_field(const Volume& img, const BiasField& field);
Volume apply_bias_field(const Volume& img, const SynthConfig& config, std::uint64_t seed);

/// Slice-profile blur (Gaussian, FWHM = spacing), downsample to `spacing`, trilinear resample
/// back to a 1 mm grid, then min-max normalize to [0, 1].
Volume simulate_resolution(const Volume& img, const Vec3& spacing);

/// Draws a target spacing from the resolution menu.
Vec3 sample_spacing(const SynthConfig& config, std::uint64_t seed);

struct GenerationReport {
    bool gamma_applied = false;
    double gamma = 1.0;
    bool bias_applied = false;
    Vec3 spacing = Vec3::Ones();
    double rho = 0;
    double smoothing_std = 0;
};

struct SyntheticScan {
    Volume image;  // 1 mm isotropic, values in [0, 1]
    Mesh wm, gm;
    GenerationReport report;
};

/// Full pipeline: contrast, composition, gamma (p), bias (p), resolution, normalization.
SyntheticScan generate(const SubjectSample& subject, const SynthConfig& config, std::uint64_t seed);

/// Stage-specific seed derived from a generation seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace cortexflow

#include "cortexflow/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace cortexflow {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over (seed, stream)
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

enum Stream : std::uint64_t {
    kContrast = 1,
    kCompose = 2,
    kGammaCoin = 3,
    kGammaValue = 4,
    kBiasCoin = 5,
    kBiasField = 6,
    kResolution = 7,
};

void check_range(const Range& r, const char* name, bool allow_equal = false) {
    if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi || (!allow_equal && r.lo == r.hi)) {
        throw std::invalid_argument(std::string("SynthConfig: invalid range '") + name + "'");
    }
}

void check_probability(double p, const char* name) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument(std::string("SynthConfig: '") + name + "' must be in [0, 1]");
}

double uniform(std::mt19937_64& rng, const Range& r) {
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

bool coin(std::uint64_t seed, double p) {
    std::mt19937_64 rng(seed);
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

void read_range(const json& j, const char* key, Range& r) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw std::invalid_argument(std::string("SynthConfig: '") + key + "' must be [lo, hi]");
    r.lo = v[0].get<double>();
    r.hi = v[1].get<double>();
}

template <typename T>
void read_value(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::pair<int, int> line_column(std::string_view text, std::size_t byte) {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') ++line, col = 1;
        else ++col;
    }
    return {line, col};
}

}  // namespace

void SynthConfig::validate() const {
    check_range(label_mean, "label_mean");
    check_range(label_std, "label_std", true);
    if (label_std.lo < 0) throw std::invalid_argument("SynthConfig: 'label_std' must be non-negative");
    if (!(min_contrast >= 0)) throw std::invalid_argument("SynthConfig: 'min_contrast' must be >= 0");
    if (max_contrast_retries < 1) throw std::invalid_argument("SynthConfig: 'max_contrast_retries' must be >= 1");
    check_range(smoothing_std, "smoothing_std", true);
    check_range(pv_rho, "pv_rho", true);
    if (!(pv_rho.lo > 0)) throw std::invalid_argument("SynthConfig: 'pv_rho' must be positive");
    check_probability(gamma_probability, "gamma_probability");
    check_range(gamma_log, "gamma_log", true);
    check_probability(bias_probability, "bias_probability");
    if (bias_grid < 2) throw std::invalid_argument("SynthConfig: 'bias_grid' must be >= 2");
    if (!(bias_log_std >= 0)) throw std::invalid_argument("SynthConfig: 'bias_log_std' must be >= 0");
    check_probability(anisotropic_probability, "anisotropic_probability");
    check_range(isotropic_spacing, "isotropic_spacing", true);
    check_range(anisotropic_spacing, "anisotropic_spacing", true);
    if (isotropic_spacing.lo < 1.0 || anisotropic_spacing.lo < 1.0) {
        throw std::invalid_argument("SynthConfig: simulated spacing must be >= 1 mm");
    }
}

SynthConfig synth_config_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
        throw std::invalid_argument("malformed JSON at line " + std::to_string(line) + ", column " +
                                    std::to_string(col) + ": " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("SynthConfig: top-level JSON value must be an object");
    SynthConfig c;
    try {
        read_value(j, "seed", c.seed);
        read_range(j, "label_mean", c.label_mean);
        read_range(j, "label_std", c.label_std);
        read_value(j, "min_contrast", c.min_contrast);
        read_value(j, "max_contrast_retries", c.max_contrast_retries);
        read_range(j, "smoothing_std", c.smoothing_std);
        read_range(j, "pv_rho", c.pv_rho);
        read_value(j, "gamma_probability", c.gamma_probability);
        read_range(j, "gamma_log", c.gamma_log);
        read_value(j, "bias_probability", c.bias_probability);
        read_value(j, "bias_grid", c.bias_grid);
        read_value(j, "bias_log_std", c.bias_log_std);
        read_value(j, "anisotropic_probability", c.anisotropic_probability);
        read_range(j, "isotropic_spacing", c.isotropic_spacing);
        read_range(j, "anisotropic_spacing", c.anisotropic_spacing);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("SynthConfig: ") + e.what());
    }
    c.validate();
    return c;
}

std::string to_json(const SynthConfig& c) {
    auto range = [](const Range& r) { return json::array({r.lo, r.hi}); };
    json j = {
        {"seed", c.seed},
        {"label_mean", range(c.label_mean)},
        {"label_std", range(c.label_std)},
        {"min_contrast", c.min_contrast},
        {"max_contrast_retries", c.max_contrast_retries},
        {"smoothing_std", range(c.smoothing_std)},
        {"pv_rho", range(c.pv_rho)},
        {"gamma_probability", c.gamma_probability},
        {"gamma_log", range(c.gamma_log)},
        {"bias_probability", c.bias_probability},
        {"bias_grid", c.bias_grid},
        {"bias_log_std", c.bias_log_std},
        {"anisotropic_probability", c.anisotropic_probability},
        {"isotropic_spacing", range(c.isotropic_spacing)},
        {"anisotropic_spacing", range(c.anisotropic_spacing)},
    };
    return j.dump(2);
}

void SubjectSample::validate() const {
    if (!labels.same_grid(wm_sdf) || !labels.same_grid(gm_sdf)) {
        throw std::invalid_argument("SubjectSample '" + id + "': label and SDF volumes are on different grids");
    }
    if (intensity && !labels.same_grid(*intensity)) throw std::invalid_argument("SubjectSample: intensity grid mismatch");
    if (brain_mask && !labels.same_grid(*brain_mask)) throw std::invalid_argument("SubjectSample: mask grid mismatch");
    if (wm.vertex_count() != gm.vertex_count()) throw std::invalid_argument("SubjectSample: WM/GM vertex counts differ");
}

Volume kmeans_labels(const Volume& intensity, const Volume& mask, int k, std::uint64_t seed,
                     std::vector<double>* sse_trace) {
    if (k < 1) throw std::invalid_argument("kmeans_labels: k must be >= 1");
    if (!intensity.same_grid(mask)) throw std::invalid_argument("kmeans_labels: intensity and mask grids differ");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        if (mask.data[i] != 0) idx.push_back(i);
    }
    if (idx.empty()) throw std::invalid_argument("kmeans_labels: mask is empty");
    std::vector<double> x(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) x[i] = intensity.data[idx[i]];
    {
        std::set<double> distinct(x.begin(), x.end());
        if (static_cast<int>(distinct.size()) < k) {
            throw std::invalid_argument("kmeans_labels: fewer distinct intensities (" + std::to_string(distinct.size()) +
                                        ") than clusters (" + std::to_string(k) + ")");
        }
    }

    // k-means++ seeding.
    std::mt19937_64 rng(seed);
    std::vector<double> centers;
    centers.push_back(x[std::uniform_int_distribution<std::size_t>(0, x.size() - 1)(rng)]);
    std::vector<double> d2(x.size());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
            d2[i] = best;
            total += best;
        }
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        std::size_t pick = 0;
        for (; pick + 1 < x.size(); ++pick) {
            if (d2[pick] > 0 && u < d2[pick]) break;
            u -= d2[pick];
        }
        while (d2[pick] == 0) pick = (pick + 1) % x.size();
        centers.push_back(x[pick]);
    }

    std::vector<int> assign(x.size(), -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < x.size(); ++i) {
            int best = 0;
            for (int c = 1; c < k; ++c) {
                if (std::abs(x[i] - centers[c]) < std::abs(x[i] - centers[best])) best = c;
            }
            if (best != assign[i]) assign[i] = best, changed = true;
        }
        std::vector<double> sum(k, 0.0);
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < x.size(); ++i) sum[assign[i]] += x[i], ++count[assign[i]];
        for (int c = 0; c < k; ++c) {
            if (count[c] > 0) centers[c] = sum[c] / static_cast<double>(count[c]);
        }
        if (sse_trace) {
            double sse = 0;
            for (std::size_t i = 0; i < x.size(); ++i) sse += (x[i] - centers[assign[i]]) * (x[i] - centers[assign[i]]);
            sse_trace->push_back(sse);
        }
        if (!changed) break;
    }

    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return centers[a] < centers[b]; });
    std::vector<int> rank(k);
    for (int r = 0; r < k; ++r) rank[order[r]] = r;

    Volume out(intensity.dims, intensity.affine, 0.0f);
    for (std::size_t i = 0; i < idx.size(); ++i) out.data[idx[i]] = static_cast<float>(rank[assign[i]] + 1);
    return out;
}

PvWeights pv_weights(double d_wm, double d_gm, double rho) {
    PvWeights w;
    w.wm = pv_fraction(d_wm, rho);
    w.gm = std::clamp(pv_fraction(d_gm, rho) - w.wm, 0.0, 1.0);
    w.csf = 1.0 - w.wm - w.gm;
    return w;
}

Contrast sample_contrast(const SynthConfig& config, const std::vector<int>& label_set, std::uint64_t seed) {
    for (int required : {labels::wm, labels::gm, labels::csf}) {
        if (std::find(label_set.begin(), label_set.end(), required) == label_set.end()) {
            throw std::invalid_argument("sample_contrast: WM, GM and CSF labels must be present");
        }
    }
    const double d = config.min_contrast;
    std::mt19937_64 rng(seed);
    for (int attempt = 0; attempt < config.max_contrast_retries; ++attempt) {
        Contrast c;
        for (int label : label_set) c[label] = {uniform(rng, config.label_mean), uniform(rng, config.label_std)};
        const double wm = c[labels::wm].mean, gm = c[labels::gm].mean, csf = c[labels::csf].mean;
        if (std::abs(wm - gm) >= d && std::abs(gm - csf) >= d && std::abs(wm - csf) >= d) return c;
    }
    throw std::runtime_error("sample_contrast: minimum contrast " + std::to_string(d) + " not reached after " +
                             std::to_string(config.max_contrast_retries) + " draws");
}

namespace {

std::vector<int> present_labels(const Volume& label_volume) {
    std::set<int> s;
    for (float v : label_volume.data) s.insert(static_cast<int>(std::lround(v)));
    return {s.begin(), s.end()};
}

bool in_brain(int label) { return label == labels::wm || label == labels::gm || label == labels::csf; }

}  // namespace

Volume compose_mean_image(const SubjectSample& subject, const Contrast& contrast, double rho) {
    subject.validate();
    Volume img(subject.labels.dims, subject.labels.affine, 0.0f);
    const double mu_wm = contrast.at(labels::wm).mean, mu_gm = contrast.at(labels::gm).mean;
    const double mu_csf = contrast.at(labels::csf).mean;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const int label = static_cast<int>(std::lround(subject.labels.data[i]));
        if (in_brain(label)) {
            const auto w = pv_weights(subject.wm_sdf.data[i], subject.gm_sdf.data[i], rho);
            img.data[i] = static_cast<float>(w.wm * mu_wm + w.gm * mu_gm + w.csf * mu_csf);
        } else {
            auto it = contrast.find(label);
            img.data[i] = static_cast<float>(it == contrast.end() ? 0.0 : it->second.mean);
        }
    }
    return img;
}

Volume compose_image(const SubjectSample& subject, const Contrast& contrast, const SynthConfig& config,
                     std::uint64_t seed, ComposeReport* report) {
    std::mt19937_64 rng(seed);
    const double rho = uniform(rng, config.pv_rho);
    const double smooth = uniform(rng, config.smoothing_std);
    Volume img = compose_mean_image(subject, contrast, rho);
    img = gaussian_blur(img, Vec3::Constant(smooth));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const int label = static_cast<int>(std::lround(subject.labels.data[i]));
        auto it = contrast.find(label);
        const double sigma = it == contrast.end() ? 0.0 : it->second.std;
        img.data[i] = static_cast<float>(img.data[i] + sigma * normal(rng));
    }
    if (report) *report = {rho, smooth};
    return img;
}

Volume apply_gamma(const Volume& img, double gamma) {
    const auto [lo, hi] = value_range(img);
    if (!(hi > lo)) return img;
    Volume out = img;
    const double span = static_cast<double>(hi) - lo;
    for (auto& x : out.data) {
        const double t = std::clamp((x - static_cast<double>(lo)) / span, 0.0, 1.0);
        x = static_cast<float>(lo + span * std::pow(t, gamma));
    }
    return out;
}

BiasField make_bias_field(const Volume& like, int grid, std::vector<double> controls) {
    if (grid < 2) throw std::invalid_argument("make_bias_field: grid must be >= 2");
    if (controls.size() != static_cast<std::size_t>(grid * grid * grid)) {
        throw std::invalid_argument("make_bias_field: expected grid^3 control values");
    }
    BiasField f;
    f.grid = grid;
    f.controls = std::move(controls);
    Volume ctrl({grid, grid, grid}, Affine::Identity());
    for (std::size_t i = 0; i < f.controls.size(); ++i) ctrl.data[i] = static_cast<float>(f.controls[i]);
    f.log_field = Volume(like.dims, like.affine, 0.0f);
    for (int k = 0; k < like.dims[2]; ++k) {
        for (int j = 0; j < like.dims[1]; ++j) {
            for (int i = 0; i < like.dims[0]; ++i) {
                Vec3 c;
                const int ijk[3] = {i, j, k};
                for (int a = 0; a < 3; ++a) {
                    c[a] = like.dims[a] > 1 ? ijk[a] * (grid - 1.0) / (like.dims[a] - 1.0) : 0.0;
                }
                f.log_field.at(i, j, k) = static_cast<float>(sample_trilinear(ctrl, c));
            }
        }
    }
    return f;
}

BiasField sample_bias_field(const Volume& like, const SynthConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, config.bias_log_std);
    std::vector<double> controls(static_cast<std::size_t>(config.bias_grid * config.bias_grid * config.bias_grid));
    for (auto& c : controls) c = normal(rng);
    return make_bias_field(like, config.bias_grid, std::move(controls));
}

Volume apply_bias_field(const Volume& img, const BiasField& field) {
    if (!img.same_grid(field.log_field)) throw std::invalid_argument("apply_bias_field: grid mismatch");
    Volume out = img;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = static_cast<float>(out.data[i] * std::exp(static_cast<double>(field.log_field.data[i])));
    }
    return out;
}

Volume apply_bias_field(const Volume& img, const SynthConfig& config, std::uint64_t seed) {
    return apply_bias_field(img, sample_bias_field(img, config, seed));
}

Volume simulate_resolution(const Volume& img, const Vec3& spacing) {
    const Vec3 native = img.spacing();
    constexpr double fwhm_to_sigma = 1.0 / 2.355;
    Vec3 sigma_vox;
    Vec3 step;  // low-resolution sample step in native voxels
    for (int a = 0; a < 3; ++a) {
        if (spacing[a] < native[a] - 1e-9) {
            throw std::invalid_argument("simulate_resolution: target spacing " + std::to_string(spacing[a]) +
                                        " mm is finer than the native " + std::to_string(native[a]) + " mm");
        }
        const double s_target = spacing[a] * fwhm_to_sigma, s_native = native[a] * fwhm_to_sigma;
        sigma_vox[a] = std::sqrt(std::max(0.0, s_target * s_target - s_native * s_native)) / native[a];
        step[a] = spacing[a] / native[a];
    }
    Volume out = img;
    if ((step.array() > 1.0 + 1e-9).any()) {
        const Volume blurred = gaussian_blur(img, sigma_vox);
        std::array<int, 3> low_dims{};
        for (int a = 0; a < 3; ++a) low_dims[a] = static_cast<int>(std::floor((img.dims[a] - 1) / step[a] + 1e-9)) + 1;
        Volume low(low_dims, Affine::Identity());
        for (int k = 0; k < low_dims[2]; ++k) {
            for (int j = 0; j < low_dims[1]; ++j) {
                for (int i = 0; i < low_dims[0]; ++i) {
                    low.at(i, j, k) = static_cast<float>(
                        sample_trilinear(blurred, Vec3(i * step[0], j * step[1], k * step[2])));
                }
            }
        }
        for (int k = 0; k < img.dims[2]; ++k) {
            for (int j = 0; j < img.dims[1]; ++j) {
                for (int i = 0; i < img.dims[0]; ++i) {
                    out.at(i, j, k) =
                        static_cast<float>(sample_trilinear(low, Vec3(i / step[0], j / step[1], k / step[2])));
                }
            }
        }
    }
    if (!is_isotropic(out, 1.0)) out = resample_isotropic(out, 1.0);
    minmax_normalize(out);
    return out;
}

Vec3 sample_spacing(const SynthConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < config.anisotropic_probability) {
        const int axis = std::uniform_int_distribution<int>(0, 2)(rng);
        Vec3 s = Vec3::Ones();
        s[axis] = uniform(rng, config.anisotropic_spacing);
        return s;
    }
    return Vec3::Constant(uniform(rng, config.isotropic_spacing));
}

SyntheticScan generate(const SubjectSample& subject, const SynthConfig& config, std::uint64_t seed) {
    config.validate();
    subject.validate();
    SyntheticScan scan;
    const auto contrast = sample_contrast(config, present_labels(subject.labels), derive_seed(seed, kContrast));
    ComposeReport compose_report;
    Volume img = compose_image(subject, contrast, config, derive_seed(seed, kCompose), &compose_report);
    scan.report.rho = compose_report.rho;
    scan.report.smoothing_std = compose_report.smoothing_std;

    if (coin(derive_seed(seed, kGammaCoin), config.gamma_probability)) {
        std::mt19937_64 rng(derive_seed(seed, kGammaValue));
        scan.report.gamma_applied = true;
        scan.report.gamma = std::exp(uniform(rng, config.gamma_log));
        img = apply_gamma(img, scan.report.gamma);
    }
    if (coin(derive_seed(seed, kBiasCoin), config.bias_probability)) {
        scan.report.bias_applied = true;
        img = apply_bias_field(img, config, derive_seed(seed, kBiasField));
    }
    scan.report.spacing = sample_spacing(config, derive_seed(seed, kResolution));
    Vec3 spacing = scan.report.spacing.cwiseMax(img.spacing());
    scan.image = simulate_resolution(img, spacing);
    scan.wm = subject.wm;
    scan.gm = subject.gm;
    return scan;
}

}  // namespace cortexflow

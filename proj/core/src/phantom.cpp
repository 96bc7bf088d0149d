#include "cortexflow/phantom.hpp"

#include "cortexflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace cortexflow {

namespace {

constexpr int kHarmonics = 15;

// Real polynomial harmonics of degree 1..3 evaluated on a unit direction.
std::array<double, kHarmonics> harmonic_basis(const Vec3& d) {
    const double x = d[0], y = d[1], z = d[2];
    return {x,
            y,
            z,
            x * y,
            y * z,
            z * x,
            x * x - y * y,
            3 * z * z - 1,
            x * (x * x - 3 * y * y),
            y * (3 * x * x - y * y),
            z * (x * x - y * y),
            x * y * z,
            x * (5 * z * z - 1),
            y * (5 * z * z - 1),
            z * (5 * z * z - 3)};
}

struct BlobShape {
    std::array<double, kHarmonics> coeffs{};
    double norm = 1.0;  // sup of |sum c_i phi_i| over the sphere (sampled)
};

BlobShape blob_shape(std::uint64_t shape_seed) {
    BlobShape s;
    std::mt19937_64 rng(shape_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < kHarmonics; ++i) {
        const double damping = i < 3 ? 0.5 : (i < 8 ? 1.0 : 0.7);
        s.coeffs[i] = damping * normal(rng);
    }
    const int n = 4000;
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    double sup = 0;
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / n;
        const double r = std::sqrt(1 - z * z);
        const Vec3 d(r * std::cos(golden * i), r * std::sin(golden * i), z);
        const auto phi = harmonic_basis(d);
        double v = 0;
        for (int k = 0; k < kHarmonics; ++k) v += s.coeffs[k] * phi[k];
        sup = std::max(sup, std::abs(v));
    }
    s.norm = sup > 0 ? sup : 1.0;
    return s;
}

double blob_offset(const BlobShape& shape, const Vec3& dir) {
    const auto phi = harmonic_basis(dir);
    double v = 0;
    for (int k = 0; k < kHarmonics; ++k) v += shape.coeffs[k] * phi[k];
    return v / shape.norm;
}

std::vector<double> parse_numbers(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw std::invalid_argument("phantom spec: bad number '" + item + "'");
        }
    }
    return out;
}

}  // namespace

PhantomSpec parse_phantom_spec(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string kind;
    in >> kind;
    PhantomSpec spec;
    if (kind == "two-sphere") spec.kind = PhantomSpec::Kind::TwoSphere;
    else if (kind == "blob") spec.kind = PhantomSpec::Kind::Blob, spec.amplitude = 1.0;
    else throw std::invalid_argument("phantom spec: unknown kind '" + kind + "' (expected two-sphere or blob)");
    std::string token;
    while (in >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("phantom spec: expected key=value, got '" + token + "'");
        const std::string key = token.substr(0, eq);
        const auto values = parse_numbers(token.substr(eq + 1));
        auto need = [&](std::size_t n) {
            if (values.size() != n) throw std::invalid_argument("phantom spec: '" + key + "' takes " + std::to_string(n) + " value(s)");
        };
        if (key == "r") {
            need(2);
            spec.wm_radius = values[0];
            spec.gm_radius = values[1];
        } else if (key == "amp") {
            need(1);
            spec.amplitude = values[0];
        } else if (key == "seed") {
            need(1);
            spec.shape_seed = static_cast<std::uint64_t>(values[0]);
        } else if (key == "center") {
            need(3);
            spec.center = Vec3(values[0], values[1], values[2]);
        } else if (key == "grid") {
            need(1);
            spec.grid = static_cast<int>(values[0]);
        } else if (key == "level") {
            need(1);
            spec.mesh_level = static_cast<int>(values[0]);
        } else if (key == "csf") {
            need(1);
            spec.csf_thickness = values[0];
        } else {
            throw std::invalid_argument("phantom spec: unknown key '" + key + "'");
        }
    }
    if (!(spec.wm_radius > 0) || !(spec.gm_radius > spec.wm_radius)) {
        throw std::invalid_argument("phantom spec: need 0 < r_wm < r_gm");
    }
    if (spec.grid < 8 || spec.mesh_level < 0) throw std::invalid_argument("phantom spec: bad grid or level");
    return spec;
}

double phantom_radius(const PhantomSpec& spec, const Vec3& dir, bool gray) {
    double r = spec.wm_radius;
    if (spec.kind == PhantomSpec::Kind::Blob && spec.amplitude != 0) {
        r += spec.amplitude * blob_offset(blob_shape(spec.shape_seed), dir);
    }
    return gray ? r + (spec.gm_radius - spec.wm_radius) : r;
}

std::array<Mesh, 2> phantom_surfaces(const PhantomSpec& spec, const Mesh& template_mesh) {
    const BlobShape shape = spec.kind == PhantomSpec::Kind::Blob ? blob_shape(spec.shape_seed) : BlobShape{};
    const double thickness = spec.gm_radius - spec.wm_radius;
    std::array<Mesh, 2> out{template_mesh, template_mesh};
    for (std::size_t v = 0; v < template_mesh.vertices.size(); ++v) {
        const Vec3 dir = template_mesh.vertices[v].normalized();
        double r = spec.wm_radius;
        if (spec.kind == PhantomSpec::Kind::Blob) r += spec.amplitude * blob_offset(shape, dir);
        out[0].vertices[v] = spec.center + r * dir;
        out[1].vertices[v] = spec.center + (r + thickness) * dir;
    }
    return out;
}

SubjectSample make_phantom(const PhantomSpec& spec, std::uint64_t seed) {
    Mesh tmpl = build_template(spec.template_vertices);
    for (int l = 0; l < spec.mesh_level; ++l) tmpl = subdivide(tmpl);
    auto surfaces = phantom_surfaces(spec, tmpl);

    SubjectSample s;
    s.wm = std::move(surfaces[0]);
    s.gm = std::move(surfaces[1]);
    const std::array<int, 3> dims{spec.grid, spec.grid, spec.grid};
    const Affine grid = centered_affine(dims, Vec3::Zero());
    const Volume like(dims, grid);
    s.wm_sdf = signed_distance_volume(s.wm, like).sdf;
    s.gm_sdf = signed_distance_volume(s.gm, like).sdf;

    s.labels = Volume(dims, grid, 0.0f);
    Volume intensity(dims, grid, 0.0f);
    Volume brain(dims, grid, 0.0f);
    Volume nonbrain(dims, grid, 0.0f);
    std::mt19937_64 rng(derive_seed(seed, 101));
    std::normal_distribution<double> noise(0.0, 0.02);
    for (std::size_t i = 0; i < s.labels.data.size(); ++i) {
        const double dw = s.wm_sdf.data[i], dg = s.gm_sdf.data[i];
        int label;
        if (dw > 0) label = labels::wm;
        else if (dg > 0) label = labels::gm;
        else if (dg > -spec.csf_thickness) label = labels::csf;
        else label = labels::background;
        s.labels.data[i] = static_cast<float>(label);
        if (label != labels::background) {
            brain.data[i] = 1.0f;
            intensity.data[i] = 0.5f;
        } else {
            nonbrain.data[i] = 1.0f;
            // Layered head tissue outside the CSF shell: bright band, dark band, then air.
            const double u = -dg - spec.csf_thickness;
            const double base = u < 2.0 ? 0.8 : (u < 4.0 ? 0.3 : 0.05);
            intensity.data[i] = static_cast<float>(base + noise(rng));
        }
    }
    bool any_nonbrain = false;
    for (float v : nonbrain.data) any_nonbrain = any_nonbrain || v != 0;
    if (any_nonbrain && spec.nonbrain_classes > 0) {
        const Volume classes = kmeans_labels(intensity, nonbrain, spec.nonbrain_classes, derive_seed(seed, 102));
        for (std::size_t i = 0; i < classes.data.size(); ++i) {
            if (classes.data[i] > 0) s.labels.data[i] = static_cast<float>(labels::first_extra - 1) + classes.data[i];
        }
    }
    s.intensity = std::move(intensity);
    s.brain_mask = std::move(brain);

    const double scale = spec.template_scale * spec.wm_radius;
    s.template_affine = Affine::Identity();
    s.template_affine.block<3, 3>(0, 0) *= scale;
    s.template_affine.block<3, 1>(0, 3) = spec.center;
    s.validate();
    return s;
}

std::vector<PhantomSpec> sample_phantom_specs(const PhantomCohortConfig& config, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<PhantomSpec> specs;
    specs.reserve(count);
    for (int i = 0; i < count; ++i) {
        PhantomSpec p;
        p.grid = config.grid;
        p.mesh_level = config.mesh_level;
        p.kind = unit(rng) < config.blob_fraction ? PhantomSpec::Kind::Blob : PhantomSpec::Kind::TwoSphere;
        p.wm_radius = config.wm_radius_lo + (config.wm_radius_hi - config.wm_radius_lo) * unit(rng);
        p.gm_radius = p.wm_radius + config.thickness_lo + (config.thickness_hi - config.thickness_lo) * unit(rng);
        p.amplitude = p.kind == PhantomSpec::Kind::Blob ? config.amplitude_hi * unit(rng) : 0.0;
        p.shape_seed = rng();
        for (int a = 0; a < 3; ++a) p.center[a] = config.center_jitter * (2 * unit(rng) - 1);
        specs.push_back(p);
    }
    return specs;
}

}  // namespace cortexflow

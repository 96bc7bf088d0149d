#include "cortexflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cortexflow {

namespace {

double evaluate(const std::function<ad::Tensor()>& fn) {
    const double v = fn().item();
    if (!std::isfinite(v)) throw std::runtime_error("gradient_check: non-finite forward value");
    return v;
}

}  // namespace

GradCheckReport gradient_check(const std::function<ad::Tensor()>& fn, const std::vector<ad::Tensor>& inputs,
                               double tolerance, const GradCheckOptions& options) {
    for (const auto& t : inputs) {
        if (!t.requires_grad()) throw std::invalid_argument("gradient_check: input '" + t.name() + "' does not require grad");
        t.node()->grad.assign(t.size(), 0.0);
    }
    const ad::Tensor loss = fn();
    if (!std::isfinite(loss.item())) throw std::runtime_error("gradient_check: non-finite forward value");
    ad::backward(loss);

    GradCheckReport report;
    std::mt19937_64 rng(options.seed);
    for (std::size_t g = 0; g < inputs.size(); ++g) {
        ad::Tensor t = inputs[g];
        std::vector<double> analytic = t.grad();
        for (auto& a : analytic) a *= options.analytic_scale;
        std::vector<std::size_t> entries(t.size());
        std::iota(entries.begin(), entries.end(), 0);
        const bool sample = options.max_entries && entries.size() > options.max_entries;
        if (sample) std::shuffle(entries.begin(), entries.end(), rng);
        const std::size_t wanted = sample ? options.max_entries : entries.size();
        GradCheckGroup group;
        group.name = t.name().empty() ? "input" + std::to_string(g) : t.name();
        ad::NoGradGuard no_grad;
        auto& values = t.mutable_values();
        const double f0 = options.kink_threshold > 0 ? evaluate(fn) : 0.0;
        for (std::size_t n = 0; n < entries.size() && group.checked < wanted; ++n) {
            const std::size_t i = entries[n];
            const double x = values[i];
            const double h = options.step * std::max(1.0, std::abs(x));
            values[i] = x + h;
            const double fp = evaluate(fn);
            values[i] = x - h;
            const double fm = evaluate(fn);
            values[i] = x;
            const double numeric = (fp - fm) / (2 * h);
            if (options.kink_threshold > 0) {
                // Smooth: the second difference scales linearly with the step and the central
                // difference barely moves when the step halves.
                values[i] = x + h / 2;
                const double fp2 = evaluate(fn);
                values[i] = x - h / 2;
                const double fm2 = evaluate(fn);
                values[i] = x;
                const double d1 = (fp - 2 * f0 + fm) / h, d2 = (fp2 - 2 * f0 + fm2) / (h / 2);
                const double half = (fp2 - fm2) / h;
                const double limit = options.kink_threshold * std::max(1.0, std::abs(numeric));
                if (std::abs(d1 - 2 * d2) > limit || std::abs(numeric - half) > limit) {
                    ++group.kinks;
                    continue;
                }
            }
            group.max_abs_error = std::max(group.max_abs_error, std::abs(numeric - analytic[i]));
            group.max_abs_gradient = std::max({group.max_abs_gradient, std::abs(numeric), std::abs(analytic[i])});
            ++group.checked;
        }
        group.relative_error = group.max_abs_gradient > 1e-10 ? group.max_abs_error / group.max_abs_gradient : group.max_abs_error;
        if (group.checked == 0) group.relative_error = std::max(group.relative_error, 1.0);
        report.max_relative_error = std::max(report.max_relative_error, group.relative_error);
        report.groups.push_back(group);
    }
    report.passed = report.max_relative_error < tolerance;
    return report;
}

}  // namespace cortexflow

#pragma once

#include "cortexflow/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cortexflow {

struct GradCheckOptions {
    double step = 1e-5;             // relative to max(1, |x|)
    std::size_t max_entries = 0;    // per input; 0 checks every entry
    std::uint64_t seed = 1;         // picks the entries when subsampling
    double analytic_scale = 1.0;    // multiplies the reverse-mode gradient before comparing
    // Redraw entries whose differences at step and step/2 disagree by more than this times
    // max(1, |slope|), i.e. a kink inside the stencil; 0 keeps every entry.
    double kink_threshold = 0.0;
};

struct GradCheckGroup {
    std::string name;
    std::size_t checked = 0;
    std::size_t kinks = 0;          // entries redrawn because the stencil crossed a kink
    double max_abs_error = 0;
    double max_abs_gradient = 0;
    double relative_error = 0;
};

struct GradCheckReport {
    bool passed = false;
    double max_relative_error = 0;
    std::vector<GradCheckGroup> groups;
};

/// Compares reverse-mode gradients of the scalar `fn()` w.r.t. each of `inputs` against central
/// finite differences. Group error = max |analytic - numeric| / max |gradient|.
/// A group fails outright when every entry lands on a kink.
/// Throws std::runtime_error when the forward pass produces a non-finite value.
GradCheckReport gradient_check(const std::function<ad::Tensor()>& fn, const std::vector<ad::Tensor>& inputs,
                               double tolerance, const GradCheckOptions& options = {});

}  // namespace cortexflow

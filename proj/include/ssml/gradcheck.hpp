#pragma once

#include <span>
#include <string>

#include "ssml/models.hpp"

namespace ssml {

struct GradCheckOptions {
    double h = 1e-3;             // central-difference step
    double tol = 1e-4;           // max |g_a - g_n| / max(1, |g_n|)
    int probes_per_block = 6;    // randomly probed entries per parameter block
    uint64_t seed = 0;
    double pool_tie_margin = 0;  // >0: resample inputs whose pool windows nearly tie
    double relu_tie_margin = 0;  // >0: likewise for pre-activations near the relu kink
    int resample_attempts = 32;
    int fail_retries = 1;        // fresh-input retries; systematic errors reproduce, kink flukes do not
    // fault-injection hook: offset added to one block's analytic gradient
    std::string corrupt_block;
    float corrupt_delta = 0.0f;
};

struct BlockCheck {
    std::string name;
    double max_rel_dev = 0.0;
    int probes = 0;
};

struct GradCheckReport {
    std::vector<BlockCheck> blocks;
    double max_rel_dev = 0.0;
    double tol = 0.0;
    bool pass = false;
    int resamples = 0;  // tie-screen rejections
    int retries = 0;    // full re-checks after a failing attempt
};

// Compares tape gradients of the joint loss against central finite
// differences evaluated through the double-precision forward path.
GradCheckReport grad_check(const ModelParams& params, const ClassCenters& centers, const Tensor& x,
                           std::span<const int> labels, const GradCheckOptions& opts = {});

}  // namespace ssml

#include "ssml/gradcheck.hpp"

#include <random>

#include "ssml/rng.hpp"
#include "ssml/train.hpp"

namespace ssml {

namespace {

bool stage_pools(const ModelSpec& spec, const std::string& name) {
    for (const LayerShape& ls : layer_shapes(spec))
        if (ls.name == name + ".pool") return true;
    return false;
}

// True when any 1x2 pool window or any pre-relu activation sits inside the
// margin of its kink; finite differences are unreliable there.
bool has_near_ties(const ModelParams& params, const Tensor& x, double pool_margin, double relu_margin) {
    bool tied = false;
    StageObserver<float> obs = [&](const std::string& name, const Tensor& t) {
        if (tied) return;
        if (relu_margin > 0 && name.ends_with(".pre")) {
            for (float v : t.data)
                if (std::fabs(static_cast<double>(v)) < relu_margin) {
                    tied = true;
                    return;
                }
        }
        if (pool_margin > 0 && name.find('.') == std::string::npos && stage_pools(params.spec, name)) {
            // stage feeding a pool; compare non-overlapping pairs on the last axis
            const int w = t.shape.back();
            const int64_t outer = t.size() / w;
            for (int64_t r = 0; r < outer && !tied; ++r) {
                const float* row = t.data.data() + r * w;
                for (int j = 0; j + 1 < w; j += 2)
                    if (std::fabs(static_cast<double>(row[j]) - static_cast<double>(row[j + 1])) < pool_margin) {
                        tied = true;
                        break;
                    }
            }
        }
    };
    forward(params, x, &obs);
    return tied;
}

}  // namespace

GradCheckReport grad_check(const ModelParams& params, const ClassCenters& centers, const Tensor& x,
                           std::span<const int> labels, const GradCheckOptions& opts) {
    GradCheckReport report;
    report.tol = opts.tol;
    std::mt19937_64 rng = make_rng(opts.seed);
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    Tensor input = x;
    auto resample = [&]() {
        for (float& v : input.data) v = gauss(rng);
    };

    for (int attempt = 0; attempt <= opts.fail_retries; ++attempt) {
        if (opts.pool_tie_margin > 0 || opts.relu_tie_margin > 0) {
            int tries = 0;
            while (has_near_ties(params, input, opts.pool_tie_margin, opts.relu_tie_margin) &&
                   tries < opts.resample_attempts) {
                resample();
                ++tries;
                ++report.resamples;
            }
        }

        LossGrads analytic = joint_loss_grads(params, input, labels, centers);
        if (!opts.corrupt_block.empty()) {
            for (size_t b = 0; b < params.blocks.size(); ++b)
                if (params.blocks[b].first == opts.corrupt_block)
                    for (float& g : analytic.grads[b].data) g += opts.corrupt_delta;
        }

        std::vector<TensorD> dblocks;
        dblocks.reserve(params.blocks.size());
        for (const auto& [name, t] : params.blocks) dblocks.push_back(t.template cast<double>());
        TensorD xd = input.cast<double>();
        TensorD centers_d = centers.centers.cast<double>();
        std::vector<int> lab(labels.begin(), labels.end());

        auto loss_at = [&]() {
            ForwardResultT<double> fr = forward_double(params.spec, dblocks, xd);
            return joint_loss(fr.probs, fr.features, lab, centers_d, static_cast<double>(centers.lambda));
        };

        report.blocks.clear();
        report.max_rel_dev = 0.0;
        for (size_t b = 0; b < params.blocks.size(); ++b) {
            BlockCheck bc;
            bc.name = params.blocks[b].first;
            const int64_t sz = dblocks[b].size();
            std::uniform_int_distribution<int64_t> pickd(0, sz - 1);
            const int probes = static_cast<int>(std::min<int64_t>(opts.probes_per_block, sz));
            for (int pi = 0; pi < probes; ++pi) {
                const int64_t e = sz > opts.probes_per_block ? pickd(rng) : pi;
                double& theta = dblocks[b].data[static_cast<size_t>(e)];
                const double orig = theta;
                theta = orig + opts.h;
                const double lp = loss_at();
                theta = orig - opts.h;
                const double lm = loss_at();
                theta = orig;
                const double gn = (lp - lm) / (2.0 * opts.h);
                const double ga = static_cast<double>(analytic.grads[b].data[static_cast<size_t>(e)]);
                const double rel = std::fabs(ga - gn) / std::max(1.0, std::fabs(gn));
                bc.max_rel_dev = std::max(bc.max_rel_dev, rel);
                ++bc.probes;
            }
            report.max_rel_dev = std::max(report.max_rel_dev, bc.max_rel_dev);
            report.blocks.push_back(std::move(bc));
        }
        report.pass = report.max_rel_dev <= opts.tol;
        if (report.pass || attempt == opts.fail_retries) break;
        resample();
        ++report.retries;
    }
    return report;
}

}  // namespace ssml

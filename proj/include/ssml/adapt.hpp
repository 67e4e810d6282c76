#pragma once

#include <random>

#include "ssml/data.hpp"
#include "ssml/models.hpp"
#include "ssml/train.hpp"

namespace ssml {

struct AdaptConfig {
    float epsilon = 0.9f;       // confidence threshold (strict >); 1.0 admits nothing
    float sigma = 1.0f;         // distance threshold (strict <) on the normalized distance
    float gamma = 1e-3f;        // fine-tune (outer) learning rate
    float alpha = 1e-3f;        // inner learning rate
    float weight_decay = 1e-3f;
    int outer_epochs = 10;
    int n_shot = 5;
    int batches_per_epoch = 4;
    int max_batch = 64;
    bool refresh_support = false;  // rebuild the support set every epoch
    bool ce_sum = false;
    uint64_t seed = 0;

    void validate() const;
    Reduction reduction() const { return ce_sum ? Reduction::Sum : Reduction::Mean; }
};

struct PseudoSample {
    int index = 0;         // row in the unlabeled pool
    int pseudo_label = 0;  // argmax of the model output, ties to the lowest class
    float confidence = 0.0f;
    float distance = 0.0f;  // normalized distance to the predicted class center
};

// Support set Q: pseudo-labeled samples passing the confidence/distance
// filter, input order preserved.
struct SupportSet {
    std::vector<PseudoSample> members;
    std::vector<int> class_counts;

    int size() const { return static_cast<int>(members.size()); }
    bool empty() const { return members.empty(); }
};

std::vector<PseudoSample> pseudo_label(const ModelParams& params, const ClassCenters& centers,
                                       const Tensor& unlabeled);

SupportSet build_support_set(std::span<const PseudoSample> pseudo, float epsilon, float sigma,
                             int n_classes);

// Class-balanced batches of member indices: the min present-class count per
// class, sampled without replacement, shuffled, split near-equally. Batch
// count grows past `batches` only to respect max_batch.
std::vector<std::vector<int>> balance_subsample(const SupportSet& q, int batches, int max_batch,
                                                std::mt19937_64& rng);

struct AdaptEpochRow {
    int epoch = 0;
    int q_size = 0;
    std::vector<int> q_class_counts;
    bool fallback = false;
    double eval_acc = std::numeric_limits<double>::quiet_NaN();
};

struct AdaptReport {
    int q_size = 0;
    std::vector<int> q_class_counts;
    bool fallback = false;              // no usable support set; supervised path taken
    bool single_class_support = false;  // support set collapsed to one class
    std::vector<AdaptEpochRow> rows;
};

// Plain supervised fine-tuning on the labeled set: one Adam step per epoch on
// the joint loss, then a center update on those features. The calibration
// baseline, and the path SSML degenerates to when the filter admits nothing.
AdaptReport supervised_finetune(ModelParams& params, ClassCenters& centers, const LabeledSet& t_q,
                                const AdaptConfig& cfg, const LabeledSet* eval_set = nullptr);

// Semi-supervised adaptation on the target subject: pseudo-label the pool,
// filter into Q once up front, then per epoch adapt on balanced pseudo
// batches and fold the few-shot loss into each outer term.
AdaptReport ssml_finetune(ModelParams& params, ClassCenters& centers, const LabeledSet& t_q,
                          const Tensor& unlabeled, const AdaptConfig& cfg,
                          const LabeledSet* eval_set = nullptr);

void write_adapt_report_csv(const std::string& path, const AdaptReport& report);

}  // namespace ssml

#pragma once

#include <random>

#include "ssml/data.hpp"
#include "ssml/models.hpp"
#include "ssml/optim.hpp"
#include "ssml/train.hpp"

namespace ssml {

struct MetaConfig {
    float alpha = 1e-3f;          // base (inner) learning rate
    float beta = 1e-4f;           // meta learning rate
    int subjects_per_batch = 0;   // M; 0 means every source subject
    int inner_steps = 1;
    int inner_batch = 32;         // 0 or >= subject size: full batch
    int max_epochs = 200;
    int patience = 20;
    float val_fraction = 0.1f;
    bool subject_level_val = false;
    float center_lr = 1e-3f;
    float center_lambda = 1e-3f;
    bool ce_sum = false;  // paper-literal sum form of the classification loss

    void validate(int n_sources) const;
    Reduction reduction() const { return ce_sum ? Reduction::Sum : Reduction::Mean; }
};

// One task adaptation: steps of inner SGD on the joint loss over mini-batches
// of the subject; the input parameters are untouched.
ModelParams inner_adapt(const ModelParams& params, const SubjectDataset& task, const MetaConfig& cfg,
                        const ClassCenters& centers, std::mt19937_64& rng);

struct MetaStepStats {
    double mean_outer_loss = 0.0;
    std::vector<Tensor> meta_grad;  // accumulated first-order gradient, block order
};

// First-order meta update over a batch of subjects: adapt each, sum the
// gradients taken at the adapted parameters, apply one Adam step, then move
// the class centers toward the post-adaptation features.
void meta_step(ModelParams& params, Adam& opt, const std::vector<const SubjectDataset*>& batch,
               const MetaConfig& cfg, ClassCenters& centers, std::mt19937_64& rng,
               MetaStepStats* stats = nullptr);

struct EpochStats {
    int epoch = 0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    double train_loss = 0.0;
};

struct PretrainResult {
    ModelParams params;
    ClassCenters centers;
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double best_val_acc = 0.0;
};

// Meta-training over source subjects with a held-out validation pool; returns
// the checkpoint of the best validation epoch.
PretrainResult pretrain(const ModelSpec& spec, const std::vector<SubjectDataset>& sources,
                        const MetaConfig& cfg, uint64_t seed);

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history);

}  // namespace ssml

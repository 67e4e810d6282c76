#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssml/tensor.hpp"

namespace ssml {

// One subject's samples and integer class labels; the unit of LOSO splitting.
struct SubjectDataset {
    std::string subject_id;
    Tensor samples;  // [N, C, T]
    std::vector<int> labels;
    int n_classes = 2;

    int n() const { return samples.dim(0); }
    int channels() const { return samples.dim(1); }
    int time_len() const { return samples.dim(2); }
    void validate() const;
    std::vector<int> class_counts() const;
};

Tensor gather_rows(const Tensor& samples, std::span<const int> idx);

struct SynthConfig {
    int n_subjects = 8;
    int n_classes = 2;
    int channels = 32;
    int time_len = 128;
    int samples_per_subject = 144;
    float shift_scale = 0.3f;  // magnitude of the per-subject transform
    float noise_sd = 0.1f;
    uint64_t seed = 0;
};

// Generator internals, kept around so tests can score against the known
// class structure.
struct SynthTruth {
    std::vector<Tensor> prototypes;  // per class [C, T]
    std::vector<Tensor> mixes;       // per subject [C, C]
    std::vector<Tensor> biases;      // per subject [C, T]
    float noise_sd = 0.0f;

    Tensor clean_sample(int subject, int cls) const;  // mix * prototype + bias
    // Max-likelihood label under the generator (isotropic noise): nearest
    // clean sample in squared error, ties to the lowest class.
    int bayes_classify(int subject, std::span<const float> x) const;
};

// Each subject applies its own channel-mixing transform and bias field to
// smooth class prototypes; shift_scale 0 makes all subjects identical.
std::vector<SubjectDataset> synth_generate(const SynthConfig& config);
std::pair<std::vector<SubjectDataset>, SynthTruth> synth_generate_with_truth(const SynthConfig& config);

std::pair<std::vector<SubjectDataset>, SubjectDataset> loso_split(const std::vector<SubjectDataset>& datasets,
                                                                  int target_index);

struct LabeledSet {
    Tensor samples;  // [N, C, T]; zero-row sets use an empty tensor
    std::vector<int> labels;
    int n() const { return samples.data.empty() ? 0 : samples.dim(0); }
    bool empty() const { return n() == 0; }
};

struct FewShotSplit {
    LabeledSet labeled;  // n_shot per class, grouped by class
    Tensor unlabeled;    // labels withheld
    LabeledSet eval;     // held out for scoring
    std::vector<int> labeled_idx, unlabeled_idx, eval_idx;  // into the target dataset
};

// Uniformly picks n_shot per class as labeled; of the rest, eval_fraction
// (at least one sample per class when positive) is held out for scoring and
// the remainder becomes the unlabeled pool.
FewShotSplit few_shot_sample(const SubjectDataset& target, int n_shot, double eval_fraction, uint64_t seed);

// First n_shot per class of a class-grouped labeled set; smaller shot counts
// nest inside larger ones drawn from the same split.
LabeledSet labeled_subset(const LabeledSet& labeled, int n_shot, int n_classes);

// MSHD container: magic "MSHD", u16 version, u32 subject count; per subject
// u32 id length + bytes, u32 N/C/T/n_classes, raw little-endian f32 samples,
// raw i32 labels.
void save_dataset(const std::string& path, const std::vector<SubjectDataset>& datasets);
std::vector<SubjectDataset> load_dataset(const std::string& path);

void export_labels_csv(const std::string& path, const std::vector<SubjectDataset>& datasets);

}  // namespace ssml

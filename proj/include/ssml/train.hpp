#pragma once

#include <span>

#include "ssml/models.hpp"
#include "ssml/objectives.hpp"

namespace ssml {

struct LossGrads {
    double loss = 0.0;
    std::vector<Tensor> grads;  // block order
    Tensor probs;
    Tensor features;
};

// One taped forward + joint loss + backward; the workhorse of every training
// loop.
LossGrads joint_loss_grads(const ModelParams& params, const Tensor& x, std::span<const int> labels,
                           const ClassCenters& centers, Reduction reduction = Reduction::Mean);

// Argmax class per row; ties resolve to the lowest class index.
std::vector<int> predict(const ModelParams& params, const Tensor& x);
std::vector<int> argmax_rows(const Tensor& probs);

double evaluate_accuracy(const ModelParams& params, const Tensor& x, std::span<const int> labels);

struct EvalMetrics {
    double accuracy = 0.0;
    double joint_loss = 0.0;
};

// Accuracy plus joint loss over the set, forwarded in chunks to bound
// activation memory.
EvalMetrics evaluate_metrics(const ModelParams& params, const Tensor& x, std::span<const int> labels,
                             const ClassCenters& centers, Reduction reduction = Reduction::Mean,
                             int chunk = 128);

}  // namespace ssml

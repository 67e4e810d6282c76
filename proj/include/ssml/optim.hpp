#pragma once

#include <cstdint>
#include <vector>

#include "ssml/tensor.hpp"

namespace ssml {

// theta <- theta - lr * g, elementwise.
void sgd_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads, float lr);

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;  // decoupled; applied before the Adam delta
};

// Bias-corrected Adam over an ordered parameter list. Moment shapes mirror
// the parameters handed to the constructor; step() must see the same order.
class Adam {
public:
    Adam(const std::vector<Tensor*>& params, AdamConfig cfg);

    void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads);

    int64_t step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

}  // namespace ssml

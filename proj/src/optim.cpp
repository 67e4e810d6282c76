#include "ssml/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ssml {

void sgd_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads, float lr) {
    if (params.size() != grads.size())
        throw ShapeError("sgd_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
    for (size_t b = 0; b < params.size(); ++b) {
        Tensor& p = *params[b];
        const Tensor& g = grads[b];
        require_shape(p.same_shape(g), "sgd_step: block " + std::to_string(b) + " shape " + p.shape_str() +
                                           " vs grad " + g.shape_str());
        for (size_t i = 0; i < p.data.size(); ++i) p.data[i] -= lr * g.data[i];
    }
}

Adam::Adam(const std::vector<Tensor*>& params, AdamConfig cfg) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Tensor* p : params) {
        m_.push_back(Tensor::zeros(p->shape));
        v_.push_back(Tensor::zeros(p->shape));
    }
}

void Adam::step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
    if (m_.empty() && !params.empty())
        throw std::logic_error("Adam::step on uninitialized state");
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw ShapeError("Adam::step: block count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
    for (size_t b = 0; b < params.size(); ++b) {
        Tensor& p = *params[b];
        const Tensor& g = grads[b];
        require_shape(p.same_shape(m_[b]) && p.same_shape(g),
                      "Adam::step: block " + std::to_string(b) + " shape mismatch");
        float* mp = m_[b].data.data();
        float* vp = v_[b].data.data();
        for (size_t i = 0; i < p.data.size(); ++i) {
            if (cfg_.weight_decay > 0.0f) p.data[i] -= cfg_.lr * cfg_.weight_decay * p.data[i];
            const double gi = static_cast<double>(g.data[i]);
            mp[i] = static_cast<float>(cfg_.beta1 * mp[i] + (1.0 - cfg_.beta1) * gi);
            vp[i] = static_cast<float>(cfg_.beta2 * vp[i] + (1.0 - cfg_.beta2) * gi * gi);
            const double mhat = mp[i] / bc1;
            const double vhat = vp[i] / bc2;
            p.data[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

}  // namespace ssml

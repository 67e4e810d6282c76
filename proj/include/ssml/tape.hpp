#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "ssml/tensor.hpp"

namespace ssml {

using VarId = int32_t;

// Reverse-mode tape. Ops append value slots and a backward closure; replaying
// the closures in reverse record order accumulates exact gradients into every
// recorded input. The tape owns copies of all values it records, so callers
// may freely mutate their tensors afterwards.
class Tape {
public:
    VarId leaf(Tensor value) {
        slots_.push_back(Slot{std::move(value), {}, false});
        return static_cast<VarId>(slots_.size() - 1);
    }

    // Invoked with the node's own output id during the reverse sweep.
    using BackwardFn = std::function<void(Tape&, VarId)>;

    VarId push(Tensor out, BackwardFn back) {
        VarId id = leaf(std::move(out));
        nodes_.push_back(Node{id, std::move(back)});
        return id;
    }

    const Tensor& value(VarId id) const { return slots_.at(static_cast<size_t>(id)).value; }

    bool has_grad(VarId id) const { return slots_.at(static_cast<size_t>(id)).has_grad; }

    const Tensor& grad(VarId id) const {
        const Slot& s = slots_.at(static_cast<size_t>(id));
        if (!ran_backward_) throw std::logic_error("Tape::grad called before backward");
        if (!s.has_grad) throw std::logic_error("no gradient recorded for this variable");
        return s.grad;
    }

    Tensor grad_or_zeros(VarId id) const {
        const Slot& s = slots_.at(static_cast<size_t>(id));
        if (!ran_backward_) throw std::logic_error("Tape::grad called before backward");
        return s.has_grad ? s.grad : Tensor::zeros(s.value.shape);
    }

    // Accumulation target for backward closures; zero-initialized on first use.
    Tensor& grad_buffer(VarId id) {
        Slot& s = slots_.at(static_cast<size_t>(id));
        if (!s.has_grad) {
            s.grad = Tensor::zeros(s.value.shape);
            s.has_grad = true;
        }
        return s.grad;
    }

    void backward(VarId loss) {
        if (nodes_.empty()) throw std::logic_error("Tape::backward called before any forward op");
        const Tensor& lv = value(loss);
        if (lv.size() != 1) throw std::logic_error("backward requires a scalar terminal, got " + lv.shape_str());
        ran_backward_ = true;
        grad_buffer(loss).data[0] = 1.0f;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!slots_[static_cast<size_t>(it->out)].has_grad) continue;  // not on the loss path
            it->back(*this, it->out);
        }
    }

    size_t num_nodes() const { return nodes_.size(); }
    bool ran_backward() const { return ran_backward_; }

private:
    struct Slot {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
    };
    struct Node {
        VarId out;
        BackwardFn back;
    };

    std::vector<Slot> slots_;
    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

}  // namespace ssml

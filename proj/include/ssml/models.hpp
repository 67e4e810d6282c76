#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssml/objectives.hpp"
#include "ssml/ops.hpp"
#include "ssml/tape.hpp"
#include "ssml/tensor.hpp"

namespace ssml {

enum class ModelKind { MLP, STNN, CNN };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);

// Architecture description. The CNN stack is the fixed conv/pool family
// (widths 16/32/64/128 with 1x16 then 1x3 kernels, three 1x2 pools, and a
// final channels x 1 spatial collapse); channels/time_len adapt it to other
// signal shapes.
struct ModelSpec {
    ModelKind kind = ModelKind::MLP;
    int channels = 32;
    int time_len = 128;
    int n_classes = 2;
    int mlp_hidden = 300;
    int stnn_spatial_filters = 16;
    int stnn_temporal_filters = 64;

    void validate() const;     // throws std::invalid_argument naming the failing layer
    int feature_width() const; // width of the last hidden layer
};

// Per-sample shape of every stage, input through output.
struct LayerShape {
    std::string name;
    std::vector<int> shape;
};
std::vector<LayerShape> layer_shapes(const ModelSpec& spec);

// Ordered named parameter tensors for a spec.
struct ModelParams {
    ModelSpec spec;
    uint64_t seed = 0;
    std::vector<std::pair<std::string, Tensor>> blocks;

    Tensor& block(std::string_view name);
    const Tensor& block(std::string_view name) const;
    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
    int64_t param_count() const;
    uint64_t content_hash() const;
};

// Weights uniform in +-sqrt(6/fan_in), biases zero; deterministic under seed.
ModelParams build(const ModelSpec& spec, uint64_t seed);

template <class T>
struct ForwardResultT {
    TensorT<T> probs;     // [m, K], rows sum to 1
    TensorT<T> features;  // [m, n], last hidden layer
};
using ForwardResult = ForwardResultT<float>;

// Stage observer; receives every intermediate activation (batched shapes).
template <class T>
using StageObserver = std::function<void(const std::string&, const TensorT<T>&)>;

ForwardResult forward(const ModelParams& params, const Tensor& x,
                      const StageObserver<float>* observer = nullptr);

// Double-precision replay of the same stack over casted parameter blocks
// (block order of ModelParams::blocks); backs the finite-difference oracle.
ForwardResultT<double> forward_double(const ModelSpec& spec, const std::vector<TensorD>& blocks,
                                      const TensorD& x);

struct TapedStack {
    VarId probs = -1;
    VarId features = -1;
};

// Records the stack on an existing tape against already-registered parameter
// leaves; several inputs may share one tape (and one set of parameters).
TapedStack forward_on_tape(Tape& tape, const ModelSpec& spec, const std::vector<VarId>& param_ids,
                           const Tensor& x);

struct TapedForward {
    Tape tape;
    VarId probs = -1;
    VarId features = -1;
    std::vector<VarId> params;  // block order
};

TapedForward forward_taped(const ModelParams& params, const Tensor& x);

// Gradients per parameter block (zeros where no gradient flowed); call after
// tape.backward.
std::vector<Tensor> param_grads(const TapedForward& fwd);

// Checkpoint: "<prefix>.manifest" (key = value text) plus "<prefix>.blob"
// (raw little-endian f32, manifest block order). Centers ride along as a
// trailing "centers" block when supplied.
void save_checkpoint(const std::string& prefix, const ModelParams& params,
                     const ClassCenters* centers = nullptr);

struct Checkpoint {
    ModelParams params;
    std::optional<ClassCenters> centers;
};
Checkpoint load_checkpoint(const std::string& prefix);

}  // namespace ssml

#include "ssml/train.hpp"

#include "ssml/stats.hpp"

namespace ssml {

LossGrads joint_loss_grads(const ModelParams& params, const Tensor& x, std::span<const int> labels,
                           const ClassCenters& centers, Reduction reduction) {
    TapedForward fw = forward_taped(params, x);
    std::vector<int> lab(labels.begin(), labels.end());
    VarId loss = joint_loss_node(fw.tape, fw.probs, fw.features, lab, centers, reduction);
    fw.tape.backward(loss);
    LossGrads out;
    out.loss = static_cast<double>(fw.tape.value(loss).data[0]);
    out.grads = param_grads(fw);
    out.probs = fw.tape.value(fw.probs);
    out.features = fw.tape.value(fw.features);
    return out;
}

std::vector<int> argmax_rows(const Tensor& probs) {
    require_shape(probs.ndim() == 2, "argmax_rows: want [m,K], got " + probs.shape_str());
    const int m = probs.dim(0), k = probs.dim(1);
    std::vector<int> out(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const float* row = probs.data.data() + static_cast<size_t>(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[best]) best = j;
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

std::vector<int> predict(const ModelParams& params, const Tensor& x) {
    return argmax_rows(forward(params, x).probs);
}

double evaluate_accuracy(const ModelParams& params, const Tensor& x, std::span<const int> labels) {
    return accuracy(predict(params, x), labels);
}

EvalMetrics evaluate_metrics(const ModelParams& params, const Tensor& x, std::span<const int> labels,
                             const ClassCenters& centers, Reduction reduction, int chunk) {
    require_shape(x.ndim() == 3, "evaluate_metrics: want [N,C,T], got " + x.shape_str());
    const int n = x.dim(0);
    if (static_cast<int64_t>(labels.size()) != n) throw ShapeError("evaluate_metrics: label count mismatch");
    const int64_t row = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    int hits = 0;
    double ce_sum = 0.0, cl_sum = 0.0;
    for (int at = 0; at < n; at += chunk) {
        const int m = std::min(chunk, n - at);
        Tensor part = Tensor::zeros({m, x.dim(1), x.dim(2)});
        std::copy_n(x.data.begin() + at * row, m * row, part.data.begin());
        ForwardResult fr = forward(params, part);
        std::vector<int> lab(labels.begin() + at, labels.begin() + at + m);
        std::vector<int> pred = argmax_rows(fr.probs);
        for (int i = 0; i < m; ++i)
            if (pred[static_cast<size_t>(i)] == lab[static_cast<size_t>(i)]) ++hits;
        ce_sum += cross_entropy(fr.probs, lab, Reduction::Sum);
        cl_sum += center_loss(fr.features, lab, centers.centers);
    }
    EvalMetrics out;
    out.accuracy = static_cast<double>(hits) / n;
    const double ce = reduction == Reduction::Mean ? ce_sum / n : ce_sum;
    out.joint_loss = ce + static_cast<double>(centers.lambda) * cl_sum;
    return out;
}

}  // namespace ssml

#include "ssml/objectives.hpp"

#include "ssml/ops.hpp"

namespace ssml {

void update_centers(ClassCenters& centers, const Tensor& features, std::span<const int> labels) {
    require_shape(features.ndim() == 2 && features.dim(1) == centers.feature_width(),
                  "update_centers: features " + features.shape_str() + " vs centers " +
                      centers.centers.shape_str());
    if (static_cast<int64_t>(labels.size()) != features.dim(0))
        throw ShapeError("update_centers: label count mismatch");
    const int k = centers.n_classes(), n = centers.feature_width(), m = features.dim(0);
    std::vector<int> count(static_cast<size_t>(k), 0);
    std::vector<double> num(static_cast<size_t>(k) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= k)
            throw std::out_of_range("update_centers: label " + std::to_string(y) + " outside [0," +
                                    std::to_string(k) + ")");
        ++count[static_cast<size_t>(y)];
        const float* h = features.data.data() + static_cast<size_t>(i) * n;
        const float* c = centers.centers.data.data() + static_cast<size_t>(y) * n;
        double* acc = num.data() + static_cast<size_t>(y) * n;
        for (int j = 0; j < n; ++j) acc[j] += static_cast<double>(c[j]) - static_cast<double>(h[j]);
    }
    for (int j = 0; j < k; ++j) {
        if (count[static_cast<size_t>(j)] == 0) continue;
        const double scale = static_cast<double>(centers.lr_center) / (1.0 + count[static_cast<size_t>(j)]);
        float* c = centers.centers.data.data() + static_cast<size_t>(j) * n;
        const double* acc = num.data() + static_cast<size_t>(j) * n;
        for (int d = 0; d < n; ++d) c[d] = static_cast<float>(static_cast<double>(c[d]) - scale * acc[d]);
    }
}

VarId cross_entropy_node(Tape& tape, VarId probs, std::vector<int> labels, Reduction reduction) {
    const Tensor& p = tape.value(probs);
    const double loss = cross_entropy(p, labels, reduction);
    Tensor out = Tensor::from({1}, {static_cast<float>(loss)});
    return tape.push(std::move(out), [probs, labels = std::move(labels), reduction](Tape& t, VarId y) {
        const float g = t.grad(y).data[0];
        const Tensor& p2 = t.value(probs);
        Tensor& gp = t.grad_buffer(probs);
        const int m = p2.dim(0), k = p2.dim(1);
        const double coef = reduction == Reduction::Mean ? 1.0 / m : 1.0;
        for (int i = 0; i < m; ++i) {
            const size_t idx = static_cast<size_t>(i) * k + labels[static_cast<size_t>(i)];
            const double pv = std::max(kLogClamp, static_cast<double>(p2.data[idx]));
            gp.data[idx] += static_cast<float>(-coef / pv * static_cast<double>(g));
        }
    });
}

VarId center_loss_node(Tape& tape, VarId features, std::vector<int> labels, Tensor centers_snapshot) {
    const Tensor& h = tape.value(features);
    const double loss = center_loss(h, labels, centers_snapshot);
    Tensor out = Tensor::from({1}, {static_cast<float>(loss)});
    return tape.push(std::move(out), [features, labels = std::move(labels),
                                      centers = std::move(centers_snapshot)](Tape& t, VarId y) {
        const float g = t.grad(y).data[0];
        const Tensor& h2 = t.value(features);
        Tensor& gh = t.grad_buffer(features);
        const int m = h2.dim(0), n = h2.dim(1);
        for (int i = 0; i < m; ++i) {
            const float* hi = h2.data.data() + static_cast<size_t>(i) * n;
            const float* ci = centers.data.data() + static_cast<size_t>(labels[static_cast<size_t>(i)]) * n;
            float* gi = gh.data.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) gi[j] += (hi[j] - ci[j]) * g;
        }
    });
}

VarId joint_loss_node(Tape& tape, VarId probs, VarId features, const std::vector<int>& labels,
                      const ClassCenters& centers, Reduction reduction) {
    VarId ce = cross_entropy_node(tape, probs, labels, reduction);
    VarId cl = center_loss_node(tape, features, labels, centers.centers);
    return weighted_sum(tape, ce, cl, 1.0f, centers.lambda);
}

}  // namespace ssml

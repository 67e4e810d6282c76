#pragma once

#include <span>
#include <vector>

#include "ssml/tape.hpp"
#include "ssml/tensor.hpp"

namespace ssml {

enum class Reduction { Mean, Sum };

inline constexpr double kLogClamp = 1e-12;

// One learnable center vector per class. Centers follow their own update rule
// (not the tape); lambda weights the center term inside the joint loss.
struct ClassCenters {
    Tensor centers;  // [K, n]
    float lr_center = 1e-3f;
    float lambda = 1e-3f;

    static ClassCenters zeros(int n_classes, int feature_width, float lr = 1e-3f, float lambda = 1e-3f) {
        ClassCenters c;
        c.centers = Tensor::zeros({n_classes, feature_width});
        c.lr_center = lr;
        c.lambda = lambda;
        return c;
    }

    int n_classes() const { return centers.dim(0); }
    int feature_width() const { return centers.dim(1); }
};

template <class T>
void check_labels(const TensorT<T>& rows, std::span<const int> labels, const char* what) {
    require_shape(rows.ndim() == 2, std::string(what) + ": want [m,·], got " + rows.shape_str());
    if (static_cast<int64_t>(labels.size()) != rows.dim(0))
        throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows.dim(0)) + " rows");
    for (int y : labels)
        if (y < 0 || y >= rows.dim(1))
            throw std::out_of_range(std::string(what) + ": label " + std::to_string(y) +
                                    " outside [0," + std::to_string(rows.dim(1)) + ")");
}

// Mean (or sum) over the batch of -log p[i, y_i]; p clamped to [1e-12, 1].
template <class T>
double cross_entropy(const TensorT<T>& probs, std::span<const int> labels,
                     Reduction reduction = Reduction::Mean) {
    check_labels(probs, labels, "cross_entropy");
    const int m = probs.dim(0), k = probs.dim(1);
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        double p = static_cast<double>(probs.data[static_cast<size_t>(i) * k + labels[i]]);
        p = std::min(1.0, std::max(kLogClamp, p));
        total -= std::log(p);
    }
    return reduction == Reduction::Mean ? total / m : total;
}

// (1/2) sum_i ||h_i - c_{y_i}||^2, summed over the batch.
template <class T>
double center_loss(const TensorT<T>& features, std::span<const int> labels, const TensorT<T>& centers) {
    require_shape(centers.ndim() == 2 && features.ndim() == 2 && features.dim(1) == centers.dim(1),
                  "center_loss: feature width " + features.shape_str() + " vs centers " + centers.shape_str());
    const int m = features.dim(0), n = features.dim(1);
    if (static_cast<int64_t>(labels.size()) != m)
        throw ShapeError("center_loss: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= centers.dim(0))
            throw std::out_of_range("center_loss: label " + std::to_string(y) + " outside [0," +
                                    std::to_string(centers.dim(0)) + ")");
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        const T* h = features.data.data() + static_cast<size_t>(i) * n;
        const T* c = centers.data.data() + static_cast<size_t>(labels[i]) * n;
        for (int j = 0; j < n; ++j) {
            const double d = static_cast<double>(h[j]) - static_cast<double>(c[j]);
            total += d * d;
        }
    }
    return 0.5 * total;
}

template <class T>
double joint_loss(const TensorT<T>& probs, const TensorT<T>& features, std::span<const int> labels,
                  const TensorT<T>& centers, double lambda, Reduction reduction = Reduction::Mean) {
    return cross_entropy(probs, labels, reduction) + lambda * center_loss(features, labels, centers);
}

inline double joint_loss(const Tensor& probs, const Tensor& features, std::span<const int> labels,
                         const ClassCenters& centers, Reduction reduction = Reduction::Mean) {
    return joint_loss(probs, features, labels, centers.centers, static_cast<double>(centers.lambda),
                      reduction);
}

// Squared Euclidean distance normalized by twice the feature length.
template <class T>
double feature_distance(std::span<const T> h, std::span<const T> c) {
    if (h.size() != c.size() || h.empty())
        throw ShapeError("feature_distance: widths " + std::to_string(h.size()) + " vs " +
                         std::to_string(c.size()));
    double total = 0.0;
    for (size_t j = 0; j < h.size(); ++j) {
        const double d = static_cast<double>(h[j]) - static_cast<double>(c[j]);
        total += d * d;
    }
    return total / (2.0 * static_cast<double>(h.size()));
}

template <class T>
double feature_distance(const TensorT<T>& h, const TensorT<T>& c) {
    return feature_distance(std::span<const T>(h.data), std::span<const T>(c.data));
}

// Center update of the joint objective: for each class j present in the batch,
//   delta_j = sum_i [y_i = j](c_j - h_i) / (1 + count_j),  c_j <- c_j - lr * delta_j.
// Classes absent from the batch are untouched.
void update_centers(ClassCenters& centers, const Tensor& features, std::span<const int> labels);

// Tape nodes mirroring the pure losses.
VarId cross_entropy_node(Tape& tape, VarId probs, std::vector<int> labels, Reduction reduction);
VarId center_loss_node(Tape& tape, VarId features, std::vector<int> labels, Tensor centers_snapshot);
VarId joint_loss_node(Tape& tape, VarId probs, VarId features, const std::vector<int>& labels,
                      const ClassCenters& centers, Reduction reduction = Reduction::Mean);

}  // namespace ssml

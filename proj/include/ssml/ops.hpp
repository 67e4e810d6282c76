#pragma once

#include <Eigen/Dense>

#include "ssml/tape.hpp"
#include "ssml/tensor.hpp"

namespace ssml {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<const MatRM<T>> mat_view(const TensorT<T>& t, int rows, int cols) {
    return Eigen::Map<const MatRM<T>>(t.data.data(), rows, cols);
}

template <class T>
Eigen::Map<MatRM<T>> mat_view(TensorT<T>& t, int rows, int cols) {
    return Eigen::Map<MatRM<T>>(t.data.data(), rows, cols);
}

// ---------------------------------------------------------------------------
// Pure layer primitives. Free functions of their inputs; accumulation inside
// every dot product runs in double regardless of the storage scalar.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> linear_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    require_shape(x.ndim() == 2 && w.ndim() == 2 && b.ndim() == 1,
                  "linear: want x[m,d_in], W[d_in,d_out], b[d_out]; got x" + x.shape_str() +
                      " W" + w.shape_str() + " b" + b.shape_str());
    require_shape(x.dim(1) == w.dim(0) && w.dim(1) == b.dim(0),
                  "linear: inner dimensions disagree, x" + x.shape_str() + " vs W" + w.shape_str());
    const int m = x.dim(0), dout = w.dim(1);
    TensorT<T> out = TensorT<T>::zeros({m, dout});
    MatRM<double> prod = mat_view(x, m, x.dim(1)).template cast<double>() *
                         mat_view(w, w.dim(0), dout).template cast<double>();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < dout; ++j)
            out.data[static_cast<size_t>(i) * dout + j] =
                static_cast<T>(prod(i, j) + static_cast<double>(b.data[static_cast<size_t>(j)]));
    return out;
}

// im2col for valid cross-correlation, stride 1. Row r = ci*kh*kw + i*kw + j,
// column c = oy*ow + ox, entry x[ci, oy+i, ox+j].
template <class T>
MatRM<T> im2col(const T* x, int c_in, int h, int w, int kh, int kw) {
    const int oh = h - kh + 1, ow = w - kw + 1;
    MatRM<T> cols(c_in * kh * kw, oh * ow);
    for (int ci = 0; ci < c_in; ++ci)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const int r = (ci * kh + i) * kw + j;
                const T* src = x + (static_cast<size_t>(ci) * h) * w;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox)
                        cols(r, oy * ow + ox) = src[(oy + i) * w + (ox + j)];
            }
    return cols;
}

template <class T>
void col2im_add(const MatRM<T>& cols, T* gx, int c_in, int h, int w, int kh, int kw) {
    const int oh = h - kh + 1, ow = w - kw + 1;
    for (int ci = 0; ci < c_in; ++ci)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const int r = (ci * kh + i) * kw + j;
                T* dst = gx + (static_cast<size_t>(ci) * h) * w;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox)
                        dst[(oy + i) * w + (ox + j)] += cols(r, oy * ow + ox);
            }
}

// Valid cross-correlation over input channels, stride 1; bias may be null.
template <class T>
TensorT<T> conv2d_core(const TensorT<T>& x, const TensorT<T>& k, const T* bias) {
    require_shape(x.ndim() == 3 && k.ndim() == 4,
                  "conv2d: want x[C_in,H,W], kernels[C_out,C_in,kh,kw]; got x" + x.shape_str() +
                      " k" + k.shape_str());
    const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int c_out = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    require_shape(k.dim(1) == c_in, "conv2d: kernel channels " + std::to_string(k.dim(1)) +
                                        " vs input channels " + std::to_string(c_in));
    require_shape(kh <= h && kw <= w, "conv2d: kernel " + k.shape_str() + " larger than input " + x.shape_str());
    const int oh = h - kh + 1, ow = w - kw + 1;
    MatRM<T> cols = im2col(x.data.data(), c_in, h, w, kh, kw);
    auto kmat = mat_view(k, c_out, c_in * kh * kw);
    MatRM<double> prod = kmat.template cast<double>() * cols.template cast<double>();
    TensorT<T> out = TensorT<T>::zeros({c_out, oh, ow});
    for (int co = 0; co < c_out; ++co) {
        const double bv = bias ? static_cast<double>(bias[co]) : 0.0;
        for (int p = 0; p < oh * ow; ++p)
            out.data[static_cast<size_t>(co) * oh * ow + p] = static_cast<T>(prod(co, p) + bv);
    }
    return out;
}

template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& k) {
    return conv2d_core(x, k, static_cast<const T*>(nullptr));
}

// Non-overlapping 1x2 window maxima along the last axis; a trailing odd
// column is dropped.
template <class T>
TensorT<T> maxpool_forward(const TensorT<T>& x) {
    require_shape(x.ndim() >= 1, "maxpool: empty shape");
    const int w = x.shape.back();
    require_shape(w >= 2, "maxpool: last axis must be >= 2, got " + x.shape_str());
    const int ow = w / 2;
    std::vector<int> oshape = x.shape;
    oshape.back() = ow;
    TensorT<T> out = TensorT<T>::zeros(oshape);
    const int64_t outer = x.size() / w;
    for (int64_t r = 0; r < outer; ++r) {
        const T* src = x.data.data() + r * w;
        T* dst = out.data.data() + r * ow;
        for (int j = 0; j < ow; ++j) dst[j] = std::max(src[2 * j], src[2 * j + 1]);
    }
    return out;
}

template <class T>
TensorT<T> relu_forward(const TensorT<T>& x) {
    TensorT<T> out = x;
    for (T& v : out.data) v = v > T(0) ? v : T(0);
    return out;
}

// Rows sum to 1; max-subtraction keeps exp in range.
template <class T>
TensorT<T> softmax_forward(const TensorT<T>& z) {
    require_shape(z.ndim() == 2, "softmax: want [m,K], got " + z.shape_str());
    const int m = z.dim(0), k = z.dim(1);
    TensorT<T> out = TensorT<T>::zeros({m, k});
    for (int i = 0; i < m; ++i) {
        const T* row = z.data.data() + static_cast<size_t>(i) * k;
        double mx = static_cast<double>(row[0]);
        for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        std::vector<double> e(static_cast<size_t>(k));
        for (int j = 0; j < k; ++j) {
            e[static_cast<size_t>(j)] = std::exp(static_cast<double>(row[j]) - mx);
            sum += e[static_cast<size_t>(j)];
        }
        for (int j = 0; j < k; ++j)
            out.data[static_cast<size_t>(i) * k + j] = static_cast<T>(e[static_cast<size_t>(j)] / sum);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tape-recorded ops (float graph used for training).
// ---------------------------------------------------------------------------

VarId linear(Tape& tape, VarId x, VarId w, VarId b);
// Batched convolution, x [m,C,H,W], kernels [C_out,C,kh,kw], bias [C_out].
VarId conv2d(Tape& tape, VarId x, VarId k, VarId b);
VarId maxpool(Tape& tape, VarId x);
VarId relu(Tape& tape, VarId x);
VarId softmax(Tape& tape, VarId z);
VarId reshape(Tape& tape, VarId x, std::vector<int> shape);
// P [p,C] times each sample of x [m,C,T] -> [m,p,T]; bias [p] broadcast over T.
VarId matmul_left(Tape& tape, VarId p, VarId x, VarId b);
// Each sample of x [m,p,T] times Q [T,q] -> [m,p,q]; bias [q] broadcast over rows.
VarId matmul_right(Tape& tape, VarId x, VarId q, VarId b);
// Scalar sum of squares; handy as a synthetic quadratic objective in tests.
VarId sum_squares(Tape& tape, VarId x);
// wa*a + wb*b for scalar nodes.
VarId weighted_sum(Tape& tape, VarId a, VarId b, float wa, float wb);

}  // namespace ssml

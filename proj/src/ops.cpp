#include "ssml/ops.hpp"

#include <algorithm>
#include <memory>

namespace ssml {

namespace {

using MapF = Eigen::Map<const MatRM<float>>;
using MapFMut = Eigen::Map<MatRM<float>>;

void add_to(Tensor& dst, const MatRM<double>& src) {
    require_shape(dst.size() == static_cast<int64_t>(src.size()), "gradient accumulation shape mismatch");
    const double* s = src.data();
    for (int64_t i = 0; i < dst.size(); ++i) dst.data[static_cast<size_t>(i)] += static_cast<float>(s[i]);
}

}  // namespace

VarId linear(Tape& tape, VarId x, VarId w, VarId b) {
    Tensor out = linear_forward(tape.value(x), tape.value(w), tape.value(b));
    return tape.push(std::move(out), [x, w, b](Tape& t, VarId y) {
        const Tensor& gy = t.grad(y);
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(w);
        const int m = xv.dim(0), din = xv.dim(1), dout = wv.dim(1);
        MatRM<double> gyd = mat_view(gy, m, dout).cast<double>();
        MatRM<double> xd = mat_view(xv, m, din).cast<double>();
        MatRM<double> wd = mat_view(wv, din, dout).cast<double>();
        add_to(t.grad_buffer(x), MatRM<double>(gyd * wd.transpose()));
        add_to(t.grad_buffer(w), MatRM<double>(xd.transpose() * gyd));
        add_to(t.grad_buffer(b), MatRM<double>(gyd.colwise().sum()));
    });
}

VarId conv2d(Tape& tape, VarId x, VarId k, VarId b) {
    const Tensor& xv = tape.value(x);
    const Tensor& kv = tape.value(k);
    const Tensor& bv = tape.value(b);
    require_shape(xv.ndim() == 4, "conv2d: want batched x[m,C,H,W], got " + xv.shape_str());
    require_shape(bv.ndim() == 1 && bv.dim(0) == kv.dim(0),
                  "conv2d: bias " + bv.shape_str() + " vs kernels " + kv.shape_str());
    const int m = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor sample = Tensor::zeros({c, h, w});
    Tensor out;
    for (int i = 0; i < m; ++i) {
        std::copy_n(xv.data.begin() + static_cast<size_t>(i) * c * h * w, static_cast<size_t>(c) * h * w,
                    sample.data.begin());
        Tensor oi = conv2d_core(sample, kv, bv.data.data());
        if (i == 0) out = Tensor::zeros({m, oi.dim(0), oi.dim(1), oi.dim(2)});
        std::copy(oi.data.begin(), oi.data.end(), out.data.begin() + static_cast<size_t>(i) * oi.size());
    }
    return tape.push(std::move(out), [x, k, b, m, c, h, w](Tape& t, VarId y) {
        const Tensor& gy = t.grad(y);
        const Tensor& xv2 = t.value(x);
        const Tensor& kv2 = t.value(k);
        const int co = kv2.dim(0), kh = kv2.dim(2), kw = kv2.dim(3);
        const int oh = h - kh + 1, ow = w - kw + 1;
        const int64_t spl = static_cast<int64_t>(c) * h * w;
        const int64_t opl = static_cast<int64_t>(co) * oh * ow;
        MatRM<double> kd = mat_view(kv2, co, c * kh * kw).cast<double>();
        MatRM<double> gk = MatRM<double>::Zero(co, c * kh * kw);
        Eigen::VectorXd gb = Eigen::VectorXd::Zero(co);
        Tensor& gxbuf = t.grad_buffer(x);
        for (int i = 0; i < m; ++i) {
            MapF gyi(gy.data.data() + i * opl, co, oh * ow);
            MatRM<double> gyd = gyi.cast<double>();
            MatRM<double> cols =
                im2col(xv2.data.data() + i * spl, c, h, w, kh, kw).cast<double>();
            gk.noalias() += gyd * cols.transpose();
            gb += gyd.rowwise().sum();
            MatRM<double> gcols = kd.transpose() * gyd;
            MatRM<float> gcols_f = gcols.cast<float>();
            col2im_add(gcols_f, gxbuf.data.data() + i * spl, c, h, w, kh, kw);
        }
        add_to(t.grad_buffer(k), gk);
        Tensor& gbb = t.grad_buffer(b);
        for (int j = 0; j < co; ++j) gbb.data[static_cast<size_t>(j)] += static_cast<float>(gb(j));
    });
}

VarId maxpool(Tape& tape, VarId x) {
    const Tensor& xv = tape.value(x);
    Tensor out = maxpool_forward(xv);
    const int w = xv.shape.back();
    const int ow = w / 2;
    const int64_t outer = xv.size() / w;
    // winner offset (0 or 1) per window; ties keep the left entry
    auto pick = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(outer) * ow);
    for (int64_t r = 0; r < outer; ++r) {
        const float* src = xv.data.data() + r * w;
        for (int j = 0; j < ow; ++j)
            (*pick)[static_cast<size_t>(r) * ow + j] = src[2 * j] >= src[2 * j + 1] ? 0 : 1;
    }
    return tape.push(std::move(out), [x, w, ow, outer, pick](Tape& t, VarId y) {
        const Tensor& gy = t.grad(y);
        Tensor& gx = t.grad_buffer(x);
        for (int64_t r = 0; r < outer; ++r)
            for (int j = 0; j < ow; ++j)
                gx.data[static_cast<size_t>(r * w + 2 * j + (*pick)[static_cast<size_t>(r) * ow + j])] +=
                    gy.data[static_cast<size_t>(r * ow + j)];
    });
}

VarId relu(Tape& tape, VarId x) {
    Tensor out = relu_forward(tape.value(x));
    return tape.push(std::move(out), [x](Tape& t, VarId y) {
        const Tensor& gy = t.grad(y);
        const Tensor& xv = t.value(x);
        Tensor& gx = t.grad_buffer(x);
        for (size_t i = 0; i < gx.data.size(); ++i)
            if (xv.data[i] > 0.0f) gx.data[i] += gy.data[i];
    });
}

VarId softmax(Tape& tape, VarId z) {
    Tensor out = softmax_forward(tape.value(z));
    return tape.push(std::move(out), [z](Tape& t, VarId y) {
        const Tensor& p = t.value(y);
        const Tensor& gp = t.grad(y);
        Tensor& gz = t.grad_buffer(z);
        const int m = p.dim(0), k = p.dim(1);
        for (int i = 0; i < m; ++i) {
            const size_t off = static_cast<size_t>(i) * k;
            double dot = 0.0;
            for (int j = 0; j < k; ++j) dot += static_cast<double>(gp.data[off + j]) * p.data[off + j];
            for (int j = 0; j < k; ++j)
                gz.data[off + j] += static_cast<float>(
                    static_cast<double>(p.data[off + j]) * (static_cast<double>(gp.data[off + j]) - dot));
        }
    });
}

VarId reshape(Tape& tape, VarId x, std::vector<int> shape) {
    const Tensor& xv = tape.value(x);
    require_shape(Tensor::count(shape) == xv.size(),
                  "reshape: cannot view " + xv.shape_str() + " as " + Tensor::shape_str(shape));
    Tensor out;
    out.shape = std::move(shape);
    out.data = xv.data;
    return tape.push(std::move(out), [x](Tape& t, VarId y) {
        const Tensor& gy = t.grad(y);
        Tensor& gx = t.grad_buffer(x);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gy.data[i];
    });
}

VarId matmul_left(Tape& tape, VarId p, VarId x, VarId b) {
    const Tensor& pv = tape.value(p);
    const Tensor& xv = tape.value(x);
    const Tensor& bv = tape.value(b);
    require_shape(pv.ndim() == 2 && xv.ndim() == 3, "matmul_left: want P[p,C], x[m,C,T]; got P" +
                                                        pv.shape_str() + " x" + xv.shape_str());
    const int rows = pv.dim(0), c = pv.dim(1), m = xv.dim(0), t_len = xv.dim(2);
    require_shape(xv.dim(1) == c, "matmul_left: channel mismatch P" + pv.shape_str() + " x" + xv.shape_str());
    require_shape(bv.ndim() == 1 && bv.dim(0) == rows, "matmul_left: bias " + bv.shape_str());
    Tensor out = Tensor::zeros({m, rows, t_len});
    MatRM<double> pd = mat_view(pv, rows, c).cast<double>();
    for (int i = 0; i < m; ++i) {
        MapF xi(xv.data.data() + static_cast<size_t>(i) * c * t_len, c, t_len);
        MatRM<double> prod = pd * xi.cast<double>();
        float* dst = out.data.data() + static_cast<size_t>(i) * rows * t_len;
        for (int r = 0; r < rows; ++r)
            for (int tt = 0; tt < t_len; ++tt)
                dst[r * t_len + tt] = static_cast<float>(prod(r, tt) + static_cast<double>(bv.data[static_cast<size_t>(r)]));
    }
    return tape.push(std::move(out), [p, x, b, rows, c, m, t_len](Tape& t, VarId y) {
        const Tensor& gy = t.grad(y);
        const Tensor& pv2 = t.value(p);
        const Tensor& xv2 = t.value(x);
        MatRM<double> pd = mat_view(pv2, rows, c).cast<double>();
        MatRM<double> gp = MatRM<double>::Zero(rows, c);
        Eigen::VectorXd gb = Eigen::VectorXd::Zero(rows);
        Tensor& gx = t.grad_buffer(x);
        for (int i = 0; i < m; ++i) {
            MapF gyi(gy.data.data() + static_cast<size_t>(i) * rows * t_len, rows, t_len);
            MapF xi(xv2.data.data() + static_cast<size_t>(i) * c * t_len, c, t_len);
            MatRM<double> gyd = gyi.cast<double>();
            gp.noalias() += gyd * xi.cast<double>().transpose();
            gb += gyd.rowwise().sum();
            MatRM<double> gxi = pd.transpose() * gyd;
            float* dst = gx.data.data() + static_cast<size_t>(i) * c * t_len;
            for (int r = 0; r < c; ++r)
                for (int tt = 0; tt < t_len; ++tt) dst[r * t_len + tt] += static_cast<float>(gxi(r, tt));
        }
        add_to(t.grad_buffer(p), gp);
        Tensor& gbb = t.grad_buffer(b);
        for (int r = 0; r < rows; ++r) gbb.data[static_cast<size_t>(r)] += static_cast<float>(gb(r));
    });
}

VarId matmul_right(Tape& tape, VarId x, VarId q, VarId b) {
    const Tensor& xv = tape.value(x);
    const Tensor& qv = tape.value(q);
    const Tensor& bv = tape.value(b);
    require_shape(xv.ndim() == 3 && qv.ndim() == 2, "matmul_right: want x[m,p,T], Q[T,q]; got x" +
                                                        xv.shape_str() + " Q" + qv.shape_str());
    const int m = xv.dim(0), rows = xv.dim(1), t_len = xv.dim(2), cols = qv.dim(1);
    require_shape(qv.dim(0) == t_len, "matmul_right: inner mismatch x" + xv.shape_str() + " Q" + qv.shape_str());
    require_shape(bv.ndim() == 1 && bv.dim(0) == cols, "matmul_right: bias " + bv.shape_str());
    Tensor out = Tensor::zeros({m, rows, cols});
    MatRM<double> qd = mat_view(qv, t_len, cols).cast<double>();
    for (int i = 0; i < m; ++i) {
        MapF xi(xv.data.data() + static_cast<size_t>(i) * rows * t_len, rows, t_len);
        MatRM<double> prod = xi.cast<double>() * qd;
        float* dst = out.data.data() + static_cast<size_t>(i) * rows * cols;
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < cols; ++j)
                dst[r * cols + j] = static_cast<float>(prod(r, j) + static_cast<double>(bv.data[static_cast<size_t>(j)]));
    }
    return tape.push(std::move(out), [x, q, b, m, rows, t_len, cols](Tape& t, VarId y) {
        const Tensor& gy = t.grad(y);
        const Tensor& xv2 = t.value(x);
        const Tensor& qv2 = t.value(q);
        MatRM<double> qd = mat_view(qv2, t_len, cols).cast<double>();
        MatRM<double> gq = MatRM<double>::Zero(t_len, cols);
        Eigen::VectorXd gb = Eigen::VectorXd::Zero(cols);
        Tensor& gx = t.grad_buffer(x);
        for (int i = 0; i < m; ++i) {
            MapF gyi(gy.data.data() + static_cast<size_t>(i) * rows * cols, rows, cols);
            MapF xi(xv2.data.data() + static_cast<size_t>(i) * rows * t_len, rows, t_len);
            MatRM<double> gyd = gyi.cast<double>();
            gq.noalias() += xi.cast<double>().transpose() * gyd;
            gb += gyd.colwise().sum().transpose();
            MatRM<double> gxi = gyd * qd.transpose();
            float* dst = gx.data.data() + static_cast<size_t>(i) * rows * t_len;
            for (int r = 0; r < rows; ++r)
                for (int tt = 0; tt < t_len; ++tt) dst[r * t_len + tt] += static_cast<float>(gxi(r, tt));
        }
        add_to(t.grad_buffer(q), gq);
        Tensor& gbb = t.grad_buffer(b);
        for (int j = 0; j < cols; ++j) gbb.data[static_cast<size_t>(j)] += static_cast<float>(gb(j));
    });
}

VarId sum_squares(Tape& tape, VarId x) {
    const Tensor& xv = tape.value(x);
    double s = 0.0;
    for (float v : xv.data) s += static_cast<double>(v) * v;
    Tensor out = Tensor::from({1}, {static_cast<float>(s)});
    return tape.push(std::move(out), [x](Tape& t, VarId y) {
        const float g = t.grad(y).data[0];
        const Tensor& xv2 = t.value(x);
        Tensor& gx = t.grad_buffer(x);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += 2.0f * xv2.data[i] * g;
    });
}

VarId weighted_sum(Tape& tape, VarId a, VarId b, float wa, float wb) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_shape(av.size() == 1 && bv.size() == 1, "weighted_sum: scalar nodes only");
    Tensor out = Tensor::from({1}, {wa * av.data[0] + wb * bv.data[0]});
    return tape.push(std::move(out), [a, b, wa, wb](Tape& t, VarId y) {
        const float g = t.grad(y).data[0];
        t.grad_buffer(a).data[0] += wa * g;
        t.grad_buffer(b).data[0] += wb * g;
    });
}

}  // namespace ssml

#include "ssml/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ssml/optim.hpp"
#include "ssml/rng.hpp"

namespace ssml {

void AdaptConfig::validate() const {
    if (epsilon <= 0.0f || epsilon > 1.0f)
        throw std::invalid_argument("adapt config: epsilon outside (0,1]");
    if (sigma <= 0.0f) throw std::invalid_argument("adapt config: sigma must be positive");
    if (n_shot < 0) throw std::invalid_argument("adapt config: negative n_shot");
    if (outer_epochs < 0 || batches_per_epoch < 1 || max_batch < 1)
        throw std::invalid_argument("adapt config: bad loop bounds");
    if (gamma <= 0.0f || alpha <= 0.0f || weight_decay < 0.0f)
        throw std::invalid_argument("adapt config: bad rates");
}

std::vector<PseudoSample> pseudo_label(const ModelParams& params, const ClassCenters& centers,
                                       const Tensor& unlabeled) {
    if (unlabeled.data.empty()) return {};
    require_shape(unlabeled.ndim() == 3, "pseudo_label: want [N,C,T], got " + unlabeled.shape_str());
    require_shape(params.spec.feature_width() == centers.feature_width(),
                  "pseudo_label: model feature width " + std::to_string(params.spec.feature_width()) +
                      " vs centers " + std::to_string(centers.feature_width()));
    const int n = unlabeled.dim(0);
    const int64_t row = static_cast<int64_t>(unlabeled.dim(1)) * unlabeled.dim(2);
    const int width = centers.feature_width();
    std::vector<PseudoSample> out;
    out.reserve(static_cast<size_t>(n));
    constexpr int kChunk = 128;
    for (int at = 0; at < n; at += kChunk) {
        const int m = std::min(kChunk, n - at);
        Tensor part = Tensor::zeros({m, unlabeled.dim(1), unlabeled.dim(2)});
        std::copy_n(unlabeled.data.begin() + at * row, m * row, part.data.begin());
        ForwardResult fr = forward(params, part);
        for (int i = 0; i < m; ++i) {
            const float* probs = fr.probs.data.data() + static_cast<size_t>(i) * fr.probs.dim(1);
            int y = 0;
            for (int j = 1; j < fr.probs.dim(1); ++j)
                if (probs[j] > probs[y]) y = j;
            std::span<const float> h(fr.features.data.data() + static_cast<size_t>(i) * width,
                                     static_cast<size_t>(width));
            std::span<const float> c(centers.centers.data.data() + static_cast<size_t>(y) * width,
                                     static_cast<size_t>(width));
            out.push_back({at + i, y, probs[y], static_cast<float>(feature_distance(h, c))});
        }
    }
    return out;
}

SupportSet build_support_set(std::span<const PseudoSample> pseudo, float epsilon, float sigma,
                             int n_classes) {
    SupportSet q;
    q.class_counts.assign(static_cast<size_t>(n_classes), 0);
    for (const PseudoSample& s : pseudo) {
        if (s.confidence > epsilon && s.distance < sigma) {
            q.members.push_back(s);
            ++q.class_counts[static_cast<size_t>(s.pseudo_label)];
        }
    }
    return q;
}

std::vector<std::vector<int>> balance_subsample(const SupportSet& q, int batches, int max_batch,
                                                std::mt19937_64& rng) {
    if (q.empty()) return {};
    const int k = static_cast<int>(q.class_counts.size());
    int min_present = std::numeric_limits<int>::max();
    for (int c = 0; c < k; ++c)
        if (q.class_counts[static_cast<size_t>(c)] > 0)
            min_present = std::min(min_present, q.class_counts[static_cast<size_t>(c)]);

    std::vector<int> chosen;
    for (int c = 0; c < k; ++c) {
        if (q.class_counts[static_cast<size_t>(c)] == 0) continue;
        std::vector<int> members;
        for (int i = 0; i < q.size(); ++i)
            if (q.members[static_cast<size_t>(i)].pseudo_label == c) members.push_back(i);
        std::shuffle(members.begin(), members.end(), rng);
        members.resize(static_cast<size_t>(min_present));
        chosen.insert(chosen.end(), members.begin(), members.end());
    }
    std::shuffle(chosen.begin(), chosen.end(), rng);

    const int total = static_cast<int>(chosen.size());
    int nb = std::max(batches, (total + max_batch - 1) / max_batch);
    nb = std::min(nb, total);  // no empty batches
    std::vector<std::vector<int>> out(static_cast<size_t>(nb));
    int at = 0;
    for (int b = 0; b < nb; ++b) {
        const int len = total / nb + (b < total % nb ? 1 : 0);
        out[static_cast<size_t>(b)].assign(chosen.begin() + at, chosen.begin() + at + len);
        at += len;
    }
    return out;
}

namespace {

void eval_row(AdaptReport& report, const ModelParams& params, const LabeledSet* eval_set,
              AdaptEpochRow row) {
    if (eval_set && !eval_set->empty())
        row.eval_acc = evaluate_accuracy(params, eval_set->samples, eval_set->labels);
    report.rows.push_back(std::move(row));
}

// Shared supervised loop; the ssml path delegates here when the filter admits
// nothing, which keeps the two routes bitwise identical.
void run_supervised(ModelParams& params, ClassCenters& centers, const LabeledSet& t_q,
                    const AdaptConfig& cfg, const LabeledSet* eval_set, AdaptReport& report,
                    bool fallback) {
    Adam opt(params.tensors(), AdamConfig{cfg.gamma, 0.9f, 0.999f, 1e-8f, cfg.weight_decay});
    for (int epoch = 1; epoch <= cfg.outer_epochs; ++epoch) {
        LossGrads lg = joint_loss_grads(params, t_q.samples, t_q.labels, centers, cfg.reduction());
        opt.step(params.tensors(), lg.grads);
        update_centers(centers, lg.features, t_q.labels);
        eval_row(report, params, eval_set, {epoch, 0, report.q_class_counts, fallback, 0.0});
    }
}

}  // namespace

AdaptReport supervised_finetune(ModelParams& params, ClassCenters& centers, const LabeledSet& t_q,
                                const AdaptConfig& cfg, const LabeledSet* eval_set) {
    cfg.validate();
    if (t_q.empty()) throw std::invalid_argument("nothing to adapt on: no labeled samples");
    AdaptReport report;
    report.q_class_counts.assign(static_cast<size_t>(params.spec.n_classes), 0);
    run_supervised(params, centers, t_q, cfg, eval_set, report, false);
    return report;
}

AdaptReport ssml_finetune(ModelParams& params, ClassCenters& centers, const LabeledSet& t_q,
                          const Tensor& unlabeled, const AdaptConfig& cfg, const LabeledSet* eval_set) {
    cfg.validate();
    const int k = params.spec.n_classes;

    std::vector<PseudoSample> pseudo = pseudo_label(params, centers, unlabeled);
    SupportSet q = build_support_set(pseudo, cfg.epsilon, cfg.sigma, k);

    AdaptReport report;
    report.q_size = q.size();
    report.q_class_counts = q.class_counts;

    if (q.empty()) {
        if (t_q.empty())
            throw std::invalid_argument("nothing to adapt on: empty support set and no labeled samples");
        report.fallback = true;
        run_supervised(params, centers, t_q, cfg, eval_set, report, true);
        return report;
    }
    const int present = static_cast<int>(std::count_if(q.class_counts.begin(), q.class_counts.end(),
                                                       [](int c) { return c > 0; }));
    report.single_class_support = present < 2;

    std::mt19937_64 rng = make_rng(derive_seed(cfg.seed, 0xadab));
    Adam opt(params.tensors(), AdamConfig{cfg.gamma, 0.9f, 0.999f, 1e-8f, cfg.weight_decay});
    const int64_t sample_len = static_cast<int64_t>(unlabeled.dim(1)) * unlabeled.dim(2);

    for (int epoch = 1; epoch <= cfg.outer_epochs; ++epoch) {
        if (cfg.refresh_support && epoch > 1) {
            pseudo = pseudo_label(params, centers, unlabeled);
            q = build_support_set(pseudo, cfg.epsilon, cfg.sigma, k);
        }
        std::vector<std::vector<int>> batches = balance_subsample(q, cfg.batches_per_epoch, cfg.max_batch, rng);

        if (batches.empty()) {  // refreshed support set went empty
            if (t_q.empty()) {
                eval_row(report, params, eval_set, {epoch, 0, q.class_counts, false, 0.0});
                continue;
            }
            LossGrads lg = joint_loss_grads(params, t_q.samples, t_q.labels, centers, cfg.reduction());
            opt.step(params.tensors(), lg.grads);
            update_centers(centers, lg.features, t_q.labels);
            eval_row(report, params, eval_set, {epoch, 0, q.class_counts, true, 0.0});
            continue;
        }

        std::vector<Tensor> grad_acc;
        for (const Tensor* t : params.tensors()) grad_acc.push_back(Tensor::zeros(t->shape));
        std::vector<Tensor> batch_feats;
        std::vector<int> batch_feat_labels;
        Tensor tq_feats;

        for (const std::vector<int>& batch : batches) {
            Tensor xb = Tensor::zeros({static_cast<int>(batch.size()), unlabeled.dim(1), unlabeled.dim(2)});
            std::vector<int> yb;
            yb.reserve(batch.size());
            for (size_t i = 0; i < batch.size(); ++i) {
                const PseudoSample& s = q.members[static_cast<size_t>(batch[i])];
                std::copy_n(unlabeled.data.begin() + s.index * sample_len, sample_len,
                            xb.data.begin() + static_cast<int64_t>(i) * sample_len);
                yb.push_back(s.pseudo_label);
            }

            // inner step at theta
            ModelParams adapted = params;
            LossGrads inner = joint_loss_grads(adapted, xb, yb, centers, cfg.reduction());
            sgd_step(adapted.tensors(), inner.grads, cfg.alpha);

            // outer term at the adapted point: pseudo batch plus the few-shot loss
            Tape tape;
            std::vector<VarId> ids;
            for (const auto& [name, t] : adapted.blocks) ids.push_back(tape.leaf(t));
            TapedStack sb = forward_on_tape(tape, adapted.spec, ids, xb);
            VarId loss = joint_loss_node(tape, sb.probs, sb.features, yb, centers, cfg.reduction());
            TapedStack sq;
            if (!t_q.empty()) {
                sq = forward_on_tape(tape, adapted.spec, ids, t_q.samples);
                VarId lq = joint_loss_node(tape, sq.probs, sq.features, t_q.labels, centers, cfg.reduction());
                loss = weighted_sum(tape, loss, lq, 1.0f, 1.0f);
            }
            tape.backward(loss);
            for (size_t b = 0; b < ids.size(); ++b) {
                Tensor g = tape.grad_or_zeros(ids[b]);
                for (size_t i = 0; i < g.data.size(); ++i) grad_acc[b].data[i] += g.data[i];
            }
            batch_feats.push_back(tape.value(sb.features));
            batch_feat_labels.insert(batch_feat_labels.end(), yb.begin(), yb.end());
            if (!t_q.empty()) tq_feats = tape.value(sq.features);
        }

        const float inv = 1.0f / static_cast<float>(batches.size());
        for (Tensor& g : grad_acc)
            for (float& v : g.data) v *= inv;
        opt.step(params.tensors(), grad_acc);

        // centers move toward T_q plus this epoch's batch features
        int total = t_q.empty() ? 0 : tq_feats.dim(0);
        for (const Tensor& f : batch_feats) total += f.dim(0);
        Tensor feats = Tensor::zeros({total, params.spec.feature_width()});
        std::vector<int> feat_labels;
        int64_t at = 0;
        if (!t_q.empty()) {
            std::copy(tq_feats.data.begin(), tq_feats.data.end(), feats.data.begin());
            at += tq_feats.size();
            feat_labels.insert(feat_labels.end(), t_q.labels.begin(), t_q.labels.end());
        }
        for (const Tensor& f : batch_feats) {
            std::copy(f.data.begin(), f.data.end(), feats.data.begin() + at);
            at += f.size();
        }
        feat_labels.insert(feat_labels.end(), batch_feat_labels.begin(), batch_feat_labels.end());
        update_centers(centers, feats, feat_labels);

        eval_row(report, params, eval_set, {epoch, q.size(), q.class_counts, false, 0.0});
    }
    return report;
}

void write_adapt_report_csv(const std::string& path, const AdaptReport& report) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path);
    const size_t k = report.q_class_counts.size();
    f << "epoch,q_size";
    for (size_t c = 0; c < k; ++c) f << ",q_count_" << c;
    f << ",fallback,eval_acc\n";
    char buf[64];
    for (const AdaptEpochRow& row : report.rows) {
        f << row.epoch << "," << row.q_size;
        for (size_t c = 0; c < k; ++c)
            f << "," << (c < row.q_class_counts.size() ? row.q_class_counts[c] : 0);
        f << "," << (row.fallback ? 1 : 0) << ",";
        if (std::isfinite(row.eval_acc)) {
            std::snprintf(buf, sizeof buf, "%.6f", row.eval_acc);
            f << buf;
        }
        f << "\n";
    }
}

}  // namespace ssml

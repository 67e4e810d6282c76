#include "ssml/meta_train.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "ssml/rng.hpp"

namespace ssml {

void MetaConfig::validate(int n_sources) const {
    if (alpha <= 0 || beta <= 0) throw std::invalid_argument("meta config: learning rates must be positive");
    const int m = subjects_per_batch == 0 ? n_sources : subjects_per_batch;
    if (m < 1 || m > n_sources)
        throw std::invalid_argument("meta config: subjects_per_batch " + std::to_string(subjects_per_batch) +
                                    " outside [1," + std::to_string(n_sources) + "]");
    if (val_fraction <= 0 || val_fraction >= 1)
        throw std::invalid_argument("meta config: val_fraction outside (0,1)");
    if (max_epochs < 1 || patience < 0 || inner_steps < 0 || inner_batch < 0)
        throw std::invalid_argument("meta config: negative loop bounds");
}

namespace {

// Uniform batch without replacement; the whole task when batch covers it.
std::vector<int> sample_batch(int n, int batch, std::mt19937_64& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (batch <= 0 || batch >= n) return idx;
    for (int i = 0; i < batch; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
    }
    idx.resize(static_cast<size_t>(batch));
    return idx;
}

std::vector<int> labels_at(const SubjectDataset& ds, const std::vector<int>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(ds.labels[static_cast<size_t>(i)]);
    return out;
}

}  // namespace

ModelParams inner_adapt(const ModelParams& params, const SubjectDataset& task, const MetaConfig& cfg,
                        const ClassCenters& centers, std::mt19937_64& rng) {
    task.validate();
    if (task.n() < 1) throw std::invalid_argument("inner_adapt: empty task");
    ModelParams adapted = params;
    for (int s = 0; s < cfg.inner_steps; ++s) {
        std::vector<int> idx = sample_batch(task.n(), cfg.inner_batch, rng);
        Tensor x = gather_rows(task.samples, idx);
        std::vector<int> y = labels_at(task, idx);
        LossGrads lg = joint_loss_grads(adapted, x, y, centers, cfg.reduction());
        sgd_step(adapted.tensors(), lg.grads, cfg.alpha);
    }
    return adapted;
}

void meta_step(ModelParams& params, Adam& opt, const std::vector<const SubjectDataset*>& batch,
               const MetaConfig& cfg, ClassCenters& centers, std::mt19937_64& rng, MetaStepStats* stats) {
    if (batch.empty()) throw std::invalid_argument("meta_step: empty subject batch");
    std::vector<Tensor> meta_grad;
    for (const Tensor* t : params.tensors()) meta_grad.push_back(Tensor::zeros(t->shape));

    std::vector<Tensor> feat_parts;
    std::vector<int> feat_labels;
    double loss_sum = 0.0;
    for (const SubjectDataset* task : batch) {
        ModelParams adapted = inner_adapt(params, *task, cfg, centers, rng);
        std::vector<int> idx = sample_batch(task->n(), cfg.inner_batch, rng);
        Tensor x = gather_rows(task->samples, idx);
        std::vector<int> y = labels_at(*task, idx);
        LossGrads lg = joint_loss_grads(adapted, x, y, centers, cfg.reduction());
        loss_sum += lg.loss;
        for (size_t b = 0; b < meta_grad.size(); ++b)
            for (size_t i = 0; i < meta_grad[b].data.size(); ++i)
                meta_grad[b].data[i] += lg.grads[b].data[i];
        feat_parts.push_back(lg.features);
        feat_labels.insert(feat_labels.end(), y.begin(), y.end());
    }

    if (stats) {
        stats->mean_outer_loss = loss_sum / static_cast<double>(batch.size());
        stats->meta_grad = meta_grad;
    }
    opt.step(params.tensors(), meta_grad);

    int total = 0;
    for (const Tensor& f : feat_parts) total += f.dim(0);
    Tensor feats = Tensor::zeros({total, feat_parts.front().dim(1)});
    int at = 0;
    for (const Tensor& f : feat_parts) {
        std::copy(f.data.begin(), f.data.end(), feats.data.begin() + static_cast<int64_t>(at) * f.dim(1));
        at += f.dim(0);
    }
    update_centers(centers, feats, feat_labels);
}

namespace {

struct ValSplit {
    std::vector<SubjectDataset> train;
    Tensor val_x;
    std::vector<int> val_y;
};

ValSplit make_val_split(const std::vector<SubjectDataset>& sources, const MetaConfig& cfg,
                        std::mt19937_64& rng) {
    ValSplit out;
    if (cfg.subject_level_val) {
        std::vector<int> order(sources.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const int n_val = std::max(1, static_cast<int>(std::llround(cfg.val_fraction * sources.size())));
        if (n_val >= static_cast<int>(sources.size()))
            throw std::invalid_argument("pretrain: subject-level validation would consume every source");
        std::vector<const SubjectDataset*> val_subjects;
        for (size_t i = 0; i < order.size(); ++i) {
            const SubjectDataset& ds = sources[static_cast<size_t>(order[i])];
            if (static_cast<int>(i) < n_val) val_subjects.push_back(&ds);
            else out.train.push_back(ds);
        }
        int total = 0;
        for (const auto* ds : val_subjects) total += ds->n();
        out.val_x = Tensor::zeros({total, sources[0].channels(), sources[0].time_len()});
        int64_t row = static_cast<int64_t>(sources[0].channels()) * sources[0].time_len();
        int at = 0;
        for (const auto* ds : val_subjects) {
            std::copy(ds->samples.data.begin(), ds->samples.data.end(), out.val_x.data.begin() + at * row);
            out.val_y.insert(out.val_y.end(), ds->labels.begin(), ds->labels.end());
            at += ds->n();
        }
        return out;
    }

    // sample-level: stratified per (subject, class)
    std::vector<std::pair<const SubjectDataset*, int>> val_refs;
    for (const SubjectDataset& ds : sources) {
        std::vector<std::vector<int>> by_class(static_cast<size_t>(ds.n_classes));
        for (int i = 0; i < ds.n(); ++i) by_class[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])].push_back(i);
        std::vector<int> keep;
        for (auto& idx : by_class) {
            std::shuffle(idx.begin(), idx.end(), rng);
            const int n_val = static_cast<int>(cfg.val_fraction * static_cast<double>(idx.size()));
            for (size_t i = 0; i < idx.size(); ++i) {
                if (static_cast<int>(i) < n_val) val_refs.emplace_back(&ds, idx[i]);
                else keep.push_back(idx[i]);
            }
        }
        std::sort(keep.begin(), keep.end());
        SubjectDataset trimmed;
        trimmed.subject_id = ds.subject_id;
        trimmed.n_classes = ds.n_classes;
        trimmed.samples = gather_rows(ds.samples, keep);
        for (int i : keep) trimmed.labels.push_back(ds.labels[static_cast<size_t>(i)]);
        out.train.push_back(std::move(trimmed));
    }
    if (val_refs.empty())
        throw std::invalid_argument("pretrain: validation split is empty; need more samples per class");
    const int c = sources[0].channels(), t = sources[0].time_len();
    const int64_t row = static_cast<int64_t>(c) * t;
    out.val_x = Tensor::zeros({static_cast<int>(val_refs.size()), c, t});
    for (size_t i = 0; i < val_refs.size(); ++i) {
        const auto& [ds, idx] = val_refs[i];
        std::copy_n(ds->samples.data.begin() + idx * row, row, out.val_x.data.begin() + static_cast<int64_t>(i) * row);
        out.val_y.push_back(ds->labels[static_cast<size_t>(idx)]);
    }
    return out;
}

}  // namespace

PretrainResult pretrain(const ModelSpec& spec, const std::vector<SubjectDataset>& sources,
                        const MetaConfig& cfg, uint64_t seed) {
    if (sources.size() < 2)
        throw std::invalid_argument("pretrain: need at least 2 source subjects, got " +
                                    std::to_string(sources.size()));
    cfg.validate(static_cast<int>(sources.size()));
    for (const SubjectDataset& ds : sources) {
        ds.validate();
        if (ds.channels() != spec.channels || ds.time_len() != spec.time_len ||
            ds.n_classes != spec.n_classes)
            throw std::invalid_argument("pretrain: subject '" + ds.subject_id + "' does not match the spec");
    }

    std::mt19937_64 split_rng = make_rng(derive_seed(seed, 1));
    ValSplit split = make_val_split(sources, cfg, split_rng);

    PretrainResult res;
    res.params = build(spec, derive_seed(seed, 0));
    res.centers = ClassCenters::zeros(spec.n_classes, spec.feature_width(), cfg.center_lr, cfg.center_lambda);
    Adam opt(res.params.tensors(), AdamConfig{cfg.beta, 0.9f, 0.999f, 1e-8f, 0.0f});

    // pooled training view for the learning curves
    int pooled_n = 0;
    for (const SubjectDataset& ds : split.train) pooled_n += ds.n();
    Tensor train_x = Tensor::zeros({pooled_n, spec.channels, spec.time_len});
    std::vector<int> train_y;
    {
        const int64_t row = static_cast<int64_t>(spec.channels) * spec.time_len;
        int at = 0;
        for (const SubjectDataset& ds : split.train) {
            std::copy(ds.samples.data.begin(), ds.samples.data.end(), train_x.data.begin() + at * row);
            train_y.insert(train_y.end(), ds.labels.begin(), ds.labels.end());
            at += ds.n();
        }
    }

    std::mt19937_64 rng = make_rng(derive_seed(seed, 2));
    ModelParams best_params = res.params;
    ClassCenters best_centers = res.centers;
    double best_val = -1.0;
    int best_epoch = 0;
    int stale = 0;
    const int n_train_subjects = static_cast<int>(split.train.size());
    const int m = cfg.subjects_per_batch == 0 ? n_train_subjects
                                              : std::min(cfg.subjects_per_batch, n_train_subjects);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::vector<int> order(static_cast<size_t>(n_train_subjects));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (int at = 0; at < n_train_subjects; at += m) {
            std::vector<const SubjectDataset*> batch;
            for (int i = at; i < std::min(at + m, n_train_subjects); ++i)
                batch.push_back(&split.train[static_cast<size_t>(order[static_cast<size_t>(i)])]);
            meta_step(res.params, opt, batch, cfg, res.centers, rng);
        }

        EvalMetrics train_m = evaluate_metrics(res.params, train_x, train_y, res.centers, cfg.reduction());
        if (!std::isfinite(train_m.joint_loss))
            throw std::runtime_error("pretrain: training loss diverged at epoch " + std::to_string(epoch));
        const double val_acc = evaluate_metrics(res.params, split.val_x, split.val_y, res.centers).accuracy;
        res.history.push_back({epoch, train_m.accuracy, val_acc, train_m.joint_loss});

        if (val_acc > best_val) {
            best_val = val_acc;
            best_epoch = epoch;
            best_params = res.params;
            best_centers = res.centers;
            stale = 0;
        } else if (++stale > cfg.patience) {
            break;
        }
    }

    res.params = std::move(best_params);
    res.centers = std::move(best_centers);
    res.best_epoch = best_epoch;
    res.best_val_acc = best_val;
    return res;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path);
    f << "epoch,train_acc,val_acc,train_loss\n";
    char buf[160];
    for (const EpochStats& e : history) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f\n", e.epoch, e.train_acc, e.val_acc, e.train_loss);
        f << buf;
    }
}

}  // namespace ssml

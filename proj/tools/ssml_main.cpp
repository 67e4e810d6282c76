#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "ssml/config.hpp"
#include "ssml/gradcheck.hpp"
#include "ssml/harness.hpp"

namespace fs = std::filesystem;
using namespace ssml;

namespace {

void add_synth_flags(CLI::App* cmd, SynthConfig& s) {
    cmd->add_option("--subjects", s.n_subjects, "number of subjects");
    cmd->add_option("--classes", s.n_classes, "number of classes");
    cmd->add_option("--channels", s.channels, "channels per sample");
    cmd->add_option("--time-len", s.time_len, "time points per sample");
    cmd->add_option("--samples-per-subject", s.samples_per_subject, "samples per subject");
    cmd->add_option("--shift-scale", s.shift_scale, "inter-subject transform magnitude");
    cmd->add_option("--noise-sd", s.noise_sd, "additive noise sd");
    cmd->add_option("--synth-seed", s.seed, "generator seed");
}

void add_meta_flags(CLI::App* cmd, MetaConfig& m) {
    cmd->add_option("--alpha", m.alpha, "inner (base) learning rate");
    cmd->add_option("--beta", m.beta, "meta learning rate");
    cmd->add_option("--subjects-per-batch", m.subjects_per_batch, "subjects per meta batch (0 = all)");
    cmd->add_option("--inner-steps", m.inner_steps, "inner gradient steps per task");
    cmd->add_option("--inner-batch", m.inner_batch, "mini-batch size inside tasks (0 = full)");
    cmd->add_option("--max-epochs", m.max_epochs, "epoch cap");
    cmd->add_option("--patience", m.patience, "epochs without validation improvement before stopping");
    cmd->add_option("--val-fraction", m.val_fraction, "held-out validation fraction");
    cmd->add_flag("--subject-level-val", m.subject_level_val, "hold out whole subjects for validation");
    cmd->add_option("--center-lr", m.center_lr, "center update rate");
    cmd->add_option("--center-lambda", m.center_lambda, "center loss weight");
    cmd->add_flag("--ce-sum", m.ce_sum, "sum (not mean) the classification loss over the batch");
}

void add_adapt_flags(CLI::App* cmd, AdaptConfig& a) {
    cmd->add_option("--epsilon", a.epsilon, "confidence threshold");
    cmd->add_option("--sigma", a.sigma, "center distance threshold");
    cmd->add_option("--gamma", a.gamma, "fine-tune learning rate");
    cmd->add_option("--adapt-alpha", a.alpha, "inner rate during adaptation");
    cmd->add_option("--weight-decay", a.weight_decay, "decoupled weight decay");
    cmd->add_option("--outer-epochs", a.outer_epochs, "fine-tune epochs");
    cmd->add_option("--batches-per-epoch", a.batches_per_epoch, "balanced batches per epoch");
    cmd->add_option("--max-batch", a.max_batch, "cap on batch size");
    cmd->add_flag("--refresh-support", a.refresh_support, "rebuild the support set every epoch");
}

ClassCenters require_centers(const Checkpoint& ck) {
    if (!ck.centers) throw std::runtime_error("checkpoint has no centers block; re-run pretrain");
    return *ck.centers;
}

int cmd_synth(const std::string& out, const SynthConfig& cfg, const std::string& labels_csv) {
    std::vector<SubjectDataset> data = synth_generate(cfg);
    save_dataset(out, data);
    if (!labels_csv.empty()) export_labels_csv(labels_csv, data);
    std::cout << "wrote " << data.size() << " subjects to " << out << "\n";
    return 0;
}

int cmd_pretrain(const std::string& data_path, int exclude, const std::string& model,
                 const MetaConfig& meta, uint64_t seed, const std::string& out,
                 const std::string& history) {
    std::vector<SubjectDataset> data = load_dataset(data_path);
    std::vector<SubjectDataset> sources;
    for (int i = 0; i < static_cast<int>(data.size()); ++i)
        if (i != exclude) sources.push_back(data[static_cast<size_t>(i)]);
    ModelSpec spec;
    spec.kind = model_kind_from_string(model);
    spec.channels = sources.at(0).channels();
    spec.time_len = sources.at(0).time_len();
    spec.n_classes = sources.at(0).n_classes;
    PretrainResult res = pretrain(spec, sources, meta, seed);
    save_checkpoint(out, res.params, &res.centers);
    if (!history.empty()) write_history_csv(history, res.history);
    std::cout << "best validation accuracy " << res.best_val_acc << " at epoch " << res.best_epoch
              << "; checkpoint " << out << ".{manifest,blob}\n";
    return 0;
}

int cmd_adapt(const std::string& data_path, const std::string& ckpt, int target, const std::string& method,
              int shot, double eval_fraction, uint64_t split_seed, const AdaptConfig& adapt_in,
              const std::string& out, const std::string& report_path) {
    std::vector<SubjectDataset> data = load_dataset(data_path);
    if (target < 0 || target >= static_cast<int>(data.size()))
        throw std::out_of_range("adapt: target " + std::to_string(target) + " of " +
                                std::to_string(data.size()) + " subjects");
    Checkpoint ck = load_checkpoint(ckpt);
    ClassCenters centers = require_centers(ck);
    const SubjectDataset& subject = data[static_cast<size_t>(target)];
    FewShotSplit split = few_shot_sample(subject, shot, eval_fraction, split_seed);

    AdaptConfig cfg = adapt_in;
    cfg.n_shot = shot;
    const double before = evaluate_accuracy(ck.params, split.eval.samples, split.eval.labels);
    AdaptReport report;
    if (method_from_string(method) == Method::SSML)
        report = ssml_finetune(ck.params, centers, split.labeled, split.unlabeled, cfg, &split.eval);
    else
        report = supervised_finetune(ck.params, centers, split.labeled, cfg, &split.eval);
    const double after = evaluate_accuracy(ck.params, split.eval.samples, split.eval.labels);
    std::cout << "eval accuracy " << before << " -> " << after << " (support set " << report.q_size
              << (report.fallback ? ", supervised fallback" : "") << ")\n";
    if (!out.empty()) save_checkpoint(out, ck.params, &centers);
    if (!report_path.empty()) write_adapt_report_csv(report_path, report);
    return 0;
}

int cmd_eval(const std::string& data_path, const std::string& ckpt, int target,
             const std::string& features_path) {
    std::vector<SubjectDataset> data = load_dataset(data_path);
    Checkpoint ck = load_checkpoint(ckpt);
    if (!features_path.empty()) {
        std::vector<SubjectDataset> subset;
        if (target >= 0) subset.push_back(data.at(static_cast<size_t>(target)));
        export_features(ck.params, target >= 0 ? subset : data, features_path);
        std::cout << "features written to " << features_path << "\n";
    }
    auto score = [&](const SubjectDataset& ds) {
        const double acc = evaluate_accuracy(ck.params, ds.samples, ds.labels);
        std::cout << ds.subject_id << " accuracy " << acc << "\n";
    };
    if (target >= 0) score(data.at(static_cast<size_t>(target)));
    else
        for (const SubjectDataset& ds : data) score(ds);
    return 0;
}

int cmd_loso(const ExperimentConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    ExperimentReport report = run_loso(cfg);
    write_rows_csv(out_dir + "/rows.csv", report.rows);
    write_improvement_csv(out_dir + "/improvement.csv", improvement_table(report.rows));
    write_tests_csv(out_dir + "/wilcoxon.csv", report.tests);
    std::cout << summary_table(report.rows);
    std::cout << "reports in " << out_dir << "\n";
    return 0;
}

int cmd_report(const std::string& rows_path, const std::string& out_dir) {
    std::vector<ReportRow> rows = read_rows_csv(rows_path);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_improvement_csv(out_dir + "/improvement.csv", improvement_table(rows));
        write_tests_csv(out_dir + "/wilcoxon.csv", pairwise_tests(rows));
    }
    std::cout << summary_table(rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"subject-transfer meta-learning engine"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic subject-shift dataset (MSHD)");
    SynthConfig synth_cfg;
    std::string synth_out, synth_labels;
    synth->add_option("--out", synth_out, "output MSHD path")->required();
    synth->add_option("--labels-csv", synth_labels, "also write a label CSV");
    add_synth_flags(synth, synth_cfg);

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "meta-train a backbone over source subjects");
    std::string pre_data, pre_model = "STNN", pre_out, pre_history;
    int pre_exclude = -1;
    uint64_t pre_seed = 0;
    MetaConfig pre_meta;
    pre->add_option("--data", pre_data, "MSHD dataset")->required();
    pre->add_option("--out", pre_out, "checkpoint prefix")->required();
    pre->add_option("--exclude-subject", pre_exclude, "subject index left out of training");
    pre->add_option("--model", pre_model, "MLP|STNN|CNN");
    pre->add_option("--seed", pre_seed, "training seed");
    pre->add_option("--history", pre_history, "write per-epoch history CSV");
    add_meta_flags(pre, pre_meta);

    // adapt
    auto* ad = app.add_subcommand("adapt", "fine-tune a checkpoint on a target subject");
    std::string ad_data, ad_ckpt, ad_method = "SSML", ad_out, ad_report;
    int ad_target = 0, ad_shot = 5;
    double ad_eval_fraction = 0.3;
    uint64_t ad_split_seed = 0;
    AdaptConfig ad_cfg;
    ad->add_option("--data", ad_data, "MSHD dataset")->required();
    ad->add_option("--checkpoint", ad_ckpt, "checkpoint prefix")->required();
    ad->add_option("--target", ad_target, "target subject index")->required();
    ad->add_option("--method", ad_method, "SSML|MAML");
    ad->add_option("--shot", ad_shot, "labeled samples per class");
    ad->add_option("--eval-fraction", ad_eval_fraction, "held-out eval fraction");
    ad->add_option("--split-seed", ad_split_seed, "few-shot split seed");
    ad->add_option("--out", ad_out, "write the adapted checkpoint here");
    ad->add_option("--report", ad_report, "adaptation report CSV");
    add_adapt_flags(ad, ad_cfg);
    ad->add_option("--adapt-seed", ad_cfg.seed, "balanced-subsampling seed");

    // eval
    auto* ev = app.add_subcommand("eval", "score a checkpoint; optionally export features");
    std::string ev_data, ev_ckpt, ev_features;
    int ev_target = -1;
    ev->add_option("--data", ev_data, "MSHD dataset")->required();
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint prefix")->required();
    ev->add_option("--target", ev_target, "subject index (default: all)");
    ev->add_option("--export-features", ev_features, "write last-hidden-layer features CSV");

    // loso
    auto* lo = app.add_subcommand("loso", "full LOSO comparison grid");
    ExperimentConfig lo_cfg;
    std::string lo_out_dir = "loso_out", lo_config, lo_model, lo_methods, lo_shots, lo_seeds;
    // config file first, flags override
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") apply_config(lo_cfg, parse_config_file(argv[i + 1]));
    lo->add_option("--config", lo_config, "key = value config file with [sections]");
    lo->add_option("--data", lo_cfg.dataset_path, "MSHD dataset (omit to synthesize)");
    lo->add_option("--model", lo_model, "MLP|STNN|CNN");
    lo->add_option("--methods", lo_methods, "comma list of WOMETA,MAML,SSML");
    lo->add_option("--shots", lo_shots, "comma list of shot counts");
    lo->add_option("--seeds", lo_seeds, "comma list of seeds");
    lo->add_option("--eval-fraction", lo_cfg.eval_fraction, "held-out eval fraction per target");
    lo->add_option("--threads", lo_cfg.threads, "parallel (target, seed) cells");
    lo->add_option("--out-dir", lo_out_dir, "report directory");
    add_synth_flags(lo, lo_cfg.synth);
    add_meta_flags(lo, lo_cfg.meta);
    add_adapt_flags(lo, lo_cfg.adapt);

    // report
    auto* rep = app.add_subcommand("report", "tables from a rows CSV");
    std::string rep_rows, rep_out_dir;
    rep->add_option("--rows", rep_rows, "rows.csv from a loso run")->required();
    rep->add_option("--out-dir", rep_out_dir, "where to write improvement/wilcoxon CSVs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(synth_out, synth_cfg, synth_labels);
        if (pre->parsed())
            return cmd_pretrain(pre_data, pre_exclude, pre_model, pre_meta, pre_seed, pre_out, pre_history);
        if (ad->parsed())
            return cmd_adapt(ad_data, ad_ckpt, ad_target, ad_method, ad_shot, ad_eval_fraction,
                             ad_split_seed, ad_cfg, ad_out, ad_report);
        if (ev->parsed()) return cmd_eval(ev_data, ev_ckpt, ev_target, ev_features);
        if (lo->parsed()) {
            if (!lo_model.empty()) lo_cfg.model = model_kind_from_string(lo_model);
            if (!lo_methods.empty()) {
                lo_cfg.methods.clear();
                for (const std::string& m : split_list(lo_methods))
                    lo_cfg.methods.push_back(method_from_string(m));
            }
            if (!lo_shots.empty()) {
                lo_cfg.shots.clear();
                for (const std::string& s : split_list(lo_shots)) lo_cfg.shots.push_back(std::stoi(s));
            }
            if (!lo_seeds.empty()) {
                lo_cfg.seeds.clear();
                for (const std::string& s : split_list(lo_seeds)) lo_cfg.seeds.push_back(std::stoull(s));
            }
            return cmd_loso(lo_cfg, lo_out_dir);
        }
        if (rep->parsed()) return cmd_report(rep_rows, rep_out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

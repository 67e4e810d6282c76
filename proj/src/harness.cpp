#include "ssml/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ssml/rng.hpp"

namespace ssml {

std::string to_string(Method m) {
    switch (m) {
        case Method::WOMETA: return "WOMETA";
        case Method::MAML: return "MAML";
        case Method::SSML: return "SSML";
    }
    return "?";
}

Method method_from_string(std::string_view s) {
    std::string u(s);
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
    if (u == "WOMETA" || u == "W/O-META" || u == "WO-META") return Method::WOMETA;
    if (u == "MAML") return Method::MAML;
    if (u == "SSML") return Method::SSML;
    throw std::invalid_argument("unknown method '" + std::string(s) + "' (want WOMETA|MAML|SSML)");
}

void ExperimentConfig::validate() const {
    if (methods.empty()) throw std::invalid_argument("experiment: no methods requested");
    for (int s : shots)
        if (s < 0) throw std::invalid_argument("experiment: negative shot count");
    if (seeds.empty()) throw std::invalid_argument("experiment: no seeds");
    if (eval_fraction <= 0 || eval_fraction >= 1)
        throw std::invalid_argument("experiment: eval_fraction outside (0,1)");
    if (threads < 1) throw std::invalid_argument("experiment: threads < 1");
}

bool ExperimentConfig::has(Method m) const {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
}

namespace {

uint64_t split_hash(const FewShotSplit& split) {
    uint64_t h = 1469598103934665603ull;
    auto mix_vec = [&](const std::vector<int>& v) { h = bytes_hash(v.data(), v.size() * sizeof(int), h); };
    mix_vec(split.labeled_idx);
    mix_vec(split.unlabeled_idx);
    mix_vec(split.eval_idx);
    return h;
}

struct CellOutput {
    CellInfo info;
    std::vector<ReportRow> rows;
};

CellOutput run_cell(const ExperimentConfig& cfg, const std::vector<SubjectDataset>& datasets,
                    int target_idx, uint64_t seed) {
    auto [sources, target] = loso_split(datasets, target_idx);
    const uint64_t cell_seed = derive_seed(seed, 1000 + static_cast<uint64_t>(target_idx));

    ModelSpec spec;
    spec.kind = cfg.model;
    spec.channels = target.channels();
    spec.time_len = target.time_len();
    spec.n_classes = target.n_classes;

    PretrainResult pre = pretrain(spec, sources, cfg.meta, cell_seed);

    int max_shot = 0;
    for (int s : cfg.shots) max_shot = std::max(max_shot, s);
    FewShotSplit split = few_shot_sample(target, max_shot, cfg.eval_fraction, derive_seed(cell_seed, 7));

    CellOutput out;
    out.info = {target.subject_id, seed,
                mix64(pre.params.content_hash() ^ tensor_hash(pre.centers.centers)), split_hash(split)};

    const double base_acc = evaluate_accuracy(pre.params, split.eval.samples, split.eval.labels);
    if (cfg.has(Method::WOMETA))
        out.rows.push_back({to_string(Method::WOMETA), 0, target.subject_id, seed, base_acc});

    std::set<int> shot_set(cfg.shots.begin(), cfg.shots.end());
    for (int shot : shot_set) {
        LabeledSet t_q = labeled_subset(split.labeled, shot, spec.n_classes);
        if (cfg.has(Method::MAML)) {
            double acc = base_acc;  // no labels, nothing to fine-tune on
            if (shot > 0) {
                ModelParams p = pre.params;
                ClassCenters c = pre.centers;
                AdaptConfig ac = cfg.adapt;
                ac.n_shot = shot;
                supervised_finetune(p, c, t_q, ac);
                acc = evaluate_accuracy(p, split.eval.samples, split.eval.labels);
            }
            out.rows.push_back({to_string(Method::MAML), shot, target.subject_id, seed, acc});
        }
        if (cfg.has(Method::SSML)) {
            ModelParams p = pre.params;
            ClassCenters c = pre.centers;
            AdaptConfig ac = cfg.adapt;
            ac.n_shot = shot;
            ac.seed = derive_seed(cell_seed, 200 + static_cast<uint64_t>(shot));
            ssml_finetune(p, c, t_q, split.unlabeled, ac);
            const double acc = evaluate_accuracy(p, split.eval.samples, split.eval.labels);
            out.rows.push_back({to_string(Method::SSML), shot, target.subject_id, seed, acc});
        }
    }
    return out;
}

}  // namespace

ExperimentReport run_loso(const ExperimentConfig& config) {
    config.validate();
    std::vector<SubjectDataset> datasets =
        config.dataset_path.empty() ? synth_generate(config.synth) : load_dataset(config.dataset_path);
    if (datasets.size() < 2) throw std::invalid_argument("run_loso: need at least 2 subjects");

    struct Cell {
        int target;
        uint64_t seed;
    };
    std::vector<Cell> cells;
    for (uint64_t seed : config.seeds)
        for (int t = 0; t < static_cast<int>(datasets.size()); ++t) cells.push_back({t, seed});

    std::vector<CellOutput> outputs(cells.size());
    std::atomic<size_t> next{0};
    std::mutex log_mutex;
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (failure) return;
            }
            try {
                outputs[i] = run_cell(config, datasets, cells[i].target, cells[i].seed);
                std::lock_guard<std::mutex> lock(log_mutex);
                std::cerr << "[loso] target " << outputs[i].info.target << " seed " << cells[i].seed
                          << " done\n";
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    const int n_threads = std::min<int>(config.threads, static_cast<int>(cells.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (std::thread& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    ExperimentReport report;
    for (CellOutput& out : outputs) {
        report.cells.push_back(out.info);
        report.rows.insert(report.rows.end(), out.rows.begin(), out.rows.end());
    }
    std::sort(report.rows.begin(), report.rows.end(), [](const ReportRow& a, const ReportRow& b) {
        return std::tie(a.method, a.shot, a.target, a.seed) < std::tie(b.method, b.shot, b.target, b.seed);
    });
    report.tests = pairwise_tests(report.rows);
    return report;
}

namespace {

// mean accuracy over seeds per (method, shot, target)
std::map<std::string, std::map<int, std::map<std::string, double>>> seed_means(
    const std::vector<ReportRow>& rows) {
    std::map<std::string, std::map<int, std::map<std::string, std::pair<double, int>>>> acc;
    for (const ReportRow& r : rows) {
        auto& cell = acc[r.method][r.shot][r.target];
        cell.first += r.accuracy;
        cell.second += 1;
    }
    std::map<std::string, std::map<int, std::map<std::string, double>>> out;
    for (auto& [m, by_shot] : acc)
        for (auto& [s, by_target] : by_shot)
            for (auto& [t, v] : by_target) out[m][s][t] = v.first / v.second;
    return out;
}

}  // namespace

std::vector<ImprovementRow> improvement_table(const std::vector<ReportRow>& rows) {
    std::map<std::pair<std::string, uint64_t>, double> baseline;
    for (const ReportRow& r : rows)
        if (r.method == to_string(Method::WOMETA)) baseline[{r.target, r.seed}] = r.accuracy;
    if (baseline.empty()) throw std::invalid_argument("improvement_table: no WOMETA baseline rows");

    std::map<std::pair<std::string, int>, std::pair<double, int>> acc;
    for (const ReportRow& r : rows) {
        if (r.method == to_string(Method::WOMETA)) continue;
        auto it = baseline.find({r.target, r.seed});
        if (it == baseline.end())
            throw std::invalid_argument("improvement_table: missing baseline for target " + r.target +
                                        " seed " + std::to_string(r.seed));
        auto& cell = acc[{r.method, r.shot}];
        cell.first += r.accuracy - it->second;
        cell.second += 1;
    }
    std::vector<ImprovementRow> out;
    for (const auto& [key, v] : acc) out.push_back({key.first, key.second, v.first / v.second, v.second});
    return out;
}

std::vector<PairwiseTest> pairwise_tests(const std::vector<ReportRow>& rows) {
    const auto means = seed_means(rows);
    std::vector<PairwiseTest> out;
    const std::string wometa = to_string(Method::WOMETA);
    auto series = [&](const std::string& method, int shot,
                      const std::map<std::string, double>& against) -> std::pair<std::vector<double>, std::vector<double>> {
        std::vector<double> a, b;
        auto mit = means.find(method);
        if (mit == means.end()) return {};
        auto sit = mit->second.find(shot);
        if (sit == mit->second.end()) return {};
        for (const auto& [target, acc] : sit->second) {
            auto bit = against.find(target);
            if (bit == against.end()) continue;
            a.push_back(acc);
            b.push_back(bit->second);
        }
        return {a, b};
    };

    std::set<int> shots;
    std::set<std::string> methods;
    for (const ReportRow& r : rows) {
        methods.insert(r.method);
        if (r.method != wometa) shots.insert(r.shot);
    }

    std::vector<std::pair<std::string, std::string>> pairs;
    if (methods.count("SSML") && methods.count(wometa)) pairs.emplace_back("SSML", wometa);
    if (methods.count("SSML") && methods.count("MAML")) pairs.emplace_back("SSML", "MAML");
    if (methods.count("MAML") && methods.count(wometa)) pairs.emplace_back("MAML", wometa);

    for (int shot : shots) {
        for (const auto& [ma, mb] : pairs) {
            const std::map<std::string, double>* against = nullptr;
            if (mb == wometa) {
                auto it = means.find(wometa);
                if (it == means.end() || !it->second.count(0)) continue;
                against = &it->second.at(0);
            } else {
                auto it = means.find(mb);
                if (it == means.end() || !it->second.count(shot)) continue;
                against = &it->second.at(shot);
            }
            auto [a, b] = series(ma, shot, *against);
            if (a.empty()) continue;
            PairwiseTest t;
            t.method_a = ma;
            t.method_b = mb;
            t.shot = shot;
            try {
                WilcoxonResult w = wilcoxon_signed_rank(a, b);
                t.w = w.w;
                t.p = w.p;
                t.degenerate = w.degenerate;
            } catch (const std::invalid_argument&) {
                t.insufficient = true;
            }
            out.push_back(t);
        }
    }
    return out;
}

void export_features(const ModelParams& params, const std::vector<SubjectDataset>& datasets,
                     const std::string& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path);
    const int n = params.spec.feature_width();
    f << "subject_id,label";
    for (int j = 1; j <= n; ++j) f << ",h_" << j;
    f << "\n";
    char buf[32];
    constexpr int kChunk = 64;
    for (const SubjectDataset& ds : datasets) {
        ds.validate();
        const int64_t row = static_cast<int64_t>(ds.channels()) * ds.time_len();
        for (int at = 0; at < ds.n(); at += kChunk) {
            const int m = std::min(kChunk, ds.n() - at);
            Tensor part = Tensor::zeros({m, ds.channels(), ds.time_len()});
            std::copy_n(ds.samples.data.begin() + at * row, m * row, part.data.begin());
            ForwardResult fr = forward(params, part);
            for (int i = 0; i < m; ++i) {
                f << ds.subject_id << "," << ds.labels[static_cast<size_t>(at + i)];
                const float* h = fr.features.data.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) {
                    std::snprintf(buf, sizeof buf, "%.6g", static_cast<double>(h[j]));
                    f << "," << buf;
                }
                f << "\n";
            }
        }
    }
}

void write_rows_csv(const std::string& path, const std::vector<ReportRow>& rows) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path);
    f << "method,shot,target,seed,accuracy\n";
    char buf[64];
    for (const ReportRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6f", r.accuracy);
        f << r.method << "," << r.shot << "," << r.target << "," << r.seed << "," << buf << "\n";
    }
}

std::vector<ReportRow> read_rows_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "method,shot,target,seed,accuracy")
        throw FormatError("rows csv: unexpected header in " + path);
    std::vector<ReportRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        ReportRow r;
        std::string field;
        std::getline(is, r.method, ',');
        std::getline(is, field, ',');
        r.shot = std::stoi(field);
        std::getline(is, r.target, ',');
        std::getline(is, field, ',');
        r.seed = std::stoull(field);
        std::getline(is, field, ',');
        r.accuracy = std::stod(field);
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_improvement_csv(const std::string& path, const std::vector<ImprovementRow>& rows) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path);
    f << "method,shot,mean_improvement,pairs\n";
    char buf[64];
    for (const ImprovementRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6f", r.mean_improvement);
        f << r.method << "," << r.shot << "," << buf << "," << r.pairs << "\n";
    }
}

void write_tests_csv(const std::string& path, const std::vector<PairwiseTest>& tests) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path);
    f << "method_a,method_b,shot,w,p,flag\n";
    char buf[96];
    for (const PairwiseTest& t : tests) {
        const char* flag = t.insufficient ? "insufficient" : (t.degenerate ? "degenerate" : "ok");
        std::snprintf(buf, sizeof buf, "%.1f,%.6f", t.w, t.p);
        f << t.method_a << "," << t.method_b << "," << t.shot << "," << buf << "," << flag << "\n";
    }
}

std::string summary_table(const std::vector<ReportRow>& rows) {
    std::map<std::pair<std::string, int>, std::pair<double, int>> acc;
    for (const ReportRow& r : rows) {
        auto& cell = acc[{r.method, r.shot}];
        cell.first += r.accuracy;
        cell.second += 1;
    }
    std::ostringstream os;
    os << "method   shot  mean_acc  cells\n";
    char buf[96];
    for (const auto& [key, v] : acc) {
        std::snprintf(buf, sizeof buf, "%-8s %4d  %.4f   %d\n", key.first.c_str(), key.second,
                      v.first / v.second, v.second);
        os << buf;
    }
    return os.str();
}

}  // namespace ssml

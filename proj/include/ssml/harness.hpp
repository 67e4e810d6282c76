#pragma once

#include "ssml/adapt.hpp"
#include "ssml/data.hpp"
#include "ssml/meta_train.hpp"
#include "ssml/stats.hpp"

namespace ssml {

enum class Method { WOMETA, MAML, SSML };

std::string to_string(Method m);
Method method_from_string(std::string_view s);

struct ExperimentConfig {
    std::string dataset_path;  // empty: generate from synth
    SynthConfig synth;
    ModelKind model = ModelKind::STNN;
    MetaConfig meta;
    AdaptConfig adapt;
    std::vector<Method> methods{Method::WOMETA, Method::MAML, Method::SSML};
    std::vector<int> shots{1, 3, 5, 10};
    std::vector<uint64_t> seeds{0};
    double eval_fraction = 0.3;
    int threads = 1;

    void validate() const;
    bool has(Method m) const;
};

struct ReportRow {
    std::string method;
    int shot = 0;
    std::string target;
    uint64_t seed = 0;
    double accuracy = 0.0;
};

struct PairwiseTest {
    std::string method_a, method_b;
    int shot = 0;
    double w = 0.0;
    double p = 1.0;
    bool degenerate = false;
    bool insufficient = false;  // fewer than 5 nonzero paired differences
};

// Per-cell provenance; every method inside one (target, seed) cell consumes
// the same pre-trained checkpoint and the same few-shot split.
struct CellInfo {
    std::string target;
    uint64_t seed = 0;
    uint64_t checkpoint_hash = 0;
    uint64_t split_hash = 0;
};

struct ExperimentReport {
    std::vector<ReportRow> rows;
    std::vector<PairwiseTest> tests;
    std::vector<CellInfo> cells;
};

// Full LOSO grid: per (target, seed) pretrain once, then score every
// requested method and shot against the shared split. Cells may run in
// parallel; output order is deterministic regardless.
ExperimentReport run_loso(const ExperimentConfig& config);

struct ImprovementRow {
    std::string method;
    int shot = 0;
    double mean_improvement = 0.0;  // paired accuracy delta vs the no-adaptation baseline
    int pairs = 0;
};

std::vector<ImprovementRow> improvement_table(const std::vector<ReportRow>& rows);

// Wilcoxon per method pair and shot, averaging seeds before pairing over
// targets.
std::vector<PairwiseTest> pairwise_tests(const std::vector<ReportRow>& rows);

void export_features(const ModelParams& params, const std::vector<SubjectDataset>& datasets,
                     const std::string& path);

void write_rows_csv(const std::string& path, const std::vector<ReportRow>& rows);
std::vector<ReportRow> read_rows_csv(const std::string& path);
void write_improvement_csv(const std::string& path, const std::vector<ImprovementRow>& rows);
void write_tests_csv(const std::string& path, const std::vector<PairwiseTest>& tests);
std::string summary_table(const std::vector<ReportRow>& rows);

}  // namespace ssml

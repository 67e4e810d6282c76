#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ssml/data.hpp"
#include "ssml/optim.hpp"
#include "ssml/rng.hpp"
#include "ssml/train.hpp"

using namespace ssml;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
    SynthConfig c;
    c.n_subjects = 4;
    c.n_classes = 2;
    c.channels = 6;
    c.time_len = 24;
    c.samples_per_subject = 40;
    c.shift_scale = 0.3f;
    c.noise_sd = 0.1f;
    c.seed = 7;
    return c;
}

uint64_t dataset_hash(const std::vector<SubjectDataset>& data) {
    uint64_t h = 1469598103934665603ull;
    for (const SubjectDataset& ds : data) {
        h = bytes_hash(ds.subject_id.data(), ds.subject_id.size(), h);
        h = tensor_hash(ds.samples, h);
        h = bytes_hash(ds.labels.data(), ds.labels.size() * sizeof(int), h);
    }
    return h;
}

}  // namespace

TEST_CASE("zero shift and zero noise make all subjects identical") {
    SynthConfig cfg = small_config();
    cfg.shift_scale = 0.0f;
    cfg.noise_sd = 0.0f;
    std::vector<SubjectDataset> data = synth_generate(cfg);
    for (size_t s = 1; s < data.size(); ++s) {
        CHECK(tensor_hash(data[s].samples) == tensor_hash(data[0].samples));
        CHECK(data[s].labels == data[0].labels);
    }

    // a model fitted to one subject transfers perfectly to another
    ModelSpec spec;
    spec.kind = ModelKind::MLP;
    spec.channels = cfg.channels;
    spec.time_len = cfg.time_len;
    spec.n_classes = 2;
    spec.mlp_hidden = 16;
    ModelParams params = build(spec, 1);
    ClassCenters centers = ClassCenters::zeros(2, spec.feature_width());
    Adam opt(params.tensors(), AdamConfig{0.01f});
    for (int step = 0; step < 60; ++step) {
        LossGrads lg = joint_loss_grads(params, data[0].samples, data[0].labels, centers);
        opt.step(params.tensors(), lg.grads);
    }
    CHECK(evaluate_accuracy(params, data[1].samples, data[1].labels) == doctest::Approx(1.0));
}

TEST_CASE("generator mirrors the benchmark scale") {
    SynthConfig cfg;
    cfg.n_subjects = 8;
    cfg.samples_per_subject = 144;
    std::vector<SubjectDataset> data = synth_generate(cfg);
    CHECK(data.size() == 8);
    CHECK(data[0].samples.shape == std::vector<int>{144, 32, 128});
    CHECK(data[0].n_classes == 2);
}

TEST_CASE("likelihood classifier is near-perfect at small noise") {
    SynthConfig cfg = small_config();
    cfg.noise_sd = 0.05f;
    auto [data, truth] = synth_generate_with_truth(cfg);
    int hits = 0, total = 0;
    for (int s = 0; s < cfg.n_subjects; ++s) {
        const int64_t row = static_cast<int64_t>(cfg.channels) * cfg.time_len;
        for (int i = 0; i < data[static_cast<size_t>(s)].n(); ++i) {
            std::span<const float> x(data[static_cast<size_t>(s)].samples.data.data() + i * row,
                                     static_cast<size_t>(row));
            hits += truth.bayes_classify(s, x) == data[static_cast<size_t>(s)].labels[static_cast<size_t>(i)];
            ++total;
        }
    }
    CHECK(static_cast<double>(hits) / total >= 0.99);
}

TEST_CASE("generation is a pure function of the config") {
    SynthConfig cfg = small_config();
    CHECK(dataset_hash(synth_generate(cfg)) == dataset_hash(synth_generate(cfg)));
    cfg.seed += 1;
    CHECK(dataset_hash(synth_generate(cfg)) != dataset_hash(synth_generate(small_config())));
}

TEST_CASE("generator rejects impossible configurations") {
    SynthConfig cfg = small_config();
    cfg.samples_per_subject = 1;
    CHECK_THROWS_AS(synth_generate(cfg), std::invalid_argument);
    SynthConfig cfg2 = small_config();
    cfg2.noise_sd = -1.0f;
    CHECK_THROWS_AS(synth_generate(cfg2), std::invalid_argument);
}

TEST_CASE("loso_split") {
    SynthConfig cfg = small_config();
    cfg.n_subjects = 8;
    std::vector<SubjectDataset> data = synth_generate(cfg);
    auto [sources, target] = loso_split(data, 0);
    CHECK(sources.size() == 7);
    CHECK(target.subject_id == "S0");
    std::set<std::string> ids;
    for (const SubjectDataset& ds : sources) ids.insert(ds.subject_id);
    CHECK_FALSE(ids.count(target.subject_id));

    std::vector<SubjectDataset> two(data.begin(), data.begin() + 2);
    CHECK(loso_split(two, 1).first.size() == 1);

    CHECK_THROWS_AS(loso_split(data, 8), std::out_of_range);
    CHECK_THROWS_AS(loso_split({data[0]}, 0), std::invalid_argument);
}

TEST_CASE("few_shot_sample honors counts, disjointness and determinism") {
    SynthConfig cfg = small_config();
    cfg.samples_per_subject = 144;
    cfg.channels = 4;
    cfg.time_len = 8;
    std::vector<SubjectDataset> data = synth_generate(cfg);
    SubjectDataset& target = data[0];

    FewShotSplit split = few_shot_sample(target, 5, 0.3, 11);
    CHECK(split.labeled.n() == 10);
    std::vector<int> counts(2, 0);
    for (int y : split.labeled.labels) ++counts[static_cast<size_t>(y)];
    CHECK(counts == std::vector<int>{5, 5});

    std::set<int> seen;
    for (const std::vector<int>* part : {&split.labeled_idx, &split.eval_idx, &split.unlabeled_idx})
        for (int i : *part) CHECK(seen.insert(i).second);
    CHECK(static_cast<int>(seen.size()) == target.n());

    FewShotSplit again = few_shot_sample(target, 5, 0.3, 11);
    CHECK(again.labeled_idx == split.labeled_idx);
    CHECK(again.eval_idx == split.eval_idx);

    FewShotSplit zero = few_shot_sample(target, 0, 0.3, 11);
    CHECK(zero.labeled.empty());
    CHECK(zero.unlabeled.dim(0) + zero.eval.n() == target.n());

    try {
        few_shot_sample(target, 80, 0.3, 11);
        FAIL("expected class-count error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("class") != std::string::npos);
    }
}

TEST_CASE("labeled_subset nests smaller shot counts") {
    SynthConfig cfg = small_config();
    std::vector<SubjectDataset> data = synth_generate(cfg);
    FewShotSplit split = few_shot_sample(data[0], 10, 0.2, 3);
    LabeledSet five = labeled_subset(split.labeled, 5, 2);
    LabeledSet three = labeled_subset(split.labeled, 3, 2);
    CHECK(five.n() == 10);
    CHECK(three.n() == 6);
    // nesting: the 3-shot samples are the first 3 per class of the 5-shot set
    LabeledSet three_of_five = labeled_subset(five, 3, 2);
    CHECK(tensor_hash(three.samples) == tensor_hash(three_of_five.samples));
    CHECK_THROWS_AS(labeled_subset(split.labeled, 11, 2), std::invalid_argument);
}

TEST_CASE("dataset container round-trips and rejects corruption") {
    const std::string path = (fs::temp_directory_path() / "ssml_data_test.mshd").string();
    std::vector<SubjectDataset> data = synth_generate(small_config());
    save_dataset(path, data);
    CHECK(dataset_hash(load_dataset(path)) == dataset_hash(data));

    {  // corrupt magic
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_dataset(path), FormatError);

    const std::string empty_path = (fs::temp_directory_path() / "ssml_empty.mshd").string();
    std::ofstream(empty_path).close();
    CHECK_THROWS_AS(load_dataset(empty_path), FormatError);

    save_dataset(path, data);
    fs::resize_file(path, fs::file_size(path) / 2);
    CHECK_THROWS_AS(load_dataset(path), FormatError);
}

TEST_CASE("label csv export") {
    const std::string path = (fs::temp_directory_path() / "ssml_labels.csv").string();
    std::vector<SubjectDataset> data = synth_generate(small_config());
    export_labels_csv(path, data);
    std::ifstream f(path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "subject_id,index,label");
    int lines = 0;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 4 * 40);
}

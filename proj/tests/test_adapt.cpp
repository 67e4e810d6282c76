#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "ssml/adapt.hpp"
#include "ssml/meta_train.hpp"
#include "ssml/rng.hpp"

using namespace ssml;

namespace {

SynthConfig toy_config(float shift = 0.5f, float noise = 0.25f, uint64_t seed = 3) {
    SynthConfig c;
    c.n_subjects = 4;
    c.n_classes = 2;
    c.channels = 6;
    c.time_len = 24;
    c.samples_per_subject = 80;
    c.shift_scale = shift;
    c.noise_sd = noise;
    c.seed = seed;
    return c;
}

ModelSpec toy_spec(const SynthConfig& c) {
    ModelSpec s;
    s.kind = ModelKind::STNN;
    s.channels = c.channels;
    s.time_len = c.time_len;
    s.n_classes = c.n_classes;
    s.stnn_spatial_filters = 4;
    s.stnn_temporal_filters = 8;
    return s;
}

// MLP whose logits are pure biases: every sample gets the same probabilities.
ModelParams rigged_model(int channels, int time_len, float logit0) {
    ModelSpec spec;
    spec.kind = ModelKind::MLP;
    spec.channels = channels;
    spec.time_len = time_len;
    spec.n_classes = 2;
    spec.mlp_hidden = 2;
    ModelParams p = build(spec, 0);
    for (float& v : p.block("hidden.W").data) v = 0.0f;
    for (float& v : p.block("out.W").data) v = 0.0f;
    p.block("out.b").data = {logit0, 0.0f};
    return p;
}

uint64_t params_hash(const ModelParams& p) { return p.content_hash(); }

std::vector<PseudoSample> random_pseudo(std::mt19937_64& rng, int n, int k) {
    std::uniform_real_distribution<float> conf(0.0f, 1.0f), dist(0.0f, 2.0f);
    std::uniform_int_distribution<int> label(0, k - 1);
    std::vector<PseudoSample> out;
    for (int i = 0; i < n; ++i) out.push_back({i, label(rng), conf(rng), dist(rng)});
    return out;
}

}  // namespace

TEST_CASE("pseudo_label reports argmax, confidence and center distance") {
    // logit ln(19) vs 0 -> probabilities (0.95, 0.05) for every input
    ModelParams p = rigged_model(2, 3, std::log(19.0f));
    Tensor x = Tensor::zeros({1, 2, 3});
    ForwardResult fr = forward(p, x);
    ClassCenters centers = ClassCenters::zeros(2, 2);
    std::copy(fr.features.data.begin(), fr.features.data.end(), centers.centers.data.begin());

    std::vector<PseudoSample> ps = pseudo_label(p, centers, x);
    REQUIRE(ps.size() == 1);
    CHECK(ps[0].pseudo_label == 0);
    CHECK(ps[0].confidence == doctest::Approx(0.95).epsilon(1e-4));
    CHECK(ps[0].distance == doctest::Approx(0.0));

    // shifting the center by 1 in both coordinates gives d = 0.5 at n = 2
    for (float& v : centers.centers.data) v += 1.0f;
    ps = pseudo_label(p, centers, x);
    CHECK(ps[0].distance == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("pseudo_label resolves ties to the lowest class") {
    ModelParams p = rigged_model(2, 3, 0.0f);  // probabilities (0.5, 0.5)
    ClassCenters centers = ClassCenters::zeros(2, 2);
    Tensor x = Tensor::zeros({3, 2, 3});
    for (const PseudoSample& s : pseudo_label(p, centers, x)) {
        CHECK(s.pseudo_label == 0);
        CHECK(s.confidence == doctest::Approx(0.5));
    }
    CHECK(pseudo_label(p, centers, Tensor{}).empty());
}

TEST_CASE("build_support_set applies the strict filter") {
    std::vector<PseudoSample> ps = {
        {0, 0, 0.95f, 0.5f},  // in
        {1, 1, 0.95f, 1.5f},  // distance too large
        {2, 0, 0.85f, 0.2f},  // confidence too low
        {3, 1, 0.90f, 0.2f},  // boundary confidence: excluded by strict >
        {4, 0, 0.91f, 1.0f},  // boundary distance: excluded by strict <
    };
    SupportSet q = build_support_set(ps, 0.9f, 1.0f, 2);
    REQUIRE(q.size() == 1);
    CHECK(q.members[0].index == 0);
    CHECK(q.class_counts == std::vector<int>{1, 0});

    SupportSet none = build_support_set(ps, 1.0f, 1.0f, 2);
    CHECK(none.empty());
}

TEST_CASE("build_support_set equals a brute-force comprehension on random inputs") {
    for (uint64_t seed = 0; seed < 60; ++seed) {
        std::mt19937_64 rng = make_rng(seed + 900);
        std::uniform_real_distribution<float> ed(0.1f, 0.99f), sd(0.1f, 2.0f);
        const int k = 3;
        std::vector<PseudoSample> ps = random_pseudo(rng, 40, k);
        const float eps = ed(rng), sig = sd(rng);
        SupportSet q = build_support_set(ps, eps, sig, k);

        std::vector<int> expect;
        for (const PseudoSample& s : ps)
            if (s.confidence > eps && s.distance < sig) expect.push_back(s.index);
        REQUIRE(q.size() == static_cast<int>(expect.size()));
        for (size_t i = 0; i < expect.size(); ++i) CHECK(q.members[i].index == expect[i]);  // order kept
        std::vector<int> counts(k, 0);
        for (const PseudoSample& s : q.members) ++counts[static_cast<size_t>(s.pseudo_label)];
        CHECK(counts == q.class_counts);
    }
}

TEST_CASE("balance_subsample draws the min count per present class") {
    std::vector<PseudoSample> ps;
    for (int i = 0; i < 10; ++i) ps.push_back({i, 0, 0.99f, 0.1f});
    for (int i = 10; i < 14; ++i) ps.push_back({i, 1, 0.99f, 0.1f});
    SupportSet q = build_support_set(ps, 0.9f, 1.0f, 2);
    REQUIRE(q.class_counts == std::vector<int>{10, 4});

    std::mt19937_64 rng = make_rng(1);
    auto batches = balance_subsample(q, 4, 64, rng);
    int total = 0;
    std::set<int> seen;
    std::vector<int> picked_counts(2, 0);
    size_t max_len = 0, min_len = SIZE_MAX;
    for (const auto& b : batches) {
        total += static_cast<int>(b.size());
        max_len = std::max(max_len, b.size());
        min_len = std::min(min_len, b.size());
        for (int m : b) {
            CHECK(seen.insert(m).second);  // no member twice
            ++picked_counts[static_cast<size_t>(q.members[static_cast<size_t>(m)].pseudo_label)];
        }
    }
    CHECK(total == 8);
    CHECK(picked_counts == std::vector<int>{4, 4});
    CHECK(max_len - min_len <= 1);

    std::mt19937_64 rng_a = make_rng(5), rng_b = make_rng(5);
    CHECK(balance_subsample(q, 4, 64, rng_a) == balance_subsample(q, 4, 64, rng_b));
}

TEST_CASE("balance_subsample handles a single-class support set") {
    std::vector<PseudoSample> ps;
    for (int i = 0; i < 6; ++i) ps.push_back({i, 0, 0.99f, 0.1f});
    SupportSet q = build_support_set(ps, 0.9f, 1.0f, 2);
    std::mt19937_64 rng = make_rng(2);
    auto batches = balance_subsample(q, 4, 64, rng);
    int total = 0;
    for (const auto& b : batches) total += static_cast<int>(b.size());
    CHECK(total == 6);

    SupportSet empty;
    empty.class_counts = {0, 0};
    CHECK(balance_subsample(empty, 4, 64, rng).empty());
}

TEST_CASE("balance_subsample respects the batch cap") {
    std::vector<PseudoSample> ps;
    for (int i = 0; i < 300; ++i) ps.push_back({i, i % 2, 0.99f, 0.1f});
    SupportSet q = build_support_set(ps, 0.9f, 1.0f, 2);
    std::mt19937_64 rng = make_rng(3);
    auto batches = balance_subsample(q, 2, 64, rng);
    CHECK(batches.size() >= 5);  // 300 picked, cap 64
    for (const auto& b : batches) CHECK(b.size() <= 64);
}

TEST_CASE("epsilon 1 collapses ssml onto the supervised path bitwise") {
    SynthConfig cfg = toy_config();
    std::vector<SubjectDataset> data = synth_generate(cfg);
    MetaConfig mc;
    mc.alpha = 0.01f;
    mc.beta = 0.005f;
    mc.max_epochs = 10;
    mc.patience = 5;
    auto [sources, target] = loso_split(data, 0);
    PretrainResult pre = pretrain(toy_spec(cfg), sources, mc, 17);
    FewShotSplit split = few_shot_sample(target, 5, 0.3, 5);

    AdaptConfig ac;
    ac.outer_epochs = 10;
    ac.seed = 77;

    ModelParams pa = pre.params;
    ClassCenters ca = pre.centers;
    AdaptConfig closed = ac;
    closed.epsilon = 1.0f;  // strict > 1 admits nothing
    AdaptReport ra = ssml_finetune(pa, ca, split.labeled, split.unlabeled, closed);
    CHECK(ra.fallback);
    CHECK(ra.q_size == 0);

    ModelParams pb = pre.params;
    ClassCenters cb = pre.centers;
    supervised_finetune(pb, cb, split.labeled, ac);

    CHECK(params_hash(pa) == params_hash(pb));
    CHECK(tensor_hash(ca.centers) == tensor_hash(cb.centers));
}

TEST_CASE("ssml_finetune edge cases") {
    SynthConfig cfg = toy_config();
    std::vector<SubjectDataset> data = synth_generate(cfg);
    MetaConfig mc;
    mc.alpha = 0.01f;
    mc.beta = 0.005f;
    mc.max_epochs = 6;
    mc.patience = 3;
    auto [sources, target] = loso_split(data, 1);
    PretrainResult pre = pretrain(toy_spec(cfg), sources, mc, 4);
    FewShotSplit split = few_shot_sample(target, 5, 0.3, 6);

    SUBCASE("no support set and no labels is an error") {
        ModelParams p = pre.params;
        ClassCenters c = pre.centers;
        AdaptConfig ac;
        ac.epsilon = 1.0f;
        LabeledSet none;
        try {
            ssml_finetune(p, c, none, split.unlabeled, ac);
            FAIL("expected error");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("nothing to adapt on") != std::string::npos);
        }
    }

    SUBCASE("zero outer epochs is a no-op") {
        ModelParams p = pre.params;
        ClassCenters c = pre.centers;
        const uint64_t before = params_hash(p);
        AdaptConfig ac;
        ac.outer_epochs = 0;
        ac.epsilon = 0.5f;
        ac.sigma = 10.0f;
        AdaptReport r = ssml_finetune(p, c, split.labeled, split.unlabeled, ac);
        CHECK(params_hash(p) == before);
        CHECK(r.rows.empty());
    }

    SUBCASE("zero-shot mode adapts on pseudo labels alone") {
        ModelParams p = pre.params;
        ClassCenters c = pre.centers;
        const uint64_t before = params_hash(p);
        AdaptConfig ac;
        ac.epsilon = 0.6f;
        ac.sigma = 10.0f;
        ac.outer_epochs = 3;
        LabeledSet none;
        AdaptReport r = ssml_finetune(p, c, none, split.unlabeled, ac, &split.eval);
        CHECK(r.q_size > 0);
        CHECK_FALSE(r.fallback);
        CHECK(params_hash(p) != before);
        REQUIRE(r.rows.size() == 3);
        for (const AdaptEpochRow& row : r.rows) CHECK(std::isfinite(row.eval_acc));
    }

    SUBCASE("support set is frozen through the loop unless refreshed") {
        ModelParams p = pre.params;
        ClassCenters c = pre.centers;
        AdaptConfig ac;
        ac.epsilon = 0.6f;
        ac.sigma = 10.0f;
        ac.outer_epochs = 4;
        AdaptReport r = ssml_finetune(p, c, split.labeled, split.unlabeled, ac);
        for (const AdaptEpochRow& row : r.rows) {
            CHECK(row.q_size == r.q_size);
            CHECK(row.q_class_counts == r.q_class_counts);
        }

        ModelParams p2 = pre.params;
        ClassCenters c2 = pre.centers;
        AdaptConfig refresh = ac;
        refresh.refresh_support = true;
        AdaptReport r2 = ssml_finetune(p2, c2, split.labeled, split.unlabeled, refresh, &split.eval);
        CHECK(r2.rows.size() == 4);
    }

    SUBCASE("supervised_finetune requires labels") {
        ModelParams p = pre.params;
        ClassCenters c = pre.centers;
        LabeledSet none;
        CHECK_THROWS_AS(supervised_finetune(p, c, none, AdaptConfig{}), std::invalid_argument);
    }
}

TEST_CASE("adaptation improves accuracy on shifted targets for most seeds") {
    int improved = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        SynthConfig cfg = toy_config(0.55f, 0.3f, seed + 40);
        std::vector<SubjectDataset> data = synth_generate(cfg);
        MetaConfig mc;
        mc.alpha = 0.01f;
        mc.beta = 0.005f;
        mc.max_epochs = 25;
        mc.patience = 8;
        auto [sources, target] = loso_split(data, 0);
        PretrainResult pre = pretrain(toy_spec(cfg), sources, mc, seed);
        FewShotSplit split = few_shot_sample(target, 10, 0.3, seed + 1);

        const double before = evaluate_accuracy(pre.params, split.eval.samples, split.eval.labels);
        ModelParams p = pre.params;
        ClassCenters c = pre.centers;
        AdaptConfig ac;
        ac.sigma = 5.0f;
        ac.gamma = 0.005f;
        ac.seed = seed;
        ssml_finetune(p, c, split.labeled, split.unlabeled, ac);
        const double after = evaluate_accuracy(p, split.eval.samples, split.eval.labels);
        improved += after > before;
    }
    CHECK(improved >= 8);
}

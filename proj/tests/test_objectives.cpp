#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ssml/objectives.hpp"
#include "ssml/ops.hpp"
#include "ssml/rng.hpp"

using namespace ssml;

namespace {

Tensor randn(std::vector<int> shape, std::mt19937_64& rng, float sd = 1.0f) {
    std::normal_distribution<float> dist(0.0f, sd);
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.data) v = dist(rng);
    return t;
}

// literal transcription of the center update rule, double precision
Tensor centers_oracle(const Tensor& centers, float lr, const Tensor& feats, const std::vector<int>& labels) {
    const int k = centers.dim(0), n = centers.dim(1), m = feats.dim(0);
    Tensor out = centers;
    for (int j = 0; j < k; ++j) {
        double count = 0.0;
        std::vector<double> num(static_cast<size_t>(n), 0.0);
        for (int i = 0; i < m; ++i) {
            if (labels[static_cast<size_t>(i)] != j) continue;
            count += 1.0;
            for (int d = 0; d < n; ++d)
                num[static_cast<size_t>(d)] += static_cast<double>(centers(j, d)) -
                                               static_cast<double>(feats(i, d));
        }
        if (count == 0.0) continue;
        for (int d = 0; d < n; ++d) {
            const double delta = num[static_cast<size_t>(d)] / (1.0 + count);
            out(j, d) = static_cast<float>(static_cast<double>(centers(j, d)) - lr * delta);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("cross_entropy hand values") {
    std::vector<int> y0{0}, y1{1};
    CHECK(cross_entropy(Tensor::from({1, 2}, {1, 0}), y0) == doctest::Approx(0.0));
    CHECK(cross_entropy(Tensor::from({1, 2}, {0.5f, 0.5f}), y1) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(cross_entropy(Tensor::from({1, 2}, {0, 1}), y0) ==
          doctest::Approx(-std::log(1e-12)).epsilon(1e-6));
    CHECK_THROWS_AS(cross_entropy(Tensor::from({1, 2}, {1, 0}), std::vector<int>{2}), std::out_of_range);
}

TEST_CASE("center_loss hand values") {
    Tensor c = Tensor::zeros({2, 2});
    CHECK(center_loss(Tensor::from({1, 2}, {3, 4}), std::vector<int>{0}, c) == doctest::Approx(12.5));
    Tensor c2 = Tensor::from({1, 2}, {3, 4});
    CHECK(center_loss(Tensor::from({1, 2}, {3, 4}), std::vector<int>{0}, c2) == doctest::Approx(0.0));
    CHECK(center_loss(Tensor::from({2, 2}, {1, 0, 0, 2}), std::vector<int>{0, 1}, c) == doctest::Approx(2.5));
    CHECK_THROWS_AS(center_loss(Tensor::from({1, 3}, {1, 2, 3}), std::vector<int>{0}, c), ShapeError);
}

TEST_CASE("joint_loss composition") {
    Tensor probs = Tensor::from({1, 2}, {0.60653066f, 0.39346934f});  // ce = -log(0.60653) ~ 0.5
    Tensor feats = Tensor::from({1, 2}, {3, 4});
    ClassCenters centers = ClassCenters::zeros(2, 2);
    std::vector<int> y{0};

    centers.lambda = 0.0f;
    CHECK(joint_loss(probs, feats, y, centers) == doctest::Approx(cross_entropy(probs, y)));

    centers.lambda = 0.001f;
    CHECK(joint_loss(probs, feats, y, centers) == doctest::Approx(0.5 + 0.001 * 12.5).epsilon(1e-5));
}

TEST_CASE("joint loss gradient w.r.t. features and logits matches finite differences") {
    std::mt19937_64 rng = make_rng(11);
    const int m = 4, k = 3, n = 5;
    Tensor logits = randn({m, k}, rng);
    Tensor feats = randn({m, n}, rng);
    ClassCenters centers = ClassCenters::zeros(k, n);
    centers.centers = randn({k, n}, rng);
    centers.lambda = 0.01f;
    std::vector<int> labels{0, 2, 1, 0};

    Tape tape;
    VarId zi = tape.leaf(logits);
    VarId hi = tape.leaf(feats);
    VarId probs = softmax(tape, zi);
    VarId loss = joint_loss_node(tape, probs, hi, labels, centers);
    tape.backward(loss);

    TensorD cd = centers.centers.cast<double>();
    auto loss_of = [&](const TensorD& z, const TensorD& h) {
        return joint_loss(softmax_forward(z), h, labels, cd, static_cast<double>(centers.lambda));
    };
    const double h_step = 1e-5;

    {
        TensorD z = logits.cast<double>();
        const Tensor& gz = tape.grad(zi);
        for (size_t i = 0; i < z.data.size(); ++i) {
            const double orig = z.data[i];
            z.data[i] = orig + h_step;
            const double lp = loss_of(z, feats.cast<double>());
            z.data[i] = orig - h_step;
            const double lm = loss_of(z, feats.cast<double>());
            z.data[i] = orig;
            const double gn = (lp - lm) / (2 * h_step);
            CHECK(std::fabs(gz.data[i] - gn) / std::max(1.0, std::fabs(gn)) < 1e-4);
        }
    }
    {
        TensorD h = feats.cast<double>();
        const Tensor& gh = tape.grad(hi);
        for (size_t i = 0; i < h.data.size(); ++i) {
            const double orig = h.data[i];
            h.data[i] = orig + h_step;
            const double lp = loss_of(logits.cast<double>(), h);
            h.data[i] = orig - h_step;
            const double lm = loss_of(logits.cast<double>(), h);
            h.data[i] = orig;
            const double gn = (lp - lm) / (2 * h_step);
            CHECK(std::fabs(gh.data[i] - gn) / std::max(1.0, std::fabs(gn)) < 1e-4);
        }
    }
}

TEST_CASE("update_centers hand examples") {
    ClassCenters c = ClassCenters::zeros(2, 2, 0.001f);
    Tensor feats = Tensor::from({2, 2}, {2, 0, 4, 0});
    update_centers(c, feats, std::vector<int>{0, 0});
    CHECK(c.centers(0, 0) == doctest::Approx(0.002));
    CHECK(c.centers(0, 1) == doctest::Approx(0.0));
    CHECK(c.centers(1, 0) == doctest::Approx(0.0));  // class 1 absent, untouched

    ClassCenters c2 = ClassCenters::zeros(2, 2, 0.5f);
    c2.centers(0, 0) = 1.0f;
    update_centers(c2, Tensor::from({1, 2}, {1, 0}), std::vector<int>{0});
    CHECK(c2.centers(0, 0) == doctest::Approx(1.0));  // feature equals its center
}

TEST_CASE("update_centers equals the literal rule on 100 random batches") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng = make_rng(seed + 500);
        std::uniform_int_distribution<int> kd(2, 5), md(1, 12), nd(1, 8), yd(0, 9);
        const int k = kd(rng), m = md(rng), n = nd(rng);
        ClassCenters centers = ClassCenters::zeros(k, n, 0.05f);
        centers.centers = randn({k, n}, rng);
        Tensor feats = randn({m, n}, rng);
        std::vector<int> labels;
        for (int i = 0; i < m; ++i) labels.push_back(yd(rng) % k);

        Tensor expect = centers_oracle(centers.centers, centers.lr_center, feats, labels);
        update_centers(centers, feats, labels);
        for (size_t i = 0; i < expect.data.size(); ++i)
            CHECK(std::fabs(centers.centers.data[i] - expect.data[i]) <= 1e-7);
    }
}

TEST_CASE("feature_distance hand values") {
    CHECK(feature_distance(Tensor::from({2}, {1, 1}), Tensor::from({2}, {0, 0})) == doctest::Approx(0.5));
    CHECK(feature_distance(Tensor::from({3}, {1, 2, 3}), Tensor::from({3}, {1, 2, 3})) == doctest::Approx(0.0));
    CHECK(feature_distance(Tensor::from({4}, {2, 0, 0, 0}), Tensor::from({4}, {0, 0, 0, 0})) ==
          doctest::Approx(0.5));
    CHECK_THROWS_AS(feature_distance(Tensor::from({2}, {1, 1}), Tensor::from({3}, {0, 0, 0})), ShapeError);
}

TEST_CASE("center loss properties") {
    std::mt19937_64 rng = make_rng(17);
    for (int trial = 0; trial < 25; ++trial) {
        const int m = 5, n = 4, k = 3;
        Tensor feats = randn({m, n}, rng);
        Tensor centers = randn({k, n}, rng);
        std::uniform_int_distribution<int> yd(0, k - 1);
        std::vector<int> labels;
        for (int i = 0; i < m; ++i) labels.push_back(yd(rng));

        const double cl = center_loss(feats, labels, centers);
        CHECK(cl >= 0.0);

        // per-sample normalized distance is the per-sample center loss over n
        for (int i = 0; i < m; ++i) {
            Tensor h = Tensor::zeros({1, n});
            std::copy_n(feats.data.begin() + static_cast<int64_t>(i) * n, n, h.data.begin());
            Tensor c = Tensor::zeros({n});
            std::copy_n(centers.data.begin() + static_cast<int64_t>(labels[static_cast<size_t>(i)]) * n, n,
                        c.data.begin());
            Tensor crow = Tensor::zeros({1, n});
            crow.data = c.data;
            const double single = center_loss(h, std::vector<int>{0}, crow);
            Tensor hflat = Tensor::zeros({n});
            hflat.data = h.data;
            CHECK(feature_distance(hflat, c) == doctest::Approx(single / n).epsilon(1e-6));
        }

        // joint loss is monotone non-decreasing in lambda when the center term is live
        Tensor probs = softmax_forward(randn({m, k}, rng));
        double prev = -1.0;
        for (float lambda : {0.0f, 0.001f, 0.01f, 0.1f}) {
            const double v = joint_loss(probs, feats, labels, centers, lambda);
            CHECK(v >= prev);
            prev = v;
        }
    }

    // zero exactly when every feature sits on its center
    Tensor centers = randn({2, 3}, rng);
    Tensor feats = Tensor::zeros({2, 3});
    std::copy_n(centers.data.begin(), 3, feats.data.begin());
    std::copy_n(centers.data.begin() + 3, 3, feats.data.begin() + 3);
    CHECK(center_loss(feats, std::vector<int>{0, 1}, centers) == doctest::Approx(0.0));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ssml/optim.hpp"

using namespace ssml;

namespace {

Tensor scalar(float v) { return Tensor::from({1}, {v}); }

// scalar Adam recurrence, double precision, no weight decay
double adam_reference(double g, double lr, int steps) {
    double theta = 0.0, m = 0.0, v = 0.0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int t = 1; t <= steps; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        theta -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    return theta;
}

}  // namespace

TEST_CASE("sgd_step hand values") {
    Tensor t = scalar(1.0f);
    sgd_step({&t}, {scalar(2.0f)}, 0.1f);
    CHECK(t.data[0] == doctest::Approx(0.8));

    Tensor t2 = scalar(0.7f);
    sgd_step({&t2}, {scalar(0.0f)}, 0.1f);
    CHECK(t2.data[0] == doctest::Approx(0.7));

    Tensor t3 = scalar(0.7f);
    sgd_step({&t3}, {scalar(5.0f)}, 0.0f);
    CHECK(t3.data[0] == doctest::Approx(0.7));

    Tensor t4 = Tensor::zeros({2});
    CHECK_THROWS_AS(sgd_step({&t4}, {scalar(1.0f)}, 0.1f), ShapeError);
}

TEST_CASE("adam first step is the bias-correction identity") {
    Tensor t = scalar(0.0f);
    Adam opt({&t}, AdamConfig{0.001f});
    opt.step({&t}, {scalar(1.0f)});
    CHECK(t.data[0] == doctest::Approx(-0.001).epsilon(1e-4));
}

TEST_CASE("adam with zero gradient and no decay is a no-op") {
    Tensor t = scalar(0.37f);
    Adam opt({&t}, AdamConfig{0.001f});
    for (int i = 0; i < 5; ++i) opt.step({&t}, {scalar(0.0f)});
    CHECK(t.data[0] == doctest::Approx(0.37));
}

TEST_CASE("adam matches the scalar recurrence over 100 constant-gradient steps") {
    Tensor t = scalar(0.0f);
    Adam opt({&t}, AdamConfig{0.01f});
    for (int i = 0; i < 100; ++i) opt.step({&t}, {scalar(0.35f)});
    CHECK(std::fabs(t.data[0] - adam_reference(0.35, 0.01, 100)) < 1e-6);
    CHECK(opt.step_count() == 100);
}

TEST_CASE("adam first delta is scale-equivariant") {
    Tensor a = scalar(0.0f), b = scalar(0.0f);
    Adam oa({&a}, AdamConfig{0.001f}), ob({&b}, AdamConfig{0.001f});
    oa.step({&a}, {scalar(0.5f)});
    ob.step({&b}, {scalar(1.0f)});
    CHECK(a.data[0] < 0.0f);
    CHECK(b.data[0] < 0.0f);
    CHECK(std::fabs(a.data[0] - b.data[0]) < 1e-9);
}

TEST_CASE("decoupled weight decay shrinks the norm under zero gradients") {
    Tensor t = Tensor::from({3}, {1.0f, -2.0f, 0.5f});
    Adam opt({&t}, AdamConfig{0.01f, 0.9f, 0.999f, 1e-8f, 0.1f});
    double prev = std::hypot(t.data[0], t.data[1], t.data[2]);
    for (int i = 0; i < 10; ++i) {
        opt.step({&t}, {Tensor::zeros({3})});
        const double norm = std::hypot(t.data[0], t.data[1], t.data[2]);
        CHECK(norm < prev);
        prev = norm;
    }
}

TEST_CASE("adam rejects mismatched blocks") {
    Tensor t = scalar(1.0f);
    Adam opt({&t}, AdamConfig{});
    Tensor t2 = Tensor::zeros({2});
    CHECK_THROWS_AS(opt.step({&t2}, {Tensor::zeros({2})}), ShapeError);
    CHECK_THROWS_AS(opt.step({&t}, {}), ShapeError);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ssml/rng.hpp"
#include "ssml/stats.hpp"

using namespace ssml;

namespace {

// Brute force over every sign assignment: two-sided tail mass of W+ around
// the observed min(W+, W-), with average ranks for tied magnitudes.
double wilcoxon_bruteforce_p(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> d;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) d.push_back(a[i] - b[i]);
    const int n = static_cast<int>(d.size());
    std::vector<double> mag(d.size());
    for (size_t i = 0; i < d.size(); ++i) mag[i] = std::fabs(d[i]);
    std::vector<int> order(d.size());
    for (size_t i = 0; i < d.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int i, int j) { return mag[static_cast<size_t>(i)] < mag[static_cast<size_t>(j)]; });
    std::vector<double> rank(d.size());
    for (int i = 0; i < n;) {
        int j = i;
        while (j < n && mag[static_cast<size_t>(order[static_cast<size_t>(j)])] ==
                            mag[static_cast<size_t>(order[static_cast<size_t>(i)])])
            ++j;
        for (int t = i; t < j; ++t) rank[static_cast<size_t>(order[static_cast<size_t>(t)])] = (i + 1 + j) / 2.0;
        i = j;
    }
    double w_pos = 0.0, w_total = 0.0;
    for (int i = 0; i < n; ++i) {
        w_total += rank[static_cast<size_t>(i)];
        if (d[static_cast<size_t>(i)] > 0) w_pos += rank[static_cast<size_t>(i)];
    }
    const double w_min = std::min(w_pos, w_total - w_pos);
    int64_t hits = 0;
    const int64_t patterns = int64_t(1) << n;
    for (int64_t mask = 0; mask < patterns; ++mask) {
        double w = 0.0;
        for (int i = 0; i < n; ++i)
            if (mask & (int64_t(1) << i)) w += rank[static_cast<size_t>(i)];
        if (w <= w_min + 1e-9 || w >= w_total - w_min - 1e-9) ++hits;
    }
    return std::min(1.0, static_cast<double>(hits) / static_cast<double>(patterns));
}

}  // namespace

TEST_CASE("accuracy") {
    std::vector<int> a{0, 1, 1, 0}, b{0, 1, 0, 0};
    CHECK(accuracy(a, a) == doctest::Approx(1.0));
    std::vector<int> c{1, 0, 0, 1};
    CHECK(accuracy(a, c) == doctest::Approx(0.0));
    CHECK(accuracy(a, b) == doctest::Approx(0.75));
    CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);
    std::vector<int> short_vec{1};
    CHECK_THROWS_AS(accuracy(a, short_vec), std::invalid_argument);
}

TEST_CASE("five positive differences give the textbook exact p") {
    std::vector<double> a{1.0, 2.0, 3.0, 4.0, 5.0};
    std::vector<double> b{0.9, 1.7, 2.6, 3.5, 4.4};
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    CHECK(r.exact);
    CHECK(r.w == doctest::Approx(0.0));
    CHECK(r.p == doctest::Approx(2.0 / 32.0));
}

TEST_CASE("degenerate and undersized inputs") {
    std::vector<double> a{1, 2, 3, 4, 5, 6};
    WilcoxonResult r = wilcoxon_signed_rank(a, a);
    CHECK(r.degenerate);
    CHECK(r.p == doctest::Approx(1.0));

    std::vector<double> b{1, 2, 3, 4};
    std::vector<double> c{2, 3, 4, 5};
    CHECK_THROWS_AS(wilcoxon_signed_rank(b, c), std::invalid_argument);
}

TEST_CASE("swapping the arguments leaves p unchanged") {
    std::mt19937_64 rng = make_rng(31);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a, b;
        for (int i = 0; i < 9; ++i) {
            a.push_back(g(rng));
            b.push_back(g(rng));
        }
        WilcoxonResult r1 = wilcoxon_signed_rank(a, b);
        WilcoxonResult r2 = wilcoxon_signed_rank(b, a);
        CHECK(r1.p == doctest::Approx(r2.p).epsilon(1e-12));
        CHECK(r1.w == doctest::Approx(r2.w));
    }
}

TEST_CASE("exact mode equals brute-force enumeration for n <= 12") {
    std::mt19937_64 rng = make_rng(77);
    std::uniform_int_distribution<int> nd(5, 12);
    std::uniform_int_distribution<int> grid(-6, 6);  // integer grid provokes ties and zeros
    for (int trial = 0; trial < 50; ++trial) {
        const int n = nd(rng);
        std::vector<double> a, b;
        for (int i = 0; i < n; ++i) {
            a.push_back(grid(rng));
            b.push_back(grid(rng));
        }
        int nonzero = 0;
        for (int i = 0; i < n; ++i) nonzero += a[static_cast<size_t>(i)] != b[static_cast<size_t>(i)];
        if (nonzero < 5) {
            a.clear();
            b.clear();
            for (int i = 0; i < 8; ++i) {
                a.push_back(grid(rng) + 0.5 * (i + 1));
                b.push_back(grid(rng));
            }
        }
        WilcoxonResult r = wilcoxon_signed_rank(a, b);
        if (r.degenerate) continue;
        REQUIRE(r.exact);
        CHECK(r.p == doctest::Approx(wilcoxon_bruteforce_p(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("normal approximation for large n behaves sanely") {
    std::mt19937_64 rng = make_rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> a, b;
    for (int i = 0; i < 40; ++i) {
        const double v = g(rng);
        a.push_back(v + 1.5);  // strong consistent shift
        b.push_back(v + g(rng) * 0.1);
    }
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    CHECK_FALSE(r.exact);
    CHECK(r.p >= 0.0);
    CHECK(r.p < 0.01);

    std::vector<double> c, d;
    for (int i = 0; i < 40; ++i) {
        c.push_back(g(rng));
        d.push_back(g(rng));
    }
    WilcoxonResult r2 = wilcoxon_signed_rank(c, d);
    CHECK(r2.p <= 1.0);
    CHECK(r2.p > 0.0);
}

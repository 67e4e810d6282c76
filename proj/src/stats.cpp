#include "ssml/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ssml {

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                                    std::to_string(labels.size()) + " labels");
    if (predictions.empty()) throw std::invalid_argument("accuracy: empty inputs");
    size_t hits = 0;
    for (size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: length mismatch");
    std::vector<double> d;
    d.reserve(a.size());
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) d.push_back(a[i] - b[i]);

    WilcoxonResult res;
    res.n_used = static_cast<int>(d.size());
    if (d.empty()) {
        res.degenerate = true;
        res.w = 0.0;
        res.p = 1.0;
        return res;
    }
    const int n = res.n_used;
    if (n < 5)
        throw std::invalid_argument("wilcoxon: need at least 5 nonzero differences, got " + std::to_string(n));

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return std::fabs(d[static_cast<size_t>(i)]) < std::fabs(d[static_cast<size_t>(j)]); });

    // average ranks for tied magnitudes
    std::vector<double> rank(static_cast<size_t>(n));
    double tie_sum = 0.0;  // sum of t^3 - t over tie groups
    for (int i = 0; i < n;) {
        int j = i;
        while (j < n && std::fabs(d[static_cast<size_t>(order[static_cast<size_t>(j)])]) ==
                            std::fabs(d[static_cast<size_t>(order[static_cast<size_t>(i)])]))
            ++j;
        const double avg = (i + 1 + j) / 2.0;  // mean of ranks i+1 .. j
        for (int t = i; t < j; ++t) rank[static_cast<size_t>(order[static_cast<size_t>(t)])] = avg;
        const double tlen = j - i;
        tie_sum += tlen * tlen * tlen - tlen;
        i = j;
    }

    double w_pos = 0.0;
    for (int i = 0; i < n; ++i)
        if (d[static_cast<size_t>(i)] > 0.0) w_pos += rank[static_cast<size_t>(i)];
    const double w_total = n * (n + 1) / 2.0;
    const double w_neg = w_total - w_pos;
    res.w = std::min(w_pos, w_neg);

    if (n <= 20) {
        res.exact = true;
        // Doubled ranks are exact integers; count sign assignments by sum.
        const int64_t total2 = static_cast<int64_t>(std::llround(2.0 * w_total));
        std::vector<double> count(static_cast<size_t>(total2) + 1, 0.0);
        count[0] = 1.0;
        for (int i = 0; i < n; ++i) {
            const int64_t r2 = static_cast<int64_t>(std::llround(2.0 * rank[static_cast<size_t>(i)]));
            for (int64_t s = total2; s >= r2; --s) count[static_cast<size_t>(s)] += count[static_cast<size_t>(s - r2)];
        }
        const int64_t wmin2 = static_cast<int64_t>(std::llround(2.0 * res.w));
        double hits = 0.0;
        for (int64_t s = 0; s <= total2; ++s)
            if (s <= wmin2 || s >= total2 - wmin2) hits += count[static_cast<size_t>(s)];
        res.p = std::min(1.0, hits / std::pow(2.0, n));
    } else {
        const double mu = n * (n + 1) / 4.0;
        const double var = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_sum / 48.0;
        const double z = (w_pos - mu) / std::sqrt(var);
        res.p = std::min(1.0, std::erfc(std::fabs(z) / std::sqrt(2.0)));
    }
    return res;
}

}  // namespace ssml

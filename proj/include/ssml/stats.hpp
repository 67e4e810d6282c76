#pragma once

#include <span>
#include <vector>

namespace ssml {

// Fraction of equal entries; throws on empty or mismatched inputs.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

struct WilcoxonResult {
    double w = 0.0;           // min of the two signed rank sums
    double p = 1.0;           // two-sided
    int n_used = 0;           // pairs left after discarding zero differences
    bool degenerate = false;  // every difference was zero
    bool exact = false;       // enumeration (n <= 20) vs normal approximation
};

// Paired Wilcoxon signed-rank test over a - b. Average ranks for tied
// magnitudes; exact two-sided p by enumeration over sign assignments for
// n <= 20, tie-corrected normal approximation above. Requires n >= 5 after
// zero-discard (degenerate all-zero input is reported, not thrown).
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

}  // namespace ssml

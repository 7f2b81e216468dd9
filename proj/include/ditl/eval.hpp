#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ditl::eval {

// All metrics are percentages. Predictions are class indices; scores are
// positive-class probabilities.

// fraction of argmax-correct x 100; argmax ties break toward class 0
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// Mann-Whitney statistic: P(score+ > score-) + 0.5 P(tie), x 100.
// Throws when only one class is present (the metric is undefined).
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Matthews correlation x 100; any zero factor in the denominator yields 0
double mcc(const std::vector<int>& predictions, const std::vector<int>& labels);

int argmax_class(const std::vector<double>& probs);

struct FoldSplit {
    std::vector<int> train;
    std::vector<int> validation;
    std::vector<int> test;
};

// Within each class, indices are shuffled by seed and dealt round-robin into
// k test buckets; the remaining 80% splits 3:1 into train:validation with the
// same per-class dealing.
std::vector<FoldSplit> stratified_folds(const std::vector<int>& labels, int k, std::uint64_t seed);

struct MetricSet {
    std::vector<double> acc, auc, mcc;  // per fold
    double acc_mean = 0, acc_se = 0;
    double auc_mean = 0, auc_se = 0;
    double mcc_mean = 0, mcc_se = 0;
};

// mean and standard error (sample sd / sqrt(folds)) over the per-fold values
MetricSet aggregate(MetricSet per_fold);

std::string format_mean_se(double mean, double se);  // "73.00±2.00" style

}  // namespace ditl::eval

#include "ditl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ditl/rng.hpp"

namespace ditl::eval {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.empty() || predictions.size() != labels.size())
        throw std::invalid_argument("accuracy: need equal nonempty prediction/label lists");
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty() || scores.size() != labels.size())
        throw std::invalid_argument("auc: need equal nonempty score/label lists");
    std::int64_t npos = 0, nneg = 0;
    for (int l : labels) (l == 1 ? npos : nneg)++;
    if (npos == 0 || nneg == 0) throw std::invalid_argument("auc: undefined with a single class");
    // rank-sum with midranks for ties
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] == 1) pos_rank_sum += midrank;
        i = j + 1;
    }
    const double u = pos_rank_sum - static_cast<double>(npos) * (static_cast<double>(npos) + 1.0) / 2.0;
    return 100.0 * u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

double mcc(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.empty() || predictions.size() != labels.size())
        throw std::invalid_argument("mcc: need equal nonempty prediction/label lists");
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] == 1 && labels[i] == 1) ++tp;
        if (predictions[i] == 0 && labels[i] == 0) ++tn;
        if (predictions[i] == 1 && labels[i] == 0) ++fp;
        if (predictions[i] == 0 && labels[i] == 1) ++fn;
    }
    const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0.0) return 0.0;
    return 100.0 * (tp * tn - fp * fn) / std::sqrt(denom);
}

int argmax_class(const std::vector<double>& probs) {
    if (probs.empty()) throw std::invalid_argument("argmax_class: empty probabilities");
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = i;  // ties stay on the lower class
    return static_cast<int>(best);
}

std::vector<FoldSplit> stratified_folds(const std::vector<int>& labels, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("stratified_folds: need k >= 2");
    if (static_cast<int>(labels.size()) < 2 * k) throw std::invalid_argument("stratified_folds: too few samples");

    std::vector<std::vector<int>> by_class(2);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("stratified_folds: labels must be binary");
        by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
    }
    for (std::size_t c = 0; c < 2; ++c) {
        Rng rng(mix_seed(seed, 0xf01d, c));
        rng.shuffle(by_class[c]);
    }

    std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        auto& split = folds[static_cast<std::size_t>(f)];
        for (const auto& cls : by_class) {
            std::vector<int> rest;
            for (std::size_t pos = 0; pos < cls.size(); ++pos) {
                if (static_cast<int>(pos % static_cast<std::size_t>(k)) == f)
                    split.test.push_back(cls[pos]);
                else
                    rest.push_back(cls[pos]);
            }
            // remaining 80% dealt 3:1 into train : validation
            for (std::size_t pos = 0; pos < rest.size(); ++pos) {
                if (pos % 4 == 3)
                    split.validation.push_back(rest[pos]);
                else
                    split.train.push_back(rest[pos]);
            }
        }
        std::sort(split.train.begin(), split.train.end());
        std::sort(split.validation.begin(), split.validation.end());
        std::sort(split.test.begin(), split.test.end());
    }
    return folds;
}

namespace {

void mean_se(const std::vector<double>& v, double* mean, double* se) {
    if (v.empty()) throw std::invalid_argument("aggregate: no folds");
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    var = v.size() > 1 ? var / static_cast<double>(v.size() - 1) : 0.0;
    *mean = m;
    *se = std::sqrt(var) / std::sqrt(static_cast<double>(v.size()));
}

}  // namespace

MetricSet aggregate(MetricSet per_fold) {
    mean_se(per_fold.acc, &per_fold.acc_mean, &per_fold.acc_se);
    mean_se(per_fold.auc, &per_fold.auc_mean, &per_fold.auc_se);
    mean_se(per_fold.mcc, &per_fold.mcc_mean, &per_fold.mcc_se);
    return per_fold;
}

std::string format_mean_se(double mean, double se) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f±%.2f", mean, se);
    return buf;
}

}  // namespace ditl::eval

#include <doctest.h>

#include <cmath>

#include "ditl/eval.hpp"
#include "ditl/rng.hpp"

using namespace ditl;
using namespace ditl::eval;

namespace {

// independent oracles: straight counting over all pairs / the raw confusion
// matrix formula

double acc_oracle(const std::vector<int>& p, const std::vector<int>& y) {
    int ok = 0;
    for (std::size_t i = 0; i < y.size(); ++i) ok += p[i] == y[i];
    return 100.0 * ok / static_cast<double>(y.size());
}

double auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) {
            if (y[i] != 1 || y[j] != 0) continue;
            ++pairs;
            if (s[i] > s[j])
                wins += 1.0;
            else if (s[i] == s[j])
                wins += 0.5;
        }
    return 100.0 * wins / static_cast<double>(pairs);
}

double mcc_oracle(const std::vector<int>& p, const std::vector<int>& y) {
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        tp += p[i] == 1 && y[i] == 1;
        tn += p[i] == 0 && y[i] == 0;
        fp += p[i] == 1 && y[i] == 0;
        fn += p[i] == 0 && y[i] == 1;
    }
    double d = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    return d == 0.0 ? 0.0 : 100.0 * (tp * tn - fp * fn) / std::sqrt(d);
}

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("accuracy basics") {
    CHECK(accuracy({1, 0, 1}, {1, 0, 1}) == 100.0);
    CHECK(accuracy({1, 0, 1, 0}, {1, 1, 0, 0}) == 50.0);
    CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(accuracy({1}, {1, 0}), std::invalid_argument);
    CHECK(argmax_class({0.5, 0.5}) == 0);  // ties break toward class 0
    CHECK(argmax_class({0.4, 0.6}) == 1);
}

TEST_CASE("auc basics") {
    CHECK(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 100.0);
    CHECK(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 50.0);
    CHECK(auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == 75.0);  // 3 wins of 4 pairs
    CHECK_THROWS_WITH_AS(auc({0.1, 0.2}, {1, 1}), doctest::Contains("single class"), std::invalid_argument);
}

TEST_CASE("auc is invariant under strictly monotone score transforms") {
    Rng rng(5);
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 40; ++i) {
        s.push_back(rng.uniform(0.0, 1.0));
        y.push_back(rng.bernoulli(0.4) ? 1 : 0);
    }
    y[0] = 0;
    y[1] = 1;
    std::vector<double> t;
    for (double v : s) t.push_back(std::exp(3.0 * v) - 7.0);
    CHECK(auc(s, y) == doctest::Approx(auc(t, y)).epsilon(1e-12));
}

TEST_CASE("mcc basics") {
    CHECK(mcc({1, 0, 1, 0}, {1, 0, 1, 0}) == 100.0);
    CHECK(mcc({0, 1, 0, 1}, {1, 0, 1, 0}) == -100.0);
    CHECK(mcc({1, 1, 1, 1}, {1, 0, 1, 0}) == 0.0);  // zero-factor convention
}

TEST_CASE("metrics equal brute-force oracles on exhaustive small cases") {
    for (int n = 1; n <= 8; ++n) {
        Rng rng(static_cast<std::uint64_t>(n) * 131);
        std::vector<double> scores(static_cast<std::size_t>(n));
        for (auto& v : scores) v = std::round(rng.uniform(0.0, 1.0) * 4.0) / 4.0;  // deliberate ties
        for (int ymask = 0; ymask < (1 << n); ++ymask) {
            std::vector<int> y(static_cast<std::size_t>(n));
            int pos = 0;
            for (int i = 0; i < n; ++i) {
                y[static_cast<std::size_t>(i)] = (ymask >> i) & 1;
                pos += y[static_cast<std::size_t>(i)];
            }
            if (pos > 0 && pos < n) {
                REQUIRE(auc(scores, y) == doctest::Approx(auc_oracle(scores, y)).epsilon(1e-12));
            }
            for (int pmask = 0; pmask < (1 << n); ++pmask) {
                std::vector<int> p(static_cast<std::size_t>(n));
                for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = (pmask >> i) & 1;
                REQUIRE(accuracy(p, y) == acc_oracle(p, y));
                REQUIRE(mcc(p, y) == doctest::Approx(mcc_oracle(p, y)).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("consistent reordering of prediction/label pairs leaves ACC and MCC unchanged") {
    Rng rng(9);
    std::vector<int> p, y;
    for (int i = 0; i < 30; ++i) {
        p.push_back(rng.bernoulli(0.5));
        y.push_back(rng.bernoulli(0.4));
    }
    std::vector<int> order(30);
    for (int i = 0; i < 30; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    std::vector<int> p2, y2;
    for (int i : order) {
        p2.push_back(p[static_cast<std::size_t>(i)]);
        y2.push_back(y[static_cast<std::size_t>(i)]);
    }
    CHECK(accuracy(p, y) == accuracy(p2, y2));
    CHECK(mcc(p, y) == doctest::Approx(mcc(p2, y2)).epsilon(1e-12));
}

TEST_CASE("stratified folds") {
    std::vector<int> labels(100, 0);
    Rng rng(3);
    int placed = 0;
    while (placed < 36) {
        auto i = static_cast<std::size_t>(rng.uniform_int(0, 99));
        if (labels[i] == 0) {
            labels[i] = 1;
            ++placed;
        }
    }
    auto folds = stratified_folds(labels, 5, 11);

    SUBCASE("test sets partition the dataset") {
        std::vector<int> seen(100, 0);
        for (const auto& f : folds)
            for (int i : f.test) seen[static_cast<std::size_t>(i)]++;
        for (int c : seen) CHECK(c == 1);
    }
    SUBCASE("per-fold splits are disjoint and cover everything") {
        for (const auto& f : folds) {
            std::vector<int> seen(100, 0);
            for (int i : f.train) seen[static_cast<std::size_t>(i)]++;
            for (int i : f.validation) seen[static_cast<std::size_t>(i)]++;
            for (int i : f.test) seen[static_cast<std::size_t>(i)]++;
            for (int c : seen) CHECK(c == 1);
        }
    }
    SUBCASE("36 positives over 5 folds deal 7 or 8 per test fold") {
        for (const auto& f : folds) {
            int pos = 0;
            for (int i : f.test) pos += labels[static_cast<std::size_t>(i)];
            CHECK(pos >= 7);
            CHECK(pos <= 8);
        }
    }
    SUBCASE("train:validation is about 3:1") {
        for (const auto& f : folds) {
            double ratio = static_cast<double>(f.train.size()) / static_cast<double>(f.validation.size());
            CHECK(ratio > 2.3);
            CHECK(ratio < 4.0);
        }
    }
    SUBCASE("same seed reproduces the folds, different seed changes them") {
        auto again = stratified_folds(labels, 5, 11);
        CHECK(again[0].test == folds[0].test);
        CHECK(again[3].train == folds[3].train);
        auto other = stratified_folds(labels, 5, 12);
        CHECK(other[0].test != folds[0].test);
    }
}

TEST_CASE("aggregation with standard error") {
    MetricSet ms;
    ms.acc = {60.0, 70.0};
    ms.auc = {80.0, 80.0};
    ms.mcc = {10.0, 30.0};
    auto out = aggregate(ms);
    CHECK(out.acc_mean == 65.0);
    CHECK(out.acc_se == doctest::Approx(5.0).epsilon(1e-12));  // sd 7.07 / sqrt(2)
    CHECK(out.auc_se == 0.0);                                  // identical folds
    CHECK(out.mcc_mean == 20.0);
    CHECK(out.acc_mean >= 60.0);
    CHECK(out.acc_mean <= 70.0);
    CHECK(format_mean_se(out.acc_mean, out.acc_se) == "65.00±5.00");
}

TEST_SUITE_END();

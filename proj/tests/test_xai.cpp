#include <doctest.h>

#include <cmath>

#include "ditl/xai.hpp"
#include "fd_check.hpp"

using namespace ditl;
using namespace ditl::xai;

TEST_SUITE_BEGIN("xai");

TEST_CASE("gradcam closed form on an identity-style conv net") {
    // 1x1x1 conv with positive weight, logit = mean of the rectified
    // activations -> heatmap is min-max-normalized relu(input)
    Graph g;
    Tensor x{Shape{1, 2, 2, 1}, {0.5, -1.0, 0.25, 1.0}};
    Var w = g.leaf(Tensor::full(Shape{1, 1, 1, 1, 1}, 2.0), true);
    Var act = g.relu(g.conv3d(g.constant(x), w, 1, 0));
    Var logits = g.reshape(g.mean_all(act), Shape{1});
    GradCamConfig cfg;
    Var h = gradcam_var(g, logits, 0, act, cfg);
    const Tensor& ht = g.value(h);
    CHECK(ht.shape() == Shape{2, 2, 1});
    CHECK(ht[0] == doctest::Approx(0.5).epsilon(1e-12));   // relu: 0.5 -> (0.5-0)/1
    CHECK(ht[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ht[2] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(ht[3] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gradcam degenerate raw map stays all zero without dividing by zero") {
    // negative weight makes the channel weight negative on nonnegative
    // activations, so relu kills the whole raw map
    Graph g;
    Tensor x{Shape{1, 2, 2, 1}, {0.5, 0.25, 0.75, 1.0}};
    Var w = g.leaf(Tensor::full(Shape{1, 1, 1, 1, 1}, -2.0), true);
    Var conv = g.conv3d(g.constant(x), w, 1, 0);  // negative activations
    Var act = g.neg(g.relu(g.neg(conv)));         // keep them negative but graph-connected
    Var logits = g.reshape(g.mean_all(act), Shape{1});
    Var h = gradcam_var(g, logits, 0, act, GradCamConfig{});
    for (std::int64_t i = 0; i < 4; ++i) CHECK(g.value(h)[i] == 0.0);
    CHECK(g.value(h).all_finite());
}

TEST_CASE("gradcam values agree with and without graph retention") {
    Rng rng(12);
    Graph g;
    Tensor x = fdcheck::random_tensor(Shape{1, 4, 4, 2}, rng, 0.0, 1.0);
    Var w = g.leaf(fdcheck::random_tensor(Shape{2, 1, 3, 3, 3}, rng), true);
    Var b = g.leaf(fdcheck::random_tensor(Shape{2}, rng), true);
    Var act = g.relu(g.add_chan_bias(g.conv3d(g.constant(x), w, 1, 1), b));
    Var wl = g.leaf(fdcheck::random_tensor(Shape{2, 64}, rng), true);
    Var logits = g.matvec(wl, g.reshape(g.avgpool2(act), Shape{64}));

    GradCamConfig on, off;
    on.create_graph = true;
    off.create_graph = false;
    Var h_on = gradcam_var(g, logits, 1, act, on);
    Var h_off = gradcam_var(g, logits, 1, act, off);
    CHECK(g.value(h_on).vec() == g.value(h_off).vec());
    CHECK(g.requires_grad(h_on));

    for (double v : g.value(h_on).vec()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(g.value(h_on).max_value() == doctest::Approx(1.0));  // min-max reaches 1 on non-degenerate maps
}

TEST_CASE("gradcam rejects models without a convolutional branch") {
    models::ModelConfig cfg;
    Rng rng(5);
    models::ModelVariant v;
    v.kind = models::VariantKind::UnimodalClinical;
    v.clinical = models::init_clinical_model(cfg.clinical, 4, rng);
    Tensor xc(Shape{4});
    CHECK_THROWS_WITH_AS(gradcam(v, Tensor::zeros(Shape{1, 8, 8, 8}), xc, 0, cfg),
                         doctest::Contains("no convolutional branch"), std::invalid_argument);
}

TEST_CASE("heatmap resampling") {
    SUBCASE("identity extents return the input") {
        Tensor h{Shape{2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7}};
        Tensor r = resize_heatmap(h, Shape{2, 2, 2});
        CHECK(r.vec() == h.vec());
    }
    SUBCASE("constant maps stay constant") {
        Tensor h = Tensor::full(Shape{3, 3, 2}, 0.4);
        Tensor r = resize_heatmap(h, Shape{5, 7, 3});
        for (double v : r.vec()) CHECK(v == doctest::Approx(0.4).epsilon(1e-12));
    }
    SUBCASE("interpolation stays inside the input range") {
        Rng rng(8);
        Tensor h = fdcheck::random_tensor(Shape{4, 4, 3}, rng, 0.0, 1.0);
        Tensor r = resize_heatmap(h, Shape{9, 6, 5});
        for (double v : r.vec()) {
            CHECK(v >= h.min_value() - 1e-12);
            CHECK(v <= h.max_value() + 1e-12);
        }
    }
    SUBCASE("bad extents throw") {
        CHECK_THROWS_AS(resize_heatmap(Tensor::zeros(Shape{2, 2, 2}), Shape{0, 2, 2}), std::invalid_argument);
    }
}

TEST_CASE("exact shapley on an additive model recovers the coefficients") {
    const int F = 5;
    std::vector<double> wgt = {0.5, -1.0, 2.0, 0.0, 0.25};
    auto value = [&](const Tensor& x) {
        double s = 0.1;
        for (int j = 0; j < F; ++j) s += wgt[static_cast<std::size_t>(j)] * x[j];
        return s;
    };
    Rng rng(21);
    Tensor x = fdcheck::random_tensor(Shape{F}, rng);
    std::vector<Tensor> bg;
    for (int i = 0; i < 7; ++i) bg.push_back(fdcheck::random_tensor(Shape{F}, rng));
    std::vector<FeatureGroup> groups;
    for (int j = 0; j < F; ++j) groups.push_back({"f" + std::to_string(j), j, j + 1});

    auto rep = shapley(value, x, bg, groups);
    Tensor mean_bg(Shape{F});
    for (const auto& b : bg)
        for (int j = 0; j < F; ++j) mean_bg[j] += b[j] / 7.0;
    for (int j = 0; j < F; ++j)
        CHECK(rep.values[static_cast<std::size_t>(j)] ==
              doctest::Approx(wgt[static_cast<std::size_t>(j)] * (x[j] - mean_bg[j])).epsilon(1e-10));
    CHECK(std::abs(rep.values[3]) < 1e-10);  // ignored feature attributes zero

    double sum = 0.0;
    for (double v : rep.values) sum += v;
    CHECK(std::abs(sum - (rep.prediction - rep.baseline)) < 1e-8);  // efficiency
}

TEST_CASE("shapley efficiency and symmetry on a nonlinear model") {
    // symmetric in features 0 and 1
    auto value = [](const Tensor& x) { return std::tanh(x[0] + x[1]) + 0.3 * x[2] * x[2]; };
    Tensor x{Shape{3}, {0.7, 0.7, -0.4}};
    std::vector<Tensor> bg = {Tensor{Shape{3}, {0.1, 0.1, 0.2}}, Tensor{Shape{3}, {-0.3, -0.3, 0.0}}};
    std::vector<FeatureGroup> groups = {{"a", 0, 1}, {"b", 1, 2}, {"c", 2, 3}};
    auto rep = shapley(value, x, bg, groups);
    CHECK(std::abs(rep.values[0] - rep.values[1]) < 1e-10);
    double sum = 0.0;
    for (double v : rep.values) sum += v;
    CHECK(std::abs(sum - (rep.prediction - rep.baseline)) < 1e-8);
}

TEST_CASE("shapley group spans and the exact-mode cap") {
    auto value = [](const Tensor& x) { return x[0]; };
    Tensor x(Shape{26});
    std::vector<Tensor> bg = {Tensor::zeros(Shape{26})};
    std::vector<FeatureGroup> too_many;
    for (int j = 0; j < 13; ++j) too_many.push_back({"g", 2 * j, 2 * j + 2});
    CHECK_THROWS_WITH_AS(shapley(value, x, bg, too_many), doctest::Contains("sampling"), std::invalid_argument);

    // grouped one-hot block moves together
    auto value2 = [](const Tensor& v) { return v[0] + 2.0 * v[1] + 10.0 * v[2]; };
    Tensor x2{Shape{3}, {1.0, 0.0, 0.5}};
    std::vector<Tensor> bg2 = {Tensor{Shape{3}, {0.0, 1.0, 0.5}}};
    std::vector<FeatureGroup> groups2 = {{"onehot", 0, 2}, {"num", 2, 3}};
    auto rep2 = shapley(value2, x2, bg2, groups2);
    CHECK(rep2.values[0] == doctest::Approx(-1.0).epsilon(1e-10));  // (1*1+2*0) - (1*0+2*1)
    CHECK(std::abs(rep2.values[1]) < 1e-10);
    CHECK(rep2.ranking[0] == 0);
}

TEST_SUITE_END();

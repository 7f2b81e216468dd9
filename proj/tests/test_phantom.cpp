#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ditl/eval.hpp"
#include "ditl/phantom.hpp"

using namespace ditl;
using namespace ditl::phantom;

namespace {

DatasetSpec small_spec(std::uint64_t seed = 7) {
    DatasetSpec s;
    s.n_samples = 24;
    s.extents = {16, 16, 8};
    s.seed = seed;
    return s;
}

// ground-truth imaging statistic: lesion mean minus surrounding-lung mean
double lesion_contrast(const Sample& s) {
    double lesion = 0, lung = 0;
    std::int64_t nl = 0, ng = 0;
    const auto& v = s.volume.intensities;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        if (s.masks.m2[i] > 0.5) {
            lesion += v[i];
            ++nl;
        } else if (s.masks.m1[i] > 0.5) {
            lung += v[i];
            ++ng;
        }
    }
    return lesion / static_cast<double>(nl) - lung / static_cast<double>(ng);
}

}  // namespace

TEST_SUITE_BEGIN("phantom");

TEST_CASE("generation is deterministic in the spec seed") {
    auto a = generate(small_spec());
    auto b = generate(small_spec());
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].volume.intensities.vec() == b.samples[i].volume.intensities.vec());
        CHECK(a.samples[i].masks.m2.vec() == b.samples[i].masks.m2.vec());
        CHECK(a.samples[i].clinical.values == b.samples[i].clinical.values);
        CHECK(a.samples[i].label == b.samples[i].label);
    }
    auto c = generate(small_spec(8));
    CHECK(a.samples[0].volume.intensities.vec() != c.samples[0].volume.intensities.vec());
}

TEST_CASE("mask structure: nested, non-empty, binary") {
    auto ds = generate(small_spec());
    for (const auto& s : ds.samples) {
        CHECK(s.masks.m1.sum() > 0);
        CHECK(s.masks.m2.sum() > 0);
        for (std::int64_t i = 0; i < s.masks.m1.numel(); ++i) {
            CHECK((s.masks.m1[i] == 0.0 || s.masks.m1[i] == 1.0));
            CHECK((s.masks.m2[i] == 0.0 || s.masks.m2[i] == 1.0));
            if (s.masks.m2[i] == 1.0) CHECK(s.masks.m1[i] == 1.0);  // M2 inside M1
        }
    }
}

TEST_CASE("positive count lands inside the binomial 99% interval") {
    DatasetSpec s;
    s.n_samples = 200;
    s.extents = {16, 16, 8};
    s.positive_rate = 0.36;
    s.seed = 42;
    auto ds = generate(s);
    int pos = 0;
    for (const auto& smp : ds.samples) pos += smp.label;
    CHECK(pos >= 62);
    CHECK(pos <= 82);
    CHECK(std::abs(static_cast<double>(pos) / 200.0 - 0.36) <= 0.05);
}

TEST_CASE("zero signal strengths decouple features from labels") {
    // with alpha_img = alpha_clin = 0 even the generative statistics carry no
    // signal, so their AUC hovers at 50%
    double auc_img = 0.0, auc_clin = 0.0;
    const int n_seeds = 20;
    for (int seed = 0; seed < n_seeds; ++seed) {
        DatasetSpec s;
        s.n_samples = 200;
        s.extents = {12, 12, 8};
        s.alpha_img = 0.0;
        s.alpha_clin = 0.0;
        s.seed = 1000 + static_cast<std::uint64_t>(seed);
        auto ds = generate(s);
        std::vector<double> img, clin;
        std::vector<int> labels;
        for (const auto& smp : ds.samples) {
            img.push_back(lesion_contrast(smp));
            clin.push_back(smp.clinical.values[6] + smp.clinical.values[7]);  // marker_a + marker_b
            labels.push_back(smp.label);
        }
        auc_img += eval::auc(img, labels) / 100.0;
        auc_clin += eval::auc(clin, labels) / 100.0;
    }
    CHECK(std::abs(auc_img / n_seeds - 0.5) < 0.08);
    CHECK(std::abs(auc_clin / n_seeds - 0.5) < 0.08);
}

TEST_CASE("nonzero signal strengths make both statistic families informative") {
    DatasetSpec s;
    s.n_samples = 200;
    s.extents = {16, 16, 8};
    s.seed = 42;
    auto ds = generate(s);
    std::vector<double> img, clin;
    std::vector<int> labels;
    for (const auto& smp : ds.samples) {
        img.push_back(lesion_contrast(smp));
        clin.push_back(0.8 * smp.clinical.values[6] + 0.6 * smp.clinical.values[7]);
        labels.push_back(smp.label);
    }
    CHECK(eval::auc(img, labels) > 60.0);
    CHECK(eval::auc(clin, labels) > 60.0);
}

TEST_CASE("rejects bad specs") {
    DatasetSpec s = small_spec();
    s.extents = {4, 16, 8};
    CHECK_THROWS_WITH_AS(generate(s), doctest::Contains("too small"), std::invalid_argument);
    s = small_spec();
    s.positive_rate = 0.0;
    CHECK_THROWS_AS(generate(s), std::invalid_argument);
    s = small_spec();
    s.alpha_img = -1.0;
    CHECK_THROWS_AS(generate(s), std::invalid_argument);
}

TEST_CASE("windowing clips and rescales") {
    Volume v;
    v.intensities = Tensor{Shape{5}, {2000.0, -900.0, -300.0, 300.0, -1500.0}};
    Volume w = window_and_normalize(v);  // center -300, width 1200 -> [-900, 300]
    CHECK(w.intensities[0] == 1.0);
    CHECK(w.intensities[1] == 0.0);
    CHECK(w.intensities[2] == 0.5);
    CHECK(w.intensities[3] == 1.0);
    CHECK(w.intensities[4] == 0.0);
    CHECK_THROWS_AS(window_and_normalize(v, 0.0, -5.0), std::invalid_argument);

    auto ds = generate(small_spec());
    Volume r = window_and_normalize(ds.samples[0].volume);
    CHECK(r.intensities.min_value() >= 0.0);
    CHECK(r.intensities.max_value() <= 1.0);
}

TEST_CASE("nearest-neighbor resampling") {
    SUBCASE("identical spacing is the identity") {
        auto ds = generate(small_spec());
        Volume r = resample_nn(ds.samples[0].volume, {1.0, 1.0, 1.0});
        CHECK(r.intensities.vec() == ds.samples[0].volume.intensities.vec());
    }
    SUBCASE("2x downsample of a checkerboard picks source voxels") {
        Volume v;
        v.intensities = Tensor(Shape{8, 8, 8});
        for (std::int64_t x = 0; x < 8; ++x)
            for (std::int64_t y = 0; y < 8; ++y)
                for (std::int64_t z = 0; z < 8; ++z)
                    v.intensities[v.intensities.at3(x, y, z)] = static_cast<double>((x + y + z) % 2);
        Volume r = resample_nn(v, {2.0, 2.0, 2.0});
        CHECK(r.intensities.shape() == Shape{4, 4, 4});
        for (double val : r.intensities.vec()) CHECK((val == 0.0 || val == 1.0));
    }
    SUBCASE("masks stay binary and aligned") {
        auto ds = generate(small_spec());
        Sample r = resample_sample(ds.samples[0], {2.0, 2.0, 2.0});
        for (std::int64_t i = 0; i < r.masks.m1.numel(); ++i) {
            CHECK((r.masks.m1[i] == 0.0 || r.masks.m1[i] == 1.0));
            if (r.masks.m2[i] == 1.0) CHECK(r.masks.m1[i] == 1.0);
        }
    }
    SUBCASE("degenerate target spacing throws") {
        auto ds = generate(small_spec());
        CHECK_THROWS_AS(resample_nn(ds.samples[0].volume, {0.0, 1.0, 1.0}), std::invalid_argument);
        CHECK_THROWS_AS(resample_nn(ds.samples[0].volume, {1000.0, 1.0, 1.0}), std::invalid_argument);
    }
}

TEST_CASE("dataset-global bounding box") {
    SUBCASE("single-voxel mask with pad 2 gives a 5-cube") {
        Dataset ds;
        ds.spec = small_spec();
        Sample s;
        s.volume.intensities = Tensor(Shape{16, 16, 16});
        s.masks.m1 = Tensor(Shape{16, 16, 16});
        s.masks.m2 = Tensor(Shape{16, 16, 16});
        s.masks.m1[s.masks.m1.at3(8, 8, 8)] = 1.0;
        ds.samples.push_back(s);
        Box b = global_bbox(ds, 2, 1);
        auto sz = b.size();
        CHECK(sz[0] == 5);
        CHECK(sz[1] == 5);
        CHECK(sz[2] == 5);
    }
    SUBCASE("mask filling the volume crops nothing") {
        Dataset ds;
        ds.spec = small_spec();
        Sample s;
        s.volume.intensities = Tensor(Shape{8, 8, 8});
        s.masks.m1 = Tensor::full(Shape{8, 8, 8}, 1.0);
        s.masks.m2 = s.masks.m1;
        ds.samples.push_back(s);
        Box b = global_bbox(ds, 2, 1);
        CHECK(b.size()[0] == 8);
        CHECK(b.lo[0] == 0);
    }
    SUBCASE("empty union mask throws") {
        Dataset ds;
        ds.spec = small_spec();
        Sample s;
        s.volume.intensities = Tensor(Shape{8, 8, 8});
        s.masks.m1 = Tensor(Shape{8, 8, 8});
        s.masks.m2 = Tensor(Shape{8, 8, 8});
        ds.samples.push_back(s);
        CHECK_THROWS_AS(global_bbox(ds, 2, 1), std::invalid_argument);
    }
    SUBCASE("preprocess yields uniform extents divisible by the pooling factor and nested cropped masks") {
        auto ds = generate(small_spec());
        Processed p = preprocess(ds);
        CHECK(p.extent[0] % 8 == 0);
        CHECK(p.extent[1] % 8 == 0);
        CHECK(p.extent[2] % 8 == 0);
        CHECK(p.volumes.size() == ds.samples.size());
        for (std::size_t i = 0; i < p.volumes.size(); ++i) {
            CHECK(p.volumes[i].shape() == Shape{1, p.extent[0], p.extent[1], p.extent[2]});
            CHECK(p.volumes[i].min_value() >= 0.0);
            CHECK(p.volumes[i].max_value() <= 1.0);
            for (std::int64_t j = 0; j < p.m2[i].numel(); ++j)
                if (p.m2[i][j] == 1.0) CHECK(p.m1[i][j] == 1.0);
        }
    }
}

TEST_CASE("augmentation core") {
    auto ds = generate(small_spec());
    Processed p = preprocess(ds);
    const Tensor& vol = p.volumes[0];
    const Tensor& m1 = p.m1[0];
    const Tensor& m2 = p.m2[0];

    SUBCASE("zero shift and no flip is the identity") {
        auto out = apply_augment(vol, m1, m2, AugmentParams{});
        CHECK(out.volume.vec() == vol.vec());
        CHECK(out.m1.vec() == m1.vec());
    }
    SUBCASE("flip is an involution") {
        AugmentParams flip;
        flip.flip = true;
        auto once = apply_augment(vol, m1, m2, flip);
        auto twice = apply_augment(once.volume, once.m1, once.m2, flip);
        CHECK(twice.volume.vec() == vol.vec());
        CHECK(twice.m2.vec() == m2.vec());
    }
    SUBCASE("random draws stay within the shift bound and keep nesting") {
        Rng rng(3);
        for (int i = 0; i < 20; ++i) {
            auto params = draw_augment(rng, 3);
            CHECK(std::abs(params.sx) <= 3);
            CHECK(std::abs(params.sy) <= 3);
            CHECK(std::abs(params.sz) <= 3);
            auto out = apply_augment(vol, m1, m2, params);
            for (std::int64_t j = 0; j < out.m2.numel(); ++j)
                if (out.m2[j] == 1.0) CHECK(out.m1[j] == 1.0);
        }
    }
}

TEST_CASE("clinical encoding") {
    auto ds = generate(small_spec());
    std::vector<int> train;
    for (int i = 0; i < 16; ++i) train.push_back(i);
    auto stats = compute_encode_stats(ds, train);
    auto enc = encode_clinical(ds, stats);
    const std::int64_t F = ds.schema.encoded_width();
    CHECK(F == 18);  // 3+4+5 one-hot + 2 ordinal + 4 numeric
    CHECK(enc.matrix.shape() == Shape{24, F});
    CHECK(enc.matrix.all_finite());

    SUBCASE("three-level categorical value B becomes 0,1,0") {
        Dataset tiny;
        tiny.schema = reference_schema();
        tiny.spec = small_spec();
        Sample s;
        s.clinical.values = {1.0, 0.0, 0.0, 2.0, 1.0, 60.0, 0.1, -0.2, 70.0};  // histology = "B"
        tiny.samples = {s, s};
        auto st = compute_encode_stats(tiny, {0, 1});
        auto e = encode_clinical(tiny, st);
        CHECK(e.matrix[0] == 0.0);
        CHECK(e.matrix[1] == 1.0);
        CHECK(e.matrix[2] == 0.0);
        // identical samples: sd = 0, so z-scores collapse to zero
        const auto spans = field_spans(tiny.schema);
        CHECK(e.matrix[spans[5].lo] == 0.0);
    }
    SUBCASE("z-scored training columns have mean 0 and sd 1") {
        const auto spans = field_spans(ds.schema);
        for (std::size_t f = 5; f < 9; ++f) {  // numeric fields
            double mean = 0.0, var = 0.0;
            for (int idx : train) mean += enc.matrix[idx * F + spans[f].lo];
            mean /= static_cast<double>(train.size());
            for (int idx : train) {
                double d = enc.matrix[idx * F + spans[f].lo] - mean;
                var += d * d;
            }
            var /= static_cast<double>(train.size());
            CHECK(std::abs(mean) < 1e-10);
            CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-10);
        }
    }
    SUBCASE("numeric value equal to the training mean encodes to zero") {
        Dataset tiny;
        tiny.schema = reference_schema();
        tiny.spec = small_spec();
        Sample a, b, probe;
        a.clinical.values = {0, 0, 0, 0, 0, 50.0, 0, 0, 70.0};
        b.clinical.values = {0, 0, 0, 0, 0, 70.0, 0, 0, 70.0};
        probe.clinical.values = {0, 0, 0, 0, 0, 60.0, 0, 0, 70.0};  // age = train mean
        tiny.samples = {a, b, probe};
        auto st = compute_encode_stats(tiny, {0, 1});
        auto e = encode_clinical(tiny, st);
        const auto spans = field_spans(tiny.schema);
        CHECK(e.matrix[2 * tiny.schema.encoded_width() + spans[5].lo] == 0.0);
    }
    SUBCASE("levels unseen in training encode to an all-zero block and are counted") {
        Dataset tiny;
        tiny.schema = reference_schema();
        tiny.spec = small_spec();
        Sample a, b;
        a.clinical.values = {0.0, 0, 0, 0, 0, 50.0, 0, 0, 70.0};  // histology A
        b.clinical.values = {2.0, 0, 0, 0, 0, 60.0, 0, 0, 70.0};  // histology C, unseen in training
        tiny.samples = {a, b};
        auto st = compute_encode_stats(tiny, {0});  // train on sample 0 only
        auto e = encode_clinical(tiny, st);
        CHECK(e.unseen_categories >= 1);
        const std::int64_t Fw = tiny.schema.encoded_width();
        CHECK(e.matrix[Fw + 0] == 0.0);
        CHECK(e.matrix[Fw + 1] == 0.0);
        CHECK(e.matrix[Fw + 2] == 0.0);
    }
}

TEST_CASE("dataset directory round trip") {
    auto ds = generate(small_spec());
    auto dir = (std::filesystem::temp_directory_path() / "ditl_ds_rt").string();
    save_dataset(ds, dir, R"({"k":2,"note":"folds"})");
    std::string folds;
    Dataset back = load_dataset(dir, &folds);
    CHECK(!folds.empty());
    CHECK(back.samples.size() == ds.samples.size());
    CHECK(back.spec.seed == ds.spec.seed);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(back.samples[i].volume.intensities.vec() == ds.samples[i].volume.intensities.vec());
        CHECK(back.samples[i].masks.m1.vec() == ds.samples[i].masks.m1.vec());
        CHECK(back.samples[i].label == ds.samples[i].label);
        CHECK(back.samples[i].clinical.values == ds.samples[i].clinical.values);
    }
    std::filesystem::remove_all(dir);
}

TEST_SUITE_END();

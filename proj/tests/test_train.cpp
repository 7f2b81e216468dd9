#include <doctest.h>

#include <cmath>

#include "ditl/train.hpp"

using namespace ditl;
using namespace ditl::train;

namespace {

struct MiniBench {
    phantom::Dataset ds;
    phantom::Processed proc;
    std::vector<eval::FoldSplit> folds;
    FoldData fd;

    explicit MiniBench(double alpha_img = 1.0, double alpha_clin = 1.0, double noise = 0.5) {
        phantom::DatasetSpec spec;
        spec.n_samples = 24;
        spec.extents = {16, 16, 8};
        spec.alpha_img = alpha_img;
        spec.alpha_clin = alpha_clin;
        spec.noise = noise;
        spec.seed = 5;
        ds = phantom::generate(spec);
        proc = phantom::preprocess(ds);
        std::vector<int> labels;
        for (const auto& s : ds.samples) labels.push_back(s.label);
        folds = eval::stratified_folds(labels, 2, 5);
        fd = make_fold_data(ds, proc, folds[0]);
    }
};

models::ModelConfig mini_model() {
    models::ModelConfig m;
    m.ct.channels = {2};
    m.ct.feat_width = 4;
    m.clinical.hidden = {8, 4};
    m.fusion.hidden = {4};
    return m;
}

TrainConfig fast_cfg(int max_epochs = 2, int warmup = 0, int patience = 2) {
    TrainConfig cfg;
    cfg.max_epochs = max_epochs;
    cfg.warmup_epochs = warmup;
    cfg.patience = patience;
    cfg.batch_size = 4;
    cfg.lr = 0.003;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("adam first step moves by about lr in the gradient direction") {
    Tensor p = Tensor::scalar(1.0);
    std::vector<Tensor*> params{&p};
    AdamState st = AdamState::like(params);
    adam_step(params, {Tensor::scalar(0.5)}, st, 0.01, 0.0);
    // t=1: mhat = g, vhat = g^2 -> update = lr * g / (|g| + eps) ~ lr * sign(g)
    CHECK(p.item() == doctest::Approx(1.0 - 0.01).epsilon(1e-6));

    Tensor q = Tensor::scalar(-2.0);
    std::vector<Tensor*> qp{&q};
    AdamState st2 = AdamState::like(qp);
    adam_step(qp, {Tensor::scalar(-3.0)}, st2, 0.01, 0.0);
    CHECK(q.item() == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
}

TEST_CASE("adam leaves parameters alone on zero gradients without decay") {
    Tensor p{Shape{3}, {1.0, -2.0, 0.5}};
    std::vector<Tensor*> params{&p};
    AdamState st = AdamState::like(params);
    adam_step(params, {Tensor::zeros(Shape{3})}, st, 0.01, 0.0);
    CHECK(p.vec() == std::vector<double>{1.0, -2.0, 0.5});

    // with decay the shrink applies even at zero gradient
    adam_step(params, {Tensor::zeros(Shape{3})}, st, 0.01, 0.1);
    CHECK(p[0] == doctest::Approx(1.0 * (1.0 - 0.001)));
}

TEST_CASE("adam aborts on non-finite gradients with a diagnostic") {
    Tensor p = Tensor::scalar(1.0);
    std::vector<Tensor*> params{&p};
    AdamState st = AdamState::like(params);
    Tensor bad = Tensor::scalar(std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_WITH_AS(adam_step(params, {bad}, st, 0.01, 0.0), doctest::Contains("non-finite"),
                         std::runtime_error);
}

TEST_CASE("training is deterministic given identical configuration") {
    MiniBench mb;
    auto mcfg = mini_model();
    auto cfg = fast_cfg();
    auto a = run_clinical(mb.fd, mcfg, cfg, 99);
    auto b = run_clinical(mb.fd, mcfg, cfg, 99);
    CHECK(a.model.head.w.vec() == b.model.head.w.vec());
    CHECK(a.phases[0].val_curve == b.phases[0].val_curve);
}

TEST_CASE("early stopping waits out the warm-up on a flat validation curve") {
    MiniBench mb;
    auto mcfg = mini_model();
    TrainConfig cfg = fast_cfg(50, 3, 2);
    cfg.lr = 1e-300;  // effectively frozen -> flat validation loss
    auto trained = run_clinical(mb.fd, mcfg, cfg, 7);
    CHECK(trained.phases[0].epochs_run == 5);  // warmup + patience
    CHECK(trained.phases[0].best_epoch == 1);
}

TEST_CASE("the epoch cap bounds a phase") {
    MiniBench mb;
    auto mcfg = mini_model();
    TrainConfig cfg = fast_cfg(3, 0, 3);
    auto trained = run_clinical(mb.fd, mcfg, cfg, 7);
    CHECK(trained.phases[0].epochs_run <= 3);
}

TEST_CASE("reported parameters achieve the minimum observed validation loss") {
    MiniBench mb;
    auto mcfg = mini_model();
    auto cfg = fast_cfg(6, 0, 6);
    auto trained = run_clinical(mb.fd, mcfg, cfg, 3);
    const auto& curve = trained.phases[0].val_curve;
    double best = curve[0];
    for (double v : curve) best = std::min(best, v);
    CHECK(trained.phases[0].best_val_loss == best);
    // restored parameters re-evaluate to exactly the recorded best
    auto target = clinical_target(trained.model);
    double val = evaluate_loss(target, mb.fd, mb.fd.split.validation, MaskLevel::None, 0.0, cfg.loss);
    CHECK(val == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("a linearly-separable-style clinical problem trains below ln 2") {
    MiniBench mb(0.0, 3.0, 0.01);  // strong clinical signal, no noise to speak of
    auto mcfg = mini_model();
    TrainConfig cfg = fast_cfg(40, 0, 40);
    cfg.lr = 0.02;
    auto trained = run_clinical(mb.fd, mcfg, cfg, 2);
    CHECK(trained.phases[0].final_train_loss < std::log(2.0));
}

TEST_CASE("doctor-in-the-loop curriculum structure") {
    MiniBench mb;
    auto mcfg = mini_model();
    auto cfg = fast_cfg();
    auto trained = run_doctor_in_the_loop_ct(mb.fd, mcfg, cfg, 11);

    REQUIRE(trained.phases.size() == 3);
    CHECK(trained.phases[0].name == "step0");
    CHECK(trained.phases[0].lambda == 0.0);
    CHECK(trained.phases[0].mask == "none");
    CHECK(trained.phases[1].name == "step1");
    CHECK(trained.phases[1].lambda == 1.0);
    CHECK(trained.phases[1].mask == "m1");
    CHECK(trained.phases[2].name == "step2");
    CHECK(trained.phases[2].lambda == 1.0);
    CHECK(trained.phases[2].mask == "m2");
    REQUIRE(trained.after_phase.size() == 3);
    CHECK(std::isfinite(trained.phases[0].val_xai_m2));
    CHECK(std::isfinite(trained.phases[2].val_xai_m2));
    // the final model is the step-2 snapshot
    CHECK(trained.model.enc.blocks[0].w.vec() == trained.after_phase[2].enc.blocks[0].w.vec());

    // without warm start the phase chain re-initializes and lands elsewhere
    TrainConfig cold = cfg;
    cold.warm_start = false;
    auto scratch = run_doctor_in_the_loop_ct(mb.fd, mcfg, cold, 11);
    CHECK(scratch.model.enc.blocks[0].w.vec() != trained.model.enc.blocks[0].w.vec());
}

TEST_CASE("warm start chains each step from the previous best") {
    MiniBench mb;
    auto mcfg = mini_model();
    auto cfg = fast_cfg();
    auto trained = run_doctor_in_the_loop_ct(mb.fd, mcfg, cfg, 11);
    // replay step 1 from the recorded step-0 snapshot; identical streams must
    // reproduce the pipeline's step-1 snapshot exactly
    models::CTModel replay = trained.after_phase[0];
    auto target = ct_target(replay, mcfg);
    train_phase(target, mb.fd, {"step1", MaskLevel::M1, 1.0, true}, cfg, 0xd171 + 1);
    CHECK(replay.enc.blocks[0].w.vec() == trained.after_phase[1].enc.blocks[0].w.vec());
    CHECK(replay.head.w.vec() == trained.after_phase[1].head.w.vec());
}

TEST_CASE("a lambda-0 phase never evaluates the saliency path") {
    // corrupt the masks; only a phase that touches Grad-CAM / the alignment
    // loss would notice
    MiniBench mb;
    phantom::Processed broken = mb.proc;
    for (auto& m : broken.m1) m = Tensor::full(m.shape(), 0.5);
    for (auto& m : broken.m2) m = Tensor::full(m.shape(), 0.5);
    FoldData fd = mb.fd;
    fd.proc = &broken;

    auto mcfg = mini_model();
    models::CTModel model;
    Rng rng(4);
    model = models::init_ct_model(mcfg.ct, 1, broken.extent, rng);
    auto target = ct_target(model, mcfg);
    auto cfg = fast_cfg();
    CHECK_NOTHROW(train_phase(target, fd, {"step0", MaskLevel::None, 0.0}, cfg, 1));
    CHECK_THROWS(train_phase(target, fd, {"step1", MaskLevel::M1, 1.0}, cfg, 2));
}

TEST_CASE("intermediate fusion starts from the trained unimodal encoders") {
    MiniBench mb;
    auto mcfg = mini_model();
    auto cfg = fast_cfg();
    auto ct = run_doctor_in_the_loop_ct(mb.fd, mcfg, cfg, 21);
    auto cl = run_clinical(mb.fd, mcfg, cfg, 21);

    SUBCASE("frozen encoders stay bit-identical through joint training") {
        TrainConfig frozen = cfg;
        frozen.freeze_encoders = true;
        auto fused = run_intermediate_fusion(ct.model, cl.model, mb.fd, mcfg, frozen,
                                             {"joint", MaskLevel::M2, 1.0, true}, 21);
        CHECK(fused.model.ct.blocks[0].w.vec() == ct.model.enc.blocks[0].w.vec());
        CHECK(fused.model.clinical.layers[0].w.vec() == cl.model.enc.layers[0].w.vec());
    }
    SUBCASE("end-to-end training moves the encoders off their warm start") {
        auto fused = run_intermediate_fusion(ct.model, cl.model, mb.fd, mcfg, cfg,
                                             {"joint", MaskLevel::M2, 1.0, true}, 21);
        CHECK(fused.model.ct.blocks[0].w.vec() != ct.model.enc.blocks[0].w.vec());
        CHECK(fused.model.clinical.layers[0].w.vec() != cl.model.enc.layers[0].w.vec());
    }
}

TEST_CASE("segmentation ablation restricts the input to the lesion") {
    MiniBench mb;
    FoldData masked = make_fold_data(mb.ds, mb.proc, mb.folds[0], true);
    Tensor v = imaging_input(masked, 0);
    const Tensor& m2 = mb.proc.m2[0];
    for (std::int64_t i = 0; i < m2.numel(); ++i)
        if (m2[i] == 0.0) CHECK(v[i] == 0.0);

    auto mcfg = mini_model();
    CHECK_THROWS_AS(run_segmentation_ct(mb.fd, mcfg, fast_cfg(), 3), std::invalid_argument);
    auto seg = run_segmentation_ct(masked, mcfg, fast_cfg(), 3);
    CHECK(seg.phases.size() == 1);
    CHECK(seg.phases[0].lambda == 0.0);
}

TEST_CASE("ablation and early-fusion phase shapes") {
    MiniBench mb;
    auto mcfg = mini_model();
    auto cfg = fast_cfg();

    auto guide = run_xai_guide_ct(mb.fd, mcfg, cfg, 31);
    CHECK(guide.phases.size() == 1);  // no curriculum
    CHECK(guide.phases[0].lambda == 1.0);
    CHECK(guide.phases[0].mask == "m2");

    // the plain early-fusion network trains on classification only, so it
    // must not touch the masks at all
    phantom::Processed broken = mb.proc;
    for (auto& m : broken.m2) m = Tensor::full(m.shape(), 0.5);
    FoldData fd = mb.fd;
    fd.proc = &broken;
    CHECK_NOTHROW(run_early_fusion(fd, mcfg, cfg, {"early", MaskLevel::None, 0.0}, 32));
}

TEST_SUITE_END();

#include "ditl/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ditl::train {

void validate(const TrainConfig& cfg) {
    if (cfg.batch_size < 1) throw std::invalid_argument("train config: batch size must be positive");
    if (cfg.patience > cfg.max_epochs) throw std::invalid_argument("train config: patience must not exceed max epochs");
    if (cfg.max_epochs < 1) throw std::invalid_argument("train config: need at least one epoch");
    if (cfg.lr <= 0.0) throw std::invalid_argument("train config: learning rate must be positive");
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

AdamState AdamState::like(const std::vector<Tensor*>& params) {
    AdamState s;
    for (const Tensor* p : params) {
        s.m.push_back(Tensor::zeros(p->shape()));
        s.v.push_back(Tensor::zeros(p->shape()));
    }
    return s;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               double weight_decay) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state arity mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!grads[i].all_finite())
            throw std::runtime_error("adam_step: non-finite gradient for parameter " + std::to_string(i) +
                                     " at step " + std::to_string(state.t + 1));
    ++state.t;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            p[j] -= lr * weight_decay * p[j];  // decoupled decay before the moment update
            m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g[j];
            v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    }
}

// ---------------------------------------------------------------------------
// fold data
// ---------------------------------------------------------------------------

FoldData make_fold_data(const phantom::Dataset& ds, const phantom::Processed& proc, const eval::FoldSplit& split,
                        bool mask_input) {
    FoldData fd;
    fd.proc = &proc;
    fd.split = split;
    fd.mask_input = mask_input;
    auto stats = phantom::compute_encode_stats(ds, split.train);
    fd.clinical = phantom::encode_clinical(ds, stats).matrix;
    return fd;
}

Tensor imaging_input(const FoldData& fd, int index) {
    const auto i = static_cast<std::size_t>(index);
    Tensor v = fd.proc->volumes[i];
    if (fd.mask_input) {
        const Tensor& m2 = fd.proc->m2[i];
        for (std::int64_t j = 0; j < m2.numel(); ++j) v[j] *= m2[j];
    }
    return v;
}

Tensor clinical_input(const FoldData& fd, int index) { return phantom::encoded_row(fd.clinical, index); }

std::string mask_level_name(MaskLevel m) {
    switch (m) {
        case MaskLevel::None: return "none";
        case MaskLevel::M1: return "m1";
        case MaskLevel::M2: return "m2";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// phase loop
// ---------------------------------------------------------------------------

namespace {

const Tensor* phase_mask(const FoldData& fd, MaskLevel m, int index, const Tensor* aug_m1, const Tensor* aug_m2) {
    switch (m) {
        case MaskLevel::None: return nullptr;
        case MaskLevel::M1: return aug_m1 ? aug_m1 : &fd.proc->m1[static_cast<std::size_t>(index)];
        case MaskLevel::M2: return aug_m2 ? aug_m2 : &fd.proc->m2[static_cast<std::size_t>(index)];
    }
    return nullptr;
}

double sample_loss(const TrainTarget& target, const FoldData& fd, int idx, const Tensor& vol, const Tensor* m1,
                   const Tensor* m2, MaskLevel mask, double lambda, const losses::LossConfig& loss_cfg,
                   std::vector<Tensor>* grad_out) {
    Graph g;
    std::vector<Var> wrt;
    const Tensor clin = clinical_input(fd, idx);
    auto out = target.forward(g, vol, clin, wrt);
    const int label = fd.proc->labels[static_cast<std::size_t>(idx)];

    losses::LossConfig cfg = loss_cfg;
    cfg.lambda = lambda;
    const Tensor* mask_t = phase_mask(fd, mask, idx, m1, m2);
    if (lambda > 0.0 && !target.has_conv_branch)
        throw std::invalid_argument("train_phase: alignment loss requires a convolutional branch");
    // the saliency target is the ground-truth class during training
    Var loss = losses::composite(g, out.logits, out.probs, out.act, losses::onehot2(label), mask_t, label, cfg);
    const double value = g.value(loss).item();
    if (grad_out) {
        auto grads = g.backward(loss, wrt, false);
        if (grad_out->empty()) {
            for (auto& gv : grads) grad_out->push_back(g.value(gv));
        } else {
            for (std::size_t i = 0; i < grads.size(); ++i) {
                const Tensor& gt = g.value(grads[i]);
                Tensor& acc = (*grad_out)[i];
                for (std::int64_t j = 0; j < acc.numel(); ++j) acc[j] += gt[j];
            }
        }
    }
    return value;
}

std::vector<Tensor> snapshot(const std::vector<Tensor*>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Tensor* p : params) out.push_back(*p);
    return out;
}

void restore(const std::vector<Tensor*>& params, const std::vector<Tensor>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = snap[i];
}

}  // namespace

double evaluate_loss(const TrainTarget& target, const FoldData& fd, const std::vector<int>& indices, MaskLevel mask,
                     double lambda, const losses::LossConfig& loss_cfg) {
    if (indices.empty()) throw std::invalid_argument("evaluate_loss: empty split");
    losses::LossConfig cfg = loss_cfg;
    cfg.gradcam.create_graph = false;  // values only
    double total = 0.0;
    for (int idx : indices)
        total += sample_loss(target, fd, idx, imaging_input(fd, idx), nullptr, nullptr, mask, lambda, cfg, nullptr);
    return total / static_cast<double>(indices.size());
}

PhaseResult train_phase(const TrainTarget& target, const FoldData& fd, const PhaseSpec& phase, const TrainConfig& cfg,
                        std::uint64_t phase_tag) {
    validate(cfg);
    if (fd.split.train.empty() || fd.split.validation.empty())
        throw std::invalid_argument("train_phase: empty train or validation split");

    PhaseResult res;
    res.name = phase.name;
    res.lambda = phase.lambda;
    res.mask = mask_level_name(phase.mask);

    AdamState adam = AdamState::like(target.params);
    std::vector<Tensor> best = snapshot(target.params);

    std::vector<int> order = fd.split.train;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, phase_tag, 0xe90c, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        double train_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> grad_acc;
            for (std::size_t b = start; b < stop; ++b) {
                const int idx = order[b];
                const auto ui = static_cast<std::size_t>(idx);
                if (cfg.augment) {
                    auto aug = phantom::augment(imaging_input(fd, idx), fd.proc->m1[ui], fd.proc->m2[ui], rng,
                                                cfg.max_shift);
                    train_loss += sample_loss(target, fd, idx, aug.volume, &aug.m1, &aug.m2, phase.mask, phase.lambda,
                                              cfg.loss, &grad_acc);
                } else {
                    train_loss += sample_loss(target, fd, idx, imaging_input(fd, idx), nullptr, nullptr, phase.mask,
                                              phase.lambda, cfg.loss, &grad_acc);
                }
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (auto& gt : grad_acc)
                for (std::int64_t j = 0; j < gt.numel(); ++j) gt[j] *= inv;
            adam_step(target.params, grad_acc, adam, cfg.lr, cfg.weight_decay);
        }
        res.final_train_loss = train_loss / static_cast<double>(order.size());

        const double val = evaluate_loss(target, fd, fd.split.validation, phase.mask, phase.lambda, cfg.loss);
        res.val_curve.push_back(val);
        res.epochs_run = epoch;
        if (val < res.best_val_loss) {
            res.best_val_loss = val;
            res.best_epoch = epoch;
            best = snapshot(target.params);
        }
        // patience window starts after warm-up
        if (epoch > cfg.warmup_epochs && epoch - std::max(res.best_epoch, cfg.warmup_epochs) >= cfg.patience) break;
    }
    restore(target.params, best);
    if (phase.measure_xai && target.has_conv_branch)
        res.val_xai_m2 = evaluate_xai_m2(target, fd, fd.split.validation, cfg.loss);
    return res;
}

double evaluate_xai_m2(const TrainTarget& target, const FoldData& fd, const std::vector<int>& indices,
                       const losses::LossConfig& loss_cfg) {
    if (indices.empty()) throw std::invalid_argument("evaluate_xai_m2: empty split");
    xai::GradCamConfig gc = loss_cfg.gradcam;
    gc.create_graph = false;
    double total = 0.0;
    for (int idx : indices) {
        Graph g;
        std::vector<Var> wrt;
        auto out = target.forward(g, imaging_input(fd, idx), clinical_input(fd, idx), wrt);
        const int label = fd.proc->labels[static_cast<std::size_t>(idx)];
        Var h = xai::gradcam_var(g, out.logits, label, out.act, gc);
        total += g.value(losses::xai_loss(g, h, fd.proc->m2[static_cast<std::size_t>(idx)])).item();
    }
    return total / static_cast<double>(indices.size());
}

// ---------------------------------------------------------------------------
// targets
// ---------------------------------------------------------------------------

TrainTarget ct_target(models::CTModel& m, const models::ModelConfig& mcfg, bool early_stack) {
    TrainTarget t;
    t.has_conv_branch = true;
    for (auto& [name, p] : models::param_refs(m)) t.params.push_back(p);
    const int kernel = mcfg.ct.kernel;
    models::CTModel* mp = &m;
    t.forward = [mp, kernel, early_stack](Graph& g, const Tensor& vol, const Tensor& clin, std::vector<Var>& wrt) {
        auto bound = models::bind(g, *mp);
        wrt = bound.all;
        const Tensor& input = early_stack ? models::build_early_input(vol, clin) : vol;
        return models::forward_ct(g, bound, input, kernel);
    };
    return t;
}

TrainTarget clinical_target(models::ClinicalModel& m) {
    TrainTarget t;
    t.has_conv_branch = false;
    for (auto& [name, p] : models::param_refs(m)) t.params.push_back(p);
    models::ClinicalModel* mp = &m;
    t.forward = [mp](Graph& g, const Tensor&, const Tensor& clin, std::vector<Var>& wrt) {
        auto bound = models::bind(g, *mp);
        wrt = bound.all;
        return models::forward_clinical(g, bound, clin);
    };
    return t;
}

TrainTarget fusion_target(models::FusionModel& m, const models::ModelConfig& mcfg, bool freeze_encoders) {
    TrainTarget t;
    t.has_conv_branch = true;
    auto refs = models::param_refs(m);
    std::vector<bool> trainable;
    for (auto& [name, p] : refs) {
        const bool head_side = name.rfind("fusion", 0) == 0 || name.rfind("head", 0) == 0;
        if (!freeze_encoders || head_side) {
            t.params.push_back(p);
            trainable.push_back(true);
        } else {
            trainable.push_back(false);
        }
    }
    const int kernel = mcfg.ct.kernel;
    models::FusionModel* mp = &m;
    t.forward = [mp, kernel, trainable](Graph& g, const Tensor& vol, const Tensor& clin, std::vector<Var>& wrt) {
        auto bound = models::bind(g, *mp);
        wrt.clear();
        for (std::size_t i = 0; i < bound.all.size(); ++i)
            if (trainable[i]) wrt.push_back(bound.all[i]);
        return models::forward_intermediate(g, bound, vol, clin, kernel);
    };
    return t;
}

// ---------------------------------------------------------------------------
// pipelines
// ---------------------------------------------------------------------------

namespace {

std::int64_t flat_clinical_width(const FoldData& fd) { return fd.clinical.shape()[1]; }

}  // namespace

TrainedCT run_doctor_in_the_loop_ct(const FoldData& fd, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                                    std::uint64_t init_seed) {
    const Shape ext = fd.proc->extent;
    TrainedCT out;
    const PhaseSpec phases[] = {{"step0", MaskLevel::None, losses::lambda_for_phase(losses::Phase::Step0), true},
                                {"step1", MaskLevel::M1, losses::lambda_for_phase(losses::Phase::Step1), true},
                                {"step2", MaskLevel::M2, losses::lambda_for_phase(losses::Phase::Step2), true}};
    for (std::uint64_t p = 0; p < 3; ++p) {
        if (p == 0 || !cfg.warm_start) {
            Rng rng(mix_seed(init_seed, 0xc7, p == 0 ? 0 : p));
            out.model = models::init_ct_model(mcfg.ct, 1, ext, rng);
        }
        auto target = ct_target(out.model, mcfg);
        out.phases.push_back(train_phase(target, fd, phases[p], cfg, 0xd171 + p));
        out.after_phase.push_back(out.model);
    }
    return out;
}

TrainedCT run_xai_guide_ct(const FoldData& fd, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                           std::uint64_t init_seed) {
    TrainedCT out;
    Rng rng(mix_seed(init_seed, 0xc7, 0));
    out.model = models::init_ct_model(mcfg.ct, 1, fd.proc->extent, rng);
    auto target = ct_target(out.model, mcfg);
    out.phases.push_back(train_phase(target, fd, {"xai-guide", MaskLevel::M2, 1.0, true}, cfg, 0xa1de));
    out.after_phase.push_back(out.model);
    return out;
}

TrainedCT run_segmentation_ct(const FoldData& fd_masked, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                              std::uint64_t init_seed) {
    if (!fd_masked.mask_input)
        throw std::invalid_argument("segmentation pipeline expects the lesion-restricted fold view");
    TrainedCT out;
    Rng rng(mix_seed(init_seed, 0xc7, 0));
    out.model = models::init_ct_model(mcfg.ct, 1, fd_masked.proc->extent, rng);
    auto target = ct_target(out.model, mcfg);
    out.phases.push_back(train_phase(target, fd_masked, {"segmentation", MaskLevel::None, 0.0}, cfg, 0x5e6));
    out.after_phase.push_back(out.model);
    return out;
}

TrainedClinical run_clinical(const FoldData& fd, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                             std::uint64_t init_seed) {
    TrainedClinical out;
    Rng rng(mix_seed(init_seed, 0xc11, 0));
    out.model = models::init_clinical_model(mcfg.clinical, flat_clinical_width(fd), rng);
    auto target = clinical_target(out.model);
    out.phases.push_back(train_phase(target, fd, {"clinical", MaskLevel::None, 0.0}, cfg, 0xc11d));
    return out;
}

TrainedFusion run_intermediate_fusion(const models::CTModel& ct, const models::ClinicalModel& clinical,
                                      const FoldData& fd, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                                      const PhaseSpec& joint_phase, std::uint64_t init_seed) {
    TrainedFusion out;
    Rng rng(mix_seed(init_seed, 0xf5, 0));
    out.model = models::init_fusion_model(mcfg.fusion, ct, clinical, rng);
    auto target = fusion_target(out.model, mcfg, cfg.freeze_encoders);
    out.phases.push_back(train_phase(target, fd, joint_phase, cfg, 0xf5e));
    return out;
}

TrainedCT run_early_fusion(const FoldData& fd, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                           const PhaseSpec& phase, std::uint64_t init_seed) {
    TrainedCT out;
    Rng rng(mix_seed(init_seed, 0xea, 0));
    out.model = models::init_ct_model(mcfg.ct, 1 + flat_clinical_width(fd), fd.proc->extent, rng);
    auto target = ct_target(out.model, mcfg, /*early_stack=*/true);
    out.phases.push_back(train_phase(target, fd, phase, cfg, 0xea51));
    out.after_phase.push_back(out.model);
    return out;
}

}  // namespace ditl::train

#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ditl/eval.hpp"
#include "ditl/losses.hpp"
#include "ditl/models.hpp"
#include "ditl/phantom.hpp"

namespace ditl::train {

struct TrainConfig {
    double lr = 0.001;
    double weight_decay = 1e-5;
    int warmup_epochs = 50;  // early stopping disabled during warm-up, learning rate constant
    int max_epochs = 300;
    int patience = 50;  // consecutive non-improving epochs after warm-up
    int batch_size = 8;
    std::uint64_t seed = 1;
    bool augment = true;
    int max_shift = 3;
    bool warm_start = true;       // chain curriculum phases from the previous best
    bool freeze_encoders = false; // joint phase: train the fusion head only
    losses::LossConfig loss;      // lambda is set per phase
};

void validate(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m, v;
    std::int64_t t = 0;
    static AdamState like(const std::vector<Tensor*>& params);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Decoupled weight decay applied before the moment update. Throws on
// non-finite gradients.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               double weight_decay);

// ---------------------------------------------------------------------------
// fold-level data view
// ---------------------------------------------------------------------------

struct FoldData {
    const phantom::Processed* proc = nullptr;
    Tensor clinical;  // [n,F], encoded with this fold's training statistics
    eval::FoldSplit split;
    bool mask_input = false;  // lesion-restricted input (voxel product with M2)
};

// Builds the fold view: computes train statistics, encodes all records.
FoldData make_fold_data(const phantom::Dataset& ds, const phantom::Processed& proc, const eval::FoldSplit& split,
                        bool mask_input = false);

Tensor imaging_input(const FoldData& fd, int index);  // [1,H,W,D], masked when mask_input
Tensor clinical_input(const FoldData& fd, int index);

// ---------------------------------------------------------------------------
// one training phase
// ---------------------------------------------------------------------------

enum class MaskLevel { None, M1, M2 };
std::string mask_level_name(MaskLevel m);

struct PhaseSpec {
    std::string name;
    MaskLevel mask = MaskLevel::None;
    double lambda = 0.0;
    bool measure_xai = false;  // record validation L_xai vs M2 at phase end
};

struct PhaseResult {
    std::string name;
    double lambda = 0.0;
    std::string mask;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    double final_train_loss = 0.0;
    std::vector<double> val_curve;
    double val_xai_m2 = std::numeric_limits<double>::quiet_NaN();  // vs M2 at phase end
};

// Bind trainable parameters into the per-sample graph and run the forward
// pass; `wrt` receives the bound parameter handles in `params` order.
using ForwardHook =
    std::function<models::ForwardOut(Graph& g, const Tensor& volume, const Tensor& clinical, std::vector<Var>& wrt)>;

struct TrainTarget {
    ForwardHook forward;
    std::vector<Tensor*> params;
    bool has_conv_branch = true;
};

// Minibatch descent on the composite loss with early stopping on validation
// loss; the best-validation parameters are restored on return.
PhaseResult train_phase(const TrainTarget& target, const FoldData& fd, const PhaseSpec& phase, const TrainConfig& cfg,
                        std::uint64_t phase_tag);

// mean composite loss over the given indices (no augmentation)
double evaluate_loss(const TrainTarget& target, const FoldData& fd, const std::vector<int>& indices, MaskLevel mask,
                     double lambda, const losses::LossConfig& loss_cfg);

// mean heatmap-vs-lesion-mask MSE, ground-truth target class
double evaluate_xai_m2(const TrainTarget& target, const FoldData& fd, const std::vector<int>& indices,
                       const losses::LossConfig& loss_cfg);

// ---------------------------------------------------------------------------
// pipelines
// ---------------------------------------------------------------------------

struct TrainedCT {
    models::CTModel model;
    std::vector<models::CTModel> after_phase;  // best parameters at each phase boundary
    std::vector<PhaseResult> phases;
};

struct TrainedClinical {
    models::ClinicalModel model;
    std::vector<PhaseResult> phases;
};

struct TrainedFusion {
    models::FusionModel model;
    std::vector<PhaseResult> phases;
};

TrainTarget ct_target(models::CTModel& m, const models::ModelConfig& mcfg, bool early_stack = false);
TrainTarget clinical_target(models::ClinicalModel& m);
TrainTarget fusion_target(models::FusionModel& m, const models::ModelConfig& mcfg, bool freeze_encoders);

// Step 0 (no mask) -> Step 1 (M1) -> Step 2 (M2), each phase warm-started
// from the previous best unless cfg.warm_start is off.
TrainedCT run_doctor_in_the_loop_ct(const FoldData& fd, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                                    std::uint64_t init_seed);

// ablations: fixed lesion guide (lambda=1, M2, one phase) and
// lesion-restricted input (lambda=0, one phase; fd must have mask_input set)
TrainedCT run_xai_guide_ct(const FoldData& fd, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                           std::uint64_t init_seed);
TrainedCT run_segmentation_ct(const FoldData& fd_masked, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                              std::uint64_t init_seed);

TrainedClinical run_clinical(const FoldData& fd, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                             std::uint64_t init_seed);

// Intermediate fusion: fuse trained encoders, fresh fusion head, joint phase
// trained end-to-end (lambda/mask per the family: lambda=1+M2, or L_cls only
// for the lesion-input family).
TrainedFusion run_intermediate_fusion(const models::CTModel& ct, const models::ClinicalModel& clinical,
                                      const FoldData& fd, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                                      const PhaseSpec& joint_phase, std::uint64_t init_seed);

// Early fusion: one joint CT-style network over the volume stacked with
// constant clinical channels.
TrainedCT run_early_fusion(const FoldData& fd, const models::ModelConfig& mcfg, const TrainConfig& cfg,
                           const PhaseSpec& phase, std::uint64_t init_seed);

}  // namespace ditl::train

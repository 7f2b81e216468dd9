#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ditl/graph.hpp"
#include "ditl/rng.hpp"
#include "ditl/tensor.hpp"

namespace ditl::models {

// Widths of the small 3D CNN used for the imaging branch. One block is
// conv(k, stride 1, extent-preserving padding) -> relu -> avgpool(2). The
// first conv is the saliency target layer, so its stride must stay 1.
struct CTNetConfig {
    std::vector<int> channels{2, 4, 8};
    int kernel = 3;
    int feat_width = 16;  // z_i width after the projection layer
};

struct ClinicalNetConfig {
    std::vector<int> hidden{16, 16};  // z_c width = hidden.back()
};

struct FusionNetConfig {
    std::vector<int> hidden{16};  // MLP widths between concat(z_i, z_c) and the 2-way output
};

struct ModelConfig {
    CTNetConfig ct;
    ClinicalNetConfig clinical;
    FusionNetConfig fusion;
};

struct ConvLayer {
    Tensor w;  // [Cout, Cin, k, k, k]
    Tensor b;  // [Cout]
};

struct DenseLayer {
    Tensor w;  // [m, n]
    Tensor b;  // [m]
};

struct CTEncoderParams {
    std::vector<ConvLayer> blocks;
    DenseLayer proj;  // flattened conv features -> z_i
};

struct MLPParams {
    std::vector<DenseLayer> layers;  // relu after every layer
};

struct CTModel {
    CTEncoderParams enc;
    DenseLayer head;  // z_i -> 2 logits
};

struct ClinicalModel {
    MLPParams enc;
    DenseLayer head;  // z_c -> 2 logits
};

struct FusionModel {
    CTEncoderParams ct;
    MLPParams clinical;
    MLPParams fusion_hidden;
    DenseLayer head;
};

enum class VariantKind { UnimodalCT, UnimodalClinical, EarlyFusion, IntermediateFusion, LateFusion };

std::string variant_kind_name(VariantKind k);

// A trained predictor in one of the five configurations. Only the components
// the kind requires are populated.
struct ModelVariant {
    VariantKind kind;
    std::optional<CTModel> ct;              // UnimodalCT, EarlyFusion (stacked input), LateFusion member
    std::optional<ClinicalModel> clinical;  // UnimodalClinical, LateFusion member
    std::optional<FusionModel> fusion;      // IntermediateFusion
    int clinical_width = 0;                 // F; EarlyFusion input has 1 + F channels
};

// --- initialization (fan-in scaled uniform, deterministic per seed) ---
CTModel init_ct_model(const CTNetConfig& cfg, std::int64_t in_channels, const Shape& input_extent, Rng& rng);
ClinicalModel init_clinical_model(const ClinicalNetConfig& cfg, std::int64_t in_width, Rng& rng);
FusionModel init_fusion_model(const FusionNetConfig& cfg, const CTModel& trained_ct, const ClinicalModel& trained_clinical,
                              Rng& rng);

// --- parameter access (stable order, used by the optimizer and checkpoints) ---
using ParamRef = std::pair<std::string, Tensor*>;
std::vector<ParamRef> param_refs(CTModel& m);
std::vector<ParamRef> param_refs(ClinicalModel& m);
std::vector<ParamRef> param_refs(FusionModel& m);
std::vector<ParamRef> param_refs(ModelVariant& v);

// --- graph-bound views ---
struct BoundCT {
    std::vector<std::pair<Var, Var>> blocks;  // (w, b)
    Var proj_w, proj_b;
    Var head_w, head_b;
    std::vector<Var> all;  // every bound parameter, param_refs order
};
struct BoundClinical {
    std::vector<std::pair<Var, Var>> layers;
    Var head_w, head_b;
    std::vector<Var> all;
};
struct BoundFusion {
    std::vector<std::pair<Var, Var>> ct_blocks;
    Var ct_proj_w, ct_proj_b;
    std::vector<std::pair<Var, Var>> clin_layers;
    std::vector<std::pair<Var, Var>> fusion_layers;
    Var head_w, head_b;
    std::vector<Var> all;
};

BoundCT bind(Graph& g, const CTModel& m);
BoundClinical bind(Graph& g, const ClinicalModel& m);
BoundFusion bind(Graph& g, const FusionModel& m);

struct ForwardOut {
    Var logits;
    Var probs;
    Var act;  // target-layer activations (rectified first-conv output); invalid for clinical-only paths
};

// x is the preprocessed [1,H,W,D] (or [1+F,...] for early fusion) imaging tensor.
ForwardOut forward_ct(Graph& g, const BoundCT& m, const Tensor& x, int kernel);
ForwardOut forward_clinical(Graph& g, const BoundClinical& m, const Tensor& x_c);
ForwardOut forward_intermediate(Graph& g, const BoundFusion& m, const Tensor& x_i, const Tensor& x_c, int kernel);

// Stacks the clinical vector as spatially-constant channels behind the volume.
Tensor build_early_input(const Tensor& volume_chw, const Tensor& x_c);

// --- plain-tensor inference (fresh throwaway graphs inside) ---
Tensor predict_probs(const ModelVariant& v, const Tensor& volume, const Tensor& x_c, const ModelConfig& cfg);

// Element-wise mean of the two members' probability vectors.
Tensor late_fusion_probs(const Tensor& p_ct, const Tensor& p_clinical);

// --- checkpoints: one tensor file per parameter plus a manifest ---
void save_variant(const std::string& dir, const ModelVariant& v, const ModelConfig& cfg);
ModelVariant load_variant(const std::string& dir, ModelConfig& cfg_out);

}  // namespace ditl::models

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ditl/graph.hpp"
#include "ditl/models.hpp"
#include "ditl/tensor.hpp"

namespace ditl::xai {

enum class HeatmapNorm { MinMax, DivMax, None };

struct GradCamConfig {
    HeatmapNorm norm = HeatmapNorm::MinMax;
    // When true the heatmap stays differentiable through the channel weights
    // (the saliency gradient itself), enabling the second-order training path.
    // When false those weights are treated as constants; values are identical.
    bool create_graph = true;
};

// In-graph Grad-CAM: channel weights are the spatial mean of d(logit_c)/dA,
// the raw map is relu(sum_c alpha_c * A_c), then normalized per config.
// Returns a Var shaped like the spatial extent of `act`.
Var gradcam_var(Graph& g, Var logits, int target_class, Var act, const GradCamConfig& cfg);

struct Heatmap {
    Tensor values;  // [H,W,D] in [0,1] for MinMax/DivMax
    int target_class = 0;
};

// Whole-model Grad-CAM on a throwaway graph. Clinical-only models have no
// convolutional branch and are rejected.
Heatmap gradcam(const models::ModelVariant& v, const Tensor& volume, const Tensor& x_c, int target_class,
                const models::ModelConfig& mcfg, const GradCamConfig& cfg = {});

// Trilinear resampling to new extents; output range stays within [min, max]
// of the input.
Tensor resize_heatmap(const Tensor& h, const Shape& target);

// ---------------------------------------------------------------------------
// Exact Shapley attribution over feature groups (a group spans the encoded
// columns of one raw clinical variable).
// ---------------------------------------------------------------------------

struct FeatureGroup {
    std::string name;
    int lo = 0;  // encoded column span [lo, hi)
    int hi = 0;
};

struct AttributionReport {
    std::vector<std::string> names;
    std::vector<double> values;     // Shapley value per group
    std::vector<int> ranking;       // group indices sorted by |value| desc
    double baseline = 0.0;          // f(background mean profile)
    double prediction = 0.0;        // f(x)
};

// value(x) must return the positive-class probability for an encoded clinical
// vector. Exact enumeration over 2^G coalitions; G is capped at 12.
AttributionReport shapley(const std::function<double(const Tensor&)>& value, const Tensor& x,
                          const std::vector<Tensor>& background, const std::vector<FeatureGroup>& groups);

// ---------------------------------------------------------------------------
// exports
// ---------------------------------------------------------------------------

void write_pgm(const std::string& path, const Tensor& slice_hw, double lo, double hi);
// volume slice in gray, lesion mask tinted red, lung outline tinted blue
void write_overlay_ppm(const std::string& path, const Tensor& vol_hw, const Tensor& m1_hw, const Tensor& m2_hw);

}  // namespace ditl::xai

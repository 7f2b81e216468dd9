#pragma once

#include <optional>

#include "ditl/graph.hpp"
#include "ditl/tensor.hpp"
#include "ditl/xai.hpp"

namespace ditl::losses {

// probabilities are floored at 1e-12 before the log
inline constexpr double kProbFloor = 1e-12;

enum class Phase { Step0, Step1, Step2 };

// Step 0 trains on classification alone; the alignment term switches on
// afterwards.
double lambda_for_phase(Phase p);

struct LossConfig {
    double lambda = 1.0;
    xai::GradCamConfig gradcam;  // heatmap normalization + gradient-flow mode
};

// -sum_l y_l log(max(p_l, floor)); y must be one-hot
Var cross_entropy(Graph& g, Var probs, const Tensor& onehot);

// mean squared error between a heatmap and a binary mask of equal extents
Var xai_loss(Graph& g, Var heatmap, const Tensor& mask);

// L_cls + lambda * L_xai. The heatmap is computed from the imaging branch
// activations; mask may be absent only when lambda == 0.
Var composite(Graph& g, Var logits, Var probs, Var act, const Tensor& onehot, const Tensor* mask, int target_class,
              const LossConfig& cfg);

Tensor onehot2(int label);

}  // namespace ditl::losses

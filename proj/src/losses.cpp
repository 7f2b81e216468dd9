#include "ditl/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace ditl::losses {

double lambda_for_phase(Phase p) {
    switch (p) {
        case Phase::Step0: return 0.0;
        case Phase::Step1: return 1.0;
        case Phase::Step2: return 1.0;
    }
    return 0.0;
}

Var cross_entropy(Graph& g, Var probs, const Tensor& onehot) {
    const Tensor& p = g.value(probs);
    if (p.rank() != 1 || onehot.rank() != 1 || p.numel() != onehot.numel())
        throw std::invalid_argument("cross_entropy: length mismatch, " + shape_str(p.shape()) + " vs " +
                                    shape_str(onehot.shape()));
    int ones = 0;
    for (std::int64_t i = 0; i < onehot.numel(); ++i) {
        if (onehot[i] == 1.0)
            ++ones;
        else if (onehot[i] != 0.0)
            throw std::invalid_argument("cross_entropy: label vector is not one-hot");
    }
    if (ones != 1) throw std::invalid_argument("cross_entropy: label vector must have exactly one 1");
    return g.neg(g.sum_all(g.mul(g.constant(onehot), g.log_e(g.clamp_min(probs, kProbFloor)))));
}

Var xai_loss(Graph& g, Var heatmap, const Tensor& mask) {
    const Tensor& h = g.value(heatmap);
    if (h.shape() != mask.shape())
        throw std::invalid_argument("xai_loss: extent mismatch, heatmap " + shape_str(h.shape()) + " vs mask " +
                                    shape_str(mask.shape()));
    for (std::int64_t i = 0; i < mask.numel(); ++i)
        if (mask[i] != 0.0 && mask[i] != 1.0) throw std::invalid_argument("xai_loss: mask must be binary");
    Var d = g.sub(g.constant(mask), heatmap);
    return g.scale(g.sum_all(g.mul(d, d)), 1.0 / static_cast<double>(mask.numel()));
}

Var composite(Graph& g, Var logits, Var probs, Var act, const Tensor& onehot, const Tensor* mask, int target_class,
              const LossConfig& cfg) {
    if (cfg.lambda < 0.0) throw std::invalid_argument("composite: lambda must be nonnegative");
    Var cls = cross_entropy(g, probs, onehot);
    if (cfg.lambda == 0.0) return cls;
    if (mask == nullptr) throw std::invalid_argument("composite: lambda > 0 requires a mask");
    Var h = xai::gradcam_var(g, logits, target_class, act, cfg.gradcam);
    return g.add(cls, g.scale(xai_loss(g, h, *mask), cfg.lambda));
}

Tensor onehot2(int label) {
    if (label != 0 && label != 1) throw std::invalid_argument("onehot2: label must be 0 or 1");
    Tensor y(Shape{2});
    y[label] = 1.0;
    return y;
}

}  // namespace ditl::losses

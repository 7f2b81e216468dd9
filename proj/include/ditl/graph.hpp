#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ditl/tensor.hpp"

namespace ditl {

// Handle into a Graph. Valid only for the graph that produced it.
struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    ScaleC,    // y = c * x
    OffsetC,   // y = x + c
    BMulS,     // y = x * s, s rank-0
    BAddS,     // y = x + s, s rank-0
    Recip,     // elementwise 1/x
    LogE,      // elementwise ln(x)
    Relu,
    ClampMinC,  // y = max(x, c)
    SumAll,     // -> rank-0
    MatVec,     // (W[m,n], x[n]) -> [m]
    MatVecT,    // (W[m,n], u[m]) -> [n]
    Outer,      // (u[m], v[n]) -> [m,n]
    Conv3d,     // (x[Ci,H,W,D], w[Co,Ci,k,k,k]) -> [Co,H',W',D']
    Conv3dVjpInput,   // (g[Co,...], w) -> x-shaped
    Conv3dVjpWeight,  // (x, g) -> w-shaped
    AddChanBias,      // (y[C,...], b[C])
    ChanSum,          // [C,...] -> [C]
    AvgPool2,
    AvgUnpool2,
    MaxPool2,
    ScatterPool,  // adjoint of MaxPool2 under captured indices
    GatherPool,   // adjoint of ScatterPool
    Concat1d,
    Slice1d,
    PadEmbed1d,
    Reshape,
    Softmax1d,
    ChanSpatialMean,  // [C,S...] -> [C], mean over spatial
    ChanSpreadMean,   // [C] -> [C,S...], g_c / S (adjoint of ChanSpatialMean)
    ChanWeightedSum,  // (x[C,S...], a[C]) -> [S...]
    ChanOuter,        // (y[S...], a[C]) -> [C,S...]
    ChanDot,          // (x[C,S...], y[S...]) -> [C]
    MinAll,           // -> rank-0, first-min subgradient
    MaxAll,           // -> rank-0, first-max subgradient
    GatherAt,         // x -> rank-0 at flat index
    ScatterAt,        // rank-0 -> shape with value at flat index
};

// Define-by-run tape. Values are computed eagerly at node creation; backward()
// appends vector-Jacobian-product nodes to the same tape, so gradients are
// ordinary graph values and can themselves be differentiated (create_graph).
// A graph instance is confined to a single thread.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

    const Tensor& value(Var v) const { return node(v).value; }
    const Shape& shape(Var v) const { return node(v).value.shape(); }
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // --- elementwise / scalar ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var neg(Var x);
    Var scale(Var x, double c);
    Var offset(Var x, double c);
    Var bmul(Var x, Var s);   // s rank-0
    Var badd(Var x, Var s);   // s rank-0
    Var recip(Var x);
    Var log_e(Var x);
    Var relu(Var x);
    Var clamp_min(Var x, double c);
    Var sum_all(Var x);
    Var mean_all(Var x);

    // --- linear algebra ---
    Var matvec(Var w, Var x);
    Var matvec_t(Var w, Var u);
    Var outer(Var u, Var v);

    // --- convolution family (cross-correlation) ---
    Var conv3d(Var x, Var w, int stride, int pad);
    Var conv3d_vjp_input(Var g, Var w, const Shape& input_shape, int stride, int pad);
    Var conv3d_vjp_weight(Var x, Var g, const Shape& weight_shape, int stride, int pad);
    Var add_chan_bias(Var y, Var b);
    Var chan_sum(Var x);

    // --- pooling / shaping ---
    Var avgpool2(Var x);
    Var avgunpool2(Var g, const Shape& target);
    Var maxpool2(Var x);
    Var concat1d(Var a, Var b);
    Var slice1d(Var x, std::int64_t lo, std::int64_t hi);
    Var pad_embed1d(Var x, std::int64_t lo, std::int64_t total);
    Var reshape(Var x, Shape target);

    // --- reductions / channel ops ---
    Var softmax1d(Var x);
    Var chan_spatial_mean(Var x);
    Var chan_spread_mean(Var g, const Shape& target);
    Var chan_weighted_sum(Var x, Var a);
    Var chan_outer(Var y, Var a);
    Var chan_dot(Var x, Var y);
    Var min_all(Var x);
    Var max_all(Var x);
    Var gather_at(Var x, std::int64_t flat_index);
    Var scatter_at(Var s, const Shape& target, std::int64_t flat_index);

    // Reverse-mode sweep from a rank-0 node. Returns one gradient per wrt
    // entry, aligned by position; zero tensors for nodes the scalar does not
    // depend on. With create_graph the returned gradients stay connected to
    // the tape and can be differentiated again; otherwise they are detached.
    std::vector<Var> backward(Var scalar, std::span<const Var> wrt, bool create_graph = false);

private:
    struct Node {
        Op op = Op::Leaf;
        std::int32_t a = -1, b = -1;  // parents
        Tensor value;
        bool requires_grad = false;
        double cval = 0.0;                                    // ScaleC/OffsetC/ClampMinC
        std::int64_t index = 0;                               // GatherAt/ScatterAt, Slice1d lo, PadEmbed1d lo
        int stride = 1, pad = 0;                              // conv family
        std::shared_ptr<const std::vector<std::int64_t>> pool_index;  // MaxPool2/ScatterPool/GatherPool
    };

    Node& node(Var v) {
        check(v);
        return nodes_[static_cast<std::size_t>(v.id)];
    }
    const Node& node(Var v) const {
        check(v);
        return nodes_[static_cast<std::size_t>(v.id)];
    }
    void check(Var v) const;
    Var push(Node n);
    Var accumulate(Var acc, Var g);  // acc + g, handling unset acc

    std::vector<Node> nodes_;
};

// Convenience composites used across the model zoo.
Var dense(Graph& g, Var x, Var w, Var b);  // w[m,n] * x[n] + b[m]

}  // namespace ditl

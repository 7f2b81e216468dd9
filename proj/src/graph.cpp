#include "ditl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "conv3d_kernels.hpp"

namespace ditl {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

Shape spatial_of(const Shape& chan_shape) {
    return Shape(chan_shape.begin() + 1, chan_shape.end());
}

}  // namespace

void Graph::check(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw std::invalid_argument("node id " + std::to_string(v.id) + " is not in this graph");
}

Var Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

Var Graph::accumulate(Var acc, Var g) { return acc.valid() ? add(acc, g) : g; }

// ---------------------------------------------------------------------------
// elementwise / scalar
// ---------------------------------------------------------------------------

Var Graph::add(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    require(ta.same_shape(tb), "add: shape mismatch " + shape_str(ta.shape()) + " vs " + shape_str(tb.shape()));
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    Tensor out(ta.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] + tb[i];
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    require(ta.same_shape(tb), "sub: shape mismatch " + shape_str(ta.shape()) + " vs " + shape_str(tb.shape()));
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    Tensor out(ta.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] - tb[i];
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    require(ta.same_shape(tb), "mul: shape mismatch " + shape_str(ta.shape()) + " vs " + shape_str(tb.shape()));
    Node n;
    n.op = Op::Mul;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    Tensor out(ta.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * tb[i];
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::neg(Var x) {
    const Tensor& t = value(x);
    Node n;
    n.op = Op::Neg;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = -t[i];
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::scale(Var x, double c) {
    const Tensor& t = value(x);
    Node n;
    n.op = Op::ScaleC;
    n.a = x.id;
    n.cval = c;
    n.requires_grad = node(x).requires_grad;
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = c * t[i];
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::offset(Var x, double c) {
    const Tensor& t = value(x);
    Node n;
    n.op = Op::OffsetC;
    n.a = x.id;
    n.cval = c;
    n.requires_grad = node(x).requires_grad;
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = t[i] + c;
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::bmul(Var x, Var s) {
    const Tensor &tx = value(x), &ts = value(s);
    require(ts.rank() == 0, "bmul: scale operand must be rank-0, got " + shape_str(ts.shape()));
    Node n;
    n.op = Op::BMulS;
    n.a = x.id;
    n.b = s.id;
    n.requires_grad = node(x).requires_grad || node(s).requires_grad;
    double sv = ts.item();
    Tensor out(tx.shape());
    for (std::int64_t i = 0; i < tx.numel(); ++i) out[i] = tx[i] * sv;
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::badd(Var x, Var s) {
    const Tensor &tx = value(x), &ts = value(s);
    require(ts.rank() == 0, "badd: offset operand must be rank-0, got " + shape_str(ts.shape()));
    Node n;
    n.op = Op::BAddS;
    n.a = x.id;
    n.b = s.id;
    n.requires_grad = node(x).requires_grad || node(s).requires_grad;
    double sv = ts.item();
    Tensor out(tx.shape());
    for (std::int64_t i = 0; i < tx.numel(); ++i) out[i] = tx[i] + sv;
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::recip(Var x) {
    const Tensor& t = value(x);
    Node n;
    n.op = Op::Recip;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = 1.0 / t[i];
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::log_e(Var x) {
    const Tensor& t = value(x);
    Node n;
    n.op = Op::LogE;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = std::log(t[i]);
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::relu(Var x) {
    const Tensor& t = value(x);
    Node n;
    n.op = Op::Relu;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = t[i] > 0.0 ? t[i] : 0.0;
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::clamp_min(Var x, double c) {
    const Tensor& t = value(x);
    Node n;
    n.op = Op::ClampMinC;
    n.a = x.id;
    n.cval = c;
    n.requires_grad = node(x).requires_grad;
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = t[i] > c ? t[i] : c;
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::sum_all(Var x) {
    const Tensor& t = value(x);
    Node n;
    n.op = Op::SumAll;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    n.value = Tensor::scalar(t.sum());
    return push(std::move(n));
}

Var Graph::mean_all(Var x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(value(x).numel()));
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var Graph::matvec(Var w, Var x) {
    const Tensor &tw = value(w), &tx = value(x);
    require(tw.rank() == 2 && tx.rank() == 1 && tw.shape()[1] == tx.shape()[0],
            "matvec: need [m,n]*[n], got " + shape_str(tw.shape()) + " and " + shape_str(tx.shape()));
    Node n;
    n.op = Op::MatVec;
    n.a = w.id;
    n.b = x.id;
    n.requires_grad = node(w).requires_grad || node(x).requires_grad;
    const std::int64_t m = tw.shape()[0], k = tw.shape()[1];
    Tensor out(Shape{m});
    for (std::int64_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* row = tw.data() + i * k;
        for (std::int64_t j = 0; j < k; ++j) acc += row[j] * tx[j];
        out[i] = acc;
    }
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::matvec_t(Var w, Var u) {
    const Tensor &tw = value(w), &tu = value(u);
    require(tw.rank() == 2 && tu.rank() == 1 && tw.shape()[0] == tu.shape()[0],
            "matvec_t: need [m,n]^T*[m], got " + shape_str(tw.shape()) + " and " + shape_str(tu.shape()));
    Node n;
    n.op = Op::MatVecT;
    n.a = w.id;
    n.b = u.id;
    n.requires_grad = node(w).requires_grad || node(u).requires_grad;
    const std::int64_t m = tw.shape()[0], k = tw.shape()[1];
    Tensor out(Shape{k});
    for (std::int64_t i = 0; i < m; ++i) {
        const double* row = tw.data() + i * k;
        const double uv = tu[i];
        for (std::int64_t j = 0; j < k; ++j) out[j] += uv * row[j];
    }
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::outer(Var u, Var v) {
    const Tensor &tu = value(u), &tv = value(v);
    require(tu.rank() == 1 && tv.rank() == 1,
            "outer: need two vectors, got " + shape_str(tu.shape()) + " and " + shape_str(tv.shape()));
    Node n;
    n.op = Op::Outer;
    n.a = u.id;
    n.b = v.id;
    n.requires_grad = node(u).requires_grad || node(v).requires_grad;
    const std::int64_t m = tu.shape()[0], k = tv.shape()[0];
    Tensor out(Shape{m, k});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < k; ++j) out[i * k + j] = tu[i] * tv[j];
    n.value = std::move(out);
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// convolution family
// ---------------------------------------------------------------------------

Var Graph::conv3d(Var x, Var w, int stride, int pad) {
    const Tensor &tx = value(x), &tw = value(w);
    Shape os = detail::conv3d_out_shape(tx.shape(), tw.shape(), stride, pad);
    Node n;
    n.op = Op::Conv3d;
    n.a = x.id;
    n.b = w.id;
    n.stride = stride;
    n.pad = pad;
    n.requires_grad = node(x).requires_grad || node(w).requires_grad;
    Tensor out(os);
    detail::conv3d_forward(tx, tw, out, stride, pad);
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::conv3d_vjp_input(Var g, Var w, const Shape& input_shape, int stride, int pad) {
    const Tensor &tg = value(g), &tw = value(w);
    Shape expect = detail::conv3d_out_shape(input_shape, tw.shape(), stride, pad);
    require(tg.shape() == expect, "conv3d_vjp_input: cotangent shape " + shape_str(tg.shape()) +
                                      " does not match conv output " + shape_str(expect));
    Node n;
    n.op = Op::Conv3dVjpInput;
    n.a = g.id;
    n.b = w.id;
    n.stride = stride;
    n.pad = pad;
    n.requires_grad = node(g).requires_grad || node(w).requires_grad;
    Tensor out(input_shape);
    detail::conv3d_dx(tg, tw, out, stride, pad);
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::conv3d_vjp_weight(Var x, Var g, const Shape& weight_shape, int stride, int pad) {
    const Tensor &tx = value(x), &tg = value(g);
    Shape expect = detail::conv3d_out_shape(tx.shape(), weight_shape, stride, pad);
    require(tg.shape() == expect, "conv3d_vjp_weight: cotangent shape " + shape_str(tg.shape()) +
                                      " does not match conv output " + shape_str(expect));
    Node n;
    n.op = Op::Conv3dVjpWeight;
    n.a = x.id;
    n.b = g.id;
    n.stride = stride;
    n.pad = pad;
    n.requires_grad = node(x).requires_grad || node(g).requires_grad;
    Tensor out(weight_shape);
    detail::conv3d_dw(tx, tg, out, stride, pad);
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::add_chan_bias(Var y, Var b) {
    const Tensor &ty = value(y), &tb = value(b);
    require(ty.rank() >= 2 && tb.rank() == 1 && tb.shape()[0] == ty.shape()[0],
            "add_chan_bias: need [C,...] and [C], got " + shape_str(ty.shape()) + " and " + shape_str(tb.shape()));
    Node n;
    n.op = Op::AddChanBias;
    n.a = y.id;
    n.b = b.id;
    n.requires_grad = node(y).requires_grad || node(b).requires_grad;
    const std::int64_t C = ty.shape()[0], S = ty.numel() / C;
    Tensor out(ty.shape());
    for (std::int64_t c = 0; c < C; ++c) {
        const double bv = tb[c];
        for (std::int64_t s = 0; s < S; ++s) out[c * S + s] = ty[c * S + s] + bv;
    }
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::chan_sum(Var x) {
    const Tensor& t = value(x);
    require(t.rank() >= 2, "chan_sum: need [C,...], got " + shape_str(t.shape()));
    Node n;
    n.op = Op::ChanSum;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    const std::int64_t C = t.shape()[0], S = t.numel() / C;
    Tensor out(Shape{C});
    for (std::int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::int64_t s = 0; s < S; ++s) acc += t[c * S + s];
        out[c] = acc;
    }
    n.value = std::move(out);
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// pooling / shaping
// ---------------------------------------------------------------------------

Var Graph::avgpool2(Var x) {
    const Tensor& t = value(x);
    require(t.rank() == 4, "avgpool2: need [C,H,W,D], got " + shape_str(t.shape()));
    require(t.shape()[1] % 2 == 0 && t.shape()[2] % 2 == 0 && t.shape()[3] % 2 == 0,
            "avgpool2: spatial extents must be even, got " + shape_str(t.shape()));
    const std::int64_t C = t.shape()[0], H = t.shape()[1], W = t.shape()[2], D = t.shape()[3];
    Node n;
    n.op = Op::AvgPool2;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    Tensor out(Shape{C, H / 2, W / 2, D / 2});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t ox = 0; ox < H / 2; ++ox)
            for (std::int64_t oy = 0; oy < W / 2; ++oy)
                for (std::int64_t oz = 0; oz < D / 2; ++oz) {
                    double acc = 0.0;
                    for (int dx = 0; dx < 2; ++dx)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dz = 0; dz < 2; ++dz)
                                acc += t[t.at4(c, 2 * ox + dx, 2 * oy + dy, 2 * oz + dz)];
                    out[out.at4(c, ox, oy, oz)] = acc / 8.0;
                }
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::avgunpool2(Var g, const Shape& target) {
    const Tensor& t = value(g);
    require(t.rank() == 4 && target.size() == 4, "avgunpool2: need rank-4 shapes");
    require(target[0] == t.shape()[0] && target[1] == 2 * t.shape()[1] && target[2] == 2 * t.shape()[2] &&
                target[3] == 2 * t.shape()[3],
            "avgunpool2: target " + shape_str(target) + " is not 2x of " + shape_str(t.shape()));
    Node n;
    n.op = Op::AvgUnpool2;
    n.a = g.id;
    n.requires_grad = node(g).requires_grad;
    const std::int64_t C = target[0], H = target[1], W = target[2], D = target[3];
    Tensor out(target);
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t x = 0; x < H; ++x)
            for (std::int64_t y = 0; y < W; ++y)
                for (std::int64_t z = 0; z < D; ++z)
                    out[out.at4(c, x, y, z)] = t[t.at4(c, x / 2, y / 2, z / 2)] / 8.0;
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::maxpool2(Var x) {
    const Tensor& t = value(x);
    require(t.rank() == 4, "maxpool2: need [C,H,W,D], got " + shape_str(t.shape()));
    require(t.shape()[1] % 2 == 0 && t.shape()[2] % 2 == 0 && t.shape()[3] % 2 == 0,
            "maxpool2: spatial extents must be even, got " + shape_str(t.shape()));
    const std::int64_t C = t.shape()[0], H = t.shape()[1], W = t.shape()[2], D = t.shape()[3];
    Node n;
    n.op = Op::MaxPool2;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    Tensor out(Shape{C, H / 2, W / 2, D / 2});
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
    std::int64_t o = 0;
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t ox = 0; ox < H / 2; ++ox)
            for (std::int64_t oy = 0; oy < W / 2; ++oy)
                for (std::int64_t oz = 0; oz < D / 2; ++oz, ++o) {
                    double best = -1e308;
                    std::int64_t best_i = -1;
                    // first-encountered maximum keeps the gradient on ties
                    for (int dx = 0; dx < 2; ++dx)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dz = 0; dz < 2; ++dz) {
                                std::int64_t i = t.at4(c, 2 * ox + dx, 2 * oy + dy, 2 * oz + dz);
                                if (t[i] > best) {
                                    best = t[i];
                                    best_i = i;
                                }
                            }
                    out[o] = best;
                    (*idx)[static_cast<std::size_t>(o)] = best_i;
                }
    n.value = std::move(out);
    n.pool_index = std::move(idx);
    return push(std::move(n));
}

Var Graph::concat1d(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    require(ta.rank() == 1 && tb.rank() == 1, "concat1d: need two vectors");
    Node n;
    n.op = Op::Concat1d;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    Tensor out(Shape{ta.numel() + tb.numel()});
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i];
    for (std::int64_t i = 0; i < tb.numel(); ++i) out[ta.numel() + i] = tb[i];
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::slice1d(Var x, std::int64_t lo, std::int64_t hi) {
    const Tensor& t = value(x);
    require(t.rank() == 1 && 0 <= lo && lo < hi && hi <= t.numel(),
            "slice1d: bad range [" + std::to_string(lo) + "," + std::to_string(hi) + ") for " + shape_str(t.shape()));
    Node n;
    n.op = Op::Slice1d;
    n.a = x.id;
    n.index = lo;
    n.requires_grad = node(x).requires_grad;
    Tensor out(Shape{hi - lo});
    for (std::int64_t i = lo; i < hi; ++i) out[i - lo] = t[i];
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::pad_embed1d(Var x, std::int64_t lo, std::int64_t total) {
    const Tensor& t = value(x);
    require(t.rank() == 1 && lo >= 0 && lo + t.numel() <= total, "pad_embed1d: slice does not fit");
    Node n;
    n.op = Op::PadEmbed1d;
    n.a = x.id;
    n.index = lo;
    n.requires_grad = node(x).requires_grad;
    Tensor out(Shape{total});
    for (std::int64_t i = 0; i < t.numel(); ++i) out[lo + i] = t[i];
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::reshape(Var x, Shape target) {
    const Tensor& t = value(x);
    require(shape_numel(target) == t.numel(),
            "reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(target));
    Node n;
    n.op = Op::Reshape;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    n.value = Tensor(std::move(target), t.vec());
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// reductions / channel ops
// ---------------------------------------------------------------------------

Var Graph::softmax1d(Var x) {
    const Tensor& t = value(x);
    require(t.rank() == 1 && t.numel() >= 1, "softmax1d: need a nonempty vector, got " + shape_str(t.shape()));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        require(std::isfinite(t[i]), "softmax1d: non-finite input");
    Node n;
    n.op = Op::Softmax1d;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    Tensor out(t.shape());
    double mx = t.max_value();  // shift for overflow safety
    double z = 0.0;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        out[i] = std::exp(t[i] - mx);
        z += out[i];
    }
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] /= z;
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::chan_spatial_mean(Var x) {
    const Tensor& t = value(x);
    require(t.rank() >= 2, "chan_spatial_mean: need [C,...], got " + shape_str(t.shape()));
    Node n;
    n.op = Op::ChanSpatialMean;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    const std::int64_t C = t.shape()[0], S = t.numel() / C;
    Tensor out(Shape{C});
    for (std::int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::int64_t s = 0; s < S; ++s) acc += t[c * S + s];
        out[c] = acc / static_cast<double>(S);
    }
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::chan_spread_mean(Var g, const Shape& target) {
    const Tensor& t = value(g);
    require(t.rank() == 1 && target.size() >= 2 && target[0] == t.shape()[0],
            "chan_spread_mean: target " + shape_str(target) + " incompatible with " + shape_str(t.shape()));
    Node n;
    n.op = Op::ChanSpreadMean;
    n.a = g.id;
    n.requires_grad = node(g).requires_grad;
    const std::int64_t C = target[0];
    Tensor out(target);
    const std::int64_t S = out.numel() / C;
    for (std::int64_t c = 0; c < C; ++c) {
        const double v = t[c] / static_cast<double>(S);
        for (std::int64_t s = 0; s < S; ++s) out[c * S + s] = v;
    }
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::chan_weighted_sum(Var x, Var a) {
    const Tensor &tx = value(x), &ta = value(a);
    require(tx.rank() >= 2 && ta.rank() == 1 && ta.shape()[0] == tx.shape()[0],
            "chan_weighted_sum: need [C,...] and [C], got " + shape_str(tx.shape()) + " and " + shape_str(ta.shape()));
    Node n;
    n.op = Op::ChanWeightedSum;
    n.a = x.id;
    n.b = a.id;
    n.requires_grad = node(x).requires_grad || node(a).requires_grad;
    const std::int64_t C = tx.shape()[0], S = tx.numel() / C;
    Tensor out(spatial_of(tx.shape()));
    for (std::int64_t c = 0; c < C; ++c) {
        const double av = ta[c];
        for (std::int64_t s = 0; s < S; ++s) out[s] += av * tx[c * S + s];
    }
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::chan_outer(Var y, Var a) {
    const Tensor &ty = value(y), &ta = value(a);
    require(ta.rank() == 1, "chan_outer: weights must be a vector");
    Node n;
    n.op = Op::ChanOuter;
    n.a = y.id;
    n.b = a.id;
    n.requires_grad = node(y).requires_grad || node(a).requires_grad;
    const std::int64_t C = ta.shape()[0], S = ty.numel();
    Shape os;
    os.push_back(C);
    for (auto e : ty.shape()) os.push_back(e);
    Tensor out(os);
    for (std::int64_t c = 0; c < C; ++c) {
        const double av = ta[c];
        for (std::int64_t s = 0; s < S; ++s) out[c * S + s] = av * ty[s];
    }
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::chan_dot(Var x, Var y) {
    const Tensor &tx = value(x), &ty = value(y);
    require(tx.rank() >= 2 && tx.numel() / tx.shape()[0] == ty.numel(),
            "chan_dot: spatial sizes differ, " + shape_str(tx.shape()) + " vs " + shape_str(ty.shape()));
    Node n;
    n.op = Op::ChanDot;
    n.a = x.id;
    n.b = y.id;
    n.requires_grad = node(x).requires_grad || node(y).requires_grad;
    const std::int64_t C = tx.shape()[0], S = ty.numel();
    Tensor out(Shape{C});
    for (std::int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::int64_t s = 0; s < S; ++s) acc += tx[c * S + s] * ty[s];
        out[c] = acc;
    }
    n.value = std::move(out);
    return push(std::move(n));
}

Var Graph::min_all(Var x) {
    const Tensor& t = value(x);
    Node n;
    n.op = Op::MinAll;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    n.value = Tensor::scalar(t.min_value());
    return push(std::move(n));
}

Var Graph::max_all(Var x) {
    const Tensor& t = value(x);
    Node n;
    n.op = Op::MaxAll;
    n.a = x.id;
    n.requires_grad = node(x).requires_grad;
    n.value = Tensor::scalar(t.max_value());
    return push(std::move(n));
}

Var Graph::gather_at(Var x, std::int64_t flat_index) {
    const Tensor& t = value(x);
    require(flat_index >= 0 && flat_index < t.numel(), "gather_at: index out of range");
    Node n;
    n.op = Op::GatherAt;
    n.a = x.id;
    n.index = flat_index;
    n.requires_grad = node(x).requires_grad;
    n.value = Tensor::scalar(t[flat_index]);
    return push(std::move(n));
}

Var Graph::scatter_at(Var s, const Shape& target, std::int64_t flat_index) {
    const Tensor& t = value(s);
    require(t.rank() == 0, "scatter_at: source must be rank-0");
    Node n;
    n.op = Op::ScatterAt;
    n.a = s.id;
    n.index = flat_index;
    n.requires_grad = node(s).requires_grad;
    Tensor out(target);
    require(flat_index >= 0 && flat_index < out.numel(), "scatter_at: index out of range");
    out[flat_index] = t.item();
    n.value = std::move(out);
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// reverse-mode sweep
// ---------------------------------------------------------------------------

namespace {

std::int64_t arg_min_first(const Tensor& t) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < t.numel(); ++i)
        if (t[i] < t[best]) best = i;
    return best;
}

std::int64_t arg_max_first(const Tensor& t) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < t.numel(); ++i)
        if (t[i] > t[best]) best = i;
    return best;
}

}  // namespace

std::vector<Var> Graph::backward(Var scalar, std::span<const Var> wrt, bool create_graph) {
    check(scalar);
    require(value(scalar).rank() == 0, "backward: scalar must be rank-0, got " + shape_str(shape(scalar)));
    for (Var v : wrt) {
        check(v);
        require(node(v).requires_grad, "backward: wrt node " + std::to_string(v.id) + " does not require grad");
    }

    const std::size_t n0 = nodes_.size();  // nodes appended during the sweep are gradient nodes
    std::vector<bool> reach(n0, false);    // subgraph contains a wrt node
    for (Var v : wrt) reach[static_cast<std::size_t>(v.id)] = true;
    for (std::size_t i = 0; i < n0; ++i) {
        if (reach[i]) continue;
        const Node& nd = nodes_[i];
        if ((nd.a >= 0 && reach[static_cast<std::size_t>(nd.a)]) ||
            (nd.b >= 0 && reach[static_cast<std::size_t>(nd.b)]))
            reach[i] = true;
    }

    std::vector<bool> anc(n0, false);  // reachable from scalar via parent edges
    {
        std::vector<std::int32_t> stack{scalar.id};
        anc[static_cast<std::size_t>(scalar.id)] = true;
        while (!stack.empty()) {
            const Node& nd = nodes_[static_cast<std::size_t>(stack.back())];
            stack.pop_back();
            for (std::int32_t p : {nd.a, nd.b}) {
                if (p >= 0 && !anc[static_cast<std::size_t>(p)]) {
                    anc[static_cast<std::size_t>(p)] = true;
                    stack.push_back(p);
                }
            }
        }
    }

    std::vector<Var> grad(n0);
    grad[static_cast<std::size_t>(scalar.id)] = constant_scalar(1.0);

    auto want = [&](std::int32_t p) {
        return p >= 0 && reach[static_cast<std::size_t>(p)] &&
               nodes_[static_cast<std::size_t>(p)].requires_grad;
    };
    auto add_to = [&](std::int32_t p, Var g) {
        auto& slot = grad[static_cast<std::size_t>(p)];
        slot = accumulate(slot, g);
    };

    for (std::int32_t i = scalar.id; i >= 0; --i) {
        const std::size_t ui = static_cast<std::size_t>(i);
        if (!anc[ui] || !grad[ui].valid()) continue;
        // snapshot: emission below appends nodes and may reallocate nodes_
        const Op op = nodes_[ui].op;
        const Var a{nodes_[ui].a}, b{nodes_[ui].b};
        const double cval = nodes_[ui].cval;
        const std::int64_t index = nodes_[ui].index;
        const int stride = nodes_[ui].stride, pad = nodes_[ui].pad;
        auto pool_index = nodes_[ui].pool_index;
        const Var self{i};
        const Var G = grad[ui];
        const bool wa = want(a.id), wb = want(b.id);
        if (!wa && !wb) continue;

        switch (op) {
            case Op::Leaf:
                break;
            case Op::Add:
                if (wa) add_to(a.id, G);
                if (wb) add_to(b.id, G);
                break;
            case Op::Sub:
                if (wa) add_to(a.id, G);
                if (wb) add_to(b.id, neg(G));
                break;
            case Op::Mul:
                if (wa) add_to(a.id, mul(G, b));
                if (wb) add_to(b.id, mul(G, a));
                break;
            case Op::Neg:
                if (wa) add_to(a.id, neg(G));
                break;
            case Op::ScaleC:
                if (wa) add_to(a.id, scale(G, cval));
                break;
            case Op::OffsetC:
                if (wa) add_to(a.id, G);
                break;
            case Op::BMulS:
                if (wa) add_to(a.id, bmul(G, b));
                if (wb) add_to(b.id, sum_all(mul(G, a)));
                break;
            case Op::BAddS:
                if (wa) add_to(a.id, G);
                if (wb) add_to(b.id, sum_all(G));
                break;
            case Op::Recip:
                if (wa) add_to(a.id, neg(mul(G, mul(self, self))));
                break;
            case Op::LogE:
                if (wa) add_to(a.id, mul(G, recip(a)));
                break;
            case Op::Relu: {
                if (wa) {
                    const Tensor& xin = value(a);
                    Tensor mask(xin.shape());
                    for (std::int64_t j = 0; j < xin.numel(); ++j) mask[j] = xin[j] > 0.0 ? 1.0 : 0.0;
                    add_to(a.id, mul(G, constant(std::move(mask))));
                }
                break;
            }
            case Op::ClampMinC: {
                if (wa) {
                    const Tensor& xin = value(a);
                    Tensor mask(xin.shape());
                    for (std::int64_t j = 0; j < xin.numel(); ++j) mask[j] = xin[j] > cval ? 1.0 : 0.0;
                    add_to(a.id, mul(G, constant(std::move(mask))));
                }
                break;
            }
            case Op::SumAll:
                if (wa) add_to(a.id, bmul(constant(Tensor::full(shape(a), 1.0)), G));
                break;
            case Op::MatVec:
                if (wa) add_to(a.id, outer(G, b));
                if (wb) add_to(b.id, matvec_t(a, G));
                break;
            case Op::MatVecT:
                if (wa) add_to(a.id, outer(b, G));
                if (wb) add_to(b.id, matvec(a, G));
                break;
            case Op::Outer:
                if (wa) add_to(a.id, matvec(G, b));
                if (wb) add_to(b.id, matvec_t(G, a));
                break;
            case Op::Conv3d:
                if (wa) add_to(a.id, conv3d_vjp_input(G, b, shape(a), stride, pad));
                if (wb) add_to(b.id, conv3d_vjp_weight(a, G, shape(b), stride, pad));
                break;
            case Op::Conv3dVjpInput:
                // self = adjoint_x(g, w); d/dg is the forward map, d/dw mirrors the weight grad
                if (wa) add_to(a.id, conv3d(G, b, stride, pad));
                if (wb) add_to(b.id, conv3d_vjp_weight(G, a, shape(b), stride, pad));
                break;
            case Op::Conv3dVjpWeight:
                if (wa) add_to(a.id, conv3d_vjp_input(b, G, shape(a), stride, pad));
                if (wb) add_to(b.id, conv3d(a, G, stride, pad));
                break;
            case Op::AddChanBias:
                if (wa) add_to(a.id, G);
                if (wb) add_to(b.id, chan_sum(G));
                break;
            case Op::ChanSum:
                if (wa) add_to(a.id, chan_outer(constant(Tensor::full(spatial_of(shape(a)), 1.0)), G));
                break;
            case Op::AvgPool2:
                if (wa) add_to(a.id, avgunpool2(G, shape(a)));
                break;
            case Op::AvgUnpool2:
                if (wa) add_to(a.id, avgpool2(G));
                break;
            case Op::MaxPool2: {
                if (wa) {
                    Node sc;
                    sc.op = Op::ScatterPool;
                    sc.a = G.id;
                    sc.requires_grad = node(G).requires_grad;
                    sc.pool_index = pool_index;
                    Tensor out(shape(a));
                    const Tensor& gt = value(G);
                    for (std::int64_t j = 0; j < gt.numel(); ++j)
                        out[(*pool_index)[static_cast<std::size_t>(j)]] += gt[j];
                    sc.value = std::move(out);
                    add_to(a.id, push(std::move(sc)));
                }
                break;
            }
            case Op::ScatterPool: {
                if (wa) {
                    Node ga;
                    ga.op = Op::GatherPool;
                    ga.a = G.id;
                    ga.requires_grad = node(G).requires_grad;
                    ga.pool_index = pool_index;
                    Tensor out(shape(a));
                    const Tensor& gt = value(G);
                    for (std::int64_t j = 0; j < out.numel(); ++j)
                        out[j] = gt[(*pool_index)[static_cast<std::size_t>(j)]];
                    ga.value = std::move(out);
                    add_to(a.id, push(std::move(ga)));
                }
                break;
            }
            case Op::GatherPool: {
                if (wa) {
                    Node sc;
                    sc.op = Op::ScatterPool;
                    sc.a = G.id;
                    sc.requires_grad = node(G).requires_grad;
                    sc.pool_index = pool_index;
                    Tensor out(shape(a));
                    const Tensor& gt = value(G);
                    for (std::int64_t j = 0; j < gt.numel(); ++j)
                        out[(*pool_index)[static_cast<std::size_t>(j)]] += gt[j];
                    sc.value = std::move(out);
                    add_to(a.id, push(std::move(sc)));
                }
                break;
            }
            case Op::Concat1d: {
                const std::int64_t na = value(a).numel();
                if (wa) add_to(a.id, slice1d(G, 0, na));
                if (wb) add_to(b.id, slice1d(G, na, na + value(b).numel()));
                break;
            }
            case Op::Slice1d:
                if (wa) add_to(a.id, pad_embed1d(G, index, value(a).numel()));
                break;
            case Op::PadEmbed1d:
                if (wa) add_to(a.id, slice1d(G, index, index + value(a).numel()));
                break;
            case Op::Reshape:
                if (wa) add_to(a.id, reshape(G, shape(a)));
                break;
            case Op::Softmax1d: {
                if (wa) {
                    Var t = sum_all(mul(G, self));
                    add_to(a.id, mul(self, badd(G, neg(t))));
                }
                break;
            }
            case Op::ChanSpatialMean:
                if (wa) add_to(a.id, chan_spread_mean(G, shape(a)));
                break;
            case Op::ChanSpreadMean:
                if (wa) add_to(a.id, chan_spatial_mean(G));
                break;
            case Op::ChanWeightedSum:
                if (wa) add_to(a.id, chan_outer(G, b));
                if (wb) add_to(b.id, chan_dot(a, G));
                break;
            case Op::ChanOuter:
                if (wa) add_to(a.id, chan_weighted_sum(G, b));
                if (wb) add_to(b.id, chan_dot(G, a));
                break;
            case Op::ChanDot:
                if (wa) add_to(a.id, chan_outer(b, G));
                if (wb) add_to(b.id, chan_weighted_sum(a, G));
                break;
            case Op::MinAll:
                if (wa) add_to(a.id, scatter_at(G, shape(a), arg_min_first(value(a))));
                break;
            case Op::MaxAll:
                if (wa) add_to(a.id, scatter_at(G, shape(a), arg_max_first(value(a))));
                break;
            case Op::GatherAt:
                if (wa) add_to(a.id, scatter_at(G, shape(a), index));
                break;
            case Op::ScatterAt:
                if (wa) add_to(a.id, gather_at(G, index));
                break;
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (Var v : wrt) {
        Var g = grad[static_cast<std::size_t>(v.id)];
        if (!g.valid())
            out.push_back(constant(Tensor::zeros(shape(v))));
        else if (create_graph)
            out.push_back(g);
        else
            out.push_back(constant(value(g)));  // detached copy, same values
    }
    return out;
}

Var dense(Graph& g, Var x, Var w, Var b) {
    const Tensor &tw = g.value(w), &tx = g.value(x), &tb = g.value(b);
    require(tw.rank() == 2 && tx.rank() == 1 && tb.rank() == 1, "dense: need w[m,n], x[n], b[m]");
    require(tw.shape()[1] == tx.shape()[0],
            "dense: weight columns " + std::to_string(tw.shape()[1]) + " != input length " + std::to_string(tx.shape()[0]));
    require(tw.shape()[0] == tb.shape()[0],
            "dense: weight rows " + std::to_string(tw.shape()[0]) + " != bias length " + std::to_string(tb.shape()[0]));
    return g.add(g.matvec(w, x), b);
}

}  // namespace ditl

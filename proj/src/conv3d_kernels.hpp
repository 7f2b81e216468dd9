#pragma once

#include "ditl/tensor.hpp"

namespace ditl::detail {

// 3-D cross-correlation kernels, layout [C][H][W][D] with D contiguous.
// y[co,o] = sum_{ci,k} w[co,ci,k] * x[ci, o*s - p + k]
void conv3d_forward(const Tensor& x, const Tensor& w, Tensor& y, int stride, int pad);
// dx = adjoint of the map x -> conv3d(x, w) applied to g
void conv3d_dx(const Tensor& g, const Tensor& w, Tensor& dx, int stride, int pad);
// dw[co,ci,k] = sum_o g[co,o] * x[ci, o*s - p + k]
void conv3d_dw(const Tensor& x, const Tensor& g, Tensor& dw, int stride, int pad);

Shape conv3d_out_shape(const Shape& x, const Shape& w, int stride, int pad);

}  // namespace ditl::detail

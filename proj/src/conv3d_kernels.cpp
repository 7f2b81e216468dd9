#include "conv3d_kernels.hpp"

#include <algorithm>
#include <stdexcept>

namespace ditl::detail {

namespace {

std::int64_t out_extent(std::int64_t in, std::int64_t k, int stride, int pad) {
    std::int64_t span = in + 2 * pad - k;
    if (span < 0 || span % stride != 0)
        throw std::invalid_argument("conv3d: extent " + std::to_string(in) + " with k=" + std::to_string(k) +
                                    " stride=" + std::to_string(stride) + " pad=" + std::to_string(pad) +
                                    " does not divide evenly");
    return span / stride + 1;
}

}  // namespace

Shape conv3d_out_shape(const Shape& xs, const Shape& ws, int stride, int pad) {
    if (xs.size() != 4 || ws.size() != 5)
        throw std::invalid_argument("conv3d: need x rank 4 and w rank 5, got " + shape_str(xs) + " and " + shape_str(ws));
    if (ws[2] != ws[3] || ws[3] != ws[4] || ws[2] % 2 == 0)
        throw std::invalid_argument("conv3d: kernel must be cubic with odd extent, got " + shape_str(ws));
    if (xs[0] != ws[1])
        throw std::invalid_argument("conv3d: input channels " + std::to_string(xs[0]) +
                                    " != kernel channels " + std::to_string(ws[1]));
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv3d: stride must be >= 1 and pad >= 0");
    std::int64_t k = ws[2];
    return Shape{ws[0], out_extent(xs[1], k, stride, pad), out_extent(xs[2], k, stride, pad),
                 out_extent(xs[3], k, stride, pad)};
}

// --- stride-1 fast paths: per kernel tap, one pass over the valid output box
// with a contiguous innermost axis ---

static void forward_s1(const Tensor& x, const Tensor& w, Tensor& y, int p) {
    const std::int64_t Ci = x.shape()[0], H = x.shape()[1], W = x.shape()[2], D = x.shape()[3];
    const std::int64_t Co = y.shape()[0], Ho = y.shape()[1], Wo = y.shape()[2], Do = y.shape()[3];
    const std::int64_t k = w.shape()[2];
    const double* xd = x.data();
    const double* wd = w.data();
    double* yd = y.data();
    std::fill(yd, yd + y.numel(), 0.0);
    for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t ci = 0; ci < Ci; ++ci)
            for (std::int64_t kx = 0; kx < k; ++kx) {
                std::int64_t ox_lo = std::max<std::int64_t>(0, p - kx), ox_hi = std::min(Ho, H + p - kx);
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    std::int64_t oy_lo = std::max<std::int64_t>(0, p - ky), oy_hi = std::min(Wo, W + p - ky);
                    for (std::int64_t kz = 0; kz < k; ++kz) {
                        std::int64_t oz_lo = std::max<std::int64_t>(0, p - kz), oz_hi = std::min(Do, D + p - kz);
                        if (ox_lo >= ox_hi || oy_lo >= oy_hi || oz_lo >= oz_hi) continue;
                        const double wv = wd[(((co * Ci + ci) * k + kx) * k + ky) * k + kz];
                        const std::int64_t len = oz_hi - oz_lo;
                        for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) {
                            const std::int64_t ix = ox - p + kx;
                            for (std::int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                                const std::int64_t iy = oy - p + ky;
                                const double* xs = xd + ((ci * H + ix) * W + iy) * D + (oz_lo - p + kz);
                                double* ys = yd + ((co * Ho + ox) * Wo + oy) * Do + oz_lo;
                                for (std::int64_t t = 0; t < len; ++t) ys[t] += wv * xs[t];
                            }
                        }
                    }
                }
            }
}

static void dx_s1(const Tensor& g, const Tensor& w, Tensor& dx, int p) {
    const std::int64_t Ci = dx.shape()[0], H = dx.shape()[1], W = dx.shape()[2], D = dx.shape()[3];
    const std::int64_t Co = g.shape()[0], Ho = g.shape()[1], Wo = g.shape()[2], Do = g.shape()[3];
    const std::int64_t k = w.shape()[2];
    const double* gd = g.data();
    const double* wd = w.data();
    double* xd = dx.data();
    std::fill(xd, xd + dx.numel(), 0.0);
    // ix = ox - p + kx  =>  valid ix in [kx - p, Ho + kx - p) clipped to [0, H)
    for (std::int64_t ci = 0; ci < Ci; ++ci)
        for (std::int64_t co = 0; co < Co; ++co)
            for (std::int64_t kx = 0; kx < k; ++kx) {
                std::int64_t ix_lo = std::max<std::int64_t>(0, kx - p), ix_hi = std::min(H, Ho + kx - p);
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    std::int64_t iy_lo = std::max<std::int64_t>(0, ky - p), iy_hi = std::min(W, Wo + ky - p);
                    for (std::int64_t kz = 0; kz < k; ++kz) {
                        std::int64_t iz_lo = std::max<std::int64_t>(0, kz - p), iz_hi = std::min(D, Do + kz - p);
                        if (ix_lo >= ix_hi || iy_lo >= iy_hi || iz_lo >= iz_hi) continue;
                        const double wv = wd[(((co * Ci + ci) * k + kx) * k + ky) * k + kz];
                        const std::int64_t len = iz_hi - iz_lo;
                        for (std::int64_t ix = ix_lo; ix < ix_hi; ++ix) {
                            const std::int64_t ox = ix + p - kx;
                            for (std::int64_t iy = iy_lo; iy < iy_hi; ++iy) {
                                const std::int64_t oy = iy + p - ky;
                                const double* gs = gd + ((co * Ho + ox) * Wo + oy) * Do + (iz_lo + p - kz);
                                double* xs = xd + ((ci * H + ix) * W + iy) * D + iz_lo;
                                for (std::int64_t t = 0; t < len; ++t) xs[t] += wv * gs[t];
                            }
                        }
                    }
                }
            }
}

static void dw_s1(const Tensor& x, const Tensor& g, Tensor& dw, int p) {
    const std::int64_t Ci = x.shape()[0], H = x.shape()[1], W = x.shape()[2], D = x.shape()[3];
    const std::int64_t Co = g.shape()[0], Ho = g.shape()[1], Wo = g.shape()[2], Do = g.shape()[3];
    const std::int64_t k = dw.shape()[2];
    const double* xd = x.data();
    const double* gd = g.data();
    double* wd = dw.data();
    for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t ci = 0; ci < Ci; ++ci)
            for (std::int64_t kx = 0; kx < k; ++kx) {
                std::int64_t ox_lo = std::max<std::int64_t>(0, p - kx), ox_hi = std::min(Ho, H + p - kx);
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    std::int64_t oy_lo = std::max<std::int64_t>(0, p - ky), oy_hi = std::min(Wo, W + p - ky);
                    for (std::int64_t kz = 0; kz < k; ++kz) {
                        std::int64_t oz_lo = std::max<std::int64_t>(0, p - kz), oz_hi = std::min(Do, D + p - kz);
                        double acc = 0.0;
                        if (ox_lo < ox_hi && oy_lo < oy_hi && oz_lo < oz_hi) {
                            const std::int64_t len = oz_hi - oz_lo;
                            for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) {
                                const std::int64_t ix = ox - p + kx;
                                for (std::int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                                    const std::int64_t iy = oy - p + ky;
                                    const double* xs = xd + ((ci * H + ix) * W + iy) * D + (oz_lo - p + kz);
                                    const double* gs = gd + ((co * Ho + ox) * Wo + oy) * Do + oz_lo;
                                    double dot = 0.0;
                                    for (std::int64_t t = 0; t < len; ++t) dot += gs[t] * xs[t];
                                    acc += dot;
                                }
                            }
                        }
                        wd[(((co * Ci + ci) * k + kx) * k + ky) * k + kz] = acc;
                    }
                }
            }
}

// --- generic stride versions (not on the training hot path) ---

static void forward_gen(const Tensor& x, const Tensor& w, Tensor& y, int s, int p) {
    const std::int64_t Ci = x.shape()[0], H = x.shape()[1], W = x.shape()[2], D = x.shape()[3];
    const std::int64_t Co = y.shape()[0], Ho = y.shape()[1], Wo = y.shape()[2], Do = y.shape()[3];
    const std::int64_t k = w.shape()[2];
    std::fill(y.data(), y.data() + y.numel(), 0.0);
    for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t ox = 0; ox < Ho; ++ox)
            for (std::int64_t oy = 0; oy < Wo; ++oy)
                for (std::int64_t oz = 0; oz < Do; ++oz) {
                    double acc = 0.0;
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            std::int64_t ix = ox * s - p + kx;
                            if (ix < 0 || ix >= H) continue;
                            for (std::int64_t ky = 0; ky < k; ++ky) {
                                std::int64_t iy = oy * s - p + ky;
                                if (iy < 0 || iy >= W) continue;
                                for (std::int64_t kz = 0; kz < k; ++kz) {
                                    std::int64_t iz = oz * s - p + kz;
                                    if (iz < 0 || iz >= D) continue;
                                    acc += w[(((co * Ci + ci) * k + kx) * k + ky) * k + kz] * x[x.at4(ci, ix, iy, iz)];
                                }
                            }
                        }
                    y[y.at4(co, ox, oy, oz)] = acc;
                }
}

static void dx_gen(const Tensor& g, const Tensor& w, Tensor& dx, int s, int p) {
    const std::int64_t Ci = dx.shape()[0], H = dx.shape()[1], W = dx.shape()[2], D = dx.shape()[3];
    const std::int64_t Co = g.shape()[0], Ho = g.shape()[1], Wo = g.shape()[2], Do = g.shape()[3];
    const std::int64_t k = w.shape()[2];
    std::fill(dx.data(), dx.data() + dx.numel(), 0.0);
    for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t ox = 0; ox < Ho; ++ox)
            for (std::int64_t oy = 0; oy < Wo; ++oy)
                for (std::int64_t oz = 0; oz < Do; ++oz) {
                    const double gv = g[g.at4(co, ox, oy, oz)];
                    if (gv == 0.0) continue;
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            std::int64_t ix = ox * s - p + kx;
                            if (ix < 0 || ix >= H) continue;
                            for (std::int64_t ky = 0; ky < k; ++ky) {
                                std::int64_t iy = oy * s - p + ky;
                                if (iy < 0 || iy >= W) continue;
                                for (std::int64_t kz = 0; kz < k; ++kz) {
                                    std::int64_t iz = oz * s - p + kz;
                                    if (iz < 0 || iz >= D) continue;
                                    dx[dx.at4(ci, ix, iy, iz)] += gv * w[(((co * Ci + ci) * k + kx) * k + ky) * k + kz];
                                }
                            }
                        }
                }
}

static void dw_gen(const Tensor& x, const Tensor& g, Tensor& dw, int s, int p) {
    const std::int64_t Ci = x.shape()[0], H = x.shape()[1], W = x.shape()[2], D = x.shape()[3];
    const std::int64_t Co = g.shape()[0], Ho = g.shape()[1], Wo = g.shape()[2], Do = g.shape()[3];
    const std::int64_t k = dw.shape()[2];
    std::fill(dw.data(), dw.data() + dw.numel(), 0.0);
    for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t ox = 0; ox < Ho; ++ox)
            for (std::int64_t oy = 0; oy < Wo; ++oy)
                for (std::int64_t oz = 0; oz < Do; ++oz) {
                    const double gv = g[g.at4(co, ox, oy, oz)];
                    if (gv == 0.0) continue;
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            std::int64_t ix = ox * s - p + kx;
                            if (ix < 0 || ix >= H) continue;
                            for (std::int64_t ky = 0; ky < k; ++ky) {
                                std::int64_t iy = oy * s - p + ky;
                                if (iy < 0 || iy >= W) continue;
                                for (std::int64_t kz = 0; kz < k; ++kz) {
                                    std::int64_t iz = oz * s - p + kz;
                                    if (iz < 0 || iz >= D) continue;
                                    dw[(((co * Ci + ci) * k + kx) * k + ky) * k + kz] += gv * x[x.at4(ci, ix, iy, iz)];
                                }
                            }
                        }
                }
}

void conv3d_forward(const Tensor& x, const Tensor& w, Tensor& y, int stride, int pad) {
    if (stride == 1)
        forward_s1(x, w, y, pad);
    else
        forward_gen(x, w, y, stride, pad);
}

void conv3d_dx(const Tensor& g, const Tensor& w, Tensor& dx, int stride, int pad) {
    if (stride == 1)
        dx_s1(g, w, dx, pad);
    else
        dx_gen(g, w, dx, stride, pad);
}

void conv3d_dw(const Tensor& x, const Tensor& g, Tensor& dw, int stride, int pad) {
    if (stride == 1)
        dw_s1(x, g, dw, pad);
    else
        dw_gen(x, g, dw, stride, pad);
}

}  // namespace ditl::detail

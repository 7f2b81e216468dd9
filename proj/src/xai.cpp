#include "ditl/xai.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace ditl::xai {

Var gradcam_var(Graph& g, Var logits, int target_class, Var act, const GradCamConfig& cfg) {
    const Tensor& lt = g.value(logits);
    if (lt.rank() != 1 || target_class < 0 || target_class >= lt.numel())
        throw std::invalid_argument("gradcam: target class " + std::to_string(target_class) + " out of range for " +
                                    shape_str(lt.shape()));
    Var lc = g.gather_at(logits, target_class);
    Var d_act = g.backward(lc, std::vector<Var>{act}, cfg.create_graph)[0];
    Var alpha = g.chan_spatial_mean(d_act);
    Var raw = g.relu(g.chan_weighted_sum(act, alpha));

    const Tensor& rv = g.value(raw);
    const double mn = rv.min_value(), mx = rv.max_value();
    switch (cfg.norm) {
        case HeatmapNorm::MinMax: {
            if (mx > mn) {
                Var mnv = g.min_all(raw);
                Var den = g.sub(g.max_all(raw), mnv);
                return g.bmul(g.badd(raw, g.neg(mnv)), g.recip(den));
            }
            // degenerate constant map: all zeros stays zero, otherwise saturate
            return g.constant(Tensor::full(rv.shape(), mx > 0.0 ? 1.0 : 0.0));
        }
        case HeatmapNorm::DivMax: {
            if (mx > 0.0) return g.bmul(raw, g.recip(g.max_all(raw)));
            return g.constant(Tensor::zeros(rv.shape()));
        }
        case HeatmapNorm::None:
            return raw;
    }
    throw std::logic_error("unknown heatmap normalization");
}

Heatmap gradcam(const models::ModelVariant& v, const Tensor& volume, const Tensor& x_c, int target_class,
                const models::ModelConfig& mcfg, const GradCamConfig& cfg) {
    using models::VariantKind;
    Graph g;
    models::ForwardOut out;
    switch (v.kind) {
        case VariantKind::UnimodalCT:
            out = models::forward_ct(g, models::bind(g, *v.ct), volume, mcfg.ct.kernel);
            break;
        case VariantKind::EarlyFusion:
            out = models::forward_ct(g, models::bind(g, *v.ct), models::build_early_input(volume, x_c), mcfg.ct.kernel);
            break;
        case VariantKind::IntermediateFusion:
            out = models::forward_intermediate(g, models::bind(g, *v.fusion), volume, x_c, mcfg.ct.kernel);
            break;
        case VariantKind::LateFusion:
            // saliency comes from the imaging member
            out = models::forward_ct(g, models::bind(g, *v.ct), volume, mcfg.ct.kernel);
            break;
        case VariantKind::UnimodalClinical:
            throw std::invalid_argument("gradcam: model has no convolutional branch");
    }
    Var h = gradcam_var(g, out.logits, target_class, out.act, cfg);
    return Heatmap{g.value(h), target_class};
}

Tensor resize_heatmap(const Tensor& h, const Shape& target) {
    if (h.rank() != 3 || target.size() != 3)
        throw std::invalid_argument("resize_heatmap: need rank-3 maps, got " + shape_str(h.shape()) + " -> " +
                                    shape_str(target));
    for (auto e : target)
        if (e < 1) throw std::invalid_argument("resize_heatmap: target extents must be positive");
    if (h.shape() == target) return h;
    const std::int64_t H = h.shape()[0], W = h.shape()[1], D = h.shape()[2];
    Tensor out(target);
    auto src_coord = [](std::int64_t i, std::int64_t n_out, std::int64_t n_in) {
        // voxel-center mapping, clamped at the borders
        double c = (static_cast<double>(i) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
        return std::min(std::max(c, 0.0), static_cast<double>(n_in - 1));
    };
    for (std::int64_t x = 0; x < target[0]; ++x) {
        double fx = src_coord(x, target[0], H);
        std::int64_t x0 = static_cast<std::int64_t>(fx), x1 = std::min(x0 + 1, H - 1);
        double tx = fx - static_cast<double>(x0);
        for (std::int64_t y = 0; y < target[1]; ++y) {
            double fy = src_coord(y, target[1], W);
            std::int64_t y0 = static_cast<std::int64_t>(fy), y1 = std::min(y0 + 1, W - 1);
            double ty = fy - static_cast<double>(y0);
            for (std::int64_t z = 0; z < target[2]; ++z) {
                double fz = src_coord(z, target[2], D);
                std::int64_t z0 = static_cast<std::int64_t>(fz), z1 = std::min(z0 + 1, D - 1);
                double tz = fz - static_cast<double>(z0);
                double c00 = h[h.at3(x0, y0, z0)] * (1 - tz) + h[h.at3(x0, y0, z1)] * tz;
                double c01 = h[h.at3(x0, y1, z0)] * (1 - tz) + h[h.at3(x0, y1, z1)] * tz;
                double c10 = h[h.at3(x1, y0, z0)] * (1 - tz) + h[h.at3(x1, y0, z1)] * tz;
                double c11 = h[h.at3(x1, y1, z0)] * (1 - tz) + h[h.at3(x1, y1, z1)] * tz;
                double c0 = c00 * (1 - ty) + c01 * ty;
                double c1 = c10 * (1 - ty) + c11 * ty;
                out[out.at3(x, y, z)] = c0 * (1 - tx) + c1 * tx;
            }
        }
    }
    return out;
}

AttributionReport shapley(const std::function<double(const Tensor&)>& value, const Tensor& x,
                          const std::vector<Tensor>& background, const std::vector<FeatureGroup>& groups) {
    const int G = static_cast<int>(groups.size());
    if (G == 0) throw std::invalid_argument("shapley: no feature groups");
    if (G > 12)
        throw std::invalid_argument("shapley: " + std::to_string(G) +
                                    " feature groups exceed the exact-enumeration cap of 12 (2^G coalitions); "
                                    "use a sampling approximation instead");
    if (background.empty()) throw std::invalid_argument("shapley: background set is empty");
    if (x.rank() != 1) throw std::invalid_argument("shapley: x must be an encoded vector");
    for (const auto& gr : groups)
        if (gr.lo < 0 || gr.hi <= gr.lo || gr.hi > x.numel())
            throw std::invalid_argument("shapley: group '" + gr.name + "' span out of range");

    Tensor mean_bg(x.shape());
    for (const auto& b : background) {
        if (!b.same_shape(x)) throw std::invalid_argument("shapley: background width mismatch");
        for (std::int64_t i = 0; i < x.numel(); ++i) mean_bg[i] += b[i];
    }
    for (std::int64_t i = 0; i < x.numel(); ++i) mean_bg[i] /= static_cast<double>(background.size());

    // v(S): features in S keep their observed values, the rest take the
    // background mean profile
    const std::size_t n_masks = std::size_t{1} << G;
    std::vector<double> v(n_masks);
    Tensor probe = mean_bg;
    for (std::size_t mask = 0; mask < n_masks; ++mask) {
        for (int j = 0; j < G; ++j) {
            const bool present = (mask >> j) & 1u;
            const auto& gr = groups[static_cast<std::size_t>(j)];
            for (int c = gr.lo; c < gr.hi; ++c) probe[c] = present ? x[c] : mean_bg[c];
        }
        v[mask] = value(probe);
    }

    std::vector<double> fact(static_cast<std::size_t>(G) + 1, 1.0);
    for (int i = 1; i <= G; ++i) fact[static_cast<std::size_t>(i)] = fact[static_cast<std::size_t>(i - 1)] * i;

    AttributionReport rep;
    rep.values.assign(static_cast<std::size_t>(G), 0.0);
    for (std::size_t mask = 0; mask < n_masks; ++mask) {
        const int s = static_cast<int>(std::popcount(mask));
        for (int j = 0; j < G; ++j) {
            if ((mask >> j) & 1u) continue;
            const double w = fact[static_cast<std::size_t>(s)] * fact[static_cast<std::size_t>(G - s - 1)] /
                             fact[static_cast<std::size_t>(G)];
            rep.values[static_cast<std::size_t>(j)] += w * (v[mask | (std::size_t{1} << j)] - v[mask]);
        }
    }
    rep.baseline = v[0];
    rep.prediction = v[n_masks - 1];
    for (const auto& gr : groups) rep.names.push_back(gr.name);
    rep.ranking.resize(static_cast<std::size_t>(G));
    std::iota(rep.ranking.begin(), rep.ranking.end(), 0);
    std::stable_sort(rep.ranking.begin(), rep.ranking.end(), [&](int a, int b) {
        return std::abs(rep.values[static_cast<std::size_t>(a)]) > std::abs(rep.values[static_cast<std::size_t>(b)]);
    });
    return rep;
}

void write_pgm(const std::string& path, const Tensor& slice_hw, double lo, double hi) {
    if (slice_hw.rank() != 2) throw std::invalid_argument("write_pgm: need a 2-D slice");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    const std::int64_t H = slice_hw.shape()[0], W = slice_hw.shape()[1];
    out << "P5\n" << W << " " << H << "\n255\n";
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::int64_t i = 0; i < slice_hw.numel(); ++i) {
        double v = (slice_hw[i] - lo) / span;
        v = std::min(std::max(v, 0.0), 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
}

void write_overlay_ppm(const std::string& path, const Tensor& vol_hw, const Tensor& m1_hw, const Tensor& m2_hw) {
    if (vol_hw.rank() != 2 || !vol_hw.same_shape(m1_hw) || !vol_hw.same_shape(m2_hw))
        throw std::invalid_argument("write_overlay_ppm: slices must share one 2-D shape");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    const std::int64_t H = vol_hw.shape()[0], W = vol_hw.shape()[1];
    out << "P6\n" << W << " " << H << "\n255\n";
    for (std::int64_t i = 0; i < vol_hw.numel(); ++i) {
        double v = std::min(std::max(vol_hw[i], 0.0), 1.0);
        double r = v, g = v, b = v;
        if (m1_hw[i] > 0.5) b = std::min(1.0, b + 0.35);
        if (m2_hw[i] > 0.5) {
            r = std::min(1.0, r + 0.55);
            g *= 0.6;
            b *= 0.6;
        }
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(r * 255.0))));
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(g * 255.0))));
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(b * 255.0))));
    }
}

}  // namespace ditl::xai

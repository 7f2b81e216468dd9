#include "ditl/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ditl::phantom {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
inline double sq(double v) { return v * v; }
}

std::int64_t ClinicalSchema::encoded_width() const {
    std::int64_t f = 0;
    for (const auto& fd : fields) f += fd.kind == FieldKind::Categorical ? static_cast<std::int64_t>(fd.levels.size()) : 1;
    return f;
}

ClinicalSchema reference_schema() {
    ClinicalSchema s;
    s.fields = {
        {"histology", FieldKind::Categorical, {"A", "B", "C"}},
        {"biopsy_site", FieldKind::Categorical, {"A", "B", "C", "D"}},
        {"rt_technique", FieldKind::Categorical, {"A", "B", "C", "D", "E"}},
        {"stage", FieldKind::Ordinal, {"I", "II", "III", "IV"}},
        {"performance", FieldKind::Ordinal, {"0", "1", "2"}},
        {"age", FieldKind::Numeric, {}},
        {"marker_a", FieldKind::Numeric, {}},
        {"marker_b", FieldKind::Numeric, {}},
        {"weight", FieldKind::Numeric, {}},
    };
    return s;
}

std::vector<FieldSpan> field_spans(const ClinicalSchema& schema) {
    std::vector<FieldSpan> spans;
    int col = 0;
    for (const auto& fd : schema.fields) {
        int width = fd.kind == FieldKind::Categorical ? static_cast<int>(fd.levels.size()) : 1;
        spans.push_back({fd.name, col, col + width});
        col += width;
    }
    return spans;
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

namespace {

struct Latents {
    double contrast;  // imaging latent
    double u1, u2;    // hidden clinical factors
    double clinical_score() const { return 0.8 * u1 + 0.6 * u2; }
};

int sample_categorical(Rng& rng, const std::vector<double>& probs) {
    double r = rng.uniform(), acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (r < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

ClinicalRecord make_record(const Latents& lat, Rng& rng) {
    ClinicalRecord rec;
    // histology: categorical view of u1
    {
        double e0 = std::exp(-0.9 * lat.u1), e1 = 1.0, e2 = std::exp(0.9 * lat.u1);
        double z = e0 + e1 + e2;
        rec.values.push_back(sample_categorical(rng, {e0 / z, e1 / z, e2 / z}));
    }
    rec.values.push_back(static_cast<double>(rng.uniform_int(0, 3)));  // biopsy_site, decoy
    rec.values.push_back(static_cast<double>(rng.uniform_int(0, 4)));  // rt_technique, decoy
    // stage: bucketed noisy view of u2
    {
        double v = lat.u2 + 0.5 * rng.normal();
        int rank = v < -0.8 ? 0 : v < 0.0 ? 1 : v < 0.8 ? 2 : 3;
        rec.values.push_back(rank);
    }
    rec.values.push_back(static_cast<double>(rng.uniform_int(0, 2)));  // performance, decoy
    rec.values.push_back(rng.normal(65.0, 8.0));                       // age, decoy
    rec.values.push_back(lat.u1 + 0.5 * rng.normal());                 // marker_a
    rec.values.push_back(lat.u2 + 0.5 * rng.normal());                 // marker_b
    rec.values.push_back(rng.normal(75.0, 12.0));                      // weight, decoy
    return rec;
}

}  // namespace

Dataset generate(const DatasetSpec& spec) {
    if (spec.n_samples < 1) throw std::invalid_argument("generate: need at least one sample");
    if (!(spec.positive_rate > 0.0 && spec.positive_rate < 1.0))
        throw std::invalid_argument("generate: positive rate must lie in (0,1)");
    if (spec.alpha_img < 0.0 || spec.alpha_clin < 0.0)
        throw std::invalid_argument("generate: signal strengths must be nonnegative");
    const auto H = spec.extents[0], W = spec.extents[1], D = spec.extents[2];
    if (H < 8 || W < 8 || D < 8)
        throw std::invalid_argument("generate: extents too small to fit masks (need >= 8 per axis)");

    Dataset ds;
    ds.spec = spec;
    ds.schema = reference_schema();
    ds.samples.resize(static_cast<std::size_t>(spec.n_samples));
    std::vector<double> logits(static_cast<std::size_t>(spec.n_samples));

    for (std::int64_t i = 0; i < spec.n_samples; ++i) {
        Rng rng(mix_seed(spec.seed, 0x9a11, static_cast<std::uint64_t>(i)));
        Latents lat{rng.normal(), rng.normal(), rng.normal()};

        Sample& s = ds.samples[static_cast<std::size_t>(i)];
        s.volume.intensities = Tensor(Shape{H, W, D});
        s.masks.m1 = Tensor(Shape{H, W, D});
        s.masks.m2 = Tensor(Shape{H, W, D});

        // lung ellipsoid
        const double cx = H / 2.0 + rng.uniform(-1.5, 1.5);
        const double cy = W / 2.0 + rng.uniform(-1.5, 1.5);
        const double cz = D / 2.0 + rng.uniform(-1.0, 1.0);
        const double ax = 0.40 * static_cast<double>(H) * (1.0 + rng.uniform(-0.08, 0.08));
        const double ay = 0.40 * static_cast<double>(W) * (1.0 + rng.uniform(-0.08, 0.08));
        const double az = 0.42 * static_cast<double>(D) * (1.0 + rng.uniform(-0.08, 0.08));

        // lesion ellipsoid, centered well inside the lung
        const double lax = std::max(1.2, rng.uniform(0.12, 0.18) * static_cast<double>(H));
        const double lay = std::max(1.2, rng.uniform(0.12, 0.18) * static_cast<double>(W));
        const double laz = std::max(1.2, rng.uniform(0.14, 0.22) * static_cast<double>(D));
        const double lx = cx + rng.uniform(-0.45, 0.45) * std::max(0.0, ax - lax);
        const double ly = cy + rng.uniform(-0.45, 0.45) * std::max(0.0, ay - lay);
        const double lz = cz + rng.uniform(-0.45, 0.45) * std::max(0.0, az - laz);

        // per-sample parenchyma baseline; the label-relevant statistic is the
        // lesion-vs-lung contrast, so absolute lesion intensity alone stays a
        // noisy proxy
        const double lung_base = rng.normal(-650.0, 60.0);
        const double lesion_level = lung_base + 120.0 + 60.0 * lat.contrast;

        Tensor& vol = s.volume.intensities;
        for (std::int64_t x = 0; x < H; ++x)
            for (std::int64_t y = 0; y < W; ++y)
                for (std::int64_t z = 0; z < D; ++z) {
                    const std::int64_t o = vol.at3(x, y, z);
                    const double rl = sq((static_cast<double>(x) - cx) / ax) +
                                      sq((static_cast<double>(y) - cy) / ay) +
                                      sq((static_cast<double>(z) - cz) / az);
                    double v = -1000.0 + 30.0 * rng.normal();  // air
                    if (rl <= 1.0) {
                        s.masks.m1[o] = 1.0;
                        v = lung_base + 25.0 * rng.normal();
                        const double rt = sq((static_cast<double>(x) - lx) / lax) +
                                          sq((static_cast<double>(y) - ly) / lay) +
                                          sq((static_cast<double>(z) - lz) / laz);
                        if (rt <= 1.0) {
                            s.masks.m2[o] = 1.0;
                            v = lesion_level + 25.0 * rng.normal();
                        }
                    }
                    vol[o] = v;
                }
        if (s.masks.m2.sum() < 1.0 || s.masks.m1.sum() < 1.0)
            throw std::invalid_argument("generate: extents too small to fit masks");

        s.clinical = make_record(lat, rng);
        logits[static_cast<std::size_t>(i)] =
            spec.alpha_img * lat.contrast + spec.alpha_clin * lat.clinical_score() + spec.noise * rng.normal();
    }

    // fixed-rate quantile cut keeps the class balance tight at any n
    std::vector<std::size_t> order(logits.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    const auto n_pos = static_cast<std::size_t>(std::lround(spec.positive_rate * static_cast<double>(spec.n_samples)));
    for (std::size_t r = 0; r < order.size(); ++r) ds.samples[order[r]].label = r < n_pos ? 1 : 0;
    return ds;
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

Volume window_and_normalize(const Volume& v, double center, double width) {
    if (width <= 0.0) throw std::invalid_argument("window: width must be positive");
    const double lo = center - width / 2.0;
    Volume out = v;
    for (std::int64_t i = 0; i < out.intensities.numel(); ++i) {
        double x = (out.intensities[i] - lo) / width;
        out.intensities[i] = std::min(std::max(x, 0.0), 1.0);
    }
    return out;
}

namespace {

std::vector<std::int64_t> nn_index_map(std::int64_t in_extent, double in_spacing, double out_spacing,
                                       std::int64_t* out_extent) {
    if (out_spacing <= 0.0) throw std::invalid_argument("resample: target spacing must be positive");
    const double physical = static_cast<double>(in_extent) * in_spacing;
    const std::int64_t n = static_cast<std::int64_t>(std::llround(physical / out_spacing));
    if (n < 1) throw std::invalid_argument("resample: degenerate output extent");
    std::vector<std::int64_t> map(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        auto src = static_cast<std::int64_t>(std::floor((static_cast<double>(i) + 0.5) * out_spacing / in_spacing));
        map[static_cast<std::size_t>(i)] = std::min(std::max<std::int64_t>(src, 0), in_extent - 1);
    }
    *out_extent = n;
    return map;
}

Tensor apply_index_map(const Tensor& t, const std::array<std::vector<std::int64_t>, 3>& maps, const Shape& out_shape) {
    Tensor out(out_shape);
    for (std::int64_t x = 0; x < out_shape[0]; ++x)
        for (std::int64_t y = 0; y < out_shape[1]; ++y)
            for (std::int64_t z = 0; z < out_shape[2]; ++z)
                out[out.at3(x, y, z)] =
                    t[t.at3(maps[0][static_cast<std::size_t>(x)], maps[1][static_cast<std::size_t>(y)],
                            maps[2][static_cast<std::size_t>(z)])];
    return out;
}

}  // namespace

Volume resample_nn(const Volume& v, const std::array<double, 3>& target_spacing) {
    std::array<std::vector<std::int64_t>, 3> maps;
    Shape out_shape(3);
    for (std::size_t a = 0; a < 3; ++a)
        maps[a] = nn_index_map(v.intensities.shape()[a], v.spacing[a], target_spacing[a], &out_shape[a]);
    Volume out;
    out.intensities = apply_index_map(v.intensities, maps, out_shape);
    out.spacing = target_spacing;
    return out;
}

Sample resample_sample(const Sample& s, const std::array<double, 3>& target_spacing) {
    std::array<std::vector<std::int64_t>, 3> maps;
    Shape out_shape(3);
    for (std::size_t a = 0; a < 3; ++a)
        maps[a] = nn_index_map(s.volume.intensities.shape()[a], s.volume.spacing[a], target_spacing[a], &out_shape[a]);
    Sample out = s;
    out.volume.intensities = apply_index_map(s.volume.intensities, maps, out_shape);
    out.volume.spacing = target_spacing;
    out.masks.m1 = apply_index_map(s.masks.m1, maps, out_shape);
    out.masks.m2 = apply_index_map(s.masks.m2, maps, out_shape);
    return out;
}

Box global_bbox(const Dataset& ds, int pad, int extent_multiple) {
    if (ds.samples.empty()) throw std::invalid_argument("global_bbox: empty dataset");
    const Shape& sh = ds.samples.front().volume.intensities.shape();
    Box box;
    box.lo = {sh[0], sh[1], sh[2]};
    box.hi = {0, 0, 0};
    bool any = false;
    for (const auto& s : ds.samples) {
        const Tensor& m = s.masks.m1;
        for (std::int64_t x = 0; x < sh[0]; ++x)
            for (std::int64_t y = 0; y < sh[1]; ++y)
                for (std::int64_t z = 0; z < sh[2]; ++z)
                    if (m[m.at3(x, y, z)] > 0.5) {
                        any = true;
                        box.lo[0] = std::min(box.lo[0], x);
                        box.lo[1] = std::min(box.lo[1], y);
                        box.lo[2] = std::min(box.lo[2], z);
                        box.hi[0] = std::max(box.hi[0], x + 1);
                        box.hi[1] = std::max(box.hi[1], y + 1);
                        box.hi[2] = std::max(box.hi[2], z + 1);
                    }
    }
    if (!any) throw std::invalid_argument("global_bbox: M1 is empty across the dataset");
    for (std::size_t a = 0; a < 3; ++a) {
        box.lo[a] = std::max<std::int64_t>(0, box.lo[a] - pad);
        box.hi[a] = std::min<std::int64_t>(sh[a], box.hi[a] + pad);
        if (extent_multiple > 1) {
            std::int64_t want = ((box.hi[a] - box.lo[a] + extent_multiple - 1) / extent_multiple) * extent_multiple;
            if (want > sh[a])
                throw std::invalid_argument("global_bbox: volume extent " + std::to_string(sh[a]) +
                                            " cannot hold a multiple-of-" + std::to_string(extent_multiple) + " crop");
            while (box.hi[a] - box.lo[a] < want) {
                if (box.hi[a] < sh[a])
                    ++box.hi[a];
                else
                    --box.lo[a];
            }
        }
    }
    return box;
}

Tensor crop(const Tensor& t, const Box& box) {
    if (t.rank() != 3) throw std::invalid_argument("crop: need a rank-3 tensor");
    auto size = box.size();
    Tensor out(Shape{size[0], size[1], size[2]});
    for (std::int64_t x = 0; x < size[0]; ++x)
        for (std::int64_t y = 0; y < size[1]; ++y)
            for (std::int64_t z = 0; z < size[2]; ++z)
                out[out.at3(x, y, z)] = t[t.at3(box.lo[0] + x, box.lo[1] + y, box.lo[2] + z)];
    return out;
}

Processed preprocess(const Dataset& ds, const PreprocessOptions& opt) {
    Processed out;
    Dataset resampled;
    resampled.spec = ds.spec;
    resampled.schema = ds.schema;
    resampled.samples.reserve(ds.samples.size());
    for (const auto& s : ds.samples) resampled.samples.push_back(resample_sample(s, opt.target_spacing));

    out.box = global_bbox(resampled, opt.crop_pad, opt.extent_multiple);
    auto size = out.box.size();
    out.extent = Shape{size[0], size[1], size[2]};
    for (const auto& s : resampled.samples) {
        Volume w = window_and_normalize(s.volume, opt.hu_center, opt.hu_width);
        Tensor v = crop(w.intensities, out.box);
        out.volumes.push_back(Tensor(Shape{1, size[0], size[1], size[2]}, std::move(v.vec())));
        out.m1.push_back(crop(s.masks.m1, out.box));
        out.m2.push_back(crop(s.masks.m2, out.box));
        out.labels.push_back(s.label);
    }
    return out;
}

AugmentParams draw_augment(Rng& rng, int max_shift) {
    AugmentParams p;
    p.sx = rng.uniform_int(-max_shift, max_shift);
    p.sy = rng.uniform_int(-max_shift, max_shift);
    p.sz = rng.uniform_int(-max_shift, max_shift);
    p.flip = rng.bernoulli(0.5);
    return p;
}

Augmented apply_augment(const Tensor& volume, const Tensor& m1, const Tensor& m2, const AugmentParams& p) {
    if (volume.rank() != 4 || m1.rank() != 3 || m2.rank() != 3)
        throw std::invalid_argument("augment: expect volume [1,H,W,D] and masks [H,W,D]");
    const std::int64_t H = m1.shape()[0], W = m1.shape()[1], D = m1.shape()[2];
    const std::int64_t sx = p.sx, sy = p.sy, sz = p.sz;
    const bool flip = p.flip;

    Augmented out;
    out.volume = Tensor(volume.shape());
    out.m1 = Tensor(m1.shape());
    out.m2 = Tensor(m2.shape());
    for (std::int64_t x = 0; x < H; ++x) {
        const std::int64_t fx = flip ? H - 1 - x : x;
        const std::int64_t ix = fx - sx;
        if (ix < 0 || ix >= H) continue;
        for (std::int64_t y = 0; y < W; ++y) {
            const std::int64_t iy = y - sy;
            if (iy < 0 || iy >= W) continue;
            for (std::int64_t z = 0; z < D; ++z) {
                const std::int64_t iz = z - sz;
                if (iz < 0 || iz >= D) continue;
                const std::int64_t oo = out.m1.at3(x, y, z);
                const std::int64_t io = m1.at3(ix, iy, iz);
                out.volume[oo] = volume[io];
                out.m1[oo] = m1[io];
                out.m2[oo] = m2[io];
            }
        }
    }
    return out;
}

Augmented augment(const Tensor& volume, const Tensor& m1, const Tensor& m2, Rng& rng, int max_shift) {
    return apply_augment(volume, m1, m2, draw_augment(rng, max_shift));
}

// ---------------------------------------------------------------------------
// clinical encoding
// ---------------------------------------------------------------------------

EncodeStats compute_encode_stats(const Dataset& ds, const std::vector<int>& train_indices) {
    if (train_indices.empty()) throw std::invalid_argument("encode stats: empty training split");
    EncodeStats st;
    const auto& fields = ds.schema.fields;
    st.observed_levels.resize(fields.size());
    st.mean.assign(fields.size(), 0.0);
    st.stddev.assign(fields.size(), 0.0);
    for (std::size_t f = 0; f < fields.size(); ++f) {
        if (fields[f].kind == FieldKind::Categorical)
            st.observed_levels[f].assign(fields[f].levels.size(), false);
        double sum = 0.0, sq_sum = 0.0;
        for (int idx : train_indices) {
            const double v = ds.samples[static_cast<std::size_t>(idx)].clinical.values[f];
            if (fields[f].kind == FieldKind::Categorical)
                st.observed_levels[f][static_cast<std::size_t>(v)] = true;
            sum += v;
            sq_sum += v * v;
        }
        if (fields[f].kind == FieldKind::Numeric) {
            const double n = static_cast<double>(train_indices.size());
            st.mean[f] = sum / n;
            st.stddev[f] = std::sqrt(std::max(0.0, sq_sum / n - st.mean[f] * st.mean[f]));
        }
    }
    return st;
}

EncodedClinical encode_clinical(const Dataset& ds, const EncodeStats& stats) {
    const auto& fields = ds.schema.fields;
    const auto n = static_cast<std::int64_t>(ds.samples.size());
    const std::int64_t F = ds.schema.encoded_width();
    EncodedClinical out;
    out.matrix = Tensor(Shape{n, F});
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t col = 0;
        const auto& rec = ds.samples[static_cast<std::size_t>(i)].clinical;
        for (std::size_t f = 0; f < fields.size(); ++f) {
            const double v = rec.values[f];
            switch (fields[f].kind) {
                case FieldKind::Categorical: {
                    const auto levels = static_cast<std::int64_t>(fields[f].levels.size());
                    const auto level = static_cast<std::size_t>(v);
                    if (level >= fields[f].levels.size() || !stats.observed_levels[f][level])
                        ++out.unseen_categories;  // all-zero one-hot block
                    else
                        out.matrix[i * F + col + static_cast<std::int64_t>(level)] = 1.0;
                    col += levels;
                    break;
                }
                case FieldKind::Ordinal:
                    out.matrix[i * F + col++] = v;  // rank integers keep their order
                    break;
                case FieldKind::Numeric: {
                    const double sd = stats.stddev[f];
                    out.matrix[i * F + col++] = sd > 0.0 ? (v - stats.mean[f]) / sd : 0.0;
                    break;
                }
            }
        }
    }
    return out;
}

Tensor encoded_row(const Tensor& matrix, std::int64_t row) {
    const std::int64_t F = matrix.shape()[1];
    Tensor out(Shape{F});
    for (std::int64_t j = 0; j < F; ++j) out[j] = matrix[row * F + j];
    return out;
}

// ---------------------------------------------------------------------------
// dataset directory
// ---------------------------------------------------------------------------

namespace {

json spec_to_json(const DatasetSpec& s) {
    return json{{"n_samples", s.n_samples},     {"extents", s.extents}, {"positive_rate", s.positive_rate},
                {"alpha_img", s.alpha_img},     {"alpha_clin", s.alpha_clin},
                {"noise", s.noise},             {"seed", s.seed}};
}

DatasetSpec spec_from_json(const json& j) {
    DatasetSpec s;
    s.n_samples = j.at("n_samples").get<std::int64_t>();
    auto e = j.at("extents").get<std::vector<std::int64_t>>();
    s.extents = {e.at(0), e.at(1), e.at(2)};
    s.positive_rate = j.at("positive_rate").get<double>();
    s.alpha_img = j.at("alpha_img").get<double>();
    s.alpha_clin = j.at("alpha_clin").get<double>();
    s.noise = j.at("noise").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

std::string sample_stem(std::int64_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04lld", static_cast<long long>(i));
    return buf;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir, const std::string& folds_json) {
    fs::create_directories(dir);
    json manifest;
    manifest["spec"] = spec_to_json(ds.spec);
    json schema = json::array();
    for (const auto& f : ds.schema.fields) {
        schema.push_back({{"name", f.name},
                          {"kind", f.kind == FieldKind::Categorical ? "categorical"
                                   : f.kind == FieldKind::Ordinal   ? "ordinal"
                                                                    : "numeric"},
                          {"levels", f.levels}});
    }
    manifest["schema"] = schema;
    manifest["n"] = ds.samples.size();
    if (!folds_json.empty()) manifest["folds"] = json::parse(folds_json);

    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto stem = sample_stem(static_cast<std::int64_t>(i));
        const auto& s = ds.samples[i];
        save_tensor((fs::path(dir) / ("vol_" + stem + ".t64")).string(), s.volume.intensities);
        save_tensor((fs::path(dir) / ("m1_" + stem + ".t64")).string(), s.masks.m1);
        save_tensor((fs::path(dir) / ("m2_" + stem + ".t64")).string(), s.masks.m2);
    }

    std::ofstream tsv(fs::path(dir) / "clinical.tsv");
    tsv << "sample\tlabel";
    for (const auto& f : ds.schema.fields) tsv << "\t" << f.name;
    tsv << "\n";
    tsv.precision(17);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        tsv << i << "\t" << s.label;
        for (std::size_t f = 0; f < ds.schema.fields.size(); ++f) {
            const auto& fd = ds.schema.fields[f];
            const double v = s.clinical.values[f];
            tsv << "\t";
            if (fd.kind == FieldKind::Numeric)
                tsv << v;
            else
                tsv << fd.levels.at(static_cast<std::size_t>(v));
        }
        tsv << "\n";
    }
    if (!tsv) throw std::runtime_error("cannot write clinical table in " + dir);

    std::ofstream mf(fs::path(dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw std::runtime_error("cannot write dataset manifest in " + dir);
}

Dataset load_dataset(const std::string& dir, std::string* folds_json_out) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("cannot open dataset manifest in " + dir);
    json manifest = json::parse(mf);

    Dataset ds;
    ds.spec = spec_from_json(manifest.at("spec"));
    for (const auto& f : manifest.at("schema")) {
        FieldSpec fd;
        fd.name = f.at("name").get<std::string>();
        std::string kind = f.at("kind").get<std::string>();
        fd.kind = kind == "categorical" ? FieldKind::Categorical
                  : kind == "ordinal"   ? FieldKind::Ordinal
                                        : FieldKind::Numeric;
        fd.levels = f.at("levels").get<std::vector<std::string>>();
        ds.schema.fields.push_back(std::move(fd));
    }
    if (folds_json_out) *folds_json_out = manifest.contains("folds") ? manifest["folds"].dump() : "";

    const auto n = manifest.at("n").get<std::int64_t>();
    ds.samples.resize(static_cast<std::size_t>(n));

    std::ifstream tsv(fs::path(dir) / "clinical.tsv");
    if (!tsv) throw std::runtime_error("cannot open clinical table in " + dir);
    std::string line;
    std::getline(tsv, line);  // header
    while (std::getline(tsv, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        std::getline(ss, cell, '\t');
        const auto i = static_cast<std::size_t>(std::stoll(cell));
        if (i >= ds.samples.size()) throw std::runtime_error("clinical table row out of range");
        std::getline(ss, cell, '\t');
        ds.samples[i].label = std::stoi(cell);
        for (const auto& fd : ds.schema.fields) {
            if (!std::getline(ss, cell, '\t')) throw std::runtime_error("clinical table is ragged");
            if (fd.kind == FieldKind::Numeric) {
                ds.samples[i].clinical.values.push_back(std::stod(cell));
            } else {
                auto it = std::find(fd.levels.begin(), fd.levels.end(), cell);
                if (it == fd.levels.end())
                    throw std::runtime_error("unknown level '" + cell + "' for field " + fd.name);
                ds.samples[i].clinical.values.push_back(static_cast<double>(it - fd.levels.begin()));
            }
        }
    }

    for (std::int64_t i = 0; i < n; ++i) {
        const auto stem = sample_stem(i);
        auto& s = ds.samples[static_cast<std::size_t>(i)];
        s.volume.intensities = load_tensor((fs::path(dir) / ("vol_" + stem + ".t64")).string());
        s.masks.m1 = load_tensor((fs::path(dir) / ("m1_" + stem + ".t64")).string());
        s.masks.m2 = load_tensor((fs::path(dir) / ("m2_" + stem + ".t64")).string());
    }
    return ds;
}

}  // namespace ditl::phantom

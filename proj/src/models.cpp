#include "ditl/models.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ditl::models {

namespace fs = std::filesystem;
using nlohmann::json;

std::string variant_kind_name(VariantKind k) {
    switch (k) {
        case VariantKind::UnimodalCT: return "unimodal-ct";
        case VariantKind::UnimodalClinical: return "unimodal-clinical";
        case VariantKind::EarlyFusion: return "early";
        case VariantKind::IntermediateFusion: return "intermediate";
        case VariantKind::LateFusion: return "late";
    }
    return "?";
}

namespace {

Tensor uniform_fan_in(const Shape& shape, std::int64_t fan_in, Rng& rng) {
    Tensor t(shape);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

DenseLayer init_dense(std::int64_t out, std::int64_t in, Rng& rng) {
    return DenseLayer{uniform_fan_in(Shape{out, in}, in, rng), Tensor::zeros(Shape{out})};
}

}  // namespace

CTModel init_ct_model(const CTNetConfig& cfg, std::int64_t in_channels, const Shape& input_extent, Rng& rng) {
    if (cfg.channels.empty()) throw std::invalid_argument("ct model needs at least one conv block");
    if (input_extent.size() != 3) throw std::invalid_argument("ct model input extent must be 3-D");
    const std::int64_t k = cfg.kernel;
    CTModel m;
    std::int64_t cin = in_channels;
    Shape sp = input_extent;
    for (int cout : cfg.channels) {
        std::int64_t fan_in = cin * k * k * k;
        m.enc.blocks.push_back(
            ConvLayer{uniform_fan_in(Shape{cout, cin, k, k, k}, fan_in, rng), Tensor::zeros(Shape{cout})});
        cin = cout;
        for (auto& e : sp) {
            if (e % 2 != 0)
                throw std::invalid_argument("ct model: spatial extent " + shape_str(input_extent) +
                                            " not divisible by 2^blocks");
            e /= 2;
        }
    }
    std::int64_t flat = cin * sp[0] * sp[1] * sp[2];
    m.enc.proj = init_dense(cfg.feat_width, flat, rng);
    m.head = init_dense(2, cfg.feat_width, rng);
    return m;
}

ClinicalModel init_clinical_model(const ClinicalNetConfig& cfg, std::int64_t in_width, Rng& rng) {
    if (cfg.hidden.empty()) throw std::invalid_argument("clinical model needs at least one layer");
    ClinicalModel m;
    std::int64_t in = in_width;
    for (int h : cfg.hidden) {
        m.enc.layers.push_back(init_dense(h, in, rng));
        in = h;
    }
    m.head = init_dense(2, in, rng);
    return m;
}

FusionModel init_fusion_model(const FusionNetConfig& cfg, const CTModel& trained_ct,
                              const ClinicalModel& trained_clinical, Rng& rng) {
    FusionModel m;
    m.ct = trained_ct.enc;
    m.clinical = trained_clinical.enc;
    std::int64_t in = trained_ct.enc.proj.w.shape()[0] + trained_clinical.enc.layers.back().w.shape()[0];
    for (int h : cfg.hidden) {
        m.fusion_hidden.layers.push_back(init_dense(h, in, rng));
        in = h;
    }
    m.head = init_dense(2, in, rng);
    return m;
}

std::vector<ParamRef> param_refs(CTModel& m) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < m.enc.blocks.size(); ++i) {
        out.emplace_back("conv" + std::to_string(i) + ".w", &m.enc.blocks[i].w);
        out.emplace_back("conv" + std::to_string(i) + ".b", &m.enc.blocks[i].b);
    }
    out.emplace_back("proj.w", &m.enc.proj.w);
    out.emplace_back("proj.b", &m.enc.proj.b);
    out.emplace_back("head.w", &m.head.w);
    out.emplace_back("head.b", &m.head.b);
    return out;
}

std::vector<ParamRef> param_refs(ClinicalModel& m) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < m.enc.layers.size(); ++i) {
        out.emplace_back("mlp" + std::to_string(i) + ".w", &m.enc.layers[i].w);
        out.emplace_back("mlp" + std::to_string(i) + ".b", &m.enc.layers[i].b);
    }
    out.emplace_back("head.w", &m.head.w);
    out.emplace_back("head.b", &m.head.b);
    return out;
}

std::vector<ParamRef> param_refs(FusionModel& m) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < m.ct.blocks.size(); ++i) {
        out.emplace_back("ct.conv" + std::to_string(i) + ".w", &m.ct.blocks[i].w);
        out.emplace_back("ct.conv" + std::to_string(i) + ".b", &m.ct.blocks[i].b);
    }
    out.emplace_back("ct.proj.w", &m.ct.proj.w);
    out.emplace_back("ct.proj.b", &m.ct.proj.b);
    for (std::size_t i = 0; i < m.clinical.layers.size(); ++i) {
        out.emplace_back("clin.mlp" + std::to_string(i) + ".w", &m.clinical.layers[i].w);
        out.emplace_back("clin.mlp" + std::to_string(i) + ".b", &m.clinical.layers[i].b);
    }
    for (std::size_t i = 0; i < m.fusion_hidden.layers.size(); ++i) {
        out.emplace_back("fusion" + std::to_string(i) + ".w", &m.fusion_hidden.layers[i].w);
        out.emplace_back("fusion" + std::to_string(i) + ".b", &m.fusion_hidden.layers[i].b);
    }
    out.emplace_back("head.w", &m.head.w);
    out.emplace_back("head.b", &m.head.b);
    return out;
}

std::vector<ParamRef> param_refs(ModelVariant& v) {
    std::vector<ParamRef> out;
    auto prefix = [&out](const std::string& p, std::vector<ParamRef> refs) {
        for (auto& [name, t] : refs) out.emplace_back(p + name, t);
    };
    switch (v.kind) {
        case VariantKind::UnimodalCT:
        case VariantKind::EarlyFusion:
            prefix("ct/", param_refs(*v.ct));
            break;
        case VariantKind::UnimodalClinical:
            prefix("clinical/", param_refs(*v.clinical));
            break;
        case VariantKind::IntermediateFusion:
            prefix("fusion/", param_refs(*v.fusion));
            break;
        case VariantKind::LateFusion:
            prefix("ct/", param_refs(*v.ct));
            prefix("clinical/", param_refs(*v.clinical));
            break;
    }
    return out;
}

BoundCT bind(Graph& g, const CTModel& m) {
    BoundCT b;
    for (const auto& blk : m.enc.blocks) {
        Var w = g.leaf(blk.w, true), bb = g.leaf(blk.b, true);
        b.blocks.emplace_back(w, bb);
        b.all.push_back(w);
        b.all.push_back(bb);
    }
    b.proj_w = g.leaf(m.enc.proj.w, true);
    b.proj_b = g.leaf(m.enc.proj.b, true);
    b.head_w = g.leaf(m.head.w, true);
    b.head_b = g.leaf(m.head.b, true);
    b.all.insert(b.all.end(), {b.proj_w, b.proj_b, b.head_w, b.head_b});
    return b;
}

BoundClinical bind(Graph& g, const ClinicalModel& m) {
    BoundClinical b;
    for (const auto& lay : m.enc.layers) {
        Var w = g.leaf(lay.w, true), bb = g.leaf(lay.b, true);
        b.layers.emplace_back(w, bb);
        b.all.push_back(w);
        b.all.push_back(bb);
    }
    b.head_w = g.leaf(m.head.w, true);
    b.head_b = g.leaf(m.head.b, true);
    b.all.insert(b.all.end(), {b.head_w, b.head_b});
    return b;
}

BoundFusion bind(Graph& g, const FusionModel& m) {
    BoundFusion b;
    for (const auto& blk : m.ct.blocks) {
        Var w = g.leaf(blk.w, true), bb = g.leaf(blk.b, true);
        b.ct_blocks.emplace_back(w, bb);
        b.all.push_back(w);
        b.all.push_back(bb);
    }
    b.ct_proj_w = g.leaf(m.ct.proj.w, true);
    b.ct_proj_b = g.leaf(m.ct.proj.b, true);
    b.all.insert(b.all.end(), {b.ct_proj_w, b.ct_proj_b});
    for (const auto& lay : m.clinical.layers) {
        Var w = g.leaf(lay.w, true), bb = g.leaf(lay.b, true);
        b.clin_layers.emplace_back(w, bb);
        b.all.push_back(w);
        b.all.push_back(bb);
    }
    for (const auto& lay : m.fusion_hidden.layers) {
        Var w = g.leaf(lay.w, true), bb = g.leaf(lay.b, true);
        b.fusion_layers.emplace_back(w, bb);
        b.all.push_back(w);
        b.all.push_back(bb);
    }
    b.head_w = g.leaf(m.head.w, true);
    b.head_b = g.leaf(m.head.b, true);
    b.all.insert(b.all.end(), {b.head_w, b.head_b});
    return b;
}

namespace {

// conv blocks -> flatten -> proj -> relu; caches the rectified first-conv output
Var ct_encode(Graph& g, const std::vector<std::pair<Var, Var>>& blocks, Var proj_w, Var proj_b, const Tensor& x,
              int kernel, Var* act_out) {
    if (x.rank() != 4) throw std::invalid_argument("ct input must be [C,H,W,D], got " + shape_str(x.shape()));
    const int pad = kernel / 2;
    Var h = g.constant(x);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        h = g.add_chan_bias(g.conv3d(h, blocks[i].first, 1, pad), blocks[i].second);
        h = g.relu(h);
        if (i == 0 && act_out) *act_out = h;
        h = g.avgpool2(h);
    }
    Var flat = g.reshape(h, Shape{g.value(h).numel()});
    return g.relu(dense(g, flat, proj_w, proj_b));
}

Var mlp_encode(Graph& g, const std::vector<std::pair<Var, Var>>& layers, Var x) {
    Var h = x;
    for (const auto& [w, b] : layers) h = g.relu(dense(g, h, w, b));
    return h;
}

}  // namespace

ForwardOut forward_ct(Graph& g, const BoundCT& m, const Tensor& x, int kernel) {
    ForwardOut out;
    Var z = ct_encode(g, m.blocks, m.proj_w, m.proj_b, x, kernel, &out.act);
    out.logits = dense(g, z, m.head_w, m.head_b);
    out.probs = g.softmax1d(out.logits);
    return out;
}

ForwardOut forward_clinical(Graph& g, const BoundClinical& m, const Tensor& x_c) {
    if (x_c.rank() != 1)
        throw std::invalid_argument("clinical input must be a vector, got " + shape_str(x_c.shape()));
    ForwardOut out;
    Var z = mlp_encode(g, m.layers, g.constant(x_c));
    out.logits = dense(g, z, m.head_w, m.head_b);
    out.probs = g.softmax1d(out.logits);
    return out;
}

ForwardOut forward_intermediate(Graph& g, const BoundFusion& m, const Tensor& x_i, const Tensor& x_c, int kernel) {
    ForwardOut out;
    Var z_i = ct_encode(g, m.ct_blocks, m.ct_proj_w, m.ct_proj_b, x_i, kernel, &out.act);
    Var z_c = mlp_encode(g, m.clin_layers, g.constant(x_c));
    Var h = g.concat1d(z_i, z_c);
    h = mlp_encode(g, m.fusion_layers, h);
    out.logits = dense(g, h, m.head_w, m.head_b);
    out.probs = g.softmax1d(out.logits);
    return out;
}

Tensor build_early_input(const Tensor& volume_chw, const Tensor& x_c) {
    if (volume_chw.rank() != 4 || volume_chw.shape()[0] != 1)
        throw std::invalid_argument("early fusion expects a [1,H,W,D] volume, got " + shape_str(volume_chw.shape()));
    if (x_c.rank() != 1) throw std::invalid_argument("early fusion expects a clinical vector");
    const std::int64_t F = x_c.numel(), S = volume_chw.numel();
    Shape shape = volume_chw.shape();
    shape[0] = 1 + F;
    Tensor out(shape);
    for (std::int64_t i = 0; i < S; ++i) out[i] = volume_chw[i];
    for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t i = 0; i < S; ++i) out[(1 + f) * S + i] = x_c[f];
    return out;
}

Tensor late_fusion_probs(const Tensor& p_ct, const Tensor& p_clinical) {
    if (!p_ct.same_shape(p_clinical))
        throw std::invalid_argument("late fusion: member outputs differ in shape");
    Tensor out(p_ct.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 0.5 * (p_ct[i] + p_clinical[i]);
    return out;
}

Tensor predict_probs(const ModelVariant& v, const Tensor& volume, const Tensor& x_c, const ModelConfig& cfg) {
    Graph g;
    switch (v.kind) {
        case VariantKind::UnimodalCT: {
            auto out = forward_ct(g, bind(g, *v.ct), volume, cfg.ct.kernel);
            return g.value(out.probs);
        }
        case VariantKind::UnimodalClinical: {
            auto out = forward_clinical(g, bind(g, *v.clinical), x_c);
            return g.value(out.probs);
        }
        case VariantKind::EarlyFusion: {
            auto out = forward_ct(g, bind(g, *v.ct), build_early_input(volume, x_c), cfg.ct.kernel);
            return g.value(out.probs);
        }
        case VariantKind::IntermediateFusion: {
            auto out = forward_intermediate(g, bind(g, *v.fusion), volume, x_c, cfg.ct.kernel);
            return g.value(out.probs);
        }
        case VariantKind::LateFusion: {
            auto pc = forward_ct(g, bind(g, *v.ct), volume, cfg.ct.kernel);
            auto pl = forward_clinical(g, bind(g, *v.clinical), x_c);
            return late_fusion_probs(g.value(pc.probs), g.value(pl.probs));
        }
    }
    throw std::logic_error("unknown variant kind");
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_variant(const std::string& dir, const ModelVariant& v, const ModelConfig& cfg) {
    fs::create_directories(dir);
    auto refs = param_refs(const_cast<ModelVariant&>(v));
    json manifest;
    manifest["kind"] = variant_kind_name(v.kind);
    manifest["clinical_width"] = v.clinical_width;
    manifest["config"] = {{"ct_channels", cfg.ct.channels},
                          {"ct_kernel", cfg.ct.kernel},
                          {"ct_feat_width", cfg.ct.feat_width},
                          {"clinical_hidden", cfg.clinical.hidden},
                          {"fusion_hidden", cfg.fusion.hidden}};
    json params = json::array();
    int i = 0;
    for (auto& [name, t] : refs) {
        std::string file = "p" + std::to_string(i++) + ".t64";
        save_tensor((fs::path(dir) / file).string(), *t);
        params.push_back({{"name", name}, {"file", file}, {"shape", t->shape()}});
    }
    manifest["params"] = params;
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
}

ModelVariant load_variant(const std::string& dir, ModelConfig& cfg_out) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw std::runtime_error("cannot open checkpoint manifest in " + dir);
    json manifest = json::parse(in);
    cfg_out.ct.channels = manifest["config"]["ct_channels"].get<std::vector<int>>();
    cfg_out.ct.kernel = manifest["config"]["ct_kernel"].get<int>();
    cfg_out.ct.feat_width = manifest["config"]["ct_feat_width"].get<int>();
    cfg_out.clinical.hidden = manifest["config"]["clinical_hidden"].get<std::vector<int>>();
    cfg_out.fusion.hidden = manifest["config"]["fusion_hidden"].get<std::vector<int>>();

    std::string kind = manifest["kind"].get<std::string>();
    ModelVariant v;
    v.clinical_width = manifest["clinical_width"].get<int>();
    if (kind == "unimodal-ct")
        v.kind = VariantKind::UnimodalCT;
    else if (kind == "unimodal-clinical")
        v.kind = VariantKind::UnimodalClinical;
    else if (kind == "early")
        v.kind = VariantKind::EarlyFusion;
    else if (kind == "intermediate")
        v.kind = VariantKind::IntermediateFusion;
    else if (kind == "late")
        v.kind = VariantKind::LateFusion;
    else
        throw std::runtime_error("unknown variant kind in manifest: " + kind);

    // materialize empty components with the right layer counts, then fill
    auto load_params = [&](std::vector<ParamRef> refs) {
        const auto& params = manifest["params"];
        if (params.size() != refs.size())
            throw std::runtime_error("checkpoint parameter count mismatch in " + dir);
        for (std::size_t i = 0; i < refs.size(); ++i) {
            Tensor t = load_tensor((fs::path(dir) / params[i]["file"].get<std::string>()).string());
            *refs[i].second = std::move(t);
        }
    };

    auto count_layers = [&](const std::string& prefix) {
        int n = 0;
        for (const auto& p : manifest["params"]) {
            std::string name = p["name"].get<std::string>();
            if (name.rfind(prefix, 0) == 0 && name.find(".w") != std::string::npos) ++n;
        }
        return n;
    };

    auto empty_ct = [&](const std::string& pre) {
        CTModel m;
        m.enc.blocks.resize(static_cast<std::size_t>(count_layers(pre + "conv")));
        return m;
    };
    auto empty_clin = [&](const std::string& pre) {
        ClinicalModel m;
        m.enc.layers.resize(static_cast<std::size_t>(count_layers(pre + "mlp")));
        return m;
    };

    switch (v.kind) {
        case VariantKind::UnimodalCT:
        case VariantKind::EarlyFusion:
            v.ct = empty_ct("ct/");
            break;
        case VariantKind::UnimodalClinical:
            v.clinical = empty_clin("clinical/");
            break;
        case VariantKind::IntermediateFusion: {
            FusionModel f;
            f.ct.blocks.resize(static_cast<std::size_t>(count_layers("fusion/ct.conv")));
            f.clinical.layers.resize(static_cast<std::size_t>(count_layers("fusion/clin.mlp")));
            f.fusion_hidden.layers.resize(static_cast<std::size_t>(count_layers("fusion/fusion")));
            v.fusion = std::move(f);
            break;
        }
        case VariantKind::LateFusion:
            v.ct = empty_ct("ct/");
            v.clinical = empty_clin("clinical/");
            break;
    }
    load_params(param_refs(v));
    return v;
}

}  // namespace ditl::models

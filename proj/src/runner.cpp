#include "ditl/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "ditl/xai.hpp"

namespace ditl::runner {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& all_rows() {
    static const std::vector<std::string> rows = {
        "unimodal-ct",      "unimodal-clinical",
        "ditl-early",       "ditl-intermediate",       "ditl-late",
        "xai-guide-early",  "xai-guide-intermediate",  "xai-guide-late",
        "segmentation-early", "segmentation-intermediate", "segmentation-late",
    };
    return rows;
}

bool is_known_row(const std::string& row) {
    const auto& rows = all_rows();
    return std::find(rows.begin(), rows.end(), row) != rows.end();
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// spec serialization (provenance)
// ---------------------------------------------------------------------------

namespace {

json spec_to_json(const ExperimentSpec& s) {
    json j;
    j["dataset"] = {{"n_samples", s.dataset.n_samples}, {"extents", s.dataset.extents},
                    {"positive_rate", s.dataset.positive_rate}, {"alpha_img", s.dataset.alpha_img},
                    {"alpha_clin", s.dataset.alpha_clin}, {"noise", s.dataset.noise}, {"seed", s.dataset.seed}};
    j["dataset_path"] = s.dataset_path;
    j["rows"] = s.rows;
    j["folds"] = s.folds;
    j["model_seeds"] = s.model_seeds;
    j["train"] = {{"lr", s.train.lr},
                  {"weight_decay", s.train.weight_decay},
                  {"warmup_epochs", s.train.warmup_epochs},
                  {"max_epochs", s.train.max_epochs},
                  {"patience", s.train.patience},
                  {"batch_size", s.train.batch_size},
                  {"augment", s.train.augment},
                  {"max_shift", s.train.max_shift},
                  {"warm_start", s.train.warm_start},
                  {"freeze_encoders", s.train.freeze_encoders}};
    j["model"] = {{"ct_channels", s.model.ct.channels},
                  {"ct_kernel", s.model.ct.kernel},
                  {"ct_feat_width", s.model.ct.feat_width},
                  {"clinical_hidden", s.model.clinical.hidden},
                  {"fusion_hidden", s.model.fusion.hidden}};
    j["preprocess"] = {{"hu_center", s.preprocess.hu_center},
                       {"hu_width", s.preprocess.hu_width},
                       {"target_spacing", s.preprocess.target_spacing},
                       {"crop_pad", s.preprocess.crop_pad},
                       {"extent_multiple", s.preprocess.extent_multiple}};
    j["lambda_active"] = s.lambda_active;
    j["heatmap_norm"] = s.train.loss.gradcam.norm == xai::HeatmapNorm::MinMax   ? "minmax"
                        : s.train.loss.gradcam.norm == xai::HeatmapNorm::DivMax ? "divmax"
                                                                                : "none";
    j["gradcam_second_order"] = s.train.loss.gradcam.create_graph;
    return j;
}

// ---------------------------------------------------------------------------
// per-(seed, fold) work unit
// ---------------------------------------------------------------------------

struct Family {
    enum Kind { Ditl, XaiGuide, Segmentation } kind;
    static Family of_row(const std::string& row) {
        if (row.rfind("xai-guide", 0) == 0) return {XaiGuide};
        if (row.rfind("segmentation", 0) == 0) return {Segmentation};
        return {Ditl};
    }
    std::string tag() const { return kind == Ditl ? "ditl" : kind == XaiGuide ? "xai-guide" : "segmentation"; }
};

struct UnitResult {
    // parallel to the spec row list
    std::vector<FoldCell> cells;
};

struct UnitContext {
    const ExperimentSpec* spec;
    const phantom::Dataset* ds;
    const phantom::Processed* proc;
    const std::vector<eval::FoldSplit>* folds;
    std::uint64_t model_seed;
    int fold;

    train::FoldData fd;
    train::FoldData fd_masked;
    bool fd_masked_ready = false;

    // lazily trained shared components
    std::unique_ptr<train::TrainedCT> ct_ditl, ct_xai, ct_seg;
    std::unique_ptr<train::TrainedClinical> clinical;

    train::TrainConfig unit_cfg() const {
        train::TrainConfig cfg = spec->train;
        cfg.seed = mix_seed(model_seed, static_cast<std::uint64_t>(fold), 0x7a1);
        return cfg;
    }
    std::uint64_t init_seed(std::uint64_t tag) const {
        return mix_seed(model_seed, static_cast<std::uint64_t>(fold), tag);
    }

    const train::FoldData& masked() {
        if (!fd_masked_ready) {
            fd_masked = train::make_fold_data(*ds, *proc, (*folds)[static_cast<std::size_t>(fold)], true);
            fd_masked_ready = true;
        }
        return fd_masked;
    }

    const train::TrainedCT& get_ct(Family fam) {
        switch (fam.kind) {
            case Family::Ditl:
                if (!ct_ditl)
                    ct_ditl = std::make_unique<train::TrainedCT>(
                        train::run_doctor_in_the_loop_ct(fd, spec->model, unit_cfg(), init_seed(0x01)));
                return *ct_ditl;
            case Family::XaiGuide:
                if (!ct_xai)
                    ct_xai = std::make_unique<train::TrainedCT>(
                        train::run_xai_guide_ct(fd, spec->model, unit_cfg(), init_seed(0x02)));
                return *ct_xai;
            case Family::Segmentation:
                if (!ct_seg)
                    ct_seg = std::make_unique<train::TrainedCT>(
                        train::run_segmentation_ct(masked(), spec->model, unit_cfg(), init_seed(0x03)));
                return *ct_seg;
        }
        throw std::logic_error("unknown family");
    }

    const train::TrainedClinical& get_clinical() {
        if (!clinical)
            clinical = std::make_unique<train::TrainedClinical>(
                train::run_clinical(fd, spec->model, unit_cfg(), init_seed(0x04)));
        return *clinical;
    }
};

// lambda/mask of the alignment-guided phases per family
train::PhaseSpec joint_phase(const ExperimentSpec& spec, Family fam, const char* name) {
    if (fam.kind == Family::Segmentation) return {name, train::MaskLevel::None, 0.0};
    return {name, train::MaskLevel::M2, spec.lambda_active, true};
}

struct EvalOut {
    double acc, auc, mcc;
};

EvalOut eval_on_test(const models::ModelVariant& v, const UnitContext& ctx, const train::FoldData& fd) {
    std::vector<int> preds, labels;
    std::vector<double> scores;
    for (int idx : fd.split.test) {
        Tensor probs = models::predict_probs(v, train::imaging_input(fd, idx), train::clinical_input(fd, idx),
                                             ctx.spec->model);
        scores.push_back(probs[1]);
        preds.push_back(eval::argmax_class(probs.vec()));
        labels.push_back(fd.proc->labels[static_cast<std::size_t>(idx)]);
    }
    return {eval::accuracy(preds, labels), eval::auc(scores, labels), eval::mcc(preds, labels)};
}

void save_component_log(const std::string& dir, const std::vector<train::PhaseResult>& phases,
                        const train::TrainConfig& cfg) {
    fs::create_directories(dir);
    std::ofstream log(fs::path(dir) / "phase.log");
    log << "# warmup_epochs=" << cfg.warmup_epochs << " max_epochs=" << cfg.max_epochs << " patience=" << cfg.patience
        << " batch_size=" << cfg.batch_size << "\n";
    log << "# phase lambda mask epochs_run best_epoch best_val_loss final_train_loss val_xai_m2\n";
    log.precision(10);
    for (const auto& p : phases) {
        log << p.name << " " << p.lambda << " " << p.mask << " " << p.epochs_run << " " << p.best_epoch << " "
            << p.best_val_loss << " " << p.final_train_loss << " " << p.val_xai_m2 << "\n";
    }
}

UnitResult run_unit(UnitContext& ctx) {
    const ExperimentSpec& spec = *ctx.spec;
    UnitResult out;
    out.cells.resize(spec.rows.size());

    const std::string unit_tag = "s" + std::to_string(ctx.model_seed) + "_f" + std::to_string(ctx.fold);
    auto checkpoint_dir = [&](const std::string& component) {
        return (fs::path(spec.out_dir) / "checkpoints" / component / unit_tag).string();
    };
    auto maybe_save = [&](const std::string& component, const models::ModelVariant& v,
                          const std::vector<train::PhaseResult>& phases,
                          const std::vector<models::CTModel>* per_phase = nullptr) {
        if (spec.out_dir.empty() || !spec.save_checkpoints) return;
        const std::string dir = checkpoint_dir(component);
        models::save_variant(dir, v, spec.model);
        save_component_log(dir, phases, ctx.unit_cfg());
        json side = {{"fold", ctx.fold}, {"model_seed", ctx.model_seed}, {"folds_k", spec.folds},
                     {"mask_input", Family::of_row(component).kind == Family::Segmentation}};
        std::ofstream(fs::path(dir) / "context.json") << side.dump(2) << "\n";
        if (per_phase) {
            for (std::size_t p = 0; p < per_phase->size(); ++p) {
                models::ModelVariant pv;
                pv.kind = v.kind;
                pv.ct = (*per_phase)[p];
                pv.clinical_width = v.clinical_width;
                models::save_variant((fs::path(dir) / ("phase" + std::to_string(p))).string(), pv, spec.model);
            }
        }
    };

    for (std::size_t r = 0; r < spec.rows.size(); ++r) {
        const std::string& row = spec.rows[r];
        Family fam = Family::of_row(row);
        const train::FoldData& fd = fam.kind == Family::Segmentation ? ctx.masked() : ctx.fd;
        FoldCell cell;
        cell.fold = ctx.fold;

        models::ModelVariant variant;
        variant.clinical_width = static_cast<int>(ctx.fd.clinical.shape()[1]);

        if (row == "unimodal-ct") {
            const auto& ct = ctx.get_ct({Family::Ditl});
            variant.kind = models::VariantKind::UnimodalCT;
            variant.ct = ct.model;
            cell.phases = ct.phases;
        } else if (row == "unimodal-clinical") {
            const auto& cl = ctx.get_clinical();
            variant.kind = models::VariantKind::UnimodalClinical;
            variant.clinical = cl.model;
            cell.phases = cl.phases;
        } else if (row.ends_with("-intermediate")) {
            const auto& ct = ctx.get_ct(fam);
            const auto& cl = ctx.get_clinical();
            auto fused = train::run_intermediate_fusion(ct.model, cl.model, fd, spec.model, ctx.unit_cfg(),
                                                        joint_phase(spec, fam, "joint"), ctx.init_seed(0x10));
            variant.kind = models::VariantKind::IntermediateFusion;
            variant.fusion = fused.model;
            cell.phases = fused.phases;
        } else if (row.ends_with("-early")) {
            // data-level fusion; the guided families keep their lambda/mask
            train::PhaseSpec phase = fam.kind == Family::XaiGuide
                                         ? train::PhaseSpec{"early", train::MaskLevel::M2, spec.lambda_active, true}
                                         : train::PhaseSpec{"early", train::MaskLevel::None, 0.0};
            auto early = train::run_early_fusion(fd, spec.model, ctx.unit_cfg(), phase, ctx.init_seed(0x11));
            variant.kind = models::VariantKind::EarlyFusion;
            variant.ct = early.model;
            cell.phases = early.phases;
        } else if (row.ends_with("-late")) {
            const auto& ct = ctx.get_ct(fam);
            const auto& cl = ctx.get_clinical();
            variant.kind = models::VariantKind::LateFusion;
            variant.ct = ct.model;
            variant.clinical = cl.model;
        } else {
            throw std::invalid_argument("unknown experiment row: " + row);
        }

        auto m = eval_on_test(variant, ctx, fd);
        cell.acc = m.acc;
        cell.auc = m.auc;
        cell.mcc = m.mcc;
        out.cells[r] = std::move(cell);
        const std::vector<models::CTModel>* per_phase = nullptr;
        if (row == "unimodal-ct") per_phase = &ctx.get_ct({Family::Ditl}).after_phase;
        maybe_save(row, variant, out.cells[r].phases, per_phase);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// report assembly
// ---------------------------------------------------------------------------

const RowReport& ExperimentReport::row(const std::string& name) const {
    for (const auto& r : rows)
        if (r.row == name) return r;
    throw std::invalid_argument("report has no row named " + name);
}

std::string ExperimentReport::to_json() const {
    json j;
    j["provenance"] = {{"config", json::parse(config_json)},
                       {"config_hash", config_hash},
                       {"code_version", "ditl-1"}};
    json rows_j;
    for (const auto& r : rows) {
        json rj;
        for (const auto& s : r.seeds) {
            json sj;
            json cells = json::array();
            for (const auto& c : s.cells) {
                json cj = {{"fold", c.fold}, {"acc", c.acc}, {"auc", c.auc}, {"mcc", c.mcc}};
                if (!c.phases.empty()) {
                    json ph = json::array();
                    for (const auto& p : c.phases)
                        ph.push_back({{"name", p.name},
                                      {"lambda", p.lambda},
                                      {"mask", p.mask},
                                      {"epochs_run", p.epochs_run},
                                      {"best_epoch", p.best_epoch},
                                      {"best_val_loss", p.best_val_loss},
                                      {"val_xai_m2", p.val_xai_m2}});
                    cj["phases"] = ph;
                }
                cells.push_back(cj);
            }
            sj["cells"] = cells;
            sj["acc"] = {{"mean", s.metrics.acc_mean}, {"se", s.metrics.acc_se}};
            sj["auc"] = {{"mean", s.metrics.auc_mean}, {"se", s.metrics.auc_se}};
            sj["mcc"] = {{"mean", s.metrics.mcc_mean}, {"se", s.metrics.mcc_se}};
            rj["seed_" + std::to_string(s.seed)] = sj;
        }
        rj["pooled"] = {{"acc", {{"mean", r.pooled.acc_mean}, {"se", r.pooled.acc_se}}},
                        {"auc", {{"mean", r.pooled.auc_mean}, {"se", r.pooled.auc_se}}},
                        {"mcc", {{"mean", r.pooled.mcc_mean}, {"se", r.pooled.mcc_se}}}};
        rows_j[r.row] = rj;
    }
    j["rows"] = rows_j;
    return j.dump(2) + "\n";
}

std::string ExperimentReport::to_table() const {
    std::ostringstream os;
    os << "experiment                     ACC (%)        AUC (%)        MCC (%)\n";
    os << "---------------------------------------------------------------------\n";
    for (const auto& r : rows) {
        char line[160];
        std::snprintf(line, sizeof line, "%-28s %14s %14s %14s\n", r.row.c_str(),
                      eval::format_mean_se(r.pooled.acc_mean, r.pooled.acc_se).c_str(),
                      eval::format_mean_se(r.pooled.auc_mean, r.pooled.auc_se).c_str(),
                      eval::format_mean_se(r.pooled.mcc_mean, r.pooled.mcc_se).c_str());
        os << line;
    }
    return os.str();
}

ExperimentReport run(const ExperimentSpec& spec) {
    if (spec.rows.empty()) throw std::invalid_argument("run: select at least one row");
    for (const auto& r : spec.rows)
        if (!is_known_row(r)) throw std::invalid_argument("run: invalid row name: " + r);
    if (spec.model_seeds.empty()) throw std::invalid_argument("run: need at least one model seed");
    train::validate(spec.train);

    phantom::Dataset ds = spec.dataset_path.empty() ? phantom::generate(spec.dataset)
                                                    : phantom::load_dataset(spec.dataset_path);
    std::vector<int> labels;
    for (const auto& s : ds.samples) labels.push_back(s.label);
    auto folds = eval::stratified_folds(labels, spec.folds, ds.spec.seed);
    phantom::Processed proc = phantom::preprocess(ds, spec.preprocess);

    // one unit per (model seed, fold); units are independent and isolated
    struct Unit {
        std::uint64_t seed;
        int fold;
    };
    std::vector<Unit> units;
    for (auto seed : spec.model_seeds)
        for (int f = 0; f < spec.folds; ++f) units.push_back({seed, f});
    std::vector<UnitResult> results(units.size());

    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    const int jobs = std::max(1, std::min<int>(spec.jobs > 0 ? spec.jobs : hw, static_cast<int>(units.size())));
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= units.size()) return;
            UnitContext ctx;
            ctx.spec = &spec;
            ctx.ds = &ds;
            ctx.proc = &proc;
            ctx.folds = &folds;
            ctx.model_seed = units[i].seed;
            ctx.fold = units[i].fold;
            ctx.fd = train::make_fold_data(ds, proc, folds[static_cast<std::size_t>(units[i].fold)], false);
            results[i] = run_unit(ctx);
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    ExperimentReport rep;
    rep.config_json = spec_to_json(spec).dump();
    rep.config_hash = fnv1a64(rep.config_json);
    for (std::size_t r = 0; r < spec.rows.size(); ++r) {
        RowReport rr;
        rr.row = spec.rows[r];
        eval::MetricSet pooled;
        for (auto seed : spec.model_seeds) {
            SeedBlock sb;
            sb.seed = seed;
            eval::MetricSet ms;
            for (std::size_t u = 0; u < units.size(); ++u) {
                if (units[u].seed != seed) continue;
                sb.cells.push_back(results[u].cells[r]);
                ms.acc.push_back(results[u].cells[r].acc);
                ms.auc.push_back(results[u].cells[r].auc);
                ms.mcc.push_back(results[u].cells[r].mcc);
                pooled.acc.push_back(results[u].cells[r].acc);
                pooled.auc.push_back(results[u].cells[r].auc);
                pooled.mcc.push_back(results[u].cells[r].mcc);
            }
            std::sort(sb.cells.begin(), sb.cells.end(), [](const FoldCell& a, const FoldCell& b) { return a.fold < b.fold; });
            sb.metrics = eval::aggregate(ms);
            rr.seeds.push_back(std::move(sb));
        }
        rr.pooled = eval::aggregate(pooled);
        rep.rows.push_back(std::move(rr));
    }

    if (!spec.out_dir.empty()) {
        fs::create_directories(spec.out_dir);
        std::ofstream(fs::path(spec.out_dir) / "report.json") << rep.to_json();
        std::ofstream(fs::path(spec.out_dir) / "table.txt") << rep.to_table();
    }
    return rep;
}

// ---------------------------------------------------------------------------
// lambda sweep
// ---------------------------------------------------------------------------

std::vector<SweepCell> sweep_lambda(ExperimentSpec spec, const std::vector<double>& grid) {
    if (grid.empty()) throw std::invalid_argument("sweep: empty lambda grid");
    spec.rows = {"ditl-intermediate"};
    const std::string base_out = spec.out_dir;
    std::vector<SweepCell> cells;
    for (double lam : grid) {
        spec.lambda_active = lam;
        if (!base_out.empty()) {
            char sub[48];
            std::snprintf(sub, sizeof sub, "lambda_%.2f", lam);
            spec.out_dir = (fs::path(base_out) / sub).string();
        }
        auto rep = run(spec);
        cells.push_back({lam, rep.rows.front().pooled});
    }
    if (!base_out.empty()) {
        fs::create_directories(base_out);
        std::ofstream(fs::path(base_out) / "sweep.txt") << sweep_table(cells);
    }
    return cells;
}

std::string sweep_table(const std::vector<SweepCell>& cells) {
    std::ostringstream os;
    os << "lambda     ACC (%)        AUC (%)        MCC (%)\n";
    for (const auto& c : cells) {
        char line[160];
        std::snprintf(line, sizeof line, "%-8.2f %14s %14s %14s\n", c.lambda,
                      eval::format_mean_se(c.pooled.acc_mean, c.pooled.acc_se).c_str(),
                      eval::format_mean_se(c.pooled.auc_mean, c.pooled.auc_se).c_str(),
                      eval::format_mean_se(c.pooled.mcc_mean, c.pooled.mcc_se).c_str());
        os << line;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// explainability exports
// ---------------------------------------------------------------------------

namespace {

Tensor slice_hw(const Tensor& vol3, std::int64_t z) {
    Tensor out(Shape{vol3.shape()[0], vol3.shape()[1]});
    for (std::int64_t x = 0; x < vol3.shape()[0]; ++x)
        for (std::int64_t y = 0; y < vol3.shape()[1]; ++y) out[x * vol3.shape()[1] + y] = vol3[vol3.at3(x, y, z)];
    return out;
}

Tensor drop_channel(const Tensor& v) {  // [1,H,W,D] -> [H,W,D]
    return Tensor(Shape{v.shape()[1], v.shape()[2], v.shape()[3]}, v.vec());
}

}  // namespace

void export_explainability(const ExplainRequest& req) {
    if (req.sample_ids.empty()) throw std::invalid_argument("explain: choose at least one sample id");
    models::ModelConfig mcfg;
    models::ModelVariant variant = models::load_variant(req.checkpoint_dir, mcfg);
    phantom::Dataset ds = phantom::load_dataset(req.dataset_dir);
    phantom::Processed proc = phantom::preprocess(ds);

    int fold = 0, folds_k = 5;
    bool mask_input = false;
    {
        std::ifstream side(fs::path(req.checkpoint_dir) / "context.json");
        if (side) {
            json j = json::parse(side);
            fold = j.value("fold", 0);
            folds_k = j.value("folds_k", 5);
            mask_input = j.value("mask_input", false);
        }
    }
    std::vector<int> labels;
    for (const auto& s : ds.samples) labels.push_back(s.label);
    auto folds = eval::stratified_folds(labels, folds_k, ds.spec.seed);
    train::FoldData fd = train::make_fold_data(ds, proc, folds[static_cast<std::size_t>(fold)], mask_input);

    fs::create_directories(req.out_dir);
    const bool has_conv = variant.kind != models::VariantKind::UnimodalClinical;
    const bool has_clinical = variant.kind != models::VariantKind::UnimodalCT;

    for (int id : req.sample_ids) {
        if (id < 0 || id >= static_cast<int>(ds.samples.size()))
            throw std::invalid_argument("explain: sample id " + std::to_string(id) + " out of range");
        const auto uid = static_cast<std::size_t>(id);
        fs::path sdir = fs::path(req.out_dir) / ("sample_" + std::to_string(id));
        fs::create_directories(sdir);

        Tensor vol = train::imaging_input(fd, id);
        Tensor clin = train::clinical_input(fd, id);
        Tensor probs = models::predict_probs(variant, vol, clin, mcfg);
        const int pred = eval::argmax_class(probs.vec());

        Tensor vol3 = drop_channel(vol);
        for (std::int64_t z = 0; z < vol3.shape()[2]; ++z) {
            char name[48];
            std::snprintf(name, sizeof name, "ct_z%02lld.pgm", static_cast<long long>(z));
            xai::write_pgm((sdir / name).string(), slice_hw(vol3, z), 0.0, 1.0);
            std::snprintf(name, sizeof name, "overlay_z%02lld.ppm", static_cast<long long>(z));
            xai::write_overlay_ppm((sdir / name).string(), slice_hw(vol3, z), slice_hw(proc.m1[uid], z),
                                   slice_hw(proc.m2[uid], z));
        }

        if (has_conv) {
            // exported saliency explains the model's own decision
            xai::Heatmap h = xai::gradcam(variant, vol, clin, pred, mcfg);
            save_tensor((sdir / "heatmap.t64").string(), h.values);
            for (std::int64_t z = 0; z < h.values.shape()[2]; ++z) {
                char name[48];
                std::snprintf(name, sizeof name, "heatmap_z%02lld.pgm", static_cast<long long>(z));
                xai::write_pgm((sdir / name).string(), slice_hw(h.values, z), 0.0, 1.0);
            }
        }

        if (has_clinical) {
            std::vector<Tensor> background;
            for (int tr : fd.split.train) {
                background.push_back(train::clinical_input(fd, tr));
                if (background.size() >= 64) break;
            }
            auto spans = phantom::field_spans(ds.schema);
            std::vector<xai::FeatureGroup> groups;
            for (const auto& sp : spans) groups.push_back({sp.name, sp.lo, sp.hi});
            auto value = [&](const Tensor& xc) { return models::predict_probs(variant, vol, xc, mcfg)[1]; };
            auto rep = xai::shapley(value, clin, background, groups);

            std::ofstream tsv(sdir / "attributions.tsv");
            tsv.precision(12);
            tsv << "rank\tfeature\tshapley_value\n";
            for (std::size_t r = 0; r < rep.ranking.size(); ++r) {
                const int gi = rep.ranking[r];
                tsv << (r + 1) << "\t" << rep.names[static_cast<std::size_t>(gi)] << "\t"
                    << rep.values[static_cast<std::size_t>(gi)] << "\n";
            }
            double sum = 0.0;
            for (double v : rep.values) sum += v;
            tsv << "# efficiency: sum=" << sum << " prediction-baseline=" << (rep.prediction - rep.baseline)
                << " |difference|=" << std::abs(sum - (rep.prediction - rep.baseline)) << "\n";
        }

        json meta = {{"sample", id},
                     {"label", ds.samples[uid].label},
                     {"predicted_class", pred},
                     {"probs", probs.vec()},
                     {"variant", models::variant_kind_name(variant.kind)}};
        std::ofstream(sdir / "meta.json") << meta.dump(2) << "\n";
    }
}

}  // namespace ditl::runner

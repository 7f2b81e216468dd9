#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ditl/eval.hpp"
#include "ditl/phantom.hpp"
#include "ditl/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// exit codes: 0 ok, 2 usage, 3 config, 4 io, 5 data, 1 internal
struct CategorizedError : std::runtime_error {
    CategorizedError(std::string cat, const std::string& msg, int code)
        : std::runtime_error(msg), category(std::move(cat)), exit_code(code) {}
    std::string category;
    int exit_code;
};

std::string default_out_root() {
    const char* env = std::getenv("DITL_OUT_ROOT");
    return env && *env ? env : "out";
}

void apply_config_file(ditl::runner::ExperimentSpec& spec, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CategorizedError("io", "cannot open config file: " + path, 4);
    json j;
    try {
        j = json::parse(in);
    } catch (const std::exception& e) {
        throw CategorizedError("config", "config parse error in " + path + ": " + e.what(), 3);
    }
    auto& d = spec.dataset;
    if (j.contains("dataset")) {
        const auto& jd = j["dataset"];
        d.n_samples = jd.value("n_samples", d.n_samples);
        if (jd.contains("extents")) {
            auto e = jd["extents"].get<std::vector<std::int64_t>>();
            if (e.size() != 3) throw CategorizedError("config", "dataset.extents needs 3 entries", 3);
            d.extents = {e[0], e[1], e[2]};
        }
        d.positive_rate = jd.value("positive_rate", d.positive_rate);
        d.alpha_img = jd.value("alpha_img", d.alpha_img);
        d.alpha_clin = jd.value("alpha_clin", d.alpha_clin);
        d.noise = jd.value("noise", d.noise);
        d.seed = jd.value("seed", d.seed);
    }
    if (j.contains("rows")) spec.rows = j["rows"].get<std::vector<std::string>>();
    spec.folds = j.value("folds", spec.folds);
    if (j.contains("model_seeds")) spec.model_seeds = j["model_seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("train")) {
        const auto& jt = j["train"];
        auto& t = spec.train;
        t.lr = jt.value("lr", t.lr);
        t.weight_decay = jt.value("weight_decay", t.weight_decay);
        t.warmup_epochs = jt.value("warmup_epochs", t.warmup_epochs);
        t.max_epochs = jt.value("max_epochs", t.max_epochs);
        t.patience = jt.value("patience", t.patience);
        t.batch_size = jt.value("batch_size", t.batch_size);
        t.augment = jt.value("augment", t.augment);
        t.warm_start = jt.value("warm_start", t.warm_start);
        t.freeze_encoders = jt.value("freeze_encoders", t.freeze_encoders);
    }
    if (j.contains("model")) {
        const auto& jm = j["model"];
        auto& m = spec.model;
        if (jm.contains("ct_channels")) m.ct.channels = jm["ct_channels"].get<std::vector<int>>();
        m.ct.kernel = jm.value("ct_kernel", m.ct.kernel);
        m.ct.feat_width = jm.value("ct_feat_width", m.ct.feat_width);
        if (jm.contains("clinical_hidden")) m.clinical.hidden = jm["clinical_hidden"].get<std::vector<int>>();
        if (jm.contains("fusion_hidden")) m.fusion.hidden = jm["fusion_hidden"].get<std::vector<int>>();
    }
    spec.lambda_active = j.value("lambda_active", spec.lambda_active);
    spec.jobs = j.value("jobs", spec.jobs);
    spec.save_checkpoints = j.value("save_checkpoints", spec.save_checkpoints);
}

int dispatch(int argc, char** argv) {
    CLI::App app{"multimodal doctor-in-the-loop experiments on synthetic chest phantoms"};
    app.require_subcommand(1);

    // ---- generate ----
    auto* gen = app.add_subcommand("generate", "generate a dataset directory");
    ditl::phantom::DatasetSpec dspec;
    std::string gen_out = (fs::path(default_out_root()) / "dataset").string();
    int gen_folds = 5;
    gen->add_option("--n", dspec.n_samples, "number of samples");
    std::vector<std::int64_t> gen_extents;
    gen->add_option("--extents", gen_extents, "volume extents H W D")->expected(3);
    gen->add_option("--positive-rate", dspec.positive_rate, "positive class rate");
    gen->add_option("--alpha-img", dspec.alpha_img, "imaging signal strength");
    gen->add_option("--alpha-clin", dspec.alpha_clin, "clinical signal strength");
    gen->add_option("--noise", dspec.noise, "label noise level");
    gen->add_option("--seed", dspec.seed, "dataset seed");
    gen->add_option("--folds", gen_folds, "stratified folds recorded in the manifest");
    gen->add_option("-o,--out", gen_out, "output directory");

    // ---- run ----
    auto* runc = app.add_subcommand("run", "run experiment rows with cross-validation");
    ditl::runner::ExperimentSpec spec;
    spec.out_dir = (fs::path(default_out_root()) / "run").string();
    std::string config_path, run_out_flag, dataset_path;
    std::vector<std::string> rows_flag;
    std::vector<std::uint64_t> seeds_flag;
    int jobs_flag = -1, folds_flag = -1, max_epochs_flag = -1;
    runc->add_option("-c,--config", config_path, "JSON config file (flags override file values)");
    runc->add_option("--dataset-dir", dataset_path, "load dataset from directory instead of generating");
    runc->add_option("--rows", rows_flag, "experiment rows to run");
    runc->add_option("--model-seeds", seeds_flag, "model seeds");
    runc->add_option("--folds", folds_flag, "cross-validation folds");
    runc->add_option("--jobs", jobs_flag, "parallel (seed,fold) workers");
    runc->add_option("--max-epochs", max_epochs_flag, "cap on epochs per phase");
    runc->add_option("-o,--out", run_out_flag, "output directory");

    // ---- explain ----
    auto* expl = app.add_subcommand("explain", "export heatmaps and clinical attributions");
    ditl::runner::ExplainRequest req;
    req.out_dir = (fs::path(default_out_root()) / "explain").string();
    expl->add_option("--checkpoint", req.checkpoint_dir, "checkpoint directory")->required();
    expl->add_option("--dataset-dir", req.dataset_dir, "dataset directory")->required();
    expl->add_option("--samples", req.sample_ids, "sample ids")->required();
    expl->add_option("-o,--out", req.out_dir, "output directory");

    // ---- sweep ----
    auto* swp = app.add_subcommand("sweep", "lambda grid over the intermediate-fusion row");
    std::string sweep_config, sweep_out;
    double lo = 0.1, hi = 2.0, step = 0.1;
    swp->add_option("-c,--config", sweep_config, "JSON config file");
    swp->add_option("--from", lo, "grid start");
    swp->add_option("--to", hi, "grid end (inclusive)");
    swp->add_option("--step", step, "grid step");
    swp->add_option("-o,--out", sweep_out, "output directory");

    // ---- report ----
    auto* repc = app.add_subcommand("report", "re-render the table from a report.json");
    std::string report_path;
    repc->add_option("report", report_path, "path to report.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (gen->parsed()) {
        if (!gen_extents.empty()) dspec.extents = {gen_extents[0], gen_extents[1], gen_extents[2]};
        auto ds = ditl::phantom::generate(dspec);
        std::vector<int> labels;
        for (const auto& s : ds.samples) labels.push_back(s.label);
        auto folds = ditl::eval::stratified_folds(labels, gen_folds, dspec.seed);
        json fj;
        fj["k"] = gen_folds;
        fj["seed"] = dspec.seed;
        json assignment = json::array();
        for (const auto& f : folds)
            assignment.push_back({{"train", f.train}, {"validation", f.validation}, {"test", f.test}});
        fj["splits"] = assignment;
        ditl::phantom::save_dataset(ds, gen_out, fj.dump());
        std::cout << "wrote " << ds.samples.size() << " samples to " << gen_out << "\n";
        return 0;
    }

    if (runc->parsed()) {
        if (!config_path.empty()) apply_config_file(spec, config_path);
        if (!dataset_path.empty()) spec.dataset_path = dataset_path;
        if (!rows_flag.empty()) spec.rows = rows_flag;
        if (!seeds_flag.empty()) spec.model_seeds = seeds_flag;
        if (folds_flag > 0) spec.folds = folds_flag;
        if (jobs_flag >= 0) spec.jobs = jobs_flag;
        if (max_epochs_flag > 0) spec.train.max_epochs = max_epochs_flag;
        if (!run_out_flag.empty()) spec.out_dir = run_out_flag;
        for (const auto& r : spec.rows)
            if (!ditl::runner::is_known_row(r)) throw CategorizedError("usage", "invalid row name: " + r, 2);
        auto rep = ditl::runner::run(spec);
        std::cout << rep.to_table();
        std::cout << "report: " << (fs::path(spec.out_dir) / "report.json").string() << "\n";
        return 0;
    }

    if (expl->parsed()) {
        ditl::runner::export_explainability(req);
        std::cout << "explainability artifacts in " << req.out_dir << "\n";
        return 0;
    }

    if (swp->parsed()) {
        ditl::runner::ExperimentSpec sp;
        if (!sweep_config.empty()) apply_config_file(sp, sweep_config);
        if (!sweep_out.empty()) sp.out_dir = sweep_out;
        else if (sp.out_dir.empty()) sp.out_dir = (fs::path(default_out_root()) / "sweep").string();
        std::vector<double> grid;
        for (double lam = lo; lam <= hi + 1e-9; lam += step) grid.push_back(lam);
        auto cells = ditl::runner::sweep_lambda(sp, grid);
        std::cout << ditl::runner::sweep_table(cells);
        return 0;
    }

    if (repc->parsed()) {
        std::ifstream in(report_path);
        if (!in) throw CategorizedError("io", "cannot open report: " + report_path, 4);
        json j = json::parse(in);
        std::cout << "experiment                     ACC (%)        AUC (%)        MCC (%)\n";
        std::cout << "---------------------------------------------------------------------\n";
        for (auto& [row, rj] : j.at("rows").items()) {
            auto fmt = [](const json& m) {
                return ditl::eval::format_mean_se(m.at("mean").get<double>(), m.at("se").get<double>());
            };
            char line[160];
            std::snprintf(line, sizeof line, "%-28s %14s %14s %14s\n", row.c_str(),
                          fmt(rj.at("pooled").at("acc")).c_str(), fmt(rj.at("pooled").at("auc")).c_str(),
                          fmt(rj.at("pooled").at("mcc")).c_str());
            std::cout << line;
        }
        return 0;
    }
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const CategorizedError& e) {
        std::cerr << json{{"category", e.category}, {"message", e.what()}}.dump() << "\n";
        return e.exit_code;
    } catch (const std::invalid_argument& e) {
        std::cerr << json{{"category", "config"}, {"message", e.what()}}.dump() << "\n";
        return 3;
    } catch (const std::runtime_error& e) {
        std::cerr << json{{"category", "io"}, {"message", e.what()}}.dump() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << json{{"category", "internal"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ditl/eval.hpp"
#include "ditl/models.hpp"
#include "ditl/phantom.hpp"
#include "ditl/train.hpp"

namespace ditl::runner {

// Fixed row naming: unimodal-ct, unimodal-clinical, and
// {ditl|xai-guide|segmentation}-{early|intermediate|late}.
const std::vector<std::string>& all_rows();
bool is_known_row(const std::string& row);

struct ExperimentSpec {
    phantom::DatasetSpec dataset;
    std::string dataset_path;  // when set, load this directory instead of generating
    std::vector<std::string> rows = all_rows();
    int folds = 5;
    std::vector<std::uint64_t> model_seeds{1};
    train::TrainConfig train;
    models::ModelConfig model;
    phantom::PreprocessOptions preprocess;
    double lambda_active = 1.0;  // weight used wherever the alignment loss is on
    std::string out_dir;
    int jobs = 0;  // 0 = hardware concurrency
    bool save_checkpoints = true;
};

struct FoldCell {
    int fold = 0;
    double acc = 0, auc = 0, mcc = 0;
    std::vector<train::PhaseResult> phases;  // phases trained for this row in this cell
};

struct SeedBlock {
    std::uint64_t seed = 0;
    std::vector<FoldCell> cells;
    eval::MetricSet metrics;  // aggregated over folds
};

struct RowReport {
    std::string row;
    std::vector<SeedBlock> seeds;
    eval::MetricSet pooled;  // over all (fold, seed) cells
};

struct ExperimentReport {
    std::string config_json;  // resolved spec, for provenance / re-running
    std::uint64_t config_hash = 0;
    std::vector<RowReport> rows;

    const RowReport& row(const std::string& name) const;
    std::string to_json() const;    // deterministic body, no timestamps
    std::string to_table() const;   // Table-1-shaped text
};

// Generates or loads the dataset, builds folds once, runs every selected row
// per (model seed, fold) with shared trained components, writes report and
// artifacts into out_dir (unless empty).
ExperimentReport run(const ExperimentSpec& spec);

// Re-runs the intermediate-fusion family row once per lambda value.
struct SweepCell {
    double lambda = 0.0;
    eval::MetricSet pooled;
};
std::vector<SweepCell> sweep_lambda(ExperimentSpec spec, const std::vector<double>& grid);
std::string sweep_table(const std::vector<SweepCell>& cells);

// Writes CT slice images with mask overlays, heatmap slices, the 3-D heatmap
// tensor, and (for models with a clinical branch) a ranked Shapley table.
struct ExplainRequest {
    std::string checkpoint_dir;
    std::string dataset_dir;
    std::vector<int> sample_ids;
    std::string out_dir;
};
void export_explainability(const ExplainRequest& req);

std::uint64_t fnv1a64(const std::string& s);

}  // namespace ditl::runner

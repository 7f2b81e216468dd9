#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ditl/rng.hpp"
#include "ditl/tensor.hpp"

namespace ditl::phantom {

// ---------------------------------------------------------------------------
// clinical schema
// ---------------------------------------------------------------------------

enum class FieldKind { Categorical, Ordinal, Numeric };

struct FieldSpec {
    std::string name;
    FieldKind kind;
    std::vector<std::string> levels;  // categorical level names / ordinal ranks low-to-high
};

struct ClinicalSchema {
    std::vector<FieldSpec> fields;
    std::int64_t encoded_width() const;
};

// 3 categorical (3-5 levels), 2 ordinal, 4 numeric; a mix of informative
// fields and decoys.
ClinicalSchema reference_schema();

// Raw values, one slot per schema field: level/rank index for categorical and
// ordinal fields, the measurement itself for numeric ones.
struct ClinicalRecord {
    std::vector<double> values;
};

// Encoded column span of one raw variable, [lo, hi).
struct FieldSpan {
    std::string name;
    int lo = 0;
    int hi = 0;
};
std::vector<FieldSpan> field_spans(const ClinicalSchema& schema);

// ---------------------------------------------------------------------------
// samples
// ---------------------------------------------------------------------------

struct Volume {
    Tensor intensities;               // [H,W,D], synthetic Hounsfield-like units
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm, strictly positive
};

struct MaskPair {
    Tensor m1;  // lung analog, binary [H,W,D]
    Tensor m2;  // lesion analog, binary, nested inside m1
};

struct Sample {
    Volume volume;
    MaskPair masks;
    ClinicalRecord clinical;
    int label = 0;  // 1 = pathological-response analog
};

struct DatasetSpec {
    std::int64_t n_samples = 200;
    std::array<std::int64_t, 3> extents{32, 32, 16};
    double positive_rate = 0.36;
    double alpha_img = 1.0;   // weight of the lesion-contrast latent in the label
    double alpha_clin = 1.0;  // weight of the hidden clinical score
    double noise = 0.5;       // sd of the label-logit noise
    std::uint64_t seed = 42;
};

struct Dataset {
    DatasetSpec spec;
    ClinicalSchema schema;
    std::vector<Sample> samples;
};

// Deterministic in the spec. Each sample gets an ellipsoidal lung (M1) with a
// smaller lesion blob (M2) inside; the label is a fixed-rate quantile cut of
// alpha_img * contrast + alpha_clin * clinical_score + noise.
Dataset generate(const DatasetSpec& spec);

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

// clip to [center - width/2, center + width/2], then map linearly onto [0,1]
Volume window_and_normalize(const Volume& v, double center = -300.0, double width = 1200.0);

// nearest-neighbor regridding onto a new spacing; pass the same index map to
// masks via resample_sample
Volume resample_nn(const Volume& v, const std::array<double, 3>& target_spacing);
Sample resample_sample(const Sample& s, const std::array<double, 3>& target_spacing);

struct Box {
    std::array<std::int64_t, 3> lo{0, 0, 0};
    std::array<std::int64_t, 3> hi{0, 0, 0};  // exclusive
    std::array<std::int64_t, 3> size() const {
        return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
    }
};

// One box for the whole dataset: the union of every sample's M1 extent plus
// padding, clamped to bounds, then widened so each side is a multiple of
// `extent_multiple` (pooling requirement).
Box global_bbox(const Dataset& ds, int pad, int extent_multiple);
Tensor crop(const Tensor& t, const Box& box);

struct PreprocessOptions {
    double hu_center = -300.0;
    double hu_width = 1200.0;
    std::array<double, 3> target_spacing{1.0, 1.0, 1.0};
    int crop_pad = 2;
    int extent_multiple = 8;  // 2^conv-blocks
};

struct Processed {
    std::vector<Tensor> volumes;  // [1,H,W,D], values in [0,1]
    std::vector<Tensor> m1;       // [H,W,D] binary
    std::vector<Tensor> m2;
    std::vector<int> labels;
    Shape extent;  // {H,W,D} after cropping
    Box box;
};

Processed preprocess(const Dataset& ds, const PreprocessOptions& opt = {});

// integer shifts up to +-3 per axis and an optional flip along the first
// (vertical) axis, identical on volume and both masks; zero fill at borders
struct Augmented {
    Tensor volume;  // [1,H,W,D]
    Tensor m1, m2;  // [H,W,D]
};
struct AugmentParams {
    std::int64_t sx = 0, sy = 0, sz = 0;
    bool flip = false;
};
AugmentParams draw_augment(Rng& rng, int max_shift = 3);
Augmented apply_augment(const Tensor& volume, const Tensor& m1, const Tensor& m2, const AugmentParams& p);
Augmented augment(const Tensor& volume, const Tensor& m1, const Tensor& m2, Rng& rng, int max_shift = 3);

// ---------------------------------------------------------------------------
// clinical encoding (statistics from the training split only)
// ---------------------------------------------------------------------------

struct EncodeStats {
    // per categorical field: which levels were observed in training
    std::vector<std::vector<bool>> observed_levels;
    // per numeric field: training mean / population sd
    std::vector<double> mean;
    std::vector<double> stddev;
};

EncodeStats compute_encode_stats(const Dataset& ds, const std::vector<int>& train_indices);

struct EncodedClinical {
    Tensor matrix;  // [n, F]
    int unseen_categories = 0;  // schema levels never observed in training
};

EncodedClinical encode_clinical(const Dataset& ds, const EncodeStats& stats);
Tensor encoded_row(const Tensor& matrix, std::int64_t row);

// ---------------------------------------------------------------------------
// dataset directory: tensors per sample, one clinical/label table, a manifest
// ---------------------------------------------------------------------------

void save_dataset(const Dataset& ds, const std::string& dir, const std::string& folds_json = "");
Dataset load_dataset(const std::string& dir, std::string* folds_json_out = nullptr);

}  // namespace ditl::phantom

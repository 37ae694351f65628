#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cmc/cli/config.hpp"
#include "cmc/eval/metrics.hpp"
#include "cmc/train/training.hpp"
#include "cmc/volume/dataset.hpp"

namespace cmc {

struct SynthSummary {
    std::filesystem::path root;
    int count = 0;
    int positives = 0;
};

/// Writes `count` phantoms as slice directories `<root>/<scan_id>/`, their
/// lesion masks under `<root>/masks/<scan_id>/`, `labels.csv` and
/// `synth.json`. Throws Refused when `root` exists and is not empty unless
/// `force` is set, in which case it is cleared first.
SynthSummary cmd_synth_data(const RunConfig& cfg, const std::filesystem::path& root, bool force);

/// Train/val records of a dataset root: `manifest.csv` when present,
/// otherwise a stratified split of `labels.csv` by data.train_fraction.
std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>> dataset_split(const RunConfig& cfg);

/// Loads scans and resamples them to data.volume_shape.
std::vector<LabeledScan> load_scans(const std::vector<ScanRecord>& records, const Shape3& shape);

/// Trains into cfg.output_dir and stamps the resolved config there.
TrainingResult cmd_train(const RunConfig& cfg);

/// A checkpoint restored with the model and evaluation policy of the run
/// that produced it (falling back to `cfg` when it carries no config).
/// eval.resolution of `cfg`, when nonzero, replaces the evaluation
/// resolution.
struct LoadedModel {
    std::unique_ptr<Model> model;
    AugmentationPolicy policy;
    Shape3 volume_shape;
    std::string config_hash;
};
LoadedModel load_model(const std::filesystem::path& checkpoint, const RunConfig& cfg);

/// Evaluates one checkpoint on eval.split; writes report.json and
/// roc_class<k>.csv into out_dir.
EvalReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& out_dir);

/// Averages the checkpoints' probabilities (with eval.tta_views TTA views);
/// same outputs as cmd_eval.
EvalReport cmd_ensemble_eval(const RunConfig& cfg, const std::vector<std::filesystem::path>& checkpoints,
                             const std::filesystem::path& out_dir);

struct Prediction {
    std::string scan_id;
    RowVector probabilities;
};

/// Per-scan probabilities written to `out_csv` as scan_id,p0,p1.
std::vector<Prediction> cmd_predict(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                    const std::vector<ScanRecord>& scans, const std::filesystem::path& out_csv);

struct CamSummary {
    int scans = 0;
    /// Mean over scans with a lesion mask of (mean heat inside the mask -
    /// mean heat outside); NaN when no masks were found.
    double mean_lesion_gap = 0;
    int scans_with_masks = 0;
};

/// CAM overlays `<out_dir>/<scan_id>/cam_<idx>.png` for class-1 scans of
/// eval.split (at most `max_scans`), plus cam_summary.json.
CamSummary cmd_cam(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                   const std::filesystem::path& out_dir, int max_scans, int target_class = 1);

}  // namespace cmc

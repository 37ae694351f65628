#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmc/augment/augmentation.hpp"
#include "cmc/loss/losses.hpp"
#include "cmc/mixing/protocol.hpp"
#include "cmc/model/model.hpp"
#include "cmc/train/optimizer.hpp"

namespace cmc {

struct TrainConfig {
    int epochs = 100;
    double base_lr = 1e-4;
    /// Epoch fractions in (0, 1), sorted; the rate divides by 10 at each.
    std::vector<double> lr_drop_points{0.3, 0.8};
    AdamConfig adam;
    std::uint64_t seed = 0;
    /// Logical data-parallel workers.
    int workers = 1;
    /// Scans per worker per step.
    int local_batch = 1;
    Transport transport = Transport::InProcess;
    double tau = 0.1;
    double alpha = 0.2;
    MixPolicy mix_policy = MixPolicy::Hybrid;
    loss::LossWeights loss_weights;
    loss::PositiveCount positives = loss::PositiveCount::Scans;
    AugmentationPolicy augmentation;

    void validate() const;
};

/// Step learning rate: base_lr / 10^k where k counts drop epochs
/// round(fraction * epochs) that are <= epoch.
double lr_at(int epoch, const TrainConfig& cfg);

/// A scan as seen by the trainer. `uid` seeds its augmentation stream, so
/// the same scan draws the same views regardless of worker placement.
struct TrainSample {
    const CTVolume* volume = nullptr;
    int label = 0;
    std::uint64_t uid = 0;
};

struct TrainState {
    Model model;
    Adam optimizer;
};

struct StepReport {
    double l_con = 0, l_mix = 0, l_clf = 0, l_total = 0;
    /// Raw plus mixed samples forwarded by each worker.
    int forwarded_per_worker = 0;
    int rows = 0;
};

/// One synchronized optimisation step. Each worker draws two views per
/// scan, the views are mixed across all workers by gather_dispatch, every
/// worker forwards its raw and mixed samples, the joint loss is evaluated
/// over the gathered batch and worker gradients are averaged before one
/// Adam update. Throws TrainingDiverged on a non-finite loss or gradient.
StepReport train_step(TrainState& state, const TrainConfig& cfg,
                      std::span<const std::vector<TrainSample>> worker_samples, std::uint64_t epoch,
                      std::uint64_t step, double lr);

/// A scan already resampled to the model input shape.
struct LabeledScan {
    std::string scan_id;
    int label = 0;
    CTVolume volume;
};

struct MetricRow {
    int epoch = 0;
    double lr = 0;
    double l_con = 0, l_mix = 0, l_clf = 0, l_total = 0;
    double val_macro_f1 = 0, val_f1_0 = 0, val_f1_1 = 0;

    bool operator==(const MetricRow&) const = default;
};

std::string metrics_header();
std::string format_metric_row(const MetricRow& row);

struct RunOptions {
    std::filesystem::path out_dir;
    /// Continue from `last.ckpt` in out_dir when present.
    bool resume = true;
    /// Stop once this epoch has completed (simulated interruption).
    std::optional<int> stop_after_epoch;
    /// Resolved run configuration, stored in every checkpoint.
    nlohmann::json config = nlohmann::json::object();
    std::string config_hash;
    /// Called on a freshly initialised model (e.g. to load pretrained
    /// weights); not called when resuming.
    std::function<void(Model&)> init;
    bool verbose = false;
};

struct TrainingResult {
    std::vector<MetricRow> history;
    int best_epoch = -1;
    double best_macro_f1 = -1;
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
};

/// Seeded permutation sampler over `count` scans for one epoch.
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch);

/// Splits an epoch order into steps of workers x local_batch scans. A
/// short tail is spread evenly over workers when it divides, otherwise it
/// is padded from the start of the order.
std::vector<std::vector<std::vector<std::size_t>>> plan_epoch(std::span<const std::size_t> order, int workers,
                                                              int local_batch);

/// Full training run with per-epoch validation. Writes metrics.csv,
/// last.ckpt and best.ckpt (highest validation macro F1) to out_dir.
TrainingResult run_training(const ModelConfig& model_cfg, const TrainConfig& cfg, std::span<const LabeledScan> train,
                            std::span<const LabeledScan> val, const RunOptions& options);

}  // namespace cmc

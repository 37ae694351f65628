#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cmc/augment/augmentation.hpp"
#include "cmc/model/model.hpp"

namespace cmc {

/// Class probabilities (1 x classes) of a volume that is already at the
/// model's input shape.
RowVector predict_prepared(const Model& model, const CTVolume& prepared);

/// Softmax of the eval transform of `v`.
RowVector predict(const Model& model, const CTVolume& v, const AugmentationPolicy& policy);

/// Unweighted mean of probability rows.
RowVector average_probabilities(std::span<const RowVector> rows);

/// Test-time augmentation: the eval transform plus `n_views` augmented
/// draws (tta_policy) of it, averaged; n_views >= 1. Views are seeded by
/// `seed`.
RowVector predict_tta(const Model& model, const CTVolume& v, const AugmentationPolicy& policy, int n_views,
                      std::uint64_t seed = 0);

/// One ensemble member: a model with its own evaluation policy.
struct EnsembleMember {
    const Model* model = nullptr;
    AugmentationPolicy policy;
};

/// Unweighted mean of the members' (optionally TTA) probabilities.
RowVector ensemble_predict(std::span<const EnsembleMember> members, const CTVolume& v, int tta_views = 0,
                           std::uint64_t seed = 0);

/// Class activation map: the positive part of the classifier-weighted sum
/// of final-stage channels, upsampled to the input shape and min-max
/// normalised; constant maps become all zero.
struct CAMVolume {
    Volume<Real> heatmap;
    int target_class = 1;
};

/// Heatmap from a token-major feature grid (tokens x C) over `grid`.
CAMVolume cam_from_features(const Matrix& features, const Shape3& grid, const RowVector& class_weights,
                            const Shape3& output, int target_class);

/// CAM for a prepared volume (already at the model's input shape).
CAMVolume compute_cam(const Model& model, const CTVolume& prepared, int target_class);

/// Per-slice overlays `<dir>/cam_<idx>.png`: grayscale slice blended with
/// a fire colormap of the heatmap at alpha 0.4.
void write_cam_overlays(const CTVolume& prepared, const CAMVolume& cam, const std::filesystem::path& dir);

}  // namespace cmc

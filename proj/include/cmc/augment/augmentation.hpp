#pragma once

#include <vector>

#include "cmc/core/random.hpp"
#include "cmc/volume/resample.hpp"
#include "cmc/volume/volume.hpp"

namespace cmc {

enum class AugmentMode { Volume3D, Slicewise };

/// Stochastic augmentation ranges. Every range is symmetric about the
/// identity transform; zero ranges plus a unit crop scale give a pure
/// resize.
struct AugmentationPolicy {
    AugmentMode mode = AugmentMode::Volume3D;
    /// Area fraction range of the transverse random resized crop.
    double crop_scale_min = 0.7;
    double crop_scale_max = 1.0;
    /// Contiguous window along the slice axis.
    int depth_crop = 64;
    /// In-plane rotation drawn from [-rotation_degrees, rotation_degrees].
    double rotation_degrees = 10.0;
    /// Additive brightness offset in [-brightness, brightness].
    double brightness = 0.2;
    /// Contrast factor in [1 - contrast, 1 + contrast].
    double contrast = 0.2;
    int train_resolution = 192;
    int eval_resolution = 224;
    /// Fraction of the resized frame kept by the evaluation centre crop.
    double eval_center_crop = 1.0;

    void validate() const;
    /// Policy with every stochastic range collapsed.
    static AugmentationPolicy degenerate(int depth_crop, int resolution);
};

/// One slice-plane draw: crop window with rotation plus photometric jitter.
struct PlaneDraw {
    PlaneWindow window;
    double brightness = 0.0;
    double contrast = 1.0;
};

/// Full record of an augmentation draw. 3D mode has a single plane draw
/// shared by every slice; slicewise mode has one per output slice.
struct AugmentTrace {
    int depth_offset = 0;
    std::vector<PlaneDraw> planes;
};

struct ViewPair {
    CTVolume view_a;
    CTVolume view_b;
    int label = 0;
};

/// Shared geometric transform and jitter for every slice.
CTVolume augment_3d(const CTVolume& v, const AugmentationPolicy& policy, Rng& rng,
                    AugmentTrace* trace = nullptr);

/// Independent 2D transform and jitter per slice.
CTVolume augment_slicewise(const CTVolume& v, const AugmentationPolicy& policy, Rng& rng,
                           AugmentTrace* trace = nullptr);

/// Dispatch on policy.mode.
CTVolume augment(const CTVolume& v, const AugmentationPolicy& policy, Rng& rng,
                 AugmentTrace* trace = nullptr);

/// Replays a recorded draw; `augment(v, p, rng, &trace)` equals
/// `apply_trace(v, p, trace)` for the same policy.
CTVolume apply_trace(const CTVolume& v, const AugmentationPolicy& policy, const AugmentTrace& trace);

/// Two independent draws of the policy's augmenter.
ViewPair make_views(const CTVolume& v, int label, const AugmentationPolicy& policy, Rng& rng);

/// Deterministic evaluation transform: resize, centre crop to
/// eval_resolution and centre crop depth to depth_crop.
CTVolume eval_transform(const CTVolume& v, const AugmentationPolicy& policy);

/// Policy used for test-time views: training ranges with photometric
/// jitter halved.
AugmentationPolicy tta_policy(const AugmentationPolicy& policy);

}  // namespace cmc

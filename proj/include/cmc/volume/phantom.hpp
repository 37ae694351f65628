#pragma once

#include <cstdint>

#include "cmc/volume/dataset.hpp"
#include "cmc/volume/volume.hpp"

namespace cmc {

/// Geometry and intensity model of the synthetic chest phantom. Lungs are
/// two axis-aligned ellipsoids inside an elliptic body cylinder; lesions are
/// Gaussian blobs thresholded at half maximum into ellipsoidal masks.
struct PhantomConfig {
    Shape3 size{16, 64, 64};
    int lesion_count_min = 1;
    int lesion_count_max = 3;
    double lesion_intensity_min = 0.75;
    double lesion_intensity_max = 0.95;
    /// In-plane lesion radius as a fraction of the slice height.
    double lesion_radius_min = 0.08;
    double lesion_radius_max = 0.12;
    /// Lesion radius along the slice axis as a fraction of the depth.
    double lesion_depth_radius = 0.22;

    /// Lung semi-axes as fractions of (depth, height, width).
    double lung_radius_z = 0.46;
    double lung_radius_y = 0.34;
    double lung_radius_x = 0.19;
    /// Lung centres along x as fractions of the width (left, right).
    double lung_center_x_left = 0.29;
    double lung_center_x_right = 0.71;
    /// Relative per-scan jitter of lung radii.
    double lung_jitter = 0.08;

    double body_intensity = 0.55;
    double lung_intensity = 0.15;
    /// Uniform voxel noise amplitude; lung tissue stays within
    /// lung_intensity ± noise.
    double noise = 0.03;

    std::uint64_t seed = 0;
};

/// Upper edge of the lung-tissue intensity band. No class-0 voxel inside the
/// lungs exceeds it; every lesion voxel does.
double lung_band_max(const PhantomConfig& cfg);

struct Phantom {
    CTVolume volume;
    ScanRecord record;
    Mask lung_mask;
    Mask lesion_mask;
    int lesion_count = 0;
};

/// Deterministic phantom for (cfg, label). Throws InvalidConfig when the
/// lesions cannot be placed strictly inside the lungs.
Phantom generate_phantom(const PhantomConfig& cfg, int label);

/// Per-scan phantom config derived from a dataset seed and scan index.
PhantomConfig phantom_for_index(PhantomConfig base, std::uint64_t dataset_seed, int index);

}  // namespace cmc

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cmc/core/random.hpp"
#include "cmc/volume/volume.hpp"

namespace cmc {

using SoftLabel = Eigen::Matrix<Real, 2, 1>;

inline SoftLabel one_hot(int label) {
    SoftLabel y = SoftLabel::Zero();
    y[label] = 1;
    return y;
}

struct LabeledVolume {
    CTVolume volume;
    SoftLabel label = SoftLabel::Zero();
};

enum class MixStrategy { Mixup, Cutmix };

/// Which strategies a run may draw. Hybrid picks one of the two with equal
/// probability per step.
enum class MixPolicy { Hybrid, MixupOnly, CutmixOnly };

/// Identifies one synchronized mixing step. Every worker must present the
/// same tuple.
struct SeedTuple {
    std::uint64_t global_seed = 0;
    std::uint64_t epoch = 0;
    std::uint64_t step = 0;
    bool operator==(const SeedTuple&) const = default;
};

/// Per-step mixing record: one strategy, one coefficient and one pairing
/// for the whole gathered batch.
struct MixDecision {
    MixStrategy strategy = MixStrategy::Mixup;
    /// Weight of the sample itself; the partner gets 1 - lambda. For cutmix
    /// this is 1 - (box voxels / total voxels), exactly.
    Real lambda = 1;
    /// permutation[i] is the partner of sample i; no fixed points.
    std::vector<int> permutation;
    std::optional<Box3> cut_box;
    SeedTuple seed;
};

struct MixedBatch {
    std::vector<LabeledVolume> raw;
    std::vector<LabeledVolume> mixed;
};

/// Uniform random permutation of 0..n-1 without fixed points (n >= 2).
std::vector<int> sample_derangement(int n, Rng& rng);

/// Symmetric Beta(alpha, alpha) draw via two gamma variates.
Real sample_beta(Real alpha, Rng& rng);

/// Axis-aligned box whose per-axis extent scales with (1 - lambda)^(1/3),
/// placed uniformly inside the volume.
Box3 sample_cut_box(const Shape3& shape, Real lambda, Rng& rng);

/// Pure function of (batch_size, shape, seed, alpha, policy).
MixDecision sample_mix_decision(int batch_size, const Shape3& shape, const SeedTuple& seed, Real alpha,
                                MixPolicy policy = MixPolicy::Hybrid);

MixedBatch apply_mixup(std::span<const LabeledVolume> batch, const MixDecision& decision);
MixedBatch apply_cutmix(std::span<const LabeledVolume> batch, const MixDecision& decision);

/// Applies whichever strategy the decision holds.
MixedBatch apply_mix(std::span<const LabeledVolume> batch, const MixDecision& decision);

/// sample_mix_decision + apply_mix over one batch, in one process.
MixedBatch hybrid_mix(std::span<const LabeledVolume> batch, const SeedTuple& seed, Real alpha,
                      MixPolicy policy = MixPolicy::Hybrid, MixDecision* decision = nullptr);

}  // namespace cmc

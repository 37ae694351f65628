#include "cmc/mixing/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cmc {

std::vector<int> sample_derangement(int n, Rng& rng) {
    if (n < 2) throw InvalidArgument("a derangement needs at least 2 elements");
    std::vector<int> p(n);
    // Rejection from uniform permutations; expected ~e tries.
    for (;;) {
        std::iota(p.begin(), p.end(), 0);
        std::shuffle(p.begin(), p.end(), rng);
        bool fixed = false;
        for (int i = 0; i < n && !fixed; ++i) fixed = p[i] == i;
        if (!fixed) return p;
    }
}

Real sample_beta(Real alpha, Rng& rng) {
    if (!(alpha > 0)) throw InvalidArgument("Beta alpha must be > 0");
    std::gamma_distribution<Real> gamma(alpha, 1.0);
    const Real a = gamma(rng), b = gamma(rng);
    if (a + b == 0) return std::uniform_int_distribution<int>(0, 1)(rng);
    return a / (a + b);
}

Box3 sample_cut_box(const Shape3& shape, Real lambda, Rng& rng) {
    const Real side = std::cbrt(std::clamp<Real>(1 - lambda, 0, 1));
    auto extent = [&](int n) { return std::clamp(int(std::lround(side * n)), 0, n); };
    const int dz = extent(shape.depth), dy = extent(shape.height), dx = extent(shape.width);
    Box3 b;
    b.z0 = uniform_int(rng, 0, shape.depth - dz);
    b.y0 = uniform_int(rng, 0, shape.height - dy);
    b.x0 = uniform_int(rng, 0, shape.width - dx);
    b.z1 = b.z0 + dz;
    b.y1 = b.y0 + dy;
    b.x1 = b.x0 + dx;
    return b;
}

namespace {

Real box_lambda(const Box3& box, const Shape3& shape) {
    return 1 - Real(box.voxels()) / Real(shape.voxels());
}

void check_batch(std::span<const LabeledVolume> batch, const MixDecision& d) {
    if (batch.size() < 2) throw InvalidArgument("mixing needs at least 2 samples");
    if (d.permutation.size() != batch.size())
        throw InvalidArgument("permutation size does not match batch size");
    for (const auto& s : batch)
        if (!(s.volume.shape() == batch[0].volume.shape()))
            throw InvalidArgument("shape mismatch across batch: " + s.volume.shape().str() + " vs " +
                                  batch[0].volume.shape().str());
    for (int p : d.permutation)
        if (p < 0 || p >= int(batch.size())) throw InvalidArgument("permutation index out of range");
}

MixedBatch copy_raw(std::span<const LabeledVolume> batch) {
    MixedBatch out;
    out.raw.assign(batch.begin(), batch.end());
    out.mixed.reserve(batch.size());
    return out;
}

}  // namespace

MixDecision sample_mix_decision(int batch_size, const Shape3& shape, const SeedTuple& seed, Real alpha,
                                MixPolicy policy) {
    if (batch_size < 2) throw InvalidArgument("batch_size must be >= 2 to find a mixing partner");
    if (!(alpha > 0)) throw InvalidArgument("alpha must be > 0");
    auto rng = derive_rng({seed.global_seed, seed.epoch, seed.step, 0x313D});
    MixDecision d;
    d.seed = seed;
    const bool coin = std::bernoulli_distribution(0.5)(rng);
    d.strategy = policy == MixPolicy::MixupOnly    ? MixStrategy::Mixup
                 : policy == MixPolicy::CutmixOnly ? MixStrategy::Cutmix
                 : coin                            ? MixStrategy::Cutmix
                                                   : MixStrategy::Mixup;
    d.lambda = sample_beta(alpha, rng);
    d.permutation = sample_derangement(batch_size, rng);
    if (d.strategy == MixStrategy::Cutmix) {
        d.cut_box = sample_cut_box(shape, d.lambda, rng);
        d.lambda = box_lambda(*d.cut_box, shape);
    }
    return d;
}

MixedBatch apply_mixup(std::span<const LabeledVolume> batch, const MixDecision& d) {
    if (d.strategy != MixStrategy::Mixup) throw InvalidArgument("apply_mixup needs a mixup decision");
    check_batch(batch, d);
    const Real lam = d.lambda;
    auto out = copy_raw(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& self = batch[i];
        const auto& partner = batch[d.permutation[i]];
        LabeledVolume m;
        m.volume = CTVolume(self.volume.shape());
        m.volume.scan_id = self.volume.scan_id;
        m.volume.array() = lam * self.volume.array() + (1 - lam) * partner.volume.array();
        m.label = lam * self.label + (1 - lam) * partner.label;
        out.mixed.push_back(std::move(m));
    }
    return out;
}

MixedBatch apply_cutmix(std::span<const LabeledVolume> batch, const MixDecision& d) {
    if (d.strategy != MixStrategy::Cutmix) throw InvalidArgument("apply_cutmix needs a cutmix decision");
    if (!d.cut_box) throw InvalidArgument("cutmix decision has no cut box");
    check_batch(batch, d);
    const Shape3 shape = batch[0].volume.shape();
    const Box3& box = *d.cut_box;
    if (!box.within(shape)) throw InvalidArgument("cut box outside volume bounds " + shape.str());
    const Real lam = box_lambda(box, shape);
    auto out = copy_raw(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& partner = batch[d.permutation[i]];
        LabeledVolume m;
        m.volume = batch[i].volume;
        for (int t = box.z0; t < box.z1; ++t)
            m.volume.slice(t).block(box.y0, box.x0, box.y1 - box.y0, box.x1 - box.x0) =
                partner.volume.slice(t).block(box.y0, box.x0, box.y1 - box.y0, box.x1 - box.x0);
        m.label = lam * batch[i].label + (1 - lam) * partner.label;
        out.mixed.push_back(std::move(m));
    }
    return out;
}

MixedBatch apply_mix(std::span<const LabeledVolume> batch, const MixDecision& d) {
    return d.strategy == MixStrategy::Cutmix ? apply_cutmix(batch, d) : apply_mixup(batch, d);
}

MixedBatch hybrid_mix(std::span<const LabeledVolume> batch, const SeedTuple& seed, Real alpha, MixPolicy policy,
                      MixDecision* decision) {
    if (batch.empty()) throw InvalidArgument("empty batch");
    auto d = sample_mix_decision(int(batch.size()), batch[0].volume.shape(), seed, alpha, policy);
    auto out = apply_mix(batch, d);
    if (decision) *decision = std::move(d);
    return out;
}

}  // namespace cmc

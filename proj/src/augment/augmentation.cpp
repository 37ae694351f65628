#include "cmc/augment/augmentation.hpp"

#include <cmath>
#include <numbers>

namespace cmc {

void AugmentationPolicy::validate() const {
    if (!(0 < crop_scale_min && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
        throw InvalidArgument("crop scale range must satisfy 0 < min <= max <= 1");
    if (depth_crop < 1) throw InvalidArgument("depth_crop must be >= 1");
    if (rotation_degrees < 0 || brightness < 0 || contrast < 0 || contrast >= 1)
        throw InvalidArgument("rotation/brightness must be >= 0 and contrast in [0,1)");
    if (train_resolution < 1 || eval_resolution < 1)
        throw InvalidArgument("resolutions must be >= 1");
    if (!(eval_center_crop > 0 && eval_center_crop <= 1))
        throw InvalidArgument("eval_center_crop must lie in (0,1]");
}

AugmentationPolicy AugmentationPolicy::degenerate(int depth_crop, int resolution) {
    AugmentationPolicy p;
    p.crop_scale_min = p.crop_scale_max = 1.0;
    p.depth_crop = depth_crop;
    p.rotation_degrees = 0;
    p.brightness = 0;
    p.contrast = 0;
    p.train_resolution = p.eval_resolution = resolution;
    return p;
}

namespace {

void check_depth(const CTVolume& v, const AugmentationPolicy& policy) {
    policy.validate();
    if (v.empty()) throw InvalidArgument("augmenting an empty volume");
    if (v.depth() < policy.depth_crop)
        throw InvalidArgument("volume depth " + std::to_string(v.depth()) + " is smaller than depth_crop " +
                              std::to_string(policy.depth_crop));
}

PlaneDraw draw_plane(const CTVolume& v, const AugmentationPolicy& p, Rng& rng) {
    PlaneDraw d;
    const double side = std::sqrt(uniform(rng, p.crop_scale_min, p.crop_scale_max));
    d.window.height = side * v.height();
    d.window.width = side * v.width();
    d.window.y0 = uniform(rng, 0.0, v.height() - d.window.height);
    d.window.x0 = uniform(rng, 0.0, v.width() - d.window.width);
    d.window.angle = uniform(rng, -p.rotation_degrees, p.rotation_degrees) * std::numbers::pi / 180.0;
    d.brightness = uniform(rng, -p.brightness, p.brightness);
    d.contrast = uniform(rng, 1.0 - p.contrast, 1.0 + p.contrast);
    return d;
}

// c*v + ((1-c)*mean + b); exact identity for c = 1, b = 0.
void jitter(Eigen::Ref<Eigen::Array<Real, Eigen::Dynamic, 1>> values, double brightness, double contrast) {
    if (contrast == 1.0 && brightness == 0.0) return;
    const double shift = (1.0 - contrast) * values.mean() + brightness;
    values = (contrast * values + shift).max(0.0).min(1.0);
}

}  // namespace

CTVolume apply_trace(const CTVolume& v, const AugmentationPolicy& policy, const AugmentTrace& trace) {
    check_depth(v, policy);
    const int r = policy.train_resolution;
    CTVolume out(Shape3{policy.depth_crop, r, r});
    out.scan_id = v.scan_id;
    const bool shared = trace.planes.size() == 1;
    if (!shared && int(trace.planes.size()) != policy.depth_crop)
        throw InvalidArgument("trace must hold 1 or depth_crop plane draws");
    for (int t = 0; t < policy.depth_crop; ++t) {
        const auto& d = trace.planes[shared ? 0 : t];
        sample_plane<Real>(v.slice(trace.depth_offset + t), d.window, out.slice(t));
        if (!shared) {
            Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>> plane(out.slice(t).data(), out.plane());
            jitter(plane, d.brightness, d.contrast);
        }
    }
    if (shared) jitter(out.array(), trace.planes[0].brightness, trace.planes[0].contrast);
    out.array() = out.array().max(0.0).min(1.0);
    return out;
}

CTVolume augment_3d(const CTVolume& v, const AugmentationPolicy& policy, Rng& rng, AugmentTrace* trace) {
    check_depth(v, policy);
    AugmentTrace local;
    local.depth_offset = uniform_int(rng, 0, v.depth() - policy.depth_crop);
    local.planes.push_back(draw_plane(v, policy, rng));
    auto out = apply_trace(v, policy, local);
    if (trace) *trace = std::move(local);
    return out;
}

CTVolume augment_slicewise(const CTVolume& v, const AugmentationPolicy& policy, Rng& rng, AugmentTrace* trace) {
    check_depth(v, policy);
    AugmentTrace local;
    local.depth_offset = uniform_int(rng, 0, v.depth() - policy.depth_crop);
    for (int t = 0; t < policy.depth_crop; ++t) local.planes.push_back(draw_plane(v, policy, rng));
    // A single-slice crop would be read back as a shared draw; both paths
    // agree in that case so nothing is lost.
    auto out = apply_trace(v, policy, local);
    if (trace) *trace = std::move(local);
    return out;
}

CTVolume augment(const CTVolume& v, const AugmentationPolicy& policy, Rng& rng, AugmentTrace* trace) {
    return policy.mode == AugmentMode::Slicewise ? augment_slicewise(v, policy, rng, trace)
                                                 : augment_3d(v, policy, rng, trace);
}

ViewPair make_views(const CTVolume& v, int label, const AugmentationPolicy& policy, Rng& rng) {
    ViewPair pair;
    pair.view_a = augment(v, policy, rng);
    pair.view_b = augment(v, policy, rng);
    pair.label = label;
    return pair;
}

CTVolume eval_transform(const CTVolume& v, const AugmentationPolicy& policy) {
    check_depth(v, policy);
    const int r = policy.eval_resolution;
    CTVolume out(Shape3{policy.depth_crop, r, r});
    out.scan_id = v.scan_id;
    const double f = policy.eval_center_crop;
    const PlaneWindow win{(1 - f) * v.height() / 2, (1 - f) * v.width() / 2, f * v.height(), f * v.width(), 0};
    const int offset = (v.depth() - policy.depth_crop) / 2;
    for (int t = 0; t < policy.depth_crop; ++t) sample_plane<Real>(v.slice(offset + t), win, out.slice(t));
    out.array() = out.array().max(0.0).min(1.0);
    return out;
}

AugmentationPolicy tta_policy(const AugmentationPolicy& policy) {
    auto p = policy;
    p.brightness *= 0.5;
    p.contrast *= 0.5;
    p.train_resolution = policy.eval_resolution;
    return p;
}

}  // namespace cmc

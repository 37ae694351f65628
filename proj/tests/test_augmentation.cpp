#include <doctest.h>

#include <set>

#include "cmc/augment/augmentation.hpp"
#include "cmc/core/error.hpp"
#include "cmc/volume/phantom.hpp"

using namespace cmc;

namespace {

CTVolume random_volume(Shape3 s, std::uint64_t seed) {
    Rng rng(seed);
    CTVolume v(s);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = uniform(rng, 0.0, 1.0);
    return v;
}

AugmentationPolicy small_policy(int depth_crop, int res) {
    AugmentationPolicy p;
    p.depth_crop = depth_crop;
    p.train_resolution = res;
    p.eval_resolution = res;
    return p;
}

}  // namespace

TEST_CASE("degenerate 3D augmentation is a pure resize") {
    const auto v = generate_phantom(PhantomConfig{}, 1).volume;
    for (int res : {32, 64, 80}) {
        const auto policy = AugmentationPolicy::degenerate(v.depth(), res);
        Rng rng(1);
        const auto out = augment_3d(v, policy, rng);
        CHECK(out == resize_volume(v, {v.depth(), res, res}));
    }
}

TEST_CASE("depth crop keeps a contiguous window of the configured depth") {
    const auto v = random_volume({128, 16, 16}, 2);
    auto policy = small_policy(64, 16);
    Rng rng(3);
    AugmentTrace trace;
    const auto out = augment_3d(v, policy, rng, &trace);
    CHECK(out.shape() == Shape3{64, 16, 16});
    CHECK(trace.depth_offset >= 0);
    CHECK(trace.depth_offset <= 64);

    auto flat = AugmentationPolicy::degenerate(64, 16);
    Rng rng2(4);
    AugmentTrace t2;
    const auto cropped = augment_3d(v, flat, rng2, &t2);
    for (int t = 0; t < 64; ++t) CHECK(cropped.slice(t) == v.slice(t2.depth_offset + t));
}

TEST_CASE("augmenters are deterministic for a fixed rng state") {
    const auto v = random_volume({12, 20, 24}, 5);
    for (auto mode : {AugmentMode::Volume3D, AugmentMode::Slicewise}) {
        auto policy = small_policy(8, 16);
        policy.mode = mode;
        Rng a(9), b(9);
        CHECK(augment(v, policy, a) == augment(v, policy, b));
    }
}

TEST_CASE("recorded traces replay exactly") {
    const auto v = random_volume({10, 18, 18}, 6);
    for (auto mode : {AugmentMode::Volume3D, AugmentMode::Slicewise}) {
        auto policy = small_policy(6, 12);
        policy.mode = mode;
        Rng rng(10);
        AugmentTrace trace;
        const auto out = augment(v, policy, rng, &trace);
        CHECK(trace.planes.size() == (mode == AugmentMode::Volume3D ? 1u : 6u));
        CHECK(apply_trace(v, policy, trace) == out);
    }
}

TEST_CASE("zero-range slicewise equals zero-range 3D") {
    const auto v = random_volume({9, 30, 22}, 7);
    auto policy = AugmentationPolicy::degenerate(5, 16);
    policy.crop_scale_min = policy.crop_scale_max = 1.0;
    auto slicewise = policy;
    slicewise.mode = AugmentMode::Slicewise;
    Rng a(11), b(11);
    CHECK(augment_slicewise(v, slicewise, a) == augment_3d(v, policy, b));
}

TEST_CASE("slicewise jitter on a constant volume follows the recorded draws") {
    CTVolume v({16, 8, 8}, 0.5);
    auto policy = AugmentationPolicy::degenerate(16, 8);
    policy.mode = AugmentMode::Slicewise;
    policy.brightness = 0.2;
    policy.contrast = 0.2;
    Rng rng(12);
    AugmentTrace trace;
    const auto out = augment_slicewise(v, policy, rng, &trace);
    REQUIRE(trace.planes.size() == 16);
    std::set<double> distinct;
    for (int t = 0; t < 16; ++t) {
        const double b = trace.planes[t].brightness, c = trace.planes[t].contrast;
        CHECK(std::abs(b) <= 0.2);
        CHECK(std::abs(c - 1.0) <= 0.2);
        // c*v + (1 - c)*mean + b with mean = v.
        const double expect = std::clamp(c * 0.5 + (1 - c) * 0.5 + b, 0.0, 1.0);
        CHECK((out.slice(t).array() - expect).abs().maxCoeff() < 1e-12);
        CHECK(out.slice(t).maxCoeff() == out.slice(t).minCoeff());
        distinct.insert(out(t, 0, 0));
    }
    CHECK(distinct.size() > 1);
}

TEST_CASE("slicewise draws differ across slices") {
    const auto v = random_volume({32, 16, 16}, 13);
    auto policy = small_policy(32, 16);
    policy.mode = AugmentMode::Slicewise;
    Rng rng(14);
    AugmentTrace trace;
    augment_slicewise(v, policy, rng, &trace);
    std::set<double> angles;
    for (const auto& d : trace.planes) angles.insert(d.window.angle);
    CHECK(angles.size() == 32);
}

TEST_CASE("outputs stay in [0,1] with the configured shape") {
    Rng seeds(15);
    for (int trial = 0; trial < 25; ++trial) {
        const auto v = random_volume({uniform_int(seeds, 4, 12), uniform_int(seeds, 8, 40), uniform_int(seeds, 8, 40)},
                                     seeds());
        AugmentationPolicy p;
        p.mode = trial % 2 ? AugmentMode::Slicewise : AugmentMode::Volume3D;
        p.depth_crop = uniform_int(seeds, 1, v.depth());
        p.train_resolution = uniform_int(seeds, 4, 32);
        p.eval_resolution = uniform_int(seeds, 4, 32);
        p.crop_scale_min = uniform(seeds, 0.3, 1.0);
        p.rotation_degrees = uniform(seeds, 0, 45);
        p.brightness = uniform(seeds, 0, 0.5);
        p.contrast = uniform(seeds, 0, 0.5);
        Rng rng(seeds());
        const auto out = augment(v, p, rng);
        CHECK(out.shape() == Shape3{p.depth_crop, p.train_resolution, p.train_resolution});
        CHECK(out.array().minCoeff() >= 0.0);
        CHECK(out.array().maxCoeff() <= 1.0);
        const auto ev = eval_transform(v, p);
        CHECK(ev.shape() == Shape3{p.depth_crop, p.eval_resolution, p.eval_resolution});
        CHECK(ev.array().minCoeff() >= 0.0);
        CHECK(ev.array().maxCoeff() <= 1.0);
    }
}

TEST_CASE("make_views") {
    const auto v = random_volume({8, 16, 16}, 16);
    SUBCASE("degenerate policy gives equal views") {
        Rng rng(17);
        const auto views = make_views(v, 1, AugmentationPolicy::degenerate(8, 16), rng);
        CHECK(views.view_a == views.view_b);
        CHECK(views.label == 1);
    }
    SUBCASE("independent draws differ and N scans give 2N views") {
        Rng rng(18);
        std::vector<CTVolume> views;
        for (int i = 0; i < 3; ++i) {
            auto pair = make_views(v, i % 2, small_policy(8, 16), rng);
            CHECK(pair.label == i % 2);
            CHECK(!(pair.view_a == pair.view_b));
            views.push_back(pair.view_a);
            views.push_back(pair.view_b);
        }
        CHECK(views.size() == 6);
    }
}

TEST_CASE("eval transform") {
    const auto v = random_volume({20, 40, 40}, 19);
    auto policy = small_policy(8, 16);
    policy.train_resolution = 192;
    policy.eval_resolution = 224;
    const auto a = eval_transform(v, policy), b = eval_transform(v, policy);
    CHECK(a == b);
    CHECK(a.shape() == Shape3{8, 224, 224});
    Rng rng(20);
    CHECK(augment(v, policy, rng).shape() == Shape3{8, 192, 192});
    CTVolume flat({20, 40, 40}, 0.3);
    const auto c = eval_transform(flat, policy);
    CHECK((c.array() - 0.3).abs().maxCoeff() < 1e-15);
    // Centre depth window.
    auto same_res = AugmentationPolicy::degenerate(8, 40);
    const auto d = eval_transform(v, same_res);
    for (int t = 0; t < 8; ++t) CHECK(d.slice(t) == v.slice(6 + t));
}

TEST_CASE("invalid inputs") {
    const auto v = random_volume({4, 8, 8}, 21);
    Rng rng(22);
    CHECK_THROWS_AS(augment_3d(v, small_policy(5, 8), rng), InvalidArgument);
    CHECK_THROWS_AS(augment_slicewise(v, small_policy(5, 8), rng), InvalidArgument);
    auto bad = small_policy(2, 8);
    bad.crop_scale_min = 0;
    CHECK_THROWS_AS(augment_3d(v, bad, rng), InvalidArgument);
}

TEST_CASE("TTA policy halves photometric ranges") {
    auto p = small_policy(8, 16);
    p.eval_resolution = 32;
    const auto t = tta_policy(p);
    CHECK(t.brightness == p.brightness / 2);
    CHECK(t.contrast == p.contrast / 2);
    CHECK(t.rotation_degrees == p.rotation_degrees);
    CHECK(t.train_resolution == 32);
}

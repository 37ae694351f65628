#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cmc/core/error.hpp"
#include "cmc/model/checkpoint.hpp"
#include "cmc/model/model.hpp"
#include "model_oracles.hpp"
#include "test_support.hpp"

using namespace cmc;
using cmc::testing::conv2d_oracle;
using cmc::testing::random_matrix;
using cmc::testing::random_tensor;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.encoder.stage_depths = {1, 1, 1, 1};
    c.encoder.channels = {8, 16, 24, 32};
    c.encoder.attention_heads = 2;
    c.encoder.local_kernel = 3;
    c.projection_dim = 16;
    return c;
}

CTVolume random_volume(Shape3 s, Rng& rng) {
    CTVolume v(s);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = uniform(rng, 0.0, 1.0);
    return v;
}

}  // namespace

TEST_CASE("default model produces the documented output shapes") {
    ModelConfig cfg;
    Model model(cfg, 1);
    Rng rng(1);
    std::vector<CTVolume> batch{random_volume({16, 96, 96}, rng), random_volume({16, 96, 96}, rng)};
    nn::NoGradGuard guard;
    const Matrix f = encode(model, batch);
    CHECK(f.rows() == 2);
    CHECK(f.cols() == cfg.encoder.feature_dim());
    const Matrix z = project(model, f);
    CHECK(z.cols() == cfg.projection_dim);
    CHECK((z.rowwise().norm().array() - 1).abs().maxCoeff() < 1e-12);
    const Matrix logits = classify(model, f);
    CHECK(logits.cols() == 2);
    const Matrix p = softmax_rows(logits);
    CHECK((p.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-12);

    const auto big = model.forward(random_volume({16, 112, 112}, rng));
    CHECK(big.features->value.cols() == cfg.encoder.feature_dim());
}

TEST_CASE("inputs not divisible by the downsampling factor are rejected") {
    Model model(small_config(), 1);
    const auto d = model.config().encoder.divisor();
    CHECK(d == nn::Triple{8, 16, 16});
    Rng rng(2);
    CHECK_THROWS_AS(model.forward(random_volume({16, 72, 64}, rng)), InvalidArgument);
    CHECK_THROWS_AS(model.forward(random_volume({12, 64, 64}, rng)), InvalidArgument);
    try {
        model.forward(random_volume({16, 72, 64}, rng));
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("(8,16,16)") != std::string::npos);
    }
}

TEST_CASE("invalid encoder configurations are rejected") {
    auto cfg = small_config();
    cfg.encoder.channels = {8, 16};
    CHECK_THROWS_AS(Model(cfg, 0), InvalidConfig);
    cfg = small_config();
    cfg.encoder.attention_heads = 3;
    CHECK_THROWS_AS(Model(cfg, 0), InvalidConfig);
}

TEST_CASE("construction is deterministic per seed") {
    Model a(small_config(), 5), b(small_config(), 5), c(small_config(), 6);
    bool all_equal = true, any_diff = false;
    for (std::size_t k = 0; k < a.parameters().items().size(); ++k) {
        const auto& va = a.parameters().items()[k].var->value;
        all_equal = all_equal && va == b.parameters().items()[k].var->value;
        any_diff = any_diff || va != c.parameters().items()[k].var->value;
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("every parameter receives a gradient") {
    for (auto backbone : {Backbone::HybridTransformer, Backbone::ResidualCnn}) {
        auto cfg = small_config();
        cfg.encoder.backbone = backbone;
        Model model(cfg, 3);
        Rng rng(3);
        const auto out = model.forward(random_volume({16, 64, 64}, rng));
        out.logits->accumulate(random_matrix(1, 2, rng));
        out.projection->accumulate(random_matrix(1, cfg.projection_dim, rng));
        std::vector<nn::Var> roots{out.logits, out.projection};
        nn::backward(roots);
        for (const auto& p : model.parameters().items()) {
            INFO(p.name);
            REQUIRE(p.var->grad.size() == p.var->value.size());
            CHECK(p.var->grad.cwiseAbs().maxCoeff() > 0);
        }
    }
}

TEST_CASE("zeroed residual branches make blocks identity maps") {
    Model model(small_config(), 4);
    model.zero_residual_branches();
    Rng rng(4);
    nn::Var x = nn::constant(random_matrix(2 * 4 * 4, 8, rng), Shape3{2, 4, 4});
    auto p = model.block_params(0, 0);
    // The positional branch still adds its depthwise response, so compare
    // against DPE alone.
    const nn::Var dpe = nn::add(x, nn::depthwise_conv3d(x, p.pos_w, p.pos_b, {3, 3, 3}));
    const nn::Var y = hybrid_block(x, p);
    CHECK((y->value - dpe->value).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("repeat inflation on temporally constant input equals the 2D convolution") {
    Rng rng(5);
    const int cin = 3, cout = 4, k = 3, kt = 3;
    const Tensor w2d = random_tensor({cout, cin, k, k}, rng);
    const Shape3 g{5, 6, 7};
    const Matrix slice = random_matrix(Index(g.height) * g.width, cin, rng);
    Matrix x(g.voxels(), cin);
    for (int t = 0; t < g.depth; ++t) x.middleRows(Index(t) * slice.rows(), slice.rows()) = slice;

    const Tensor w3d = inflate_2d_weights(w2d, kt, InflationMode::Repeat);
    CHECK(w3d.shape == std::vector<int>{cout, cin, kt, k, k});
    const Matrix wm = Eigen::Map<const Matrix>(w3d.data.data(), cout, Index(cin) * kt * k * k);
    const nn::Var y = nn::conv3d(nn::constant(x, g), nn::constant(wm), nullptr, {kt, k, k}, {1, 1, 1}, {0, 1, 1});
    const Matrix expect = conv2d_oracle(x, Shape3{g.depth - kt + 1, g.height, g.width}, w2d, 1);
    const Real scale = expect.cwiseAbs().maxCoeff();
    CHECK((y->value - expect).cwiseAbs().maxCoeff() / scale < 1e-12);
}

TEST_CASE("center inflation sums to the 2D kernel over time") {
    Rng rng(6);
    const Tensor w2d = random_tensor({2, 3, 3, 3}, rng);
    for (int depth : {1, 3, 4}) {
        const Tensor w3d = inflate_2d_weights(w2d, depth, InflationMode::Center);
        const std::size_t kk = 9;
        for (std::size_t oc = 0; oc < 6; ++oc)
            for (std::size_t i = 0; i < kk; ++i) {
                Real sum = 0;
                int nonzero = 0;
                for (int t = 0; t < depth; ++t) {
                    const Real v = w3d.data[(oc * depth + t) * kk + i];
                    sum += v;
                    nonzero += v != 0;
                }
                CHECK(sum == w2d.data[oc * kk + i]);
                CHECK(nonzero <= 1);
            }
    }
    CHECK_THROWS_AS(inflate_2d_weights(random_tensor({2, 3, 3}, rng), 3, InflationMode::Center), InvalidArgument);
}

TEST_CASE("checkpoint files round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "cmc_test_model";
    std::filesystem::create_directories(dir);
    Model model(small_config(), 7);
    auto ckpt = snapshot(model.parameters(), {{"epoch", 3}});
    save_checkpoint(dir / "a.ckpt", ckpt);
    const auto back = read_checkpoint(dir / "a.ckpt");
    CHECK(back.metadata == ckpt.metadata);
    CHECK(back.tensors == ckpt.tensors);

    Model other(small_config(), 8);
    const auto report = load_pretrained(other.parameters(), back, {});
    CHECK(report.missing.empty());
    CHECK(report.unmapped.empty());
    for (std::size_t k = 0; k < model.parameters().items().size(); ++k)
        CHECK(model.parameters().items()[k].var->value == other.parameters().items()[k].var->value);

    std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
    CHECK_THROWS_AS(read_checkpoint(dir / "junk.ckpt"), CheckpointError);
    CHECK_THROWS_AS(read_checkpoint(dir / "absent.ckpt"), NotFound);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_pretrained strict, lenient and mapped loads") {
    Model source(small_config(), 9);
    auto ckpt = snapshot(source.parameters());
    const std::string dropped = ckpt.tensors.back().first;
    ckpt.tensors.pop_back();

    Model strict_target(small_config(), 10);
    CHECK_THROWS_AS(load_pretrained(strict_target.parameters(), ckpt, {}), CheckpointError);

    Model lenient(small_config(), 10);
    const auto before = lenient.parameters().find(dropped)->var->value;
    const auto report = load_pretrained(lenient.parameters(), ckpt, {}, {.strict = false});
    CHECK(report.missing == std::vector<std::string>{dropped});
    CHECK(lenient.parameters().find(dropped)->var->value == before);

    // Renamed prefixes are mapped back.
    Checkpoint renamed;
    for (const auto& [name, t] : snapshot(source.parameters()).tensors) renamed.put("backbone." + name, t);
    renamed.put("optimizer.m.x", Tensor{{1}, {0.0}});
    const auto mapping = NameMapping::parse("# prefixes\nbackbone. => \n");
    Model mapped(small_config(), 11);
    CHECK(load_pretrained(mapped.parameters(), renamed, mapping).missing.empty());
    CHECK(mapped.parameters().items()[0].var->value == source.parameters().items()[0].var->value);

    // Shape mismatches always fail.
    Checkpoint bad = snapshot(source.parameters());
    bad.tensors[0].second = Tensor{{1}, {1.0}};
    CHECK_THROWS_AS(load_pretrained(mapped.parameters(), bad, {}, {.strict = false}), CheckpointError);
}

TEST_CASE("2D checkpoints inflate into 3D patch embeddings") {
    Model model(small_config(), 12);
    const auto* p = model.parameters().find("encoder.patch_embed0.proj.weight");
    REQUIRE(p);
    REQUIRE(p->shape.size() == 5);
    Rng rng(13);
    Checkpoint ckpt;
    const Tensor w2d = random_tensor({p->shape[0], p->shape[1], p->shape[3], p->shape[4]}, rng);
    ckpt.put("encoder.patch_embed0.proj.weight", w2d);
    const auto report =
        load_pretrained(model.parameters(), ckpt, NameMapping::parse("inflate repeat\n"), {.strict = false});
    CHECK(report.inflated == std::vector<std::string>{"encoder.patch_embed0.proj.weight"});
    const Tensor expect = inflate_2d_weights(w2d, p->shape[2], InflationMode::Repeat);
    CHECK(to_tensor(*p).data == expect.data);
    CHECK_THROWS_AS(load_pretrained(model.parameters(), ckpt, {}, {.strict = false}), CheckpointError);
}

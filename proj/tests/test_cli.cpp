#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cmc/cli/commands.hpp"
#include "cmc/cli/config.hpp"
#include "cmc/core/error.hpp"

using namespace cmc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("cmc_test_cli_" + name);
    fs::remove_all(d);
    return d;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

json tiny_doc(const fs::path& data_root, const fs::path& out_dir) {
    json doc = default_config();
    for (const auto* o : {"synth.count=20", "synth.size=[16,32,32]", "data.volume_shape=[16,32,32]",
                          "model.stage_depths=[1,1,1,1]", "model.channels=[4,8,8,16]", "model.attention_heads=2",
                          "model.local_kernel=3", "model.projection_dim=8", "augmentation.depth_crop=16",
                          "augmentation.train_resolution=32", "augmentation.eval_resolution=32", "train.epochs=1",
                          "train.workers=1", "train.local_batch=2", "train.transport=in_process", "optimizer.lr=1e-3",
                          "seed=1"})
        apply_override(doc, o);
    doc["data"]["root"] = data_root.string();
    doc["output"]["dir"] = out_dir.string();
    return doc;
}

}  // namespace

TEST_CASE("defaults resolve and list every leaf key") {
    const auto cfg = resolve_config(default_config());
    CHECK(cfg.train.base_lr == 1e-4);
    CHECK(cfg.train.epochs == 100);
    CHECK(cfg.model.projection_dim == 128);
    CHECK(cfg.data.volume_shape == Shape3{128, 224, 224});
    const auto keys = config_key_help();
    std::set<std::string> names;
    for (const auto& k : keys) names.insert(k.substr(0, k.find(' ')));
    for (const auto* k : {"seed", "loss.tau", "mixing.alpha", "augmentation.mode", "optimizer.lr_drop_points",
                          "train.workers", "eval.tta_views", "output.dir", "model.strides"})
        CHECK(names.count(k) == 1);
}

TEST_CASE("unknown keys and type errors name the offending key") {
    json doc = default_config();
    try {
        merge_config(doc, json{{"loss", {{"temperature", 0.5}}}});
        FAIL("expected InvalidConfig");
    } catch (const InvalidConfig& e) {
        CHECK(std::string(e.what()).find("loss.temperature") != std::string::npos);
    }
    try {
        apply_override(doc, "train.epochs=ten");
        FAIL("expected InvalidConfig");
    } catch (const InvalidConfig& e) {
        CHECK(std::string(e.what()).find("train.epochs") != std::string::npos);
    }
    CHECK_THROWS_AS(apply_override(doc, "train.epochs=2.5"), InvalidConfig);
    CHECK_THROWS_AS(apply_override(doc, "noequals"), InvalidConfig);
    CHECK_THROWS_AS(apply_override(doc, "train..epochs=2"), InvalidConfig);
    CHECK_THROWS_AS(apply_override(doc, "train=3"), InvalidConfig);
}

TEST_CASE("dotted overrides parse JSON values") {
    json doc = default_config();
    apply_override(doc, "loss.tau=0.5");
    apply_override(doc, "augmentation.mode=slicewise");
    apply_override(doc, "optimizer.lr_drop_points=[0.5]");
    apply_override(doc, "optimizer.weight_decay=0");
    const auto cfg = resolve_config(doc);
    CHECK(cfg.train.tau == 0.5);
    CHECK(cfg.train.augmentation.mode == AugmentMode::Slicewise);
    CHECK(cfg.train.lr_drop_points == std::vector<double>{0.5});
    CHECK(cfg.train.adam.weight_decay == 0);
}

TEST_CASE("semantic validation raises InvalidConfig") {
    for (const auto* o : {"augmentation.mode=4d", "loss.tau=0", "model.channels=[8,16]", "train.workers=0",
                          "mixing.policy=blend", "data.train_fraction=1.5", "augmentation.crop_scale_min=0"}) {
        json doc = default_config();
        apply_override(doc, o);
        INFO(o);
        CHECK_THROWS_AS(resolve_config(doc), InvalidConfig);
    }
}

TEST_CASE("config hash ignores output paths only") {
    json a = default_config(), b = default_config();
    b["output"]["dir"] = "/elsewhere";
    CHECK(config_hash(a) == config_hash(b));
    apply_override(b, "loss.tau=0.2");
    CHECK(config_hash(a) != config_hash(b));
    CHECK(config_hash(a).size() == 16);
}

TEST_CASE("config files chain through extends") {
    const auto dir = fresh_dir("extends");
    fs::create_directories(dir / "sub");
    write_file(dir / "base.json", R"({"loss": {"tau": 0.3}, "train": {"epochs": 5}})");
    write_file(dir / "sub" / "child.json", R"({"extends": "../base.json", "train": {"epochs": 7}})");
    const auto doc = load_config_file(dir / "sub" / "child.json");
    CHECK(doc["loss"]["tau"] == 0.3);
    CHECK(doc["train"]["epochs"] == 7);
    CHECK(doc["mixing"]["alpha"] == 0.2);
    write_file(dir / "bad.json", R"({"extends": "base.json", "bogus": 1})");
    CHECK_THROWS_AS(load_config_file(dir / "bad.json"), InvalidConfig);
    write_file(dir / "loop.json", R"({"extends": "loop.json"})");
    CHECK_THROWS_AS(load_config_file(dir / "loop.json"), InvalidConfig);
    CHECK_THROWS_AS(load_config_file(dir / "absent.json"), NotFound);
    fs::remove_all(dir);
}

TEST_CASE("shipped presets load with distinct hashes") {
    const fs::path presets = fs::path(CMC_SOURCE_DIR) / "configs" / "presets";
    std::set<std::string> hashes;
    for (const auto* name : {"row05_cmc_v1_u.json", "row08_slice_aug.json", "row09_hybrid.json",
                             "row10_hybrid_small_res.json"}) {
        const auto cfg = resolve_config(load_config_file(presets / name));
        hashes.insert(cfg.hash);
    }
    CHECK(hashes.size() == 4);
    CHECK(load_config_file(fs::path(CMC_SOURCE_DIR) / "configs" / "default.json") == default_config());
    resolve_config(load_config_file(fs::path(CMC_SOURCE_DIR) / "configs" / "desk.json"));
}

TEST_CASE("synth_data writes a balanced, reproducible dataset") {
    const auto root = fresh_dir("synth");
    const auto cfg = resolve_config(tiny_doc(root, fresh_dir("synth_out")));
    const auto s = cmd_synth_data(cfg, root, false);
    CHECK(s.count == 20);
    CHECK(s.positives == 10);
    const auto labels = read_labels(root);
    CHECK(labels.size() == 20);
    int dirs = 0;
    for (const auto& r : labels) dirs += fs::is_directory(root / r.scan_id);
    CHECK(dirs == 20);
    const auto first = read_file(root / "labels.csv");
    CHECK_THROWS_AS(cmd_synth_data(cfg, root, false), Refused);
    cmd_synth_data(cfg, root, true);
    CHECK(read_file(root / "labels.csv") == first);
    CHECK(json::parse(read_file(root / "synth.json"))["config_hash"] == cfg.hash);
    fs::remove_all(root);
}

TEST_CASE("train, eval, predict, cam and ensemble_eval on a tiny run") {
    const auto root = fresh_dir("data"), out = fresh_dir("run");
    const auto cfg = resolve_config(tiny_doc(root, out));
    cmd_synth_data(cfg, root, false);
    const auto result = cmd_train(cfg);
    REQUIRE(fs::exists(result.best_checkpoint));
    CHECK(read_file(out / "metrics.csv").starts_with("# config_hash " + cfg.hash));
    CHECK(resolve_config(load_config_file(out / "config.json")).hash == cfg.hash);

    const auto report = cmd_eval(cfg, result.best_checkpoint, out / "eval");
    const auto j = json::parse(read_file(out / "eval" / "report.json"));
    CHECK(j.contains("macro_f1"));
    CHECK(j["config_hash"] == cfg.hash);
    CHECK(report.samples() == 4);

    const auto ens = cmd_ensemble_eval(cfg, {result.best_checkpoint}, out / "ens");
    CHECK(ens.macro_f1 == report.macro_f1);
    CHECK(ens.confusion == report.confusion);
    CHECK(ens.auc_per_class == report.auc_per_class);

    auto [train, val] = dataset_split(cfg);
    std::vector<ScanRecord> five(train.begin(), train.begin() + 5);
    const auto preds = cmd_predict(cfg, result.best_checkpoint, five, out / "pred.csv");
    REQUIRE(preds.size() == 5);
    for (const auto& p : preds) CHECK(std::abs(p.probabilities.sum() - 1) < 1e-6);
    const auto csv = read_file(out / "pred.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

    const auto cam = cmd_cam(cfg, result.best_checkpoint, out / "cam", 2);
    CHECK(cam.scans == 2);
    CHECK(cam.scans_with_masks == 2);
    CHECK(fs::exists(out / "cam" / "cam_summary.json"));

    json other = cfg.doc;
    other["loss"]["tau"] = 0.2;
    CHECK_THROWS_AS(cmd_train(resolve_config(other)), InvalidConfig);
    fs::remove_all(root);
    fs::remove_all(out);
}

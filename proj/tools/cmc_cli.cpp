// Command-line front end: synth_data, train, eval, predict, cam, ensemble_eval.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmc/cli/commands.hpp"
#include "cmc/cli/config.hpp"
#include "cmc/core/error.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<int> tta;
    std::string out;
};

std::string key_footer() {
    std::string text = "Config keys (--set key=value):\n";
    for (const auto& k : cmc::config_key_help()) text += "  " + k + "\n";
    text += "Environment: CMC_DATA_ROOT sets data.root when the config leaves it empty.\n";
    return text;
}

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "JSON config file (may 'extends' another)");
    cmd->add_option("--set", f.overrides, "Dotted override key=value, repeatable");
    cmd->add_option("--seed", f.seed, "Shorthand for --set seed=N");
    cmd->add_option("--workers", f.workers, "Shorthand for --set train.workers=W");
    cmd->add_option("--tta", f.tta, "Shorthand for --set eval.tta_views=N");
    cmd->add_option("--out", f.out, "Output directory (overrides output.dir)");
    cmd->footer(key_footer());
}

cmc::RunConfig build_config(const CommonFlags& f) {
    auto doc = f.config.empty() ? cmc::default_config() : cmc::load_config_file(f.config);
    for (const auto& o : f.overrides) cmc::apply_override(doc, o);
    if (f.seed) doc["seed"] = *f.seed;
    if (f.workers) cmc::apply_override(doc, "train.workers=" + std::to_string(*f.workers));
    if (f.tta) cmc::apply_override(doc, "eval.tta_views=" + std::to_string(*f.tta));
    if (!f.out.empty()) doc["output"]["dir"] = f.out;
    if (doc["data"]["root"].get<std::string>().empty())
        if (const char* env = std::getenv("CMC_DATA_ROOT")) doc["data"]["root"] = env;
    return cmc::resolve_config(doc);
}

fs::path default_checkpoint(const cmc::RunConfig& cfg, const std::string& given) {
    return given.empty() ? cfg.output_dir / "best.ckpt" : fs::path(given);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive mixup classification of CT volumes"};
    app.require_subcommand(1);

    CommonFlags synth_f, train_f, eval_f, predict_f, cam_f, ens_f;
    bool force = false;
    std::string eval_ckpt, predict_ckpt, cam_ckpt;
    std::vector<std::string> ens_ckpts, predict_scans;
    int cam_max = 20;

    auto* synth = app.add_subcommand("synth_data", "Write a synthetic phantom dataset");
    add_common(synth, synth_f);
    synth->add_flag("--force", force, "Overwrite a non-empty output directory");

    auto* train = app.add_subcommand("train", "Train a model");
    add_common(train, train_f);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on eval.split");
    add_common(eval, eval_f);
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint (default <output.dir>/best.ckpt)");

    auto* predict = app.add_subcommand("predict", "Per-scan class probabilities");
    add_common(predict, predict_f);
    predict->add_option("--checkpoint", predict_ckpt, "Checkpoint (default <output.dir>/best.ckpt)");
    predict->add_option("--scan", predict_scans, "Scan directories (default: eval.split of data.root)");

    auto* cam = app.add_subcommand("cam", "Class activation overlays");
    add_common(cam, cam_f);
    cam->add_option("--checkpoint", cam_ckpt, "Checkpoint (default <output.dir>/best.ckpt)");
    cam->add_option("--max-scans", cam_max, "Number of class-1 scans to visualise");

    auto* ens = app.add_subcommand("ensemble_eval", "Evaluate the average of several checkpoints");
    add_common(ens, ens_f);
    ens->add_option("--checkpoint", ens_ckpts, "Checkpoints (default eval.checkpoints), repeatable");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            auto cfg = build_config(synth_f);
            const fs::path root = synth_f.out.empty() ? cfg.data.root : fs::path(synth_f.out);
            if (root.empty()) throw cmc::InvalidConfig("no output directory: pass --out or set data.root");
            const auto s = cmc::cmd_synth_data(cfg, root, force);
            std::printf("wrote %d scans (%d positive) to %s [config %s]\n", s.count, s.positives,
                        s.root.string().c_str(), cfg.hash.c_str());
        } else if (*train) {
            auto cfg = build_config(train_f);
            const auto r = cmc::cmd_train(cfg);
            std::printf("best epoch %d macro F1 %.4f -> %s [config %s]\n", r.best_epoch, r.best_macro_f1,
                        r.best_checkpoint.string().c_str(), cfg.hash.c_str());
        } else if (*eval) {
            auto cfg = build_config(eval_f);
            const auto ckpt = default_checkpoint(cfg, eval_ckpt);
            const auto r = cmc::cmd_eval(cfg, ckpt, cfg.output_dir / "eval");
            std::printf("macro F1 %.4f (F1 %.4f / %.4f) on %ld scans [config %s]\n", r.macro_f1, r.f1_per_class[0],
                        r.f1_per_class[1], r.samples(), cfg.hash.c_str());
        } else if (*predict) {
            auto cfg = build_config(predict_f);
            std::vector<cmc::ScanRecord> scans;
            for (const auto& s : predict_scans) scans.push_back({fs::path(s).filename().string(), 0, s});
            if (scans.empty()) {
                auto [tr, va] = cmc::dataset_split(cfg);
                scans = cfg.eval.split == "train" ? tr : va;
            }
            const auto out = cfg.output_dir / "predictions.csv";
            const auto p = cmc::cmd_predict(cfg, default_checkpoint(cfg, predict_ckpt), scans, out);
            std::printf("%zu predictions -> %s [config %s]\n", p.size(), out.string().c_str(), cfg.hash.c_str());
        } else if (*cam) {
            auto cfg = build_config(cam_f);
            const auto s = cmc::cmd_cam(cfg, default_checkpoint(cfg, cam_ckpt), cfg.output_dir / "cam", cam_max);
            std::printf("%d CAM volumes, mean lesion gap %.4f [config %s]\n", s.scans, s.mean_lesion_gap,
                        cfg.hash.c_str());
        } else if (*ens) {
            auto cfg = build_config(ens_f);
            std::vector<fs::path> ckpts(ens_ckpts.begin(), ens_ckpts.end());
            if (ckpts.empty()) ckpts = cfg.eval.checkpoints;
            const auto r = cmc::cmd_ensemble_eval(cfg, ckpts, cfg.output_dir / "ensemble_eval");
            std::printf("ensemble of %zu: macro F1 %.4f [config %s]\n", ckpts.size(), r.macro_f1, cfg.hash.c_str());
        }
    } catch (const cmc::Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", e.kind().c_str(), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}

#include "cmc/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "cmc/augment/augmentation.hpp"
#include "cmc/core/error.hpp"
#include "cmc/core/random.hpp"
#include "cmc/eval/inference.hpp"
#include "cmc/model/checkpoint.hpp"
#include "cmc/volume/phantom.hpp"
#include "cmc/volume/resample.hpp"

namespace cmc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& file, const json& j) {
    std::ofstream out(file);
    if (!out) throw InvalidArgument("cannot write " + file.string());
    out << j.dump(2) << "\n";
}

bool non_empty_dir(const fs::path& p) { return fs::exists(p) && !fs::is_empty(p); }

}  // namespace

SynthSummary cmd_synth_data(const RunConfig& cfg, const fs::path& root, bool force) {
    if (non_empty_dir(root)) {
        if (!force) throw Refused(root.string() + " exists and is not empty; pass --force to overwrite");
        fs::remove_all(root);
    }
    fs::create_directories(root);

    const int n = cfg.synth.count;
    const int positives = int(std::lround(n * cfg.synth.class_balance));
    std::vector<int> labels(n, 0);
    std::fill(labels.begin(), labels.begin() + positives, 1);
    auto rng = derive_rng({cfg.seed, 0x5E7});
    std::shuffle(labels.begin(), labels.end(), rng);

    std::vector<ScanRecord> records;
    for (int i = 0; i < n; ++i) {
        auto p = generate_phantom(phantom_for_index(cfg.synth.phantom, cfg.seed, i), labels[i]);
        const auto dir = root / p.record.scan_id;
        write_scan(p.volume, dir);
        CTVolume mask(p.lesion_mask.shape());
        mask.array() = p.lesion_mask.array().cast<Real>();
        write_scan(mask, root / "masks" / p.record.scan_id);
        records.push_back({p.record.scan_id, labels[i], dir});
    }
    write_labels(root, records);
    write_json(root / "synth.json", {{"config_hash", cfg.hash},
                                     {"seed", cfg.seed},
                                     {"count", n},
                                     {"positives", positives},
                                     {"synth", cfg.doc.at("synth")}});
    return {root, n, positives};
}

std::pair<std::vector<ScanRecord>, std::vector<ScanRecord>> dataset_split(const RunConfig& cfg) {
    const auto& root = cfg.data.root;
    if (root.empty()) throw InvalidConfig("data.root is not set (use --set data.root=DIR or CMC_DATA_ROOT)");
    if (fs::exists(root / "manifest.csv")) {
        std::vector<ScanRecord> train, val;
        for (auto& e : read_manifest(root / "manifest.csv", root))
            (e.split == Split::Train ? train : val).push_back(e.record);
        return {train, val};
    }
    return split_manifest(read_labels(root), cfg.data.train_fraction, cfg.data.split_seed);
}

std::vector<LabeledScan> load_scans(const std::vector<ScanRecord>& records, const Shape3& shape) {
    std::vector<LabeledScan> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        CTVolume v = load_scan(r);
        if (v.shape() != shape) v = resize_volume(v, shape);
        out.push_back({r.scan_id, r.label, std::move(v)});
    }
    return out;
}

TrainingResult cmd_train(const RunConfig& cfg) {
    const auto [train_records, val_records] = dataset_split(cfg);
    const auto train = load_scans(train_records, cfg.data.volume_shape);
    const auto val = load_scans(val_records, cfg.data.volume_shape);
    fs::create_directories(cfg.output_dir);
    write_json(cfg.output_dir / "config.json", cfg.doc);

    RunOptions opt;
    opt.out_dir = cfg.output_dir;
    opt.resume = cfg.resume;
    opt.config = cfg.doc;
    opt.config_hash = cfg.hash;
    opt.verbose = true;
    if (!cfg.pretrained.checkpoint.empty()) {
        opt.init = [&cfg](Model& m) {
            const NameMapping mapping =
                cfg.pretrained.mapping.empty() ? NameMapping{} : NameMapping::read(cfg.pretrained.mapping);
            LoadOptions lo;
            lo.strict = cfg.pretrained.strict;
            lo.inflation = cfg.pretrained.inflation;
            const auto report = load_pretrained(m.parameters(), read_checkpoint(cfg.pretrained.checkpoint), mapping, lo);
            std::fprintf(stderr, "pretrained: %zu loaded, %zu inflated, %zu missing, %zu unmapped\n",
                         report.loaded.size(), report.inflated.size(), report.missing.size(),
                         report.unmapped.size());
        };
    }
    return run_training(cfg.model, cfg.train, train, val, opt);
}

LoadedModel load_model(const fs::path& checkpoint, const RunConfig& cfg) {
    const auto ckpt = read_checkpoint(checkpoint);
    const json stored = ckpt.metadata.value("config", json::object());
    const RunConfig run = stored.empty() ? cfg : resolve_config(stored);
    LoadedModel m;
    m.model = std::make_unique<Model>(run.model, 0);
    load_pretrained(m.model->parameters(), ckpt, NameMapping{});
    m.policy = run.train.augmentation;
    if (cfg.eval.resolution > 0) m.policy.eval_resolution = cfg.eval.resolution;
    m.volume_shape = run.data.volume_shape;
    m.config_hash = ckpt.metadata.value("config_hash", run.hash);
    return m;
}

namespace {

std::vector<ScanRecord> eval_records(const RunConfig& cfg) {
    auto [train, val] = dataset_split(cfg);
    return cfg.eval.split == "train" ? train : val;
}

void write_roc(const fs::path& file, const std::vector<RocPoint>& points, const std::string& hash) {
    std::ofstream out(file);
    out << "# config_hash " << hash << "\nfpr,tpr\n";
    char buf[64];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.fpr, p.tpr);
        out << buf;
    }
}

EvalReport evaluate_members(const RunConfig& cfg, const std::vector<fs::path>& checkpoints, const fs::path& out_dir) {
    if (checkpoints.empty()) throw InvalidArgument("no checkpoints to evaluate");
    std::vector<LoadedModel> models;
    for (const auto& c : checkpoints) models.push_back(load_model(c, cfg));
    std::vector<EnsembleMember> members;
    for (const auto& m : models) members.push_back({m.model.get(), m.policy});

    const auto records = eval_records(cfg);
    const auto scans = load_scans(records, models.front().volume_shape);
    Matrix probs(Index(scans.size()), 2);
    std::vector<int> labels;
    for (std::size_t i = 0; i < scans.size(); ++i) {
        probs.row(Index(i)) = ensemble_predict(members, scans[i].volume, cfg.eval.tta_views, cfg.eval.tta_seed);
        labels.push_back(scans[i].label);
    }
    const auto report = evaluate_probabilities(probs, labels);

    fs::create_directories(out_dir);
    json j = report.to_json();
    j["config_hash"] = cfg.hash;
    j["split"] = cfg.eval.split;
    j["tta_views"] = cfg.eval.tta_views;
    j["checkpoints"] = json::array();
    for (std::size_t k = 0; k < checkpoints.size(); ++k)
        j["checkpoints"].push_back({{"path", checkpoints[k].string()}, {"config_hash", models[k].config_hash}});
    write_json(out_dir / "report.json", j);
    if (report.has_roc)
        for (int c = 0; c < 2; ++c)
            write_roc(out_dir / ("roc_class" + std::to_string(c) + ".csv"), report.roc_points[c], cfg.hash);
    return report;
}

}  // namespace

EvalReport cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir) {
    return evaluate_members(cfg, {checkpoint}, out_dir);
}

EvalReport cmd_ensemble_eval(const RunConfig& cfg, const std::vector<fs::path>& checkpoints, const fs::path& out_dir) {
    return evaluate_members(cfg, checkpoints, out_dir);
}

std::vector<Prediction> cmd_predict(const RunConfig& cfg, const fs::path& checkpoint,
                                    const std::vector<ScanRecord>& scans, const fs::path& out_csv) {
    const auto m = load_model(checkpoint, cfg);
    std::vector<Prediction> out;
    for (const auto& s : load_scans(scans, m.volume_shape)) {
        const RowVector p = cfg.eval.tta_views > 0
                                ? predict_tta(*m.model, s.volume, m.policy, cfg.eval.tta_views, cfg.eval.tta_seed)
                                : predict(*m.model, s.volume, m.policy);
        out.push_back({s.scan_id, p});
    }
    if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
    std::ofstream f(out_csv);
    if (!f) throw InvalidArgument("cannot write " + out_csv.string());
    f << "# config_hash " << cfg.hash << "\nscan_id,p0,p1\n";
    char buf[96];
    for (const auto& p : out) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", p.probabilities[0], p.probabilities[1]);
        f << p.scan_id << buf;
    }
    return out;
}

CamSummary cmd_cam(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir, int max_scans,
                   int target_class) {
    const auto m = load_model(checkpoint, cfg);
    std::vector<ScanRecord> chosen;
    for (const auto& r : eval_records(cfg))
        if (r.label == target_class && int(chosen.size()) < max_scans) chosen.push_back(r);

    CamSummary summary;
    double gap_sum = 0;
    json per_scan = json::array();
    for (const auto& s : load_scans(chosen, m.volume_shape)) {
        const CTVolume prepared = eval_transform(s.volume, m.policy);
        const auto cam = compute_cam(*m.model, prepared, target_class);
        write_cam_overlays(prepared, cam, out_dir / s.scan_id);
        ++summary.scans;
        json entry = {{"scan_id", s.scan_id}};
        const auto mask_dir = cfg.data.root / "masks" / s.scan_id;
        if (fs::exists(mask_dir)) {
            CTVolume mask = load_scan({s.scan_id, s.label, mask_dir});
            if (mask.shape() != m.volume_shape) mask = resize_volume(mask, m.volume_shape);
            mask = eval_transform(mask, m.policy);
            double in = 0, out = 0;
            long n_in = 0, n_out = 0;
            for (Index k = 0; k < mask.size(); ++k) {
                if (mask.data()[k] > 0.5) {
                    in += cam.heatmap.data()[k];
                    ++n_in;
                } else {
                    out += cam.heatmap.data()[k];
                    ++n_out;
                }
            }
            if (n_in > 0 && n_out > 0) {
                const double gap = in / double(n_in) - out / double(n_out);
                entry["lesion_gap"] = gap;
                gap_sum += gap;
                ++summary.scans_with_masks;
            }
        }
        per_scan.push_back(entry);
    }
    summary.mean_lesion_gap = summary.scans_with_masks ? gap_sum / summary.scans_with_masks
                                                       : std::numeric_limits<double>::quiet_NaN();
    fs::create_directories(out_dir);
    write_json(out_dir / "cam_summary.json",
               {{"config_hash", cfg.hash},
                {"checkpoint", checkpoint.string()},
                {"target_class", target_class},
                {"scans", per_scan},
                {"mean_lesion_gap", summary.scans_with_masks ? json(summary.mean_lesion_gap) : json(nullptr)}});
    return summary;
}

}  // namespace cmc

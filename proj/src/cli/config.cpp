#include "cmc/cli/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "cmc/core/error.hpp"
#include "cmc/core/hash.hpp"

namespace cmc {

using nlohmann::json;

json default_config() {
    return {
        {"seed", 0},
        {"data",
         {{"root", ""}, {"train_fraction", 0.8}, {"split_seed", 0}, {"volume_shape", {128, 224, 224}}}},
        {"synth",
         {{"count", 200},
          {"class_balance", 0.5},
          {"size", {16, 64, 64}},
          {"lesion_count_min", 1},
          {"lesion_count_max", 3},
          {"lesion_intensity_min", 0.75},
          {"lesion_intensity_max", 0.95},
          {"lesion_radius_min", 0.08},
          {"lesion_radius_max", 0.12},
          {"noise", 0.03}}},
        {"model",
         {{"backbone", "hybrid"},
          {"stage_depths", {2, 2, 4, 2}},
          {"channels", {32, 64, 128, 256}},
          {"strides", {{2, 4, 4}, {2, 2, 2}, {2, 2, 2}, {1, 1, 1}}},
          {"attention_heads", 4},
          {"global_stage_start", 2},
          {"mlp_ratio", 4},
          {"local_kernel", 5},
          {"projection_dim", 128},
          {"projection_hidden", 0},
          {"classes", 2}}},
        {"pretrained", {{"checkpoint", ""}, {"mapping", ""}, {"inflation", "none"}, {"strict", false}}},
        {"augmentation",
         {{"mode", "3d"},
          {"crop_scale_min", 0.7},
          {"crop_scale_max", 1.0},
          {"depth_crop", 64},
          {"rotation_degrees", 10.0},
          {"brightness", 0.2},
          {"contrast", 0.2},
          {"train_resolution", 192},
          {"eval_resolution", 224},
          {"eval_center_crop", 1.0}}},
        {"mixing", {{"alpha", 0.2}, {"policy", "hybrid"}}},
        {"loss",
         {{"tau", 0.1}, {"contrastive", 1.0}, {"mixup", 1.0}, {"classification", 1.0}, {"positives", "scans"}}},
        {"optimizer",
         {{"lr", 1e-4},
          {"lr_drop_points", {0.3, 0.8}},
          {"beta1", 0.9},
          {"beta2", 0.999},
          {"eps", 1e-8},
          {"weight_decay", 1e-5},
          {"decoupled_weight_decay", false}}},
        {"train",
         {{"epochs", 100}, {"workers", 8}, {"local_batch", 1}, {"transport", "threads"}, {"resume", true}}},
        {"eval",
         {{"tta_views", 0}, {"tta_seed", 0}, {"split", "val"}, {"resolution", 0}, {"checkpoints", json::array()}}},
        {"output", {{"dir", "runs/default"}}},
    };
}

namespace {

std::string join_key(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

bool compatible(const json& def, const json& v) {
    if (def.is_number_integer()) return v.is_number_integer() || (v.is_number_float() && v == std::floor(double(v)));
    if (def.is_number()) return v.is_number();
    if (def.is_array()) {
        if (!v.is_array()) return false;
        if (def.empty()) return true;
        for (const auto& e : v)
            if (!compatible(def.front(), e)) return false;
        return true;
    }
    return def.type() == v.type();
}

}  // namespace

void merge_config(json& base, const json& overlay, const std::string& prefix) {
    if (!overlay.is_object()) throw InvalidConfig("config section '" + prefix + "' must be an object");
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        const std::string key = join_key(prefix, it.key());
        if (!base.contains(it.key())) throw InvalidConfig("unknown config key '" + key + "'");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_config(slot, it.value(), key);
            continue;
        }
        if (!compatible(slot, it.value()))
            throw InvalidConfig("config key '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                                it.value().dump());
        slot = slot.is_number_integer() ? json(std::int64_t(double(it.value()))) : it.value();
    }
}

namespace {

json read_json(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw NotFound("config file not found: " + file.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InvalidConfig("cannot parse " + file.string() + ": " + e.what());
    }
}

void apply_file(json& cfg, const std::filesystem::path& file, int depth) {
    if (depth > 16) throw InvalidConfig("config 'extends' chain is too deep at " + file.string());
    json doc = read_json(file);
    if (!doc.is_object()) throw InvalidConfig(file.string() + " must hold a JSON object");
    if (doc.contains("extends")) {
        if (!doc["extends"].is_string()) throw InvalidConfig("'extends' in " + file.string() + " must be a path");
        apply_file(cfg, file.parent_path() / doc["extends"].get<std::string>(), depth + 1);
        doc.erase("extends");
    }
    merge_config(cfg, doc);
}

}  // namespace

json load_config_file(const std::filesystem::path& file) {
    json cfg = default_config();
    apply_file(cfg, file, 0);
    return cfg;
}

void apply_override(json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidConfig("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) {
        if (part.empty()) throw InvalidConfig("override key '" + key + "' has an empty component");
        parts.push_back(part);
    }
    if (key.back() == '.') throw InvalidConfig("override key '" + key + "' has an empty component");
    json overlay = value;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = json{{*it, overlay}};
    merge_config(cfg, overlay);
}

std::string config_hash(const json& cfg) {
    json copy = cfg;
    copy.erase("output");
    return hex64(fnv1a64(copy.dump()));
}

std::vector<std::string> config_key_help() {
    std::vector<std::string> out;
    std::function<void(const json&, const std::string&)> walk = [&](const json& j, const std::string& prefix) {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto key = join_key(prefix, it.key());
            if (it.value().is_object())
                walk(it.value(), key);
            else
                out.push_back(key + " = " + it.value().dump());
        }
    };
    walk(default_config(), "");
    return out;
}

namespace {

template <typename T>
T pick(const std::string& key, const std::string& value, std::initializer_list<std::pair<const char*, T>> options) {
    std::string names;
    for (const auto& [name, v] : options) {
        if (value == name) return v;
        names += names.empty() ? name : std::string(", ") + name;
    }
    throw InvalidConfig("config key '" + key + "' must be one of " + names + ", got '" + value + "'");
}

Shape3 shape3(const json& j, const std::string& key) {
    if (j.size() != 3) throw InvalidConfig("config key '" + key + "' needs three extents");
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

}  // namespace

RunConfig resolve_config(const json& doc) {
    RunConfig r;
    r.doc = doc;
    r.hash = config_hash(doc);
    try {
        r.seed = doc.at("seed").get<std::uint64_t>();

        const auto& d = doc.at("data");
        r.data.root = d.at("root").get<std::string>();
        r.data.train_fraction = d.at("train_fraction");
        r.data.split_seed = d.at("split_seed").get<std::uint64_t>();
        r.data.volume_shape = shape3(d.at("volume_shape"), "data.volume_shape");
        if (!(r.data.train_fraction > 0 && r.data.train_fraction < 1))
            throw InvalidConfig("data.train_fraction must lie in (0, 1)");

        const auto& s = doc.at("synth");
        r.synth.count = s.at("count");
        r.synth.class_balance = s.at("class_balance");
        auto& ph = r.synth.phantom;
        ph.size = shape3(s.at("size"), "synth.size");
        ph.lesion_count_min = s.at("lesion_count_min");
        ph.lesion_count_max = s.at("lesion_count_max");
        ph.lesion_intensity_min = s.at("lesion_intensity_min");
        ph.lesion_intensity_max = s.at("lesion_intensity_max");
        ph.lesion_radius_min = s.at("lesion_radius_min");
        ph.lesion_radius_max = s.at("lesion_radius_max");
        ph.noise = s.at("noise");
        if (r.synth.count < 2) throw InvalidConfig("synth.count must be >= 2");
        if (!(r.synth.class_balance > 0 && r.synth.class_balance < 1))
            throw InvalidConfig("synth.class_balance must lie in (0, 1)");

        const auto& m = doc.at("model");
        auto& e = r.model.encoder;
        e.backbone = pick<Backbone>("model.backbone", m.at("backbone"),
                                    {{"hybrid", Backbone::HybridTransformer}, {"resnet", Backbone::ResidualCnn}});
        e.stage_depths = m.at("stage_depths").get<std::vector<int>>();
        e.channels = m.at("channels").get<std::vector<int>>();
        e.strides.clear();
        for (const auto& st : m.at("strides")) {
            if (st.size() != 3) throw InvalidConfig("model.strides entries need three values");
            e.strides.push_back({st[0].get<int>(), st[1].get<int>(), st[2].get<int>()});
        }
        e.attention_heads = m.at("attention_heads");
        e.global_stage_start = m.at("global_stage_start");
        e.mlp_ratio = m.at("mlp_ratio");
        e.local_kernel = m.at("local_kernel");
        r.model.projection_dim = m.at("projection_dim");
        r.model.projection_hidden = m.at("projection_hidden");
        r.model.classes = m.at("classes");
        r.model.validate();

        const auto& p = doc.at("pretrained");
        r.pretrained.checkpoint = p.at("checkpoint").get<std::string>();
        r.pretrained.mapping = p.at("mapping").get<std::string>();
        r.pretrained.inflation = pick<std::optional<InflationMode>>(
            "pretrained.inflation", p.at("inflation"),
            {{"none", std::nullopt}, {"center", InflationMode::Center}, {"repeat", InflationMode::Repeat}});
        r.pretrained.strict = p.at("strict");

        auto& t = r.train;
        const auto& a = doc.at("augmentation");
        auto& ap = t.augmentation;
        ap.mode = pick<AugmentMode>("augmentation.mode", a.at("mode"),
                                    {{"3d", AugmentMode::Volume3D}, {"slicewise", AugmentMode::Slicewise}});
        ap.crop_scale_min = a.at("crop_scale_min");
        ap.crop_scale_max = a.at("crop_scale_max");
        ap.depth_crop = a.at("depth_crop");
        ap.rotation_degrees = a.at("rotation_degrees");
        ap.brightness = a.at("brightness");
        ap.contrast = a.at("contrast");
        ap.train_resolution = a.at("train_resolution");
        ap.eval_resolution = a.at("eval_resolution");
        ap.eval_center_crop = a.at("eval_center_crop");

        const auto& mx = doc.at("mixing");
        t.alpha = mx.at("alpha");
        t.mix_policy = pick<MixPolicy>("mixing.policy", mx.at("policy"),
                                       {{"hybrid", MixPolicy::Hybrid},
                                        {"mixup", MixPolicy::MixupOnly},
                                        {"cutmix", MixPolicy::CutmixOnly}});

        const auto& l = doc.at("loss");
        t.tau = l.at("tau");
        t.loss_weights = {l.at("contrastive"), l.at("mixup"), l.at("classification")};
        t.positives = pick<loss::PositiveCount>("loss.positives", l.at("positives"),
                                                {{"scans", loss::PositiveCount::Scans},
                                                 {"batch", loss::PositiveCount::Batch}});

        const auto& o = doc.at("optimizer");
        t.base_lr = o.at("lr");
        t.lr_drop_points = o.at("lr_drop_points").get<std::vector<double>>();
        t.adam.beta1 = o.at("beta1");
        t.adam.beta2 = o.at("beta2");
        t.adam.eps = o.at("eps");
        t.adam.weight_decay = o.at("weight_decay");
        t.adam.decoupled_weight_decay = o.at("decoupled_weight_decay");

        const auto& tr = doc.at("train");
        t.epochs = tr.at("epochs");
        t.workers = tr.at("workers");
        t.local_batch = tr.at("local_batch");
        t.transport = pick<Transport>("train.transport", tr.at("transport"),
                                      {{"in_process", Transport::InProcess},
                                       {"threads", Transport::Threads},
                                       {"processes", Transport::Processes}});
        t.seed = r.seed;
        r.resume = tr.at("resume");
        t.validate();

        const auto& ev = doc.at("eval");
        r.eval.tta_views = ev.at("tta_views");
        r.eval.tta_seed = ev.at("tta_seed").get<std::uint64_t>();
        r.eval.split = ev.at("split");
        r.eval.resolution = ev.at("resolution");
        if (r.eval.resolution < 0) throw InvalidConfig("eval.resolution must be >= 0");
        for (const auto& c : ev.at("checkpoints")) r.eval.checkpoints.emplace_back(c.get<std::string>());
        if (r.eval.tta_views < 0) throw InvalidConfig("eval.tta_views must be >= 0");
        pick<int>("eval.split", r.eval.split, {{"train", 0}, {"val", 1}});

        r.output_dir = doc.at("output").at("dir").get<std::string>();
    } catch (const InvalidConfig&) {
        throw;
    } catch (const Error& e) {
        throw InvalidConfig(e.what());
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("malformed config: ") + e.what());
    }
    return r;
}

}  // namespace cmc
